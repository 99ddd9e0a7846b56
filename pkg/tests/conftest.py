import numpy as np
import pytest

from mmrnn.data import Dataset, GroupSequence
from mmrnn.decay import DecaySpec, rho
from mmrnn.model import ModelConfig, init_state


def random_dataset(rng, D=3, T_range=(2, 4), V=4, max_count=4, max_gap=30):
    seqs = []
    for d in range(D):
        T = int(rng.integers(T_range[0], T_range[1] + 1))
        counts = rng.integers(0, max_count, size=(T, V)).astype(float)
        counts[:, rng.integers(V)] += 1  # every order non-empty
        deltas = np.r_[np.nan, rng.integers(0, max_gap + 1, size=T - 1)]
        seqs.append(GroupSequence(f"g{d}", deltas, counts))
    return Dataset([f"i{j}" for j in range(V)], seqs)


def random_state_for(rng, ds, mode="basic", K=None, H=4, kappa=0.5, loss="l2", cell="lstm", scale=0.5):
    K = ds.V if mode == "basic" else (K or 2)
    cfg = ModelConfig(
        mode=mode, H=H, K=K, V=ds.V, decay=DecaySpec(1.0, kappa), a=2.0, b=3.0, c=0.7, loss=loss, cell=cell
    )
    st = init_state(cfg, ds.group_ids, seed=int(rng.integers(1 << 30)), init_scale=scale)
    st.params["phi"] = rng.normal(size=st.phi.shape)
    if mode == "topic":
        st.B = rng.uniform(0.1, 1.0, size=(ds.V, K))
    return st


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_dataset(rng):
    return random_dataset(rng)


def gradient_check(state, ds):
    """Max relative error between analytic and central-difference gradients of
    the full objective, over theta and every phi row."""
    from mmrnn.model import THETA_NAMES, full_objective, loss_and_grads, make_batch
    from mmrnn.numerics import finite_diff_grad, relative_error

    batch = make_batch(ds.sequences, state.config.decay)
    _, tgrads, phi_grad, _ = loss_and_grads(state, batch)
    num = finite_diff_grad(lambda s: full_objective(state, ds), state.params, eps=1e-5)
    analytic = dict(tgrads, phi=phi_grad)
    return max(float(np.max(relative_error(analytic[k], num[k]))) for k in (*THETA_NAMES, "phi"))


def random_instance(seed):
    """One criterion-1 instance: D<=3, T<=4, H<=5, K<=4, V<=8 over both modes and losses."""
    rng = np.random.default_rng(seed)
    mode = ("basic", "topic")[seed % 2]
    loss = "xent" if mode == "basic" and seed % 4 == 0 else "l2"
    V = int(rng.integers(2, 5)) if mode == "basic" else int(rng.integers(4, 9))
    K = int(rng.integers(2, 5))
    ds = random_dataset(rng, D=int(rng.integers(1, 4)), T_range=(1, 4), V=V)
    st = random_state_for(rng, ds, mode=mode, K=K, H=int(rng.integers(1, 6)), kappa=float(rng.uniform(0, 2)), loss=loss)
    return ds, st


def decay_bulk_check(n=10_000, seed=0):
    """Check bounds, monotonicity in gap and kappa, and the special cases on
    ``n`` sampled (t0, kappa, dt) triples. Returns the number of violations."""
    rng = np.random.default_rng(seed)
    t0 = rng.uniform(1, 100, n)
    kappa = rng.uniform(0, 10, n)
    kappa[: n // 10] = 0.0
    dt = rng.uniform(0, 1e4, n)
    bad = 0
    for a, k, g in zip(t0, kappa, dt):
        spec = DecaySpec(a, k)
        w = spec(np.array([g, g * 0.5, g + 1.0]))
        bad += not (0.0 <= w.min() and w.max() <= 1.0)
        bad += not (w[2] <= w[0] <= w[1])
        bad += not (rho(DecaySpec(a, k + 0.5), g) <= w[0])
        bad += rho(spec, g, is_first_step=True) != 0.0
        bad += k == 0.0 and w[0] != 1.0
    return bad
