"""Order-log datasets: CSV ingestion, rare-item aggregation, last-order
holdout, and a sampler for the MM-RNN topic model.

Orders CSV (long format, UTF-8, LF)::

    group_id,order_index,days_since_prior,item_id,count

``days_since_prior`` is empty on each group's first order. Regridded
(imputed) corpora may additionally contain real-valued counts and rows with
an empty ``item_id`` marking an order with no items.
"""
from __future__ import annotations

import csv
import io
import json
import math
from collections import OrderedDict, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, DataError, DimensionError

HEADER = ["group_id", "order_index", "days_since_prior", "item_id", "count"]
MAX_DAYS = 30


def id_key(s: str):
    """Sort key putting numeric ids in numeric order before other ids."""
    s = str(s)
    return (0, int(s), "") if s.isdigit() else (1, 0, s)


@dataclass(frozen=True)
class OrderRecord:
    group_id: str
    order_index: int
    days_since_prior: int | None
    items: dict

    def __post_init__(self):
        if self.order_index < 1:
            raise DataError(f"order_index must be >= 1, got {self.order_index}")
        if (self.days_since_prior is None) != (self.order_index == 1):
            raise DataError(
                f"group {self.group_id} order {self.order_index}: days_since_prior "
                "must be empty exactly on the first order"
            )


@dataclass
class GroupSequence:
    """One group's orders. ``deltas[0]`` is NaN (no preceding order)."""

    group_id: str
    deltas: np.ndarray  # (T,)
    counts: np.ndarray  # (T, V)

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.counts.ndim != 2 or self.deltas.shape != (self.counts.shape[0],):
            raise DimensionError(
                f"group {self.group_id}: deltas{self.deltas.shape} vs counts{self.counts.shape}"
            )

    @property
    def T(self) -> int:
        return self.counts.shape[0]

    @property
    def V(self) -> int:
        return self.counts.shape[1]

    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)


@dataclass
class HoldoutOrder:
    group_id: str
    counts: np.ndarray  # (V,)
    delta_t: float


@dataclass
class Dataset:
    items: list  # dense index -> item id
    sequences: list  # of GroupSequence
    aisles: dict | None = None  # item id -> aisle id
    regridded: bool = False

    def __post_init__(self):
        V = len(self.items)
        seen = set()
        for seq in self.sequences:
            if seq.V != V:
                raise DimensionError(f"group {seq.group_id} has V={seq.V}, vocabulary has {V}")
            if seq.group_id in seen:
                raise DataError(f"duplicate group {seq.group_id}")
            seen.add(seq.group_id)
        self._index = {s.group_id: i for i, s in enumerate(self.sequences)}

    @property
    def V(self) -> int:
        return len(self.items)

    @property
    def D(self) -> int:
        return len(self.sequences)

    @property
    def group_ids(self) -> list:
        return [s.group_id for s in self.sequences]

    def group(self, group_id) -> GroupSequence:
        try:
            return self.sequences[self._index[group_id]]
        except KeyError:
            raise DataError(f"unknown group {group_id!r}") from None

    def n_orders(self) -> int:
        return sum(s.T for s in self.sequences)

    def mean_count_vector(self) -> np.ndarray:
        total = sum(s.counts.sum(axis=0) for s in self.sequences)
        n = self.n_orders()
        if n == 0:
            raise DataError("mean of an empty dataset")
        return np.asarray(total, dtype=np.float64) / n


def check_dataset(ds, V: int | None = None, allow_regridded: bool = True) -> Dataset:
    """Validate a Dataset for model input; returns it unchanged."""
    if not isinstance(ds, Dataset):
        raise DataError(f"expected a Dataset, got {type(ds).__name__}")
    if ds.D == 0:
        raise DataError("dataset has no groups")
    if V is not None and ds.V != V:
        raise DimensionError(f"dataset has V={ds.V}, model expects V={V}")
    for seq in ds.sequences:
        if seq.T == 0:
            raise DataError(f"group {seq.group_id} has no orders")
        if not np.all(np.isfinite(seq.counts)) or np.any(seq.counts < 0):
            raise DataError(f"group {seq.group_id} has negative or non-finite counts")
        if np.any(seq.deltas[1:] < 0) or np.any(np.isnan(seq.deltas[1:])):
            raise DataError(f"group {seq.group_id} has missing or negative gaps")
        if not (ds.regridded and allow_regridded) and np.any(seq.totals() < 1):
            raise DataError(f"group {seq.group_id} has an order with total count < 1")
    return ds


# ---------------------------------------------------------------- CSV I/O


def _parse_rows(reader, max_days, regridded, source):
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != HEADER:
        raise DataError(f"{source}: header must be {','.join(HEADER)}, got {header}")
    orders = OrderedDict()  # (group, order_index) -> [days, {item: count}]
    for rowno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 5:
            raise DataError(f"{source} row {rowno}: expected 5 fields, got {len(row)}")
        gid, oidx, days, item, cnt = (x.strip() for x in row)
        if not gid:
            raise DataError(f"{source} row {rowno}: empty group_id")
        try:
            oidx = int(oidx)
        except ValueError:
            raise DataError(f"{source} row {rowno}: bad order_index {oidx!r}") from None
        if oidx < 1:
            raise DataError(f"{source} row {rowno}: order_index must be >= 1")
        if days == "":
            days = None
        else:
            try:
                days = int(days)
            except ValueError:
                raise DataError(f"{source} row {rowno}: bad days_since_prior {days!r}") from None
            if not 0 <= days <= max_days:
                raise DataError(
                    f"{source} row {rowno}: days_since_prior={days} outside [0, {max_days}]"
                )
        if (days is None) != (oidx == 1):
            raise DataError(
                f"{source} row {rowno}: days_since_prior must be empty exactly on order 1"
            )
        key = (gid, oidx)
        entry = orders.setdefault(key, [days, {}, rowno])
        if entry[0] != days:
            raise DataError(f"{source} row {rowno}: inconsistent days_since_prior within an order")
        if item == "":
            if not regridded or cnt not in ("", "0"):
                raise DataError(f"{source} row {rowno}: empty item_id")
            continue
        try:
            count = float(cnt) if regridded else int(cnt)
        except ValueError:
            raise DataError(f"{source} row {rowno}: bad count {cnt!r}") from None
        if not math.isfinite(count) or (count < 1 if not regridded else count < 0):
            raise DataError(f"{source} row {rowno}: count {cnt!r} out of range")
        if item in entry[1]:
            raise DataError(f"{source} row {rowno}: duplicate item {item!r} in order")
        entry[1][item] = count
    return orders


def _build_dataset(orders, source, regridded=False, aisles=None) -> Dataset:
    by_group = defaultdict(dict)
    for (gid, oidx), (days, items, rowno) in orders.items():
        by_group[gid][oidx] = OrderRecord(gid, oidx, days, items)
    vocab = sorted({it for rec in orders.values() for it in rec[1]}, key=id_key)
    index = {it: i for i, it in enumerate(vocab)}
    seqs = []
    for gid in sorted(by_group, key=id_key):
        recs = by_group[gid]
        idxs = sorted(recs)
        if idxs != list(range(1, len(idxs) + 1)):
            raise DataError(f"{source}: group {gid} has non-consecutive order_index {idxs}")
        counts = np.zeros((len(idxs), len(vocab)))
        deltas = np.full(len(idxs), np.nan)
        for t, oidx in enumerate(idxs):
            rec = recs[oidx]
            if oidx > 1:
                deltas[t] = rec.days_since_prior
            for it, c in rec.items.items():
                counts[t, index[it]] = c
        seqs.append(GroupSequence(gid, deltas, counts))
    return Dataset(vocab, seqs, aisles=aisles, regridded=regridded)


def load_orders_csv(path, max_days: int = MAX_DAYS, regridded: bool = False) -> Dataset:
    """Parse a long-format orders file into a Dataset.

    Groups are sorted by id, and the vocabulary is the sorted set of item ids
    seen in the file. Any invariant violation raises ``DataError`` naming
    the row; no partial dataset is returned.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            orders = _parse_rows(csv.reader(fh), max_days, regridded, str(path))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return _build_dataset(orders, str(path), regridded=regridded)


def _fmt_count(c: float) -> str:
    if float(c).is_integer():
        return str(int(c))
    return repr(float(c))


def orders_csv_text(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for seq in ds.sequences:
        for t in range(seq.T):
            days = "" if t == 0 else _fmt_count(seq.deltas[t])
            nz = np.flatnonzero(seq.counts[t])
            if nz.size == 0:
                if not ds.regridded:
                    raise DataError(f"group {seq.group_id} order {t + 1} is empty")
                w.writerow([seq.group_id, t + 1, days, "", 0])
            for j in nz:
                w.writerow([seq.group_id, t + 1, days, ds.items[j], _fmt_count(seq.counts[t, j])])
    return buf.getvalue()


def write_orders_csv(ds: Dataset, path) -> Path:
    path = Path(path)
    path.write_text(orders_csv_text(ds), encoding="utf-8", newline="")
    return path


def canonicalize_orders_csv(text: str) -> str:
    """Sort data rows by (group, order, item) using the loader's id ordering."""
    lines = text.replace("\r\n", "\n").rstrip("\n").split("\n")
    header, rows = lines[0], [r for r in lines[1:] if r]
    parsed = list(csv.reader(rows))
    parsed.sort(key=lambda r: (id_key(r[0].strip()), int(r[1]), id_key(r[3].strip())))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([h.strip() for h in header.split(",")])
    for r in parsed:
        w.writerow([x.strip() for x in r])
    return buf.getvalue()


def load_item_aisles(path) -> dict:
    """Read an ``item_id,aisle_id`` map."""
    path = Path(path)
    out = {}
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["item_id", "aisle_id"]:
                raise DataError(f"{path}: header must be item_id,aisle_id")
            for rowno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 2 or not row[0].strip():
                    raise DataError(f"{path} row {rowno}: malformed")
                out[row[0].strip()] = row[1].strip()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return out


# ---------------------------------------------------------- preprocessing


def aggregate_rare_items(ds: Dataset, threshold: int, item_to_aisle: dict | None = None) -> Dataset:
    """Merge items bought fewer than ``threshold`` times into one item per aisle.

    Frequent items keep their relative order; aisle items (``aisle:<id>``)
    follow, sorted by aisle id. Per-order totals are unchanged.
    """
    if threshold <= 0:
        return ds
    item_to_aisle = item_to_aisle if item_to_aisle is not None else (ds.aisles or {})
    totals = sum(s.counts.sum(axis=0) for s in ds.sequences)
    totals = np.zeros(ds.V) if isinstance(totals, int) else totals
    rare = totals < threshold
    missing = [ds.items[j] for j in np.flatnonzero(rare) if ds.items[j] not in item_to_aisle]
    if missing:
        raise DataError(f"no aisle mapping for rare items: {missing[:10]}")
    keep = [j for j in range(ds.V) if not rare[j]]
    aisle_ids = sorted({str(item_to_aisle[ds.items[j]]) for j in np.flatnonzero(rare)}, key=id_key)
    new_items = [ds.items[j] for j in keep] + [f"aisle:{a}" for a in aisle_ids]
    slot = {a: len(keep) + k for k, a in enumerate(aisle_ids)}
    M = np.zeros((ds.V, len(new_items)))
    for k, j in enumerate(keep):
        M[j, k] = 1.0
    for j in np.flatnonzero(rare):
        M[j, slot[str(item_to_aisle[ds.items[j]])]] = 1.0
    seqs = [GroupSequence(s.group_id, s.deltas.copy(), s.counts @ M) for s in ds.sequences]
    new_aisles = None
    if ds.aisles is not None or item_to_aisle:
        new_aisles = {ds.items[j]: item_to_aisle.get(ds.items[j]) for j in keep if ds.items[j] in item_to_aisle}
        new_aisles.update({f"aisle:{a}": a for a in aisle_ids})
    return Dataset(new_items, seqs, aisles=new_aisles, regridded=ds.regridded)


@dataclass
class SplitReport:
    n_groups: int
    n_train_groups: int
    n_excluded: int
    excluded_groups: list


def split_holdout_last(ds: Dataset):
    """Hold out each group's final order.

    Returns ``(train, holdout, report)``. Single-order groups contribute no
    training sequence and no holdout entry; they are listed in the report.
    """
    train, holdout, excluded = [], [], []
    for seq in ds.sequences:
        if seq.T < 2:
            excluded.append(seq.group_id)
            continue
        train.append(GroupSequence(seq.group_id, seq.deltas[:-1].copy(), seq.counts[:-1].copy()))
        holdout.append(HoldoutOrder(seq.group_id, seq.counts[-1].copy(), float(seq.deltas[-1])))
    report = SplitReport(ds.D, len(train), len(excluded), excluded)
    return Dataset(list(ds.items), train, aisles=ds.aisles, regridded=ds.regridded), holdout, report


# --------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a corpus sampled from the MM-RNN topic model.

    Gaps come from a two-component mixture: with probability ``short_weight``
    a uniform integer in ``short_days``, otherwise one in ``long_days``.
    """

    D: int = 50
    K: int = 5
    V: int = 30
    T_range: tuple = (15, 25)
    short_weight: float = 0.7
    short_days: tuple = (1, 3)
    long_days: tuple = (20, 30)
    dirichlet_alpha: float = 0.05
    phi_variance: float = 2.0
    order_size_range: tuple = (30, 40)
    t0: float = 1.0
    kappa: float = 0.3
    hidden_dim: int = 10
    theta_scale: float = 0.5
    projection_scale: float = 5.0
    input_scale: float = 10.0
    seed: int = 0

    def validate(self) -> None:
        if min(self.D, self.K, self.V, self.hidden_dim) < 1:
            raise ConfigurationError("D, K, V and hidden_dim must be >= 1")
        lo, hi = self.T_range
        if not 1 <= lo <= hi:
            raise ConfigurationError(f"bad T_range {self.T_range}")
        lo, hi = self.order_size_range
        if not 1 <= lo <= hi:
            raise ConfigurationError(f"bad order_size_range {self.order_size_range}")
        if not 0.0 <= self.short_weight <= 1.0:
            raise ConfigurationError("short_weight must be in [0, 1]")
        for rng in (self.short_days, self.long_days):
            if not 0 <= rng[0] <= rng[1]:
                raise ConfigurationError(f"bad day range {rng}")
        if self.dirichlet_alpha <= 0 or self.phi_variance < 0:
            raise ConfigurationError("dirichlet_alpha must be > 0 and phi_variance >= 0")


@dataclass
class GroundTruth:
    spec: SyntheticSpec
    B: np.ndarray  # (V, K), columns sum to one
    phi: np.ndarray  # (D, K)
    theta: dict  # W, U, b, P
    group_ids: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": "mmrnn-ground-truth/1",
                "spec": asdict(self.spec),
                "seed": self.spec.seed,
                "group_ids": self.group_ids,
                "B": self.B.tolist(),
                "phi": self.phi.tolist(),
                "theta": {k: v.tolist() for k, v in self.theta.items()},
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        obj = json.loads(text)
        spec_fields = {k: tuple(v) if isinstance(v, list) else v for k, v in obj["spec"].items()}
        return cls(
            SyntheticSpec(**spec_fields),
            np.array(obj["B"], dtype=np.float64),
            np.array(obj["phi"], dtype=np.float64),
            {k: np.array(v, dtype=np.float64) for k, v in obj["theta"].items()},
            list(obj["group_ids"]),
        )


def generate_synthetic(spec: SyntheticSpec, schedule=None):
    """Sample a corpus by walking the topic-model generative process.

    All groups are advanced in lockstep so the LSTM runs batched. Returns
    ``(dataset, ground_truth)``. ``schedule`` overrides the power-law decay
    built from ``spec.t0`` / ``spec.kappa``.
    """
    from .cells import CellState, LstmParams, lstm_forward, lstm_init
    from .decay import DecaySpec
    from .numerics import softmax

    spec.validate()
    if schedule is None:
        schedule = DecaySpec(spec.t0, spec.kappa)
    rng = np.random.default_rng(spec.seed)
    D, K, V, H = spec.D, spec.K, spec.V, spec.hidden_dim

    B = rng.dirichlet(np.full(V, spec.dirichlet_alpha), size=K).T  # (V, K)
    phi = rng.normal(0.0, math.sqrt(spec.phi_variance), size=(D, K))
    p = lstm_init(int(rng.integers(2**31)), H, V, scale=spec.theta_scale, forget_bias=0.0)
    # Inputs are probability vectors with small entries; scale W up so the
    # previous order actually moves the hidden state.
    p = LstmParams(p.W * spec.input_scale, p.U, p.b)
    P = rng.uniform(-spec.projection_scale, spec.projection_scale, size=(K, H))

    lengths = rng.integers(spec.T_range[0], spec.T_range[1] + 1, size=D)
    Tmax = int(lengths.max())
    short = rng.random((D, Tmax)) < spec.short_weight
    gaps = np.where(
        short,
        rng.integers(spec.short_days[0], spec.short_days[1] + 1, size=(D, Tmax)),
        rng.integers(spec.long_days[0], spec.long_days[1] + 1, size=(D, Tmax)),
    ).astype(np.float64)
    gaps[:, 0] = np.nan
    rho = schedule.rho_sequence(gaps)
    sizes = rng.integers(spec.order_size_range[0], spec.order_size_range[1] + 1, size=(D, Tmax))

    counts = np.zeros((D, Tmax, V))
    state = CellState.zeros(H, D)
    x = np.zeros((D, V))
    for t in range(Tmax):
        state, _ = lstm_forward(p, x, state)
        v = rho[:, t, None] * (state.h @ P.T) + (1.0 - rho[:, t, None]) * phi
        sigma = softmax(v)
        probs = sigma @ B.T
        probs /= probs.sum(axis=1, keepdims=True)
        for d in range(D):
            counts[d, t] = rng.multinomial(sizes[d, t], probs[d])
        x = counts[:, t] / counts[:, t].sum(axis=1, keepdims=True)

    width = len(str(D - 1))
    group_ids = [f"g{d:0{width}d}" for d in range(D)]
    items = [f"i{j:0{len(str(V - 1))}d}" for j in range(V)]
    seqs = [
        GroupSequence(group_ids[d], gaps[d, : lengths[d]].copy(), counts[d, : lengths[d]].copy())
        for d in range(D)
    ]
    truth = GroundTruth(spec, B, phi, {"W": p.W, "U": p.U, "b": p.b, "P": P}, group_ids)
    return Dataset(items, seqs), truth
