"""Command-line interface.

    mmrnn generate --out corpus.csv
    mmrnn train    --data corpus.csv --out run.json --save-model model.npz
    mmrnn evaluate --data corpus.csv --model model.npz --out report.json
    mmrnn sweep    --data corpus.csv --kappas 0,0.1,0.3 --t0s 1,10 --seeds 5 --out sweep.json
    mmrnn impute   --data corpus.csv --policy forward --out regridded.csv

Exit codes: 0 success, 1 configuration error, 2 data error, 3 divergence.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .baselines import impute
from .data import (
    SyntheticSpec,
    aggregate_rare_items,
    generate_synthetic,
    load_item_aisles,
    load_orders_csv,
    split_holdout_last,
    write_orders_csv,
)
from .estimator import BASELINES, MMRNN
from .evaluation import emit_report, kappa_sweep
from .exceptions import ConfigurationError, MMRNNError

log = logging.getLogger("mmrnn")


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _global_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("model and training")
    g.add_argument("--mode", choices=["basic", "topic"], default="basic")
    g.add_argument("--t0", type=float, default=1.0)
    g.add_argument("--kappa", type=float, default=0.1)
    g.add_argument("--hidden-dim", type=int, default=10)
    g.add_argument("--topics", type=int, default=25)
    g.add_argument("--lr", type=float, default=0.01)
    g.add_argument("--epochs", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--baseline", choices=BASELINES, default="mmrnn")
    g.add_argument("--loss", choices=["l2", "xent"], default="l2")
    g.add_argument("--batch-size", type=int, default=None, help="groups per step (default: full batch)")
    g.add_argument("--shuffle", action="store_true")
    g.add_argument("--nmf-iters", type=int, default=1, help="B updates per epoch (topic mode)")
    g.add_argument("--no-update-b", action="store_true")
    g.add_argument("--prior-theta", type=float, default=100.0, help="prior variance a of theta")
    g.add_argument("--prior-phi", type=float, default=100.0, help="prior variance b of phi")
    g.add_argument("--noise", type=float, default=1.0, help="noise variance c")
    g.add_argument("--init-scale", type=float, default=0.1)
    g.add_argument("--out", type=Path, default=None)
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, required=True, help="orders CSV")
    p.add_argument("--aisles", type=Path, default=None, help="item_id,aisle_id map")
    p.add_argument("--rare-threshold", type=int, default=0)
    p.add_argument("--max-days", type=int, default=30)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmrnn", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[_global_parser()], help="sample a synthetic corpus")
    gen.add_argument("--groups", type=int, default=50)
    gen.add_argument("--items", type=int, default=30)
    gen.add_argument("--t-range", type=int, nargs=2, default=[15, 25])
    gen.add_argument("--order-size", type=int, nargs=2, default=[30, 40])
    gen.add_argument("--short-weight", type=float, default=0.7)
    gen.add_argument("--alpha", type=float, default=0.05)
    gen.add_argument("--phi-variance", type=float, default=2.0)
    gen.set_defaults(kappa=0.3, topics=5)  # kappa_true and K of the synthetic corpus

    tr = sub.add_parser("train", parents=[_global_parser()], help="train on all but each group's last order")
    _data_args(tr)
    tr.add_argument("--save-model", type=Path, default=None)

    ev = sub.add_parser("evaluate", parents=[_global_parser()], help="score a saved model on held-out orders")
    _data_args(ev)
    ev.add_argument("--model", type=Path, required=True)
    ev.add_argument("--buckets-csv", type=Path, default=None)

    sw = sub.add_parser("sweep", parents=[_global_parser()], help="grid over t0 x kappa x seeds")
    _data_args(sw)
    sw.add_argument("--kappas", type=_floats, required=True)
    sw.add_argument("--t0s", type=_floats, default=[1.0])
    sw.add_argument("--seeds", type=int, default=5)
    sw.add_argument("--csv", type=Path, default=None)

    im = sub.add_parser("impute", parents=[_global_parser()], help="write a daily-grid regridded corpus")
    _data_args(im)
    im.add_argument("--policy", choices=["mean", "forward", "zero"], required=True)
    return parser


def _estimator(args, **overrides) -> MMRNN:
    params = dict(
        mode=args.mode,
        hidden_dim=args.hidden_dim,
        n_topics=args.topics,
        t0=args.t0,
        kappa=args.kappa,
        baseline=args.baseline,
        loss=args.loss,
        a=args.prior_theta,
        b=args.prior_phi,
        c=args.noise,
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        shuffle=args.shuffle,
        update_B=not args.no_update_b,
        nmf_inner_iters=args.nmf_iters,
        init_scale=args.init_scale,
        random_state=args.seed,
    )
    params.update(overrides)
    return MMRNN(**params)


def _load(args):
    ds = load_orders_csv(args.data, max_days=args.max_days)
    if args.rare_threshold > 0:
        if args.aisles is None:
            raise ConfigurationError("--rare-threshold needs --aisles")
        ds = aggregate_rare_items(ds, args.rare_threshold, load_item_aisles(args.aisles))
    return ds


def _require_out(args) -> Path:
    if args.out is None:
        raise ConfigurationError(f"{args.command} needs --out")
    return args.out


def cmd_generate(args) -> int:
    out = _require_out(args)
    spec = SyntheticSpec(
        D=args.groups,
        K=args.topics,
        V=args.items,
        T_range=tuple(args.t_range),
        short_weight=args.short_weight,
        dirichlet_alpha=args.alpha,
        phi_variance=args.phi_variance,
        order_size_range=tuple(args.order_size),
        t0=args.t0,
        kappa=args.kappa,
        hidden_dim=args.hidden_dim,
        seed=args.seed,
    )
    ds, truth = generate_synthetic(spec)
    write_orders_csv(ds, out)
    truth_path = out.with_suffix(".truth.json")
    truth_path.write_text(truth.to_json(), encoding="utf-8")
    print(f"wrote {ds.D} groups / {ds.n_orders()} orders to {out}; ground truth in {truth_path}")
    return 0


def _run_dict(est: MMRNN, report, seconds: float) -> dict:
    return {
        "config": est.get_params(),
        "train_trace": list(est.trace_.objective),
        "eval": report.to_dict(),
        "seed": est.random_state,
        "wall_time_seconds": seconds,
    }


def cmd_train(args) -> int:
    out = _require_out(args)
    ds = _load(args)
    train, holdout, split = split_holdout_last(ds)
    if split.n_excluded:
        log.warning("%d single-order groups excluded from the holdout", split.n_excluded)
    est = _estimator(args)
    start = time.perf_counter()

    def progress(epoch, value):
        print(f"epoch {epoch:3d}  objective {value:.6g}", flush=True)

    est.fit(train, callback=progress)
    report = est.evaluate(holdout)
    run = _run_dict(est, report, time.perf_counter() - start)
    run["excluded_groups"] = split.excluded_groups
    emit_report(run, out, "json")
    if args.save_model:
        est.save(args.save_model)
    print(f"held-out mean error {report.overall_mean:.6g} (n={report.n}); wrote {out}")
    return 0


def cmd_evaluate(args) -> int:
    ds = _load(args)
    train, holdout, _ = split_holdout_last(ds)
    est = MMRNN.load(args.model, train)
    report = est.evaluate(holdout)
    if args.out is not None:
        emit_report(report, args.out, "json")
    if args.buckets_csv is not None:
        emit_report(report, args.buckets_csv, "csv")
    print(f"held-out mean error {report.overall_mean:.6g} +/- {report.overall_std:.3g} (n={report.n})")
    return 0


def cmd_sweep(args) -> int:
    out = _require_out(args)
    ds = _load(args)
    train, holdout, _ = split_holdout_last(ds)
    params = _estimator(args).get_params()
    for key in ("t0", "kappa", "random_state"):
        params.pop(key)
    grid = [(t0, k) for t0 in args.t0s for k in args.kappas]
    result = kappa_sweep(train, holdout, grid, args.seeds, params)
    emit_report(result, out, "json")
    if args.csv is not None:
        emit_report(result, args.csv, "csv")
    for (t0, k), s in result.summary().items():
        print(f"t0={t0:g} kappa={k:g}  median={s['median']:.6g}  IQR=[{s['q1']:.4g}, {s['q3']:.4g}]  n={s['n']}")
    failed = [c for c in result.cells if c.error]
    if failed:
        log.warning("%d cells diverged", len(failed))
    return 0


def cmd_impute(args) -> int:
    out = _require_out(args)
    ds = _load(args)
    write_orders_csv(impute(ds, args.policy), out)
    print(f"wrote regridded corpus to {out}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "impute": cmd_impute,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; that code is reserved for data errors
        return 1 if exc.code == 2 else int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except MMRNNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
