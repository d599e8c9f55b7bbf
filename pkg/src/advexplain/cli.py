"""Command-line entry point: gen-data, train, attribute, evaluate, sweep, report."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .data import SyntheticSpec, load_dataset, synthetic_blobs, write_dataset, write_netpbm
from .evaluation import deletion_curve, insertion_curve, make_baseline
from .model import ModelSpec, Network, load_network, save_network, train
from .numerics import write_tensor

log = logging.getLogger("advexplain")

_ATTACK_FLAGS = {
    "seed": int, "eps": float, "dp": float, "rho": float, "sigma": float, "beta": float,
    "steps": int, "alpha": float, "mu": float, "m": int, "n": int, "m_ig": int,
}


def _add_attack_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("attack")
    for name, typ in _ATTACK_FLAGS.items():
        g.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ, default=None)


def _add_run_flags(p: argparse.ArgumentParser, data_required: bool = True) -> None:
    p.add_argument("--model", required=data_required)
    p.add_argument("--data", required=data_required,
                   help="dataset directory or synthetic:C,N,SIDE,SEED")
    p.add_argument("--method", default=None, help="comma-separated: path, ig, saliency, random")
    p.add_argument("--strategy", default=None, help="comma-separated strategy ids")
    p.add_argument("--eval-steps", type=int, default=None)
    p.add_argument("--baseline", choices=("zero", "blur"), default=None)
    p.add_argument("--limit", type=int, default=None)
    _add_attack_flags(p)


def _config_from_args(args, base: ex.ExperimentConfig | None = None) -> ex.ExperimentConfig:
    cfg = base or ex.ExperimentConfig()
    for attr in ("model", "data"):
        if getattr(args, attr, None):
            setattr(cfg, attr, getattr(args, attr))
    if args.method:
        cfg.methods = tuple(v for v in args.method.split(",") if v)
    if args.strategy:
        cfg.strategies = tuple(v for v in args.strategy.split(",") if v)
    if args.eval_steps is not None:
        cfg.eval_steps = args.eval_steps
    if args.baseline:
        cfg.baseline = args.baseline
    if args.limit is not None:
        cfg.limit = args.limit
    overrides = {k: getattr(args, k) for k in _ATTACK_FLAGS if getattr(args, k, None) is not None}
    if overrides:
        cfg.attack = cfg.attack.with_(**overrides)
    return cfg


def cmd_gen_data(args) -> int:
    ds = synthetic_blobs(SyntheticSpec(args.classes, args.per_class, args.side, args.seed))
    write_dataset(ds, args.out)
    print(f"wrote {len(ds)} images to {args.out}")
    return 0


def cmd_train(args) -> int:
    ds = load_dataset(ex.parse_data_source(args.data))
    hidden = () if args.kind == "linear-softmax" else tuple(int(h) for h in args.hidden.split(",") if h)
    classes = int(ds.labels.max()) + 1
    spec = ModelSpec(args.kind, int(np.prod(ds.images.shape[1:])), hidden, max(classes, 2))
    history: list[float] = []
    w = train(spec, ds.images, ds.labels, lr=args.lr, epochs=args.epochs, seed=args.seed,
              history=history)
    net = Network(spec, w, ds.images.shape[1:])
    acc = float(np.mean(np.argmax(net.predict_proba(ds.images), axis=1) == ds.labels))
    save_network(net, args.out)
    final = history[-1] if history else float("nan")
    print(f"saved {args.out}: train accuracy {acc:.4f}, loss {final:.6f}")
    return 0


def cmd_attribute(args) -> int:
    cfg = _config_from_args(args).validate()
    net = load_network(cfg.model)
    ds = load_dataset(ex.parse_data_source(cfg.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = len(ds) if cfg.limit is None else min(cfg.limit, len(ds))
    for i in range(n):
        x = ds.images[i]
        y = net.predict(x).label
        for method in cfg.methods:
            for strategy in (cfg.strategies if method == "path" else ("-",)):
                amap, _ = ex.compute_map(net, x, y, method, strategy, cfg.attack, i, cfg.ig_steps)
                tag = f"{Path(ds.names[i]).stem}_{method}" + (f"_{strategy}" if method == "path" else "")
                write_tensor(out / f"{tag}.tsr", amap.values)
                write_netpbm(out / f"{tag}.pgm", ex.heatmap(amap))
    print(f"wrote attributions for {n} samples to {out}")
    return 0


def _finish_run(cfg: ex.ExperimentConfig, out_path: str, curves: str | None = None) -> int:
    result = ex.run_experiment(cfg)
    ex.write_results(result.rows, out_path)
    print(f"wrote {len(result.rows)} rows to {out_path} ({result.failures} failures)")
    if curves:
        _dump_curves(cfg, curves)
    if result.failure_rate > ex.FAILURE_LIMIT:
        log.error("%.1f%% of rows failed", 100 * result.failure_rate)
        return 1
    return 0


def _dump_curves(cfg: ex.ExperimentConfig, directory: str) -> None:
    net = load_network(cfg.model)
    ds = load_dataset(ex.parse_data_source(cfg.data))
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    n = len(ds) if cfg.limit is None else min(cfg.limit, len(ds))
    for i in range(n):
        x = ds.images[i]
        y = net.predict(x).label
        base = make_baseline(x, cfg.baseline)
        for method in cfg.methods:
            for strategy in (cfg.strategies if method == "path" else ("-",)):
                amap, _ = ex.compute_map(net, x, y, method, strategy, cfg.attack, i, cfg.ig_steps)
                for kind, fn in (("insertion", insertion_curve), ("deletion", deletion_curve)):
                    curve = fn(net, x, amap, cfg.eval_steps, base, label=y)
                    lines = ["fraction,score"] + [f"{f:.10f},{s:.10f}"
                                                 for f, s in zip(curve.fractions, curve.scores)]
                    (out / f"{Path(ds.names[i]).stem}_{method}_{strategy}_{kind}.csv").write_text(
                        "\n".join(lines) + "\n")


def cmd_evaluate(args) -> int:
    cfg = _config_from_args(args).validate()
    return _finish_run(cfg, args.out, args.curves)


def cmd_sweep(args) -> int:
    base = ex.read_config(args.config) if args.config else None
    cfg = _config_from_args(args, base)
    if args.axis:
        cfg.sweep_axis = args.axis
    if args.values:
        cfg.sweep_values = tuple(float(v) for v in args.values.split(",") if v)
    cfg.validate()
    return _finish_run(cfg, args.out)


def cmd_report(args) -> int:
    table = ex.report(args.results, args.out)
    sys.stdout.write(ex.format_table(table))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advexplain", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic blob dataset as PGM files + labels.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--side", type=int, default=16)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a reference classifier and save it as MDL1")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=("mlp-relu", "linear-softmax"), default="mlp-relu")
    p.add_argument("--hidden", default="64,32")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attribute", help="write attribution maps (TSR1) and heatmaps (PGM)")
    _add_run_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("evaluate", help="insertion/deletion AUCs to a results CSV")
    _add_run_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--curves", default=None, help="directory for per-sample curve CSVs")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="evaluate over one swept parameter")
    _add_run_flags(p, data_required=False)
    p.add_argument("--config", default=None, help="key=value config file with [section] headers")
    p.add_argument("--axis", choices=tuple(ex.SWEEP_AXES), default=None)
    p.add_argument("--values", default=None, help="comma-separated sweep values")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summary table and sweep charts from a results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
