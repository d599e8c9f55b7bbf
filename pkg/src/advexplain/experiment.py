"""Experiment orchestration: method x strategy x sweep runs, results CSV, reports."""

from __future__ import annotations

import configparser
import csv
import io
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .attribution import (
    METHODS,
    AttributionMap,
    attribute_path,
    integrated_gradients,
    random_attribution,
    saliency_map,
)
from .data import Dataset, SyntheticSpec, load_dataset, write_netpbm
from .evaluation import deletion_curve, insertion_curve, make_baseline
from .model import Network, load_network
from .numerics import Rng
from .strategies import STRATEGIES, AttackConfig

log = logging.getLogger(__name__)

CSV_COLUMNS = ["sample_id", "method", "strategy", "seed", "insertion_auc", "deletion_auc",
               "success_step", "steps_T", "sweep_axis", "sweep_value"]

SWEEP_AXES = {"none": None, "seed": "seed", "dp": "dp", "epsilon": "eps", "beta": "beta",
              "rho": "rho"}

FAILURE_LIMIT = 0.10


def parse_data_source(text: str):
    """``synthetic:C,N,S,SEED`` or a directory path."""
    if text.startswith("synthetic:"):
        parts = [int(v) for v in text.split(":", 1)[1].split(",")]
        return SyntheticSpec(*parts)
    return Path(text)


@dataclass
class ExperimentConfig:
    model: str = ""
    data: str = ""
    methods: tuple[str, ...] = ("path",)
    strategies: tuple[str, ...] = ("mig",)
    attack: AttackConfig = field(default_factory=AttackConfig)
    sweep_axis: str = "none"
    sweep_values: tuple[float, ...] = ()
    out_dir: str = "results"
    eval_steps: int = 50
    baseline: str = "zero"
    ig_steps: int = 50
    heatmaps: bool = False
    limit: int | None = None

    def validate(self, check_files: bool = True) -> "ExperimentConfig":
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}; choose from {', '.join(STRATEGIES)}")
        axis = self.sweep_axis.lower()
        if axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.sweep_axis!r}")
        if axis != "none" and not self.sweep_values:
            raise ValueError(f"sweep axis {axis} needs at least one value")
        if self.eval_steps < 1:
            raise ValueError("eval_steps must be >= 1")
        if self.baseline not in ("zero", "blur"):
            raise ValueError(f"unknown baseline mode {self.baseline!r}")
        if check_files:
            if not Path(self.model).is_file():
                raise ValueError(f"model file {self.model!r} does not exist")
            src = parse_data_source(self.data)
            if isinstance(src, Path) and not src.is_dir():
                raise ValueError(f"dataset directory {self.data!r} does not exist")
        return self

    def sweep_points(self) -> list[tuple[str, float | None, AttackConfig]]:
        axis = self.sweep_axis.lower()
        if axis == "none":
            return [("none", None, self.attack)]
        attr = SWEEP_AXES[axis]
        points = []
        for v in self.sweep_values:
            value = int(v) if attr == "seed" else float(v)
            points.append((axis, value, self.attack.with_(**{attr: value})))
        return points


_ATTACK_FIELDS = {f.name: f for f in fields(AttackConfig)}


def _coerce_attack(key: str, raw: str):
    if key == "sia_ops":
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    if raw.lower() in ("none", ""):
        return None
    if key in ("steps", "m", "n", "m_ig", "seed", "tim_kernel", "sia_splits"):
        return int(raw)
    return float(raw)


def config_from_mapping(values: dict[str, str]) -> ExperimentConfig:
    """Build a config from flat string key/values (section names are ignored)."""
    cfg = ExperimentConfig()
    attack = {}
    for key, raw in values.items():
        key = key.strip().lower().replace("-", "_")
        raw = str(raw).strip()
        if key == "epsilon":
            key = "eps"
        if key in _ATTACK_FIELDS:
            attack[key] = _coerce_attack(key, raw)
        elif key in ("methods", "method"):
            cfg.methods = tuple(v.strip() for v in raw.split(",") if v.strip())
        elif key in ("strategies", "strategy"):
            cfg.strategies = tuple(v.strip() for v in raw.split(",") if v.strip())
        elif key == "sweep_values":
            cfg.sweep_values = tuple(float(v) for v in raw.split(",") if v.strip())
        elif key in ("sweep_axis", "model", "data", "out_dir", "baseline"):
            setattr(cfg, key, raw)
        elif key in ("eval_steps", "ig_steps"):
            setattr(cfg, key, int(raw))
        elif key == "limit":
            cfg.limit = None if raw.lower() == "none" else int(raw)
        elif key == "heatmaps":
            cfg.heatmaps = raw.lower() in ("1", "true", "yes", "on")
        else:
            raise ValueError(f"unknown config key {key!r}")
    cfg.attack = AttackConfig(**attack)
    return cfg


def read_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    with open(path) as fh:
        text = fh.read()
    if not text.lstrip().startswith("["):
        text = "[experiment]\n" + text
    parser.read_string(text)
    flat = {}
    for section in parser.sections():
        flat.update(parser.items(section))
    return config_from_mapping(flat)


# --- running ----------------------------------------------------------------


def compute_map(net: Network, x, y: int, method: str, strategy: str, cfg: AttackConfig,
                index: int, ig_steps: int = 50):
    """Return (AttributionMap, success_step) for one sample."""
    if method == "path":
        amap, trace = attribute_path(net, x, y, strategy, cfg.with_(seed=cfg.seed ^ index))
        return amap, trace.success_step
    if method == "ig":
        return integrated_gradients(net, x, y, m=ig_steps), None
    if method == "saliency":
        return saliency_map(net, x, y), None
    if method == "random":
        return random_attribution(np.shape(x), Rng(cfg.seed ^ index)), None
    raise ValueError(f"unknown method {method!r}")


def heatmap(amap: AttributionMap) -> np.ndarray:
    """Per-pixel scores min-max scaled to [0, 1] as an (H, W) image."""
    scores = amap.pixel_scores
    lo, hi = scores.min(), scores.max()
    scaled = (scores - lo) / (hi - lo) if hi > lo else np.zeros_like(scores)
    shape = amap.values.shape[1:] if amap.values.ndim == 3 else (1, scores.size)
    return scaled.reshape(shape)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.10f}"
    return str(v)


@dataclass
class RunResult:
    rows: list[dict]
    failures: int
    attempted: int

    @property
    def failure_rate(self) -> float:
        return self.failures / self.attempted if self.attempted else 0.0


def _jobs(cfg: ExperimentConfig):
    for axis, value, acfg in cfg.sweep_points():
        for method in cfg.methods:
            for strategy in (cfg.strategies if method == "path" else ("-",)):
                yield axis, value, acfg, method, strategy


def _run_sample(net: Network, cfg: ExperimentConfig, index: int, name: str, x: np.ndarray,
                heat_dir: Path | None):
    rows, failures = [], 0
    baseline = make_baseline(x, cfg.baseline)
    y = net.predict(x).label
    for axis, value, acfg, method, strategy in _jobs(cfg):
        try:
            amap, success = compute_map(net, x, y, method, strategy, acfg, index, cfg.ig_steps)
            ins = insertion_curve(net, x, amap, cfg.eval_steps, baseline, label=y)
            dele = deletion_curve(net, x, amap, cfg.eval_steps, baseline, label=y)
        except (ValueError, FloatingPointError, ArithmeticError) as exc:
            log.warning("sample %s %s/%s %s=%s failed: %s", name, method, strategy, axis, value, exc)
            failures += 1
            continue
        rows.append({
            "sample_id": name,
            "method": method,
            "strategy": strategy,
            "seed": acfg.seed,
            "insertion_auc": ins.auc,
            "deletion_auc": dele.auc,
            "success_step": success,
            "steps_T": acfg.steps if method == "path" else "",
            "sweep_axis": axis,
            "sweep_value": "" if value is None else value,
        })
        if heat_dir is not None:
            tag = f"{name}_{method}_{strategy}" + ("" if value is None else f"_{axis}{value}")
            write_netpbm(heat_dir / f"{tag}.pgm", heatmap(amap))
    return rows, failures


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("ADVEXPLAIN_THREADS", "1")))
    except ValueError:
        return 1


def run_experiment(cfg: ExperimentConfig, net: Network | None = None,
                   dataset: Dataset | None = None) -> RunResult:
    """Attribute and score every (sample, sweep value, method, strategy) combination.

    Rows come back in sample order regardless of worker completion order.
    """
    net = net if net is not None else load_network(cfg.model)
    dataset = dataset if dataset is not None else load_dataset(parse_data_source(cfg.data))
    images = dataset.images[: cfg.limit] if cfg.limit else dataset.images
    names = [str(n) for n in dataset.names[: len(images)]]
    heat_dir = None
    if cfg.heatmaps:
        heat_dir = Path(cfg.out_dir) / "heatmaps"
        heat_dir.mkdir(parents=True, exist_ok=True)
    per_sample = len(list(_jobs(cfg)))

    def task(i):
        return _run_sample(net, cfg, i, names[i], images[i], heat_dir)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        outputs = list(pool.map(task, range(len(images))))
    rows = [r for out, _ in outputs for r in out]
    failures = sum(f for _, f in outputs)
    return RunResult(rows, failures, per_sample * len(images))


def results_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_results(rows: list[dict], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(results_csv(rows))


# --- reporting ----------------------------------------------------------------


def read_results(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        required = CSV_COLUMNS[:8]
        if header is None or header[: len(required)] != required:
            raise ValueError(f"{path}:1: expected header starting with {','.join(required)}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            row = dict(zip(header, rec))
            try:
                row["insertion_auc"] = float(row["insertion_auc"])
                row["deletion_auc"] = float(row["deletion_auc"])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric AUC value") from None
            row.setdefault("sweep_axis", "none")
            row.setdefault("sweep_value", "")
            rows.append(row)
    return rows


def summary_table(rows: list[dict]) -> list[dict]:
    """Mean AUCs per (method, strategy), sorted by mean insertion descending."""
    groups: dict[tuple[str, str], list[dict]] = {}
    for r in rows:
        groups.setdefault((r["method"], r["strategy"]), []).append(r)
    table = [
        {
            "method": m,
            "strategy": s,
            "n": len(rs),
            "insertion": float(np.mean([r["insertion_auc"] for r in rs])),
            "deletion": float(np.mean([r["deletion_auc"] for r in rs])),
        }
        for (m, s), rs in groups.items()
    ]
    table.sort(key=lambda r: (-r["insertion"], r["method"], r["strategy"]))
    return table


def format_table(table: list[dict]) -> str:
    lines = [f"{'method':<10} {'strategy':<12} {'n':>5} {'insertion':>10} {'deletion':>10}"]
    for r in table:
        lines.append(f"{r['method']:<10} {r['strategy']:<12} {r['n']:>5} "
                     f"{r['insertion']:>10.4f} {r['deletion']:>10.4f}")
    return "\n".join(lines) + "\n"


def sweep_series(rows: list[dict], metric: str) -> dict[str, dict[str, list[tuple[float, float]]]]:
    """{axis: {series label: [(sweep value, mean metric), ...]}} for swept rows."""
    acc: dict[str, dict[str, dict[float, list[float]]]] = {}
    for r in rows:
        axis = r.get("sweep_axis", "none")
        if axis in ("", "none"):
            continue
        label = r["strategy"] if r["method"] == "path" else r["method"]
        acc.setdefault(axis, {}).setdefault(label, {}).setdefault(float(r["sweep_value"]), []).append(
            r[metric])
    return {
        axis: {label: sorted((v, float(np.mean(xs))) for v, xs in pts.items())
               for label, pts in sorted(series.items())}
        for axis, series in acc.items()
    }


_PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
            "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939"]


def line_chart_svg(series: dict[str, list[tuple[float, float]]], title: str, xlabel: str,
                   ylabel: str, width: int = 640, height: int = 400) -> str:
    left, right, top, bottom = 60, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.05, y1 + 0.05
    pad = (y1 - y0) * 0.05
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">{xlabel}</text>',
        f'<text x="15" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 15 {top + ph / 2:.1f})">{ylabel}</text>',
    ]
    for i in range(5):
        yv = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{left - 5}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.3f}</text>')
    for xv in sorted(set(xs)):
        out.append(f'<text x="{px(xv):.1f}" y="{top + ph + 15}" text-anchor="middle">{xv:g}</text>')
    for k, (label, pts) in enumerate(series.items()):
        color = _PALETTE[k % len(_PALETTE)]
        coords = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in pts:
            out.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="3" fill="{color}"/>')
        ly = top + 12 + 16 * k
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly + 4}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def report(results_path, out_dir) -> list[dict]:
    """Write summary.txt/summary.csv and one SVG per swept axis and metric."""
    rows = read_results(results_path)
    if not rows:
        raise ValueError(f"{results_path}: no result rows")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = summary_table(rows)
    (out_dir / "summary.txt").write_text(format_table(table))
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "strategy", "n", "mean_insertion_auc", "mean_deletion_auc"])
        for r in table:
            writer.writerow([r["method"], r["strategy"], r["n"], f"{r['insertion']:.10f}",
                             f"{r['deletion']:.10f}"])
    for metric, name in (("insertion_auc", "insertion"), ("deletion_auc", "deletion")):
        for axis, series in sweep_series(rows, metric).items():
            svg = line_chart_svg(series, f"{name} AUC vs {axis}", axis, f"mean {name} AUC")
            (out_dir / f"sweep_{axis}_{name}.svg").write_text(svg)
    return table
