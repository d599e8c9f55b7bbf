"""Insertion and deletion curves with trapezoidal AUC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from ._validation import as_array, check_same_shape
from .attribution import AttributionMap
from .model import as_network
from .numerics import conv2d_same, gaussian_kernel


@dataclass(frozen=True)
class EvalCurve:
    fractions: np.ndarray
    scores: np.ndarray
    auc: float


def auc(fractions, scores) -> float:
    """Trapezoidal area under ``scores`` over ``fractions``."""
    f = np.asarray(fractions, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    return float(np.sum((f[1:] - f[:-1]) * (s[1:] + s[:-1]) / 2.0))


def blur_baseline(x, size: int = 11, std: float = 5.0) -> np.ndarray:
    return conv2d_same(as_array(x, "x"), gaussian_kernel(size, std))


def make_baseline(x, mode: str = "zero") -> np.ndarray:
    if mode == "zero":
        return np.zeros_like(np.asarray(x, dtype=np.float64))
    if mode == "blur":
        return blur_baseline(x)
    raise ValueError(f"unknown baseline mode {mode!r}")


def _schedule(num_pixels: int, steps: int) -> np.ndarray:
    """Pixel counts at each checkpoint: equal groups, remainder in the last one."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    steps = min(steps, num_pixels)
    group = num_pixels // steps
    counts = np.arange(steps + 1) * group
    counts[-1] = num_pixels
    return counts


def _pixel_mask_shape(x: np.ndarray) -> tuple[int, ...]:
    # whole pixels are swapped across channels for images; otherwise element-wise
    return x.shape[1:] if x.ndim == 3 else x.shape


def _curve(model, x, amap: AttributionMap, steps: int, baseline, insert: bool,
           label: int | None) -> EvalCurve:
    net = as_network(model)
    x = as_array(x, "x")
    baseline = make_baseline(x) if baseline is None else as_array(baseline, "baseline")
    check_same_shape(x, baseline, ("x", "baseline"))
    check_same_shape(x, np.asarray(amap.values), ("x", "map"))
    if label is None:
        label = net.predict(x).label
    pix_shape = _pixel_mask_shape(x)
    num_pixels = int(np.prod(pix_shape))
    rank = amap.pixel_rank
    counts = _schedule(num_pixels, steps)
    start, fill = (baseline, x) if insert else (x, baseline)
    scores = np.empty(len(counts))
    for k, c in enumerate(counts):
        mask = np.zeros(num_pixels, dtype=bool)
        mask[rank[:c]] = True
        # one forward pass per image: batched BLAS can round differently from a
        # single-sample call, and the endpoints must equal the model's own confidence
        scores[k] = net.predict(np.where(mask.reshape(pix_shape), fill, start)).probs[label]
    fractions = counts / num_pixels
    return EvalCurve(fractions, scores, auc(fractions, scores))


def insertion_curve(model, x, amap: AttributionMap, steps: int = 50, baseline=None,
                    label: int | None = None) -> EvalCurve:
    """Reveal top-ranked pixels of ``x`` on ``baseline``; score the reference label.

    The reference label defaults to the model's prediction on the clean ``x``.
    """
    return _curve(model, x, amap, steps, baseline, True, label)


def deletion_curve(model, x, amap: AttributionMap, steps: int = 50, baseline=None,
                   label: int | None = None) -> EvalCurve:
    return _curve(model, x, amap, steps, baseline, False, label)


@dataclass(frozen=True)
class Summary:
    mean_insertion: float
    mean_deletion: float
    rows: list[dict]


def aggregate(results) -> Summary:
    """Per-sample AUC records (dicts or (insertion, deletion) pairs) to means."""
    results = list(results)
    if not results:
        raise ValueError("cannot aggregate an empty result list")
    rows = []
    for i, r in enumerate(results):
        if isinstance(r, dict):
            rows.append(dict(r))
        else:
            ins, dele = r
            rows.append({"sample_id": i, "insertion_auc": float(ins), "deletion_auc": float(dele)})
    ins = np.mean([float(r["insertion_auc"]) for r in rows])
    dele = np.mean([float(r["deletion_auc"]) for r in rows])
    return Summary(float(ins), float(dele), rows)


def sign_test(a, b, alternative: str = "greater") -> float:
    """Paired sign test p-value for ``a`` versus ``b``; ties are dropped."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    wins, losses = int(np.sum(d > 0)), int(np.sum(d < 0))
    if wins + losses == 0:
        return 1.0
    return float(stats.binomtest(wins, wins + losses, 0.5, alternative=alternative).pvalue)
