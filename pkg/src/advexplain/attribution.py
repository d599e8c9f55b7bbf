"""Attribution maps: attack-path integration plus IG, saliency and random baselines."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import as_array, check_batch, check_label
from .model import Network, as_network, path_gradient_sum
from .numerics import Rng, project_linf, sign, uniform
from .strategies import AttackConfig, AttackState, add_gradient_noise, get_strategy

REDUCTIONS = ("sum", "abs")


@dataclass(frozen=True)
class AttributionMap:
    """Per-element attributions and the per-pixel ranking derived from them.

    For (C, H, W) inputs a pixel's score is the sum over channels (or the sum of
    absolute values with ``reduction="abs"``); other shapes rank every element.
    """

    values: np.ndarray
    reduction: str = "sum"

    def __post_init__(self):
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}")

    @property
    def pixel_scores(self) -> np.ndarray:
        v = np.abs(self.values) if self.reduction == "abs" else self.values
        if v.ndim == 3:
            return v.sum(axis=0).ravel()
        return v.ravel()

    @property
    def pixel_rank(self) -> np.ndarray:
        """Pixel indices sorted by descending score; ties keep index order."""
        return np.argsort(-self.pixel_scores, kind="stable")


@dataclass(frozen=True)
class StepRecord:
    t: int
    loss: float
    label: int
    linf: float
    x_min: float
    x_max: float


@dataclass
class AttackTrace:
    steps: list[StepRecord] = field(default_factory=list)
    success_step: int | None = None


def _target_gradient(net: Network, x: np.ndarray, y: int, target: str) -> np.ndarray:
    if target == "loss":
        return net.input_gradient(x, y)
    if target == "logit":
        return net.logit_gradient(x, y)
    raise ValueError(f"unknown integrand target {target!r}")


def _record(trace: AttackTrace, net: Network, state: AttackState, y: int) -> None:
    pred = net.predict(state.x_t)
    trace.steps.append(StepRecord(
        t=state.t,
        loss=net.loss(state.x_t, y),
        label=pred.label,
        linf=float(np.max(np.abs(state.x_t - state.x0))),
        x_min=float(state.x_t.min()),
        x_max=float(state.x_t.max()),
    ))
    if pred.label != y and trace.success_step is None and state.t > 0:
        trace.success_step = state.t


def attribute_path(model, x, y: int, strategy_id: str = "mig", cfg: AttackConfig | None = None,
                   target: str = "loss", reduction: str = "sum") -> tuple[AttributionMap, AttackTrace]:
    """Accumulate ``dx_t * grad L(x_t)`` along an untargeted signed-gradient attack path.

    The step direction is the chosen strategy's output; the factor multiplied
    with each realised step ``dx_t`` is always the raw gradient at ``x_t``.
    ``dx_t`` is measured after projection, so the sum follows the path
    actually taken when the ball or [0, 1] constraint binds.
    """
    net = as_network(model)
    cfg = cfg or AttackConfig()
    strategy = get_strategy(strategy_id)
    x = as_array(x, "x")
    y = check_label(y, net.num_classes)
    state = AttackState.start(x, cfg.seed)
    trace = AttackTrace()
    _record(trace, net, state, y)
    A = np.zeros_like(x)
    for t in range(cfg.steps):
        state.t = t
        g = strategy(state, net, y, cfg)
        state.momentum = g
        direction = add_gradient_noise(g, state.stream("gradient-noise"), cfg.grad_noise)
        x_next = project_linf(state.x0, state.x_t + cfg.step_size * sign(direction), cfg.eps_norm)
        grad = state.gradient(net, y) if target == "loss" else _target_gradient(net, state.x_t, y, target)
        A += (x_next - state.x_t) * grad
        state.x_t = x_next
        state.t = t + 1
        _record(trace, net, state, y)
    state.success_step = trace.success_step
    return AttributionMap(A, reduction), trace


def integrated_gradients(model, x, y: int, baseline=None, m: int = 50, target: str = "loss",
                         reduction: str = "sum", rule: str = "midpoint") -> AttributionMap:
    """Integrated gradients from ``baseline`` (black by default) with ``m`` path points.

    ``rule="right"`` gives the endpoint sum over k/m, k = 1..m.
    """
    net = as_network(model)
    x = as_array(x, "x")
    baseline = np.zeros_like(x) if baseline is None else as_array(baseline, "baseline")
    y = check_label(y, net.num_classes)
    return AttributionMap(path_gradient_sum(net, x, y, baseline, m, target, rule), reduction)


def saliency_map(model, x, y: int, reduction: str = "sum") -> AttributionMap:
    net = as_network(model)
    x = as_array(x, "x")
    return AttributionMap(np.abs(net.input_gradient(x, check_label(y, net.num_classes))), reduction)


def random_attribution(shape, rng: Rng, reduction: str = "sum") -> AttributionMap:
    return AttributionMap(uniform(rng, shape), reduction)


# --- estimators -------------------------------------------------------------


class _Explainer(TransformerMixin, BaseEstimator):
    """Shared plumbing: ``transform(X, y=None)`` returns an array of maps shaped like ``X``.

    Targets default to the model's predicted labels.
    """

    def fit(self, X=None, y=None):
        self.network_ = as_network(self.model)
        return self

    def _targets(self, X, y):
        if y is None:
            return np.argmax(self.network_.predict_proba(X), axis=1)
        return np.asarray(y, dtype=np.int64)

    def transform(self, X, y=None):
        if not hasattr(self, "network_"):
            self.fit()
        X = check_batch(X, self.network_.input_shape)
        ys = self._targets(X, y)
        return np.stack([self.explain(x, int(t), index=i).values for i, (x, t) in enumerate(zip(X, ys))])

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).transform(X, y)


class PathAttribution(_Explainer):
    """Attack-path attribution with a pluggable gradient strategy.

    Sample ``i`` of a batch uses seed ``seed ^ i``. Settings not listed as
    parameters (``resize_low``, ``tim_kernel``, ...) go in ``attack_options``.
    """

    def __init__(self, model=None, strategy="mig", eps=16.0, steps=10, alpha=None, mu=1.0, m=None,
                 n=8, m_ig=20, dp=0.5, rho=0.5, sigma=1.0, beta=4.0, seed=0, target="loss",
                 reduction="sum", attack_options=None):
        self.model = model
        self.strategy = strategy
        self.eps = eps
        self.steps = steps
        self.alpha = alpha
        self.mu = mu
        self.m = m
        self.n = n
        self.m_ig = m_ig
        self.dp = dp
        self.rho = rho
        self.sigma = sigma
        self.beta = beta
        self.seed = seed
        self.target = target
        self.reduction = reduction
        self.attack_options = attack_options

    def attack_config(self, index: int = 0) -> AttackConfig:
        return AttackConfig(
            eps=self.eps, steps=self.steps, alpha=self.alpha, mu=self.mu, m=self.m, n=self.n,
            m_ig=self.m_ig, dp=self.dp, rho=self.rho, sigma=self.sigma, beta=self.beta,
            seed=self.seed ^ index, **(self.attack_options or {}),
        )

    def explain(self, x, y, index: int = 0) -> AttributionMap:
        return self.explain_with_trace(x, y, index)[0]

    def explain_with_trace(self, x, y, index: int = 0):
        if not hasattr(self, "network_"):
            self.fit()
        return attribute_path(self.network_, x, y, self.strategy, self.attack_config(index),
                              self.target, self.reduction)


class IntegratedGradients(_Explainer):
    def __init__(self, model=None, m=50, baseline=None, target="loss", reduction="sum",
                 rule="midpoint"):
        self.model = model
        self.m = m
        self.baseline = baseline
        self.target = target
        self.reduction = reduction
        self.rule = rule

    def explain(self, x, y, index: int = 0) -> AttributionMap:
        return integrated_gradients(self.network_, x, y, self.baseline, self.m, self.target,
                                    self.reduction, self.rule)


class SaliencyMap(_Explainer):
    def __init__(self, model=None, reduction="sum"):
        self.model = model
        self.reduction = reduction

    def explain(self, x, y, index: int = 0) -> AttributionMap:
        return saliency_map(self.network_, x, y, self.reduction)


class RandomAttribution(_Explainer):
    def __init__(self, model=None, seed=0, reduction="sum"):
        self.model = model
        self.seed = seed
        self.reduction = reduction

    def explain(self, x, y, index: int = 0) -> AttributionMap:
        return random_attribution(np.shape(x), Rng(self.seed ^ index), self.reduction)


METHODS = {
    "path": PathAttribution,
    "ig": IntegratedGradients,
    "saliency": SaliencyMap,
    "random": RandomAttribution,
}
