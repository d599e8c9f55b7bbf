"""Update-direction estimators for transfer-style attacks.

Every strategy has the signature ``strategy(state, net, y, cfg) -> ndarray`` and
returns the new direction/momentum tensor. The attribution loop takes its sign
as the step. Strategies only draw randomness from named child streams of
``state.rng`` so two strategies that share a sampling scheme (FSPS and the
frequency-exploration strategy) see identical draws.

Averages over sampled terms are taken as ``t0 + mean(t_i - t0)``. This equals
the plain mean up to rounding, and returns ``t0`` bit-for-bit when every term
is identical, which keeps the degenerate configurations exactly equal to their
simpler counterparts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .model import Network, path_gradient_sum
from .numerics import (
    BLOCK_OPS,
    Rng,
    _block_transform_plan,
    _resize_pad_plan,
    conv2d_same,
    dct2,
    gaussian,
    gaussian_kernel,
    idct2,
    l1_normalize,
    uniform,
)

DEFAULT_M = {"dim": 8, "sia": 8, "gra": 8, "sinim": 5}


@dataclass(frozen=True)
class AttackConfig:
    """Attack hyperparameters. ``eps`` is on the 0-255 scale; images live in [0, 1]."""

    eps: float = 16.0
    steps: int = 10
    alpha: float | None = None
    mu: float = 1.0
    m: int | None = None
    n: int = 8
    m_ig: int = 20
    dp: float = 0.5
    rho: float = 0.5
    sigma: float = 1.0
    beta: float = 4.0
    seed: int = 0
    resize_low: float = 0.9
    tim_kernel: int = 7
    tim_std: float = 3.0
    sia_splits: int = 3
    sia_ops: tuple[str, ...] = BLOCK_OPS
    grad_noise: float = 0.0

    def __post_init__(self):
        checks = [
            (self.eps >= 0, "eps must be >= 0"),
            (self.steps >= 0, "steps must be >= 0"),
            (self.alpha is None or self.alpha > 0, "alpha must be > 0"),
            (0 <= self.dp <= 1, "dp must lie in [0, 1]"),
            (0 <= self.rho <= 1, "rho must lie in [0, 1]"),
            (self.sigma >= 0, "sigma must be >= 0"),
            (self.beta >= 0, "beta must be >= 0"),
            (self.m is None or self.m >= 1, "m must be >= 1"),
            (self.n >= 1, "n must be >= 1"),
            (self.m_ig >= 1, "m_ig must be >= 1"),
            (0 < self.resize_low <= 1, "resize_low must lie in (0, 1]"),
            (self.tim_kernel >= 1 and self.tim_kernel % 2 == 1, "tim_kernel must be odd"),
            (self.sia_splits >= 1, "sia_splits must be >= 1"),
            (self.grad_noise >= 0, "grad_noise must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        object.__setattr__(self, "sia_ops", tuple(self.sia_ops))

    @property
    def eps_norm(self) -> float:
        return self.eps / 255.0

    @property
    def step_size(self) -> float:
        if self.alpha is not None:
            return self.alpha
        return self.eps_norm / max(self.steps, 1)

    def samples(self, strategy: str) -> int:
        return self.m if self.m is not None else DEFAULT_M.get(strategy, 8)

    def with_(self, **changes) -> "AttackConfig":
        return replace(self, **changes)


@dataclass
class AttackState:
    x0: np.ndarray
    x_t: np.ndarray
    momentum: np.ndarray
    rng: Rng
    t: int = 0
    success_step: int | None = None
    _streams: dict = field(default_factory=dict, repr=False)
    _grad_cache: tuple | None = field(default=None, repr=False)

    @classmethod
    def start(cls, x0, seed: int = 0) -> "AttackState":
        x0 = np.asarray(x0, dtype=np.float64)
        return cls(x0=x0.copy(), x_t=x0.copy(), momentum=np.zeros_like(x0), rng=Rng(seed))

    def stream(self, name: str) -> Rng:
        """Named child stream, created once per trajectory."""
        if name not in self._streams:
            self._streams[name] = self.rng.fork(name)
        return self._streams[name]

    def gradient(self, net: Network, y: int) -> np.ndarray:
        """Raw loss gradient at the current point, computed once per step."""
        if self._grad_cache is None or self._grad_cache[0] != self.t:
            self._grad_cache = (self.t, net.input_gradient(self.x_t, y))
        return self._grad_cache[1]


def _mean(terms: Sequence[np.ndarray]) -> np.ndarray:
    first = terms[0]
    if len(terms) == 1:
        return first
    return first + np.mean([t - first for t in terms], axis=0)


def _image_shape(state: AttackState) -> None:
    if state.x_t.ndim != 3:
        raise ValueError(f"strategy needs (C, H, W) inputs, got shape {state.x_t.shape}")


def grad_pgd(state: AttackState, net: Network, y: int, cfg: AttackConfig) -> np.ndarray:
    return state.gradient(net, y)


def grad_mim(state: AttackState, net: Network, y: int, cfg: AttackConfig) -> np.ndarray:
    return cfg.mu * state.momentum + l1_normalize(state.gradient(net, y))


def grad_mig(state: AttackState, net: Network, y: int, cfg: AttackConfig) -> np.ndarray:
    ig = path_gradient_sum(net, state.x_t, y, np.zeros_like(state.x_t), cfg.m_ig)
    return cfg.mu * state.momentum + l1_normalize(ig)


def grad_dim(state: AttackState, net: Network, y: int, cfg: AttackConfig) -> np.ndarray:
    _image_shape(state)
    rng = state.stream("diversity")
    terms = []
    for _ in range(cfg.samples("dim")):
        if rng.random(1)[0] < cfg.dp:
            xd, vjp = _resize_pad_plan(state.x_t, rng, cfg.resize_low)
            terms.append(vjp(net.input_gradient(xd, y)))
        else:
            terms.append(state.gradient(net, y))
    return _mean(terms)


def grad_sinim(state: AttackState, net: Network, y: int, cfg: AttackConfig) -> np.ndarray:
    x_nest = state.x_t + cfg.step_size * cfg.mu * state.momentum
    # the chain-rule factor 2**-i cancels in the L1 normalisation
    terms = [
        l1_normalize(net.input_gradient(x_nest / 2.0**i, y))
        for i in range(cfg.samples("sinim"))
    ]
    return cfg.mu * state.momentum + _mean(terms)


def grad_tim(state: AttackState, net: Network, y: int, cfg: AttackConfig) -> np.ndarray:
    _image_shape(state)
    return conv2d_same(state.gradient(net, y), gaussian_kernel(cfg.tim_kernel, cfg.tim_std))


def grad_sia(state: AttackState, net: Network, y: int, cfg: AttackConfig) -> np.ndarray:
    _image_shape(state)
    rng = state.stream("blocks")
    terms = []
    for _ in range(cfg.samples("sia")):
        xs, vjp = _block_transform_plan(state.x_t, rng, cfg.sia_splits, cfg.sia_ops)
        terms.append(vjp(net.input_gradient(xs, y)))
    return _mean(terms)


def gra_weight(g_t: np.ndarray, g_i: np.ndarray) -> float:
    """Cosine similarity of two gradients, 0 if either vanishes, clipped to [-1, 1]."""
    denom = np.linalg.norm(g_t) * np.linalg.norm(g_i)
    if denom == 0:
        return 0.0
    return float(np.clip(np.vdot(g_t, g_i) / denom, -1.0, 1.0))


def grad_gra(state: AttackState, net: Network, y: int, cfg: AttackConfig) -> np.ndarray:
    rng = state.stream("neighborhood")
    g_t = state.gradient(net, y)
    radius = cfg.beta * cfg.eps_norm
    terms = []
    for _ in range(cfg.samples("gra")):
        g_i = net.input_gradient(state.x_t + uniform(rng, state.x_t.shape, -radius, radius), y)
        c = gra_weight(g_t, g_i)
        terms.append(g_i + c * (g_t - g_i))  # c*g_t + (1-c)*g_i
    return cfg.mu * state.momentum + _mean(terms)


def _spectral_sample(state: AttackState, cfg: AttackConfig):
    """One frequency-domain perturbation of x_t and its vector-Jacobian product."""
    if cfg.rho == 0 and cfg.sigma == 0:
        return state.x_t, lambda g: g
    rng = state.stream("spectrum")
    spec = dct2(state.x_t)
    mask = uniform(rng, spec.shape, 1.0 - cfg.rho, 1.0 + cfg.rho)
    noise = gaussian(rng, spec.shape, 0.0, cfg.sigma * cfg.eps_norm)
    x_idct = idct2(spec * mask + noise)
    # idct(mask * dct(.)) is symmetric for an orthonormal DCT
    return x_idct, lambda g: idct2(dct2(g) * mask)


def grad_fsps(state: AttackState, net: Network, y: int, cfg: AttackConfig) -> np.ndarray:
    _image_shape(state)
    terms = []
    for _ in range(cfg.n):
        x_idct, vjp = _spectral_sample(state, cfg)
        terms.append(l1_normalize(vjp(net.input_gradient(x_idct, y))))
    return cfg.mu * state.momentum + _mean(terms)


def grad_attexplore(state: AttackState, net: Network, y: int, cfg: AttackConfig) -> np.ndarray:
    """Frequency exploration: spectral sampling as in FSPS, each sample optionally resized."""
    _image_shape(state)
    diversity = state.stream("diversity")
    terms = []
    for _ in range(cfg.n):
        x_idct, spectral_vjp = _spectral_sample(state, cfg)
        if diversity.random(1)[0] < cfg.dp:
            xd, resize_vjp = _resize_pad_plan(x_idct, diversity, cfg.resize_low)
            g = spectral_vjp(resize_vjp(net.input_gradient(xd, y)))
        else:
            g = spectral_vjp(net.input_gradient(x_idct, y))
        terms.append(l1_normalize(g))
    return cfg.mu * state.momentum + _mean(terms)


def add_gradient_noise(g, rng: Rng, sigma: float) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return g
    return g + gaussian(rng, g.shape, 0.0, sigma)


Strategy = Callable[[AttackState, Network, int, AttackConfig], np.ndarray]

STRATEGIES: dict[str, Strategy] = {
    "bim": grad_pgd,
    "pgd": grad_pgd,
    "mim": grad_mim,
    "mig": grad_mig,
    "dim": grad_dim,
    "sinim": grad_sinim,
    "tim": grad_tim,
    "sia": grad_sia,
    "gra": grad_gra,
    "fsps": grad_fsps,
    "attexplore": grad_attexplore,
}

STOCHASTIC = ("dim", "sia", "gra", "fsps", "attexplore")


def get_strategy(strategy_id: str) -> Strategy:
    try:
        return STRATEGIES[strategy_id]
    except KeyError:
        raise ValueError(
            f"unknown strategy {strategy_id!r}; choose from {', '.join(STRATEGIES)}"
        ) from None
