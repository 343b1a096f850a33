"""Shared MCMC machinery: configuration, adaptive random-walk scales,
posterior containers, summaries and DIC."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._errors import NumericalError

__all__ = [
    "McmcConfig",
    "AdaptiveScale",
    "PosteriorSamples",
    "posterior_summary",
    "dic",
    "DicResult",
]


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 25_000
    burn_in: int = 5_000
    seed: int | None = 0
    adapt_every: int = 50
    target_low: float = 0.30
    target_high: float = 0.45

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn-in must be nonnegative and smaller than iterations")

    @property
    def retained(self) -> int:
        return self.iterations - self.burn_in


class AdaptiveScale:
    """Random-walk step size tuned during burn-in toward a target acceptance band."""

    def __init__(self, scale: float, cfg: McmcConfig, size: int | None = None):
        self.scale = np.full(size, float(scale)) if size else float(scale)
        self._cfg = cfg
        self._acc = np.zeros(size) if size else 0.0
        self._n = 0

    def record(self, accepted, iteration: int) -> None:
        self._acc = self._acc + accepted
        self._n += 1
        cfg = self._cfg
        if iteration >= cfg.burn_in or self._n < cfg.adapt_every:
            return
        rate = self._acc / self._n
        factor = np.where(rate < cfg.target_low, 0.75, np.where(rate > cfg.target_high, 1.3, 1.0))
        self.scale = self.scale * factor if np.ndim(self.scale) else float(self.scale * factor)
        self._acc = self._acc * 0.0
        self._n = 0


def mh_accept(rng: np.random.Generator, log_ratio) -> np.ndarray | bool:
    """Metropolis acceptance; NaN ratios are rejected."""
    log_ratio = np.asarray(log_ratio, dtype=float)
    u = rng.random(log_ratio.shape)
    out = np.log(u) < np.nan_to_num(log_ratio, nan=-np.inf)
    return out if out.ndim else bool(out)


@dataclass
class PosteriorSamples:
    """Retained draws of one chain.

    ``draws`` has one row per retained iteration.  When the model has a
    frequency-varying coefficient, ``curve_basis`` maps spline coefficients
    (the columns named in ``curve_params``) to beta(omega_k).
    """

    draws: np.ndarray
    names: list[str]
    meta: dict = field(default_factory=dict)
    deviance: np.ndarray | None = None
    deviance_at_mean: float | None = None
    omega: np.ndarray | None = None
    curve_basis: np.ndarray | None = None
    curve_params: list[str] | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 2 or self.draws.shape[1] != len(self.names):
            raise ValueError("draws must be (n_draws, n_params) matching names")
        if not np.all(np.isfinite(self.draws)):
            raise NumericalError("posterior draws contain non-finite values")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]

    def __contains__(self, name: str) -> bool:
        return name in self.names

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def beta_x(self) -> np.ndarray:
        return self["beta_x"]

    def beta_curve(self) -> np.ndarray | None:
        """Draws of beta(omega_k), shape (n_draws, n_frequencies)."""
        if self.curve_basis is None:
            return None
        coef = np.column_stack([self[p] for p in self.curve_params])
        return coef @ self.curve_basis.T

    def as_dict(self) -> dict[str, np.ndarray]:
        return {n: self.draws[:, i] for i, n in enumerate(self.names)}


def _summ(v: np.ndarray) -> dict:
    lo, hi = np.quantile(v, [0.025, 0.975], axis=0)
    return {"mean": v.mean(axis=0), "sd": v.std(axis=0, ddof=1) if v.shape[0] > 1 else np.zeros_like(v[0]), "lo95": lo, "hi95": hi}


def posterior_summary(samples: PosteriorSamples | np.ndarray | dict, transform: str | Callable = "identity") -> dict:
    """Mean, SD and equal-tailed 95% interval per parameter (and per beta(omega_k)).

    ``transform="exp"`` is applied drawwise before summarizing.
    """
    if transform == "identity":
        f = lambda v: v  # noqa: E731
    elif transform == "exp":
        f = np.exp
    elif callable(transform):
        f = transform
    else:
        raise ValueError(f"unknown transform {transform!r}")

    if isinstance(samples, PosteriorSamples):
        cols = samples.as_dict()
        curve = samples.beta_curve()
    elif isinstance(samples, dict):
        cols, curve = samples, None
    else:
        arr = np.asarray(samples, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        cols, curve = {f"p{i}": arr[:, i] for i in range(arr.shape[1])}, None
    out = {}
    for name, v in cols.items():
        v = np.asarray(v, dtype=float)
        if v.size == 0:
            raise ValueError("no retained draws")
        s = _summ(f(v))
        out[name] = {k: float(x) for k, x in s.items()}
    if curve is not None:
        s = _summ(f(curve))
        out["beta_curve"] = {k: np.asarray(x) for k, x in s.items()}
        out["beta_curve"]["omega"] = np.asarray(samples.omega)
    return out


@dataclass(frozen=True)
class DicResult:
    dic: float
    p_d: float
    mean_deviance: float
    deviance_at_mean: float


def dic(samples: PosteriorSamples | None = None, deviance: Sequence[float] | None = None, deviance_at_mean: float | None = None) -> DicResult:
    """Spiegelhalter DIC = mean deviance + p_D, p_D = mean deviance - deviance at the posterior mean."""
    if samples is not None:
        deviance = samples.deviance if deviance is None else deviance
        deviance_at_mean = samples.deviance_at_mean if deviance_at_mean is None else deviance_at_mean
    if deviance is None or deviance_at_mean is None:
        raise ValueError("deviance draws and the deviance at the posterior mean are required")
    d = np.asarray(deviance, dtype=float)
    if not (np.all(np.isfinite(d)) and np.isfinite(deviance_at_mean)):
        raise NumericalError("non-finite deviance")
    dbar = float(d.mean())
    p_d = dbar - float(deviance_at_mean)
    return DicResult(dbar + p_d, p_d, dbar, float(deviance_at_mean))
