"""Bayesian fits for areal data.

Gaussian models run entirely on the graph-Fourier coordinates
``Y* = Gamma^T Y`` where the likelihood factorizes over frequencies:

* standard / semi-parametric:
  ``Y*_k ~ N(beta0 M_k + beta(omega_k) X*_k, tau2 (r / q_z(k) + 1 - r))``
  with ``beta(omega) = sum_l B_l(omega) b_l`` and ``q(k) = 1 - lam + lam omega_k``;
* parsimonious bivariate CAR:
  ``Y*_k ~ N(beta0 M_k + (beta_x + psi sqrt(q_x/q_z)) X*_k, tau / q_z + sigma2)``
  times the treatment marginal ``X*_k ~ N(0, sigma_x2 / q_x)``.

Count models add a latent log-relative-risk field whose CAR prior is handled
by the same spectral samplers with the nugget switched off.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, special
from scipy.sparse import csr_matrix

from ._errors import NumericalError
from .basis import BSplineBasis, ConstructedCovariates, IarPrior, build_bspline_basis, constructed_covariates_discrete
from .graph import AdjacencyGraph, SpectralBasis
from .mcmc import AdaptiveScale, McmcConfig, PosteriorSamples, dic, mh_accept
from .priors import PriorConfig

__all__ = [
    "GaussianSpectralData",
    "GlmData",
    "SelectionResult",
    "fit_standard_gaussian",
    "fit_parsimonious_car",
    "fit_semiparametric_gaussian",
    "fit_glm_car",
    "select_L",
    "spectral_spline",
    "rho_sigma_from_tau_eta",
    "tau_eta_from_rho_sigma",
    "gaussian_spectral_loglik",
    "DEFAULT_L_MENU",
]

DEFAULT_L_MENU = (1, 5, 10, 20, 30, 40)


@dataclass(frozen=True, eq=False)
class GaussianSpectralData:
    y_star: np.ndarray
    x_star: np.ndarray
    col_sums: np.ndarray
    omega: np.ndarray
    covariates_star: np.ndarray | None = None

    @classmethod
    def from_spatial(cls, basis: SpectralBasis, y, x, covariates=None) -> "GaussianSpectralData":
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        if y.shape != (basis.n,) or x.shape != (basis.n,):
            raise ValueError(f"y and x must have length {basis.n}")
        _require_connected(basis)
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise ValueError("y and x must be finite")
        cs = None
        if covariates is not None:
            c = np.asarray(covariates, dtype=float).reshape(basis.n, -1)
            cs = basis.gamma.T @ c
        return cls(basis.gamma.T @ y, basis.gamma.T @ x, basis.col_sums, basis.omega, cs)

    @property
    def n(self) -> int:
        return self.y_star.shape[0]

    @property
    def n_covariates(self) -> int:
        return 0 if self.covariates_star is None else self.covariates_star.shape[1]


@dataclass(frozen=True, eq=False)
class GlmData:
    y: np.ndarray
    x: np.ndarray
    offset: np.ndarray | None = None
    covariates: np.ndarray | None = None
    family: str = "poisson"

    def __post_init__(self):
        if self.family not in ("poisson", "negbin", "gaussian"):
            raise ValueError("family must be poisson, negbin or gaussian")
        y = np.asarray(self.y, dtype=float)
        if self.family != "gaussian":
            if np.any(y < 0) or np.any(y != np.round(y)):
                raise ValueError("counts must be nonnegative integers")
            if self.offset is None:
                raise ValueError("count families need an offset (expected counts or population)")
        if self.offset is not None and np.any(np.asarray(self.offset, dtype=float) <= 0):
            raise ValueError("offsets must be positive")
        if np.asarray(self.x).shape != y.shape:
            raise ValueError("x and y lengths differ")


def _require_connected(basis: SpectralBasis) -> None:
    # the intercept term beta0 M_k is only defined for a single zero eigenvalue
    if basis.n_zero > 1:
        raise ValueError(f"graph has {basis.n_zero} connected components; only connected graphs are supported")


def rho_sigma_from_tau_eta(tau_precision, eta):
    """(rho, sigma_z2) from the identified pair (tau, eta = rho sigma_z).

    ``tau = 1 / (sigma_z2 (1 - rho^2))``; rho carries the sign of eta.
    """
    tau_precision = np.asarray(tau_precision, dtype=float)
    eta = np.asarray(eta, dtype=float)
    sz2 = 1.0 / tau_precision + eta**2
    return np.sign(eta) * np.sqrt(eta**2 / sz2), sz2


def tau_eta_from_rho_sigma(rho, sigma_z2):
    rho = np.asarray(rho, dtype=float)
    sigma_z2 = np.asarray(sigma_z2, dtype=float)
    return 1.0 / (sigma_z2 * (1 - rho**2)), rho * np.sqrt(sigma_z2)


def spectral_spline(omega: np.ndarray, L: int, degree: int = 3) -> BSplineBasis:
    """Spline basis over the observed eigenvalue range [omega_1, omega_n]."""
    return build_bspline_basis(L, degree, float(omega[0]), float(omega[-1]))


def gaussian_spectral_loglik(resid: np.ndarray, var: np.ndarray) -> float:
    return float(-0.5 * (np.sum(np.log(2 * np.pi * var)) + np.sum(resid * resid / var)))


def _logit(p):
    return np.log(p) - np.log1p(-p)


def _expit(z):
    return special.expit(z)


def _gaussian_draw(rng, prec: np.ndarray, lin: np.ndarray, iteration: int) -> np.ndarray:
    """Draw from N(prec^-1 lin, prec^-1)."""
    try:
        c = linalg.cholesky(prec, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"coefficient precision is not positive definite: {exc}", iteration) from exc
    mean = linalg.cho_solve((c, True), lin)
    z = rng.standard_normal(lin.shape[0])
    return mean + linalg.solve_triangular(c.T, z, lower=False)


# ---------------------------------------------------------------------------
# spectral linear model with a spline coefficient (standard + semi-parametric)


class _SplineRegression:
    """One-sweep Gibbs/MH updates for the standard and semi-parametric models.

    Variance per frequency is ``tau2 * g_k`` with ``g_k = r c / q_k + 1 - r``
    (nugget) or ``1 / q_k`` (no nugget; used for latent fields).
    """

    def __init__(self, design, omega, L, prior: PriorConfig, cfg: McmcConfig, rng, nugget=True, fixed=None, iar_cols=None):
        self.D = np.asarray(design, dtype=float)
        self.omega = omega
        self.n, self.p = self.D.shape
        self.L = L
        self.bslice = iar_cols if iar_cols is not None else slice(1, 1 + L)
        self.prior = prior
        self.nugget = nugget
        self.fixed = dict(fixed or {})
        self.rng = rng
        self.omega_iar = IarPrior(1.0, L).precision_structure() if L > 1 else None
        self.r2d2 = prior.variant == "semi_r2d2"
        # state
        self.coef = np.zeros(self.p)
        self.tau2 = float(self.fixed.get("tau2", 1.0))
        self.r = float(self.fixed.get("r", 0.5 if nugget else 1.0))
        self.lam = float(self.fixed.get("lambda_z", 0.5))
        self.sb2 = float(self.fixed.get("sigma_b2", 0.1))  # sigma_b2 (PCP) or sigma_R2 (R2D2)
        self.sc_r = AdaptiveScale(1.0, cfg)
        self.sc_lam = AdaptiveScale(1.0, cfg)
        self.sc_sb = AdaptiveScale(1.0, cfg)
        self._g = self._gfun(self.r, self.lam)

    # -- pieces -----------------------------------------------------------
    def _gfun(self, r, lam):
        q = 1.0 - lam + lam * self.omega
        if not self.nugget:
            return 1.0 / q
        c = self.n / np.sum(1.0 / q) if self.prior.normalize_spatial else 1.0
        return r * c / q + (1.0 - r)

    @property
    def sigma_b2(self) -> float:
        return self.sb2 * self.tau2 if self.r2d2 else self.sb2

    def prior_precision(self) -> np.ndarray:
        P = np.eye(self.p) / self.prior.coef_var
        if self.L > 1:
            L = self.L
            bs = self.bslice
            P[bs, bs] = self.omega_iar / self.sigma_b2 + np.full((L, L), 1.0 / (self.prior.coef_var * L * L))
        return P

    def _iar_quad(self) -> float:
        b = self.coef[self.bslice]
        return float(b @ self.omega_iar @ b)

    def mean_star(self) -> np.ndarray:
        return self.D @ self.coef

    def variances(self) -> np.ndarray:
        return self.tau2 * self._g

    def loglik(self, ystar, g=None, tau2=None) -> float:
        g = self._g if g is None else g
        tau2 = self.tau2 if tau2 is None else tau2
        return gaussian_spectral_loglik(ystar - self.mean_star(), tau2 * g)

    # -- updates ----------------------------------------------------------
    def update_coef(self, ystar, it):
        w = 1.0 / (self.tau2 * self._g)
        Dw = self.D * w[:, None]
        prec = self.D.T @ Dw + self.prior_precision()
        self.coef = _gaussian_draw(self.rng, prec, Dw.T @ ystar, it)

    def update_tau2(self, ystar):
        if "tau2" in self.fixed:
            return
        e = ystar - self.mean_star()
        shape = self.prior.tau2_shape + 0.5 * self.n
        rate = self.prior.tau2_rate + 0.5 * np.sum(e * e / self._g)
        if self.r2d2 and self.L > 1:
            shape += 0.5 * (self.L - 1)
            rate += 0.5 * self._iar_quad() / self.sb2
        self.tau2 = 1.0 / self.rng.gamma(shape, 1.0 / rate)

    def _mh_unit(self, ystar, name, scale: AdaptiveScale, it):
        cur = self.r if name == "r" else self.lam
        zc = _logit(cur)
        zp = zc + scale.scale * self.rng.standard_normal()
        prop = float(_expit(zp))
        if not 0.0 < prop < 1.0:
            scale.record(False, it)
            return
        gp = self._gfun(prop, self.lam) if name == "r" else self._gfun(self.r, prop)
        lr = self.loglik(ystar, g=gp) - self.loglik(ystar)
        lr += np.log(prop) + np.log1p(-prop) - np.log(cur) - np.log1p(-cur)
        acc = mh_accept(self.rng, lr)
        if acc:
            if name == "r":
                self.r = prop
            else:
                self.lam = prop
            self._g = gp
        scale.record(acc, it)

    def _log_sb_target(self, s):
        # s = log sigma_b (PCP) or log sigma_R2 (R2D2)
        Q = self._iar_quad()
        if self.r2d2:
            v = np.exp(s)
            return -0.5 * (self.L - 1) * np.log(v * self.tau2) - Q / (2 * v * self.tau2) - 2 * np.log1p(v) + s
        sb = np.exp(s)
        return -(self.L - 1) * s - Q / (2 * sb * sb) - self.prior.xi * sb + s

    def update_sigma_b(self, it):
        if self.L < 2 or "sigma_b2" in self.fixed:
            return
        sc = np.log(self.sb2) if self.r2d2 else 0.5 * np.log(self.sb2)
        sp = sc + self.sc_sb.scale * self.rng.standard_normal()
        acc = mh_accept(self.rng, self._log_sb_target(sp) - self._log_sb_target(sc))
        if acc:
            self.sb2 = float(np.exp(sp) if self.r2d2 else np.exp(2 * sp))
        self.sc_sb.record(acc, it)

    def sweep(self, ystar, it):
        self.update_coef(ystar, it)
        self.update_tau2(ystar)
        if self.nugget and "r" not in self.fixed:
            self._mh_unit(ystar, "r", self.sc_r, it)
        if "lambda_z" not in self.fixed:
            self._mh_unit(ystar, "lambda_z", self.sc_lam, it)
        self.update_sigma_b(it)

    def spatial_variance(self) -> float:
        """sigma_z2 of the CAR component."""
        if not self.nugget:
            return self.tau2
        q = 1.0 - self.lam + self.lam * self.omega
        c = self.n / np.sum(1.0 / q) if self.prior.normalize_spatial else 1.0
        return self.tau2 * self.r * c

    def state(self) -> list[float]:
        out = list(self.coef)
        if self.L > 1:
            out.append(self.sb2)
        out += [self.tau2, self.r, self.lam, self.spatial_variance(), self.tau2 * (1 - self.r)]
        return out

    def state_names(self, coef_names) -> list[str]:
        names = list(coef_names)
        if self.L > 1:
            names.append("sigma_R2" if self.r2d2 else "sigma_b2")
        return names + ["tau2", "r", "lambda_z", "sigma_z2", "sigma2"]


def _spline_design(data: GaussianSpectralData, spline: BSplineBasis):
    B = spline(data.omega)
    cols = [data.col_sums[:, None], data.x_star[:, None] * B]
    if data.covariates_star is not None:
        cols.append(data.covariates_star)
    return np.hstack(cols), B


def _coef_names(L, n_cov):
    return ["beta0"] + [f"b{l + 1}" for l in range(L)] + [f"c{j + 1}" for j in range(n_cov)]


def _check_finite(value, what, it):
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite {what}", it)


def _run_spline_gaussian(data: GaussianSpectralData, L: int, prior: PriorConfig, mcmc: McmcConfig, fixed=None, spline=None) -> PosteriorSamples:
    t0 = time.perf_counter()
    rng = np.random.default_rng(mcmc.seed)
    spline = spline or spectral_spline(data.omega, L)
    D, B = _spline_design(data, spline)
    s = _SplineRegression(D, data.omega, L, prior, mcmc, rng, nugget=True, fixed=fixed)
    ols = np.linalg.lstsq(D, data.y_star, rcond=None)[0]
    s.coef = ols
    s.tau2 = float(fixed.get("tau2", np.var(data.y_star - D @ ols) + 1e-8)) if fixed else float(np.var(data.y_star - D @ ols) + 1e-8)
    names = s.state_names(_coef_names(L, data.n_covariates))
    out = np.empty((mcmc.retained, len(names)))
    dev = np.empty(mcmc.retained)
    for it in range(mcmc.iterations):
        s.sweep(data.y_star, it)
        if it >= mcmc.burn_in:
            st = s.state()
            _check_finite(st, "parameter state", it)
            j = it - mcmc.burn_in
            out[j] = st
            dev[j] = -2 * s.loglik(data.y_star)
    _check_finite(dev, "deviance", mcmc.iterations)
    # beta_x = beta(omega_n): derived from the spline coefficients
    bcols = [names.index(f"b{l + 1}") for l in range(L)]
    Bn = spline(data.omega[-1:])[0]
    beta_x = out[:, bcols] @ Bn
    out = np.column_stack([out, beta_x])
    names = names + ["beta_x"]
    # deviance at the posterior mean
    pm = out.mean(axis=0)
    coef = pm[: s.p]
    g_bar = s._gfun(pm[names.index("r")], pm[names.index("lambda_z")])
    d_bar = -2 * gaussian_spectral_loglik(data.y_star - D @ coef, pm[names.index("tau2")] * g_bar)
    meta = dict(model="semiparametric" if L > 1 else "standard", L=L, iterations=mcmc.iterations,
                burn_in=mcmc.burn_in, seed=mcmc.seed, prior=prior.variant, runtime=time.perf_counter() - t0,
                acceptance_scales=dict(r=s.sc_r.scale, lambda_z=s.sc_lam.scale, sigma_b=s.sc_sb.scale))
    return PosteriorSamples(out, names, meta, deviance=dev, deviance_at_mean=d_bar, omega=np.asarray(data.omega),
                            curve_basis=B, curve_params=[f"b{l + 1}" for l in range(L)])


def fit_standard_gaussian(data: GaussianSpectralData, prior: PriorConfig | None = None, mcmc: McmcConfig | None = None, fixed: dict | None = None) -> PosteriorSamples:
    """Spatial regression with a frequency-constant effect beta_x.

    ``fixed`` may pin ``tau2``, ``r`` or ``lambda_z`` at given values.
    """
    if data.n < 3:
        raise ValueError("need at least 3 regions")
    prior = prior or PriorConfig()
    return _run_spline_gaussian(data, 1, prior, mcmc or McmcConfig(), fixed)


def fit_semiparametric_gaussian(data: GaussianSpectralData, covs: ConstructedCovariates | int, prior: PriorConfig | None = None, mcmc: McmcConfig | None = None, fixed: dict | None = None) -> PosteriorSamples:
    """Frequency-varying effect beta(omega) = sum_l B_l(omega) b_l.

    ``covs`` is either the constructed covariates (their spline is reused) or
    just the basis size ``L``.  The causal summary is beta(omega_n).
    """
    prior = prior or PriorConfig(variant="semi_pcp")
    if isinstance(covs, ConstructedCovariates):
        if covs.provenance != "discrete" or covs.columns.shape[0] != data.n:
            raise ValueError("constructed covariates must come from the same spectral basis")
        spline, L = covs.basis, covs.L
    else:
        L, spline = int(covs), None
    if L < 1:
        raise ValueError("L must be positive")
    return _run_spline_gaussian(data, L, prior, mcmc or McmcConfig(), fixed, spline)


# ---------------------------------------------------------------------------
# parsimonious bivariate CAR


class _ParsimoniousCar:
    """Updates for (beta0, beta_x, psi[, c]) | rest and the variance/dependence block."""

    def __init__(self, data: GaussianSpectralData, prior: PriorConfig, cfg: McmcConfig, rng, nugget=True, fixed=None, x_star=None, x_marginal=True):
        self.x_marginal = x_marginal
        self.omega = data.omega
        self.M = data.col_sums
        self.xs = data.x_star if x_star is None else x_star
        self.C = data.covariates_star
        self.n = data.n
        self.prior = prior
        self.rng = rng
        self.nugget = nugget
        self.fixed = dict(fixed or {})
        self.pos = self.omega > 0  # zero frequency carries the unmodelled X mean
        self.p = 3 + (0 if self.C is None else self.C.shape[1])
        self.coef = np.zeros(self.p)
        self.sigma2 = float(self.fixed.get("sigma2", 0.1 if nugget else 0.0))
        self.tau = float(self.fixed.get("tau", 1.0))
        self.lam_z = float(self.fixed.get("lambda_z", 0.9))
        self.lam_x = float(self.fixed.get("lambda_x", 0.5))
        self.sx2 = float(self.fixed.get("sigma_x2", 1.0))
        self.sc = {k: AdaptiveScale(0.5, cfg) for k in ("sigma2", "tau", "lambda_z", "lambda_x")}

    def q(self, lam):
        return 1.0 - lam + lam * self.omega

    def design(self, lam_x=None, lam_z=None):
        lam_x = self.lam_x if lam_x is None else lam_x
        lam_z = self.lam_z if lam_z is None else lam_z
        a = self.xs * np.sqrt(self.q(lam_x) / self.q(lam_z))
        cols = [self.M, self.xs, a]
        D = np.column_stack(cols)
        return D if self.C is None else np.hstack([D, self.C])

    def variances(self, tau=None, sigma2=None, lam_z=None):
        tau = self.tau if tau is None else tau
        sigma2 = self.sigma2 if sigma2 is None else sigma2
        lam_z = self.lam_z if lam_z is None else lam_z
        return tau / self.q(lam_z) + sigma2

    def mean_star(self, D=None):
        return (self.design() if D is None else D) @ self.coef

    def loglik_y(self, ystar, **kw) -> float:
        D = self.design(kw.get("lam_x"), kw.get("lam_z"))
        v = self.variances(kw.get("tau"), kw.get("sigma2"), kw.get("lam_z"))
        return gaussian_spectral_loglik(ystar - D @ self.coef, v)

    def loglik_x(self, lam_x=None, sx2=None) -> float:
        if not self.x_marginal:
            return 0.0
        lam_x = self.lam_x if lam_x is None else lam_x
        sx2 = self.sx2 if sx2 is None else sx2
        q = self.q(lam_x)[self.pos]
        x = self.xs[self.pos]
        return float(-0.5 * np.sum(np.log(2 * np.pi * sx2 / q)) - 0.5 * np.sum(q * x * x) / sx2)

    def update_coef(self, ystar, it):
        D = self.design()
        w = 1.0 / self.variances()
        Dw = D * w[:, None]
        prec = D.T @ Dw + np.eye(self.p) / self.prior.coef_var
        self.coef = _gaussian_draw(self.rng, prec, Dw.T @ ystar, it)

    def update_sx2(self):
        if "sigma_x2" in self.fixed:
            return
        q = self.q(self.lam_x)[self.pos]
        x = self.xs[self.pos]
        shape = self.prior.sigma_x2_shape + 0.5 * x.size
        rate = self.prior.sigma_x2_rate + 0.5 * np.sum(q * x * x)
        self.sx2 = 1.0 / self.rng.gamma(shape, 1.0 / rate)

    def _rw_log(self, ystar, name, shape, rate, it):
        cur = getattr(self, name)
        sc = self.sc[name]
        prop = cur * np.exp(sc.scale * self.rng.standard_normal())
        lr = self.loglik_y(ystar, **{name: prop}) - self.loglik_y(ystar)
        # Gamma(shape, rate) prior on the positive scale plus log-Jacobian
        lr += shape * (np.log(prop) - np.log(cur)) - rate * (prop - cur)
        acc = mh_accept(self.rng, lr)
        if acc:
            setattr(self, name, float(prop))
        sc.record(acc, it)

    def _rw_lambda(self, ystar, which, it):
        sc = self.sc[which]
        cur = self.lam_z if which == "lambda_z" else self.lam_x
        prop = float(_expit(_logit(cur) + sc.scale * self.rng.standard_normal()))
        ok = 0.0 < prop < 1.0
        nested = self.prior.lambda_x_below_z
        if which == "lambda_z":
            ok = ok and (prop > self.lam_x or not nested)
            if ok:
                lr = self.loglik_y(ystar, lam_z=prop) - self.loglik_y(ystar)
                # logit Jacobian lam (1 - lam), times the 1/lam_z density of lam_x | lam_z when nested
                lr += np.log1p(-prop) - np.log1p(-cur)
                if not nested:
                    lr += np.log(prop) - np.log(cur)
        else:
            ok = ok and (prop < self.lam_z or not nested)
            if ok:
                lr = self.loglik_y(ystar, lam_x=prop) - self.loglik_y(ystar)
                lr += self.loglik_x(lam_x=prop) - self.loglik_x()
                lr += np.log(prop) + np.log1p(-prop) - np.log(cur) - np.log1p(-cur)
        acc = bool(ok and mh_accept(self.rng, lr))
        if acc:
            if which == "lambda_z":
                self.lam_z = prop
            else:
                self.lam_x = prop
        sc.record(acc, it)

    def sweep(self, ystar, it):
        self.update_coef(ystar, it)
        self.update_sx2()
        if self.nugget and "sigma2" not in self.fixed:
            self._rw_log(ystar, "sigma2", self.prior.sigma2_shape, self.prior.sigma2_rate, it)
        if "tau" not in self.fixed:
            self._rw_log(ystar, "tau", self.prior.tau_shape, self.prior.tau_rate, it)
        if "lambda_z" not in self.fixed:
            self._rw_lambda(ystar, "lambda_z", it)
        if "lambda_x" not in self.fixed:
            self._rw_lambda(ystar, "lambda_x", it)

    def spatial_variance(self) -> float:
        return self.tau

    @property
    def lam(self):
        return self.lam_z

    def state(self) -> list[float]:
        psi = self.coef[2]
        eta = psi * np.sqrt(self.sx2)
        sz2 = self.tau + eta**2
        rho = eta / np.sqrt(sz2)
        return list(self.coef) + [self.sigma2, self.tau, self.lam_z, self.lam_x, self.sx2, sz2, rho]

    def state_names(self) -> list[str]:
        c = [f"c{j + 1}" for j in range(self.p - 3)]
        return ["beta0", "beta_x", "psi"] + c + ["sigma2", "tau", "lambda_z", "lambda_x", "sigma_x2", "sigma_z2", "rho"]


def fit_parsimonious_car(data: GaussianSpectralData, prior: PriorConfig | None = None, mcmc: McmcConfig | None = None, fixed: dict | None = None, x_marginal: bool = True) -> PosteriorSamples:
    """Parsimonious bivariate CAR fit with the treatment marginal included.

    ``tau`` is the residual confounder variance sigma_z2 (1 - rho^2); the
    draws of ``rho`` and ``sigma_z2`` are derived from (tau, eta = psi sigma_x).
    """
    if data.n < 5:
        raise ValueError("need at least 5 regions")
    prior = prior or PriorConfig(variant="parametric")
    mcmc = mcmc or McmcConfig()
    t0 = time.perf_counter()
    rng = np.random.default_rng(mcmc.seed)
    s = _ParsimoniousCar(data, prior, mcmc, rng, nugget=True, fixed=fixed, x_marginal=x_marginal)
    s.coef = np.linalg.lstsq(s.design(), data.y_star, rcond=None)[0]
    names = s.state_names()
    out = np.empty((mcmc.retained, len(names)))
    dev = np.empty(mcmc.retained)
    for it in range(mcmc.iterations):
        s.sweep(data.y_star, it)
        if it >= mcmc.burn_in:
            st = s.state()
            _check_finite(st, "parameter state", it)
            out[it - mcmc.burn_in] = st
            dev[it - mcmc.burn_in] = -2 * s.loglik_y(data.y_star)
    pm = out.mean(axis=0)
    g = {n: pm[i] for i, n in enumerate(names)}
    s.coef = pm[: s.p]
    d_bar = -2 * s.loglik_y(data.y_star, tau=g["tau"], sigma2=g["sigma2"], lam_z=g["lambda_z"], lam_x=g["lambda_x"])
    meta = dict(model="parametric", iterations=mcmc.iterations, burn_in=mcmc.burn_in, seed=mcmc.seed,
                prior=prior.variant, runtime=time.perf_counter() - t0)
    return PosteriorSamples(out, names, meta, deviance=dev, deviance_at_mean=d_bar, omega=np.asarray(data.omega))


# ---------------------------------------------------------------------------
# model selection


@dataclass
class SelectionResult:
    L: int
    table: dict[int, float]
    samples: PosteriorSamples
    details: dict


def select_L(data, candidates: Sequence[int], fit_fn: Callable[[object, int], PosteriorSamples]) -> SelectionResult:
    """Fit each candidate basis size and keep the DIC minimizer."""
    cands = list(dict.fromkeys(int(c) for c in candidates))
    if not cands:
        raise ValueError("no candidate L values")
    table, details, fits = {}, {}, {}
    for L in cands:
        try:
            s = fit_fn(data, L)
        except NumericalError as exc:
            raise NumericalError(f"fit with L={L} failed: {exc}", exc.iteration) from exc
        except ValueError as exc:
            raise ValueError(f"fit with L={L} failed: {exc}") from exc
        d = dic(s)
        table[L] = d.dic
        details[L] = d
        fits[L] = s
    best = min(cands, key=lambda L: table[L])
    return SelectionResult(best, table, fits[best], details)


# ---------------------------------------------------------------------------
# generalized linear models with a latent CAR field


def _count_loglik(y, eta_log_mean, family, log_r=None):
    """Pointwise log p(y | mean = exp(eta_log_mean)[, size r])."""
    if family == "poisson":
        return y * eta_log_mean - np.exp(eta_log_mean) - special.gammaln(y + 1)
    r = np.exp(log_r)
    lmu = eta_log_mean
    # log(r / (r + mu)) and log(mu / (r + mu)) evaluated stably
    lse = np.logaddexp(log_r, lmu)
    return special.gammaln(y + r) - special.gammaln(r) - special.gammaln(y + 1) + r * (log_r - lse) + y * (lmu - lse)


def fit_glm_car(
    data: GlmData,
    basis: SpectralBasis,
    covs: ConstructedCovariates | int | str = 1,
    prior: PriorConfig | None = None,
    mcmc: McmcConfig | None = None,
    graph: AdjacencyGraph | None = None,
    per_region_dispersion: bool = False,
) -> PosteriorSamples:
    """Poisson / Negative-Binomial regression with a latent Leroux CAR field.

    ``theta | X ~ CAR(beta0 + sum_l Zhat_l b_l (+ C beta_c), sigma_z2, lambda_z)``
    and ``y_i ~ Poisson(E_i exp(theta_i))`` or NegBin with that mean.  ``covs``
    is constructed covariates, an integer ``L``, or ``"parametric"`` for the
    parsimonious bivariate CAR mean.  ``graph`` supplies the neighbor
    structure for the site-wise latent updates; it is rebuilt from the basis
    when omitted.
    """
    prior = prior or PriorConfig()
    mcmc = mcmc or McmcConfig()
    if data.family == "gaussian":
        raise ValueError("use the Gaussian spectral fits for gaussian responses")
    n = basis.n
    _require_connected(basis)
    y = np.asarray(data.y, dtype=float)
    x = np.asarray(data.x, dtype=float)
    if y.shape != (n,):
        raise ValueError(f"data length {y.shape[0]} does not match the graph ({n})")
    E = np.asarray(data.offset, dtype=float)
    if E.shape != (n,):
        raise ValueError("offset length mismatch")
    logE = np.log(E)
    t0 = time.perf_counter()
    rng = np.random.default_rng(mcmc.seed)

    if graph is None:
        R = (basis.gamma * basis.omega) @ basis.gamma.T
        A = csr_matrix(np.where(np.abs(R) > 0.5, 1.0, 0.0) * (1 - np.eye(n)))
        deg = np.asarray(A.sum(axis=1)).ravel()
        colors = _greedy_coloring(A)
    else:
        A = csr_matrix(graph.adjacency())
        deg = np.asarray(graph.neighbor_counts, dtype=float)
        colors = graph.coloring()

    theta = np.log((y + 0.5) / E)
    cstar = None if data.covariates is None else basis.gamma.T @ np.asarray(data.covariates, dtype=float).reshape(n, -1)
    gdata = GaussianSpectralData(basis.gamma.T @ theta, basis.gamma.T @ x, basis.col_sums, basis.omega, cstar)
    parametric = isinstance(covs, str)
    if parametric:
        if covs != "parametric":
            raise ValueError("covs must be constructed covariates, an int L, or 'parametric'")
        hyper = _ParsimoniousCar(gdata, prior, mcmc, rng, nugget=False)
        hyper.coef = np.linalg.lstsq(hyper.design(), gdata.y_star, rcond=None)[0]
        hyper.tau = float(np.var(theta)) + 1e-3
        names_h = hyper.state_names()
        names_h.remove("sigma2")
        L = None
        spline = None
    else:
        if isinstance(covs, ConstructedCovariates):
            spline, L = covs.basis, covs.L
        else:
            L = int(covs)
            spline = spectral_spline(basis.omega, L)
        D, B = _spline_design(gdata, spline)
        hyper = _SplineRegression(D, basis.omega, L, prior, mcmc, rng, nugget=False)
        hyper.coef = np.linalg.lstsq(D, gdata.y_star, rcond=None)[0]
        hyper.tau2 = float(np.var(theta)) + 1e-3
        names_h = hyper.state_names(_coef_names(L, gdata.n_covariates))
        for drop in ("tau2", "r", "sigma2"):
            names_h.remove(drop)

    negbin = data.family == "negbin"
    n_r = n if per_region_dispersion else 1
    log_r = np.zeros(n_r) + np.log(10.0)
    sc_theta = AdaptiveScale(1.0, mcmc, size=n)
    sc_r = AdaptiveScale(0.2, mcmc, size=n_r if per_region_dispersion else None)

    def loglik_pts(th, lr):
        return _count_loglik(y, logE + th, data.family, lr if negbin else None)

    def hyper_state():
        st = hyper.state()
        nm = hyper.state_names() if parametric else hyper.state_names(_coef_names(L, gdata.n_covariates))
        d = dict(zip(nm, st))
        return [d[k] for k in names_h]

    names = list(names_h)
    if negbin:
        names += ["log_r"] if not per_region_dispersion else [f"log_r{i + 1}" for i in range(n)]
    out = np.empty((mcmc.retained, len(names)))
    dev = np.empty(mcmc.retained)
    theta_sum = np.zeros(n)
    ll_cur = loglik_pts(theta, log_r)
    for it in range(mcmc.iterations):
        ts = basis.gamma.T @ theta
        hyper.sweep(ts, it)
        mu = basis.gamma @ hyper.mean_star()
        s2 = hyper.spatial_variance()
        lam = hyper.lam
        prec_diag = 1.0 - lam + lam * deg
        acc_all = np.zeros(n, dtype=bool)
        for cls in colors:
            nb = A[cls] @ (theta - mu)
            m = mu[cls] + lam * nb / prec_diag[cls]
            sd = np.sqrt(s2 / prec_diag[cls])
            prop = theta[cls] + sc_theta.scale[cls] * sd * rng.standard_normal(cls.size)
            lr_sel = log_r if not per_region_dispersion else log_r[cls]
            llp = _count_loglik(y[cls], logE[cls] + prop, data.family, lr_sel if negbin else None)
            lratio = llp - ll_cur[cls] - 0.5 * ((prop - m) ** 2 - (theta[cls] - m) ** 2) / sd**2
            acc = mh_accept(rng, lratio)
            theta[cls] = np.where(acc, prop, theta[cls])
            ll_cur[cls] = np.where(acc, llp, ll_cur[cls])
            acc_all[cls] = acc
        sc_theta.record(acc_all, it)
        if negbin:
            if per_region_dispersion:
                prop = log_r + sc_r.scale * rng.standard_normal(n)
                llp = loglik_pts(theta, prop)
                lratio = llp - ll_cur - 0.5 * (prop**2 - log_r**2) / prior.logr_var
                acc = mh_accept(rng, lratio)
                log_r = np.where(acc, prop, log_r)
                ll_cur = np.where(acc, llp, ll_cur)
            else:
                prop = log_r + sc_r.scale * rng.standard_normal(1)
                llp = loglik_pts(theta, prop)
                lratio = llp.sum() - ll_cur.sum() - 0.5 * float(prop[0] ** 2 - log_r[0] ** 2) / prior.logr_var
                acc = mh_accept(rng, lratio)
                if acc:
                    log_r, ll_cur = prop, llp
            sc_r.record(acc, it)
        if it >= mcmc.burn_in:
            j = it - mcmc.burn_in
            st = hyper_state() + (list(log_r) if negbin else [])
            _check_finite(st, "parameter state", it)
            _check_finite(theta, "latent field", it)
            out[j] = st
            dev[j] = -2 * ll_cur.sum()
            theta_sum += theta

    theta_bar = theta_sum / mcmc.retained
    lr_bar = None
    if negbin:
        lr_bar = np.log(np.exp(out[:, len(names_h):]).mean(axis=0))
    d_bar = -2 * float(np.sum(loglik_pts(theta_bar, lr_bar)))
    curve_basis = curve_params = None
    if not parametric:
        bcols = [names.index(f"b{l + 1}") for l in range(L)]
        Bn = spline(basis.omega[-1:])[0]
        out = np.column_stack([out, out[:, bcols] @ Bn])
        names.append("beta_x")
        curve_basis = spline(basis.omega)
        curve_params = [f"b{l + 1}" for l in range(L)]
    meta = dict(model="parametric" if parametric else ("semiparametric" if L > 1 else "standard"), family=data.family,
                L=L, iterations=mcmc.iterations, burn_in=mcmc.burn_in, seed=mcmc.seed, prior=prior.variant,
                runtime=time.perf_counter() - t0)
    return PosteriorSamples(out, names, meta, deviance=dev, deviance_at_mean=d_bar, omega=np.asarray(basis.omega),
                            curve_basis=curve_basis, curve_params=curve_params, extras={"theta_mean": theta_bar})


def _greedy_coloring(A: csr_matrix) -> list[np.ndarray]:
    n = A.shape[0]
    color = -np.ones(n, dtype=int)
    deg = np.diff(A.indptr)
    for i in np.argsort(-deg, kind="stable"):
        used = set(color[A.indices[A.indptr[i]:A.indptr[i + 1]]])
        c = 0
        while c in used:
            c += 1
        color[i] = c
    return [np.flatnonzero(color == c) for c in range(color.max() + 1)]


def semiparametric_covariates(basis: SpectralBasis, x, L: int) -> ConstructedCovariates:
    """Constructed covariates over the observed eigenvalue range."""
    return constructed_covariates_discrete(basis, spectral_spline(basis.omega, L), x)
