"""Geostatistical fits: Matern plug-in for the treatment, bivariate-Matern
conditional models and the Bessel-kernel semi-parametric model.

Every model is a Gaussian linear model ``y = D beta + delta`` whose residual
covariance is a scaled correlation matrix plus a nugget.  When that
correlation matrix does not depend on sampled parameters (standard,
semi-parametric) one eigendecomposition turns each likelihood evaluation
into O(n) work after rotating ``y`` and ``D``.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist

from ._errors import NumericalError
from .basis import ConstructedCovariates, FrequencyGrid, IarPrior, build_bspline_basis, constructed_covariates_continuous, regular_grid_spacing
from .mcmc import AdaptiveScale, McmcConfig, PosteriorSamples, dic, mh_accept
from .priors import PriorConfig
from .spectral import matern_correlation_matrix

__all__ = [
    "MaternPluginEstimate",
    "CollinearityWarning",
    "fit_matern_mle_x",
    "fit_standard_continuous",
    "fit_flexible_matern",
    "fit_parsimonious_matern",
    "fit_semiparametric_continuous",
    "continuous_covariates",
    "select_L_continuous",
    "DEFAULT_CONTINUOUS_L_MENU",
]

DEFAULT_CONTINUOUS_L_MENU = (5, 10, 20)
NU_BOUNDS = (0.1, 5.0)
HALF_CAUCHY_SCALE = np.sqrt(1000.0)


class CollinearityWarning(UserWarning):
    """The adjustment covariate is (nearly) proportional to the treatment."""


@dataclass(frozen=True)
class MaternPluginEstimate:
    phi: float
    nu: float
    sigma2: float
    mean: float
    loglik: float
    loglik_init: float
    n_starts: int
    converged: int


def _distances(sites) -> np.ndarray:
    s = np.asarray(sites, dtype=float)
    if s.ndim != 2 or s.shape[1] != 2:
        raise ValueError("sites must be an (n, 2) array")
    return cdist(s, s)


def _profile_loglik(theta, D, x, ones):
    """Matern log-likelihood with mean and variance profiled out; theta = (log phi, log nu)."""
    phi, nu = np.exp(theta)
    R = matern_correlation_matrix(D, nu, phi)
    R[np.diag_indices_from(R)] += 1e-10
    try:
        c = linalg.cho_factor(R, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return -np.inf, None
    ri1 = linalg.cho_solve(c, ones, check_finite=False)
    rix = linalg.cho_solve(c, x, check_finite=False)
    mu = float(ones @ rix / (ones @ ri1))
    e = x - mu
    q = float(e @ linalg.cho_solve(c, e, check_finite=False))
    n = x.size
    s2 = q / n
    logdet = 2 * np.sum(np.log(np.diag(c[0])))
    return -0.5 * (n * np.log(2 * np.pi * s2) + logdet + n), (mu, s2)


def fit_matern_mle_x(x, sites, seed=None, n_starts: int = 5, tol: float = 1e-6) -> MaternPluginEstimate:
    """Maximum-likelihood Matern fit for the treatment (range, smoothness, variance, mean).

    Bounded L-BFGS-B over (log phi, log nu) with the variance and constant
    mean profiled out, restarted from ``n_starts`` random points.
    """
    x = np.asarray(x, dtype=float)
    D = _distances(sites)
    n = x.size
    if D.shape[0] != n:
        raise ValueError("sites and x lengths differ")
    if n < 20:
        raise ValueError("need at least 20 sites")
    off = D[~np.eye(n, dtype=bool)]
    if np.any(off <= 0):
        raise ValueError("sites must be distinct")
    rng = np.random.default_rng(seed)
    diam = float(D.max())
    hmin = float(off.min())
    lo = np.log([max(1e-3, 1e-3 * hmin), NU_BOUNDS[0]])
    hi = np.log([diam, NU_BOUNDS[1]])
    ones = np.ones(n)

    def negll(t):
        ll, _ = _profile_loglik(t, D, x, ones)
        return 1e10 if not np.isfinite(ll) else -ll

    starts = [np.log([0.1 * diam, 0.5])] + [rng.uniform(lo, hi) for _ in range(n_starts - 1)]
    best, ll_init, ok = None, None, 0
    for s0 in starts:
        f0 = -negll(s0)
        if ll_init is None:
            ll_init = f0
        res = optimize.minimize(negll, s0, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                                options={"ftol": tol, "maxiter": 200})
        if np.isfinite(res.fun) and res.fun < 1e10:
            ok += 1
            if best is None or res.fun < best.fun:
                best = res
    if best is None:
        raise NumericalError("Matern likelihood optimization failed from every start")
    ll, (mu, s2) = _profile_loglik(best.x, D, x, ones)
    phi, nu = np.exp(best.x)
    return MaternPluginEstimate(float(phi), float(nu), float(s2), mu, float(ll), float(ll_init), len(starts), ok)


# ---------------------------------------------------------------------------
# fixed-correlation Gaussian regression (standard, semi-parametric)


class _RotatedGP:
    """y = D beta + e, Cov(e) = S (w R + (1 - w) I) with R = U diag(ev) U^T fixed."""

    def __init__(self, y, D, R, prior: PriorConfig, cfg: McmcConfig, rng, L=0, bslice=None):
        ev, U = np.linalg.eigh(R)
        self.ev = np.maximum(ev, 0.0)
        self.yt = U.T @ y
        self.Dt = U.T @ D
        self.n, self.p = D.shape
        self.prior = prior
        self.rng = rng
        self.L = L
        self.bslice = bslice
        self.omega_iar = IarPrior(1.0, L).precision_structure() if L > 1 else None
        self.beta = np.linalg.lstsq(D, y, rcond=None)[0]
        self.S = float(np.var(y - D @ self.beta)) + 1e-6
        self.w = 0.5
        self.sb2 = 0.1
        self.sc_S = AdaptiveScale(0.3, cfg)
        self.sc_w = AdaptiveScale(0.5, cfg)
        self.sc_sb = AdaptiveScale(1.0, cfg)

    def var(self, S=None, w=None):
        S = self.S if S is None else S
        w = self.w if w is None else w
        return S * (w * self.ev + 1.0 - w)

    def loglik(self, S=None, w=None, beta=None):
        v = self.var(S, w)
        e = self.yt - self.Dt @ (self.beta if beta is None else beta)
        return float(-0.5 * (np.sum(np.log(2 * np.pi * v)) + np.sum(e * e / v)))

    def prior_prec(self):
        P = np.eye(self.p) / self.prior.coef_var
        if self.L > 1:
            L = self.L
            P[self.bslice, self.bslice] = self.omega_iar / self.sb2 + np.full((L, L), 1.0 / (self.prior.coef_var * L * L))
        return P

    def sweep(self, it):
        v = self.var()
        Dw = self.Dt / v[:, None]
        prec = self.Dt.T @ Dw + self.prior_prec()
        try:
            c = linalg.cholesky(prec, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"coefficient precision not positive definite: {exc}", it) from exc
        mean = linalg.cho_solve((c, True), Dw.T @ self.yt)
        self.beta = mean + linalg.solve_triangular(c.T, self.rng.standard_normal(self.p), lower=False)
        # total variance: Exponential(1) prior, log scale
        Sp = self.S * np.exp(self.sc_S.scale * self.rng.standard_normal())
        lr = self.loglik(S=Sp) - self.loglik() - (Sp - self.S) + np.log(Sp / self.S)
        acc = mh_accept(self.rng, lr)
        if acc:
            self.S = float(Sp)
        self.sc_S.record(acc, it)
        # signal ratio: Uniform(0, 1) prior, logit scale
        z = np.log(self.w / (1 - self.w)) + self.sc_w.scale * self.rng.standard_normal()
        wp = 1.0 / (1.0 + np.exp(-z))
        if 0 < wp < 1:
            lr = self.loglik(w=wp) - self.loglik() + np.log(wp * (1 - wp)) - np.log(self.w * (1 - self.w))
            acc = mh_accept(self.rng, lr)
            if acc:
                self.w = float(wp)
        else:
            acc = False
        self.sc_w.record(acc, it)
        if self.L > 1:
            b = self.beta[self.bslice]
            Q = float(b @ self.omega_iar @ b)
            xi = self.prior.xi

            def tgt(s):
                sb = np.exp(s)
                return -(self.L - 1) * s - Q / (2 * sb * sb) - xi * sb + s

            sc = 0.5 * np.log(self.sb2)
            sp = sc + self.sc_sb.scale * self.rng.standard_normal()
            acc = mh_accept(self.rng, tgt(sp) - tgt(sc))
            if acc:
                self.sb2 = float(np.exp(2 * sp))
            self.sc_sb.record(acc, it)


def _run_rotated(y, D, R, names, prior, mcmc, L=0, bslice=None, model="standard", extras=None):
    t0 = time.perf_counter()
    rng = np.random.default_rng(mcmc.seed)
    gp = _RotatedGP(y, D, R, prior, mcmc, rng, L, bslice)
    cols = names + ["sigma_delta2", "sigma2", "total_var", "signal_ratio"] + (["sigma_b2"] if L > 1 else [])
    out = np.empty((mcmc.retained, len(cols)))
    dev = np.empty(mcmc.retained)
    for it in range(mcmc.iterations):
        gp.sweep(it)
        if it >= mcmc.burn_in:
            row = list(gp.beta) + [gp.S * gp.w, gp.S * (1 - gp.w), gp.S, gp.w] + ([gp.sb2] if L > 1 else [])
            if not np.all(np.isfinite(row)):
                raise NumericalError("non-finite parameter state", it)
            out[it - mcmc.burn_in] = row
            dev[it - mcmc.burn_in] = -2 * gp.loglik()
    pm = out.mean(axis=0)
    d_bar = -2 * gp.loglik(S=pm[cols.index("total_var")], w=pm[cols.index("signal_ratio")], beta=pm[: gp.p])
    meta = dict(model=model, L=L, iterations=mcmc.iterations, burn_in=mcmc.burn_in, seed=mcmc.seed,
                runtime=time.perf_counter() - t0)
    return PosteriorSamples(out, cols, meta, deviance=dev, deviance_at_mean=d_bar, extras=extras or {})


def _check_inputs(y, x, sites):
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    s = np.asarray(sites, dtype=float)
    if y.shape != x.shape or s.shape != (y.size, 2):
        raise ValueError("y, x and sites must describe the same n locations")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
        raise ValueError("y and x must be finite")
    return y, x, s


def fit_standard_continuous(y, x, sites, plugin: MaternPluginEstimate, prior: PriorConfig | None = None, mcmc: McmcConfig | None = None) -> PosteriorSamples:
    """Gaussian-process regression y = beta0 + beta_x x + delta + eps without adjustment.

    delta has the treatment's plug-in Matern correlation and a free variance.
    """
    y, x, s = _check_inputs(y, x, sites)
    R = matern_correlation_matrix(_distances(s), plugin.nu, plugin.phi)
    D = np.column_stack([np.ones_like(x), x])
    return _run_rotated(y, D, R, ["beta0", "beta_x"], prior or PriorConfig(), mcmc or McmcConfig())


def continuous_covariates(sites, x, L: int, m: int = 64) -> ConstructedCovariates:
    """Constructed covariates with knots over [0, pi / max grid spacing]."""
    s = np.asarray(sites, dtype=float)
    spacing = regular_grid_spacing(s)
    if spacing is None:
        from .basis import interpolate_to_grid

        _, _, spacing = interpolate_to_grid(s, x)
    freq = FrequencyGrid(np.pi / max(spacing), m)
    spline = build_bspline_basis(L, 3, 0.0, freq.omega_max)
    return constructed_covariates_continuous(s, x, spline, freq)


def fit_semiparametric_continuous(y, x, sites, covs: ConstructedCovariates, plugin: MaternPluginEstimate, prior: PriorConfig | None = None, mcmc: McmcConfig | None = None) -> PosteriorSamples:
    """y = beta0 + beta_x x + sum_l b_l Zhat_l + delta + eps with an IAR/PCP prior on b."""
    y, x, s = _check_inputs(y, x, sites)
    if covs.provenance != "continuous" or covs.columns.shape[0] != y.size:
        raise ValueError("constructed covariates must come from the same continuous grid")
    L = covs.L
    R = matern_correlation_matrix(_distances(s), plugin.nu, plugin.phi)
    D = np.column_stack([np.ones_like(x), x, covs.columns])
    names = ["beta0", "beta_x"] + [f"b{l + 1}" for l in range(L)]
    zsum = covs.columns.sum(axis=1)
    cor = abs(np.corrcoef(zsum, x)[0, 1]) if np.std(zsum) > 0 else 0.0
    out = _run_rotated(y, D, R, names, prior or PriorConfig(variant="semi_pcp"), mcmc or McmcConfig(), L, slice(2, 2 + L),
                       "semiparametric", extras={"collinearity": float(cor)})
    return out


@dataclass
class ContinuousSelection:
    L: int
    table: dict
    samples: PosteriorSamples


def select_L_continuous(y, x, sites, plugin, L_menu=DEFAULT_CONTINUOUS_L_MENU, prior=None, mcmc=None, m: int = 64) -> ContinuousSelection:
    table, fits = {}, {}
    for L in dict.fromkeys(int(v) for v in L_menu):
        covs = continuous_covariates(sites, x, L, m)
        fits[L] = fit_semiparametric_continuous(y, x, sites, covs, plugin, prior, mcmc)
        table[L] = dic(fits[L]).dic
    best = min(table, key=table.get)
    return ContinuousSelection(best, table, fits[best])


# ---------------------------------------------------------------------------
# bivariate Matern conditional models


def _half_cauchy_logpdf(v, loc, scale=HALF_CAUCHY_SCALE, lower=0.0):
    """Cauchy(loc, scale) truncated to (lower, inf), up to a constant."""
    return -np.log1p(((v - loc) / scale) ** 2) if v > lower else -np.inf


class _MaternAdjustment:
    """Shared pieces: distances, R_x^{-1} x and the adjustment vector R_zx R_x^{-1} x."""

    def __init__(self, x, sites, plugin: MaternPluginEstimate):
        self.D = _distances(sites)
        self.plugin = plugin
        Rx = matern_correlation_matrix(self.D, plugin.nu, plugin.phi)
        Rx[np.diag_indices_from(Rx)] += 1e-10
        try:
            self.cx = linalg.cho_factor(Rx, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"plug-in treatment correlation is not positive definite: {exc}") from exc
        self.rinv_x = linalg.cho_solve(self.cx, x)
        self.x = x
        self._cache = {}

    def corr(self, nu):
        key = round(float(nu), 12)
        if key not in self._cache:
            if len(self._cache) > 256:
                self._cache.clear()
            self._cache[key] = matern_correlation_matrix(self.D, nu, self.plugin.phi)
        return self._cache[key]

    def zhat(self, nu_xz):
        return self.corr(nu_xz) @ self.rinv_x


def fit_parsimonious_matern(y, x, sites, plugin: MaternPluginEstimate, prior: PriorConfig | None = None, mcmc: McmcConfig | None = None, nu_grid=None) -> PosteriorSamples:
    """Parsimonious bivariate Matern: nu_xz = (nu_x + nu_z) / 2, common plug-in range.

    Mean ``beta0 + beta_x x + rho sigma_z / sigma_x R_zx R_x^-1 x``; residual
    covariance ``S (w R_z + (1 - w) I)`` with S = sigma_z2 (1 - (rho C)^2) + sigma2
    and w its spatial share.  nu_z moves on a log grid so eigendecompositions
    of R_z can be cached.
    """
    y, x, s = _check_inputs(y, x, sites)
    prior = prior or PriorConfig(variant="parametric")
    mcmc = mcmc or McmcConfig()
    t0 = time.perf_counter()
    rng = np.random.default_rng(mcmc.seed)
    adj = _MaternAdjustment(x, s, plugin)
    nux, sx = plugin.nu, np.sqrt(plugin.sigma2)
    grid = np.asarray(nu_grid if nu_grid is not None else np.exp(np.linspace(np.log(0.05), np.log(8.0), 40)))
    log_w_grid = np.log(grid)  # log-grid cell width is proportional to nu
    eig = {}

    def eig_for(j):
        if j not in eig:
            ev, U = np.linalg.eigh(adj.corr(grid[j]))
            eig[j] = (np.maximum(ev, 0.0), U)
        return eig[j]

    def coh_c(j):
        nz = grid[j]
        return 0.5 * (nux + nz) / np.sqrt(nux * nz)

    Dm = np.column_stack([np.ones_like(x), x])
    j = int(np.argmin(np.abs(grid - 2 * nux)))
    rho = 0.0
    beta = np.linalg.lstsq(Dm, y, rcond=None)[0]
    S = float(np.var(y - Dm @ beta))
    w = 0.5
    if np.isclose(grid, nux, rtol=1e-3).any():
        warnings.warn("the nu_z grid contains nu_x, where the adjustment is collinear with x", CollinearityWarning, stacklevel=2)

    def sigma_z(S, w, rho, j):
        return np.sqrt(S * w / (1 - (rho * coh_c(j)) ** 2))

    def mean(beta, S, w, rho, j):
        a = rho * sigma_z(S, w, rho, j) / sx
        return Dm @ beta + a * adj.zhat(0.5 * (nux + grid[j]))

    def loglik(beta, S, w, rho, j):
        ev, U = eig_for(j)
        v = S * (w * ev + 1 - w)
        e = U.T @ (y - mean(beta, S, w, rho, j))
        return float(-0.5 * (np.sum(np.log(2 * np.pi * v)) + np.sum(e * e / v)))

    def log_prior_rho_nu(rho, j):
        c = coh_c(j)
        if abs(rho) * c >= 1:
            return -np.inf
        # Uniform(-1/C, 1/C) density C/2; half-Cauchy on nu_z times the grid cell width
        return np.log(c) + _half_cauchy_logpdf(grid[j], nux) + log_w_grid[j]

    sc_S, sc_w, sc_rho = AdaptiveScale(0.3, mcmc), AdaptiveScale(0.5, mcmc), AdaptiveScale(0.2, mcmc)
    names = ["beta0", "beta_x", "rho", "nu_z", "nu_xz", "sigma_z2", "sigma2", "total_var", "signal_ratio", "coherence"]
    out = np.empty((mcmc.retained, len(names)))
    dev = np.empty(mcmc.retained)
    ll = loglik(beta, S, w, rho, j)
    for it in range(mcmc.iterations):
        # (beta0, beta_x) | rest: Gaussian
        ev, U = eig_for(j)
        v = S * (w * ev + 1 - w)
        a = rho * sigma_z(S, w, rho, j) / sx
        yt = U.T @ (y - a * adj.zhat(0.5 * (nux + grid[j])))
        Dt = U.T @ Dm
        Dw = Dt / v[:, None]
        prec = Dt.T @ Dw + np.eye(2) / prior.coef_var
        c = linalg.cholesky(prec, lower=True)
        beta = linalg.cho_solve((c, True), Dw.T @ yt) + linalg.solve_triangular(c.T, rng.standard_normal(2), lower=False)
        ll = loglik(beta, S, w, rho, j)
        # total variance and signal ratio
        Sp = S * np.exp(sc_S.scale * rng.standard_normal())
        llp = loglik(beta, Sp, w, rho, j)
        acc = mh_accept(rng, llp - ll - (Sp - S) + np.log(Sp / S))
        if acc:
            S, ll = float(Sp), llp
        sc_S.record(acc, it)
        zp = np.log(w / (1 - w)) + sc_w.scale * rng.standard_normal()
        wp = float(1 / (1 + np.exp(-zp)))
        acc = False
        if 0 < wp < 1:
            llp = loglik(beta, S, wp, rho, j)
            acc = mh_accept(rng, llp - ll + np.log(wp * (1 - wp)) - np.log(w * (1 - w)))
            if acc:
                w, ll = wp, llp
        sc_w.record(acc, it)
        # (rho, nu_z) block
        jp = j + int(rng.choice([-2, -1, 0, 1, 2]))
        rp = rho + sc_rho.scale * rng.standard_normal()
        acc = False
        if 0 <= jp < grid.size:
            lpp = log_prior_rho_nu(rp, jp)
            if np.isfinite(lpp):
                llp = loglik(beta, S, w, rp, jp)
                acc = mh_accept(rng, llp - ll + lpp - log_prior_rho_nu(rho, j))
                if acc:
                    rho, j, ll = float(rp), jp, llp
        sc_rho.record(acc, it)
        if it >= mcmc.burn_in:
            sz2 = sigma_z(S, w, rho, j) ** 2
            row = [beta[0], beta[1], rho, grid[j], 0.5 * (nux + grid[j]), sz2, S * (1 - w), S, w, rho * coh_c(j)]
            if not np.all(np.isfinite(row)):
                raise NumericalError("non-finite parameter state", it)
            out[it - mcmc.burn_in] = row
            dev[it - mcmc.burn_in] = -2 * ll
    pm = out.mean(axis=0)
    jbar = int(np.argmin(np.abs(np.log(grid) - np.mean(np.log(out[:, 3])))))
    d_bar = -2 * loglik(pm[:2], pm[7], pm[8], float(np.clip(pm[2], -0.999 / coh_c(jbar), 0.999 / coh_c(jbar))), jbar)
    zfit = adj.zhat(0.5 * (nux + grid[jbar]))
    meta = dict(model="parsimonious", iterations=mcmc.iterations, burn_in=mcmc.burn_in, seed=mcmc.seed,
                runtime=time.perf_counter() - t0, plugin=plugin.__dict__)
    return PosteriorSamples(out, names, meta, deviance=dev, deviance_at_mean=d_bar, extras={"zhat": zfit})


def fit_flexible_matern(y, x, sites, plugin: MaternPluginEstimate, prior: PriorConfig | None = None, mcmc: McmcConfig | None = None, fixed_rho: float | None = None) -> PosteriorSamples:
    """Common-range bivariate Matern with free cross-smoothness.

    Residual covariance ``sigma_z2 (R_z - rho^2 R_zx R_x^-1 R_zx^T) + sigma2 I``
    is factorized afresh at every proposal; proposals that break positive
    definiteness or the validity constraints are rejected.
    """
    y, x, s = _check_inputs(y, x, sites)
    prior = prior or PriorConfig(variant="parametric")
    mcmc = mcmc or McmcConfig()
    t0 = time.perf_counter()
    rng = np.random.default_rng(mcmc.seed)
    adj = _MaternAdjustment(x, s, plugin)
    nux, sx = plugin.nu, np.sqrt(plugin.sigma2)
    n = y.size
    Lx = adj.cx[0]
    Dm = np.column_stack([np.ones_like(x), x])

    def cov_parts(nu_z, nu_xz):
        Rz = adj.corr(nu_z)
        Rzx = adj.corr(nu_xz)
        G = linalg.solve_triangular(Lx, Rzx.T, lower=True)  # Lx^-1 R_xz
        return Rz, G.T @ G, Rzx @ adj.rinv_x

    def valid(rho, nu_z, nu_xz):
        return nu_z > 0 and nu_xz > max(nux, 0.5 * (nux + nu_z)) and rho**2 < nux * nu_z / nu_xz**2

    def evaluate(beta, S, w, rho, nu_z, nu_xz, parts=None):
        Rz, P, zh = parts or cov_parts(nu_z, nu_xz)
        sz2 = S * w
        C = sz2 * (Rz - rho**2 * P)
        C[np.diag_indices_from(C)] += S * (1 - w) + 1e-10
        try:
            c = linalg.cho_factor(C, lower=True, check_finite=False)
        except linalg.LinAlgError:
            return -np.inf, None
        e = y - Dm @ beta - rho * np.sqrt(sz2) / sx * zh
        q = float(e @ linalg.cho_solve(c, e, check_finite=False))
        ll = -0.5 * (n * np.log(2 * np.pi) + 2 * np.sum(np.log(np.diag(c[0]))) + q)
        return ll, (c, zh, parts or (Rz, P, zh))

    def log_prior(rho, nu_z, nu_xz):
        if not valid(rho, nu_z, nu_xz):
            return -np.inf
        bound = np.sqrt(nux * nu_z) / nu_xz
        return -np.log(2 * bound) - np.log(2 * nu_xz - nux) + _half_cauchy_logpdf(nu_xz, nux, lower=nux)

    nu_xz = 2.0 * nux
    nu_z = 2.0 * nux
    rho = 0.0 if fixed_rho is None else float(fixed_rho)
    if fixed_rho is not None and not valid(rho, nu_z, nu_xz):
        raise ValueError("fixed rho violates the validity constraint at the initial smoothness values")
    beta = np.linalg.lstsq(Dm, y, rcond=None)[0]
    S = float(np.var(y - Dm @ beta))
    w = 0.5
    ll, state = evaluate(beta, S, w, rho, nu_z, nu_xz)
    if not np.isfinite(ll):
        raise NumericalError("initial covariance is not positive definite")
    sc_S, sc_w, sc_sp = AdaptiveScale(0.3, mcmc), AdaptiveScale(0.5, mcmc), AdaptiveScale(0.1, mcmc)
    names = ["beta0", "beta_x", "rho", "nu_z", "nu_xz", "sigma_z2", "sigma2", "total_var", "signal_ratio"]
    out = np.empty((mcmc.retained, len(names)))
    dev = np.empty(mcmc.retained)
    for it in range(mcmc.iterations):
        c, zh, parts = state
        off = rho * np.sqrt(S * w) / sx * zh
        CiD = linalg.cho_solve(c, Dm, check_finite=False)
        prec = Dm.T @ CiD + np.eye(2) / prior.coef_var
        cc = linalg.cholesky(prec, lower=True)
        beta = linalg.cho_solve((cc, True), CiD.T @ (y - off)) + linalg.solve_triangular(cc.T, rng.standard_normal(2), lower=False)
        ll, state = evaluate(beta, S, w, rho, nu_z, nu_xz, parts)
        # variance block
        Sp = S * np.exp(sc_S.scale * rng.standard_normal())
        zp = np.log(w / (1 - w)) + sc_w.scale * rng.standard_normal()
        wp = float(1 / (1 + np.exp(-zp)))
        acc = False
        if 0 < wp < 1:
            llp, stp = evaluate(beta, Sp, wp, rho, nu_z, nu_xz, parts)
            lr = llp - ll - (Sp - S) + np.log(Sp / S) + np.log(wp * (1 - wp)) - np.log(w * (1 - w))
            acc = bool(np.isfinite(llp) and mh_accept(rng, lr))
            if acc:
                S, w, ll, state = float(Sp), wp, llp, stp
        sc_S.record(acc, it)
        sc_w.record(acc, it)
        # spatial block (rho, nu_z, nu_xz) on log scales for the smoothness values
        step = sc_sp.scale * rng.standard_normal(3)
        rp = rho if fixed_rho is not None else rho + step[0]
        nzp = nu_z * np.exp(step[1])
        nxp = nu_xz * np.exp(step[2])
        lpp = log_prior(rp, nzp, nxp)
        acc = False
        if np.isfinite(lpp):
            llp, stp = evaluate(beta, S, w, rp, nzp, nxp)
            lr = llp - ll + lpp - log_prior(rho, nu_z, nu_xz) + np.log(nzp * nxp / (nu_z * nu_xz))
            acc = bool(np.isfinite(llp) and mh_accept(rng, lr))
            if acc:
                rho, nu_z, nu_xz, ll, state = float(rp), float(nzp), float(nxp), llp, stp
        sc_sp.record(acc, it)
        if it >= mcmc.burn_in:
            row = [beta[0], beta[1], rho, nu_z, nu_xz, S * w, S * (1 - w), S, w]
            if not np.all(np.isfinite(row)):
                raise NumericalError("non-finite parameter state", it)
            out[it - mcmc.burn_in] = row
            dev[it - mcmc.burn_in] = -2 * ll
    pm = out.mean(axis=0)
    d_ll, _ = evaluate(pm[:2], pm[7], pm[8], pm[2], pm[3], pm[4])
    meta = dict(model="flexible", iterations=mcmc.iterations, burn_in=mcmc.burn_in, seed=mcmc.seed,
                runtime=time.perf_counter() - t0, plugin=plugin.__dict__)
    return PosteriorSamples(out, names, meta, deviance=dev, deviance_at_mean=-2 * d_ll if np.isfinite(d_ll) else float(dev.mean()),
                            extras={"zhat": adj.zhat(pm[4])})
