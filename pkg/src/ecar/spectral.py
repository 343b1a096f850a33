"""Spectral densities, coherence and confounder-adjustment operators.

Continuous models use the 2-d Matern spectral density
``m(w; nu, phi) = nu * phi**(-2 nu) * (phi**-2 + |w|**2) ** -(nu + 1)``, which
integrates to ``pi``; discrete models use the Leroux CAR variance functions
``f(w) = 1 / (1 - lam + lam * w)`` at the graph eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg, special

from ._errors import NumericalError

__all__ = [
    "MaternSpectrum",
    "BivariateMaternParams",
    "BivariateCarParams",
    "CoherenceSummary",
    "matern_spectral_density",
    "matern_correlation",
    "matern_correlation_matrix",
    "alpha_matern_common_range",
    "alpha_matern_parsimonious",
    "coherence_matern",
    "alpha_car",
    "tau2_car",
    "coherence_car",
    "check_car_positive_definite",
    "car_coherence_summary",
    "oracle_adjustment",
]


@dataclass(frozen=True)
class MaternSpectrum:
    nu: float
    phi: float

    def __post_init__(self):
        if not (self.nu > 0 and self.phi > 0):
            raise ValueError("Matern smoothness and range must be positive")


def matern_spectral_density(spec: MaternSpectrum, omega_norm):
    w = np.asarray(omega_norm, dtype=float)
    if np.any(w < 0):
        raise ValueError("frequency norm must be nonnegative")
    nu, phi = spec.nu, spec.phi
    return nu * phi ** (-2 * nu) * (phi**-2 + w * w) ** (-(nu + 1))


def matern_correlation(h, nu: float, phi: float):
    """Matern correlation ``2**(1-nu)/Gamma(nu) (h/phi)**nu K_nu(h/phi)``.

    The range convention matches :func:`matern_spectral_density`; ``nu=0.5``
    gives ``exp(-h/phi)``.
    """
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("distance must be nonnegative")
    if not (nu > 0 and phi > 0):
        raise ValueError("Matern smoothness and range must be positive")
    u = h / phi
    out = np.ones_like(u)
    pos = u > 0
    up = u[pos]
    if nu == 0.5:
        out[pos] = np.exp(-up)
    else:
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            val = np.exp((1 - nu) * np.log(2) - special.gammaln(nu) + nu * np.log(up)) * special.kv(nu, up)
        # K_nu underflows far out; correlation is zero there
        val = np.where(np.isfinite(val), val, 0.0)
        out[pos] = np.clip(val, 0.0, 1.0)
    return out if out.ndim else float(out)


def matern_correlation_matrix(dist: np.ndarray, nu: float, phi: float) -> np.ndarray:
    """Correlation matrix from a distance matrix, evaluating each unique distance once."""
    uniq, inv = np.unique(np.round(dist, 12), return_inverse=True)
    return matern_correlation(uniq, nu, phi)[inv].reshape(dist.shape)


@dataclass(frozen=True)
class BivariateMaternParams:
    nu_x: float
    nu_z: float
    nu_xz: float
    phi: float
    sigma_x: float = 1.0
    sigma_z: float = 1.0
    rho: float = 0.0

    @classmethod
    def parsimonious(cls, nu_x, nu_z, phi, sigma_x=1.0, sigma_z=1.0, rho=0.0):
        return cls(nu_x, nu_z, 0.5 * (nu_x + nu_z), phi, sigma_x, sigma_z, rho)

    @property
    def is_parsimonious(self) -> bool:
        return bool(np.isclose(self.nu_xz, 0.5 * (self.nu_x + self.nu_z), rtol=0, atol=1e-12))

    @property
    def coherence_constant(self) -> float:
        """C = nu_xz / sqrt(nu_x nu_z), the coherence factor at w = 0."""
        return self.nu_xz / np.sqrt(self.nu_x * self.nu_z)

    def is_valid_flexible(self) -> bool:
        return (
            self.nu_xz > max(self.nu_x, 0.5 * (self.nu_x + self.nu_z))
            and self.rho**2 < self.nu_x * self.nu_z / self.nu_xz**2
        )

    def is_valid_parsimonious(self) -> bool:
        return self.is_parsimonious and abs(self.rho) < np.sqrt(self.nu_x * self.nu_z) / self.nu_xz


def alpha_matern_common_range(p: BivariateMaternParams, omega_norm):
    w = np.asarray(omega_norm, dtype=float)
    return p.rho * p.sigma_z / p.sigma_x * (p.phi**-2 + w * w) ** (-(p.nu_xz - p.nu_x))


def alpha_matern_parsimonious(p: BivariateMaternParams, omega_norm):
    w = np.asarray(omega_norm, dtype=float)
    return p.rho * p.sigma_z / p.sigma_x * (p.phi**-2 + w * w) ** (-(p.nu_z - p.nu_x) / 2)


def coherence_matern(p: BivariateMaternParams, omega_norm):
    """gamma(w) = rho f_xz / sqrt(f_x f_z) under a common range."""
    fx = matern_spectral_density(MaternSpectrum(p.nu_x, p.phi), omega_norm)
    fz = matern_spectral_density(MaternSpectrum(p.nu_z, p.phi), omega_norm)
    fxz = matern_spectral_density(MaternSpectrum(p.nu_xz, p.phi), omega_norm)
    return p.rho * fxz / np.sqrt(fx * fz)


@dataclass(frozen=True)
class BivariateCarParams:
    lambda_x: float
    lambda_z: float
    lambda_xz: float = 0.0
    sigma_x: float = 1.0
    sigma_z: float = 1.0
    rho: float = 0.0
    parsimonious: bool = True

    def __post_init__(self):
        for lam in (self.lambda_x, self.lambda_z, self.lambda_xz):
            if not 0.0 <= lam < 1.0:
                raise ValueError("CAR dependence parameters must lie in [0, 1)")
        if self.sigma_x <= 0 or self.sigma_z <= 0:
            raise ValueError("CAR scales must be positive")
        if self.parsimonious and not abs(self.rho) <= 1:
            raise ValueError("parsimonious CAR requires |rho| <= 1")


def _q(lam, w):
    return 1.0 - lam + lam * np.asarray(w, dtype=float)


def alpha_car(p: BivariateCarParams, omega_k):
    scale = p.rho * p.sigma_z / p.sigma_x
    if p.parsimonious:
        return scale * np.sqrt(_q(p.lambda_x, omega_k) / _q(p.lambda_z, omega_k))
    return scale * _q(p.lambda_x, omega_k) / _q(p.lambda_xz, omega_k)


def tau2_car(p: BivariateCarParams, omega_k):
    """Residual confounder variance after projecting Z* on X* at each frequency."""
    if p.parsimonious:
        out = p.sigma_z**2 * (1 - p.rho**2) / _q(p.lambda_z, omega_k)
    else:
        out = p.sigma_z**2 / _q(p.lambda_z, omega_k) - p.rho**2 * p.sigma_z**2 * _q(p.lambda_x, omega_k) / _q(
            p.lambda_xz, omega_k
        ) ** 2
    out = np.asarray(out)
    if np.any(out < -1e-14):
        raise ValueError("negative residual variance: bivariate CAR covariance is not positive definite")
    out = np.maximum(out, 0.0)
    return out if out.ndim else float(out)


def coherence_car(p: BivariateCarParams, omega_k):
    if p.parsimonious:
        return np.full_like(np.asarray(omega_k, dtype=float), p.rho)
    return p.rho * np.sqrt(_q(p.lambda_x, omega_k) * _q(p.lambda_z, omega_k)) / _q(p.lambda_xz, omega_k)


class PDCheck(NamedTuple):
    ok: bool
    violating_omega: float | None


def check_car_positive_definite(p: BivariateCarParams, eigenvalues) -> PDCheck:
    """Test rho^2 q_x(w) q_z(w) < q_xz(w)^2 at each supplied eigenvalue."""
    w = np.asarray(eigenvalues, dtype=float)
    if np.any(w < 0):
        raise ValueError("eigenvalues must be nonnegative")
    if p.parsimonious:
        lhs = p.rho**2 * np.ones_like(w)
        rhs = np.ones_like(w)
    else:
        lhs = p.rho**2 * _q(p.lambda_x, w) * _q(p.lambda_z, w)
        rhs = _q(p.lambda_xz, w) ** 2
    bad = np.flatnonzero(~(lhs < rhs))
    if bad.size:
        return PDCheck(False, float(w[bad[0]]))
    return PDCheck(True, None)


@dataclass(frozen=True)
class CoherenceSummary:
    """Frequency-wise coherence, adjustment operator and residual spectrum."""

    gamma: object
    alpha: object
    tau2: object


def car_coherence_summary(p: BivariateCarParams) -> CoherenceSummary:
    return CoherenceSummary(
        gamma=lambda w: coherence_car(p, w),
        alpha=lambda w: alpha_car(p, w),
        tau2=lambda w: tau2_car(p, w),
    )


def oracle_adjustment(sigma_zx, sigma_x, x) -> np.ndarray:
    """Best linear predictor Sigma_zx Sigma_x^-1 x via a Cholesky solve."""
    sigma_zx = np.asarray(sigma_zx, dtype=float)
    try:
        cf = linalg.cho_factor(np.asarray(sigma_x, dtype=float), lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"Sigma_x is not positive definite: {exc}") from exc
    return sigma_zx @ linalg.cho_solve(cf, np.asarray(x, dtype=float))
