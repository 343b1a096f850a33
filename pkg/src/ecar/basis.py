"""B-spline bases over frequency and the constructed adjustment covariates.

A frequency-varying coefficient ``beta(w) = sum_l B_l(w) b_l`` turns into a
regression on ``L`` precomputed columns:

* discrete: ``Zhat_l = Gamma diag(B_l(omega)) Gamma^T x``;
* continuous (d = 2): ``Zhat_l(s) = sum_f (w_f / 2 pi) B_l(w_f) dF
  sum_i J_0(w_f |s - s_i|) x_i dA``, a radial inverse Fourier transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.interpolate import BSpline
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .graph import SpectralBasis

__all__ = [
    "BSplineBasis",
    "IarPrior",
    "ConstructedCovariates",
    "FrequencyGrid",
    "build_bspline_basis",
    "constructed_covariates_discrete",
    "constructed_covariates_continuous",
    "bessel_j",
    "bessel_kernel_matrices",
    "iar_full_conditional",
    "regular_grid_spacing",
    "interpolate_to_grid",
]

DEFAULT_DEGREE = 3


@dataclass(frozen=True, eq=False)
class BSplineBasis:
    """``L`` B-splines on a uniform knot vector covering ``[lo, hi]``.

    ``L == 1`` is the constant function; bases with fewer functions than
    ``degree + 1`` drop to degree ``L - 1``.
    """

    L: int
    degree: int
    knots: np.ndarray
    lo: float
    hi: float

    def __call__(self, omega) -> np.ndarray:
        w = np.atleast_1d(np.asarray(omega, dtype=float))
        if self.L == 1:
            return np.ones((w.size, 1))
        spl = BSpline(self.knots, np.eye(self.L), self.degree, extrapolate=True)
        return np.asarray(spl(w)).reshape(w.size, self.L)

    def contains(self, omega, tol: float = 1e-9) -> bool:
        w = np.asarray(omega, dtype=float)
        span = self.hi - self.lo
        return bool(np.all(w >= self.lo - tol * span) and np.all(w <= self.hi + tol * span))


def build_bspline_basis(L: int, degree: int = DEFAULT_DEGREE, omega_lo: float = 0.0, omega_hi: float = 1.0) -> BSplineBasis:
    """Uniform-knot B-spline basis whose partition-of-unity range strictly contains the domain.

    ``omega_lo`` and ``omega_hi`` sit half a knot span inside the outermost
    knot intervals of the valid range, so both endpoints are interior.
    """
    if L < 1:
        raise ValueError("need at least one basis function")
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    if not omega_lo < omega_hi:
        raise ValueError("omega_lo must be smaller than omega_hi")
    if L == 1:
        return BSplineBasis(1, 0, np.array([omega_lo, omega_hi]), float(omega_lo), float(omega_hi))
    k = min(degree, L - 1)
    spans = L - k
    width = omega_hi - omega_lo
    if spans >= 2:
        h = width / (spans - 1)
        start = omega_lo - 0.5 * h
    else:
        h = 2.0 * width
        start = omega_lo - 0.5 * width
    # valid (partition of unity) range is [knots[k], knots[L]] = [start, start + spans*h]
    knots = start + h * (np.arange(L + k + 1) - k)
    return BSplineBasis(L, k, knots, float(omega_lo), float(omega_hi))


@dataclass(frozen=True)
class IarPrior:
    """First-order random-walk prior on spline coefficients b_1..b_L."""

    sigma_b2: float
    L: int

    def precision_structure(self) -> np.ndarray:
        """Omega: diagonal N_l, off-diagonal -1 for |j - l| = 1."""
        L = self.L
        om = np.zeros((L, L))
        if L == 1:
            return om
        idx = np.arange(L - 1)
        om[idx, idx + 1] = -1.0
        om[idx + 1, idx] = -1.0
        om[np.arange(L), np.arange(L)] = -om.sum(axis=1)
        return om


def iar_full_conditional(prior: IarPrior, b, k: int) -> tuple[float, float]:
    """Mean and variance of b_k given the rest; ``k`` is 1-based."""
    b = np.asarray(b, dtype=float)
    L = prior.L
    if L < 2:
        raise ValueError("IAR full conditional needs L >= 2")
    if not 1 <= k <= L:
        raise ValueError(f"k must lie in [1, {L}]")
    nb = [j for j in (k - 1, k + 1) if 1 <= j <= L]
    mean = float(np.mean([b[j - 1] for j in nb]))
    return mean, prior.sigma_b2 / len(nb)


@dataclass(frozen=True, eq=False)
class ConstructedCovariates:
    columns: np.ndarray
    basis: BSplineBasis
    provenance: str
    omega: np.ndarray | None = field(default=None)

    @property
    def L(self) -> int:
        return self.columns.shape[1]

    def to_csv(self, path) -> None:
        header = ",".join(f"Z{l + 1}" for l in range(self.L))
        np.savetxt(path, self.columns, delimiter=",", header=header, comments="", fmt="%.10g")


def constructed_covariates_discrete(basis: SpectralBasis, spline: BSplineBasis, x) -> ConstructedCovariates:
    x = np.asarray(x, dtype=float)
    if x.shape != (basis.n,):
        raise ValueError(f"x must have length {basis.n}")
    if not spline.contains([basis.omega[0], basis.omega[-1]]):
        raise ValueError("spline domain does not cover the observed eigenvalues")
    B = spline(basis.omega)
    xs = basis.gamma.T @ x
    cols = basis.gamma @ (B * xs[:, None])
    return ConstructedCovariates(cols, spline, "discrete", omega=basis.omega)


def bessel_j(kappa: float, arg):
    """Bessel function of the first kind J_kappa(arg) for arg >= 0."""
    arg = np.asarray(arg, dtype=float)
    if np.any(arg < 0):
        raise ValueError("argument must be nonnegative")
    return special.jv(kappa, arg)


@dataclass(frozen=True)
class FrequencyGrid:
    """m equally spaced radial frequencies ending at ``omega_max``."""

    omega_max: float
    m: int = 64

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("frequency grid is empty")
        if not self.omega_max > 0:
            raise ValueError("omega_max must be positive")

    @property
    def spacing(self) -> float:
        return self.omega_max / self.m

    @property
    def omegas(self) -> np.ndarray:
        return self.spacing * np.arange(1, self.m + 1)

    def quadrature_weights(self) -> np.ndarray:
        """Composite Simpson weights on [0, omega_max] for the nodes in ``omegas``.

        The node at omega = 0 is dropped because the radial integrand carries a
        factor omega.  Odd ``m`` falls back to the trapezoid rule.
        """
        m, d = self.m, self.spacing
        if m % 2:
            w = np.full(m, d)
            w[-1] = 0.5 * d
            return w
        w = np.where(np.arange(1, m + 1) % 2 == 1, 4.0, 2.0) * d / 3
        w[-1] = d / 3
        return w


def regular_grid_spacing(sites) -> tuple[float, float] | None:
    """(ds1, ds2) if ``sites`` are the full Cartesian product of two regular axes."""
    s = np.asarray(sites, dtype=float)
    ax = []
    for d in range(2):
        u = np.unique(np.round(s[:, d], 10))
        if u.size < 2:
            return None
        du = np.diff(u)
        if not np.allclose(du, du[0], rtol=1e-6):
            return None
        ax.append((u.size, float(du[0])))
    if ax[0][0] * ax[1][0] != s.shape[0]:
        return None
    return ax[0][1], ax[1][1]


def interpolate_to_grid(sites, x):
    """Bilinear interpolation of scattered ``x`` onto the smallest covering grid.

    Grid spacing is the median nearest-neighbor distance of ``sites``.
    """
    from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator

    s = np.asarray(sites, dtype=float)
    d, _ = cKDTree(s).query(s, k=2)
    h = float(np.median(d[:, 1]))
    lo, hi = s.min(axis=0), s.max(axis=0)
    g1 = np.arange(lo[0], hi[0] + 0.5 * h, h)
    g2 = np.arange(lo[1], hi[1] + 0.5 * h, h)
    grid = np.array([(a, b) for a in g1 for b in g2])
    vals = LinearNDInterpolator(s, x)(grid)
    miss = ~np.isfinite(vals)
    if miss.any():
        vals[miss] = NearestNDInterpolator(s, x)(grid[miss])
    return grid, vals, (h, h)


def bessel_kernel_matrices(eval_sites, grid_sites, spline: BSplineBasis, freq: FrequencyGrid, cell_area: float) -> np.ndarray:
    """Array (L, n_eval, n_grid) of smoothing kernels, one per basis function."""
    h = cdist(np.asarray(eval_sites, float), np.asarray(grid_sites, float))
    uniq, inv = np.unique(np.round(h, 12), return_inverse=True)
    w = freq.omegas
    J = bessel_j(0.0, np.outer(uniq, w))  # J_0(0) = 1 covers h = 0
    weights = (w / (2 * np.pi)) * freq.quadrature_weights() * cell_area
    B = spline(w)  # (m, L)
    K_uniq = J @ (weights[:, None] * B)  # (n_uniq, L)
    return np.moveaxis(K_uniq[inv.reshape(h.shape)], -1, 0)


def constructed_covariates_continuous(sites, x, spline: BSplineBasis, freq: FrequencyGrid | None = None, m: int = 64):
    """Kernel-smoothed copies of ``x``, one per spline basis function.

    ``x`` observed on a regular grid is used directly; otherwise it is first
    interpolated onto a covering grid.  When ``freq`` is omitted the grid
    runs up to the aliasing limit ``pi / max(ds1, ds2)`` with ``m`` points.
    """
    sites = np.asarray(sites, dtype=float)
    x = np.asarray(x, dtype=float)
    if sites.shape != (x.size, 2):
        raise ValueError("sites must be an (n, 2) array matching x")
    spacing = regular_grid_spacing(sites)
    if spacing is None:
        grid, gx, spacing = interpolate_to_grid(sites, x)
    else:
        grid, gx = sites, x
    if freq is None:
        freq = FrequencyGrid(np.pi / max(spacing), m)
    K = bessel_kernel_matrices(sites, grid, spline, freq, spacing[0] * spacing[1])
    cols = np.einsum("lij,j->il", K, gx)
    return ConstructedCovariates(cols, spline, "continuous", omega=freq.omegas)
