"""Confounded data generators, scoring and the replicated-study harness."""

from __future__ import annotations

import functools
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from ._errors import NumericalError
from .graph import LerouxParams, SpectralBasis, build_lattice_adjacency, car_sample, spectral_basis
from .mcmc import McmcConfig
from .spectral import matern_correlation_matrix

__all__ = [
    "KernelSmoother",
    "DiscreteScenario",
    "ContinuousScenario",
    "ReplicationReport",
    "MethodScore",
    "kernel_smoothing_matrix",
    "simulate_discrete",
    "simulate_continuous",
    "spectral_correlation_diagnostic",
    "spatial_average_correlation",
    "score_replication",
    "run_replication",
    "discrete_scenario",
    "continuous_scenario",
    "lattice_sites",
    "unit_square_sites",
    "scenario_checksum",
    "DISCRETE_METHODS",
    "CONTINUOUS_METHODS",
]

DISCRETE_METHODS = ("standard", "parametric", "semi_pcp", "semi_r2d2")
CONTINUOUS_METHODS = ("standard", "flexible", "parsimonious", "semiparametric")


@dataclass(frozen=True, eq=False)
class KernelSmoother:
    W: np.ndarray
    phi: float


def kernel_smoothing_matrix(sites, phi: float) -> KernelSmoother:
    """Row-normalized squared-exponential weights, self-weight included."""
    if not phi > 0:
        raise ValueError("bandwidth must be positive")
    s = np.asarray(sites, dtype=float).reshape(len(sites), -1)
    logw = -((cdist(s, s) / phi) ** 2)
    # subtract the row max (the self-weight, 0) before exponentiating
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    return KernelSmoother(w / w.sum(axis=1, keepdims=True), float(phi))


@functools.lru_cache(maxsize=8)
def _cached_smoother(kind: str, dims: tuple, phi: float) -> np.ndarray:
    sites = lattice_sites(*dims) if kind == "lattice" else unit_square_sites(dims[0])
    return kernel_smoothing_matrix(sites, phi).W


def lattice_sites(rows: int, cols: int) -> np.ndarray:
    """Unit-spaced coordinates in the row-major order of the lattice graph."""
    r, c = np.divmod(np.arange(rows * cols), cols)
    return np.column_stack([r, c]).astype(float)


def unit_square_sites(m: int) -> np.ndarray:
    g = np.linspace(0.0, 1.0, m)
    return np.array([(a, b) for a in g for b in g])


@dataclass(frozen=True)
class DiscreteScenario:
    number: int
    phi: float
    beta_xz: float
    rows: int = 40
    cols: int = 40
    sigma_x2: float = 1.7
    sigma_z2: float = 1.0
    lam: float = 0.95
    beta_x: float = 0.5
    beta_z: float = 0.5
    sigma2: float = 0.25**2

    def __post_init__(self):
        if min(self.rows, self.cols) < 1:
            raise ValueError("grid dimensions must be positive")
        if not (self.phi > 0 and self.sigma_x2 > 0 and self.sigma_z2 > 0 and self.sigma2 > 0):
            raise ValueError("scales and bandwidth must be positive")
        if not 0 <= self.lam < 1:
            raise ValueError("lambda must lie in [0, 1)")


@dataclass(frozen=True)
class ContinuousScenario:
    number: int
    phi: float
    beta_xz: float
    grid: int = 23
    sigma_x2: float = 1.0
    sigma_z2: float = 1.0
    phi_x: float = 0.1
    phi_z: float = 0.1
    nu_x: float = 0.5
    nu_z: float = 0.5
    beta_x: float = 1.0
    beta_z: float = 1.0
    sigma2: float = 0.25**2

    def __post_init__(self):
        if self.grid < 2:
            raise ValueError("grid must have at least 2 points per side")
        if not min(self.phi, self.sigma_x2, self.sigma_z2, self.phi_x, self.phi_z, self.nu_x, self.nu_z, self.sigma2) > 0:
            raise ValueError("scenario parameters must be positive")


# (bandwidth, beta_xz); the bandwidth is irrelevant when beta_xz = 0
_DISCRETE_DESIGN = {1: (1.0, 0.0), 2: (1.0, 1.0), 3: (1.0, 2.0), 4: (2.0, 1.0), 5: (2.0, 2.0)}
_CONTINUOUS_DESIGN = {1: (1 / 15, 0.0), 2: (1 / 15, 1.0), 3: (1 / 15, 2.0), 4: (2 / 15, 1.0), 5: (2 / 15, 2.0)}


def discrete_scenario(number: int, **overrides) -> DiscreteScenario:
    if number not in _DISCRETE_DESIGN:
        raise ValueError(f"discrete scenarios are 1-5, got {number}")
    phi, bxz = _DISCRETE_DESIGN[number]
    return DiscreteScenario(number, phi, bxz, **overrides)


def continuous_scenario(number: int, **overrides) -> ContinuousScenario:
    if number not in _CONTINUOUS_DESIGN:
        raise ValueError(f"continuous scenarios are 1-5, got {number}")
    phi, bxz = _CONTINUOUS_DESIGN[number]
    return ContinuousScenario(number, phi, bxz, **overrides)


def scenario_checksum() -> str:
    """Hash of the ten frozen scenario parameter sets."""
    recs = [asdict(discrete_scenario(k)) for k in range(1, 6)] + [asdict(continuous_scenario(k)) for k in range(1, 6)]
    return hashlib.sha256(json.dumps(recs, sort_keys=True).encode()).hexdigest()


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def simulate_discrete(sc: DiscreteScenario, basis: SpectralBasis | None = None, seed=None):
    """(X, Z, Y) on the rook lattice; X, Z are Leroux CAR, Z centred on a kernel smooth of X."""
    n = sc.rows * sc.cols
    basis = basis or spectral_basis(build_lattice_adjacency(sc.rows, sc.cols))
    if basis.n != n:
        raise ValueError("spectral basis does not match the scenario grid")
    rng = _rng(seed)
    x = car_sample(LerouxParams(sc.sigma_x2, sc.lam), basis, rng)
    z = car_sample(LerouxParams(sc.sigma_z2, sc.lam), basis, rng)
    if sc.beta_xz != 0:
        z = z + sc.beta_xz * (_cached_smoother("lattice", (sc.rows, sc.cols), sc.phi) @ x)
    y = sc.beta_x * x + sc.beta_z * z + np.sqrt(sc.sigma2) * rng.standard_normal(n)
    return x, z, y


@functools.lru_cache(maxsize=4)
def _continuous_factors(grid: int, nu_x, phi_x, nu_z, phi_z):
    D = cdist(unit_square_sites(grid), unit_square_sites(grid))
    out = []
    for nu, phi in ((nu_x, phi_x), (nu_z, phi_z)):
        try:
            out.append(linalg.cholesky(matern_correlation_matrix(D, nu, phi), lower=True))
        except linalg.LinAlgError as exc:
            raise NumericalError(f"Matern correlation is not positive definite: {exc}") from exc
    return tuple(out)


def simulate_continuous(sc: ContinuousScenario, seed=None):
    """(X, Z, Y) on the unit-square grid with Matern X and Z."""
    rng = _rng(seed)
    lx, lz = _continuous_factors(sc.grid, sc.nu_x, sc.phi_x, sc.nu_z, sc.phi_z)
    n = sc.grid**2
    x = np.sqrt(sc.sigma_x2) * (lx @ rng.standard_normal(n))
    z = np.sqrt(sc.sigma_z2) * (lz @ rng.standard_normal(n))
    if sc.beta_xz != 0:
        z = z + sc.beta_xz * (_cached_smoother("square", (sc.grid,), sc.phi) @ x)
    y = sc.beta_x * x + sc.beta_z * z + np.sqrt(sc.sigma2) * rng.standard_normal(n)
    return x, z, y


def spectral_correlation_diagnostic(x_reps, z_reps, basis: SpectralBasis):
    """Across-replicate Cor(X*_k, Z*_k) for every frequency; returns (omega, cor)."""
    X = np.atleast_2d(np.asarray(x_reps, dtype=float))
    Z = np.atleast_2d(np.asarray(z_reps, dtype=float))
    if X.shape != Z.shape or X.shape[0] < 2:
        raise ValueError("need at least 2 replicates of matching X and Z")
    xs = X @ basis.gamma
    zs = Z @ basis.gamma
    xs = xs - xs.mean(axis=0)
    zs = zs - zs.mean(axis=0)
    cor = (xs * zs).sum(axis=0) / np.sqrt((xs * xs).sum(axis=0) * (zs * zs).sum(axis=0))
    return np.asarray(basis.omega), cor


def spatial_average_correlation(x_reps, z_reps) -> float:
    """Location-average of the across-replicate Cor(X_i, Z_i)."""
    X = np.asarray(x_reps, dtype=float)
    Z = np.asarray(z_reps, dtype=float)
    X = X - X.mean(axis=0)
    Z = Z - Z.mean(axis=0)
    return float(np.mean((X * Z).sum(axis=0) / np.sqrt((X * X).sum(axis=0) * (Z * Z).sum(axis=0))))


# ---------------------------------------------------------------------------
# scoring


@dataclass
class MethodScore:
    method: str
    n: int
    rmse: float
    rmse_se: float
    bias: float
    bias_se: float
    sd: float
    sd_se: float
    coverage: float
    coverage_se: float


@dataclass
class ReplicationReport:
    scenario: int
    domain: str
    phi: float
    beta_xz: float
    rows: list[MethodScore]
    replicates: int
    failures: dict = field(default_factory=dict)
    runtime: float = 0.0
    records: list = field(default_factory=list)

    def row(self, method: str) -> MethodScore:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)


def score_replication(truth: float, summaries, method: str = "") -> MethodScore:
    """RMSE, bias, mean posterior SD and 95% coverage with replicate-level MC-SEs.

    ``summaries`` holds one mapping per replicate with keys mean, sd, lo95, hi95.
    """
    s = list(summaries)
    if not s:
        raise ValueError("no replicate summaries")
    est = np.array([d["mean"] for d in s], dtype=float)
    sd = np.array([d["sd"] for d in s], dtype=float)
    cov = np.array([d["lo95"] <= truth <= d["hi95"] for d in s], dtype=float)
    err = est - truth
    R = len(s)
    mse = float(np.mean(err**2))
    rmse = np.sqrt(mse)

    def se(v):
        return float(np.std(v, ddof=1) / np.sqrt(R)) if R > 1 else 0.0

    rmse_se = se(err**2) / (2 * rmse) if rmse > 0 else 0.0
    p = cov.mean()
    return MethodScore(method, R, float(rmse), float(rmse_se), float(err.mean()), se(err), float(sd.mean()), se(sd),
                       float(100 * p), float(100 * np.sqrt(p * (1 - p) / R)) if R > 1 else 0.0)


# ---------------------------------------------------------------------------
# replication harness


def _summ(samples, key="beta_x"):
    v = samples[key]
    lo, hi = np.quantile(v, [0.025, 0.975])
    return {"mean": float(v.mean()), "sd": float(v.std(ddof=1)), "lo95": float(lo), "hi95": float(hi)}


def _fit_discrete_method(method, basis, x, y, mcmc: McmcConfig, L_menu):
    from .discrete import GaussianSpectralData, fit_parsimonious_car, fit_semiparametric_gaussian, fit_standard_gaussian, select_L
    from .priors import PriorConfig

    data = GaussianSpectralData.from_spatial(basis, y, x)
    if method == "standard":
        return _summ(fit_standard_gaussian(data, PriorConfig(), mcmc)), {}
    if method == "parametric":
        return _summ(fit_parsimonious_car(data, PriorConfig(variant="parametric"), mcmc)), {}
    if method in ("semi_pcp", "semi_r2d2"):
        pr = PriorConfig(variant=method)
        sel = select_L(data, L_menu, lambda d, L: fit_semiparametric_gaussian(d, L, pr, mcmc))
        return _summ(sel.samples), {"L": sel.L, "dic": {str(k): v for k, v in sel.table.items()}}
    raise ValueError(f"unknown discrete method {method!r}")


def _fit_continuous_method(method, sites, x, y, mcmc: McmcConfig, L_menu, plugin):
    from . import continuous as C

    if method == "standard":
        fit = C.fit_standard_continuous(y, x, sites, plugin, mcmc=mcmc)
    elif method == "flexible":
        fit = C.fit_flexible_matern(y, x, sites, plugin, mcmc=mcmc)
    elif method == "parsimonious":
        fit = C.fit_parsimonious_matern(y, x, sites, plugin, mcmc=mcmc)
    elif method == "semiparametric":
        sel = C.select_L_continuous(y, x, sites, plugin, L_menu, mcmc=mcmc)
        return _summ(sel.samples), {"L": sel.L, "dic": {str(k): v for k, v in sel.table.items()}}
    else:
        raise ValueError(f"unknown continuous method {method!r}")
    return _summ(fit), {}


def _one_replicate(task):
    domain, scenario, methods, idx, seed, mcmc, L_menu = task
    ss = np.random.SeedSequence([int(seed), int(idx)])
    data_seed, *fit_seeds = ss.spawn(1 + len(methods))
    rec = {"replicate": idx, "results": {}, "errors": {}}
    if domain == "discrete":
        basis = spectral_basis(build_lattice_adjacency(scenario.rows, scenario.cols))
        x, z, y = simulate_discrete(scenario, basis, np.random.default_rng(data_seed))
    else:
        from .continuous import fit_matern_mle_x

        sites = unit_square_sites(scenario.grid)
        x, z, y = simulate_continuous(scenario, np.random.default_rng(data_seed))
        try:
            plugin = fit_matern_mle_x(x, sites, seed=int(data_seed.generate_state(1)[0]))
        except (NumericalError, ValueError) as exc:
            for m in methods:
                rec["errors"][m] = f"plug-in failed: {exc}"
            return rec
    for m, fs in zip(methods, fit_seeds):
        cfg = McmcConfig(mcmc.iterations, mcmc.burn_in, int(fs.generate_state(1)[0]))
        t0 = time.perf_counter()
        try:
            if domain == "discrete":
                summ, extra = _fit_discrete_method(m, basis, x, y, cfg, L_menu)
            else:
                summ, extra = _fit_continuous_method(m, sites, x, y, cfg, L_menu, plugin)
        except (NumericalError, ValueError, np.linalg.LinAlgError) as exc:
            rec["errors"][m] = str(exc)
            continue
        summ.update(extra)
        summ["runtime"] = time.perf_counter() - t0
        rec["results"][m] = summ
    return rec


DISCRETE_L_MENU = (1, 5, 10, 20, 30, 40)
CONTINUOUS_L_MENU = (5, 10, 20)


def max_workers(requested: int) -> int:
    cap = os.environ.get("ECAR_THREADS")
    n = max(1, int(requested))
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def run_replication(
    scenario: DiscreteScenario | ContinuousScenario,
    methods,
    replicates: int,
    parallelism: int = 1,
    seed: int = 0,
    mcmc: McmcConfig | None = None,
    L_menu=None,
    max_failure_rate: float = 0.05,
) -> ReplicationReport:
    """Simulate and fit ``replicates`` datasets; replicate ``i`` uses SeedSequence([seed, i])."""
    domain = "discrete" if isinstance(scenario, DiscreteScenario) else "continuous"
    allowed = DISCRETE_METHODS if domain == "discrete" else CONTINUOUS_METHODS
    methods = list(methods)
    if not methods or any(m not in allowed for m in methods):
        raise ValueError(f"methods must be drawn from {allowed}")
    if replicates < 1:
        raise ValueError("need at least one replicate")
    mcmc = mcmc or McmcConfig(5_000, 1_000, seed)
    if L_menu is None:
        L_menu = DISCRETE_L_MENU if domain == "discrete" else CONTINUOUS_L_MENU
    tasks = [(domain, scenario, methods, i, seed, mcmc, tuple(L_menu)) for i in range(replicates)]
    t0 = time.perf_counter()
    workers = max_workers(parallelism)
    if workers == 1:
        records = [_one_replicate(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_one_replicate, tasks))
    truth = scenario.beta_x
    rows, failures = [], {}
    for m in methods:
        ok = [r["results"][m] for r in records if m in r["results"]]
        failures[m] = replicates - len(ok)
        if failures[m] > max_failure_rate * replicates:
            errs = [r["errors"][m] for r in records if m in r["errors"]][:3]
            raise NumericalError(f"{failures[m]} of {replicates} replicates failed for {m}: {errs}")
        rows.append(score_replication(truth, ok, m))
    return ReplicationReport(scenario.number, domain, scenario.phi if scenario.beta_xz else float("nan"),
                             scenario.beta_xz, rows, replicates, failures, time.perf_counter() - t0, records)
