"""Acceptance criteria at their pinned tolerances.

Each test prints one ``criterion k: PASS|FAIL`` line (also collected in the
terminal summary).  The replication studies are expensive: roughly 1.5 h on
one core at the default replicate counts.  ``ECAR_ACC_DISCRETE_REPS`` and
``ECAR_ACC_CONTINUOUS_REPS`` shrink them for smoke runs only.
"""

import functools
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from ecar.graph import build_lattice_adjacency, spectral_basis
from ecar.mcmc import McmcConfig
from ecar.simulation import (
    continuous_scenario,
    discrete_scenario,
    run_replication,
    simulate_discrete,
    spatial_average_correlation,
    spectral_correlation_diagnostic,
)

from geweke import run_geweke

DISCRETE_REPS = int(os.environ.get("ECAR_ACC_DISCRETE_REPS", 100))
CONTINUOUS_REPS = int(os.environ.get("ECAR_ACC_CONTINUOUS_REPS", 50))
CHAIN = McmcConfig(5_000, 1_000, 0)
TESTS = Path(__file__).parent


@functools.lru_cache(maxsize=None)
def discrete_study(number: int, method: str):
    return run_replication(discrete_scenario(number), [method], DISCRETE_REPS, seed=1000 + number, mcmc=CHAIN).row(method)


@functools.lru_cache(maxsize=None)
def continuous_study(number: int, methods: tuple):
    return run_replication(continuous_scenario(number), list(methods), CONTINUOUS_REPS, seed=2000 + number, mcmc=CHAIN)


def fmt(row) -> str:
    return f"{row.method}: bias {row.bias:+.4f} ({row.bias_se:.4f}) cov {row.coverage:.1f} ({row.coverage_se:.1f})"


def test_criterion_1_no_confounding(acceptance_report):
    std, par = discrete_study(1, "standard"), discrete_study(1, "parametric")
    ok = all(abs(r.bias) <= 0.01 and 90 <= r.coverage <= 99 for r in (std, par))
    assert acceptance_report(1, ok, f"{fmt(std)}; {fmt(par)}")


def test_criterion_2_smooth_strong_confounding(acceptance_report):
    std, par, semi = (discrete_study(5, m) for m in ("standard", "parametric", "semi_pcp"))
    ok = (abs(std.bias - 0.087) <= 0.02 and std.coverage <= 5
          and abs(par.bias) <= 0.02 and par.coverage >= 88
          and semi.coverage >= 88)
    assert acceptance_report(2, ok, f"{fmt(std)}; {fmt(par)}; {fmt(semi)}")


def test_criterion_3_rough_confounding(acceptance_report):
    parts, ok = [], True
    for k in (2, 3):
        par, semi = discrete_study(k, "parametric"), discrete_study(k, "semi_pcp")
        ok &= par.bias >= 0.10 and par.coverage <= 10
        ok &= abs(semi.bias) <= 0.03 and semi.coverage >= 88
        parts.append(f"S{k} {fmt(par)}; {fmt(semi)}")
    assert acceptance_report(3, ok, " | ".join(parts))


def test_criterion_4_continuous_rough_confounding(acceptance_report):
    rep = continuous_study(3, ("standard", "parsimonious", "semiparametric"))
    std, par, semi = rep.row("standard"), rep.row("parsimonious"), rep.row("semiparametric")
    ok = (abs(std.bias - 0.172) <= 0.03 and std.coverage <= 20
          and par.bias <= -0.5 and par.coverage <= 10
          and abs(semi.bias) <= 0.04 and semi.coverage >= 85)
    assert acceptance_report(4, ok, f"{fmt(std)}; {fmt(par)}; {fmt(semi)}")


def test_criterion_5_spectral_correlation_figure(acceptance_report):
    basis = spectral_basis(build_lattice_adjacency(40, 40))
    top = basis.omega >= np.quantile(basis.omega, 0.75)
    targets = {2: 0.62, 3: 0.80, 4: 0.46, 5: 0.63}
    avg, high = {}, {}
    for k in targets:
        rng = np.random.default_rng(3000 + k)
        draws = [simulate_discrete(discrete_scenario(k), basis, rng) for _ in range(200)]
        X = np.array([d[0] for d in draws])
        Z = np.array([d[1] for d in draws])
        avg[k] = spatial_average_correlation(X, Z)
        high[k] = float(spectral_correlation_diagnostic(X, Z, basis)[1][top].mean())
    ok = all(abs(avg[k] - t) <= 0.05 for k, t in targets.items())
    # wide bandwidth: correlation confined to low frequencies; narrow bandwidth leaks upward
    ok &= high[4] < 0.1 and high[5] < 0.1 and high[3] > high[5] and high[2] > high[4]
    detail = ", ".join(f"S{k} avg {avg[k]:.3f} (target {t}) top-quartile {high[k]:.3f}" for k, t in targets.items())
    assert acceptance_report(5, ok, detail)


PROPERTY_TESTS = [
    "test_graph.py::test_basis_orthonormal_and_reconstructs",
    "test_graph.py::test_graph_fourier_roundtrip",
    "test_graph.py::test_car_density_matches_dense",
    "test_basis.py::test_discrete_partition_transfer",
    "test_basis.py::test_discrete_rotation_invariance",
    "test_spectral.py::test_pd_checker_against_brute_force",
    "test_spectral.py::test_pd_checker_and_tau2_consistency",
    "test_spectral.py::test_alpha_car_examples",
    "test_spectral.py::test_tau2_car_examples",
    "test_spectral.py::test_alpha_parameterizations_agree",
    "test_discrete.py::test_tau_eta_round_trip",
    "test_basis.py::test_bessel_values",
    "test_basis.py::test_quadrature_convergence",
    "test_basis.py::test_matern_oracle",
]


def test_criterion_6_property_suite(acceptance_report):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *PROPERTY_TESTS],
                          cwd=TESTS, capture_output=True, text=True)
    elapsed = time.perf_counter() - t0
    last = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and elapsed < 300
    assert acceptance_report(6, ok, f"{last} in {elapsed:.0f}s"), proc.stdout[-3000:]


def test_criterion_7_sampler_correctness(acceptance_report):
    pvals = run_geweke(side=5, L=3, n_prior=20_000, n_chain=30_000, seed=7)
    sc = discrete_scenario(3, rows=10, cols=10)
    cfg = McmcConfig(1_000, 200, 0)
    serial = run_replication(sc, ["standard", "semi_pcp"], 4, parallelism=1, seed=5, mcmc=cfg, L_menu=(1, 5))
    parallel = run_replication(sc, ["standard", "semi_pcp"], 4, parallelism=4, seed=5, mcmc=cfg, L_menu=(1, 5))
    same = serial.rows == parallel.rows
    ok = all(p > 0.01 for p in pvals.values()) and same
    detail = "Geweke p: " + ", ".join(f"{k} {v:.3f}" for k, v in pvals.items()) + f"; serial == parallel: {same}"
    assert acceptance_report(7, ok, detail)


def test_criterion_8_lip_cancer(acceptance_report):
    root = os.environ.get("ECAR_LIPCANCER_DIR")
    if not root:
        acceptance_report(8, None, "set ECAR_LIPCANCER_DIR to a folder with lipcancer.csv and lipcancer_edges.csv")
        pytest.skip("lip-cancer data not available")
    from ecar.discrete import GlmData, fit_glm_car, select_L
    from ecar.graph import build_adjacency_from_edges
    from ecar.io import read_edge_list, read_region_csv
    from ecar.priors import PriorConfig

    data = read_region_csv(Path(root) / "lipcancer.csv")
    graph = build_adjacency_from_edges(data.n, read_edge_list(Path(root) / "lipcancer_edges.csv"))
    basis = spectral_basis(graph)
    glm = GlmData(data.y, data.x, data.offset)
    cfg = McmcConfig(25_000, 5_000, 1)
    std = fit_glm_car(glm, basis, 1, mcmc=cfg, graph=graph)
    rr = np.exp(std.beta_x)
    lo, hi = np.quantile(rr, [0.025, 0.975])
    prior = PriorConfig(variant="semi_pcp")
    sel = select_L(glm, [1, 5, 10], lambda d, L: fit_glm_car(d, basis, L, prior=prior, mcmc=cfg, graph=graph))
    curve = np.exp(sel.samples.beta_curve().mean(axis=0))
    w = basis.omega
    top = np.abs(curve[w >= np.quantile(w, 0.9)] - 1).mean()
    bottom = np.abs(curve[w <= np.quantile(w, 0.1)] - 1).mean()
    ok = rr.mean() > 1 and lo > 1 and top < bottom
    detail = f"exp(beta_x) {rr.mean():.3f} ({lo:.3f}, {hi:.3f}); semi L={sel.L} |RR-1| top decile {top:.3f} vs bottom {bottom:.3f}"
    assert acceptance_report(8, ok, detail)
