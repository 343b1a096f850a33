from dataclasses import asdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecar.graph import build_lattice_adjacency, spectral_basis
from ecar.mcmc import McmcConfig
from ecar.simulation import (
    continuous_scenario,
    discrete_scenario,
    kernel_smoothing_matrix,
    run_replication,
    scenario_checksum,
    score_replication,
    simulate_continuous,
    simulate_discrete,
    spatial_average_correlation,
    spectral_correlation_diagnostic,
    unit_square_sites,
)

FROZEN_CHECKSUM = "c20998481886dda53936df032764c75dea55f03137b5771e52675441dd2e8d22"


# -- kernel smoother --------------------------------------------------------


def test_smoother_trivial_cases():
    np.testing.assert_array_equal(kernel_smoothing_matrix([[0.0, 0.0]], 1.0).W, [[1.0]])
    W = kernel_smoothing_matrix(unit_square_sites(4), 1e-4).W
    np.testing.assert_allclose(W, np.eye(16), atol=1e-12)
    with pytest.raises(ValueError):
        kernel_smoothing_matrix([[0.0]], 0.0)


def test_smoother_hand_computation():
    W = kernel_smoothing_matrix(np.array([[0.0], [1.0], [2.0]]), 1.0).W
    e1, e4 = np.exp(-1.0), np.exp(-4.0)
    expect = np.array([[1, e1, e4], [e1, 1, e1], [e4, e1, 1]])
    expect /= expect.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(W, expect, atol=1e-15)


@settings(max_examples=50)
@given(st.integers(2, 30), st.floats(0.05, 5.0), st.integers(0, 10_000))
def test_smoother_row_stochastic_under_any_order(n, phi, seed):
    rng = np.random.default_rng(seed)
    s = rng.uniform(0, 5, size=(n, 2))
    perm = rng.permutation(n)
    W = kernel_smoothing_matrix(s, phi).W
    Wp = kernel_smoothing_matrix(s[perm], phi).W
    assert np.all(W >= 0)
    np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(Wp, W[np.ix_(perm, perm)], atol=1e-14)


# -- scenarios --------------------------------------------------------------


def test_scenarios_are_frozen():
    assert scenario_checksum() == FROZEN_CHECKSUM
    d = [asdict(discrete_scenario(k)) for k in range(1, 6)]
    assert [(s["phi"], s["beta_xz"]) for s in d[1:]] == [(1.0, 1.0), (1.0, 2.0), (2.0, 1.0), (2.0, 2.0)]
    assert d[0]["beta_xz"] == 0.0
    for s in d:
        assert (s["rows"], s["cols"], s["sigma_x2"], s["sigma_z2"], s["lam"]) == (40, 40, 1.7, 1.0, 0.95)
        assert (s["beta_x"], s["beta_z"], s["sigma2"]) == (0.5, 0.5, 0.0625)
    c = [asdict(continuous_scenario(k)) for k in range(1, 6)]
    assert [(s["phi"], s["beta_xz"]) for s in c[1:]] == [(1 / 15, 1.0), (1 / 15, 2.0), (2 / 15, 1.0), (2 / 15, 2.0)]
    for s in c:
        assert s["grid"] ** 2 == 529
        assert (s["phi_x"], s["phi_z"], s["nu_x"], s["nu_z"], s["beta_x"], s["beta_z"]) == (0.1, 0.1, 0.5, 0.5, 1.0, 1.0)
    with pytest.raises(ValueError):
        discrete_scenario(6)
    with pytest.raises(ValueError):
        continuous_scenario(0)


def test_simulators_are_seeded():
    sc = discrete_scenario(3, rows=6, cols=6)
    a, b = simulate_discrete(sc, seed=5), simulate_discrete(sc, seed=5)
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)
    cs = continuous_scenario(3, grid=8)
    np.testing.assert_array_equal(simulate_continuous(cs, seed=1)[2], simulate_continuous(cs, seed=1)[2])


def test_discrete_independent_design_has_flat_spectral_correlation():
    sc = discrete_scenario(1, rows=10, cols=10)
    basis = spectral_basis(build_lattice_adjacency(10, 10))
    rng = np.random.default_rng(1)
    draws = [simulate_discrete(sc, basis, rng) for _ in range(200)]
    _, cor = spectral_correlation_diagnostic([d[0] for d in draws], [d[1] for d in draws], basis)
    assert np.all(np.abs(cor) < 3 / np.sqrt(200))


def test_bandwidth_controls_high_frequency_leakage():
    basis = spectral_basis(build_lattice_adjacency(40, 40))
    top = basis.omega >= np.quantile(basis.omega, 0.75)
    rng = np.random.default_rng(2)
    out = {}
    for k in (3, 5):
        sc = discrete_scenario(k)
        draws = [simulate_discrete(sc, basis, rng) for _ in range(500)]
        _, cor = spectral_correlation_diagnostic([d[0] for d in draws], [d[1] for d in draws], basis)
        out[k] = cor[top].mean()
    assert out[5] < 0.1
    assert out[3] > out[5]


def test_continuous_independent_design():
    sc = continuous_scenario(1, grid=11)
    rng = np.random.default_rng(3)
    c = np.array([np.corrcoef(*simulate_continuous(sc, rng)[:2])[0, 1] for _ in range(200)])
    assert abs(c.mean()) < 3 * c.std(ddof=1) / np.sqrt(200)


def test_continuous_variogram_matches_exponential_model():
    # 11 x 11 grid: spacing 0.1, so lag 0.2 is two steps along a row or column
    sc = continuous_scenario(1, grid=11)
    rng = np.random.default_rng(4)
    g = []
    for _ in range(200):
        x = simulate_continuous(sc, rng)[0].reshape(11, 11)
        d = np.concatenate([(x[:, 2:] - x[:, :-2]).ravel(), (x[2:, :] - x[:-2, :]).ravel()])
        g.append(0.5 * np.mean(d**2))
    g = np.array(g)
    assert abs(g.mean() - (1 - np.exp(-2))) < 3 * g.std(ddof=1) / np.sqrt(g.size)


def test_spatial_average_correlation_of_identical_fields():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((50, 9))
    assert spatial_average_correlation(x, x) == pytest.approx(1.0)
    assert spatial_average_correlation(x, -2 * x) == pytest.approx(-1.0)


# -- scoring ----------------------------------------------------------------


def test_score_exact_estimates():
    s = score_replication(0.5, [{"mean": 0.5, "sd": 0.1, "lo95": 0.4, "hi95": 0.6}] * 4)
    assert s.rmse == 0 and s.bias == 0 and s.coverage == 100.0 and s.coverage_se == 0.0


def test_score_hand_computed():
    summ = [
        {"mean": 1.1, "sd": 0.2, "lo95": 0.9, "hi95": 1.3},
        {"mean": 0.8, "sd": 0.1, "lo95": 0.7, "hi95": 0.9},
        {"mean": 1.0, "sd": 0.3, "lo95": 0.5, "hi95": 1.5},
        {"mean": 1.3, "sd": 0.2, "lo95": 1.05, "hi95": 1.6},
    ]
    s = score_replication(1.0, summ, "m")
    err = np.array([0.1, -0.2, 0.0, 0.3])
    assert s.bias == pytest.approx(err.mean())
    assert s.rmse == pytest.approx(np.sqrt(np.mean(err**2)))
    assert s.sd == pytest.approx(0.2)
    assert s.coverage == 50.0 and s.coverage_se == pytest.approx(100 * np.sqrt(0.25 / 4))
    assert s.bias_se == pytest.approx(err.std(ddof=1) / 2)
    assert s.rmse_se > 0 and s.sd_se > 0
    with pytest.raises(ValueError):
        score_replication(1.0, [])


# -- replication harness ----------------------------------------------------

SMALL = dict(rows=6, cols=6)
QUICK = McmcConfig(300, 100, 0)


def test_single_replicate_report_equals_its_scores():
    rep = run_replication(discrete_scenario(2, **SMALL), ["standard"], 1, mcmc=QUICK, seed=3)
    r = rep.records[0]["results"]["standard"]
    row = rep.row("standard")
    assert row.bias == pytest.approx(r["mean"] - 0.5) and row.rmse == pytest.approx(abs(r["mean"] - 0.5))
    assert row.sd == r["sd"] and row.n == 1


def test_parallel_and_serial_reports_identical():
    sc = discrete_scenario(4, **SMALL)
    a = run_replication(sc, ["standard", "semi_pcp"], 4, parallelism=1, mcmc=QUICK, seed=9, L_menu=(1, 5))
    b = run_replication(sc, ["standard", "semi_pcp"], 4, parallelism=2, mcmc=QUICK, seed=9, L_menu=(1, 5))
    assert a.rows == b.rows
    for ra, rb in zip(a.records, b.records):
        assert ra["results"].keys() == rb["results"].keys()
        for m in ra["results"]:
            assert {k: v for k, v in ra["results"][m].items() if k != "runtime"} == \
                   {k: v for k, v in rb["results"][m].items() if k != "runtime"}


def test_seed_streams_are_independent():
    sc = discrete_scenario(1, **SMALL)
    R = 40
    a = run_replication(sc, ["standard"], R, mcmc=QUICK, seed=1)
    b = run_replication(sc, ["standard"], R, mcmc=QUICK, seed=2)
    ea = [r["results"]["standard"]["mean"] for r in a.records]
    eb = [r["results"]["standard"]["mean"] for r in b.records]
    assert abs(np.corrcoef(ea, eb)[0, 1]) < 3 / np.sqrt(R)


def test_continuous_replication_runs():
    rep = run_replication(continuous_scenario(2, grid=8), ["standard"], 2, mcmc=QUICK, seed=1)
    assert rep.domain == "continuous" and rep.row("standard").n == 2


def test_replication_argument_errors():
    with pytest.raises(ValueError):
        run_replication(discrete_scenario(1, **SMALL), ["flexible"], 1)
    with pytest.raises(ValueError):
        run_replication(discrete_scenario(1, **SMALL), ["standard"], 0)
