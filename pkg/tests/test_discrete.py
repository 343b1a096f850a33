import numpy as np
import pytest
from scipy import stats

from ecar import NumericalError
from ecar.discrete import (
    GaussianSpectralData,
    GlmData,
    fit_glm_car,
    fit_parsimonious_car,
    fit_semiparametric_gaussian,
    fit_standard_gaussian,
    gaussian_spectral_loglik,
    rho_sigma_from_tau_eta,
    select_L,
    semiparametric_covariates,
    spectral_spline,
    tau_eta_from_rho_sigma,
)
from ecar.graph import (
    LerouxParams,
    build_adjacency_from_edges,
    build_lattice_adjacency,
    car_sample,
    neighborhood_matrix,
    spectral_basis,
)
from ecar.mcmc import McmcConfig, dic
from ecar.priors import PriorConfig

from geweke import run_geweke


@pytest.fixture(scope="module")
def lattice10():
    return spectral_basis(build_lattice_adjacency(10, 10))


def spectral_model_data(basis, rng, beta_curve, lam_x=0.3, lam_z=0.9, tau2=0.5, r=0.8, beta0=1.0):
    # draw straight from the spectral model: Y*_k ~ N(beta0 M_k + beta(w_k) X*_k, tau2 (r/q_k + 1 - r))
    x = car_sample(LerouxParams(1.0, lam_x), basis, rng)
    xs = basis.gamma.T @ x
    q = 1 - lam_z + lam_z * basis.omega
    ys = beta0 * basis.col_sums + beta_curve(basis.omega) * xs + np.sqrt(tau2 * (r / q + 1 - r)) * rng.standard_normal(basis.n)
    return basis.gamma @ ys, x


# -- identification map -----------------------------------------------------


def test_tau_eta_round_trip():
    for rho, sz2 in [(0.3, 1.7), (-0.85, 0.2), (0.0, 2.0)]:
        tau, eta = tau_eta_from_rho_sigma(rho, sz2)
        rho2, sz2b = rho_sigma_from_tau_eta(tau, eta)
        assert abs(rho2 - rho) < 1e-12 and abs(sz2b - sz2) < 1e-12
    for tau, eta in [(1.5, 0.4), (0.2, -2.0)]:
        rho, sz2 = rho_sigma_from_tau_eta(tau, eta)
        assert abs(rho - np.sign(eta) * np.sqrt(eta**2 / (1 / tau + eta**2))) < 1e-12
        tau2, eta2 = tau_eta_from_rho_sigma(rho, sz2)
        assert abs(tau2 - tau) < 1e-12 and abs(eta2 - eta) < 1e-12


# -- likelihood -------------------------------------------------------------


def test_spectral_likelihood_matches_dense_on_2x2(rng):
    g = build_lattice_adjacency(2, 2)
    basis = spectral_basis(g)
    R = neighborhood_matrix(g)
    for _ in range(20):
        beta0, beta, tau2 = rng.normal(), rng.normal(), rng.uniform(0.2, 3)
        r, lam = rng.uniform(0.05, 0.95, size=2)
        x, y = rng.standard_normal(4), rng.standard_normal(4)
        Q = (1 - lam) * np.eye(4) + lam * R
        cov = tau2 * (r * np.linalg.inv(Q) + (1 - r) * np.eye(4))
        dense = stats.multivariate_normal(beta0 + beta * x, cov).logpdf(y)
        d = GaussianSpectralData.from_spatial(basis, y, x)
        q = 1 - lam + lam * d.omega
        spec = gaussian_spectral_loglik(d.y_star - beta0 * d.col_sums - beta * d.x_star, tau2 * (r / q + 1 - r))
        assert abs(spec - dense) < 1e-6


# -- standard and semi-parametric -------------------------------------------


def test_standard_and_semi_l1_define_the_same_posterior(lattice10):
    rng = np.random.default_rng(21)
    y, x = spectral_model_data(lattice10, rng, lambda w: 0.5 + 0 * w)
    d = GaussianSpectralData.from_spatial(lattice10, y, x)
    a = fit_standard_gaussian(d, mcmc=McmcConfig(20_000, 2_000, seed=1))
    b = fit_semiparametric_gaussian(d, 1, mcmc=McmcConfig(20_000, 2_000, seed=2))
    assert stats.ks_2samp(a.beta_x, b.beta_x).statistic < 0.1


def test_fixed_seed_is_deterministic(lattice10):
    rng = np.random.default_rng(4)
    y, x = spectral_model_data(lattice10, rng, lambda w: 0.5 + 0 * w)
    d = GaussianSpectralData.from_spatial(lattice10, y, x)
    cfg = McmcConfig(600, 100, seed=9)
    np.testing.assert_array_equal(fit_standard_gaussian(d, mcmc=cfg).draws, fit_standard_gaussian(d, mcmc=cfg).draws)
    covs = semiparametric_covariates(lattice10, x, 5)
    np.testing.assert_array_equal(fit_semiparametric_gaussian(d, covs, mcmc=cfg).draws,
                                  fit_semiparametric_gaussian(d, covs, mcmc=cfg).draws)
    np.testing.assert_array_equal(fit_parsimonious_car(d, mcmc=cfg).draws, fit_parsimonious_car(d, mcmc=cfg).draws)


def test_retained_count_and_names(lattice10):
    rng = np.random.default_rng(5)
    y, x = spectral_model_data(lattice10, rng, lambda w: 0.5 + 0 * w)
    d = GaussianSpectralData.from_spatial(lattice10, y, x)
    s = fit_semiparametric_gaussian(d, 5, mcmc=McmcConfig(300, 100, seed=1))
    assert s.n_draws == 200
    for name in ("beta0", "b1", "b5", "sigma_b2", "tau2", "r", "lambda_z", "sigma_z2", "sigma2", "beta_x"):
        assert name in s
    curve = s.beta_curve()
    assert curve.shape == (200, 100)
    np.testing.assert_allclose(curve[:, -1], s.beta_x, atol=1e-12)


def test_constant_curve_recovered_at_every_frequency(lattice10):
    rng = np.random.default_rng(6)
    y, x = spectral_model_data(lattice10, rng, lambda w: 0.5 + 0 * w)
    d = GaussianSpectralData.from_spatial(lattice10, y, x)
    s = fit_semiparametric_gaussian(d, 5, mcmc=McmcConfig(6_000, 1_000, seed=3))
    curve = s.beta_curve()
    assert np.all(np.abs(curve.mean(axis=0) - 0.5) < 3 * curve.std(axis=0))


def test_semi_tracks_frequency_varying_effect(lattice10):
    # large effect at low frequency, 0.5 at high frequency
    rng = np.random.default_rng(7)
    y, x = spectral_model_data(lattice10, rng, lambda w: 0.5 + 1.5 * np.clip(1 - w / 5, 0, None), tau2=0.1)
    d = GaussianSpectralData.from_spatial(lattice10, y, x)
    semi = fit_semiparametric_gaussian(d, 5, mcmc=McmcConfig(6_000, 1_000, seed=3))
    std = fit_standard_gaussian(d, mcmc=McmcConfig(6_000, 1_000, seed=3))
    assert abs(semi.beta_x.mean() - 0.5) < abs(std.beta_x.mean() - 0.5)


def test_geweke_joint_distribution():
    pvals = run_geweke(side=5, L=3, n_prior=10_000, n_chain=20_000, seed=11)
    assert all(p > 0.01 for p in pvals.values()), pvals


# -- parsimonious bivariate CAR ---------------------------------------------


def test_psi_near_zero_without_confounding(lattice10):
    rng = np.random.default_rng(8)
    y, x = spectral_model_data(lattice10, rng, lambda w: 0.5 + 0 * w, lam_x=0.3, lam_z=0.9)
    d = GaussianSpectralData.from_spatial(lattice10, y, x)
    s = fit_parsimonious_car(d, mcmc=McmcConfig(8_000, 2_000, seed=2))
    assert abs(s["psi"].mean()) < 2 * s["psi"].std()
    assert np.all(s["lambda_x"] < s["lambda_z"])
    assert np.all(np.abs(s["rho"]) < 1) and np.all(s["tau"] > 0)


# -- selection --------------------------------------------------------------


def test_select_single_candidate(lattice10):
    rng = np.random.default_rng(9)
    y, x = spectral_model_data(lattice10, rng, lambda w: 0.5 + 0 * w)
    d = GaussianSpectralData.from_spatial(lattice10, y, x)
    cfg = McmcConfig(500, 100, seed=1)
    res = select_L(d, [5], lambda data, L: fit_semiparametric_gaussian(data, L, mcmc=cfg))
    assert res.L == 5 and list(res.table) == [5]
    assert res.table[5] == dic(res.samples).dic


def test_select_constant_truth_prefers_small_basis():
    basis = spectral_basis(build_lattice_adjacency(8, 8))
    rng = np.random.default_rng(10)
    cfg = McmcConfig(2_000, 500, seed=1)
    hits = 0
    for _ in range(30):
        y, x = spectral_model_data(basis, rng, lambda w: 0.5 + 0 * w)
        d = GaussianSpectralData.from_spatial(basis, y, x)
        res = select_L(d, [1, 5, 10, 20], lambda data, L: fit_semiparametric_gaussian(data, L, mcmc=cfg))
        hits += res.L in (1, 5)
    assert hits >= 21


def test_select_annotates_failing_L(lattice10):
    rng = np.random.default_rng(11)
    y, x = spectral_model_data(lattice10, rng, lambda w: 0.5 + 0 * w)
    d = GaussianSpectralData.from_spatial(lattice10, y, x)

    def fit(data, L):
        raise NumericalError("boom", 7)

    with pytest.raises(NumericalError, match="L=3"):
        select_L(d, [3], fit)
    with pytest.raises(ValueError):
        select_L(d, [], fit)


# -- count models -----------------------------------------------------------


def test_poisson_degenerate_latent_field_reproduces_truth():
    basis = spectral_basis(build_lattice_adjacency(5, 5))
    rng = np.random.default_rng(12)
    x = rng.standard_normal(25)
    theta = -0.3 + 0.2 * x + 0.1 * rng.standard_normal(25)
    E = np.full(25, 1e8)
    y = rng.poisson(E * np.exp(theta))
    s = fit_glm_car(GlmData(y, x, E), basis, 1, mcmc=McmcConfig(3_000, 1_000, seed=1))
    assert np.max(np.abs(s.extras["theta_mean"] - theta)) < 1e-3


def test_poisson_recovers_coefficients():
    basis = spectral_basis(build_lattice_adjacency(20, 20))
    rng = np.random.default_rng(13)
    hits = total = 0
    for rep in range(10):
        x = car_sample(LerouxParams(1.0, 0.9), basis, rng)
        theta = car_sample(LerouxParams(0.2, 0.8, mu=-0.2 + 0.3 * x), basis, rng)
        y = rng.poisson(20.0 * np.exp(theta))
        s = fit_glm_car(GlmData(y, x, np.full(400, 20.0)), basis, 1, mcmc=McmcConfig(3_000, 1_000, seed=rep))
        for name, truth in (("beta0", -0.2), ("b1", 0.3)):
            total += 1
            hits += abs(s[name].mean() - truth) < 3 * s[name].std()
    assert hits >= 0.9 * total


def test_negbin_shared_dispersion():
    g = build_lattice_adjacency(15, 15)
    basis = spectral_basis(g)
    rng = np.random.default_rng(14)
    x = car_sample(LerouxParams(1.0, 0.9), basis, rng)
    theta = car_sample(LerouxParams(0.1, 0.8, mu=0.5 + 0.3 * x), basis, rng)
    E = np.full(225, 30.0)
    size = 5.0
    mu = E * np.exp(theta)
    y = rng.negative_binomial(size, size / (size + mu))
    s = fit_glm_car(GlmData(y, x, E, family="negbin"), basis, 1, mcmc=McmcConfig(4_000, 1_000, seed=2), graph=g)
    assert abs(s["log_r"].mean() - np.log(size)) < 3 * s["log_r"].std()
    assert abs(s["beta_x"].mean() - 0.3) < 3 * s["beta_x"].std()


def test_glm_parametric_and_semi_run():
    g = build_lattice_adjacency(6, 6)
    basis = spectral_basis(g)
    rng = np.random.default_rng(15)
    x = rng.standard_normal(36)
    y = rng.poisson(10 * np.exp(0.2 * x))
    data = GlmData(y, x, np.full(36, 10.0))
    cfg = McmcConfig(300, 100, seed=1)
    p = fit_glm_car(data, basis, "parametric", mcmc=cfg, graph=g)
    assert {"beta_x", "psi", "rho", "lambda_x"} <= set(p.names)
    covs = semiparametric_covariates(basis, x, 5)
    s = fit_glm_car(data, basis, covs, prior=PriorConfig(variant="semi_pcp"), mcmc=cfg)
    assert s.beta_curve().shape == (200, 36)
    nb = fit_glm_car(GlmData(y, x, np.full(36, 10.0), family="negbin"), basis, 1, mcmc=cfg, per_region_dispersion=True)
    assert "log_r36" in nb


# -- validation -------------------------------------------------------------


def test_glm_input_validation():
    with pytest.raises(ValueError):
        GlmData(np.array([1, -1]), np.zeros(2), np.ones(2))
    with pytest.raises(ValueError):
        GlmData(np.array([1, 2]), np.zeros(2), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        GlmData(np.array([1.5, 2]), np.zeros(2), np.ones(2))
    with pytest.raises(ValueError):
        GlmData(np.array([1, 2]), np.zeros(2))
    with pytest.raises(ValueError):
        GlmData(np.array([1, 2]), np.zeros(2), np.ones(2), family="binomial")


def test_gaussian_input_validation(lattice10):
    with pytest.raises(ValueError):
        GaussianSpectralData.from_spatial(lattice10, np.zeros(99), np.zeros(100))
    with pytest.raises(ValueError):
        GaussianSpectralData.from_spatial(lattice10, np.full(100, np.nan), np.zeros(100))
    d = GaussianSpectralData.from_spatial(lattice10, np.zeros(100), np.zeros(100))
    with pytest.raises(ValueError):
        fit_semiparametric_gaussian(d, 0)


def test_disconnected_graph_rejected():
    g = build_adjacency_from_edges(4, [(1, 2), (3, 4)])
    basis = spectral_basis(g)
    with pytest.raises(ValueError, match="connected"):
        GaussianSpectralData.from_spatial(basis, np.zeros(4), np.zeros(4))
    with pytest.raises(ValueError, match="connected"):
        fit_glm_car(GlmData(np.ones(4), np.zeros(4), np.ones(4)), basis)


def test_spline_spans_observed_frequencies(lattice10):
    sp = spectral_spline(lattice10.omega, 10)
    assert sp.contains([lattice10.omega[0], lattice10.omega[-1]])
