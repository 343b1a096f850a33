"""Command-line front end: ``ecar fit | simulate | replicate | basis``.

Exit status is 0 on success, 2 for invalid input or flags and 3 when a
sampler or optimizer fails numerically.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from ._errors import NumericalError
from .io import read_edge_list, read_region_csv, write_csv, write_json, write_manifest
from .mcmc import McmcConfig, PosteriorSamples, dic, posterior_summary

EXIT_USAGE = 2
EXIT_NUMERIC = 3

PRIOR_VARIANTS = {"pcp": "semi_pcp", "r2d2": "semi_r2d2"}


class UsageError(ValueError):
    pass


def _parse_menu(text: str | None) -> tuple[int, ...] | None:
    if text is None:
        return None
    try:
        vals = tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise UsageError(f"--L-menu must be comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise UsageError("--L-menu values must be positive")
    return vals


def _mcmc(args, seed=None) -> McmcConfig:
    if args.burn_in >= args.iterations:
        raise UsageError("--burn-in must be smaller than --iterations")
    return McmcConfig(args.iterations, args.burn_in, args.seed if seed is None else seed)


def _add_mcmc(p, iterations=25_000, burn_in=5_000):
    p.add_argument("--iterations", type=int, default=iterations)
    p.add_argument("--burn-in", type=int, default=burn_in)
    p.add_argument("--seed", type=int, default=0)


# ---------------------------------------------------------------------------
# fit


def _split_rhat(chains: list[np.ndarray]) -> np.ndarray:
    """Split-chain potential scale reduction per column."""
    halves = []
    for c in chains:
        h = c.shape[0] // 2
        halves += [c[:h], c[h: 2 * h]]
    m = np.stack(halves)  # (chains, draws, params)
    n = m.shape[1]
    w = m.var(axis=1, ddof=1).mean(axis=0)
    b = n * m.mean(axis=1).var(axis=0, ddof=1)
    var = (n - 1) / n * w + b / n
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(np.where(w > 0, var / w, 1.0))


def _pool(fits: list[PosteriorSamples]) -> PosteriorSamples:
    if len(fits) == 1:
        return fits[0]
    f0 = fits[0]
    dev = np.concatenate([f.deviance for f in fits]) if f0.deviance is not None else None
    d_bar = float(np.mean([f.deviance_at_mean for f in fits])) if f0.deviance_at_mean is not None else None
    return PosteriorSamples(np.vstack([f.draws for f in fits]), f0.names, dict(f0.meta, chains=len(fits)), dev, d_bar,
                            f0.omega, f0.curve_basis, f0.curve_params, f0.extras)


def _parametric_curve(fit: PosteriorSamples) -> np.ndarray:
    omega = fit.omega
    qx = 1 - fit["lambda_x"][:, None] + fit["lambda_x"][:, None] * omega
    qz = 1 - fit["lambda_z"][:, None] + fit["lambda_z"][:, None] * omega
    return fit["beta_x"][:, None] + fit["psi"][:, None] * np.sqrt(qx / qz)


def _curve_rows(fit: PosteriorSamples):
    if fit.omega is None:
        return None
    curve = fit.beta_curve()
    if curve is None and "psi" in fit:
        curve = _parametric_curve(fit)
    if curve is None:
        return None
    lo, hi = np.quantile(curve, [0.025, 0.975], axis=0)
    return list(zip(fit.omega, curve.mean(axis=0), lo, hi))


def _fit_once(args, data, seed, L):
    from .priors import PriorConfig

    mcmc = _mcmc(args, seed)
    variant = PRIOR_VARIANTS[args.prior] if args.method == "semiparametric" else (
        "parametric" if args.method == "parametric" else "standard")
    prior = PriorConfig(variant=variant, pcp_U=args.pcp_u, normalize_spatial=args.normalize_spatial)
    if args.domain == "continuous":
        from . import continuous as C

        plugin = args._plugin
        if args.method == "standard":
            return C.fit_standard_continuous(data.y, data.x, data.sites, plugin, prior, mcmc)
        if args.method == "parametric":
            fn = C.fit_flexible_matern if args.matern == "flexible" else C.fit_parsimonious_matern
            return fn(data.y, data.x, data.sites, plugin, prior, mcmc)
        covs = C.continuous_covariates(data.sites, data.x, L)
        return C.fit_semiparametric_continuous(data.y, data.x, data.sites, covs, plugin, prior, mcmc)

    from .discrete import GaussianSpectralData, GlmData, fit_glm_car, fit_parsimonious_car, fit_semiparametric_gaussian, fit_standard_gaussian

    basis, graph = args._basis, args._graph
    if args.family == "gaussian":
        sd = GaussianSpectralData.from_spatial(basis, data.y, data.x, data.covariates)
        if args.method == "standard":
            return fit_standard_gaussian(sd, prior, mcmc)
        if args.method == "parametric":
            return fit_parsimonious_car(sd, prior, mcmc)
        return fit_semiparametric_gaussian(sd, L, prior, mcmc)
    gd = GlmData(data.y, data.x, data.offset, data.covariates, args.family)
    covs = {"standard": 1, "parametric": "parametric"}.get(args.method, L)
    return fit_glm_car(gd, basis, covs, prior, mcmc, graph, args.per_region_dispersion)


def _fit_chains(args, data, L):
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(args.seed).spawn(args.chains)]
    if args.chains == 1:
        seeds = [args.seed]
    fits = [_fit_once(args, data, s, L) for s in seeds]
    return _pool(fits), fits, seeds


def cmd_fit(args) -> int:
    from .graph import build_adjacency_from_edges, spectral_basis

    if args.family != "gaussian" and args.domain != "discrete":
        raise UsageError("count families require --domain discrete")
    if args.domain == "continuous" and args.method == "parametric" and args.family != "gaussian":
        raise UsageError("continuous fits are Gaussian only")
    if args.chains < 1:
        raise UsageError("--chains must be positive")
    menu = _parse_menu(args.L_menu)
    _mcmc(args)
    data = read_region_csv(args.data)
    inputs = [args.data]
    if args.domain == "discrete":
        if args.adjacency is None:
            raise UsageError("--adjacency is required for --domain discrete")
        graph = build_adjacency_from_edges(data.n, read_edge_list(args.adjacency))
        args._graph, args._basis = graph, spectral_basis(graph)
        inputs.append(args.adjacency)
    else:
        if data.sites is None:
            raise UsageError("continuous data need site columns s1 and s2")
        from .continuous import fit_matern_mle_x

        args._plugin = fit_matern_mle_x(data.x, data.sites, seed=args.seed)
    if args.family != "gaussian" and data.offset is None:
        raise UsageError("count families need an offset column")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    dic_table = None
    if args.method == "semiparametric":
        candidates = menu or (_default_menu(args.domain))
        fits = {}
        for L in dict.fromkeys(candidates):
            fits[L] = _fit_chains(args, data, L)
        dic_table = {L: dic(f[0]) for L, f in fits.items()}
        L = min(dic_table, key=lambda k: dic_table[k].dic)
        pooled, chains, seeds = fits[L]
    else:
        L = None
        pooled, chains, seeds = _fit_chains(args, data, None)

    summary = posterior_summary(pooled)
    curve = summary.pop("beta_curve", None)
    result = {
        "model": pooled.meta.get("model"),
        "family": args.family,
        "domain": args.domain,
        "L": L,
        "parameters": summary,
        "dic": asdict(dic(pooled)),
        "diagnostics": {"runtime": time.perf_counter() - t0, "chains": args.chains, "retained_per_chain": chains[0].n_draws},
    }
    if args.domain == "continuous":
        result["plugin"] = asdict(args._plugin)
        if "collinearity" in pooled.extras:
            result["diagnostics"]["collinearity"] = pooled.extras["collinearity"]
    if args.chains > 1:
        result["diagnostics"]["rhat"] = dict(zip(pooled.names, _split_rhat([f.draws for f in chains])))
    outputs = []
    rows = _curve_rows(pooled)
    if rows is not None:
        result["beta_curve"] = [dict(omega=o, mean=m, lo95=lo, hi95=hi) for o, m, lo, hi in rows]
        write_csv(out / "curve.csv", ["omega", "mean", "lo95", "hi95"], rows)
        outputs.append(out / "curve.csv")
    if dic_table is not None:
        result["dic_table"] = {str(k): asdict(v) for k, v in dic_table.items()}
        write_csv(out / "dic.csv", ["L", "dic", "p_d", "mean_deviance", "deviance_at_mean"],
                  [[k, v.dic, v.p_d, v.mean_deviance, v.deviance_at_mean] for k, v in dic_table.items()])
        outputs.append(out / "dic.csv")
    write_json(out / "posterior.json", result)
    outputs.append(out / "posterior.json")
    if args.figures:
        from .plotting import plot_beta_curve, plot_trace

        plot_trace(pooled.draws, pooled.names, out / "trace.png")
        if rows is not None:
            o, m, lo, hi = map(np.asarray, zip(*rows))
            plot_beta_curve(o, m, lo, hi, out / "curve.png")
    write_manifest(out, _config(args), {"chains": seeds}, inputs, outputs)
    bx = summary.get("beta_x")
    if bx is not None:
        print(f"beta_x mean={bx['mean']:.4f} sd={bx['sd']:.4f} 95%=({bx['lo95']:.4f}, {bx['hi95']:.4f})")
    print(f"wrote {out}")
    return 0


def _default_menu(domain):
    from .continuous import DEFAULT_CONTINUOUS_L_MENU
    from .discrete import DEFAULT_L_MENU

    return DEFAULT_L_MENU if domain == "discrete" else DEFAULT_CONTINUOUS_L_MENU


def _config(args) -> dict:
    return {k: v for k, v in vars(args).items() if not k.startswith("_") and k != "func"}


# ---------------------------------------------------------------------------
# simulate / replicate / basis


def _scenario(domain, number):
    from .simulation import continuous_scenario, discrete_scenario

    return discrete_scenario(number) if domain == "discrete" else continuous_scenario(number)


def cmd_simulate(args) -> int:
    from .graph import build_lattice_adjacency, spectral_basis
    from .simulation import lattice_sites, simulate_continuous, simulate_discrete, unit_square_sites

    sc = _scenario(args.domain, args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    outputs = []
    if args.domain == "discrete":
        graph = build_lattice_adjacency(sc.rows, sc.cols)
        x, z, y = simulate_discrete(sc, spectral_basis(graph), rng)
        sites = lattice_sites(sc.rows, sc.cols)
        write_csv(out / "edges.csv", ["i", "j"], [(i + 1, j + 1) for i, j in graph.edges])
        outputs.append(out / "edges.csv")
    else:
        x, z, y = simulate_continuous(sc, rng)
        sites = unit_square_sites(sc.grid)
    write_csv(out / "data.csv", ["y", "x", "z", "s1", "s2"], zip(y, x, z, sites[:, 0], sites[:, 1]))
    write_json(out / "truth.json", dict(domain=args.domain, seed=args.seed, **asdict(sc)))
    outputs += [out / "data.csv", out / "truth.json"]
    write_manifest(out, _config(args), {"data": args.seed}, (), outputs)
    print(f"wrote {len(y)} rows to {out / 'data.csv'}")
    return 0


def cmd_replicate(args) -> int:
    from .simulation import CONTINUOUS_METHODS, DISCRETE_METHODS, run_replication

    if (args.scenario is None) == (args.table is None):
        raise UsageError("give exactly one of --scenario or --table")
    if args.table is not None:
        args.domain = "discrete" if args.table == 1 else "continuous"
        numbers = range(1, 6)
    else:
        numbers = [args.scenario]
    allowed = DISCRETE_METHODS if args.domain == "discrete" else CONTINUOUS_METHODS
    methods = args.methods.split(",") if args.methods else list(allowed)
    bad = [m for m in methods if m not in allowed]
    if bad:
        raise UsageError(f"unknown methods {bad}; choose from {allowed}")
    menu = _parse_menu(args.L_menu)
    mcmc = _mcmc(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, records = [], []
    for k in numbers:
        rep = run_replication(_scenario(args.domain, k), methods, args.reps, args.parallel, args.seed, mcmc, menu)
        for r in rep.rows:
            rows.append([k, r.method, rep.phi, rep.beta_xz,
                         100 * r.rmse, 100 * r.rmse_se, 100 * r.bias, 100 * r.bias_se,
                         100 * r.sd, 100 * r.sd_se, r.coverage, r.coverage_se])
        records.append(dict(scenario=k, failures=rep.failures, runtime=rep.runtime, records=rep.records))
    header = ["Scenario", "Method", "phi", "beta_xz", "RMSE", "RMSE_se", "Bias", "Bias_se", "SD", "SD_se", "Coverage", "Coverage_se"]
    write_csv(out / "table.csv", header, rows)
    write_json(out / "records.json", records)
    outputs = [out / "table.csv", out / "records.json"]
    if args.figures:
        from .plotting import plot_replication_table

        for k in numbers:
            sub = [r for r in rows if r[0] == k]
            plot_replication_table([r[1] for r in sub], [r[6] for r in sub], [r[10] for r in sub], out / f"scenario{k}.png")
    write_manifest(out, _config(args), {"replication": args.seed}, (), outputs)
    for r in rows:
        print(",".join(str(round(v, 3)) if isinstance(v, float) else str(v) for v in r))
    return 0


def cmd_basis(args) -> int:
    data = read_region_csv(args.data)
    if args.L < 1:
        raise UsageError("--L must be positive")
    if args.domain == "discrete":
        from .discrete import semiparametric_covariates
        from .graph import build_adjacency_from_edges, spectral_basis

        if args.adjacency is None:
            raise UsageError("--adjacency is required for --domain discrete")
        basis = spectral_basis(build_adjacency_from_edges(data.n, read_edge_list(args.adjacency)))
        covs = semiparametric_covariates(basis, data.x, args.L)
    else:
        from .continuous import continuous_covariates

        if data.sites is None:
            raise UsageError("continuous data need site columns s1 and s2")
        covs = continuous_covariates(data.sites, data.x, args.L)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    covs.to_csv(out)
    print(f"wrote {covs.columns.shape[0]} x {covs.L} covariates to {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ecar", description="Spectral adjustment for unmeasured spatial confounding.")
    p.add_argument("--version", action="version", version=f"ecar {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a model to a region CSV")
    f.add_argument("--data", required=True, help="CSV with y, x, optional offset, c1..cp, s1, s2")
    f.add_argument("--adjacency", help="edge list of 1-based region pairs (discrete domain)")
    f.add_argument("--domain", choices=("discrete", "continuous"), default="discrete")
    f.add_argument("--method", choices=("standard", "parametric", "semiparametric"), default="semiparametric")
    f.add_argument("--matern", choices=("parsimonious", "flexible"), default="parsimonious",
                   help="bivariate Matern variant for --method parametric on continuous data")
    f.add_argument("--family", choices=("gaussian", "poisson", "negbin"), default="gaussian")
    f.add_argument("--L-menu", dest="L_menu", help="comma-separated spline sizes compared by DIC")
    f.add_argument("--prior", choices=tuple(PRIOR_VARIANTS), default="pcp", help="spline-coefficient variance prior")
    f.add_argument("--pcp-u", dest="pcp_u", type=float, default=0.5)
    f.add_argument("--normalize-spatial", action="store_true")
    f.add_argument("--per-region-dispersion", action="store_true")
    f.add_argument("--chains", type=int, default=1)
    _add_mcmc(f)
    f.add_argument("--out", required=True)
    f.add_argument("--figures", action="store_true", help="also write PNG figures")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="simulate one dataset from a study scenario")
    s.add_argument("--domain", choices=("discrete", "continuous"), default="discrete")
    s.add_argument("--scenario", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("replicate", help="run the replication study for one scenario or a whole table")
    r.add_argument("--domain", choices=("discrete", "continuous"), default="discrete")
    r.add_argument("--scenario", type=int)
    r.add_argument("--table", type=int, choices=(1, 2))
    r.add_argument("--methods", help="comma-separated method names")
    r.add_argument("--reps", type=int, default=100)
    r.add_argument("--parallel", type=int, default=1, help="worker processes (capped by ECAR_THREADS)")
    r.add_argument("--L-menu", dest="L_menu")
    _add_mcmc(r, 5_000, 1_000)
    r.add_argument("--out", required=True)
    r.add_argument("--figures", action="store_true")
    r.set_defaults(func=cmd_replicate)

    b = sub.add_parser("basis", help="write the constructed adjustment covariates")
    b.add_argument("--data", required=True)
    b.add_argument("--adjacency")
    b.add_argument("--domain", choices=("discrete", "continuous"), default="discrete")
    b.add_argument("--L", type=int, required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_basis)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"ecar: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"ecar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
