"""Scenario runner: named verification suites over the model manifolds with
machine-readable JSON reports.

Exit codes: 0 when every check passes its tolerance, 1 on a failed check,
2 on configuration or usage errors.  Reports are deterministic for a fixed
seed (sample points are drawn from a seeded generator; no timestamps).
"""

import argparse
import json
import sys

import numpy as np

from . import __version__
from . import curves as curvemod
from .errors import ConfigError, KahlerLabError
from .geometry import cov_step_jet, riemann_symmetry_residuals
from .hproj import (PairSolution, c_identity_check, geom, hpr_residual,
                    lambda_least_squares, lambda_scalar_field)
from .models import (complex_matrix_from_pairs, flat_model, flat_torus,
                     fubini_study, model_from_descriptor, pullback_fs)
from .prolongation import (MobilityConfig, TransportSolution,
                           degree_of_mobility, estimate_B, extended_residual,
                           laplace_identity_residual, tanno_residual,
                           tanno_to_extended)
from .spectral import (L_product, PolynomialSolution, build_L,
                       eigenstructure_report, hessian_mu_check, make_projector,
                       minimal_poly, renormalize_to_minus_one)

SCENARIOS = {
    "verify-kahler": "compatibility residuals of (g, J) at seeded points",
    "curvature": "curvature symmetries and the constant-holomorphic-curvature identity",
    "hpr-check": "first-order system residuals for a metric pair, with coupling-constant fit",
    "mobility": "local solution-space dimension of the prolonged system",
    "spectral": "packaged-operator algebra: products, minimal polynomial, projector eigenstructure",
    "tanno": "third-order scalar equation and its equivalence with the prolonged system",
    "hplanar": "planar-curve integration, line membership, first integrals",
    "report-merge": "merge previously written JSON reports",
}


def check(name, value, tol, invert=False):
    value = float(value)
    ok = (value >= tol) if invert else (value <= tol)
    return {"name": name, "max_residual": value, "tolerance": float(tol),
            "pass": bool(ok)}


def _model_from_args(args):
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
        if "model" in cfg:
            return model_from_descriptor(cfg["model"])
    kind = args.model
    if kind == "flat":
        return flat_model(args.n, args.diag)
    if kind == "fs":
        return fubini_study(args.n, args.chart_index)
    if kind == "torus":
        return flat_torus(args.n, args.periods if args.periods else 1.0)
    if kind == "pullback":
        if not args.A_file:
            raise ConfigError("pullback model needs --A-file")
        return pullback_fs(_read_matrix(args.A_file), args.chart_index)
    if kind == "product":
        raise ConfigError("product models are configured via --config (kind, factors, weights)")
    raise ConfigError(f"unknown model {kind!r}")


def _read_matrix(path):
    with open(path) as fh:
        rows = json.load(fh)
    try:
        return complex_matrix_from_pairs(rows)
    except Exception as exc:
        raise ConfigError(f"matrix file {path}: expected row-major [re, im] pairs ({exc})")


def _pair_solution(args):
    """(g, gbar) pair: the projective model and a linear pullback of it."""
    if args.n < 2:
        raise ConfigError("pair scenarios need n >= 2")
    g_model = fubini_study(args.n, args.chart_index)
    A = _read_matrix(args.A_file) if args.A_file else np.diag([2.0] + [1.0] * args.n)
    gbar = pullback_fs(A, args.chart_index)
    return g_model, PairSolution(g_model, gbar)


# -- scenarios -----------------------------------------------------------------

def run_verify_kahler(args, rng):
    model = _model_from_args(args)
    tol = args.tol if args.tol else 1e-8
    checks = []
    for chart in sorted(model.charts):
        rep = model.verify(rng, count=args.samples, tol=tol, chart=chart)
        for name, val in rep.residuals.items():
            checks.append(check(f"{chart}.{name}", val, tol))
    return model, checks, []


def run_curvature(args, rng):
    model = _model_from_args(args)
    tol = args.tol if args.tol else 1e-7
    B = args.B if args.B is not None else -0.25
    from .geometry import MetricJet, riemann
    from .prolongation import constant_curvature_tensor
    worst = {"antisym_first_pair": 0.0, "antisym_last_pair": 0.0,
             "pair_symmetry": 0.0, "first_bianchi": 0.0, "J_commutation": 0.0}
    worst_g = 0.0
    for pt in model.sample_points(rng, args.samples):
        g = geom(model, pt, 2)
        mj = MetricJet.from_jet(pt.coords, g["g"])
        for k, v in riemann_symmetry_residuals(mj, g["J"]).items():
            worst[k] = max(worst[k], v)
        G = riemann(mj) + 4.0 * B * constant_curvature_tensor(g["g"].const, g["J"])
        worst_g = max(worst_g, float(np.max(np.abs(G))))
    checks = [check(k, v, tol) for k, v in worst.items()]
    checks.append(check("constant_holomorphic_curvature", worst_g, tol))
    return model, checks, []


def run_hpr_check(args, rng):
    g_model, sol = _pair_solution(args)
    tol = args.tol if args.tol else 1e-7
    pts = g_model.sample_points(rng, args.samples)
    worst_hpr = max(float(np.max(np.abs(hpr_residual(g_model, sol, p)))) for p in pts)
    lam_max = max(float(np.max(np.abs(sol.lam_at(p)))) for p in pts)
    worst_kill = 0.0
    worst_ls = 0.0
    for p in pts:
        g = geom(g_model, p, 1)
        dlam = cov_step_jet(sol.lam_jet(p, 1), ("l",), g["gamma"]).const
        kb = g["J"].T @ dlam
        worst_kill = max(worst_kill, float(np.max(np.abs(kb + kb.T))))
        worst_ls = max(worst_ls, float(np.max(np.abs(
            lambda_least_squares(g_model, sol, p) - sol.lam_at(p)))))
    Bs = [estimate_B(g_model, sol, p)[0] for p in pts[:10]]
    checks = [
        check("hpr_residual", worst_hpr, tol),
        check("lambda_nonzero", lam_max, 1e-4, invert=True),
        check("killing_residual_lambda_bar", worst_kill, tol),
        check("lambda_trace_vs_least_squares", worst_ls, 1e-5),
        check("B_spread", np.max(Bs) - np.min(Bs), 1e-4),
    ]
    extra = {"B_estimate": float(np.mean(Bs))}
    artifacts = []
    if args.dump_solution:
        from .hproj import solution_to_json
        payload = solution_to_json(g_model, sol.with_B(float(np.mean(Bs))), pts)
        with open(args.dump_solution, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
        artifacts.append(args.dump_solution)
    if args.A2_file:
        gbar2 = pullback_fs(_read_matrix(args.A2_file), args.chart_index)
        sol2 = PairSolution(g_model, gbar2)
        worst_c = max(c_identity_check(g_model, sol, sol2, p) for p in pts[:10])
        checks.append(check("c_identity", worst_c, 1e-6))
    return g_model, checks, artifacts, extra


def run_mobility(args, rng):
    model = _model_from_args(args)
    cfg = MobilityConfig(seed=args.seed, step=args.step if args.step else 2e-3)
    base = model.point(np.zeros(model.dim))
    report = degree_of_mobility(model, args.B, base, cfg)
    warn = report.warning or ""
    stab_failed = "stabilize" in warn or "truncated" in warn
    checks = [check("rank_stabilized", 1.0 if stab_failed else 0.0, 0.5)]
    if args.expect_dim is not None:
        checks.append(check("dimension", abs(report.dimension - args.expect_dim), 0.5))
    # re-verify a few kernel elements as genuine solutions at fresh points
    B_used = report.B
    n_verify = min(len(report.basis), args.verify_basis)
    worst = 0.0
    fresh = [base.coords + rng.uniform(-0.2, 0.2, model.dim) for _ in range(3)]
    for st in report.basis[:n_verify]:
        ts = TransportSolution(model, B_used, base, st, step=cfg.step)
        for x in fresh:
            p = model.point(x)
            r1, r2, r3 = extended_residual(model, ts, p)
            worst = max(worst, float(np.max(np.abs(r1))),
                        float(np.max(np.abs(r2))), float(np.max(np.abs(r3))))
    checks.append(check("kernel_reverify", worst, 1e-5))
    from .prolongation import mobility_basis_grid
    grid_pts = [base.coords] + [base.coords + rng.uniform(-0.2, 0.2, model.dim)
                                for _ in range(2)]
    extra = {"dimension": report.dimension, "B": report.B,
             "mobility": report.to_dict(include_basis=True),
             "basis_grid": mobility_basis_grid(model, report, grid_pts,
                                               step=cfg.step)}
    return model, checks, [], extra


def run_spectral(args, rng):
    g_model, sol = _pair_solution(args)
    tol = args.tol if args.tol else 1e-5
    pts = g_model.sample_points(rng, max(args.samples, 4))
    B = args.B if args.B is not None else float(np.mean(
        [estimate_B(g_model, sol, p)[0] for p in pts[:5]]))
    m1, s1 = renormalize_to_minus_one(g_model, sol.with_B(B))
    p, q = pts[0], pts[1]
    L1 = build_L(m1, s1, p)
    gm = m1.metric_at(p)
    checks = [
        check("ghat_selfadjoint", L1.selfadjoint_residual(gm), 1e-10),
        check("jhat_commute", L1.jcommute_residual(m1.j_matrix()), 1e-10),
    ]
    _, triple, conds = L_product(m1, L1, L1, p)
    checks.append(check("op_eq_mixed", conds["cond_mixed"], 1e-8))
    checks.append(check("op_eq_isotropy", conds["cond_isotropy"], 1e-8))
    sq = PolynomialSolution(m1, s1, [1.0, 0.0, 0.0])
    worst = 0.0
    for x in pts[:5]:
        r1, r2, r3 = extended_residual(m1, sq, x)
        worst = max(worst, float(np.max(np.abs(r1))), float(np.max(np.abs(r2))),
                    float(np.max(np.abs(r3))))
    checks.append(check("square_solution_residual", worst, tol))
    mp1 = minimal_poly(build_L(m1, s1, p))
    mp2 = minimal_poly(build_L(m1, s1, q))
    dist = (float(np.max(np.abs(mp1.coefficients - mp2.coefficients)))
            if mp1.degree == mp2.degree else float("inf"))
    checks.append(check("minimal_poly_agreement", dist, 1e-5))
    mu_samples = [float(s1.mu_jet(x, 0).const) for x in pts]
    target = max(mu_samples)
    P, coeffs = make_projector(L1, target=target)
    checks.append(check("projector_idempotent",
                        float(np.max(np.abs(P.matrix @ P.matrix - P.matrix))), 1e-8))
    proj = PolynomialSolution(m1, s1, coeffs)
    interior = None
    for x in pts:
        mu = float(proj.mu_jet(x, 0).const)
        if 0.05 < mu < 0.95:
            interior = x
            break
    if interior is not None:
        rep = eigenstructure_report(m1, proj, interior)
        n = g_model.n
        expected = {1.0: 2 * rep.k, 1.0 - rep.mu: 2, 0.0: 2 * n - 2 * rep.k - 2}
        mism = 0.0
        for val, mult in expected.items():
            got = sum(m for v, m in rep.eigenvalues if abs(v - val) <= 1e-5)
            if mult > 0 and got != mult:
                mism = 1.0
        checks.append(check("eigenstructure_multiplicities", mism, 0.5))
        checks.append(check("lambda_eigenspace_angle", rep.lambda_angle, 1e-4))
        checks.append(check("hessian_mu", float(np.max(np.abs(
            hessian_mu_check(m1, proj, interior)))), tol))
    extra = {"B": B, "minimal_poly": mp1.coefficients.tolist()}
    return g_model, checks, [], extra


def run_tanno(args, rng):
    g_model, sol = _pair_solution(args)
    tol = args.tol if args.tol else 1e-5
    pts = g_model.sample_points(rng, args.samples)
    kappa = args.B if args.B is not None else float(np.mean(
        [estimate_B(g_model, sol, p)[0] for p in pts[:5]]))
    solB = sol.with_B(kappa)

    lam_field = lambda_scalar_field(g_model, solB)
    worst_t = max(float(np.max(np.abs(tanno_residual(g_model, lam_field, kappa, p))))
                  for p in pts)
    worst_l = max(float(np.max(np.abs(laplace_identity_residual(g_model, solB, p))))
                  for p in pts)
    ext = tanno_to_extended(g_model, lam_field, kappa)
    worst_rt = 0.0
    for p in pts[:5]:
        worst_rt = max(worst_rt, _line_distance(g_model, solB, ext, kappa, p))
    checks = [
        check("tanno_residual", worst_t, tol),
        check("laplace_identity", worst_l, tol),
        check("round_trip_mod_trivial", worst_rt, 1e-6),
    ]
    return g_model, checks, [], {"kappa": kappa}


def _line_distance(model, sol, ext, B, point):
    """Distance between two solution triples modulo the trivial line
    (g, 0, -B)."""
    g = geom(model, point, 0)["g"].const
    da = sol.a_jet(point, 0).const - ext.a_jet(point, 0).const
    dl = sol.lam_jet(point, 0).const - ext.lam_jet(point, 0).const
    dm = float(sol.mu_jet(point, 0).const - ext.mu_jet(point, 0).const)
    ta, tl, tm = g, np.zeros(model.dim), -B
    tt = float(np.sum(ta * ta) + tm * tm)
    proj = (float(np.sum(da * ta)) + dm * tm) / tt
    ra = da - proj * ta
    rl = dl
    rm = dm - proj * tm
    return max(float(np.max(np.abs(ra))), float(np.max(np.abs(rl))), abs(rm))


def run_hplanar(args, rng):
    model = _model_from_args(args)
    tol = args.tol if args.tol else 1e-6
    step = args.step if args.step else 1e-3
    count = min(args.samples, 10)
    x0s = [model.point(rng.uniform(-0.3, 0.3, model.dim)) for _ in range(count)]
    v0s = [rng.uniform(-0.7, 0.7, model.dim) for _ in range(count)]
    als = [float(rng.uniform(-0.3, 0.3)) for _ in range(count)]
    bes = [float(rng.uniform(-0.5, 0.5)) for _ in range(count)]
    curves = curvemod.integrate_hplanar_batch(model, x0s, v0s, als, bes, 1.0, step)
    devs = [curvemod.line_deviation(model, c, x0s[i], v0s[i])
            for i, c in enumerate(curves)]
    defects = [float(np.nanmax(curvemod.hplanarity_defect(model, c))) for c in curves[:3]]
    geo = curvemod.integrate_hplanar(model, x0s[0], v0s[0], 0.0, 0.0, 1.0, step)
    ratio = curvemod.rk4_order_ratio(model, x0s[0], v0s[0], als[0], bes[0], 0.5, 4e-3)
    rep_ok, _, _ = curvemod.reparametrization_invariance_check(model, curves[0])
    checks = [
        check("line_deviation", max(devs), tol),
        check("hplanarity_defect", max(defects), tol),
        check("energy_drift_geodesic", curvemod.energy_drift(model, geo), 1e-8),
        check("rk4_ratio_low", ratio, 12.0, invert=True),
        check("rk4_ratio_high", ratio, 20.0),
        check("reparametrization_invariance", 0.0 if rep_ok else 1.0, 0.5),
    ]
    artifacts = []
    if args.csv_dir:
        import os
        os.makedirs(args.csv_dir, exist_ok=True)
        for i, c in enumerate(curves):
            path = f"{args.csv_dir}/curve{i}.csv"
            dev = curvemod.line_deviation(model, c, x0s[i], v0s[i], per_sample=True)
            dfc = np.full(len(c), np.nan)
            dfc[2:len(c) - 2] = curvemod.hplanarity_defect(model, c)
            c.export_csv(path, extras={"defect": dfc, "deviation": dev})
            artifacts.append(path)
    if args.A_file and args.model == "fs":
        gbar = pullback_fs(_read_matrix(args.A_file), args.chart_index)
        sol = PairSolution(model, gbar)
        vf = lambda pt: sol.lambda_bar_vector_at(pt)
        drifts = []
        for i in range(min(5, count)):
            g = curvemod.integrate_hplanar(model, x0s[i], v0s[i], 0.0, 0.0, 1.0, 2e-3)
            drifts.append(curvemod.killing_integral_drift(model, g, vf, stride=25))
        checks.append(check("killing_integral_drift", max(drifts), 1e-7))
    return model, checks, artifacts


def run_report_merge(args, rng):
    merged = {"version": __version__, "scenario": "report-merge", "model": None,
              "seed": args.seed, "checks": [], "artifacts": []}
    for path in args.inputs:
        with open(path) as fh:
            rep = json.load(fh)
        for c in rep.get("checks", []):
            c = dict(c)
            c["name"] = f"{rep.get('scenario', 'unknown')}.{c['name']}"
            merged["checks"].append(c)
        merged["artifacts"].extend(rep.get("artifacts", []))
    return None, merged["checks"], merged["artifacts"]


RUNNERS = {
    "verify-kahler": run_verify_kahler,
    "curvature": run_curvature,
    "hpr-check": run_hpr_check,
    "mobility": run_mobility,
    "spectral": run_spectral,
    "tanno": run_tanno,
    "hplanar": run_hplanar,
    "report-merge": run_report_merge,
}


def _float_or_sweep(text):
    if text == "sweep":
        return None
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a float or 'sweep', got {text!r}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kahlerlab",
        description="scenario runner for the Kähler-geometry verification suites")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="scenario")

    listp = sub.add_parser("list", help="list scenarios")
    listp.add_argument("--json", action="store_true")

    for name, desc in SCENARIOS.items():
        p = sub.add_parser(name, help=desc)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--samples", type=int, default=20)
        p.add_argument("--step", type=float, default=None)
        p.add_argument("--out", default=None, help="report path (JSON)")
        p.add_argument("--config", default=None, help="JSON config file")
        if name == "report-merge":
            p.add_argument("inputs", nargs="+")
            continue
        p.add_argument("--model", default="fs",
                       choices=["flat", "fs", "pullback", "torus", "product"])
        p.add_argument("--n", type=int, default=2)
        p.add_argument("--chart-index", dest="chart_index", type=int, default=0)
        p.add_argument("--diag", type=float, nargs="+", default=None)
        p.add_argument("--periods", type=float, default=None)
        p.add_argument("--A-file", dest="A_file", default=None,
                       help="complex matrix as JSON rows of [re, im] pairs")
        p.add_argument("--A2-file", dest="A2_file", default=None)
        p.add_argument("--B", type=_float_or_sweep, default=None,
                       help="coupling constant, or 'sweep'")
        if name == "mobility":
            p.add_argument("--expect-dim", dest="expect_dim", type=int, default=None)
            p.add_argument("--verify-basis", dest="verify_basis", type=int, default=3)
        if name == "hplanar":
            p.add_argument("--csv-dir", dest="csv_dir", default=None)
        if name == "hpr-check":
            p.add_argument("--dump-solution", dest="dump_solution", default=None,
                           help="write the solution grid (JSON) to this path")
    return parser


_CONFIG_FLAGS = ("seed", "tol", "samples", "step", "B", "n", "chart_index",
                 "expect_dim", "verify_basis", "csv_dir", "model", "A_file",
                 "A2_file", "diag", "periods", "out", "dump_solution")


def _apply_config(args, argv):
    """Config-file values act as defaults; explicit flags win."""
    with open(args.config) as fh:
        cfg = json.load(fh)
    given = set()
    for tok in argv or []:
        if tok.startswith("--"):
            given.add(tok[2:].split("=")[0].replace("-", "_"))
    for key, value in cfg.items():
        attr = key.replace("-", "_")
        if attr == "model" and isinstance(value, dict):
            continue  # consumed by _model_from_args
        if attr in _CONFIG_FLAGS and attr not in given and hasattr(args, attr):
            setattr(args, attr, value)
    return args


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.scenario is None or args.scenario == "list":
        names = sorted(SCENARIOS)
        if getattr(args, "json", False):
            print(json.dumps(names))
        else:
            for name in names:
                print(f"{name}: {SCENARIOS[name]}")
        return 0
    runner = RUNNERS[args.scenario]
    try:
        if getattr(args, "config", None) and args.scenario != "report-merge":
            args = _apply_config(args, argv if argv is not None else sys.argv[1:])
        rng = np.random.default_rng(args.seed)
        out = runner(args, rng)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except KahlerLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    model, checks, artifacts = out[0], out[1], out[2]
    extra = out[3] if len(out) > 3 else {}
    report = {
        "version": __version__,
        "scenario": args.scenario,
        "model": model.descriptor() if model is not None else None,
        "seed": args.seed,
        "tolerances": {c["name"]: c["tolerance"] for c in checks},
        "checks": checks,
        "artifacts": artifacts,
    }
    report.update(extra)
    path = args.out or f"{args.scenario}_report.json"
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for c in checks:
        status = "pass" if c["pass"] else "FAIL"
        print(f"[{status}] {c['name']}: {c['max_residual']:.3e} (tol {c['tolerance']:.1e})")
    print(f"report: {path}")
    return 0 if all(c["pass"] for c in checks) else 1


if __name__ == "__main__":
    sys.exit(main())
