"""Command line driver: config validation, pipeline orchestration, reports.

Stages (solve / analyze-fb / hodograph / grushin) run sequentially and write
plot-ready CSV tables plus JSON summaries.  All outputs are deterministic for
a fixed config and seed: no timestamps, sorted JSON keys, fixed float formats.
"""

import argparse
import json
import os
import sys

import numpy as np

from ._util import write_csv, write_json
from . import norms as norms_mod

KNOWN_STAGES = ("solve", "oracle", "analyze-fb", "hodograph", "grushin")

DEFAULTS = {
    "dim": 3,
    "grid": {"n_per_axis": 65},
    "solver": {"omega": 1.5, "tol_c": 1e-8, "tol_r": 1e-8, "max_iter": 200000},
    "metric": {"kind": "flat"},
    "stages": ["solve", "analyze-fb"],
    "window": 0.5,
    "legendre": {"ny": 33, "deg": 3, "radius": 0.4},
    "seed": 0,
}


def _merge_defaults(cfg, defaults):
    out = dict(defaults)
    for k, v in cfg.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge_defaults(v, out[k])
        else:
            out[k] = v
    return out


def validate_config(source):
    """Load, default-fill and schema-check a run configuration.

    ``source`` is a JSON file path or an already-parsed dict.  Raises
    ValueError naming the offending field path.
    """
    if isinstance(source, dict):
        raw = source
    else:
        if not os.path.exists(source):
            raise ValueError(f"config file not found: {source}")
        with open(source) as fh:
            raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError("config: top level must be an object")
    cfg = _merge_defaults(raw, DEFAULTS)

    if cfg["dim"] not in (2, 3):
        raise ValueError("dim: must be 2 or 3")
    n = cfg["grid"]["n_per_axis"]
    if not (isinstance(n, int) and n >= 9):
        raise ValueError("grid.n_per_axis: need an integer >= 9")
    for key in ("tol_c", "tol_r"):
        if not cfg["solver"][key] > 0:
            raise ValueError(f"solver.{key}: must be positive")
    if not 0 < cfg["solver"]["omega"] < 2:
        raise ValueError("solver.omega: must lie in (0, 2)")

    metric = cfg["metric"]
    if metric.get("kind") not in ("flat", "pullback"):
        raise ValueError("metric.kind: must be 'flat' or 'pullback'")
    if metric["kind"] == "pullback":
        if "h" not in metric:
            raise ValueError("metric.h: required for pullback metrics")
        if cfg["dim"] != 3:
            raise ValueError("metric.kind: pullback requires dim 3")

    stages = cfg["stages"]
    for s in stages:
        if s not in KNOWN_STAGES:
            raise ValueError(f"stages: unknown stage name {s!r}")
    has_field = ("solve" in stages) or ("oracle" in stages)
    for s in ("analyze-fb", "hodograph"):
        if s in stages and not has_field:
            raise ValueError(f"stages: {s!r} requires 'solve' or 'oracle'")
    return cfg


def build_oracle(cfg):
    from .metrics import make_model_oracle, make_pullback_oracle, GraphGenerator
    metric = cfg["metric"]
    if metric["kind"] == "flat":
        return make_model_oracle(cfg["dim"])
    h = GraphGenerator(metric["h"]["kind"],
                       {k: v for k, v in metric["h"].items() if k != "kind"})
    return make_pullback_oracle(h, dim=cfg["dim"])


# ---------------------------------------------------------------------------
# stages


def stage_solve(cfg, art):
    from .solver import (HalfGrid, assemble, solve_signorini, sample_oracle,
                         residual_report)
    from .metrics import ProblemSpec, ScalarField

    oracle = build_oracle(cfg)
    grid = HalfGrid(cfg["dim"], cfg["grid"]["n_per_axis"])
    art["oracle"] = oracle
    art["grid"] = grid
    sv = cfg["solver"]
    if "solve" in cfg["stages"]:
        spec = ProblemSpec(oracle.metric, None, None,
                           ScalarField(cfg["dim"], oracle.w_exact.value))
        op = assemble(spec, grid)
        sol = solve_signorini(op, spec, grid, tol_c=sv["tol_c"],
                              tol_r=sv["tol_r"], max_iter=sv["max_iter"],
                              omega=sv["omega"])
        report = residual_report(sol, op, tol_c=sv["tol_c"], tol_r=sv["tol_r"])
    else:
        sol = sample_oracle(oracle, grid)
        report = residual_report(sol, tol_c=sv["tol_c"], tol_r=sv["tol_r"])
    w_ref = oracle.w_exact(grid.points())
    scale = max(float(np.abs(w_ref).max()), 1e-300)
    report["rel_error_vs_exact"] = float(np.abs(sol.w - w_ref).max()) / scale
    art["solution"] = sol
    art["solve_report"] = report
    return report


def stage_analyze_fb(cfg, art):
    from .free_boundary import (extract_sets, estimate_vanishing_order,
                                fit_asymptotic_profile)
    from ._util import dyadic_radii

    sol = art["solution"]
    h = sol.grid.hgrid
    radii = dyadic_radii(4 * h, max(0.4, 16 * h), base=np.sqrt(2.0))
    fbm = extract_sets(sol, tol_fb=cfg["solver"]["tol_c"])
    art["fbm"] = fbm
    report = {"n_fb_points": int(len(fbm.fb_points))}

    # vanishing order at up to 5 boundary points nearest the window center
    order = np.argsort(np.linalg.norm(fbm.fb_points, axis=1))
    kappas = []
    for k in order[:5]:
        try:
            kappas.append({"x0": [float(c) for c in fbm.fb_points[k]],
                           "kappa": float(estimate_vanishing_order(
                               sol, fbm.fb_points[k], radii=radii))})
        except ValueError:
            continue
    report["kappa"] = kappas

    x0 = fbm.fb_points[order[0]]
    try:
        prof = fit_asymptotic_profile(sol, fbm, x0,
                                      r_outer=max(0.2, 8 * h))
        art["profile"] = prof
        report["profile"] = {
            "x0": [float(c) for c in prof.x0],
            "amplitude": float(prof.amplitude),
            "normal": [float(c) for c in prof.nu],
            "nu_A_nu": prof.nu_A_nu,
            "a_vert": prof.a_vert,
        }
    except ValueError as exc:
        report["profile"] = {"error": str(exc)}

    if cfg["dim"] == 3 and len(fbm.graph_x) >= 16:
        try:
            a_hat, conf = norms_mod.fit_holder_exponent(fbm.graph_x, fbm.graph_g)
            report["graph_exponent"] = {"estimate": a_hat, "confidence": conf}
        except ValueError as exc:
            report["graph_exponent"] = {"error": str(exc)}
    art["fb_report"] = report
    return report


def stage_hodograph(cfg, art):
    from . import hodograph as hd
    from .grushin import quasi_metric

    sol = art["solution"]
    oracle = art["oracle"] if "oracle" in cfg["stages"] else None
    hmap = hd.hodograph_map(sol, oracle=oracle, window=cfg["window"])
    art["hodograph"] = hmap
    report = {"quadrant": hd.quadrant_report(hmap),
              "round_trip_error": hmap.round_trip_error()}

    leg = hd.legendre_transform(hmap, sol)
    report["dual_residual"] = leg.dual_residual()
    lg = cfg["legendre"]
    res = hd.resample_legendre(leg, ny=lg["ny"], deg=lg["deg"],
                               radius=lg["radius"])
    if oracle is not None:
        jet = hd.oracle_legendre_jet(oracle, hmap, res["y"])
        jet["axes"] = res["axes"]
    else:
        jet = res
    jet["spacing"] = res["spacing"]
    art["legendre_jet"] = jet
    art["legendre_grid"] = res

    metric = art["oracle"].metric
    fres = hd.nonlinear_residual_F(jet, metric, spacing=res["spacing"])
    report["F_residual_max"] = fres["max_abs"]
    dG = quasi_metric(jet["y"], np.zeros(cfg["dim"]))
    rows = []
    for s in fres["shells"]:
        sel = fres["mask"] & (dG >= s["r_lo"]) & (dG < s["r_hi"])
        msq = float(np.mean(fres["F"][sel] ** 2)) if sel.any() else 0.0
        rows.append((s["r"], s["max"], msq))
    art["F_shells"] = rows
    art["F_field"] = fres

    try:
        exp = hd.expand_at_point(jet, metric, np.zeros(cfg["dim"]),
                                 spacing=res["spacing"])
        art["expansion"] = {
            "coefficients": exp["coefficients"], "c0": exp["c0"],
            "P_structure_ok": exp["P_structure_ok"],
            "decay_exponent": exp["decay_exponent"],
            "shells": [{"r": s["r"], "max": s["max"]} for s in exp["shells"]],
        }
        report["expansion_decay"] = exp["decay_exponent"]
        report["P_structure_ok"] = exp["P_structure_ok"]
    except ValueError as exc:
        art["expansion"] = {"error": str(exc)}
        report["expansion_error"] = str(exc)
    art["hodograph_report"] = report
    return report


def stage_grushin(cfg, art):
    from .grushin import (GrushinPolynomial, harmonic_polynomials,
                          QuarterGridField, grushin_residual, quasi_metric,
                          dilate)

    n = cfg["dim"] - 1
    dims = [len(harmonic_polynomials(k, n)) for k in range(1, 5)]
    probe = GrushinPolynomial.monomial((1, 1, 0) if n == 2 else (1, 0), n, 1)
    u = QuarterGridField.from_function(probe.eval, n, 33)
    resid_max = float(np.nanmax(np.abs(grushin_residual(u))))
    rng = np.random.default_rng(cfg["seed"])
    pts = rng.uniform(-1, 1, (64, cfg["dim"]))
    d1 = quasi_metric(pts, np.zeros(cfg["dim"]))
    d2 = quasi_metric(dilate(0.5, pts), np.zeros(cfg["dim"]))
    homog = float(np.max(np.abs(d2 - 0.5 * d1)))
    report = {"harmonic_basis_dims": dims,
              "bvp_probe_residual": resid_max,
              "dilation_homogeneity_err": homog}
    art["grushin_report"] = report
    return report


# ---------------------------------------------------------------------------
# report emission


def emit_report(cfg, art, outdir):
    os.makedirs(outdir, exist_ok=True)
    d = cfg["dim"]
    xcols = ["x%d" % (i + 1) for i in range(d)]
    ycols = ["y%d" % (i + 1) for i in range(d)]

    if "solution" in art:
        sol = art["solution"]
        pts = sol.grid.points().reshape(-1, d)
        rows = [tuple(p) + (wv,) for p, wv in zip(pts, sol.w.ravel())]
        write_csv(os.path.join(outdir, "w.csv"), xcols + ["w"], rows)
        write_json(os.path.join(outdir, "report.json"), art["solve_report"])

    if "fbm" in art:
        fbm = art["fbm"]
        rows = [tuple(p) + tuple(nu)
                for p, nu in zip(fbm.fb_points, fbm.normals)]
        write_csv(os.path.join(outdir, "fb_points.csv"),
                  xcols + ["nu%d" % (i + 1) for i in range(d)], rows)
        write_json(os.path.join(outdir, "profiles.json"), art["fb_report"])

    if "legendre_jet" in art:
        jet = art["legendre_jet"]
        cov = art["legendre_grid"]["covered"].ravel()
        pts = jet["y"].reshape(-1, d)
        rows = [tuple(p) + (vv, int(c)) for p, vv, c
                in zip(pts, jet["v"].ravel(), cov)]
        write_csv(os.path.join(outdir, "legendre.csv"),
                  ycols + ["v", "covered"], rows)
        write_csv(os.path.join(outdir, "F_residual.csv"),
                  ["r", "max_err", "mean_sq_err"],
                  sorted(art["F_shells"], key=lambda t: -t[0]))
        write_json(os.path.join(outdir, "expansion.json"), art["expansion"])

    summary = {"config": {k: cfg[k] for k in sorted(cfg)}, "stages": {}}
    checks = summary["stages"]
    if "solve_report" in art:
        rep = art["solve_report"]
        checks["solve"] = {k: rep[k] for k in rep}
    if "fb_report" in art:
        checks["analyze-fb"] = art["fb_report"]
    if "hodograph_report" in art:
        checks["hodograph"] = art["hodograph_report"]
    if "grushin_report" in art:
        checks["grushin"] = art["grushin_report"]
    write_json(os.path.join(outdir, "summary.json"), summary)


def run_pipeline(cfg, outdir, only=None):
    """Run the configured stages and write artifacts; returns exit status."""
    art = {}
    stages = cfg["stages"] if only is None else only
    try:
        if "solve" in stages or "oracle" in stages:
            stage_solve(cfg, art)
        if "analyze-fb" in stages:
            stage_analyze_fb(cfg, art)
        if "hodograph" in stages:
            stage_hodograph(cfg, art)
        if "grushin" in stages:
            stage_grushin(cfg, art)
        emit_report(cfg, art, outdir)
    except (ValueError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------------
# norms subcommand


def run_norms(args):
    data = np.genfromtxt(args.infile, delimiter=",", names=True)
    cols = data.dtype.names
    coords = np.stack([data[c] for c in cols[:-1]], axis=-1)
    vals = np.asarray(data[cols[-1]], dtype=float)
    axes = [np.unique(coords[:, i]) for i in range(coords.shape[1])]
    shape = tuple(len(a) for a in axes)
    if int(np.prod(shape)) != vals.size:
        raise ValueError("field.csv must be a full tensor-product grid")
    order = np.lexsort(tuple(coords[:, i] for i in reversed(range(len(axes)))))
    pts = coords[order].reshape(shape + (len(axes),))
    jet = {"y": pts, "v": vals[order].reshape(shape), "axes": tuple(axes),
           "spacing": float(axes[-1][1] - axes[-1][0])}
    if args.space == "holder":
        rep = norms_mod.grushin_holder_seminorm(jet, args.alpha, k=args.order,
                                                seed=args.seed)
    elif args.space == "Y":
        rep = norms_mod.y_norm(jet, args.alpha, eps=args.eps, seed=args.seed)
    else:
        rep = norms_mod.x_norm(jet, args.alpha, eps=args.eps, seed=args.seed)
    write_json(args.out, norms_mod.report_scalars(rep))
    return 0


# ---------------------------------------------------------------------------
# entry point


def _add_common(p):
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--threads", type=int, default=None,
                   help="BLAS/OpenMP thread cap")


def main(argv=None):
    parser = argparse.ArgumentParser(prog="thinfb",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    stage_of = {"solve": ["solve"], "analyze-fb": ["solve", "analyze-fb"],
                "hodograph": ["solve", "analyze-fb", "hodograph"],
                "grushin": ["grushin"]}
    for name in ("solve", "analyze-fb", "hodograph", "grushin", "pipeline"):
        p = sub.add_parser(name)
        _add_common(p)
    p = sub.add_parser("norms")
    p.add_argument("--space", choices=("X", "Y", "holder"), required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--order", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    args = parser.parse_args(argv)

    if getattr(args, "threads", None):
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    if args.command == "norms":
        try:
            return run_norms(args)
        except ValueError as exc:
            print(f"invalid input: {exc}", file=sys.stderr)
            return 1

    try:
        cfg = validate_config(args.config)
    except ValueError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 1
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.command == "pipeline":
        only = None
    else:
        only = stage_of[args.command]
        if args.command != "grushin" and "oracle" in cfg["stages"]:
            only = ["oracle" if s == "solve" else s for s in only]
    return run_pipeline(cfg, args.out, only=only)


if __name__ == "__main__":
    sys.exit(main())
