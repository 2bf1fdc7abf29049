"""End-to-end acceptance checks for the thin free boundary laboratory.

Each test exercises one headline property of the pipeline at desk scale:
model recovery, oracle pipelines, the hodograph/Legendre transform laws,
the degenerate operator and its linearization, the Grushin toolbox, the
exponent meters and reproducibility of the command-line runs.
"""

import filecmp
import json
import os
import time
from fractions import Fraction

import numpy as np
import pytest

from thinfb import cli, norms
from thinfb import hodograph as hd
from thinfb.grushin import (GrushinPolynomial, harmonic_polynomials,
                            QuarterGridField, solve_mixed_bvp, apply_grushin,
                            campanato_decay)
from thinfb.metrics import (make_flat, make_model_oracle, ProblemSpec,
                            ScalarField)
from thinfb.solver import (HalfGrid, assemble, solve_signorini, solve_split)
from thinfb.free_boundary import extract_sets, estimate_vanishing_order
from thinfb._util import shell_stats, dyadic_radii, loglog_slope


def test_01_model_solution_recovery(flat_oracle):
    t0 = time.monotonic()
    grid = HalfGrid(3, 65)
    spec = ProblemSpec(flat_oracle.metric, None, None,
                       ScalarField(3, flat_oracle.w_exact.value))
    op = assemble(spec, grid)
    sol = solve_signorini(op, spec, grid)
    elapsed = time.monotonic() - t0
    assert elapsed <= 120.0

    w_ref = flat_oracle.w_exact(grid.points())
    rel = np.abs(sol.w - w_ref).max() / np.abs(w_ref).max()
    assert rel <= 5e-2

    fbm = extract_sets(sol)
    assert np.abs(fbm.graph_g).max() <= grid.hgrid     # FB on {x_n = 0}

    kappa = estimate_vanishing_order(sol, np.zeros(3))
    assert abs(kappa - 1.5) <= 0.05


def test_02_pullback_pipeline_and_refinement(pullback_oracle,
                                             pullback_samples_65,
                                             pullback_fbm_65,
                                             pullback_resampled_33,
                                             pullback_resampled_65):
    h = pullback_samples_65.grid.hgrid
    graph_err = np.abs(pullback_fbm_65.graph_g
                       - pullback_oracle.h(pullback_fbm_65.graph_x)).max()
    assert graph_err <= 2 * h
    nu0 = pullback_fbm_65.normal_at(np.zeros(3))
    assert np.abs(nu0 - np.array([-1.0, 1.0, 0.0]) / np.sqrt(2)).max() <= 0.05

    maxima = []
    for res in (pullback_resampled_33, pullback_resampled_65):
        rep = hd.nonlinear_residual_F(res, pullback_oracle.metric,
                                      spacing=res["spacing"],
                                      collar_radius=0.1875)
        maxima.append(rep["max_abs"])
    assert maxima[0] / maxima[1] >= 2.5


def test_03_hodograph_mapping_laws(pullback_hodograph_65,
                                   pullback_samples_65):
    rep = hd.quadrant_report(pullback_hodograph_65, collar_cells=1.0)
    assert rep["misclassified_beyond_collar"] == 0
    assert rep["jacobian_negative_everywhere"]
    leg = hd.legendre_transform(pullback_hodograph_65, pullback_samples_65)
    assert leg.dual_residual() <= 1e-3


def test_04_legendre_closed_form(model_resampled_65):
    res = model_resampled_65
    y = res["y"]
    vref = -(4.0 / 27.0) * (y[..., 1] ** 3 - 3.0 * y[..., 1] * y[..., 2] ** 2)
    r = np.hypot(y[..., 1], y[..., 2])
    keep = res["covered"] & (r >= 4.0 * res["spacing"])
    rel = np.abs(res["v"] - vref)[keep].max() / np.abs(vref[keep]).max()
    assert rel <= 1e-3


def test_05_linearization_is_grushin_operator():
    # reference profile with J = -4 r^2, so D_vF = 4 r^2 Lap'' + d_nn + d_pp
    c = Fraction(1, 3)
    v0 = (GrushinPolynomial.monomial((0, 3, 0), 2, -c)
          + GrushinPolynomial.monomial((0, 1, 2), 2, 3 * c))
    ax = np.linspace(-0.5, 0.5, 17)
    yn = np.linspace(0.0, 0.5, 9)
    yp = np.linspace(-0.5, 0.0, 9)
    T, N, P = np.meshgrid(ax, yn, yp, indexing="ij")
    pts = np.stack([T, N, P], axis=-1)
    jet = hd.polynomial_jet(v0.as_float(), pts)
    probes = [GrushinPolynomial.monomial((2, 0, 0), 2),
              GrushinPolynomial.monomial((1, 1, 0), 2),
              GrushinPolynomial.monomial((0, 2, 0), 2),
              GrushinPolynomial.monomial((0, 1, 2), 2),
              GrushinPolynomial.monomial((1, 0, 2), 2)]
    for probe in probes:
        got = hd.apply_gateaux(jet, make_flat(3), probe)
        want = hd.grushin_reference_apply(probe.as_float(), pts, factor=4.0)
        scale = max(np.abs(want).max(), 1.0)
        assert np.abs(got - want).max() / scale <= 1e-4


def test_06_harmonic_basis_exact():
    # listed profiles: y_n, y_j y_n, y_n^3 - 3 y_n y_p^2, then nothing;
    # the implementation grades tangential variables with weight two, so
    # the same set appears as homogeneities 1 and 3 with 2 and 4 empty
    yn = {(0, 1, 0): Fraction(1)}
    mixed = {(1, 1, 0): Fraction(1)}
    cubic = {(0, 3, 0): Fraction(1), (0, 1, 2): Fraction(-3)}

    def span(polys):
        out = set()
        for p in polys:
            lead = sorted(p.coeffs)[-1]
            norm = {b: Fraction(c) / Fraction(p.coeffs[lead])
                    for b, c in p.coeffs.items()}
            out.add(frozenset(norm.items()))
        return out

    def canon(d):
        lead = sorted(d)[-1]
        return frozenset({b: c / d[lead] for b, c in d.items()}.items())

    got = span(harmonic_polynomials(1, 2)) | span(harmonic_polynomials(3, 2))
    want = {canon(yn), canon(mixed), canon(cubic)}
    assert got == want
    assert harmonic_polynomials(2, 2) == []
    assert harmonic_polynomials(4, 2) == []


def test_07_grushin_bvp_convergence():
    star = GrushinPolynomial.monomial((3, 0), 1).as_float()
    f = apply_grushin(GrushinPolynomial.monomial((3, 0), 1)).as_float()
    errs = []
    for m in (33, 65, 129):
        u = solve_mixed_bvp(f.eval, star.eval, n=1, n_per_axis=m)
        errs.append(np.abs(u.values - star.eval(u.points())).max())
    if max(errs) > 1e-10:
        assert np.diff(-np.log2(errs)).min() >= 1.8
    else:
        # the source 6 y_n is linear: the second-order stencil is exact
        assert max(errs) <= 1e-10


def test_08_campanato_slope_for_degree5_harmonic():
    five = harmonic_polynomials(5, 2)[0].as_float()
    u = QuarterGridField.from_function(five.eval, 2, 65)
    rep = campanato_decay(u, np.zeros(3))
    assert len(rep["radii"]) == 4
    assert abs(rep["slope"] - 10.0) <= 0.5


def test_09_expansion_decay_at_anchors(pullback_oracle, pullback_exact_jet_65):
    for t in (0.0, 0.15, -0.15, 0.3, -0.3):
        rep = hd.expand_at_point(pullback_exact_jet_65, pullback_oracle.metric,
                                 np.array([t, 0.0, 0.0]),
                                 spacing=pullback_exact_jet_65["spacing"])
        assert rep["P_structure_ok"]
        assert rep["decay_exponent"] >= 2.5


def test_10_holder_exponent_meter():
    t = np.linspace(-0.5, 0.5, 257)
    for beta in (0.3, 0.5, 0.7):
        g = t + 0.2 * np.abs(t) ** (1.0 + beta)
        alpha_hat, _ = norms.fit_holder_exponent(t, g)
        assert abs(alpha_hat - beta) <= 0.1


def _split_slope(oracle, samples, fbm, f=None):
    spec = ProblemSpec(oracle.metric, f, None, None)
    pair = solve_split(spec, samples, fbm)
    radii = dyadic_radii(2 * samples.grid.hgrid, 0.4, base=np.sqrt(2.0))
    st = shell_stats(pair.dist_to_fb.ravel(), np.abs(pair.u_tilde).ravel(),
                     radii)
    slope, _ = loglog_slope([s["r"] for s in st], [s["max"] for s in st])
    return slope


@pytest.mark.xfail(reason="generic solutions of the penalized auxiliary "
                   "equation carry an r^(sqrt(5)/2) corner mode, so the "
                   "homogeneous decay exponent saturates near 1.1",
                   strict=True)
def test_11a_splitting_decay_homogeneous(pullback_oracle, pullback_samples_65,
                                         pullback_fbm_65):
    slope = _split_slope(pullback_oracle, pullback_samples_65,
                         pullback_fbm_65)
    assert slope >= 1.5


def test_11b_splitting_decay_inhomogeneous(pullback_oracle,
                                           pullback_samples_65,
                                           pullback_fbm_65):
    f = lambda pts: np.full(pts.shape[:-1], 0.1)
    slope = _split_slope(pullback_oracle, pullback_samples_65,
                         pullback_fbm_65, f=f)
    assert slope >= 1.0


def test_12_diffeomorphism_family():
    rng = np.random.default_rng(11)
    y = rng.uniform(-1, 1, (300, 3))
    y[:, 1] = np.abs(y[:, 1])
    y[:, 2] = -np.abs(y[:, 2])

    assert np.abs(hd.flow_diffeomorphism(np.array([0.0]), y) - y).max() <= 1e-10

    a = np.array([0.25])
    moved = hd.flow_diffeomorphism(a, y)
    outside = (np.abs(y[:, 0]) >= 0.75) | (y[:, 1] ** 2 + y[:, 2] ** 2 >= 0.5)
    assert np.abs(moved[outside] - y[outside]).max() <= 1e-10
    assert np.abs(moved[:, 1:] - y[:, 1:]).max() == 0.0

    # smoothness in the parameter: bounded second differences across a-grid
    agrid = np.linspace(-0.3, 0.3, 13)
    vals = np.stack([hd.flow_diffeomorphism(np.array([s]), y)[:, 0]
                     for s in agrid])
    da = agrid[1] - agrid[0]
    second = (vals[2:] - 2 * vals[1:-1] + vals[:-2]) / da ** 2
    assert np.isfinite(second).all()
    assert np.abs(second).max() <= 10.0


def test_13_pipeline_determinism(tmp_path):
    cfg = {"dim": 3,
           "grid": {"n_per_axis": 33},
           "metric": {"kind": "pullback",
                      "h": {"kind": "poly",
                            "coefficients": [0.0, 1.0, 0.1]}},
           "stages": ["oracle", "analyze-fb", "hodograph"],
           "legendre": {"ny": 33, "deg": 3, "radius": 0.4}}
    cfgpath = tmp_path / "config.json"
    cfgpath.write_text(json.dumps(cfg))
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    for out in (out1, out2):
        rc = cli.main(["pipeline", "--config", str(cfgpath),
                       "--out", str(out)])
        assert rc == 0
    names = sorted(os.listdir(out1))
    assert names == sorted(os.listdir(out2))
    for name in names:
        assert filecmp.cmp(out1 / name, out2 / name, shallow=False), name
