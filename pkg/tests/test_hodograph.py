"""Hodograph transform, Legendre function, nonlinear operator and expansion."""

import numpy as np
import pytest

from thinfb import hodograph as hd
from thinfb.grushin import GrushinPolynomial
from thinfb.metrics import make_flat
from thinfb.free_boundary import AsymptoticProfile


def model_cubic():
    """v0 = -(4/27)(y_n^3 - 3 y_n y_p^2) as an exact polynomial."""
    from fractions import Fraction
    c = Fraction(4, 27)
    return (GrushinPolynomial.monomial((0, 3, 0), 2, -c)
            + GrushinPolynomial.monomial((0, 1, 2), 2, 3 * c))


def quarter_pts(m=9):
    ax = np.linspace(-0.5, 0.5, 2 * m - 1)
    yn = np.linspace(0.0, 0.5, m)
    yp = np.linspace(-0.5, 0.0, m)
    T, N, P = np.meshgrid(ax, yn, yp, indexing="ij")
    return np.stack([T, N, P], axis=-1), yn[1] - yn[0]


def test_model_cubic_solves_nonlinear_equation():
    pts, h = quarter_pts()
    jet = hd.polynomial_jet(model_cubic().as_float(), pts)
    res = hd.nonlinear_residual_F(jet, make_flat(3), spacing=h)
    assert res["max_abs"] == 0.0


def test_linearization_at_model_is_grushin_type():
    pts, h = quarter_pts()
    jet = hd.polynomial_jet(model_cubic().as_float(), pts)
    lin = hd.linearize_F(jet, make_flat(3))
    r2 = pts[..., 1] ** 2 + pts[..., 2] ** 2
    ref = np.zeros(pts.shape[:-1] + (3, 3))
    ref[..., 0, 0] = (64.0 / 81.0) * r2     # -J at the model cubic
    ref[..., 1, 1] = 1.0
    ref[..., 2, 2] = 1.0
    assert np.abs(lin["c2"] - ref).max() < 1e-9
    assert np.abs(lin["c1"]).max() < 1e-9
    assert np.abs(lin["c0"]).max() < 1e-9


def test_gateaux_matches_reference_operator():
    pts, _ = quarter_pts()
    jet = hd.polynomial_jet(model_cubic().as_float(), pts)
    probes = [GrushinPolynomial.monomial((2, 0, 0), 2),
              GrushinPolynomial.monomial((1, 1, 0), 2),
              GrushinPolynomial.monomial((0, 2, 2), 2)]
    for p in probes:
        got = hd.apply_gateaux(jet, make_flat(3), p)
        want = hd.grushin_reference_apply(p.as_float(), pts,
                                          factor=64.0 / 81.0)
        assert np.abs(got - want).max() < 1e-7


def test_blowup_of_model_profile_is_model_cubic():
    prof = AsymptoticProfile(np.zeros(3), 1.0,
                             np.array([0.0, 1.0, 0.0]), np.eye(3))
    poly = hd.blowup_legendre(prof, np.zeros(3))
    pts, _ = quarter_pts()
    diff = poly.as_float().eval(pts) - model_cubic().as_float().eval(pts)
    assert np.abs(diff).max() < 1e-14


def test_cubic_profile_fit_recovers_coefficients():
    pts, _ = quarter_pts()
    jet = hd.polynomial_jet(model_cubic().as_float(), pts)
    prof = hd.fit_cubic_profile(jet, np.zeros(3))
    assert abs(prof["A0"] + 8.0 / 9.0) < 1e-10
    assert abs(prof["A1"] - 8.0 / 9.0) < 1e-10
    assert abs(prof["dn"]) < 1e-10
    assert abs(prof["B0"]) < 1e-10


def test_expansion_at_origin_of_model_cubic_is_exact():
    pts, h = quarter_pts()
    jet = hd.polynomial_jet(model_cubic().as_float(), pts)
    exp = hd.expand_at_point(jet, make_flat(3), np.zeros(3), spacing=h)
    assert exp["P_structure_ok"]
    assert abs(exp["c0"]) < 1e-12
    assert np.nanmax(np.abs(exp["E"][exp["mask"]])) < 1e-12


def test_quadrant_law_on_model_samples(model_hodograph_65):
    rep = hd.quadrant_report(model_hodograph_65)
    assert rep["misclassified_beyond_collar"] == 0
    assert rep["jacobian_negative_everywhere"]
    assert rep["jacobian_max_interior"] < 0.0


def test_round_trip_on_model_samples(model_hodograph_65):
    assert model_hodograph_65.round_trip_error() < 1e-8


def test_dual_and_boundary_residuals(model_legendre_65):
    assert model_legendre_65.dual_residual() < 1e-12
    assert model_legendre_65.boundary_residuals()["v_on_yn0"] < 1e-10


def test_resampled_model_matches_cubic(model_resampled_65):
    res = model_resampled_65
    y = res["y"]
    r = np.hypot(y[..., -2], y[..., -1])
    keep = res["covered"] & (r >= 4.0 * res["spacing"])
    vref = model_cubic().as_float().eval(y)
    rel = np.abs(res["v"] - vref)[keep].max() / np.abs(vref[keep]).max()
    assert rel < 1e-3


def test_oracle_jet_satisfies_nonlinear_equation(pullback_oracle,
                                                 pullback_exact_jet_65):
    res = hd.nonlinear_residual_F(pullback_exact_jet_65,
                                  pullback_oracle.metric,
                                  spacing=pullback_exact_jet_65["spacing"])
    assert res["max_abs"] < 1e-10


def test_flow_is_a_diffeomorphism_fixing_normals():
    rng = np.random.default_rng(7)
    y = rng.uniform(-1, 1, (200, 3))
    y[:, 1] = np.abs(y[:, 1])
    y[:, 2] = -np.abs(y[:, 2])
    a = np.array([0.2])
    assert np.abs(hd.flow_diffeomorphism(np.array([0.0]), y) - y).max() < 1e-10
    moved = hd.flow_diffeomorphism(a, y)
    assert np.abs(moved[:, 1:] - y[:, 1:]).max() == 0.0
    outside = np.abs(y[:, 0]) >= 0.75
    assert np.abs(moved[outside] - y[outside]).max() == 0.0
    back = hd.flow_diffeomorphism(-a, moved)
    assert np.abs(back - y).max() < 1e-6


def test_flow_rejects_wrong_direction_length():
    with pytest.raises(ValueError):
        hd.flow_diffeomorphism(np.array([0.1, 0.2]), np.zeros((4, 3)))
