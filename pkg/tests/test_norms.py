"""Generalized Hölder seminorms in the quasi-metric and the X/Y norms."""

import json

import numpy as np
import pytest

from thinfb import norms
from thinfb.grushin import GrushinPolynomial as GP


def jet_of(beta, c=1):
    return norms.sample_quarter_jet(GP.monomial(beta, 2, c))


def test_holder_seminorm_of_constant_vanishes():
    rep = norms.grushin_holder_seminorm(jet_of((0, 0, 0)), 0.5)
    assert rep["seminorm"] == 0.0
    assert rep["lower_bound"]


def test_holder_seminorm_of_yn_is_one():
    # y_n is exactly 1-homogeneous for the dilations, Lipschitz constant 1
    rep = norms.grushin_holder_seminorm(jet_of((0, 1, 0)), 1.0)
    assert abs(rep["seminorm"] - 1.0) < 1e-12


def test_first_order_seminorm_uses_vector_fields():
    # d_n of y_n^2 is 2 y_n with constant 2 in the modified frame
    rep = norms.grushin_holder_seminorm(jet_of((0, 2, 0)), 1.0, k=1)
    assert abs(rep["seminorm"] - 2.0) < 1e-12


def test_seminorm_rejects_unsupported_order():
    with pytest.raises(ValueError):
        norms.grushin_holder_seminorm(jet_of((0, 1, 0)), 0.5, k=3)


def test_pair_sampling_rejects_empty_window():
    jet = jet_of((0, 1, 0))
    with pytest.raises(ValueError):
        norms.sample_pairs(jet, d_min=0.5, d_max=0.500001)


def test_y_norm_of_pure_linear_profile_is_zero():
    rep = norms.y_norm(jet_of((0, 1, 0), 2.5), 0.5)
    assert rep["f1_sup"] == 0.0
    assert rep["seminorm"] == 0.0


def test_y_norm_tangential_modulation():
    rep = norms.y_norm(jet_of((1, 1, 0)), 0.5)
    assert abs(rep["f0_seminorm"] - 1.0) < 1e-10
    assert abs(rep["seminorm"] - 1.1244378709979248) < 1e-10
    assert rep["f1_sup"] < 1e-12


def test_y_norm_is_homogeneous():
    one = norms.y_norm(jet_of((1, 1, 0)), 0.5)
    three = norms.y_norm(jet_of((1, 1, 0), 3), 0.5)
    assert three["seminorm"] == 3.0 * one["seminorm"]


def test_y_norm_of_radial_cube():
    f = lambda p: (p[..., 1] ** 2 + p[..., 2] ** 2) ** 1.5
    rep = norms.y_norm(norms.sample_quarter_jet(f), 1.0, eps=0.5)
    assert rep["f0_seminorm"] < 1e-10   # vanishing linear profile
    assert abs(rep["seminorm"] - 1.1150846816654005) < 1e-8


def test_y_norm_rejects_nonvanishing_trace():
    with pytest.raises(ValueError):
        norms.y_norm(jet_of((0, 0, 0)), 0.5)   # f = 1 on the edge


def test_x_norm_of_profile_cubics_is_zero():
    for beta in ((0, 3, 0), (0, 1, 0), (1, 1, 0), (0, 1, 2)):
        rep = norms.x_norm(jet_of(beta), 0.5)
        assert rep["seminorm"] == 0.0
        assert max(abs(v) for v in rep["remainder_sup"].values()) == 0.0


def test_x_norm_detects_noncubic_tangential_growth():
    rep = norms.x_norm(jet_of((2, 1, 0)), 0.5)
    assert rep["seminorm"] > 1.0
    assert rep["v_on_yn0"] < 1e-12
    assert rep["remainder_on_yn0"]["C1"] < 1e-10
    assert rep["remainder_on_yn0"]["Vp"] < 1e-10


def test_x_norm_needs_enough_normal_resolution():
    jet = norms.sample_quarter_jet(GP.monomial((0, 3, 0), 2), n_per_axis=4)
    with pytest.raises(ValueError):
        norms.x_norm(jet, 0.5)


def test_exponent_fit_exact_on_power_laws():
    t = np.linspace(-1, 1, 257)
    a, conf = norms.fit_holder_exponent(t, t ** 2)
    assert abs(a - 1.0) < 1e-12 and conf < 1e-10
    for beta in (0.3, 0.5, 0.7, 0.8):
        a, conf = norms.fit_holder_exponent(t, np.abs(t) ** (1 + beta))
        assert abs(a - beta) < 1e-12
        assert conf < 1e-10


def test_exponent_fit_input_validation():
    with pytest.raises(ValueError):
        norms.fit_holder_exponent(np.linspace(0, 1, 8), np.zeros(8))
    t = np.linspace(-1, 1, 64) ** 3
    with pytest.raises(ValueError):
        norms.fit_holder_exponent(t, t)


def test_report_scalars_is_json_safe():
    rep = norms.x_norm(jet_of((2, 1, 0)), 0.5)
    flat = norms.report_scalars(rep)
    json.dumps(flat)   # must not raise
