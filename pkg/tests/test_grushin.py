"""Quasi-metric geometry, weighted polynomial algebra, Grushin BVP tools."""

from fractions import Fraction

import numpy as np
import pytest

from thinfb.grushin import (quasi_metric, dilate, dist_to_edge,
                            GrushinPolynomial, apply_grushin,
                            homogeneous_basis, harmonic_polynomials,
                            QuarterGridField, solve_mixed_bvp,
                            grushin_residual, campanato_decay)


def test_quasi_metric_is_exactly_homogeneous():
    rng = np.random.default_rng(0)
    p = rng.uniform(-1, 1, (100, 3))
    q = rng.uniform(-1, 1, (100, 3))
    d1 = quasi_metric(p, q)
    for lam in (0.5, 2.0):
        d2 = quasi_metric(dilate(lam, p), dilate(lam, q))
        assert np.abs(d2 - lam * d1).max() < 1e-13


def test_quasi_triangle_inequality_constant():
    rng = np.random.default_rng(1)
    p, q, r = rng.uniform(-1, 1, (3, 400, 3))
    lhs = quasi_metric(p, q)
    rhs = quasi_metric(p, r) + quasi_metric(r, q)
    assert (lhs <= 1.2 * rhs).all()


def test_distance_to_edge():
    pts = np.array([[0.3, 0.4, -0.3], [1.0, 0.0, 0.0]])
    assert np.abs(dist_to_edge(pts) - [0.5, 0.0]).max() < 1e-15


def test_polynomial_weighted_degrees():
    # tangential variables carry weight 2, normal variables weight 1
    assert GrushinPolynomial.monomial((1, 0, 0), 2).weighted_degree() == 2
    assert GrushinPolynomial.monomial((0, 3, 0), 2).weighted_degree() == 3
    assert GrushinPolynomial.monomial((1, 1, 2), 2).weighted_degree() == 5


def test_apply_grushin_on_harmonic_cubic():
    v = (GrushinPolynomial.monomial((0, 3, 0), 2)
         + GrushinPolynomial.monomial((0, 1, 2), 2, -3))
    assert apply_grushin(v).coeffs == {}


def test_homogeneous_basis_dimensions():
    # weighted-homogeneous monomial counts on the quarter space, n = 2
    assert len(homogeneous_basis(1, 2)) == 2     # y_n, y_{n+1}
    assert len(homogeneous_basis(2, 2)) == 4     # y_1, y_n^2, y_n y_p, y_p^2
    assert len(homogeneous_basis(3, 2)) == 6


def test_harmonic_basis_spans():
    # weighted degrees: y_n -> 1, y_1 y_n -> 3, y_n^3 - 3 y_n y_p^2 -> 3
    counts = [len(harmonic_polynomials(k, 2)) for k in (1, 2, 3, 4)]
    assert counts == [1, 0, 2, 0]
    k1 = harmonic_polynomials(1, 2)
    assert k1[0].coeffs == {(0, 1, 0): 1}
    k3 = harmonic_polynomials(3, 2)
    spanned = {frozenset(p.coeffs.items()) for p in k3}
    cubic = {(0, 3, 0): Fraction(-1), (0, 1, 2): Fraction(3)}
    mixed = {(1, 1, 0): Fraction(1)}
    assert spanned == {frozenset(cubic.items()), frozenset(mixed.items())}


def test_harmonic_polynomials_respect_boundary_conditions():
    for k in (1, 3, 5):
        for p in harmonic_polynomials(k, 2):
            assert p.vanishes_on_yn0()
            assert p.neumann_on_yp0()
            assert apply_grushin(p).coeffs == {}


def test_mixed_bvp_reproduces_harmonic_polynomial():
    probe = GrushinPolynomial.monomial((1, 1, 0), 2).as_float()
    u = solve_mixed_bvp(lambda p: np.zeros(p.shape[:-1]), probe.eval,
                        n=2, n_per_axis=33)
    exact = probe.eval(u.points())
    assert np.abs(u.values - exact).max() < 1e-10


def test_bvp_manufactured_solution_convergence():
    # u* = y_n^3 with f = Delta_G u* = 6 y_n; exact for the second-order stencil
    star = GrushinPolynomial.monomial((3, 0), 1).as_float()
    f = apply_grushin(star).as_float()
    errs = []
    for m in (33, 65, 129):
        u = solve_mixed_bvp(f.eval, star.eval, n=1, n_per_axis=m)
        errs.append(np.abs(u.values - star.eval(u.points())).max())
    if max(errs) > 1e-10:
        orders = np.diff(-np.log2(errs))
        assert orders.min() >= 1.8
    else:
        assert max(errs) <= 1e-10


def test_campanato_decay_of_degree5_harmonic():
    five = harmonic_polynomials(5, 2)
    assert len(five) >= 1
    u = QuarterGridField.from_function(five[0].as_float().eval, 2, 65)
    rep = campanato_decay(u, np.zeros(3))
    assert abs(rep["slope"] - 10.0) < 0.5


def test_grushin_residual_vanishes_for_harmonic():
    probe = GrushinPolynomial.monomial((1, 1, 0), 2).as_float()
    u = QuarterGridField.from_function(probe.eval, 2, 33)
    assert np.nanmax(np.abs(grushin_residual(u))) < 1e-10
