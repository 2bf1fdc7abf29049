"""Free boundary extraction, vanishing order, asymptotic profiles."""

import numpy as np
import pytest

from thinfb.free_boundary import (extract_sets, estimate_vanishing_order,
                                  fit_asymptotic_profile,
                                  check_asymptotic_decay)


def test_flat_free_boundary_is_the_coordinate_line(model_samples_65):
    fbm = extract_sets(model_samples_65)
    h = model_samples_65.grid.hgrid
    assert np.abs(fbm.graph_g).max() <= h          # x_2 = 0 within one cell
    nu0 = fbm.normal_at(np.zeros(3))
    assert np.abs(nu0 - np.array([0.0, 1.0, 0.0])).max() < 5e-2


def test_pullback_graph_matches_generator(pullback_oracle, pullback_samples_65,
                                          pullback_fbm_65):
    fbm = pullback_fbm_65
    h = pullback_samples_65.grid.hgrid
    err = np.abs(fbm.graph_g - pullback_oracle.h(fbm.graph_x)).max()
    assert err <= 2 * h
    nu0 = fbm.normal_at(np.zeros(3))
    assert np.abs(nu0 - np.array([-1.0, 1.0, 0.0]) / np.sqrt(2)).max() < 5e-2


def test_partition_is_exclusive_and_exhaustive(pullback_samples_65,
                                               pullback_fbm_65):
    thin = pullback_samples_65.grid.masks()["thin_plane"]
    c, p = pullback_fbm_65.contact_nodes, pullback_fbm_65.positivity_nodes
    assert not np.any(c & p)
    assert np.array_equal(c | p, thin)


def test_vanishing_order_at_regular_point(model_samples_65):
    kappa = estimate_vanishing_order(model_samples_65, np.zeros(3))
    assert abs(kappa - 1.5) < 0.05


def test_vanishing_order_away_from_boundary_is_higher(model_samples_65):
    # at an interior contact point the solution vanishes identically nearby,
    # so the estimator sees a much larger order on its smallest shells
    with pytest.raises(ValueError):
        estimate_vanishing_order(model_samples_65,
                                 np.array([0.0, -0.9, 0.0]),
                                 radii=[0.02, 0.03, 0.04])


def test_profile_fit_flat_amplitude(model_samples_65):
    fbm = extract_sets(model_samples_65)
    prof = fit_asymptotic_profile(model_samples_65, fbm, np.zeros(3))
    assert abs(prof.amplitude - 1.0) < 2e-2
    assert abs(prof.nu_A_nu - 1.0) < 1e-10


def test_profile_fit_pullback(pullback_samples_65, pullback_fbm_65):
    prof = fit_asymptotic_profile(pullback_samples_65, pullback_fbm_65,
                                  np.zeros(3))
    assert abs(prof.amplitude - 1.0) < 2e-2
    assert abs(prof.a_vert - 1.0) < 5e-2
    assert abs(prof.b_vertical - 1.5 * prof.amplitude
               / np.sqrt(prof.a_vert)) < 1e-12


def test_asymptotic_decay_orders(pullback_oracle, pullback_samples_65,
                                 pullback_fbm_65):
    prof = fit_asymptotic_profile(pullback_samples_65, pullback_fbm_65,
                                  np.zeros(3))
    rep = check_asymptotic_decay(pullback_samples_65, prof, pullback_fbm_65,
                                 grad_field=pullback_oracle.w_exact.gradient)
    assert rep["order_0"]["exponent"] > 1.4  # order 0: expect ~3/2 or better
    assert rep["order_1"]["exponent"] > 0.45  # order 1: expect ~1/2 or better
