"""Discrete Signorini solver, oracle sampling and the auxiliary splitting."""

import numpy as np
import pytest

from thinfb.metrics import (make_model_oracle, make_pullback_oracle,
                            GraphGenerator, ProblemSpec, ScalarField)
from thinfb.solver import (HalfGrid, assemble, solve_signorini, sample_oracle,
                           residual_report, solve_split)
from thinfb.free_boundary import extract_sets
from thinfb._util import shell_stats, dyadic_radii, loglog_slope


def test_stiffness_rows_sum_to_zero(flat_solution_65):
    op = flat_solution_65["op"]
    rowsum = np.asarray(op.Q.sum(axis=1)).ravel()
    interior = flat_solution_65["grid"].masks()["interior"].ravel()
    assert np.abs(rowsum[interior]).max() < 1e-12


def test_solution_satisfies_kkt_conditions(flat_solution_65):
    rep = flat_solution_65["report"]
    assert rep["converged"]
    assert rep["w_nonneg_pass"]
    assert rep["flux_sign_pass"]
    assert rep["complementarity_pass"]
    assert rep["interior_residual_pass"]


def test_solve_recovers_model_solution(flat_solution_65, flat_oracle):
    sol = flat_solution_65["solution"]
    grid = flat_solution_65["grid"]
    w_ref = flat_oracle.w_exact(grid.points())
    rel = np.abs(sol.w - w_ref).max() / np.abs(w_ref).max()
    assert rel < 5e-3


def test_oracle_samples_obey_complementarity(pullback_samples_65):
    rep = residual_report(pullback_samples_65)
    assert rep["w_nonneg_pass"]
    assert rep["flux_sign_pass"]
    assert rep["complementarity_pass"]


def test_2d_solve_matches_oracle():
    oracle = make_model_oracle(2)
    grid = HalfGrid(2, 65)
    spec = ProblemSpec(oracle.metric, None, None,
                       ScalarField(2, oracle.w_exact.value))
    op = assemble(spec, grid)
    sol = solve_signorini(op, spec, grid)
    w_ref = oracle.w_exact(grid.points())
    assert np.abs(sol.w - w_ref).max() / np.abs(w_ref).max() < 5e-3


def test_splitting_reconstructs_solution(pullback_oracle, pullback_samples_65,
                                         pullback_fbm_65):
    spec = ProblemSpec(pullback_oracle.metric, None, None, None)
    pair = solve_split(spec, pullback_samples_65, pullback_fbm_65)
    w = pullback_samples_65.w
    assert np.abs(pair.u + pair.u_tilde - w).max() < 1e-10
    grid = pullback_samples_65.grid
    thin = grid.masks()["thin_plane"]
    clamped = np.zeros(w.shape, dtype=bool)
    clamped[thin] = pullback_fbm_65.contact_mask_at(grid.points()[thin])
    assert np.abs(pair.u_tilde[thin][clamped[thin]]).max() == 0.0


def test_splitting_trivial_for_flat_homogeneous(model_samples_65):
    oracle = make_model_oracle(3)
    fbm = extract_sets(model_samples_65)
    spec = ProblemSpec(oracle.metric, None, None, None)
    pair = solve_split(spec, model_samples_65, fbm)
    # zero divergence and zero inhomogeneity: the auxiliary part vanishes
    assert np.abs(pair.u_tilde).max() < 1e-10


def _split_decay(oracle, samples, fbm, f=None):
    spec = ProblemSpec(oracle.metric, f, None, None)
    pair = solve_split(spec, samples, fbm)
    grid = samples.grid
    radii = dyadic_radii(2 * grid.hgrid, 0.4, base=np.sqrt(2.0))
    st = shell_stats(pair.dist_to_fb.ravel(), np.abs(pair.u_tilde).ravel(),
                     radii)
    slope, _ = loglog_slope([s["r"] for s in st], [s["max"] for s in st])
    return slope


def test_splitting_decays_toward_free_boundary(pullback_oracle,
                                               pullback_samples_65,
                                               pullback_fbm_65):
    slope = _split_decay(pullback_oracle, pullback_samples_65, pullback_fbm_65)
    # corner-mode exponent of the penalized equation is sqrt(5)/2 ~ 1.118
    assert slope > 0.85
