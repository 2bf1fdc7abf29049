"""Shared fixtures: oracles, solved fields and transforms are session-cached
since several test modules interrogate the same objects."""

import numpy as np
import pytest

from thinfb.metrics import (make_flat, make_model_oracle, make_pullback_oracle,
                            GraphGenerator, ProblemSpec, ScalarField)
from thinfb.solver import (HalfGrid, assemble, solve_signorini, sample_oracle,
                           residual_report)
from thinfb.free_boundary import extract_sets
from thinfb import hodograph as hd


@pytest.fixture(scope="session")
def flat_oracle():
    return make_model_oracle(3)


@pytest.fixture(scope="session")
def pullback_oracle():
    h = GraphGenerator("poly", {"coefficients": [0.0, 1.0, 0.1]})
    return make_pullback_oracle(h, dim=3)


@pytest.fixture(scope="session")
def flat_solution_65(flat_oracle):
    """Actual variational-inequality solve on the 65^3 half grid."""
    grid = HalfGrid(3, 65)
    spec = ProblemSpec(flat_oracle.metric, None, None,
                       ScalarField(3, flat_oracle.w_exact.value))
    op = assemble(spec, grid)
    sol = solve_signorini(op, spec, grid)
    return {"grid": grid, "spec": spec, "op": op, "solution": sol,
            "report": residual_report(sol, op)}


@pytest.fixture(scope="session")
def model_samples_65(flat_oracle):
    return sample_oracle(flat_oracle, HalfGrid(3, 65))


@pytest.fixture(scope="session")
def pullback_samples_33(pullback_oracle):
    return sample_oracle(pullback_oracle, HalfGrid(3, 33))


@pytest.fixture(scope="session")
def pullback_samples_65(pullback_oracle):
    return sample_oracle(pullback_oracle, HalfGrid(3, 65))


@pytest.fixture(scope="session")
def pullback_fbm_65(pullback_samples_65):
    return extract_sets(pullback_samples_65)


@pytest.fixture(scope="session")
def model_hodograph_65(flat_oracle, model_samples_65):
    return hd.hodograph_map(model_samples_65, oracle=flat_oracle, window=0.5)


@pytest.fixture(scope="session")
def model_legendre_65(model_hodograph_65, model_samples_65):
    return hd.legendre_transform(model_hodograph_65, model_samples_65)


@pytest.fixture(scope="session")
def model_resampled_65(model_legendre_65):
    return hd.resample_legendre(model_legendre_65, ny=33, deg=3, radius=0.4)


@pytest.fixture(scope="session")
def pullback_hodograph_65(pullback_oracle, pullback_samples_65):
    return hd.hodograph_map(pullback_samples_65, oracle=pullback_oracle,
                            window=0.5)


@pytest.fixture(scope="session")
def pullback_resampled_65(pullback_hodograph_65, pullback_samples_65):
    leg = hd.legendre_transform(pullback_hodograph_65, pullback_samples_65)
    return hd.resample_legendre(leg, ny=33, deg=3, radius=0.4)


@pytest.fixture(scope="session")
def pullback_resampled_33(pullback_oracle, pullback_samples_33):
    hmap = hd.hodograph_map(pullback_samples_33, oracle=pullback_oracle,
                            window=0.5)
    leg = hd.legendre_transform(hmap, pullback_samples_33)
    return hd.resample_legendre(leg, ny=33, deg=3, radius=0.4)


@pytest.fixture(scope="session")
def pullback_exact_jet_65(pullback_oracle, pullback_hodograph_65,
                          pullback_resampled_65):
    jet = hd.oracle_legendre_jet(pullback_oracle, pullback_hodograph_65,
                                 pullback_resampled_65["y"])
    jet["axes"] = pullback_resampled_65["axes"]
    jet["spacing"] = pullback_resampled_65["spacing"]
    return jet
