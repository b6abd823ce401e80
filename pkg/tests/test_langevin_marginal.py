import numpy as np
import pytest
from scipy.special import ndtr

from effdyn.dynamics import Potential, SimConfig, subsample
from effdyn.errors import ConfigurationError
from effdyn.fixtures import fixture
from effdyn.langevin_marginal import (
    detailed_balance_report,
    gibbs_density,
    marginal_model,
    scaling_study,
    velocity_variance,
)
from effdyn.operators import Grid, build_analytic_em, build_counts, detailed_balance_residual
from effdyn.spectral import batch_means

HARMONIC_GRID = Grid(((-3.0, 3.0, 12),))
DW_GRID = Grid(((-2.0, 2.0, 16),))


@pytest.fixture(scope="module")
def harmonic_run():
    # tau = lag * dt = 0.5
    cfg = SimConfig(1.0, 0.005, 10_000_000, seed=1, gamma=1.0, extent=HARMONIC_GRID.extent)
    return marginal_model(Potential("harmonic"), cfg, 100, HARMONIC_GRID)


@pytest.fixture(scope="module")
def double_well_run():
    cfg = SimConfig(2.0, 0.002, 10_000_000, seed=1, gamma=1.0, extent=DW_GRID.extent)
    return marginal_model(Potential("double-well-1d"), cfg, 250, DW_GRID)


def test_gibbs_density_quadrature():
    g = Grid(((-1.0, 1.0, 4),))
    pot = Potential("harmonic")
    d = gibbs_density(pot, 1.0, g, sub=400)
    edges = np.linspace(-1, 1, 5)
    exact = ndtr(edges[1:]) - ndtr(edges[:-1])
    assert np.max(np.abs(d - exact / exact.sum())) < 1e-6


def test_harmonic_marginal_is_reversible(harmonic_run):
    rep = detailed_balance_report(
        harmonic_run.model, gibbs_density(Potential("harmonic"), 1.0, HARMONIC_GRID), states=harmonic_run.states
    )
    assert rep.verdict and rep.max_z < 5
    assert rep.n_samples > 90_000
    assert rep.to_dict()["verdict"] == "pass"


def test_symmetrized_counts_remove_the_residual(harmonic_run):
    sym = build_counts(subsample(harmonic_run.trajectory, 100), HARMONIC_GRID, reversible=True)
    assert detailed_balance_residual(sym) < 1e-12


def test_velocity_variance_matches_inverse_beta(harmonic_run):
    (est,) = velocity_variance(harmonic_run.trajectory)
    assert est.within(1.0, 3)


def test_double_well_marginal(double_well_run):
    pot = Potential("double-well-1d")
    gibbs = gibbs_density(pot, 2.0, DW_GRID)
    rep = detailed_balance_report(double_well_run.model, gibbs, states=double_well_run.states)
    assert rep.verdict
    cells = DW_GRID.cell_index(double_well_run.trajectory.positions)
    for c in range(DW_GRID.n_cells):
        assert batch_means((cells == c).astype(float)).within(gibbs[c], 3)


def test_analytic_model_passes_without_counts():
    m = build_analytic_em(Potential("harmonic"), 1.0, 0.1, Grid(((-5.0, 5.0, 30),)))
    rep = detailed_balance_report(m)
    assert rep.verdict and rep.residual < 1e-6


def test_three_cycle_fails():
    rep = detailed_balance_report(fixture("3cycle-biased"))
    assert not rep.verdict and rep.to_dict()["verdict"] == "fail"


def test_reference_size_is_checked(harmonic_run):
    with pytest.raises(ConfigurationError):
        detailed_balance_report(harmonic_run.model, np.ones(5))


def test_needs_gamma():
    with pytest.raises(ConfigurationError):
        marginal_model(Potential("harmonic"), SimConfig(1.0, 0.01, 100), 1, HARMONIC_GRID)


@pytest.mark.parametrize(
    "pot,beta,dt,lag,grid",
    [(Potential("harmonic"), 1.0, 0.005, 100, HARMONIC_GRID), (Potential("double-well-1d"), 2.0, 0.002, 250, DW_GRID)],
    ids=["harmonic", "double-well"],
)
def test_residual_shrinks_like_inverse_sqrt_n(pot, beta, dt, lag, grid):
    study = scaling_study(pot, beta, 1.0, dt, lag, grid, base_steps=1_000_000, doublings=3, replicas=4, seed=40)
    assert -0.75 < study.slope < -0.25
    # monotone within Monte Carlo noise
    assert np.all(study.rms[1:] < 1.1 * study.rms[:-1])
