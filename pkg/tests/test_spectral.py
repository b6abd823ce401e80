import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from effdyn.dynamics import simulate_chain
from effdyn.errors import ConfigurationError, ConstraintError, ReversibilityRequiredError
from effdyn.fixtures import fixture, random_feasible_tuple
from effdyn.operators import TransitionModel
from effdyn.spectral import (
    ObjectiveWeights,
    batch_means,
    check_constraints,
    dirichlet_energy,
    dirichlet_form,
    ergodic_energy,
    implied_timescales,
    solve_spectrum,
    vamp1_score,
    variational_score,
)
from oracles import dirichlet_loop, eigenvalues_general
from strategies import chains


def test_two_state_spectrum(two_state):
    assert np.allclose(solve_spectrum(two_state).eigenvalues, [1.0, 0.7], atol=1e-12)


def test_bd3_spectrum_and_eigenvectors(bd3):
    res = solve_spectrum(bd3)
    # characteristic polynomial of the bd3 matrix: -lambda (lambda - 1)(lambda - 1/2)
    roots = np.sort(np.roots(np.poly(np.array(bd3.P))).real)[::-1]
    assert np.allclose(res.eigenvalues, roots, atol=1e-12)
    assert np.allclose(res.eigenvalues, [1.0, 0.5, 0.0], atol=1e-12)
    phi1, phi2 = res.eigenvectors[:, 1], res.eigenvectors[:, 2]
    assert abs(abs(np.dot(phi1, [1, 0, -1])) / (np.linalg.norm(phi1) * math.sqrt(2)) - 1) < 1e-12
    assert abs(abs(np.dot(phi2, [1, -1, 1])) / (np.linalg.norm(phi2) * math.sqrt(3)) - 1) < 1e-12


def test_identity_spectrum():
    res = solve_spectrum(TransitionModel(np.eye(4), np.full(4, 0.25)))
    assert np.allclose(res.eigenvalues, 1.0, atol=1e-14)


def test_spectrum_requires_reversibility():
    with pytest.raises(ReversibilityRequiredError):
        solve_spectrum(fixture("3cycle-biased"))


@given(chains(2, 14))
def test_spectrum_invariants(model):
    res = solve_spectrum(model)
    lam, phi = res.eigenvalues, res.eigenvectors
    assert np.allclose(lam, eigenvalues_general(model.P), atol=1e-9)
    assert abs(lam[0] - 1) < 1e-10
    assert np.ptp(phi[:, 0]) < 1e-8
    G = phi.T @ (model.mu[:, None] * phi)
    assert np.max(np.abs(G - np.eye(model.n))) < 1e-8
    assert np.all(lam > -1) and np.all(lam <= 1 + 1e-10)
    for i in range(model.n):
        k = np.argmax(np.abs(phi[:, i]))
        assert phi[k, i] > 0


@given(chains(3, 12), st.integers(0, 2**32 - 1))
def test_eigen_expansion_of_powers(model, seed):
    res = solve_spectrum(model)
    f = np.random.default_rng(seed).standard_normal(model.n)
    coef = res.eigenvectors.T @ (model.mu * f)
    for k in (1, 2, 5):
        lhs = np.linalg.matrix_power(np.array(model.P), k) @ f
        rhs = res.eigenvectors @ (res.eigenvalues**k * coef)
        assert np.max(np.abs(lhs - rhs)) < 1e-8


# -- Dirichlet form ----------------------------------------------------------------


def test_dirichlet_examples(two_state):
    assert dirichlet_energy(two_state, [3.0, 3.0]) == 0.0
    assert abs(dirichlet_energy(two_state, [0.0, 1.0]) - 1 / 15) < 1e-15


@given(chains(), st.integers(0, 2**32 - 1))
def test_dirichlet_matches_loop_oracle(model, seed):
    rng = np.random.default_rng(seed)
    f, h = rng.standard_normal(model.n), rng.standard_normal(model.n)
    P, mu = model.P.tolist(), model.mu.tolist()
    assert abs(dirichlet_energy(model, f) - dirichlet_loop(P, mu, f)) < 1e-12
    # polarization: E(f, h) = (E(f + h) - E(f - h)) / 4
    polar = (dirichlet_loop(P, mu, f + h) - dirichlet_loop(P, mu, f - h)) / 4
    assert abs(dirichlet_form(model, f, h) - polar) < 1e-12


def test_dirichlet_on_nonreversible_chain_uses_reversible_part():
    m = fixture("3cycle-biased")
    f = np.array([0.0, 1.0, 3.0])
    assert abs(dirichlet_energy(m, f) - dirichlet_loop(m.P.tolist(), m.mu.tolist(), f)) < 1e-14


@given(chains())
def test_eigenvector_energy(model):
    res = solve_spectrum(model)
    for i in range(model.n):
        assert abs(dirichlet_energy(model, res.eigenvectors[:, i]) - (1 - res.eigenvalues[i])) < 1e-8


# -- scores ------------------------------------------------------------------------


def test_weights_validation():
    with pytest.raises(ConfigurationError):
        ObjectiveWeights((1.0, 2.0))
    with pytest.raises(ConfigurationError):
        ObjectiveWeights((1.0, 0.0))
    assert ObjectiveWeights.ones(3).values == (1.0, 1.0, 1.0)


def test_bd3_variational_examples(bd3, rng):
    res = solve_spectrum(bd3)
    phi = res.eigenvectors[:, 1:]
    assert abs(variational_score(bd3, phi, [1, 1]) - 1.5) < 1e-12
    a = math.pi / 7
    R = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    assert abs(variational_score(bd3, phi @ R, [1, 1]) - 1.5) < 1e-10
    for _ in range(50):
        F = random_feasible_tuple(rng, bd3.mu, 2)
        assert variational_score(bd3, F, [1, 1]) >= 1.5 - 1e-8
    assert abs(vamp1_score(bd3, phi, [1, 1]) - 0.5) < 1e-12


def test_constraint_violations_are_reported(bd3):
    with pytest.raises(ConstraintError) as err:
        variational_score(bd3, np.ones(3))
    assert err.value.offending[0][0] == "mean"
    F = np.column_stack([[1.0, 0.0, -1.0], [2.0, 0.0, -2.0]])
    with pytest.raises(ConstraintError) as err:
        check_constraints(bd3.mu, F)
    kinds = {o[0] for o in err.value.offending}
    assert kinds == {"gram"}
    with pytest.raises(ConstraintError):
        vamp1_score(bd3, [1.0, 1.0, 1.0])


@given(chains(3, 12), st.integers(0, 2**32 - 1))
def test_variational_principle(model, seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, model.n))
    w = np.sort(rng.uniform(0.1, 2.0, m))[::-1]
    res = solve_spectrum(model, m)
    bound = float(np.sum(w * (1 - res.eigenvalues[1:])))
    attained = variational_score(model, res.eigenvectors[:, 1:], w)
    assert abs(attained - bound) < 1e-10
    for _ in range(5):
        F = random_feasible_tuple(rng, model.mu, m)
        score = variational_score(model, F, w)
        assert score >= bound - 1e-8
        assert abs(vamp1_score(model, F, w) + score - w.sum()) < 1e-8
        if m == 1:
            assert abs(vamp1_score(model, F) - (1 - dirichlet_energy(model, F[:, 0]))) < 1e-10


# -- ergodic estimator -------------------------------------------------------------


def test_ergodic_energy_constant_is_zero(two_state):
    chain = simulate_chain(two_state.P, 1000, seed=0)
    assert ergodic_energy(chain, [2.0, 2.0]).value == 0.0


def test_ergodic_energy_two_state(two_state):
    chain = simulate_chain(two_state.P, 1_000_000, seed=42)
    assert ergodic_energy(chain, [0.0, 1.0]).within(1 / 15, 3)


def test_ergodic_energy_weighted_vector(bd4):
    chain = simulate_chain(bd4.P, 1_000_000, seed=9)
    F = np.column_stack([[0.0, 1.0, 2.0, 3.0], [1.0, -1.0, 1.0, -1.0]])
    w = [2.0, 0.5]
    target = 2.0 * dirichlet_energy(bd4, F[:, 0]) + 0.5 * dirichlet_energy(bd4, F[:, 1])
    assert ergodic_energy(chain, F, weights=w).within(target, 3)


def test_batch_means_needs_enough_samples():
    with pytest.raises(ConfigurationError):
        batch_means(np.ones(5))
    est = batch_means(np.arange(40.0))
    assert est.value == 19.5 and est.n_samples == 40


# -- timescales --------------------------------------------------------------------


def test_implied_timescales(bd3):
    t = implied_timescales([1 / math.e, 0.0, -0.3, 1.0], lag=1.0)
    assert abs(t[0] - 1.0) < 1e-15
    assert math.isnan(t[1]) and math.isnan(t[2]) and math.isinf(t[3])
    res = solve_spectrum(bd3)
    assert abs(res.timescales()[1] - 1.4426950408889634) < 1e-12
