import math

import numpy as np
import pytest
from hypothesis import given

from effdyn.cv_search import (
    CVFamily,
    eigen_comparison,
    effective_eigenvalues,
    rate_comparison,
    scan,
    timescale_objective,
)
from effdyn.dynamics import Potential
from effdyn.effective import CVAssignment, build_effective, lift
from effdyn.errors import ConfigurationError
from effdyn.fixtures import fixture, random_cv, random_reversible_chain
from effdyn.operators import Grid, build_analytic_em, reversible_part
from effdyn.spectral import solve_spectrum
from oracles import eigenvalues_general
from strategies import chains_with_cv

BD3_SPLIT = [[0], [1, 2]]
BD3_ENDS = [[0, 2], [1]]
BD4_MIDDLE = [[0], [1, 2], [3]]


# -- timescale objective ------------------------------------------------------------------


def test_timescale_objective_examples(bd3):
    full = solve_spectrum(bd3).eigenvalues
    assert abs(timescale_objective(bd3, CVAssignment.identity(3), m=2) - np.sum(1 - full[1:])) < 1e-12
    split = CVAssignment.from_lumps(BD3_SPLIT)
    # trace of [[1/2, 1/2], [1/6, 5/6]] minus one
    assert abs(timescale_objective(bd3, split) - 2 / 3) < 1e-12
    assert abs(timescale_objective(bd3, CVAssignment.from_lumps(BD3_ENDS)) - 1.0) < 1e-12


def test_timescale_objective_pads_missing_eigenvalues(bd4):
    cv = CVAssignment.from_lumps([[0, 1], [2, 3]])
    lam = effective_eigenvalues(bd4, cv, 3)
    assert lam[1] == 0.0 and lam[2] == 0.0
    assert abs(timescale_objective(bd4, cv, m=3, weights=[3, 2, 1]) - (3 * (1 - lam[0]) + 3)) < 1e-12
    with pytest.raises(ConfigurationError):
        timescale_objective(bd4, cv, m=2, weights=[1.0])


@given(chains_with_cv())
def test_timescale_objective_is_the_lifted_variational_score(pair):
    model, cv = pair
    m = min(2, cv.k - 1)
    timescale_objective(model, cv, m=m, verify=True)


# -- eigenvalue comparison ------------------------------------------------------------------


def test_fiber_constant_eigenfunction_is_preserved(bd3):
    cv = CVAssignment.from_lumps(BD3_ENDS)
    eff = build_effective(bd3, cv)
    spec = solve_spectrum(eff.model)
    assert np.allclose(eigenvalues_general(eff.P), [1.0, 0.0], atol=1e-15)
    assert abs(spec.eigenvalues[1]) < 1e-12
    lifted = lift(cv, spec.eigenvectors[:, 1])
    assert np.max(np.abs(lifted - np.array([1.0, -1.0, 1.0]))) < 1e-12
    rep = eigen_comparison(bd3, cv, 2)
    # lambda_2 = 0 pairs with lambda~_1 = 0 exactly
    assert abs(rep.full[1] - rep.effective[0]) < 1e-12


def test_eigen_comparison_examples(bd3, bd4):
    rep = eigen_comparison(bd3, CVAssignment.from_lumps(BD3_SPLIT), 1)
    assert abs(rep.effective[0] - 1 / 3) < 1e-12 and rep.effective[0] <= rep.full[0]
    ident = eigen_comparison(bd4, CVAssignment.identity(4), 3)
    assert np.max(np.abs(ident.gaps)) < 1e-10
    rows = ident.rows()
    assert [r["i"] for r in rows] == [1, 2, 3]


@given(chains_with_cv())
def test_eigen_comparison_claims(pair):
    model, cv = pair
    rep = eigen_comparison(model, cv, 3)
    k = min(3, cv.k - 1)
    assert np.all(rep.effective[:k] <= rep.full[:k] + 1e-10)
    assert np.nanmax(rep.residuals) < 1e-8


# -- rate comparison -------------------------------------------------------------------------


def test_rate_comparison_bd4(bd4):
    rc = rate_comparison(bd4, CVAssignment.from_lumps(BD4_MIDDLE), [0], [2])
    assert abs(rc.k_full - 1 / 48) < 1e-15
    assert np.allclose(rc.q_eff, [0, 0.5, 1], atol=1e-15)
    assert abs(rc.k_eff - 1 / 32) < 1e-15 and abs(rc.gap - 1 / 96) < 1e-15
    assert rc.residual < 1e-12


def test_rate_comparison_identity(bd4):
    rc = rate_comparison(bd4, CVAssignment.identity(4), [0], [3])
    assert abs(rc.k_eff - rc.k_full) < 1e-15 and rc.gap < 1e-30


def test_fiber_constant_committor_is_preserved():
    m = fixture("bd4-dup")
    cv = CVAssignment.from_lumps(BD4_MIDDLE)
    rc = rate_comparison(m, cv, [0], [-1])
    assert abs(rc.q[1] - rc.q[2]) < 1e-15
    assert abs(rc.k_eff - rc.k_full) < 1e-12
    assert np.max(np.abs(lift(cv, rc.q_eff) - rc.q)) < 1e-12


def test_rate_identity_population():
    rng = np.random.default_rng(5)
    for _ in range(200):
        n = int(rng.integers(4, 13))
        model = random_reversible_chain(rng, n)
        cv = random_cv(rng, n, int(rng.integers(3, n + 1)))
        rc = rate_comparison(model, cv, [0], [cv.k - 1])
        assert rc.residual < 1e-10
        assert rc.k_eff >= rc.k_full - 1e-10


# -- scans -------------------------------------------------------------------------------------


def test_family_validation():
    with pytest.raises(ConfigurationError):
        CVFamily("spiral", (0.0,))
    with pytest.raises(ConfigurationError):
        CVFamily("linear-angle-2d", (0.0,))


def test_scan_explicit_list(bd4):
    members = (CVAssignment.from_lumps([[0, 2], [1, 3]]), CVAssignment.from_lumps([[0, 1], [2, 3]]))
    fam = CVFamily("explicit-list", (0, 1), members=members)
    kl = scan(bd4, fam, "kl")
    assert kl.argmin == 1.0
    assert kl.values[1] < kl.values[0]
    ts = scan(bd4, fam, "timescale")
    assert ts.argmin == 1.0
    with pytest.raises(ConfigurationError):
        scan(bd4, fam, "entropy")


def test_scan_ties_go_to_smallest_parameter(bd4):
    cv = CVAssignment.from_lumps([[0, 1], [2, 3]])
    fam = CVFamily("explicit-list", (1, 0), members=(cv, cv))
    assert scan(bd4, fam).argmin == 0.0


def test_scan_rejects_degenerate_family(bd4):
    one = CVAssignment(np.zeros(4), 1)
    with pytest.raises(ConfigurationError):
        scan(bd4, CVFamily("explicit-list", (0,), members=(one,)))


@pytest.fixture(scope="module")
def small_dw2d():
    g = Grid(((-2.0, 2.0, 30), (-2.0, 2.0, 20)))
    return g, reversible_part(build_analytic_em(Potential("double-well-2d"), 3.0, 0.01, g))


def test_double_well_scan_prefers_x_axis(small_dw2d):
    g, model = small_dw2d
    fam = CVFamily.angles(g, 8, 10)
    for objective in ("timescale", "kl"):
        res = scan(model, fam, objective)
        assert res.argmin == 0.0
        assert res.values[0] < res.values[4]
    # endpoints from independent oracles
    for theta in (0.0, math.pi / 2):
        cv = CVAssignment.linear_angle(g, theta, 10)
        lam = eigenvalues_general(build_effective(model, cv).P)
        assert abs(timescale_objective(model, cv) - (1 - lam[1])) < 1e-9


def test_scan_is_deterministic_and_threading_invariant(small_dw2d):
    g, model = small_dw2d
    fam = CVFamily.angles(g, 4, 6)
    a = scan(model, fam, "kl", rate_bins=([0], [-1]))
    b = scan(model, fam, "kl", rate_bins=([0], [-1]), threads=2)
    assert a.rows() == b.rows()
    assert all(r["k_eff"] >= r["k_full"] - 1e-10 for r in a.rows())


def test_isotropic_harmonic_respects_grid_symmetry():
    g = Grid(((-5.0, 5.0, 30), (-5.0, 5.0, 30)))
    model = build_analytic_em(Potential("harmonic", {"dim": 2}), 1.0, 0.5, g)
    fam = CVFamily.angles(g, 8, 10)
    for objective in ("timescale", "kl"):
        v = scan(model, fam, objective).values
        # the square grid is invariant under x <-> y and x -> -x; centers lying
        # exactly on a bin edge can fall on either side, hence the looser bound
        for i in range(1, 8):
            assert abs(v[i] - v[8 - i]) < 1e-6
        assert abs(v[0] - v[4]) < 1e-6
        assert abs(v[2] - v[6]) < 1e-6
    # off the lattice symmetries the partition is not rotation invariant
    assert np.ptp(v) > 1e-3
