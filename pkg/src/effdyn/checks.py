"""The invariant suite behind ``verify-all``.

Each check yields a ``CheckResult``. Exact checks compare a residual against a
fixed tolerance; statistical checks compare a Monte Carlo estimate against
its oracle in units of standard error. The suite is fully seeded, so two runs
with the same seed produce identical results.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cv_search import eigen_comparison, rate_comparison
from .dynamics import simulate_chain
from .effective import (
    CVAssignment,
    build_effective,
    compose_check,
    effective_adjoint,
    effective_of_adjoint,
    lemma_identity_check,
    lift,
)
from .fixtures import fixture, random_cv, random_feasible_tuple, random_reversible_chain
from .kl import FactorizedDensity, kl_decomposition, kl_score, mutual_information
from .operators import TransitionModel, adjoint, decompose, detailed_balance_residual
from .spectral import Estimate, dirichlet_energy, ergodic_energy, solve_spectrum, variational_score, vamp1_score
from .tpt import SetPair, analyze, rate_count


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tol: float
    passed: bool
    statistical: bool = False

    def row(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "tol": self.tol,
            "passed": "pass" if self.passed else "fail",
            "kind": "statistical" if self.statistical else "exact",
        }


def _exact(name, residual, tol) -> CheckResult:
    residual = float(residual)
    return CheckResult(name, residual, tol, bool(residual <= tol))


def _stat(name, estimate, target, k=3.0) -> CheckResult:
    z = abs(estimate.value - target) / estimate.stderr if estimate.stderr > 0 else math.inf
    return CheckResult(name, float(z), k, bool(z <= k), statistical=True)


def fixture_checks() -> list[CheckResult]:
    out = []
    bd3, bd4, two = fixture("bd3"), fixture("bd4"), fixture("2st")
    out.append(_exact("bd3.spectrum", np.max(np.abs(solve_spectrum(bd3).eigenvalues - [1.0, 0.5, 0.0])), 1e-12))
    out.append(_exact("2st.spectrum", np.max(np.abs(solve_spectrum(two).eigenvalues - [1.0, 0.7])), 1e-12))
    out.append(_exact("2st.energy", abs(dirichlet_energy(two, [0.0, 1.0]) - 1 / 15), 1e-15))
    out.append(_exact("3cycle.residual", abs(detailed_balance_residual(fixture("3cycle")) - 1 / 3), 1e-15))
    res = analyze(bd4, SetPair((0,), (3,), 4))
    out.append(_exact("bd4.committor", np.max(np.abs(res.q - [0, 1 / 3, 2 / 3, 1])), 1e-12))
    out.append(_exact("bd4.rate", abs(res.k_flux_A - 1 / 48), 1e-12))
    cv = CVAssignment.from_lumps([[0], [1, 2], [3]])
    rc = rate_comparison(bd4, cv, [0], [2])
    out.append(_exact("bd4.effective_committor", np.max(np.abs(rc.q_eff - [0, 0.5, 1])), 1e-12))
    out.append(_exact("bd4.effective_rate", abs(rc.k_eff - 1 / 32), 1e-12))
    out.append(_exact("bd4.rate_gap", abs(rc.gap - 1 / 96), 1e-12))
    out.append(_exact("bd4.rate_identity", rc.residual, 1e-12))
    dup = fixture("bd4-dup")
    rc = rate_comparison(dup, CVAssignment.from_lumps([[0], [1, 2], [3]]), [0], [2])
    out.append(_exact("bd4-dup.rate_preserved", abs(rc.k_eff - rc.k_full), 1e-12))
    lump = CVAssignment.from_lumps([[0, 2], [1]])
    eff = solve_spectrum(build_effective(bd3, lump).model)
    out.append(_exact("bd3.fiber_constant_eigenvalue", abs(eff.eigenvalues[-1]), 1e-12))
    out.append(_exact("identity_cv.kl", abs(kl_score(bd4, CVAssignment.identity(4))), 1e-12))
    return out


def population_checks(seed: int, n_instances: int = 25, n_candidates: int = 20) -> list[CheckResult]:
    """Identities and inequalities over random reversible chains with random CVs."""
    rng = np.random.default_rng(seed)
    worst = {}

    def track(name, value, tol):
        worst[name] = (max(worst.get(name, (0.0, tol))[0], float(value)), tol)

    for _ in range(n_instances):
        n = int(rng.integers(4, 13))
        model = random_reversible_chain(rng, n)
        # rates
        A = int(rng.integers(0, n))
        B = int((A + 1 + rng.integers(0, n - 1)) % n)
        res = analyze(model, SetPair((A,), (B,), n), tol=math.inf)
        track("rates.agreement", max(res.k_flux_A, res.k_flux_B, res.k_energy) - min(res.k_flux_A, res.k_flux_B, res.k_energy), 1e-10)
        # variational principle
        m = int(rng.integers(1, n))
        spec = solve_spectrum(model, m)
        w = np.sort(rng.random(m) + 0.1)[::-1]
        bound = float(np.sum(w * (1.0 - spec.eigenvalues[1:])))
        for _ in range(n_candidates):
            F = random_feasible_tuple(rng, model.mu, m)
            track("variational.lower_bound", bound - variational_score(model, F, w) - 1e-8, 0.0)
            track("vamp1.complement", abs(vamp1_score(model, F, w) + variational_score(model, F, w) - w.sum()), 1e-8)
        track("variational.attained", abs(variational_score(model, spec.eigenvectors[:, 1:], w) - bound), 1e-10)
        # operator structure
        rev = TransitionModel(adjoint(model), model.mu)
        track("adjoint.involution", np.max(np.abs(adjoint(rev) - model.P)), 1e-12)
        Trev, Tnon = decompose(model)
        track("decompose.sum", np.max(np.abs(Trev + Tnon - model.P)), 1e-12)
        # effective dynamics
        cv = random_cv(rng, n)
        eff = build_effective(model, cv)
        track("effective.invariance", np.max(np.abs(eff.mu @ eff.P - eff.mu)), 1e-12)
        track("effective.reversibility", detailed_balance_residual(eff.model), 1e-12)
        lem = lemma_identity_check(model, cv, rng.standard_normal(cv.k), rng.standard_normal(cv.k), eff)
        track("effective.lemma", lem.max(), 1e-10)
        track("effective.adjoint_routes", np.max(np.abs(effective_adjoint(model, cv, eff) - effective_of_adjoint(model, cv))), 1e-12)
        if cv.k > 2:
            f_map = np.concatenate([[0, 1], rng.integers(0, 2, cv.k - 2)])
            track("effective.composition", compose_check(model, cv, f_map), 1e-12)
        # KL optimality
        opt = kl_score(model, cv)
        for _ in range(n_candidates // 4):
            gt = rng.random((cv.k, cv.k)) + 0.01
            gt /= gt.sum(axis=1, keepdims=True)
            gs = rng.random(n) + 0.01
            gs /= np.bincount(cv.bin_of, weights=gs)[cv.bin_of]
            d = kl_decomposition(model, cv, FactorizedDensity(gt, gs, cv))
            track("kl.optimality", opt - d.value - 1e-12, 0.0)
            track("kl.decomposition", d.residual, 1e-10)
        track("kl.single_bin", abs(kl_score(model, CVAssignment(np.zeros(n, dtype=int), 1)) - mutual_information(model)), 1e-12)
        # eigenvalue comparison
        mm = min(m, cv.k - 1)
        cmp = eigen_comparison(model, cv, mm)
        track("eigen.inequality", np.max(cmp.effective[:mm] - cmp.full[:mm]) - 1e-10, 0.0)
        track("eigen.identity", np.nanmax(cmp.residuals), 1e-8)
        # rate comparison through the CV
        if cv.k >= 3:
            rc = rate_comparison(model, cv, [0], [cv.k - 1], tol=math.inf)
            track("rates.effective_identity", rc.residual, 1e-10)
            track("rates.effective_bound", rc.k_full - rc.k_eff - 1e-12, 0.0)
    return [_exact(name, v, tol) for name, (v, tol) in sorted(worst.items())]


def statistical_checks(seed: int, n_steps: int = 200_000) -> list[CheckResult]:
    out = []
    two = fixture("2st")
    chain = simulate_chain(two.P, n_steps, seed)
    out.append(_stat("2st.ergodic_energy", ergodic_energy(chain, [0.0, 1.0]), 1 / 15))
    bd4 = fixture("bd4")
    chain = simulate_chain(bd4.P, n_steps, seed + 1)
    rc = rate_count(chain, SetPair((0,), (3,), 4))
    out.append(_stat("bd4.rate_count", Estimate(rc.rate, rc.stderr, rc.n_steps), 1 / 48))
    return out


def model_checks(model: TransitionModel, sets: SetPair | None = None, cv: CVAssignment | None = None) -> list[CheckResult]:
    """Structural invariants of a configured model (reversible part used for spectral checks)."""
    out = [
        _exact("model.stationarity", np.max(np.abs(model.mu @ model.P - model.mu)), 1e-10),
        _exact("model.row_sums", np.max(np.abs(model.P.sum(axis=1) - 1.0)), 1e-12),
        _exact("model.adjoint_rows", np.max(np.abs(adjoint(model).sum(axis=1) - 1.0)), 1e-10),
    ]
    if sets is not None:
        res = analyze(model, sets, tol=math.inf)
        ks = (res.k_flux_A, res.k_flux_B, res.k_energy)
        out.append(_exact("model.rates_agreement", max(ks) - min(ks), 1e-10))
    if cv is not None:
        eff = build_effective(model, cv)
        f = np.linspace(0.0, 1.0, cv.k)
        out.append(_exact("model.lemma", lemma_identity_check(model, cv, f, f[::-1], eff).max(), 1e-10))
        out.append(_exact("model.lift_energy", abs(dirichlet_energy(eff.model, f) - dirichlet_energy(model, lift(cv, f))), 1e-10))
    return out


def run_all(seed: int, model=None, sets=None, cv=None, n_instances: int = 25, n_steps: int = 200_000) -> list[CheckResult]:
    results = fixture_checks() + population_checks(seed, n_instances) + statistical_checks(seed, n_steps)
    if model is not None:
        results += model_checks(model, sets, cv)
    return results
