"""Relative-entropy objective for CV maps.

Candidates factorize as g(x, y) = g~(xi(x), xi(y)) g_{xi(y)}(y). Natural
logarithms throughout, with 0 ln 0 = 0; a divergence that is infinite because
absolute continuity fails is reported as ``math.inf``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .effective import CVAssignment, build_effective
from .errors import ConfigurationError, InvariantError
from .operators import TransitionModel
from .spectral import batch_means


@dataclass(frozen=True, eq=False)
class FactorizedDensity:
    g_tilde: np.ndarray
    # g_state[y] = g_{xi(y)}(y): each fiber's entries sum to one
    g_state: np.ndarray
    cv: CVAssignment

    def __post_init__(self):
        gt = np.asarray(self.g_tilde, dtype=np.float64)
        gs = np.asarray(self.g_state, dtype=np.float64)
        if gt.shape != (self.cv.k, self.cv.k) or gs.shape != (self.cv.n,):
            raise ConfigurationError("factorized density does not match the CV")
        if np.any(gt < 0) or np.any(gs < 0):
            raise ConfigurationError("densities must be nonnegative")
        if np.max(np.abs(gt.sum(axis=1) - 1.0)) > 1e-12:
            raise ConfigurationError("rows of g~ must sum to 1")
        fiber_mass = np.bincount(self.cv.bin_of, weights=gs, minlength=self.cv.k)
        if np.max(np.abs(fiber_mass - 1.0)) > 1e-12:
            raise ConfigurationError("each fiber density must sum to 1")
        object.__setattr__(self, "g_tilde", gt)
        object.__setattr__(self, "g_state", gs)

    def per_bin(self) -> list[np.ndarray]:
        return [self.g_state[f] for f in self.cv.fibers]

    def matrix(self) -> np.ndarray:
        b = self.cv.bin_of
        return self.g_tilde[np.ix_(b, b)] * self.g_state[None, :]


def optimal_factorization(model: TransitionModel, cv: CVAssignment) -> FactorizedDensity:
    eff = build_effective(model, cv)
    return FactorizedDensity(np.array(eff.P), eff.cond.copy(), cv)


def _log(a) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(a)


def _weighted_log_ratio(weight, p, q) -> float:
    """sum weight * ln(p / q) over weight > 0 (0 ln 0 = 0); inf where q vanishes."""
    weight = np.asarray(weight, dtype=np.float64)
    pos = weight > 0
    lq = _log(np.broadcast_to(q, weight.shape)[pos])
    if np.any(np.isneginf(lq)):
        return math.inf
    return float(np.sum(weight[pos] * (np.log(np.broadcast_to(p, weight.shape)[pos]) - lq)))


def expected_kl(model: TransitionModel, cand: FactorizedDensity) -> float:
    """E_{x~mu} D_KL(P(x, .) || g(x, .)).

    ln g is assembled factor by factor so that products of tiny masses do not
    underflow into spurious infinities.
    """
    b = cand.cv.bin_of
    F = model.mu[:, None] * model.P
    pos = F > 0
    log_g = _log(cand.g_tilde)[np.ix_(b, b)] + _log(cand.g_state)[None, :]
    if np.any(np.isneginf(log_g[pos])):
        return math.inf
    return float(np.sum(F[pos] * (np.log(model.P[pos]) - log_g[pos])))


def kl_score(model: TransitionModel, cv: CVAssignment) -> float:
    """Minimal expected KL divergence over the factorized class for this CV."""
    value = expected_kl(model, optimal_factorization(model, cv))
    # roundoff can push an exact zero slightly negative
    return 0.0 if -1e-14 < value < 0 else value


def mutual_information(model: TransitionModel) -> float:
    """sum mu_x P(x,y) ln[P(x,y) / mu(y)], the k = 1 value of ``kl_score``."""
    return _weighted_log_ratio(model.mu[:, None] * model.P, model.P, model.mu[None, :])


@dataclass(frozen=True)
class KLDecomposition:
    value: float
    optimal: float
    reduced_term: float
    fiber_term: float

    @property
    def residual(self) -> float:
        return abs(self.value - (self.optimal + self.reduced_term + self.fiber_term))


def kl_decomposition(model: TransitionModel, cv: CVAssignment, cand: FactorizedDensity) -> KLDecomposition:
    eff = build_effective(model, cv)
    value = expected_kl(model, cand)
    optimal = kl_score(model, cv)
    reduced = _weighted_log_ratio(eff.mu[:, None] * eff.P, eff.P, cand.g_tilde)
    fiber = _weighted_log_ratio(model.mu, eff.cond, cand.g_state)
    return KLDecomposition(value, optimal, reduced, fiber)


def kl_of_candidate(model: TransitionModel, cv: CVAssignment, cand: FactorizedDensity, tol: float = 1e-10) -> float:
    """Expected KL of a candidate, checked against the optimal-plus-gaps decomposition."""
    d = kl_decomposition(model, cv, cand)
    if math.isfinite(d.value) and d.residual > tol:
        raise InvariantError(f"KL decomposition off by {d.residual:.2e}")
    return d.value


@dataclass(frozen=True)
class TrajectoryLosses:
    loss_full: float
    reduced_transition: float
    marginal: float
    reduced_transition_stderr: float

    @property
    def reduced_pair(self) -> tuple[float, float]:
        return self.reduced_transition, self.marginal

    @property
    def combined(self) -> float:
        return self.reduced_transition + self.marginal


def smoothed_estimators(states, cv: CVAssignment, alpha: float = 1.0):
    """Histogram plug-in estimates (g~, fiber densities, bin histogram) with add-alpha smoothing."""
    states = np.asarray(states, dtype=np.int64)
    z = cv.bin_of[states]
    k = cv.k
    C = np.full((k, k), float(alpha))
    np.add.at(C, (z[:-1], z[1:]), 1.0)
    g_tilde = C / C.sum(axis=1, keepdims=True)
    c = np.bincount(states, minlength=cv.n).astype(np.float64) + alpha
    g_state = c / np.bincount(cv.bin_of, weights=c, minlength=k)[cv.bin_of]
    h = np.bincount(z[:-1], minlength=k).astype(np.float64) + alpha
    return g_tilde, g_state, h / h.sum()


def marginal_loglik(bins, f_tilde) -> float:
    """(1/N) sum_n ln f~(z_n) over a bin sequence."""
    f_tilde = np.asarray(f_tilde, dtype=np.float64)
    return float(np.mean(np.log(f_tilde[np.asarray(bins)])))


def trajectory_losses(states, cv: CVAssignment, alpha: float = 1.0, n_batches: int = 20) -> TrajectoryLosses:
    """Negative log-likelihood losses of a state-index chain under a CV.

    ``loss_full`` scores the full factorized density; the reduced pair is the
    reduced-transition term and the marginal term, whose sum orders CVs like
    the expected KL divergence.
    """
    states = np.asarray(states, dtype=np.int64)
    if states.size < 2:
        raise ConfigurationError("need at least one transition")
    g_tilde, g_state, hist = smoothed_estimators(states, cv, alpha)
    z = cv.bin_of[states]
    red = -np.log(g_tilde[z[:-1], z[1:]])
    full = red - np.log(g_state[states[1:]])
    se = batch_means(red, n_batches).stderr if red.size >= n_batches else float("nan")
    return TrajectoryLosses(
        float(full.mean()), float(red.mean()), marginal_loglik(z[:-1], hist), se
    )
