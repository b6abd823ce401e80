"""Committors and A->B transition rates."""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ConnectivityError, ConstraintError, InvariantError
from .operators import TransitionModel
from .spectral import batch_means, dirichlet_energy

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class SetPair:
    A: tuple
    B: tuple
    n: int

    def __post_init__(self):
        A = tuple(sorted({int(i) for i in self.A}))
        B = tuple(sorted({int(i) for i in self.B}))
        if not A or not B:
            raise ConfigurationError("A and B must be nonempty")
        if set(A) & set(B):
            raise ConfigurationError("A and B must be disjoint")
        if min(A + B) < 0 or max(A + B) >= self.n:
            raise ConfigurationError("set indices outside the state space")
        if len(A) + len(B) >= self.n:
            raise ConfigurationError("the complement of A and B must be nonempty")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def interior(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[list(self.A)] = False
        mask[list(self.B)] = False
        return np.flatnonzero(mask)

    def labels(self) -> np.ndarray:
        """0 for interior states, 1 for A, 2 for B."""
        lab = np.zeros(self.n, dtype=np.int8)
        lab[list(self.A)] = 1
        lab[list(self.B)] = 2
        return lab


def _reaches_boundary(P: np.ndarray, sets: SetPair) -> np.ndarray:
    reach = np.zeros(sets.n, dtype=bool)
    queue = deque(sets.A + sets.B)
    reach[list(queue)] = True
    incoming = [np.flatnonzero(P[:, j] > 0) for j in range(sets.n)]
    while queue:
        j = queue.popleft()
        for i in incoming[j]:
            if not reach[i]:
                reach[i] = True
                queue.append(i)
    return reach


def committor(model: TransitionModel, sets: SetPair) -> np.ndarray:
    """Forward committor: harmonic on the interior, 0 on A and 1 on B."""
    if sets.n != model.n:
        raise ConfigurationError("set pair and model disagree on the number of states")
    P = model.P
    stranded = np.flatnonzero(~_reaches_boundary(P, sets))
    if stranded.size:
        raise ConnectivityError(f"interior states {stranded.tolist()} never reach A or B")
    I = sets.interior
    B = list(sets.B)
    q = np.zeros(model.n)
    q[B] = 1.0
    M = np.eye(I.size) - P[np.ix_(I, I)]
    rhs = P[np.ix_(I, B)].sum(axis=1)
    try:
        q[I] = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as err:
        raise ConnectivityError(str(err)) from None
    resid = np.max(np.abs((P @ q - q)[I]))
    if resid > RESIDUAL_TOL:
        raise InvariantError(f"committor residual {resid:.2e}")
    return q


def rate_flux(model: TransitionModel, sets: SetPair, q) -> tuple[float, float]:
    """Rate from the probability flux leaving A and, separately, leaving B."""
    q = np.asarray(q, dtype=np.float64)
    A, B = list(sets.A), list(sets.B)
    k_a = float(model.mu[A] @ (model.P[A] @ q))
    k_b = float(model.mu[B] @ (model.P[B] @ (1.0 - q)))
    return k_a, k_b


def rate_energy(model: TransitionModel, q) -> float:
    return dirichlet_energy(model, q)


@dataclass(frozen=True, eq=False)
class TPTResult:
    q: np.ndarray
    k_flux_A: float
    k_flux_B: float
    k_energy: float
    k_count: float | None = None
    count_stderr: float | None = None

    def to_dict(self) -> dict:
        return {
            "q": [float(v) for v in self.q],
            "k_flux_A": self.k_flux_A,
            "k_flux_B": self.k_flux_B,
            "k_energy": self.k_energy,
            "k_count": self.k_count,
            "count_stderr": self.count_stderr,
        }


def analyze(model: TransitionModel, sets: SetPair, tol: float = RESIDUAL_TOL) -> TPTResult:
    """Committor plus the three matrix rates, which must agree within ``tol``."""
    q = committor(model, sets)
    k_a, k_b = rate_flux(model, sets, q)
    k_e = rate_energy(model, q)
    spread = max(k_a, k_b, k_e) - min(k_a, k_b, k_e)
    if spread > tol:
        raise InvariantError(f"rates disagree by {spread:.2e}")
    return TPTResult(q, k_a, k_b, k_e)


@dataclass(frozen=True)
class RateCount:
    rate: float
    stderr: float
    n_segments: int
    n_steps: int
    # False when the chain never entered A; the rate is then 0 by convention
    visited_A: bool = True


def reactive_segment_starts(states, sets: SetPair) -> np.ndarray:
    """Start indices of all completed A->B reactive segments in a state-index chain."""
    lab = sets.labels()[np.asarray(states, dtype=np.int64)]
    hits = np.flatnonzero(lab > 0)
    if hits.size < 2:
        return np.zeros(0, dtype=np.int64)
    hl = lab[hits]
    # consecutive boundary visits A then B delimit one reactive segment
    mask = (hl[:-1] == 1) & (hl[1:] == 2)
    return hits[:-1][mask]


def rate_count(states, sets: SetPair, N: int | None = None, n_batches: int = 20) -> RateCount:
    """Reactive segments starting before step N, divided by N.

    Segments started before N may finish later in the chain.
    """
    states = np.asarray(states, dtype=np.int64)
    N = len(states) - 1 if N is None else int(N)
    if N < 1 or N > len(states):
        raise ConfigurationError("need 1 <= N <= chain length")
    starts = reactive_segment_starts(states, sets)
    starts = starts[starts < N]
    visited = bool(np.any(np.isin(states[:N], sets.A)))
    if not visited:
        warnings.warn("chain never visits A; reporting a zero rate", RuntimeWarning, stacklevel=2)
        return RateCount(0.0, 0.0, 0, N, visited_A=False)
    indicator = np.zeros(N)
    indicator[starts] = 1.0
    if N >= n_batches:
        est = batch_means(indicator, n_batches)
        se = est.stderr
    else:
        se = float("nan")
    return RateCount(starts.size / N, se, int(starts.size), N)


@dataclass(frozen=True)
class EnergyDecomposition:
    energy: float
    rate: float
    excess: float

    @property
    def residual(self) -> float:
        return abs(self.energy - self.rate - self.excess)


def energy_decomposition(model: TransitionModel, sets: SetPair, f, tol: float = 1e-10) -> EnergyDecomposition:
    """E(f) = k_AB + E(f - q) for any f with f = 0 on A and f = 1 on B."""
    f = np.asarray(f, dtype=np.float64)
    bad = [i for i in sets.A if abs(f[i]) > 1e-12] + [i for i in sets.B if abs(f[i] - 1.0) > 1e-12]
    if bad:
        raise ConstraintError("f violates the boundary values on A/B", bad)
    q = committor(model, sets)
    k_a, _ = rate_flux(model, sets, q)
    out = EnergyDecomposition(dirichlet_energy(model, f), k_a, dirichlet_energy(model, f - q))
    if out.residual > tol:
        raise InvariantError(f"energy decomposition off by {out.residual:.2e}")
    return out

