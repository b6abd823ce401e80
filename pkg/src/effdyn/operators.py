"""Finite transition models: construction, stationary laws, adjoints."""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.special import ndtr

from .dynamics import Potential, Trajectory, grad_potential
from .errors import (
    ConfigurationError,
    DisconnectedStateError,
    InvariantError,
    TruncationError,
)

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10
DENSE_LIMIT = 5000
# state reduction costs ~n^3/3 flops; above this size fall back to the dense solve
GTH_LIMIT = 3000


@dataclass(frozen=True)
class Grid:
    """Rectangular grid of cells; ``axes`` holds one ``(lo, hi, n_cells)`` per dimension.

    Cells are flattened row-major, first axis slowest.
    """

    axes: tuple

    def __post_init__(self):
        axes = tuple((float(lo), float(hi), int(n)) for lo, hi, n in self.axes)
        if len(axes) not in (1, 2):
            raise ConfigurationError("grids are 1- or 2-dimensional")
        for lo, hi, n in axes:
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ConfigurationError(f"bad grid extent [{lo}, {hi}]")
            if n < 2:
                raise ConfigurationError("each grid axis needs at least 2 cells")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def from_dict(cls, spec) -> "Grid":
        return cls(tuple((a["lo"], a["hi"], a["n"]) for a in spec["axes"]))

    def to_dict(self) -> dict:
        return {"axes": [{"lo": lo, "hi": hi, "n": n} for lo, hi, n in self.axes]}

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(n for _, _, n in self.axes)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def widths(self) -> np.ndarray:
        return np.array([(hi - lo) / n for lo, hi, n in self.axes])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def extent(self) -> float:
        return max(max(abs(lo), abs(hi)) for lo, hi, _ in self.axes)

    def axis_centers(self, a: int) -> np.ndarray:
        lo, hi, n = self.axes[a]
        return lo + (np.arange(n) + 0.5) * (hi - lo) / n

    @property
    def centers(self) -> np.ndarray:
        mesh = np.meshgrid(*(self.axis_centers(a) for a in range(self.dim)), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def cell_index(self, points) -> np.ndarray:
        """Flat cell index of each point, -1 for points outside the grid."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, self.dim)
        flat = np.zeros(pts.shape[0], dtype=np.int64)
        inside = np.ones(pts.shape[0], dtype=bool)
        for a, (lo, hi, n) in enumerate(self.axes):
            idx = np.floor((pts[:, a] - lo) / (hi - lo) * n).astype(np.int64)
            inside &= (pts[:, a] >= lo) & (pts[:, a] < hi)
            flat = flat * n + np.clip(idx, 0, n - 1)
        flat[~inside] = -1
        return flat


@dataclass(frozen=True, eq=False)
class TransitionModel:
    """Row-stochastic matrix with its stationary law.

    ``states`` maps model rows to original cell indices when unvisited cells
    were pruned; ``None`` means the identity map.
    """

    P: np.ndarray
    mu: np.ndarray
    lag: float = 1.0
    source: str = "matrix"
    grid: Grid | None = None
    states: np.ndarray | None = None
    counts: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        P = np.array(self.P, dtype=np.float64)
        mu = np.array(self.mu, dtype=np.float64).reshape(-1)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] != mu.size:
            raise ConfigurationError("P must be square and match mu")
        if np.any(P < 0):
            raise InvariantError("negative transition probability")
        worst_row = np.max(np.abs(P.sum(axis=1) - 1.0))
        if worst_row > ROW_SUM_TOL:
            raise InvariantError(f"rows of P deviate from 1 by {worst_row:.2e}")
        if np.any(mu <= 0):
            raise InvariantError("stationary masses must be strictly positive")
        if abs(mu.sum() - 1.0) > ROW_SUM_TOL:
            raise InvariantError("stationary vector does not sum to 1")
        resid = np.max(np.abs(mu @ P - mu))
        if resid > STATIONARY_TOL:
            raise InvariantError(f"mu is not stationary for P (residual {resid:.2e})")
        P.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "mu", mu)
        if self.states is not None:
            st = np.array(self.states, dtype=np.int64)
            st.setflags(write=False)
            object.__setattr__(self, "states", st)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @classmethod
    def from_matrix(cls, P, mu=None, **kw) -> "TransitionModel":
        P = np.asarray(P, dtype=np.float64)
        if mu is None:
            mu = stationary_distribution(P)
        return cls(P, mu, **kw)


def _normalize_rows(M: np.ndarray) -> np.ndarray:
    return M / M.sum(axis=1, keepdims=True)


@numba.njit(cache=True)
def _gth(A):
    """Grassmann-Taksar-Heyman state reduction, in place; returns -1 or a trapped state."""
    n = A.shape[0]
    for k in range(n - 1, 0, -1):
        s = 0.0
        for j in range(k):
            s += A[k, j]
        if s <= 0.0:
            return k
        for i in range(k):
            A[i, k] /= s
        for i in range(k):
            a = A[i, k]
            if a != 0.0:
                for j in range(k):
                    A[i, j] += a * A[k, j]
    return -1


@numba.njit(cache=True)
def _gth_back(A, out):
    out[0] = 1.0
    for k in range(1, A.shape[0]):
        t = 0.0
        for i in range(k):
            t += out[i] * A[i, k]
        out[k] = t


def stationary_distribution(P) -> np.ndarray:
    """Stationary probability vector of an irreducible stochastic matrix.

    Up to ``GTH_LIMIT`` states this is GTH state reduction, which involves no
    subtractions and so keeps full relative accuracy even when wells are
    coupled by probabilities far below machine epsilon. Larger chains use a
    dense solve of mu (P - I) = 0 (the diagonal of I - P rebuilt from the
    off-diagonal row mass), and beyond ``DENSE_LIMIT`` power iteration.
    """
    P = np.asarray(P, dtype=np.float64)
    n = P.shape[0]
    if n == 1:
        return np.ones(1)
    if n <= GTH_LIMIT:
        A = P.copy()
        np.fill_diagonal(A, 0.0)
        if _gth(A) >= 0:
            raise DisconnectedStateError(range(n))
        mu = np.zeros(n)
        _gth_back(A, mu)
        bad = np.flatnonzero(~(mu > 0))
        if bad.size:
            raise DisconnectedStateError(bad)
        return mu / mu.sum()
    if n > DENSE_LIMIT:
        return _stationary_power(P)
    off = P.copy()
    np.fill_diagonal(off, 0.0)
    G = off.T.copy()
    G[np.diag_indices(n)] = -off.sum(axis=1)
    G[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        mu = np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError:
        raise DisconnectedStateError(range(n)) from None
    if not np.all(mu > 0):
        # absolute solve error swamps masses below ~1e-16; positive
        # propagation restores their relative accuracy
        mu = _polish(P, np.clip(mu, 0.0, None))
    bad = np.flatnonzero(~(mu > 0))
    if bad.size:
        raise DisconnectedStateError(bad)
    return mu / mu.sum()


def _polish(P, mu, max_iter=2000):
    mu = mu / mu.sum()
    for _ in range(max_iter):
        nxt = mu @ P
        nxt /= nxt.sum()
        settled = np.all(nxt > 0) and np.all(np.abs(nxt - mu) <= 1e-12 * nxt)
        mu = nxt
        if settled:
            break
    return mu


def _stationary_power(P, tol=1e-14, max_iter=1_000_000):
    mu = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(max_iter):
        nxt = mu @ P
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - mu)) < tol:
            return nxt
        mu = nxt
    raise InvariantError("power iteration for the stationary law did not converge")


def build_analytic_em(pot: Potential, beta: float, dt: float, grid: Grid) -> TransitionModel:
    """Euler-Maruyama Gaussian kernel sampled at cell centers, rows renormalized."""
    if not dt > 0 or not beta > 0:
        raise ConfigurationError("beta and dt must be positive")
    if pot.dim != grid.dim:
        raise ConfigurationError("potential and grid dimensions differ")
    C = grid.centers
    means = C - grad_potential(pot, C).reshape(C.shape) * dt
    sigma = np.sqrt(2.0 * dt / beta)
    inside = np.ones(C.shape[0])
    for a, (lo, hi, _) in enumerate(grid.axes):
        inside *= ndtr((hi - means[:, a]) / sigma) - ndtr((lo - means[:, a]) / sigma)
    outside = 1.0 - inside
    worst = int(np.argmax(outside))
    if outside[worst] > 0.1:
        raise TruncationError(worst, float(outside[worst]))
    sq = np.zeros((C.shape[0], C.shape[0]))
    for a in range(grid.dim):
        sq += (C[None, :, a] - means[:, None, a]) ** 2
    logk = -beta * sq / (4.0 * dt)
    logk -= logk.max(axis=1, keepdims=True)
    P = _normalize_rows(np.exp(logk))
    return TransitionModel.from_matrix(P, lag=dt, source="analytic", grid=grid)


def count_matrix(states, n_states: int) -> np.ndarray:
    """Transition counts between consecutive entries; negative indices break pairs."""
    s = np.asarray(states, dtype=np.int64)
    a, b = s[:-1], s[1:]
    ok = (a >= 0) & (b >= 0)
    C = np.zeros((n_states, n_states))
    np.add.at(C, (a[ok], b[ok]), 1.0)
    return C


def model_from_counts(C, reversible: bool, *, lag: float = 1.0, grid=None, states=None) -> TransitionModel:
    """Row-normalize a count matrix after pruning never-visited states."""
    C = np.asarray(C, dtype=np.float64)
    visited = np.flatnonzero((C.sum(axis=0) + C.sum(axis=1)) > 0)
    if visited.size < 1:
        raise DisconnectedStateError([])
    C = C[np.ix_(visited, visited)]
    if reversible:
        C = 0.5 * (C + C.T)
    empty = np.flatnonzero(C.sum(axis=1) == 0)
    if empty.size:
        raise DisconnectedStateError(visited[empty])
    P = _normalize_rows(C)
    if reversible:
        # symmetric counts: stationary law is the normalized row mass
        mu = C.sum(axis=1) / C.sum()
    else:
        try:
            mu = stationary_distribution(P)
        except DisconnectedStateError as err:
            raise DisconnectedStateError(visited[err.states]) from None
    orig = visited if states is None else np.asarray(states)[visited]
    return TransitionModel(P, mu, lag=lag, source="counts", grid=grid, states=orig, counts=C)


def build_counts(chain, grid: Grid | None = None, reversible: bool = False, *, n_states=None) -> TransitionModel:
    """Count-based model from a continuous trajectory (with ``grid``) or a state-index chain."""
    if isinstance(chain, Trajectory):
        if grid is None:
            raise ConfigurationError("a grid is needed to discretize a trajectory")
        states = grid.cell_index(chain.positions)
        n = grid.n_cells
        lag = chain.dt * chain.lag
    else:
        states = np.asarray(chain, dtype=np.int64)
        n = int(n_states if n_states is not None else states.max() + 1)
        lag = 1.0
    if np.count_nonzero(states >= 0) < 2:
        raise ConfigurationError("chain needs at least two points inside the state space")
    return model_from_counts(count_matrix(states, n), reversible, lag=lag, grid=grid)


def count_standard_errors(model: TransitionModel) -> np.ndarray:
    """Multinomial standard error of each estimated P entry."""
    if model.counts is None:
        raise ConfigurationError("model carries no counts")
    n_row = model.counts.sum(axis=1, keepdims=True)
    return np.sqrt(model.P * (1.0 - model.P) / n_row)


def adjoint(model: TransitionModel) -> np.ndarray:
    """Time-reversed transition matrix P*(x, y) = P(y, x) mu(y) / mu(x)."""
    mu = model.mu
    return model.P.T * mu[None, :] / mu[:, None]


def decompose(model: TransitionModel) -> tuple[np.ndarray, np.ndarray]:
    """Reversible and non-reversible parts, (P + P*)/2 and (P - P*)/2."""
    Ps = adjoint(model)
    return 0.5 * (model.P + Ps), 0.5 * (model.P - Ps)


def reversible_part(model: TransitionModel) -> TransitionModel:
    """The reversible part as a model of its own; it shares mu and the Dirichlet form."""
    rev, _ = decompose(model)
    rev = _normalize_rows(rev)
    return TransitionModel(
        rev, model.mu, lag=model.lag, source=f"{model.source}-rev", grid=model.grid, states=model.states
    )


def detailed_balance_residual(model: TransitionModel) -> float:
    F = model.mu[:, None] * model.P
    return float(np.max(np.abs(F - F.T)))


def symmetrized(model: TransitionModel, M=None) -> np.ndarray:
    """D^{1/2} M D^{-1/2} with D = diag(mu); M defaults to P."""
    M = model.P if M is None else M
    s = np.sqrt(model.mu)
    return s[:, None] * M / s[None, :]


@dataclass(frozen=True)
class NonnegativityResult:
    nonnegative: bool
    min_eigenvalue: float
    # False when an eigenvalue reaches -1, outside the range of an ergodic chain
    in_spectral_range: bool


def nonnegativity_check(model: TransitionModel, tol: float = 1e-10) -> NonnegativityResult:
    rev, _ = decompose(model)
    S = symmetrized(model, rev)
    lam = np.linalg.eigvalsh(0.5 * (S + S.T))
    lo = float(lam[0])
    return NonnegativityResult(lo >= -tol, lo, lo > -1.0 + tol)
