"""Spectra, Dirichlet energies and variational scores in the mu-weighted geometry."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import Trajectory
from .errors import ConfigurationError, ConstraintError, InvariantError, ReversibilityRequiredError
from .operators import Grid, TransitionModel, decompose, detailed_balance_residual, symmetrized

REVERSIBILITY_TOL = 1e-8
CONSTRAINT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class SpectralResult:
    """Eigenvalues in descending order; column i of ``eigenvectors`` is phi_i."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    mu: np.ndarray
    lag: float = 1.0

    def timescales(self) -> np.ndarray:
        return implied_timescales(self, self.lag)

    def rows(self) -> list[dict]:
        ts = self.timescales()
        return [
            {"index": i, "eigenvalue": float(lam), "timescale": float(t)}
            for i, (lam, t) in enumerate(zip(self.eigenvalues, ts))
        ]


def solve_spectrum(model: TransitionModel, m: int | None = None) -> SpectralResult:
    """Leading ``m + 1`` eigenpairs (lambda_0 = 1 included) of a reversible model.

    Eigenvectors are mu-orthonormal; each is signed so that its entry of
    largest magnitude is positive.
    """
    res = detailed_balance_residual(model)
    if res >= REVERSIBILITY_TOL:
        raise ReversibilityRequiredError(
            f"detailed-balance residual {res:.2e}; pass the reversible part from decompose()"
        )
    n = model.n
    m = n - 1 if m is None else int(m)
    if not 0 <= m < n:
        raise ConfigurationError(f"need 0 <= m < n = {n}, got {m}")
    S = symmetrized(model)
    lam, U = np.linalg.eigh(0.5 * (S + S.T))
    order = np.argsort(-lam, kind="stable")[: m + 1]
    lam = lam[order]
    phi = U[:, order] / np.sqrt(model.mu)[:, None]
    for i in range(phi.shape[1]):
        k = int(np.argmax(np.abs(phi[:, i])))
        if phi[k, i] < 0:
            phi[:, i] = -phi[:, i]
    return SpectralResult(lam, phi, np.array(model.mu), model.lag)


def inner(mu, f, h) -> float:
    return float(np.sum(mu * f * h))


def dirichlet_form(model: TransitionModel, f, h) -> float:
    """E(f, h) = 1/2 sum_{x,y} mu_x P(x,y) (f_y - f_x)(h_y - h_x)."""
    f = np.asarray(f, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    F = model.mu[:, None] * model.P
    value = 0.5 * float(np.sum(F * (f[None, :] - f[:, None]) * (h[None, :] - h[:, None])))
    rev, _ = decompose(model)
    check = inner(model.mu, f - rev @ f, h)
    scale = max(1.0, float(np.max(np.abs(f))) * float(np.max(np.abs(h))))
    if abs(value - check) > 1e-10 * scale:
        raise InvariantError(f"Dirichlet form mismatch {value!r} vs {check!r}")
    return value


def dirichlet_energy(model: TransitionModel, f) -> float:
    return dirichlet_form(model, f, f)


@dataclass(frozen=True)
class ObjectiveWeights:
    values: tuple

    def __post_init__(self):
        w = tuple(float(v) for v in self.values)
        if not w or any(not v > 0 for v in w):
            raise ConfigurationError("weights must be positive")
        if any(a < b for a, b in zip(w, w[1:])):
            raise ConfigurationError("weights must be non-increasing")
        object.__setattr__(self, "values", w)

    @classmethod
    def ones(cls, m: int) -> "ObjectiveWeights":
        return cls((1.0,) * m)

    def __len__(self):
        return len(self.values)

    def array(self) -> np.ndarray:
        return np.array(self.values)


def _as_columns(fs, n: int) -> np.ndarray:
    F = np.asarray(fs, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    if F.shape[0] != n and F.shape[1] == n:
        F = F.T
    if F.shape[0] != n:
        raise ConfigurationError(f"functions must have {n} entries")
    return F


def check_constraints(mu, F, tol: float = CONSTRAINT_TOL) -> None:
    """Mean-zero and mu-orthonormal columns, else ConstraintError listing Gram entries."""
    offending = []
    means = mu @ F
    for i, v in enumerate(means):
        if abs(v) > tol:
            offending.append(("mean", i, float(v)))
    G = F.T @ (mu[:, None] * F)
    target = np.eye(F.shape[1])
    for i, j in zip(*np.nonzero(np.abs(G - target) > tol)):
        if i <= j:
            offending.append(("gram", int(i), int(j), float(G[i, j])))
    if offending:
        raise ConstraintError(f"{len(offending)} constraint violations", offending)


def _weights(weights, m: int) -> np.ndarray:
    if weights is None:
        return np.ones(m)
    w = weights if isinstance(weights, ObjectiveWeights) else ObjectiveWeights(tuple(weights))
    if len(w) != m:
        raise ConfigurationError(f"{len(w)} weights for {m} functions")
    return w.array()


def variational_score(model: TransitionModel, fs, weights=None) -> float:
    """sum_i w_i E(f_i) over constraint-satisfying functions."""
    F = _as_columns(fs, model.n)
    check_constraints(model.mu, F)
    w = _weights(weights, F.shape[1])
    return float(sum(wi * dirichlet_energy(model, F[:, i]) for i, wi in enumerate(w)))


def vamp1_score(model: TransitionModel, fs, weights=None) -> float:
    """sum_i w_i <f_i, T f_i>_mu over constraint-satisfying functions."""
    F = _as_columns(fs, model.n)
    check_constraints(model.mu, F)
    w = _weights(weights, F.shape[1])
    TF = model.P @ F
    return float(sum(wi * inner(model.mu, F[:, i], TF[:, i]) for i, wi in enumerate(w)))


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n_samples: int

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.stderr


def batch_means(samples, n_batches: int = 20) -> Estimate:
    """Mean with the batch-means standard error (trailing remainder dropped from batching)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < n_batches:
        raise ConfigurationError("fewer samples than batches")
    size = x.size // n_batches
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    se = float(np.std(means, ddof=1) / math.sqrt(n_batches))
    return Estimate(float(x.mean()), se, int(x.size))


def ergodic_energy(chain, f, grid: Grid | None = None, weights=None, n_batches: int = 20) -> Estimate:
    """Half the mean squared increment of f along a chain.

    ``chain`` is a state-index array, or a Trajectory discretized by ``grid``
    (pairs touching points outside the grid are skipped). ``f`` may hold several
    columns, combined with ``weights``.
    """
    if isinstance(chain, Trajectory):
        if grid is None:
            raise ConfigurationError("grid required for continuous trajectories")
        states = grid.cell_index(chain.positions)
    else:
        states = np.asarray(chain, dtype=np.int64)
    F = np.asarray(f, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    w = _weights(weights, F.shape[1]) if weights is not None else np.ones(F.shape[1])
    a, b = states[:-1], states[1:]
    ok = (a >= 0) & (b >= 0)
    inc = F[b[ok]] - F[a[ok]]
    samples = 0.5 * (inc**2) @ w
    return batch_means(samples, n_batches)


def implied_timescales(result, lag: float = 1.0) -> np.ndarray:
    """-lag / ln(lambda); NaN marks lambda <= 0 and +inf marks lambda >= 1."""
    lam = np.asarray(result.eigenvalues if isinstance(result, SpectralResult) else result, dtype=np.float64)
    out = np.full(lam.shape, np.nan)
    pos = (lam > 0) & (lam < 1)
    out[pos] = -lag / np.log(lam[pos])
    out[lam >= 1] = np.inf
    return out
