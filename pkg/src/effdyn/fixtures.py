"""Named built-in chains and configurations, plus random reversible chains for property tests."""
from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .operators import TransitionModel


def _bd(n: int, stay: float, hop: float) -> np.ndarray:
    """Birth-death chain with reflecting ends (leftover hop mass stays put)."""
    P = np.zeros((n, n))
    for i in range(n):
        if i > 0:
            P[i, i - 1] = hop
        if i < n - 1:
            P[i, i + 1] = hop
        P[i, i] = 1.0 - P[i].sum()
    return P


_MATRICES = {
    "2st": (np.array([[0.9, 0.1], [0.2, 0.8]]), np.array([2.0, 1.0]) / 3.0),
    "bd3": (
        np.array([[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]]),
        np.array([0.25, 0.5, 0.25]),
    ),
    "bd4": (_bd(4, 0.5, 0.25), np.full(4, 0.25)),
    "3cycle": (np.roll(np.eye(3), 1, axis=1), np.full(3, 1.0 / 3.0)),
    # forward-biased cycle: uniform mu, detailed balance fails
    "3cycle-biased": (
        np.array([[0.2, 0.6, 0.2], [0.2, 0.2, 0.6], [0.6, 0.2, 0.2]]),
        np.full(3, 1.0 / 3.0),
    ),
    # states 1 and 2 are exchangeable, so the committor from {0} to {3} is constant on {1, 2}
    "bd4-dup": (
        np.array(
            [
                [0.5, 0.25, 0.25, 0.0],
                [0.25, 0.25, 0.25, 0.25],
                [0.25, 0.25, 0.25, 0.25],
                [0.0, 0.25, 0.25, 0.5],
            ]
        ),
        np.full(4, 0.25),
    ),
}

# the anisotropic two-dimensional double well used for CV scans
DW2D_CONFIG = {
    "system": {"potential": {"kind": "double-well-2d", "params": {}}, "beta": 3.0, "dt": 0.01},
    "grid": {"axes": [{"lo": -2.0, "hi": 2.0, "n": 60}, {"lo": -2.0, "hi": 2.0, "n": 40}]},
    "operator": {"source": "analytic", "reversible_part": True},
    "cv_family": {"kind": "linear-angle-2d", "n_angles": 12, "k": 10},
    "objective": {"kind": "timescale", "m": 1},
    "rate_bins": {"A": [0], "B": [-1]},
}

FIXTURE_NAMES = tuple(sorted(_MATRICES)) + ("dw2d",)


def fixture(name: str):
    """A built-in ``TransitionModel`` by name; ``"dw2d"`` returns a config dict instead."""
    if name == "dw2d":
        import copy

        return copy.deepcopy(DW2D_CONFIG)
    try:
        P, mu = _MATRICES[name]
    except KeyError:
        raise ConfigurationError(f"unknown fixture {name!r}; known: {', '.join(FIXTURE_NAMES)}") from None
    return TransitionModel(P.copy(), mu.copy(), source=f"fixture:{name}")


def random_reversible_chain(rng: np.random.Generator, n: int, density: float = 0.6) -> TransitionModel:
    """Random connected reversible chain built from a symmetric flow matrix.

    A path 0-1-...-(n-1) is always present so the chain is irreducible; self
    loops keep it aperiodic.
    """
    W = rng.random((n, n)) * (rng.random((n, n)) < density)
    W = np.triu(W, 1)
    idx = np.arange(n - 1)
    W[idx, idx + 1] += 0.05 + rng.random(n - 1)
    W = W + W.T + np.diag(0.05 + rng.random(n))
    mass = W.sum(axis=1)
    P = W / mass[:, None]
    P /= P.sum(axis=1, keepdims=True)
    return TransitionModel.from_matrix(P, source="random-reversible")


def random_cv(rng: np.random.Generator, n: int, k: int | None = None):
    """Random surjective assignment of ``n`` states onto ``k`` bins (2 <= k < n by default)."""
    from .effective import CVAssignment

    if k is None:
        k = int(rng.integers(2, n)) if n > 2 else n
    b = np.concatenate([np.arange(k), rng.integers(0, k, n - k)])
    rng.shuffle(b)
    return CVAssignment(b, k, {"kind": "random"})


def random_feasible_tuple(rng: np.random.Generator, mu, m: int) -> np.ndarray:
    """(n, m) columns with mu-mean zero and mu-orthonormal (m < n)."""
    mu = np.asarray(mu, dtype=np.float64)
    G = rng.standard_normal((mu.size, m))
    G -= mu @ G
    # orthonormalize in the mu inner product via QR of sqrt(mu) G
    Q, _ = np.linalg.qr(np.sqrt(mu)[:, None] * G)
    F = Q / np.sqrt(mu)[:, None]
    return F - mu @ F
