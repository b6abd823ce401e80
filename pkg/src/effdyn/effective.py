"""Collective-variable assignments and the effective (reduced) Markov model.

A CV here is a surjection from states onto bins ``0..k-1``. The effective
chain averages the full transition probabilities over each fiber with the
stationary law conditioned on that fiber.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AssignmentError, ConfigurationError
from .operators import Grid, TransitionModel, adjoint
from .spectral import dirichlet_energy, inner


@dataclass(frozen=True, eq=False)
class CVAssignment:
    bin_of: np.ndarray
    k: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        b = np.array(self.bin_of, dtype=np.int64).reshape(-1)
        k = int(self.k)
        if k < 1:
            raise AssignmentError("a CV needs at least one bin")
        if b.size == 0 or b.min() < 0 or b.max() >= k:
            raise AssignmentError(f"bin indices must lie in 0..{k - 1}")
        empty = np.flatnonzero(np.bincount(b, minlength=k) == 0)
        if empty.size:
            raise AssignmentError(f"empty fibers for bins {empty.tolist()}")
        b.setflags(write=False)
        object.__setattr__(self, "bin_of", b)
        object.__setattr__(self, "k", k)

    @property
    def n(self) -> int:
        return self.bin_of.size

    @property
    def fibers(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.bin_of == z) for z in range(self.k)]

    def indicator(self) -> np.ndarray:
        """(n, k) one-hot matrix of the assignment."""
        M = np.zeros((self.n, self.k))
        M[np.arange(self.n), self.bin_of] = 1.0
        return M

    def compose(self, f_map) -> "CVAssignment":
        """The CV ``f o xi`` for a map ``f_map`` from this CV's bins to coarser bins."""
        f_map = np.asarray(f_map, dtype=np.int64)
        if f_map.size != self.k:
            raise AssignmentError("outer map must be defined on every bin")
        return CVAssignment(f_map[self.bin_of], int(f_map.max()) + 1, {"composed": True})

    def preimage(self, bins) -> tuple:
        bins = set(int(z) % self.k for z in bins)
        return tuple(int(i) for i in np.flatnonzero(np.isin(self.bin_of, list(bins))))

    def to_dict(self) -> dict:
        return {"bin_of": [int(z) for z in self.bin_of], "k": self.k, "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d) -> "CVAssignment":
        return cls(d["bin_of"], d["k"], dict(d.get("provenance", {})))

    # -- constructors ----------------------------------------------------

    @classmethod
    def identity(cls, n: int) -> "CVAssignment":
        return cls(np.arange(n), n, {"kind": "identity"})

    @classmethod
    def from_lumps(cls, lumps, n: int | None = None) -> "CVAssignment":
        """Bins given as lists of states, e.g. ``[[0], [1, 2]]``."""
        n = sum(len(g) for g in lumps) if n is None else n
        b = np.full(n, -1, dtype=np.int64)
        for z, group in enumerate(lumps):
            for x in group:
                if b[x] != -1:
                    raise AssignmentError(f"state {x} appears in two lumps")
                b[x] = z
        if np.any(b < 0):
            raise AssignmentError(f"states {np.flatnonzero(b < 0).tolist()} are not assigned")
        return cls(b, len(lumps), {"kind": "explicit", "lumps": [list(map(int, g)) for g in lumps]})

    @classmethod
    def from_projection(cls, values, k: int, provenance=None) -> "CVAssignment":
        """Uniform bins over the range of ``values``; empty bins merge into the nearest nonempty one."""
        values = np.asarray(values, dtype=np.float64)
        lo, hi = float(values.min()), float(values.max())
        if k < 1:
            raise ConfigurationError("bin count must be positive")
        edges = np.linspace(lo, hi, k + 1)
        if hi > lo:
            raw = np.floor((values - lo) / (hi - lo) * k).astype(np.int64)
        else:
            raw = np.zeros(values.size, dtype=np.int64)
        raw = np.clip(raw, 0, k - 1)
        occupied = np.flatnonzero(np.bincount(raw, minlength=k) > 0)
        merged = []
        for z in range(k):
            if z not in occupied:
                # nearest occupied bin, ties toward the lower index
                target = int(occupied[np.argmin(np.abs(occupied - z))])
                merged.append([z, target])
        relabel = {int(z): i for i, z in enumerate(occupied)}
        b = np.array([relabel[int(z)] for z in raw], dtype=np.int64)
        prov = dict(provenance or {})
        prov.update({"requested_bins": int(k), "edges": [float(e) for e in edges], "merged": merged})
        return cls(b, occupied.size, prov)

    @classmethod
    def linear_angle(cls, grid: Grid, theta: float, k: int) -> "CVAssignment":
        """Bins of the projection x cos(theta) + y sin(theta) of the cell centers."""
        if grid.dim != 2:
            raise ConfigurationError("linear-angle CVs need a 2-dimensional grid")
        c = grid.centers
        s = c[:, 0] * np.cos(theta) + c[:, 1] * np.sin(theta)
        return cls.from_projection(s, k, {"kind": "linear-angle-2d", "theta": float(theta)})

    @classmethod
    def coordinate(cls, grid: Grid, axis: int, k: int) -> "CVAssignment":
        return cls.from_projection(grid.centers[:, axis], k, {"kind": "coordinate", "axis": int(axis)})


@dataclass(frozen=True, eq=False)
class EffectiveModel:
    model: TransitionModel
    cv: CVAssignment
    # mu(x) / mu_tilde(xi(x)): the conditional law of each state within its fiber
    cond: np.ndarray

    @property
    def P(self) -> np.ndarray:
        return self.model.P

    @property
    def mu(self) -> np.ndarray:
        return self.model.mu

    @property
    def conditionals(self) -> list[np.ndarray]:
        return [self.cond[f] for f in self.cv.fibers]


def build_effective(model: TransitionModel, cv: CVAssignment) -> EffectiveModel:
    """Reduced chain P~(z, w) = sum_{x in fiber z} mu_z(x) P(x, fiber w)."""
    if cv.n != model.n:
        raise AssignmentError(f"CV covers {cv.n} states, model has {model.n}")
    mu_t = np.bincount(cv.bin_of, weights=model.mu, minlength=cv.k)
    cond = model.mu / mu_t[cv.bin_of]
    Pi = cv.indicator()
    Pt = Pi.T @ (cond[:, None] * (model.P @ Pi))
    reduced = TransitionModel(Pt, mu_t, lag=model.lag, source=f"effective:{model.source}")
    return EffectiveModel(reduced, cv, cond)


def lift(cv: CVAssignment, f_tilde) -> np.ndarray:
    return np.asarray(f_tilde, dtype=np.float64)[cv.bin_of]


def project(cv: CVAssignment, cond, f) -> np.ndarray:
    """Fiberwise conditional expectation; ``cond`` is an EffectiveModel or its ``cond`` vector."""
    w = cond.cond if isinstance(cond, EffectiveModel) else np.asarray(cond, dtype=np.float64)
    return np.bincount(cv.bin_of, weights=w * np.asarray(f, dtype=np.float64), minlength=cv.k)


@dataclass(frozen=True)
class LemmaResiduals:
    operator: float
    inner_product: float
    energy: float

    def max(self) -> float:
        return max(self.operator, self.inner_product, self.energy)


def lemma_identity_check(model: TransitionModel, cv: CVAssignment, f_tilde, h_tilde, eff=None) -> LemmaResiduals:
    """Residuals of the lifting identities between full and effective operators."""
    eff = build_effective(model, cv) if eff is None else eff
    f_tilde = np.asarray(f_tilde, dtype=np.float64)
    h_tilde = np.asarray(h_tilde, dtype=np.float64)
    Tf = eff.P @ f_tilde
    lifted = model.P @ lift(cv, f_tilde)
    r1 = float(np.max(np.abs(Tf - project(cv, eff, lifted))))
    r2 = abs(inner(eff.mu, Tf, h_tilde) - inner(model.mu, lifted, lift(cv, h_tilde)))
    r3 = abs(dirichlet_energy(eff.model, f_tilde) - dirichlet_energy(model, lift(cv, f_tilde)))
    return LemmaResiduals(r1, r2, r3)


def effective_adjoint(model: TransitionModel, cv: CVAssignment, eff=None) -> np.ndarray:
    """P~*(z, w) = P~(w, z) mu~(w) / mu~(z)."""
    eff = build_effective(model, cv) if eff is None else eff
    return adjoint(eff.model)


def effective_of_adjoint(model: TransitionModel, cv: CVAssignment) -> np.ndarray:
    """Effective dynamics of the time-reversed process, the second route to P~*."""
    rev = TransitionModel(adjoint(model), model.mu, lag=model.lag, source="adjoint")
    return build_effective(rev, cv).P


def compose_check(model: TransitionModel, cv: CVAssignment, f_map) -> float:
    """Max deviation between the direct and the two-stage effective model of f o xi."""
    direct = build_effective(model, cv.compose(f_map))
    stage = build_effective(model, cv)
    outer = CVAssignment(np.asarray(f_map), int(np.max(f_map)) + 1)
    nested = build_effective(stage.model, outer)
    return float(
        max(np.max(np.abs(direct.P - nested.P)), np.max(np.abs(direct.mu - nested.mu)))
    )


@dataclass(frozen=True)
class MarkovWitness:
    max_z: float
    empirical: np.ndarray
    predicted: np.ndarray


def two_step_witness(states, cv: CVAssignment, eff: EffectiveModel) -> MarkovWitness:
    """Compare empirical two-step bin transitions of the projected chain with P~^2.

    Large z-scores show that the projected process is not Markov.
    """
    z = cv.bin_of[np.asarray(states, dtype=np.int64)]
    k = cv.k
    C = np.zeros((k, k))
    np.add.at(C, (z[:-2], z[2:]), 1.0)
    n_row = C.sum(axis=1, keepdims=True)
    emp = C / np.where(n_row > 0, n_row, 1.0)
    pred = eff.P @ eff.P
    se = np.sqrt(np.maximum(pred * (1.0 - pred), 1e-300) / np.maximum(n_row, 1.0))
    return MarkovWitness(float(np.max(np.abs(emp - pred) / se)), emp, pred)
