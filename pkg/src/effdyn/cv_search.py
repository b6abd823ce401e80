"""Scoring and scanning CV families; eigenvalue and rate comparison reports."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .effective import CVAssignment, build_effective, lift
from .errors import ConfigurationError, InvariantError
from .kl import kl_score
from .operators import Grid, TransitionModel
from .spectral import dirichlet_energy, solve_spectrum, variational_score
from .tpt import SetPair, committor, rate_flux

COMPARISON_TOL = 1e-10


def _weights(weights, m: int) -> np.ndarray:
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.size != m:
        raise ConfigurationError(f"{w.size} weights for m = {m}")
    return w


def effective_eigenvalues(model: TransitionModel, cv: CVAssignment, m: int) -> np.ndarray:
    """lambda~_1..lambda~_m of the effective chain, padded with zeros when k - 1 < m."""
    eff = build_effective(model, cv)
    mm = min(m, cv.k - 1)
    lam = solve_spectrum(eff.model, mm).eigenvalues[1:] if mm > 0 else np.zeros(0)
    out = np.zeros(m)
    out[: lam.size] = lam
    return out


def timescale_objective(model: TransitionModel, cv: CVAssignment, m: int = 1, weights=None, verify: bool = False) -> float:
    """sum_i w_i (1 - lambda~_i) for the effective chain of ``cv``.

    With ``verify`` the value is re-derived as the variational score of the
    lifted effective eigenvectors on the full model.
    """
    w = _weights(weights, m)
    value = float(np.sum(w * (1.0 - effective_eigenvalues(model, cv, m))))
    if verify and cv.k - 1 >= m:
        eff = build_effective(model, cv)
        spec = solve_spectrum(eff.model, m)
        F = np.column_stack([lift(cv, spec.eigenvectors[:, i]) for i in range(1, m + 1)])
        check = variational_score(model, F, w)
        if abs(check - value) > 1e-8:
            raise InvariantError(f"timescale objective {value!r} vs lifted score {check!r}")
    return value


@dataclass(frozen=True, eq=False)
class EigenComparison:
    full: np.ndarray
    effective: np.ndarray
    # residuals[i-1, j-1] for the exact identity relating lambda_i and lambda~_j
    residuals: np.ndarray
    padded: bool = False

    @property
    def gaps(self) -> np.ndarray:
        return self.full - self.effective

    def rows(self) -> list[dict]:
        return [
            {
                "i": i + 1,
                "lambda": float(self.full[i]),
                "lambda_eff": float(self.effective[i]),
                "gap": float(self.gaps[i]),
                "identity_residual": float(self.residuals[i, i]) if i < min(self.residuals.shape) else float("nan"),
            }
            for i in range(self.full.size)
        ]


def eigen_comparison(model: TransitionModel, cv: CVAssignment, m: int) -> EigenComparison:
    spec = solve_spectrum(model, min(m, model.n - 1))
    eff = build_effective(model, cv)
    mm = min(m, cv.k - 1)
    espec = solve_spectrum(eff.model, mm)
    lam = np.zeros(m)
    lam[: spec.eigenvalues.size - 1] = spec.eigenvalues[1:]
    lam_t = np.zeros(m)
    lam_t[:mm] = espec.eigenvalues[1:]
    R = np.full((spec.eigenvalues.size - 1, mm), np.nan)
    for i in range(1, spec.eigenvalues.size):
        phi = spec.eigenvectors[:, i]
        for j in range(1, mm + 1):
            d = lift(cv, espec.eigenvectors[:, j]) - phi
            rhs = dirichlet_energy(model, d) - (1.0 - spec.eigenvalues[i]) * float(np.sum(model.mu * d * d))
            R[i - 1, j - 1] = abs(spec.eigenvalues[i] - espec.eigenvalues[j] - rhs)
    return EigenComparison(lam, lam_t, R, padded=mm < m)


@dataclass(frozen=True, eq=False)
class RateComparison:
    k_full: float
    k_eff: float
    k_eff_energy: float
    gap: float
    q: np.ndarray
    q_eff: np.ndarray

    @property
    def residual(self) -> float:
        return abs(self.k_eff - self.k_full - self.gap)

    def row(self) -> dict:
        return {"k_full": self.k_full, "k_eff": self.k_eff, "gap": self.gap, "residual": self.residual}


def rate_comparison(model: TransitionModel, cv: CVAssignment, A_tilde, B_tilde, tol: float = COMPARISON_TOL) -> RateComparison:
    """Full and effective rates for sets defined through the CV, with their exact gap."""
    sets_t = SetPair(tuple(z % cv.k for z in A_tilde), tuple(z % cv.k for z in B_tilde), cv.k)
    sets = SetPair(cv.preimage(sets_t.A), cv.preimage(sets_t.B), model.n)
    q = committor(model, sets)
    k_full, _ = rate_flux(model, sets, q)
    eff = build_effective(model, cv)
    q_t = committor(eff.model, sets_t)
    k_eff, _ = rate_flux(eff.model, sets_t, q_t)
    k_eff_e = dirichlet_energy(eff.model, q_t)
    gap = dirichlet_energy(model, q - lift(cv, q_t))
    out = RateComparison(k_full, k_eff, k_eff_e, gap, q, q_t)
    if abs(k_eff - k_eff_e) > tol or out.residual > tol:
        raise InvariantError(f"effective rate identity off by {out.residual:.2e}")
    return out


@dataclass(frozen=True)
class CVFamily:
    """Parametric CV family; ``params`` are angles, axes, or indices into ``members``."""

    kind: str
    params: tuple
    k: int = 10
    grid: Grid | None = None
    members: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in ("linear-angle-2d", "coordinate", "explicit-list"):
            raise ConfigurationError(f"unknown CV family {self.kind!r}")
        if self.kind != "explicit-list" and self.grid is None:
            raise ConfigurationError(f"{self.kind} family needs a grid")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    @classmethod
    def angles(cls, grid: Grid, n_angles: int, k: int = 10) -> "CVFamily":
        return cls("linear-angle-2d", tuple(np.arange(n_angles) * math.pi / n_angles), k, grid)

    def cv(self, param: float) -> CVAssignment:
        if self.kind == "linear-angle-2d":
            return CVAssignment.linear_angle(self.grid, param, self.k)
        if self.kind == "coordinate":
            return CVAssignment.coordinate(self.grid, int(param), self.k)
        return self.members[int(param)]


@dataclass(frozen=True, eq=False)
class ScanResult:
    params: np.ndarray
    values: np.ndarray
    argmin_index: int
    lambdas: np.ndarray
    rates: list

    @property
    def argmin(self) -> float:
        return float(self.params[self.argmin_index])

    def rows(self) -> list[dict]:
        out = []
        for i, p in enumerate(self.params):
            row = {"param": float(p), "objective": float(self.values[i])}
            for j, lam in enumerate(self.lambdas[i], start=1):
                row[f"lambda_{j}"] = float(lam)
            rc = self.rates[i]
            row["k_full"] = rc.k_full if rc else ""
            row["k_eff"] = rc.k_eff if rc else ""
            row["gap"] = rc.gap if rc else ""
            out.append(row)
        return out


def scan(
    model: TransitionModel,
    family: CVFamily,
    objective: str = "timescale",
    *,
    m: int = 1,
    weights=None,
    rate_bins=None,
    threads: int = 1,
) -> ScanResult:
    """Evaluate an objective over every family parameter; argmin ties go to the smallest parameter."""
    if objective not in ("timescale", "kl"):
        raise ConfigurationError(f"unknown objective {objective!r}")

    def point(p):
        cv = family.cv(p)
        lam = effective_eigenvalues(model, cv, m)
        if objective == "timescale":
            val = float(np.sum(_weights(weights, m) * (1.0 - lam)))
        else:
            val = kl_score(model, cv)
        rc = None
        if rate_bins is not None and cv.k >= 3:
            rc = rate_comparison(model, cv, rate_bins[0], rate_bins[1])
        return cv.k, val, lam, rc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(point, family.params))
    else:
        results = [point(p) for p in family.params]
    ks = [r[0] for r in results]
    if max(ks) < 2:
        raise ConfigurationError("every CV in the family collapses to fewer than 2 bins")
    params = np.array(family.params)
    values = np.array([r[1] for r in results])
    best = np.flatnonzero(values == values.min())
    idx = int(best[np.argmin(params[best])])
    return ScanResult(params, values, idx, np.array([r[2] for r in results]), [r[3] for r in results])
