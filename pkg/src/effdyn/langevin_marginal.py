"""Detailed balance of the position marginal of Langevin dynamics.

The Langevin pair (x, v) is not reversible, but the chain of positions sampled
at a fixed lag is reversible with respect to exp(-beta V). Both facts are
checked from simulated data here, never by integrating the phase-space kernel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import Potential, SimConfig, Trajectory, eval_potential, simulate_langevin, subsample
from .errors import ConfigurationError
from .operators import Grid, TransitionModel, build_counts, count_matrix
from .spectral import batch_means


@dataclass(frozen=True, eq=False)
class MarginalRun:
    model: TransitionModel
    trajectory: Trajectory
    states: np.ndarray


def marginal_model(pot: Potential, cfg: SimConfig, lag: int, grid: Grid, reversible: bool = False) -> MarginalRun:
    """Langevin run, subsampled positions, counted on ``grid`` (no symmetrization by default)."""
    if cfg.gamma is None:
        raise ConfigurationError("Langevin marginal needs gamma")
    traj = simulate_langevin(pot, cfg)
    sub = subsample(traj, lag)
    model = build_counts(sub, grid, reversible=reversible)
    return MarginalRun(model, traj, grid.cell_index(sub.positions))


def gibbs_density(pot: Potential, beta: float, grid: Grid, sub: int = 16) -> np.ndarray:
    """exp(-beta V) integrated over each cell (midpoint sub-quadrature), normalized on the grid."""
    offsets = [(np.arange(sub) + 0.5) / sub - 0.5 for _ in range(grid.dim)]
    mesh = np.meshgrid(*offsets, indexing="ij")
    local = np.stack([m.reshape(-1) for m in mesh], axis=1) * grid.widths
    centers = grid.centers
    pts = (centers[:, None, :] + local[None, :, :]).reshape(-1, grid.dim)
    energy = np.asarray(eval_potential(pot, pts)).reshape(centers.shape[0], -1)
    emin = energy.min()
    w = np.exp(-beta * (energy - emin)).mean(axis=1)
    return w / w.sum()


@dataclass(frozen=True)
class DetailedBalanceReport:
    residual: float
    stderr: float
    n_samples: int
    max_z: float
    rms_residual: float
    z_threshold: float = 5.0

    @property
    def verdict(self) -> bool:
        return self.max_z < self.z_threshold

    def to_dict(self) -> dict:
        return {
            "residual": self.residual,
            "stderr": self.stderr,
            "n_samples": self.n_samples,
            "max_z": self.max_z,
            "rms_residual": self.rms_residual,
            "verdict": "pass" if self.verdict else "fail",
        }


def _reference_on_model(model: TransitionModel, reference) -> np.ndarray:
    if reference is None:
        return np.array(model.mu)
    ref = np.asarray(reference, dtype=np.float64)
    if model.states is not None and ref.size != model.n:
        if ref.size <= int(model.states.max()):
            raise ConfigurationError("reference density does not cover the model states")
        ref = ref[model.states]
    if ref.size != model.n:
        raise ConfigurationError("reference density does not match the model states")
    return ref / ref.sum()


def detailed_balance_report(
    model: TransitionModel,
    reference=None,
    states=None,
    n_batches: int = 20,
    z_threshold: float = 5.0,
    deterministic_tol: float = 1e-6,
) -> DetailedBalanceReport:
    """Residuals pi_i P_ij - pi_j P_ji against a reference density ``pi``.

    ``reference`` is a density over grid cells (e.g. ``gibbs_density``) or
    ``None`` for the model's own stationary law. Standard errors come from
    batch means over ``states`` when given, else from multinomial counts; a
    model without counts is judged against ``deterministic_tol``.
    """
    pi = _reference_on_model(model, reference)
    F = pi[:, None] * model.P
    D = F - F.T
    iu = np.triu_indices(model.n, 1)
    d = np.abs(D[iu])
    if model.counts is None:
        worst = int(np.argmax(d)) if d.size else 0
        res = float(d[worst]) if d.size else 0.0
        z = 0.0 if res < deterministic_tol else math.inf
        return DetailedBalanceReport(res, 0.0, 0, z, float(np.sqrt(np.mean(d**2))) if d.size else 0.0, z_threshold)
    n_row = model.counts.sum(axis=1)
    if states is not None:
        se = _batch_se(model, pi, np.asarray(states), n_row, n_batches)
    else:
        var_p = model.P * (1.0 - model.P) / n_row[:, None]
        V = (pi**2)[:, None] * var_p
        se = np.sqrt(V + V.T)
    se = se[iu]
    active = se > 0
    z = np.zeros_like(d)
    z[active] = d[active] / se[active]
    worst = int(np.argmax(d))
    return DetailedBalanceReport(
        float(d[worst]),
        float(se[worst]),
        int(n_row.sum()),
        float(z.max()) if z.size else 0.0,
        float(np.sqrt(np.mean(d**2))),
        z_threshold,
    )


def _batch_se(model, pi, states, n_row, n_batches):
    """Batch-means standard error of each residual, holding row totals fixed."""
    if model.states is not None:
        lookup = np.full(max(int(states.max()) + 1, int(model.states.max()) + 1), -1, dtype=np.int64)
        lookup[model.states] = np.arange(model.n)
        mapped = np.where(states >= 0, lookup[np.clip(states, 0, None)], -1)
    else:
        mapped = states
    size = (mapped.size - 1) // n_batches
    contrib = []
    for b in range(n_batches):
        seg = mapped[b * size : (b + 1) * size + 1]
        C = count_matrix(seg, model.n)
        G = pi[:, None] * C / n_row[:, None]
        contrib.append(G - G.T)
    contrib = np.array(contrib)
    return np.sqrt(n_batches) * contrib.std(axis=0, ddof=1)


def velocity_variance(traj: Trajectory, n_batches: int = 20):
    """Per-component velocity variance with a batch-means standard error."""
    if traj.velocities is None:
        raise ConfigurationError("trajectory has no velocities")
    v = traj.velocities[1:]
    out = []
    for c in range(v.shape[1]):
        out.append(batch_means((v[:, c] - v[:, c].mean()) ** 2, n_batches))
    return out


@dataclass(frozen=True)
class ScalingStudy:
    n_steps: np.ndarray
    rms: np.ndarray

    @property
    def slope(self) -> float:
        """Log-log slope of the rms residual against trajectory length (about -1/2 for pure noise)."""
        return float(np.polyfit(np.log(self.n_steps), np.log(self.rms), 1)[0])


def scaling_study(
    pot: Potential,
    beta: float,
    gamma: float,
    dt: float,
    lag: int,
    grid: Grid,
    base_steps: int,
    doublings: int = 3,
    replicas: int = 4,
    seed: int = 0,
    reference=None,
) -> ScalingStudy:
    """Detailed-balance rms residual at lengths base * 2^j, averaged over independent replicas.

    Mean squared residuals are averaged across replicas before the square
    root, so each point estimates the same quantity with less noise.
    """
    if reference is None:
        reference = gibbs_density(pot, beta, grid)
    lengths, rms = [], []
    for j in range(doublings + 1):
        n = base_steps * 2**j
        ms = []
        for r in range(replicas):
            cfg = SimConfig(beta, dt, n, seed=seed + 1000 * j + r, gamma=gamma, extent=grid.extent)
            run = marginal_model(pot, cfg, lag, grid)
            ms.append(detailed_balance_report(run.model, reference, states=run.states).rms_residual ** 2)
        lengths.append(n)
        rms.append(math.sqrt(float(np.mean(ms))))
    return ScalingStudy(np.array(lengths, dtype=np.float64), np.array(rms))
