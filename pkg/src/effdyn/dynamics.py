"""Toy potentials, Brownian/Langevin integrators and discrete chain sampling.

All random draws come from a Philox counter-based generator seeded per
trajectory; Gaussian variates use numpy's ziggurat ``standard_normal``.
Noise is generated up front and the recursion runs in a compiled loop, so a
fixed ``(potential, config)`` pair reproduces the trajectory bit for bit.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .errors import ConfigurationError, EmptyOutputError, SimulationBlowupError

POTENTIAL_KINDS = ("double-well-1d", "double-well-2d", "harmonic", "triple-well-2d")

_DEFAULT_PARAMS = {
    # V(x) = a (x^2 - c)^2
    "double-well-1d": {"a": 1.0, "c": 1.0},
    # V(x, y) = a (x^2 - 1)^2 + kappa y^2
    "double-well-2d": {"a": 1.0, "kappa": 2.0},
    # V(x) = k |x|^2 / 2 in ``dim`` dimensions
    "harmonic": {"k": 1.0, "dim": 1.0},
    # classic three-well landscape with two deep and one shallow minimum
    "triple-well-2d": {"scale": 1.0},
}

_KIND_CODE = {kind: i for i, kind in enumerate(POTENTIAL_KINDS)}


@dataclass(frozen=True)
class Potential:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _KIND_CODE:
            raise ConfigurationError(
                f"unknown potential kind {self.kind!r}; expected one of {POTENTIAL_KINDS}"
            )
        unknown = set(self.params) - set(_DEFAULT_PARAMS[self.kind])
        if unknown:
            raise ConfigurationError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        merged = dict(_DEFAULT_PARAMS[self.kind])
        merged.update({k: float(v) for k, v in self.params.items()})
        object.__setattr__(self, "params", merged)

    @property
    def dim(self) -> int:
        if self.kind == "harmonic":
            return int(self.params["dim"])
        return 1 if self.kind == "double-well-1d" else 2

    @property
    def even(self) -> bool:
        """True if V(-x) = V(x), i.e. the gradient is odd."""
        return self.kind != "triple-well-2d"

    def _packed(self) -> tuple[int, np.ndarray]:
        names = list(_DEFAULT_PARAMS[self.kind])
        return _KIND_CODE[self.kind], np.array([self.params[n] for n in names], dtype=np.float64)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}


@numba.njit(cache=True)
def _energy(code, p, x):
    if code == 0:
        return p[0] * (x[0] * x[0] - p[1]) ** 2
    if code == 1:
        return p[0] * (x[0] * x[0] - 1.0) ** 2 + p[1] * x[1] * x[1]
    if code == 2:
        s = 0.0
        for i in range(x.shape[0]):
            s += x[i] * x[i]
        return 0.5 * p[0] * s
    X = x[0]
    Y = x[1]
    v = (
        3.0 * np.exp(-X * X - (Y - 1.0 / 3.0) ** 2)
        - 3.0 * np.exp(-X * X - (Y - 5.0 / 3.0) ** 2)
        - 5.0 * np.exp(-(X - 1.0) ** 2 - Y * Y)
        - 5.0 * np.exp(-(X + 1.0) ** 2 - Y * Y)
        + 0.2 * X**4
        + 0.2 * (Y - 1.0 / 3.0) ** 4
    )
    return p[0] * v


@numba.njit(cache=True)
def _gradient(code, p, x, out):
    if code == 0:
        out[0] = 4.0 * p[0] * x[0] * (x[0] * x[0] - p[1])
    elif code == 1:
        out[0] = 4.0 * p[0] * x[0] * (x[0] * x[0] - 1.0)
        out[1] = 2.0 * p[1] * x[1]
    elif code == 2:
        for i in range(x.shape[0]):
            out[i] = p[0] * x[i]
    else:
        X = x[0]
        Y = x[1]
        e1 = 3.0 * np.exp(-X * X - (Y - 1.0 / 3.0) ** 2)
        e2 = -3.0 * np.exp(-X * X - (Y - 5.0 / 3.0) ** 2)
        e3 = -5.0 * np.exp(-(X - 1.0) ** 2 - Y * Y)
        e4 = -5.0 * np.exp(-(X + 1.0) ** 2 - Y * Y)
        gx = -2.0 * X * (e1 + e2) - 2.0 * (X - 1.0) * e3 - 2.0 * (X + 1.0) * e4 + 0.8 * X**3
        gy = (
            -2.0 * (Y - 1.0 / 3.0) * e1
            - 2.0 * (Y - 5.0 / 3.0) * e2
            - 2.0 * Y * (e3 + e4)
            + 0.8 * (Y - 1.0 / 3.0) ** 3
        )
        out[0] = p[0] * gx
        out[1] = p[0] * gy


def _as_points(pot: Potential, x) -> np.ndarray:
    pts = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if pts.ndim == 1:
        pts = pts.reshape(-1, pot.dim)
    if pts.shape[-1] != pot.dim:
        raise ConfigurationError(f"{pot.kind} expects {pot.dim}-dimensional points")
    if not np.all(np.isfinite(pts)):
        raise ConfigurationError("potential evaluated at a non-finite point")
    return pts


def eval_potential(pot: Potential, x) -> float | np.ndarray:
    """Evaluate V at one point (returns a float) or at an (n, d) array of points."""
    pts = _as_points(pot, x)
    code, p = pot._packed()
    vals = np.array([_energy(code, p, pt) for pt in pts])
    single = np.ndim(x) == 0 or (np.ndim(x) == 1 and np.size(x) == pot.dim)
    return float(vals[0]) if single else vals


def grad_potential(pot: Potential, x) -> np.ndarray:
    """Analytic gradient; shape (d,) for one point, (n, d) for many."""
    pts = _as_points(pot, x)
    code, p = pot._packed()
    out = np.empty_like(pts)
    for i, pt in enumerate(pts):
        _gradient(code, p, pt, out[i])
    single = np.ndim(x) == 0 or (np.ndim(x) == 1 and np.size(x) == pot.dim)
    return out[0] if single else out


@dataclass(frozen=True)
class SimConfig:
    beta: float
    dt: float
    n_steps: int
    seed: int = 0
    gamma: float | None = None
    x0: tuple | None = None
    v0: tuple | None = None
    # half-width of the configured grid; trajectories beyond 10x this abort
    extent: float = 5.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigurationError("beta must be positive")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigurationError("gamma must be positive")
        if int(self.n_steps) < 1:
            raise ConfigurationError("n_steps must be at least 1")
        if not self.extent > 0:
            raise ConfigurationError("extent must be positive")

    @property
    def guard(self) -> float:
        return 10.0 * self.extent


@dataclass
class Trajectory:
    positions: np.ndarray
    dt: float
    lag: int = 1
    velocities: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim == 1:
            self.positions = self.positions[:, None]

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def n_steps(self) -> int:
        return len(self) - 1


def _initial(value, dim: int) -> np.ndarray:
    if value is None:
        return np.zeros(dim)
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    if arr.size != dim:
        raise ConfigurationError(f"initial state has {arr.size} components, expected {dim}")
    return arr.copy()


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def gaussian_noise(seed: int, n_steps: int, dim: int) -> np.ndarray:
    """The (n_steps, dim) standard normal stream consumed by the integrators."""
    return _rng(seed).standard_normal((int(n_steps), dim))


@numba.njit(cache=True)
def _em_loop(code, p, x0, noise, dt, beta, guard, out):
    d = x0.shape[0]
    g = np.empty(d)
    amp = np.sqrt(2.0 * dt / beta)
    for i in range(d):
        out[0, i] = x0[i]
    for n in range(noise.shape[0]):
        _gradient(code, p, out[n], g)
        for i in range(d):
            out[n + 1, i] = out[n, i] - g[i] * dt + amp * noise[n, i]
            if not abs(out[n + 1, i]) <= guard:
                return n + 1
    return -1


@numba.njit(cache=True)
def _langevin_loop(code, p, x0, v0, noise, dt, beta, gamma, guard, xs, vs):
    d = x0.shape[0]
    g = np.empty(d)
    amp = np.sqrt(2.0 * gamma * dt / beta)
    for i in range(d):
        xs[0, i] = x0[i]
        vs[0, i] = v0[i]
    for n in range(noise.shape[0]):
        _gradient(code, p, xs[n], g)
        for i in range(d):
            xs[n + 1, i] = xs[n, i] + vs[n, i] * dt
            vs[n + 1, i] = vs[n, i] - g[i] * dt - gamma * vs[n, i] * dt + amp * noise[n, i]
            if not abs(xs[n + 1, i]) <= guard:
                return n + 1
    return -1


def simulate_em(pot: Potential, cfg: SimConfig, *, flip_noise: bool = False) -> Trajectory:
    """Euler-Maruyama for overdamped Brownian dynamics.

    ``flip_noise`` negates the Gaussian stream, which mirrors the trajectory
    exactly for even potentials started at ``-x0``.
    """
    code, p = pot._packed()
    noise = gaussian_noise(cfg.seed, cfg.n_steps, pot.dim)
    if flip_noise:
        noise = -noise
    out = np.empty((cfg.n_steps + 1, pot.dim))
    bad = _em_loop(code, p, _initial(cfg.x0, pot.dim), noise, cfg.dt, cfg.beta, cfg.guard, out)
    if bad >= 0:
        raise SimulationBlowupError(bad, float(np.max(np.abs(out[bad]))), cfg.guard)
    return Trajectory(out, dt=cfg.dt)


def simulate_langevin(pot: Potential, cfg: SimConfig) -> Trajectory:
    """Euler-Maruyama on the position/velocity pair of underdamped Langevin dynamics."""
    if cfg.gamma is None:
        raise ConfigurationError("Langevin simulation needs gamma")
    code, p = pot._packed()
    noise = gaussian_noise(cfg.seed, cfg.n_steps, pot.dim)
    xs = np.empty((cfg.n_steps + 1, pot.dim))
    vs = np.empty_like(xs)
    bad = _langevin_loop(
        code,
        p,
        _initial(cfg.x0, pot.dim),
        _initial(cfg.v0, pot.dim),
        noise,
        cfg.dt,
        cfg.beta,
        cfg.gamma,
        cfg.guard,
        xs,
        vs,
    )
    if bad >= 0:
        raise SimulationBlowupError(bad, float(np.max(np.abs(xs[bad]))), cfg.guard)
    return Trajectory(xs, dt=cfg.dt, velocities=vs)


def subsample(traj: Trajectory, lag: int) -> Trajectory:
    """Keep every ``lag``-th point; the recorded lag multiplies the existing one."""
    lag = int(lag)
    if lag < 1:
        raise ConfigurationError("lag must be >= 1")
    if lag >= len(traj):
        raise EmptyOutputError(f"lag {lag} leaves fewer than two points of {len(traj)}")
    vel = None if traj.velocities is None else traj.velocities[::lag].copy()
    return Trajectory(traj.positions[::lag].copy(), dt=traj.dt, lag=traj.lag * lag, velocities=vel)


@numba.njit(cache=True)
def _chain_loop(cum, start, u, out):
    out[0] = start
    n = cum.shape[0]
    for t in range(u.shape[0]):
        row = cum[out[t]]
        j = 0
        while j < n - 1 and u[t] >= row[j]:
            j += 1
        out[t + 1] = j


def simulate_chain(P: np.ndarray, n_steps: int, seed: int, start: int = 0) -> np.ndarray:
    """Sample ``n_steps`` transitions of the finite Markov chain with matrix P."""
    P = np.asarray(P, dtype=np.float64)
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    u = _rng(seed).random(int(n_steps))
    out = np.empty(int(n_steps) + 1, dtype=np.int64)
    _chain_loop(cum, int(start), u, out)
    return out


# -- export ---------------------------------------------------------------

_MAGIC = b"EFFDTRJ1"
_HEADER = struct.Struct("<8sIQdII")


def write_trajectory_binary(traj: Trajectory, path) -> None:
    """Little-endian float64 columns behind a fixed header.

    Header: magic, d (u32), n_steps (u64), dt (f64), lag (u32), has_velocities (u32).
    Body: positions row-major, then velocities when present.
    """
    has_v = traj.velocities is not None
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, traj.dim, traj.n_steps, traj.dt, traj.lag, int(has_v)))
        fh.write(np.ascontiguousarray(traj.positions, dtype="<f8").tobytes())
        if has_v:
            fh.write(np.ascontiguousarray(traj.velocities, dtype="<f8").tobytes())


def read_trajectory_binary(path) -> Trajectory:
    raw = Path(path).read_bytes()
    magic, d, n_steps, dt, lag, has_v = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ConfigurationError(f"{path}: not a trajectory file")
    count = (n_steps + 1) * d
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    pos = body[:count].reshape(n_steps + 1, d).copy()
    vel = body[count : 2 * count].reshape(n_steps + 1, d).copy() if has_v else None
    return Trajectory(pos, dt=dt, lag=lag, velocities=vel)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    header = ["step"] + [f"x{i}" for i in range(traj.dim)]
    if traj.velocities is not None:
        header += [f"v{i}" for i in range(traj.dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for n in range(len(traj)):
            row = [n * traj.lag] + [repr(float(v)) for v in traj.positions[n]]
            if traj.velocities is not None:
                row += [repr(float(v)) for v in traj.velocities[n]]
            w.writerow(row)
