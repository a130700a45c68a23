"""Time grids, driver sampling, forward Euler, and stochastic-integral sums.

The jump coefficient is evaluated at the start-of-step state, approximating
the left limits: the integrand is predictable, which keeps compensated sums
mean-zero in the discrete scheme too.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import SimulationError, ValidationError
from .marks import JumpSchedule, MarkSpace, sample_jumps
from .model import CoefficientSet

__all__ = [
    "TimeGrid",
    "DriverBundle",
    "PathBundle",
    "sample_drivers",
    "euler_forward",
    "ito_integrals",
    "brownian_integral",
    "compensated_jump_integral",
    "raw_jump_integral",
    "time_integral",
    "bundle_to_csv",
]

EXPLOSION_BOUND = 1e9


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    delta: float
    n_steps: int

    def __post_init__(self):
        if not self.delta > 0:
            raise ValidationError("delta must be positive")
        if self.n_steps < 1:
            raise ValidationError("n_steps must be >= 1")

    @property
    def dt(self) -> float:
        return self.delta / self.n_steps

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class DriverBundle:
    grid: TimeGrid
    dB: np.ndarray  # (n_paths, n_steps, d)
    jumps: JumpSchedule
    seed: int

    @property
    def n_paths(self) -> int:
        return self.dB.shape[0]

    @property
    def d(self) -> int:
        return self.dB.shape[2]


@dataclass
class PathBundle:
    """State and backward-component arrays along the grid. Y has a value at
    every node (terminal from the terminal map); Z and K live on steps."""

    grid: TimeGrid
    X: np.ndarray  # (n_paths, n_steps + 1, n)
    Y: np.ndarray  # (n_paths, n_steps + 1)
    Z: np.ndarray  # (n_paths, n_steps, d)
    K: np.ndarray  # (n_paths, n_steps, n_atoms)
    zeta: np.ndarray
    drivers: DriverBundle

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]


def sample_drivers(grid: TimeGrid, ms: MarkSpace, n_paths: int, seed: int,
                   d: int = 1, workers: int = 1) -> DriverBundle:
    """Brownian increments and jump counts from disjoint counter streams.

    The value at (path, step, channel) is a pure function of (seed, path,
    step, channel), so the result is identical for any ``workers`` chunking.
    """
    if n_paths < 1:
        raise ValidationError("n_paths must be >= 1")
    if workers < 1:
        raise ValidationError("workers must be >= 1")
    bstream = rng.CounterStream(seed, rng.STREAM_BROWNIAN)
    jstream = rng.CounterStream(seed, rng.STREAM_JUMPS)
    n_steps = grid.n_steps
    dB = np.empty((n_paths, n_steps, d))
    counts = np.empty((n_paths, n_steps, ms.n_atoms), dtype=np.int64)
    bounds = np.linspace(0, n_paths, workers + 1).astype(int)
    scale = np.sqrt(grid.dt)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi == lo:
            continue
        start = lo * n_steps * d
        count = (hi - lo) * n_steps * d
        dB[lo:hi] = bstream.normals(start, count).reshape(hi - lo, n_steps, d) * scale
        chunk = sample_jumps(ms, grid, n_paths, jstream, path_lo=int(lo), path_hi=int(hi))
        counts[lo:hi] = chunk.counts
    jumps = JumpSchedule(counts=counts, dt=grid.dt, weights=ms.weights(),
                         seed=seed, stream=rng.STREAM_JUMPS)
    return DriverBundle(grid=grid, dB=dB, jumps=jumps, seed=seed)


def sample_initial_states(cs: CoefficientSet, n_paths: int, seed: int,
                          zeta=None, zeta_box=None) -> np.ndarray:
    """Initial-state cloud: a fixed point, or uniform over a box so the
    regression learns the value function on a region."""
    if zeta is not None:
        z = np.asarray(zeta, dtype=float).reshape(-1)
        return np.tile(z, (n_paths, 1))
    box = zeta_box if zeta_box is not None else cs.zeta_box
    if box is None:
        if cs.zeta is None:
            raise ValidationError("no initial state: provide zeta or zeta_box")
        return np.tile(cs.zeta, (n_paths, 1))
    box = np.asarray(box, dtype=float)
    stream = rng.CounterStream(seed, rng.STREAM_INITIAL)
    u = stream.uniforms(0, n_paths * cs.n).reshape(n_paths, cs.n)
    return box[:, 0] + u * (box[:, 1] - box[:, 0])


def euler_forward(cs: CoefficientSet, ms: MarkSpace, policy, zeta: np.ndarray,
                  drivers: DriverBundle) -> PathBundle:
    """Forward Euler for the jump diffusion with backward components read
    from the policy at the start of each step."""
    grid = drivers.grid
    n_paths, n_steps, d = drivers.dB.shape
    zeta = np.asarray(zeta, dtype=float).reshape(n_paths, cs.n)
    counts = drivers.jumps.counts
    weights = ms.weights()
    lw = ms.l_values() * weights
    dt = grid.dt
    times = grid.times()

    X = np.empty((n_paths, n_steps + 1, cs.n))
    Y = np.empty((n_paths, n_steps + 1))
    Z = np.empty((n_paths, n_steps, d))
    K = np.empty((n_paths, n_steps, ms.n_atoms))
    X[:, 0] = zeta
    for i in range(n_steps):
        xi = X[:, i]
        y, z, k = policy.evaluate(i, xi)
        Y[:, i] = y
        Z[:, i] = z
        K[:, i] = k
        q = k @ lw
        b = cs.eval_b(times[i], xi, y, z, q)
        sig = cs.eval_sigma(times[i], xi, y, z, q)
        incr = b * dt + np.einsum("mnd,md->mn", sig, drivers.dB[:, i])
        comp = counts[:, i].astype(float) - weights * dt
        for j, atom in enumerate(ms.atoms):
            hj = cs.eval_h(times[i], xi, y, z, k[:, j], atom.e)
            incr += hj * comp[:, j][:, None]
        nxt = xi + incr
        bad = ~np.all(np.isfinite(nxt), axis=1) | (np.abs(nxt).max(axis=1) > EXPLOSION_BOUND)
        if bad.any():
            p = int(np.flatnonzero(bad)[0])
            raise SimulationError(
                f"state explosion at step {i + 1}, path {p}: "
                f"|X| exceeded {EXPLOSION_BOUND:g} or became non-finite")
        X[:, i + 1] = nxt
    Y[:, n_steps] = policy.terminal_values(X[:, n_steps])
    return PathBundle(grid=grid, X=X, Y=Y, Z=Z, K=K, zeta=zeta, drivers=drivers)


def _phi_values(phi, n_paths: int, n_steps: int, channels: int | None, X, what: str):
    """Resolve an integrand spec (array or callable of (step, X_i)) to an
    array of shape (n_paths, n_steps[, channels])."""
    want = (n_paths, n_steps) if channels is None else (n_paths, n_steps, channels)
    if callable(phi):
        rows = []
        for i in range(n_steps):
            v = np.asarray(phi(i, X[:, i]), dtype=float)
            rows.append(v)
        out = np.stack(rows, axis=1)
    else:
        out = np.asarray(phi, dtype=float)
    if out.shape != want:
        if channels == 1 and out.shape == want[:2]:
            out = out[:, :, None]
        else:
            raise SimulationError(
                f"{what}: integrand shape {out.shape} does not match {want}")
    return out


def brownian_integral(phi, drivers: DriverBundle, X=None) -> np.ndarray:
    """Per-path sum of phi_i . dB_i over steps (Riemann-Ito, left point)."""
    n_paths, n_steps, d = drivers.dB.shape
    vals = _phi_values(phi, n_paths, n_steps, d, X, "brownian_integral")
    return np.einsum("mid,mid->m", vals, drivers.dB)


def compensated_jump_integral(phi, drivers: DriverBundle, X=None) -> np.ndarray:
    """Per-path sum of phi_{i,j} (dN_{i,j} - w_j dt)."""
    counts = drivers.jumps.counts
    n_paths, n_steps, n_atoms = counts.shape
    vals = _phi_values(phi, n_paths, n_steps, n_atoms, X, "compensated_jump_integral")
    comp = counts - drivers.jumps.weights * drivers.jumps.dt
    return np.einsum("mij,mij->m", vals, comp)


def raw_jump_integral(phi, drivers: DriverBundle, X=None) -> np.ndarray:
    """Per-path sum of phi_{i,j} dN_{i,j} against the raw jump measure."""
    counts = drivers.jumps.counts
    n_paths, n_steps, n_atoms = counts.shape
    vals = _phi_values(phi, n_paths, n_steps, n_atoms, X, "raw_jump_integral")
    return np.einsum("mij,mij->m", vals, counts.astype(float))


def time_integral(phi, grid: TimeGrid, n_paths: int, X=None) -> np.ndarray:
    """Per-path sum of phi_i dt."""
    vals = _phi_values(phi, n_paths, grid.n_steps, None, X, "time_integral")
    return vals.sum(axis=1) * grid.dt


def ito_integrals(paths: PathBundle, drivers: DriverBundle, spec: dict) -> np.ndarray:
    """Dispatch on spec = {"kind": ..., "phi": array or callable}."""
    kind = spec.get("kind")
    phi = spec.get("phi")
    if kind == "brownian":
        return brownian_integral(phi, drivers, paths.X)
    if kind == "compensated_jump":
        return compensated_jump_integral(phi, drivers, paths.X)
    if kind == "raw_jump":
        return raw_jump_integral(phi, drivers, paths.X)
    if kind == "dt":
        return time_integral(phi, drivers.grid, drivers.n_paths, paths.X)
    raise ValidationError(f"unknown integral kind {kind!r}")


def bundle_to_csv(bundle: PathBundle, fh) -> None:
    """One row per (path, step); Z and K are empty on the terminal node."""
    n, d, J = bundle.X.shape[2], bundle.Z.shape[2], bundle.K.shape[2]
    writer = csv.writer(fh, lineterminator="\n")
    header = (["path", "step", "t"] + [f"X{i}" for i in range(n)] + ["Y"]
              + [f"Z{i}" for i in range(d)] + [f"K{j}" for j in range(J)])
    writer.writerow(header)
    times = bundle.grid.times()
    n_steps = bundle.grid.n_steps
    for p in range(bundle.n_paths):
        for i in range(n_steps + 1):
            row = [p, i, repr(float(times[i]))]
            row += [repr(float(v)) for v in bundle.X[p, i]]
            row.append(repr(float(bundle.Y[p, i])))
            if i < n_steps:
                row += [repr(float(v)) for v in bundle.Z[p, i]]
                row += [repr(float(v)) for v in bundle.K[p, i]]
            else:
                row += [""] * (d + J)
            writer.writerow(row)
