"""Finite mark spaces: the jump part of the driving noise.

The Levy measure is represented as finitely many weighted atoms, so Poisson
sampling and mark integrals are exact. Infinite-activity densities are
reached by truncation away from zero plus midpoint quadrature; the discarded
small-jump mass is recorded via ``cutoff`` and not compensated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ValidationError
from .expressions import Expr, evaluate, parse_expr, to_text, variables

__all__ = [
    "MarkAtom",
    "MarkSpace",
    "JumpSchedule",
    "build_finite",
    "truncate_density",
    "sample_jumps",
    "integrate_mark",
    "rho",
    "l_kernel",
]

DEFAULT_L_EXPR = "cap1(e)"


@dataclass(frozen=True)
class MarkAtom:
    e: float       # mark value, nonzero
    weight: float  # jump intensity per unit time, positive


def _cap1(v):
    return np.minimum(1.0, np.abs(v))


@dataclass(frozen=True)
class MarkSpace:
    atoms: tuple[MarkAtom, ...]
    cutoff: float = 0.0
    rho_scale: float = 1.0
    l_expr: Expr = field(default_factory=lambda: parse_expr(DEFAULT_L_EXPR))
    l_scale: float | None = None

    def __post_init__(self):
        if len(self.atoms) == 0:
            raise ValidationError("mark space needs at least one atom")
        marks = [a.e for a in self.atoms]
        for a in self.atoms:
            if a.e == 0.0:
                raise ValidationError("mark value 0 is not in E")
            if not a.weight > 0.0:
                raise ValidationError(f"atom weight must be positive, got {a.weight}")
            if not (np.isfinite(a.e) and np.isfinite(a.weight)):
                raise ValidationError("atom mark and weight must be finite")
        if len(set(marks)) != len(marks):
            raise ValidationError("atom marks must be pairwise distinct")
        if self.cutoff < 0:
            raise ValidationError("cutoff must be nonnegative")
        if not self.rho_scale > 0:
            raise ValidationError("rho_scale must be positive")
        bad = variables(self.l_expr) - {"e"}
        if bad:
            raise ValidationError(f"l kernel may only use 'e', found {sorted(bad)}")
        l_vals = np.asarray(evaluate(self.l_expr, {"e": self.marks()}), dtype=float)
        l_vals = np.broadcast_to(l_vals, (len(self.atoms),))
        if np.any(l_vals < 0) or not np.all(np.isfinite(l_vals)):
            raise ValidationError("l kernel must be finite and nonnegative on atoms")
        if self.l_scale is None:
            caps = _cap1(self.marks())
            object.__setattr__(self, "l_scale", float(np.max(l_vals / caps)))
        else:
            bound = self.l_scale * _cap1(self.marks())
            if np.any(l_vals > bound * (1 + 1e-12) + 1e-300):
                raise ValidationError("l kernel exceeds l_scale * (1 ^ |e|) on an atom")

    def marks(self) -> np.ndarray:
        return np.array([a.e for a in self.atoms])

    def weights(self) -> np.ndarray:
        return np.array([a.weight for a in self.atoms])

    def l_values(self) -> np.ndarray:
        """l at the atoms, clipped into [0, l_scale * (1 ^ |e|)]."""
        return l_kernel(self, self.marks())

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def total_intensity(self) -> float:
        return float(self.weights().sum())

    def to_json_dict(self) -> dict:
        return {
            "atoms": [{"e": a.e, "w": a.weight} for a in self.atoms],
            "cutoff": self.cutoff,
            "rho_scale": self.rho_scale,
            "l": to_text(self.l_expr),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "MarkSpace":
        try:
            atoms = tuple(MarkAtom(float(a["e"]), float(a["w"])) for a in doc["atoms"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed mark-space document: {exc}") from exc
        return cls(
            atoms=atoms,
            cutoff=float(doc.get("cutoff", 0.0)),
            rho_scale=float(doc.get("rho_scale", 1.0)),
            l_expr=parse_expr(doc.get("l", DEFAULT_L_EXPR)),
        )

    @classmethod
    def from_json(cls, text: str) -> "MarkSpace":
        return cls.from_json_dict(json.loads(text))


@dataclass(frozen=True)
class JumpSchedule:
    """Per-path, per-step, per-atom jump counts on a uniform grid."""

    counts: np.ndarray  # (n_paths, n_steps, n_atoms) int64
    dt: float
    weights: np.ndarray
    seed: int
    stream: int

    @property
    def n_paths(self) -> int:
        return self.counts.shape[0]

    @property
    def n_steps(self) -> int:
        return self.counts.shape[1]


def build_finite(atoms, *, cutoff: float = 0.0, rho_scale: float = 1.0,
                 l: str = DEFAULT_L_EXPR) -> MarkSpace:
    """Mark space from explicit (mark, weight) pairs."""
    if not atoms:
        raise ValidationError("empty atom list")
    return MarkSpace(
        atoms=tuple(MarkAtom(float(e), float(w)) for e, w in atoms),
        cutoff=cutoff,
        rho_scale=rho_scale,
        l_expr=parse_expr(l),
    )


def truncate_density(density, cutoff: float, n_atoms: int, *,
                     support=(-1.0, 1.0), rho_scale: float = 1.0,
                     l: str = DEFAULT_L_EXPR) -> MarkSpace:
    """Midpoint-quadrature discretization of an intensity density restricted
    to ``|e| >= cutoff`` within ``support``; ``n_atoms`` cells per side."""
    if not cutoff > 0:
        raise ValidationError("cutoff must be positive")
    if n_atoms < 1:
        raise ValidationError("need at least one atom per side")
    lo, hi = float(support[0]), float(support[1])
    if lo >= hi:
        raise ValidationError("support bounds must be increasing")
    cells: list[tuple[float, float]] = []
    if lo < -cutoff:
        cells.append((lo, -cutoff))
    if hi > cutoff:
        cells.append((max(cutoff, lo), hi))
    atoms = []
    for a, b in cells:
        edges = np.linspace(a, b, n_atoms + 1)
        mids = 0.5 * (edges[:-1] + edges[1:])
        widths = np.diff(edges)
        vals = np.array([float(density(m)) for m in mids])
        if np.any(vals < 0):
            raise ValidationError("density is negative at a quadrature node")
        for m, w, v in zip(mids, widths, vals):
            if v > 0:
                atoms.append((float(m), float(v * w)))
    if not atoms:
        raise ValidationError("density has empty effective support beyond the cutoff")
    return build_finite(atoms, cutoff=cutoff, rho_scale=rho_scale, l=l)


def _jump_word_layout(ms: MarkSpace, dt: float):
    """Word offsets per atom within one (path, step) cell."""
    words = [rng.poisson_words(w * dt) for w in ms.weights()]
    offsets = np.concatenate([[0], np.cumsum(words)])
    return words, offsets, int(offsets[-1])


def sample_jumps(ms: MarkSpace, grid, n_paths: int,
                 stream: rng.CounterStream, path_lo: int = 0,
                 path_hi: int | None = None) -> JumpSchedule:
    """Poisson counts with mean ``weight_j * dt`` per cell.

    The count at (path p, step i, atom j) depends only on the stream key and
    on (p, i, j), so any worker partition of the path range reproduces the
    same schedule. ``path_lo``/``path_hi`` select a sub-range for chunked or
    parallel generation.
    """
    if n_paths < 1:
        raise ValidationError("n_paths must be >= 1")
    if path_hi is None:
        path_hi = n_paths
    n_steps = grid.n_steps
    dt = grid.dt
    words, offsets, per_cell = _jump_word_layout(ms, dt)
    n_local = path_hi - path_lo
    counts = np.empty((n_local, n_steps, ms.n_atoms), dtype=np.int64)
    start = (path_lo * n_steps) * per_cell
    raw = stream.uniforms(start, n_local * n_steps * per_cell)
    raw = raw.reshape(n_local, n_steps, per_cell)
    for j, w in enumerate(ms.weights()):
        mean = w * dt
        splits = words[j]
        u = raw[:, :, offsets[j]:offsets[j + 1]]
        if splits == 1:
            counts[:, :, j] = rng._poisson_inversion(u[:, :, 0], mean)
        else:
            parts = rng._poisson_inversion(u, mean / splits)
            counts[:, :, j] = parts.sum(axis=2)
    return JumpSchedule(counts=counts, dt=dt, weights=ms.weights(),
                        seed=stream.seed, stream=stream.stream)


def integrate_mark(f, ms: MarkSpace) -> float:
    """Exact mark integral: sum of f at the atoms, weighted by intensity."""
    vals = np.asarray([f(a.e) for a in ms.atoms], dtype=float)
    if not np.all(np.isfinite(vals)):
        bad = ms.atoms[int(np.flatnonzero(~np.isfinite(vals))[0])]
        raise ValidationError(f"integrand is not finite at mark {bad.e}")
    return float(vals @ ms.weights())


def rho(ms: MarkSpace, e):
    """Jump Lipschitz kernel rho(e) = rho_scale * (1 ^ |e|)."""
    return ms.rho_scale * _cap1(e)


def l_kernel(ms: MarkSpace, e):
    """Configured l(e), clipped into [0, l_scale * (1 ^ |e|)]."""
    raw = evaluate(ms.l_expr, {"e": np.asarray(e, dtype=float)})
    raw = np.broadcast_to(np.asarray(raw, dtype=float), np.shape(e))
    return np.clip(raw, 0.0, ms.l_scale * _cap1(e))
