"""Small-interval Picard solver with regression conditional expectations.

One sweep maps a frozen backward guess v = (y, z, k) to a new one: simulate
the forward state under v, then walk the grid backwards projecting the next
value (and its martingale correlations with the drivers) onto a feature
basis of the current state. On a short enough window the sweep contracts
and the fixed point is the solution; the decoupling field u(t0, .) is the
step-0 value regression of the converged sweep.

Common random numbers: every sweep reuses the same driver bundle, so the
decay of successive differences measures the contraction, not Monte Carlo
noise.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array

from . import rng
from .errors import DivergenceError, ValidationError
from .marks import MarkSpace
from .model import CoefficientSet, derive_g
from .pathsim import (DriverBundle, PathBundle, TimeGrid, euler_forward,
                      sample_drivers, sample_initial_states)

__all__ = [
    "RegressionBasis",
    "PolicyFunction",
    "ZeroPolicy",
    "PolicyChain",
    "SolverConfig",
    "SolveDiagnostics",
    "backward_regression_pass",
    "picard_solve",
    "measure_contraction",
    "find_delta0",
    "decoupling_field",
    "chain_horizon",
    "FBSDESolver",
]


def window_seed(seed: int, index: int) -> int:
    """Deterministic sub-seed for window / replicate number ``index``."""
    return int(np.random.SeedSequence([int(seed), 0xFB5DE, int(index)])
               .generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class RegressionBasis:
    """Global feature basis: total-degree polynomials, or hat functions on a
    knot grid (one-dimensional state only)."""

    kind: str = "poly"
    degree: int = 2
    n_knots: int = 8

    def __post_init__(self):
        if self.kind not in ("poly", "pwlin"):
            raise ValidationError(f"unknown basis kind {self.kind!r}")
        if self.kind == "poly" and self.degree < 0:
            raise ValidationError("polynomial degree must be >= 0")
        if self.kind == "pwlin" and self.n_knots < 2:
            raise ValidationError("piecewise-linear basis needs >= 2 knots")

    def exponents(self, n: int) -> list[tuple[int, ...]]:
        out = []
        for total in range(self.degree + 1):
            for combo in itertools.combinations_with_replacement(range(n), total):
                expo = [0] * n
                for c in combo:
                    expo[c] += 1
                out.append(tuple(expo))
        return out

    def fit_state(self, x: np.ndarray):
        """Per-step basis state learned from the training cloud."""
        if self.kind == "poly":
            return None
        if x.shape[1] != 1:
            raise ValidationError("piecewise-linear basis requires n = 1")
        lo, hi = float(x.min()), float(x.max())
        if hi - lo < 1e-12:
            hi = lo + 1.0
        return np.linspace(lo, hi, self.n_knots)

    def features(self, x: np.ndarray, state) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if self.kind == "poly":
            cols = [np.prod(x ** np.asarray(expo), axis=1)
                    for expo in self.exponents(x.shape[1])]
            return np.column_stack(cols)
        knots = state
        width = knots[1] - knots[0]
        xc = np.clip(x[:, 0], knots[0], knots[-1])
        return np.maximum(0.0, 1.0 - np.abs(xc[:, None] - knots[None, :]) / width)

    def n_features(self, n: int) -> int:
        if self.kind == "poly":
            return len(self.exponents(n))
        return self.n_knots

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "degree": self.degree, "n_knots": self.n_knots}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RegressionBasis":
        return cls(kind=doc.get("kind", "poly"), degree=int(doc.get("degree", 2)),
                   n_knots=int(doc.get("n_knots", 8)))


class PolicyFunction:
    """Per-step regression coefficients for (y, z, k) as functions of the
    state; the terminal map rides along so simulated bundles close exactly."""

    def __init__(self, basis, coef_y, coef_z, coef_k, states, t0, dt, support,
                 terminal=None):
        self.basis = basis
        self.coef_y = coef_y
        self.coef_z = coef_z
        self.coef_k = coef_k
        self.states = states
        self.t0 = t0
        self.dt = dt
        self.support = np.asarray(support, dtype=float)
        self.terminal = terminal

    @property
    def n_steps(self) -> int:
        return len(self.coef_y)

    def evaluate(self, i: int, x: np.ndarray):
        feats = self.basis.features(x, self.states[i])
        y = feats @ self.coef_y[i]
        z = feats @ self.coef_z[i]
        k = feats @ self.coef_k[i]
        return y, z, k

    def y_at(self, i: int, x: np.ndarray) -> np.ndarray:
        feats = self.basis.features(x, self.states[i])
        return feats @ self.coef_y[i]

    def terminal_values(self, x: np.ndarray) -> np.ndarray:
        if self.terminal is None:
            raise ValidationError("policy has no terminal map attached")
        return self.terminal(x)

    def to_json_dict(self) -> dict:
        return {
            "basis": self.basis.to_json_dict(),
            "t0": self.t0,
            "dt": self.dt,
            "support": self.support.tolist(),
            "steps": [
                {"y": np.asarray(self.coef_y[i]).tolist(),
                 "z": np.asarray(self.coef_z[i]).tolist(),
                 "k": np.asarray(self.coef_k[i]).tolist(),
                 "state": None if self.states[i] is None
                 else np.asarray(self.states[i]).tolist()}
                for i in range(self.n_steps)
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "PolicyFunction":
        steps = doc["steps"]
        return cls(
            basis=RegressionBasis.from_json_dict(doc["basis"]),
            coef_y=[np.asarray(s["y"], dtype=float) for s in steps],
            coef_z=[np.asarray(s["z"], dtype=float) for s in steps],
            coef_k=[np.asarray(s["k"], dtype=float) for s in steps],
            states=[None if s["state"] is None else np.asarray(s["state"], dtype=float)
                    for s in steps],
            t0=float(doc["t0"]),
            dt=float(doc["dt"]),
            support=np.asarray(doc["support"], dtype=float),
        )


class ZeroPolicy:
    """The v = 0 start of the contraction iteration."""

    def __init__(self, d: int, n_atoms: int, terminal=None):
        self.d = d
        self.n_atoms = n_atoms
        self.terminal = terminal

    def evaluate(self, i: int, x: np.ndarray):
        m = x.shape[0]
        return np.zeros(m), np.zeros((m, self.d)), np.zeros((m, self.n_atoms))

    def y_at(self, i: int, x: np.ndarray) -> np.ndarray:
        return np.zeros(x.shape[0])

    def terminal_values(self, x: np.ndarray) -> np.ndarray:
        if self.terminal is None:
            raise ValidationError("policy has no terminal map attached")
        return self.terminal(x)


@dataclass(frozen=True)
class SolverConfig:
    delta: float = 0.1
    n_steps: int = 20
    n_paths: int = 20_000
    basis: RegressionBasis = field(default_factory=RegressionBasis)
    picard_tol: float = 1e-4
    max_iter: int = 12
    rho_max: float = 0.5
    t0: float = 0.0
    zeta: np.ndarray | None = None     # fixed initial point; overrides the box
    zeta_box: np.ndarray | None = None
    workers: int = 1

    def __post_init__(self):
        if not self.picard_tol > 0:
            raise ValidationError("picard_tol must be positive")
        if self.max_iter < 2:
            raise ValidationError("max_iter must be >= 2")
        if not (0.0 < self.rho_max < 1.0):
            raise ValidationError("rho_max must lie in (0, 1)")

    def grid(self) -> TimeGrid:
        return TimeGrid(t0=self.t0, delta=self.delta, n_steps=self.n_steps)


@dataclass
class SolveDiagnostics:
    diffs: list            # ||V^{n+1} - V^n|| in the empirical M2 x K2 norm
    ratios: list           # successive diff ratios, as observed
    iterations: int
    converged: bool
    rank_warnings: int     # degenerate feature matrices encountered
    final_norm: float

    def to_json_dict(self) -> dict:
        return {"diffs": self.diffs, "ratios": self.ratios,
                "iterations": self.iterations, "converged": self.converged,
                "rank_warnings": self.rank_warnings, "final_norm": self.final_norm}


class _Projector:
    """Least-squares projection onto the feature columns: one SVD per step
    serves every regression target. Rank-deficient clouds (a constant state,
    say) fall back to the minimum-norm solution, which still reproduces any
    target lying in the column span exactly."""

    def __init__(self, feats: np.ndarray):
        u, s, vt = np.linalg.svd(feats, full_matrices=False)
        cutoff = np.finfo(float).eps * max(feats.shape) * (s[0] if s.size else 0.0)
        keep = s > cutoff
        self.rank = int(keep.sum())
        self.deficient = self.rank < feats.shape[1]
        self._u = u[:, keep]
        self._s = s[keep]
        self._vt = vt[keep]

    def coef(self, targets: np.ndarray) -> np.ndarray:
        t = targets if targets.ndim == 2 else targets[:, None]
        c = self._vt.T @ ((self._u.T @ t) / self._s[:, None])
        return c if targets.ndim == 2 else c[:, 0]


def backward_regression_pass(cs: CoefficientSet, ms: MarkSpace,
                             bundle: PathBundle, terminal_fn, basis: RegressionBasis):
    """Backward sweep on simulated forward paths.

    Descending the grid: the next value is projected onto features of the
    current state; Z and K come from regressing the centered next value
    times the matching normalized driver increment (same conditional
    expectation as the raw product, but exact on constants and with the
    value-level noise removed); Y adds an explicit driver step at the
    regressed conditional mean.
    """
    X = bundle.X
    drivers = bundle.drivers
    grid = bundle.grid
    n_steps = grid.n_steps
    dt = grid.dt
    times = grid.times()
    weights = ms.weights()
    g = derive_g(cs, ms)
    counts = drivers.jumps.counts

    y_next = np.asarray(terminal_fn(X[:, n_steps]), dtype=float)
    if not np.all(np.isfinite(y_next)):
        raise ValidationError("terminal values are not finite on the path cloud")
    coef_y = [None] * n_steps
    coef_z = [None] * n_steps
    coef_k = [None] * n_steps
    states = [None] * n_steps
    rank_warnings = 0
    for i in range(n_steps - 1, -1, -1):
        xi = X[:, i]
        state = basis.fit_state(xi)
        feats = basis.features(xi, state)
        proj = _Projector(feats)
        if proj.deficient:
            rank_warnings += 1
        cy_hat = proj.coef(y_next)
        y_hat = feats @ cy_hat
        resid = y_next - y_hat
        comp = (counts[:, i] - weights * dt) / (weights * dt)
        mart_targets = np.concatenate(
            [resid[:, None] * drivers.dB[:, i] / dt, resid[:, None] * comp], axis=1)
        czk = proj.coef(mart_targets)
        z_i = feats @ czk[:, :cs.d]
        k_i = feats @ czk[:, cs.d:]
        y_i = y_hat + g(times[i], xi, y_hat, z_i, k_i) * dt
        coef_y[i] = proj.coef(y_i)
        coef_z[i] = czk[:, :cs.d]
        coef_k[i] = czk[:, cs.d:]
        states[i] = state
        y_next = y_i
    support = np.stack([X[:, 0].min(axis=0), X[:, 0].max(axis=0)], axis=1)
    policy = PolicyFunction(basis=basis, coef_y=coef_y, coef_z=coef_z,
                            coef_k=coef_k, states=states, t0=grid.t0, dt=dt,
                            support=support, terminal=terminal_fn)
    policy.rank_warnings = rank_warnings
    return policy


def policy_norm_diff(p1, p2, bundle: PathBundle, ms: MarkSpace) -> float:
    """Empirical M2 x K2 distance between two policies along a path cloud:
    sqrt of the Monte Carlo estimate of
    E[int (|dy|^2 + |dz|^2) ds + int int |dk|^2 lambda(de) ds]."""
    grid = bundle.grid
    dt = grid.dt
    weights = ms.weights()
    total = 0.0
    for i in range(grid.n_steps):
        xi = bundle.X[:, i]
        y1, z1, k1 = p1.evaluate(i, xi)
        y2, z2, k2 = p2.evaluate(i, xi)
        total += np.mean((y1 - y2) ** 2) * dt
        total += np.mean(np.sum((z1 - z2) ** 2, axis=1)) * dt
        total += np.mean((k1 - k2) ** 2 @ weights) * dt
    return float(np.sqrt(total))


def _resolve_terminal(cs: CoefficientSet, terminal_fn):
    if terminal_fn is not None:
        return terminal_fn
    return lambda x: cs.eval_phi(x)


def picard_solve(cs: CoefficientSet, ms: MarkSpace, config: SolverConfig,
                 seed: int = 0, terminal_fn=None, drivers: DriverBundle | None = None,
                 zeta_cloud: np.ndarray | None = None):
    """Iterate sweeps from v = 0 until the successive-difference norm drops
    below tolerance; the returned bundle is re-simulated under the fixed
    point so its terminal values match the terminal map exactly."""
    grid = config.grid()
    terminal = _resolve_terminal(cs, terminal_fn)
    if drivers is None:
        drivers = sample_drivers(grid, ms, config.n_paths, seed, d=cs.d,
                                 workers=config.workers)
    if zeta_cloud is None:
        zeta_cloud = sample_initial_states(cs, config.n_paths, seed,
                                           zeta=config.zeta, zeta_box=config.zeta_box)
    policy = ZeroPolicy(cs.d, ms.n_atoms, terminal=terminal)
    diffs: list[float] = []
    rank_warnings = 0
    converged = False
    bundle = None
    for _ in range(config.max_iter):
        bundle = euler_forward(cs, ms, policy, zeta_cloud, drivers)
        new_policy = backward_regression_pass(cs, ms, bundle, terminal, config.basis)
        rank_warnings += new_policy.rank_warnings
        diff = policy_norm_diff(new_policy, policy, bundle, ms)
        diffs.append(diff)
        policy = new_policy
        if diff <= config.picard_tol:
            converged = True
            break
    ratios = [diffs[i] / diffs[i - 1] if diffs[i - 1] > 0 else 0.0
              for i in range(1, len(diffs))]
    if not converged and ratios and ratios[-1] >= 1.0:
        raise DivergenceError(
            f"Picard iteration did not contract (last ratio {ratios[-1]:.3f} >= 1 "
            f"after {len(diffs)} sweeps); reduce the window length delta")
    final_bundle = euler_forward(cs, ms, policy, zeta_cloud, drivers)
    diagnostics = SolveDiagnostics(
        diffs=diffs, ratios=ratios, iterations=len(diffs), converged=converged,
        rank_warnings=rank_warnings, final_norm=diffs[-1] if diffs else 0.0)
    return policy, final_bundle, diagnostics


def measure_contraction(cs: CoefficientSet, ms: MarkSpace, config: SolverConfig,
                        seed: int = 0, n_sweeps: int = 4, terminal_fn=None):
    """Run a fixed number of sweeps without early stopping and report the
    successive-difference norms and their ratios."""
    grid = config.grid()
    terminal = _resolve_terminal(cs, terminal_fn)
    drivers = sample_drivers(grid, ms, config.n_paths, seed, d=cs.d,
                             workers=config.workers)
    zeta_cloud = sample_initial_states(cs, config.n_paths, seed,
                                       zeta=config.zeta, zeta_box=config.zeta_box)
    policy = ZeroPolicy(cs.d, ms.n_atoms, terminal=terminal)
    diffs = []
    for _ in range(n_sweeps):
        bundle = euler_forward(cs, ms, policy, zeta_cloud, drivers)
        new_policy = backward_regression_pass(cs, ms, bundle, terminal, config.basis)
        diffs.append(policy_norm_diff(new_policy, policy, bundle, ms))
        policy = new_policy
    ratios = [diffs[i] / diffs[i - 1] if diffs[i - 1] > 0 else 0.0
              for i in range(1, len(diffs))]
    return diffs, ratios


def find_delta0(cs: CoefficientSet, ms: MarkSpace, config: SolverConfig,
                seed: int = 0) -> tuple[float, list[dict]]:
    """Halve the window until the observed contraction ratio (median over
    the later sweeps) drops below ``rho_max``; keeps the step size fixed."""
    dt = config.delta / config.n_steps
    delta = config.delta
    evidence: list[dict] = []
    while True:
        n_steps = int(round(delta / dt))
        if n_steps < 4:
            raise DivergenceError(
                "window underflow: no delta with >= 4 steps achieved the target "
                f"contraction ratio {config.rho_max} (evidence for "
                f"{len(evidence)} windows); the model violates the smallness "
                "condition in practice")
        cfg = SolverConfig(delta=delta, n_steps=n_steps, n_paths=config.n_paths,
                           basis=config.basis, picard_tol=config.picard_tol,
                           max_iter=config.max_iter, rho_max=config.rho_max,
                           t0=config.t0, zeta=config.zeta,
                           zeta_box=config.zeta_box, workers=config.workers)
        diffs, ratios = measure_contraction(cs, ms, cfg, seed=seed, n_sweeps=4)
        median_ratio = float(np.median(ratios)) if ratios else 0.0
        record = {"delta": delta, "n_steps": n_steps, "diffs": diffs,
                  "ratios": ratios, "median_ratio": median_ratio,
                  "accepted": median_ratio <= config.rho_max}
        evidence.append(record)
        if record["accepted"]:
            return delta, evidence
        delta /= 2.0


def decoupling_field(policy, xs: np.ndarray):
    """u(t0, x) from the step-0 value regression; points outside the
    training support are flagged, not rejected."""
    xs = np.asarray(xs, dtype=float)
    pts = xs.reshape(-1, policy.support.shape[0])
    u = policy.y_at(0, pts)
    lo, hi = policy.support[:, 0], policy.support[:, 1]
    pad = 1e-9 + 0.0 * lo
    outside = np.any((pts < lo - pad) | (pts > hi + pad), axis=1)
    return u, outside


@dataclass
class PolicyChain:
    """Window policies covering [t0, t0 + n_windows * delta], solved by
    backward induction with each window's terminal equal to the next
    window's decoupling field."""

    windows: list  # (window start time, PolicyFunction)
    delta: float

    @property
    def n_windows(self) -> int:
        return len(self.windows)

    def policy(self, w: int) -> PolicyFunction:
        return self.windows[w][1]

    def u_at(self, w: int, step: int, x: np.ndarray) -> np.ndarray:
        return self.policy(w).y_at(step, x)


def chain_horizon(cs: CoefficientSet, ms: MarkSpace, total_horizon: float,
                  config: SolverConfig, seed: int = 0, terminal_fn=None):
    """Cover a longer horizon with small-interval windows, last window first."""
    n_windows = total_horizon / config.delta
    if abs(n_windows - round(n_windows)) > 1e-9:
        raise ValidationError("total horizon must be a multiple of delta")
    n_windows = int(round(n_windows))
    terminal = _resolve_terminal(cs, terminal_fn)
    policies: dict[int, PolicyFunction] = {}
    diags = {}
    for w in range(n_windows - 1, -1, -1):
        t0_w = config.t0 + w * config.delta
        cfg = SolverConfig(delta=config.delta, n_steps=config.n_steps,
                           n_paths=config.n_paths, basis=config.basis,
                           picard_tol=config.picard_tol, max_iter=config.max_iter,
                           rho_max=config.rho_max, t0=t0_w, zeta=config.zeta,
                           zeta_box=config.zeta_box, workers=config.workers)
        if w == n_windows - 1:
            term_w = terminal
        else:
            nxt = policies[w + 1]
            term_w = (lambda p: (lambda x: p.y_at(0, x)))(nxt)
        try:
            policy, _, diag = picard_solve(cs, ms, cfg, seed=window_seed(seed, w),
                                           terminal_fn=term_w)
        except DivergenceError as exc:
            raise DivergenceError(f"window {w} (t0={t0_w:g}): {exc}") from exc
        policies[w] = policy
        diags[w] = diag
    chain = PolicyChain(windows=[(config.t0 + w * config.delta, policies[w])
                                 for w in range(n_windows)], delta=config.delta)
    return chain, diags


class FBSDESolver(BaseEstimator):
    """Estimator facade: ``fit`` runs the Picard solve from a cloud of
    initial states, ``predict`` evaluates the learned decoupling field.

    Parameters mirror SolverConfig; ``model`` is a builtin alias, a model
    document dict, or a (CoefficientSet, MarkSpace) pair.
    """

    def __init__(self, model="T2", delta=0.1, n_steps=20, n_paths=20_000,
                 basis="poly", degree=2, n_knots=8, picard_tol=1e-4,
                 max_iter=12, rho_max=0.5, seed=0):
        self.model = model
        self.delta = delta
        self.n_steps = n_steps
        self.n_paths = n_paths
        self.basis = basis
        self.degree = degree
        self.n_knots = n_knots
        self.picard_tol = picard_tol
        self.max_iter = max_iter
        self.rho_max = rho_max
        self.seed = seed

    def _resolve_model(self):
        from . import presets
        from .model import model_from_dict
        if isinstance(self.model, str):
            return presets.get(self.model)
        if isinstance(self.model, dict):
            return model_from_dict(self.model)
        cs, ms = self.model
        return cs, ms

    def fit(self, X=None, y=None):
        """Solve the window. X, when given, is the (n_samples, n) array of
        initial states; otherwise the model's initial-state box is sampled."""
        cs, ms = self._resolve_model()
        zeta_cloud = None
        n_paths = self.n_paths
        if X is not None:
            X = check_array(X, ensure_2d=True)
            if X.shape[1] != cs.n:
                raise ValidationError(f"X must have {cs.n} columns")
            zeta_cloud = np.asarray(X, dtype=float)
            n_paths = zeta_cloud.shape[0]
        config = SolverConfig(
            delta=self.delta, n_steps=self.n_steps, n_paths=n_paths,
            basis=RegressionBasis(kind=self.basis, degree=self.degree,
                                  n_knots=self.n_knots),
            picard_tol=self.picard_tol, max_iter=self.max_iter,
            rho_max=self.rho_max)
        policy, bundle, diag = picard_solve(cs, ms, config, seed=self.seed,
                                            zeta_cloud=zeta_cloud)
        self.coefficients_ = cs
        self.marks_ = ms
        self.policy_ = policy
        self.bundle_ = bundle
        self.diagnostics_ = diag
        return self

    def predict(self, X):
        """Decoupling field u(t0, x) at the query states."""
        if not hasattr(self, "policy_"):
            raise ValidationError("estimator is not fitted")
        X = check_array(X, ensure_2d=True)
        u, _ = decoupling_field(self.policy_, np.asarray(X, dtype=float))
        return u


def policy_to_json(policy: PolicyFunction) -> str:
    return json.dumps(policy.to_json_dict(), indent=2, sort_keys=True)


def policy_from_json(text: str) -> PolicyFunction:
    return PolicyFunction.from_json_dict(json.loads(text))
