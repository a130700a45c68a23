"""Coefficient models and executable assumption checks.

A model is the tuple (b, sigma, h, f, Phi) with the coupling matrix G and
declared Lipschitz/growth constants. Coefficients are configured as
expression strings; the backward component is scalar (m = 1). The driver g
is derived from f by reducing the jump argument through the l kernel.

Assumption checks are sampled over a box, not proved: they can falsify a
declared constant or a monotonicity claim, never certify it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ValidationError
from .expressions import Expr, evaluate, parse_expr, to_text, variables
from .marks import MarkSpace

__all__ = [
    "Constants",
    "MonotonicityParams",
    "CoefficientSet",
    "CheckRow",
    "AssumptionReport",
    "SampleBox",
    "derive_g",
    "assemble_A",
    "check_monotonicity",
    "check_lipschitz_growth",
    "validate_model",
    "model_from_dict",
    "model_to_dict",
]

_SLOPE_TOL = 1e-9

OPTIONAL_CHECKS = ("sigma_growth_xy", "h_growth_xy", "monotonicity",
                   "terminal_monotonicity")


@dataclass(frozen=True)
class Constants:
    """Declared constants: global Lipschitz K, linear growth L, the (z,k)
    slope of sigma, the per-atom (z,k) slopes of h, and their combination
    C_h = max(sup_j L_h(e_j)^2, sum_j L_h(e_j)^2 w_j)."""

    K: float
    L: float
    L_sigma: float
    L_h: tuple[float, ...]
    C_h: float

    def check_against(self, ms: MarkSpace) -> None:
        if len(self.L_h) != ms.n_atoms:
            raise ValidationError(
                f"constants.L_h: expected {ms.n_atoms} entries, got {len(self.L_h)}")
        lh = np.asarray(self.L_h)
        if np.any(lh < 0) or self.L_sigma < 0 or self.K < 0 or self.L < 0:
            raise ValidationError("declared constants must be nonnegative")
        implied = max(float(np.max(lh ** 2)) if lh.size else 0.0,
                      float((lh ** 2) @ ms.weights()))
        if abs(implied - self.C_h) > 1e-12:
            raise ValidationError(
                f"constants.C_h: declared {self.C_h}, implied {implied}")


@dataclass(frozen=True)
class MonotonicityParams:
    beta1: float = 0.0
    beta2: float = 0.0
    beta3: float = 0.0
    mu1: float = 0.0

    def __post_init__(self):
        for name in ("beta1", "beta2", "beta3", "mu1"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")

    def pattern_ok(self, m: int, n: int) -> tuple[bool, str]:
        """Positivity pattern required for the monotone-route theory."""
        if not (self.beta1 + self.beta2 > 0 and self.beta1 + self.beta3 > 0
                and self.beta2 + self.mu1 > 0 and self.beta3 + self.mu1 > 0):
            return False, "need beta1+beta2, beta1+beta3, beta2+mu1, beta3+mu1 all > 0"
        if m > n and not (self.beta1 > 0 and self.mu1 > 0):
            return False, "m > n requires beta1 > 0 and mu1 > 0"
        if m < n and not (self.beta2 > 0 and self.beta3 > 0):
            return False, "m < n requires beta2 > 0 and beta3 > 0"
        return True, ""


@dataclass(frozen=True)
class SampleBox:
    """Coordinate ranges for assumption sampling."""

    t: tuple[float, float] = (0.0, 1.0)
    x: tuple[float, float] = (-5.0, 5.0)
    y: tuple[float, float] = (-5.0, 5.0)
    z: tuple[float, float] = (-5.0, 5.0)
    k: tuple[float, float] = (-5.0, 5.0)


@dataclass(frozen=True)
class CoefficientSet:
    n: int
    d: int
    b_exprs: tuple[Expr, ...]
    sigma_exprs: tuple[tuple[Expr, ...], ...]
    h_exprs: tuple[Expr, ...]
    f_expr: Expr
    phi_expr: Expr
    G: np.ndarray
    constants: Constants
    monotonicity: MonotonicityParams | None = None
    claims: tuple[str, ...] = ()
    sample_box: SampleBox = field(default_factory=SampleBox)
    zeta: np.ndarray | None = None
    zeta_box: np.ndarray | None = None
    name: str = ""

    m: int = 1  # backward dimension is fixed scalar

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValidationError("dimensions n, d must be >= 1")
        if len(self.b_exprs) != self.n:
            raise ValidationError(f"b: expected {self.n} components")
        if len(self.sigma_exprs) != self.n or any(len(r) != self.d for r in self.sigma_exprs):
            raise ValidationError(f"sigma: expected {self.n}x{self.d} components")
        if len(self.h_exprs) != self.n:
            raise ValidationError(f"h: expected {self.n} components")
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        if G.shape != (1, self.n):
            raise ValidationError(f"G: expected shape (1, {self.n}), got {G.shape}")
        if np.all(G == 0):
            raise ValidationError("G must have full rank (a nonzero row)")
        object.__setattr__(self, "G", G)
        allowed_state = {"t", "y", "q"} | self._coord_names("x") | self._coord_names("z")
        for label, exprs in (("b", self.b_exprs),
                             ("sigma", [c for row in self.sigma_exprs for c in row])):
            for ex in exprs:
                bad = variables(ex) - allowed_state
                if bad:
                    raise ValidationError(f"{label}: variables {sorted(bad)} not allowed")
        bad = variables(self.f_expr) - allowed_state
        if bad:
            raise ValidationError(f"f: variables {sorted(bad)} not allowed")
        for ex in self.h_exprs:
            bad = variables(ex) - (allowed_state - {"q"}) - {"k", "e"}
            if bad:
                raise ValidationError(f"h: variables {sorted(bad)} not allowed")
        bad = variables(self.phi_expr) - self._coord_names("x")
        if bad:
            raise ValidationError(f"phi: variables {sorted(bad)} not allowed")
        for c in self.claims:
            if c not in OPTIONAL_CHECKS:
                raise ValidationError(f"unknown claim {c!r}")
        if self.zeta is not None:
            z = np.asarray(self.zeta, dtype=float).reshape(-1)
            if z.shape != (self.n,):
                raise ValidationError(f"zeta: expected {self.n} coordinates")
            object.__setattr__(self, "zeta", z)
        if self.zeta_box is not None:
            zb = np.asarray(self.zeta_box, dtype=float)
            if zb.shape != (self.n, 2):
                raise ValidationError(f"zeta_box: expected shape ({self.n}, 2)")
            object.__setattr__(self, "zeta_box", zb)

    def _coord_names(self, base: str) -> set[str]:
        dim = self.n if base == "x" else self.d
        names = {f"{base}{i + 1}" for i in range(dim)}
        if dim == 1:
            names.add(base)
        return names

    # -- vectorized evaluation ------------------------------------------------

    def _env(self, t, x, y, z, q=None, k=None, e=None) -> tuple[dict, int]:
        x = np.asarray(x, dtype=float).reshape(-1, self.n)
        z = np.asarray(z, dtype=float).reshape(-1, self.d)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        env = {"t": t, "y": y}
        for i in range(self.n):
            env[f"x{i + 1}"] = x[:, i]
        if self.n == 1:
            env["x"] = x[:, 0]
        for i in range(self.d):
            env[f"z{i + 1}"] = z[:, i]
        if self.d == 1:
            env["z"] = z[:, 0]
        if q is not None:
            env["q"] = np.atleast_1d(np.asarray(q, dtype=float))
        if k is not None:
            env["k"] = np.atleast_1d(np.asarray(k, dtype=float))
        if e is not None:
            env["e"] = e
        return env, max(x.shape[0], z.shape[0], y.shape[0])

    def _eval_vec(self, exprs, env, m_rows: int) -> np.ndarray:
        out = np.empty((m_rows, len(exprs)))
        for i, ex in enumerate(exprs):
            out[:, i] = np.broadcast_to(evaluate(ex, env), (m_rows,))
        return out

    def eval_b(self, t, x, y, z, q) -> np.ndarray:
        env, m_rows = self._env(t, x, y, z, q=q)
        return self._eval_vec(self.b_exprs, env, m_rows)

    def eval_sigma(self, t, x, y, z, q) -> np.ndarray:
        env, m_rows = self._env(t, x, y, z, q=q)
        out = np.empty((m_rows, self.n, self.d))
        for i, row in enumerate(self.sigma_exprs):
            for j, ex in enumerate(row):
                out[:, i, j] = np.broadcast_to(evaluate(ex, env), (m_rows,))
        return out

    def eval_h(self, t, x, y, z, k_j, e_j: float) -> np.ndarray:
        env, m_rows = self._env(t, x, y, z, k=k_j, e=e_j)
        return self._eval_vec(self.h_exprs, env, m_rows)

    def eval_f(self, t, x, y, z, q) -> np.ndarray:
        env, m_rows = self._env(t, x, y, z, q=q)
        return np.broadcast_to(evaluate(self.f_expr, env), (m_rows,)).astype(float)

    def eval_phi(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        env = {f"x{i + 1}": x[:, i] for i in range(self.n)}
        if self.n == 1:
            env["x"] = x[:, 0]
        return np.broadcast_to(evaluate(self.phi_expr, env), (x.shape[0],)).astype(float)


def derive_g(cs: CoefficientSet, ms: MarkSpace):
    """g(t,x,y,z,k) = f(t,x,y,z, sum_j k_j l(e_j) w_j) on the discrete marks."""
    lw = ms.l_values() * ms.weights()

    def g(t, x, y, z, k) -> np.ndarray:
        k = np.atleast_2d(np.asarray(k, dtype=float))
        q = k @ lw
        return cs.eval_f(t, x, y, z, q)

    g.reduction = lw
    return g


def assemble_A(cs: CoefficientSet, ms: MarkSpace, t, pi, k) -> np.ndarray:
    """Stacked coefficient vector (-G^T g | G b | G sigma) at (t, pi, k)."""
    x, y, z = pi
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    k = np.atleast_2d(np.asarray(k, dtype=float))
    batch = x.shape[0]
    g = derive_g(cs, ms)(t, x, y, z, k)
    q = k @ (ms.l_values() * ms.weights())
    b = cs.eval_b(t, x, y, z, q)
    sig = cs.eval_sigma(t, x, y, z, q)
    G = cs.G
    out = np.empty((batch, cs.n + 1 + cs.d))
    out[:, :cs.n] = -(g[:, None] * G[0][None, :])
    out[:, cs.n] = b @ G[0]
    out[:, cs.n + 1:] = np.einsum("j,mjd->md", G[0], sig)
    if np.ndim(pi[0]) <= 1 and np.ndim(t) == 0:
        return out[0] if batch == 1 else out
    return out


# -- sampled assumption checks -------------------------------------------------


@dataclass(frozen=True)
class CheckRow:
    name: str
    passed: bool
    margin: float
    witness: dict
    n_samples: int
    note: str = ""


@dataclass(frozen=True)
class AssumptionReport:
    model: str
    rows: tuple[CheckRow, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_table(self) -> str:
        width = max((len(r.name) for r in self.rows), default=4)
        lines = [f"{'check'.ljust(width)}  result  worst margin  note"]
        for r in self.rows:
            status = "pass" if r.passed else "FAIL"
            lines.append(f"{r.name.ljust(width)}  {status:6}  {r.margin:+.6e}  {r.note}")
        return "\n".join(lines)

    def to_json_dict(self) -> dict:
        return {
            "model": self.model,
            "passed": self.passed,
            "checks": [
                {"name": r.name, "passed": r.passed, "margin": r.margin,
                 "witness": r.witness, "n_samples": r.n_samples, "note": r.note}
                for r in self.rows
            ],
        }


def _sample_cloud(cs: CoefficientSet, ms: MarkSpace, n_samples: int,
                  gen: np.random.Generator):
    box = cs.sample_box
    u = lambda lohi, *shape: gen.uniform(lohi[0], lohi[1], size=shape)
    t = u(box.t, n_samples)
    x = u(box.x, n_samples, cs.n)
    y = u(box.y, n_samples)
    z = u(box.z, n_samples, cs.d)
    k = u(box.k, n_samples, ms.n_atoms)
    return t, x, y, z, k


def _row_env(t, x, y, z, k, idx) -> dict:
    return {
        "t": round(float(t[idx]), 6),
        "x": [round(v, 6) for v in np.atleast_1d(x[idx]).tolist()],
        "y": round(float(y[idx]), 6),
        "z": [round(v, 6) for v in np.atleast_1d(z[idx]).tolist()],
        "k": [round(v, 6) for v in np.atleast_1d(k[idx]).tolist()],
    }


def check_monotonicity(cs: CoefficientSet, ms: MarkSpace,
                       params: MonotonicityParams, n_samples: int = 10_000,
                       seed: int = 0) -> AssumptionReport:
    """Sampled falsification of the one-sided monotonicity inequality on A
    plus the terminal alignment condition. A fail is a report, not an error."""
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    gen = rng.generator(seed, rng.STREAM_ASSUMPTION)
    t, x1, y1, z1, k1 = _sample_cloud(cs, ms, n_samples, gen)
    _, x2, y2, z2, k2 = _sample_cloud(cs, ms, n_samples, gen)
    A1 = assemble_A(cs, ms, t, (x1, y1, z1), k1)
    A2 = assemble_A(cs, ms, t, (x2, y2, z2), k2)
    dpi = np.concatenate([x1 - x2, (y1 - y2)[:, None], z1 - z2], axis=1)
    lhs = np.einsum("mi,mi->m", A1 - A2, dpi)
    G = cs.G[0]
    weights = ms.weights()
    for j, atom in enumerate(ms.atoms):
        h1 = cs.eval_h(t, x1, y1, z1, k1[:, j], atom.e)
        h2 = cs.eval_h(t, x2, y2, z2, k2[:, j], atom.e)
        lhs += ((h1 - h2) @ G) * (k1[:, j] - k2[:, j]) * weights[j]
    gx = (x1 - x2) @ G
    gty = np.abs(y1 - y2) * np.linalg.norm(G)
    gtz = np.linalg.norm(z1 - z2, axis=1) * np.linalg.norm(G)
    gtk = (np.abs(k1 - k2) * np.linalg.norm(G)) ** 2 @ weights
    rhs = (-params.beta1 * gx ** 2 - params.beta2 * (gty ** 2 + gtz ** 2)
           - params.beta3 * gtk)
    margins = rhs - lhs
    worst = int(np.argmin(margins))
    rows = [CheckRow(
        name="monotonicity",
        passed=bool(margins[worst] >= -_SLOPE_TOL),
        margin=float(margins[worst]),
        witness={"first": _row_env(t, x1, y1, z1, k1, worst),
                 "second": _row_env(t, x2, y2, z2, k2, worst)},
        n_samples=n_samples,
    )]
    phi1 = cs.eval_phi(x1)
    phi2 = cs.eval_phi(x2)
    phi_margin = (phi1 - phi2) * gx - params.mu1 * gx ** 2
    worst_p = int(np.argmin(phi_margin))
    rows.append(CheckRow(
        name="terminal_monotonicity",
        passed=bool(phi_margin[worst_p] >= -_SLOPE_TOL),
        margin=float(phi_margin[worst_p]),
        witness={"x": _row_env(t, x1, y1, z1, k1, worst_p)["x"],
                 "x_bar": _row_env(t, x2, y2, z2, k2, worst_p)["x"]},
        n_samples=n_samples,
    ))
    ok, msg = params.pattern_ok(cs.m, cs.n)
    rows.append(CheckRow(
        name="monotonicity_parameter_pattern",
        passed=ok, margin=0.0 if ok else -1.0, witness={}, n_samples=0, note=msg,
    ))
    return AssumptionReport(model=cs.name, rows=tuple(rows))


def _k_norm(dk: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return np.sqrt((dk ** 2) @ weights)


def check_lipschitz_growth(cs: CoefficientSet, ms: MarkSpace,
                           n_samples: int = 10_000, seed: int = 0,
                           include_optional: bool | None = None) -> AssumptionReport:
    """Sampled difference quotients against declared constants and growth
    ratios against the declared linear-growth bound."""
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    gen = rng.generator(seed, rng.STREAM_ASSUMPTION)
    con = cs.constants
    weights = ms.weights()
    t, x1, y1, z1, k1 = _sample_cloud(cs, ms, n_samples, gen)
    _, x2, y2, z2, k2 = _sample_cloud(cs, ms, n_samples, gen)
    lw = ms.l_values() * weights
    q1, q2 = k1 @ lw, k2 @ lw
    g = derive_g(cs, ms)

    denom_full = (np.linalg.norm(x1 - x2, axis=1) + np.abs(y1 - y2)
                  + np.linalg.norm(z1 - z2, axis=1) + _k_norm(k1 - k2, weights))
    ok = denom_full > 1e-9
    rows: list[CheckRow] = []

    def slope_row(name: str, diffs: np.ndarray, denom: np.ndarray,
                  declared: float, keep: np.ndarray) -> None:
        ratio = np.where(keep, diffs / np.where(keep, denom, 1.0), 0.0)
        worst = int(np.argmax(ratio))
        margin = declared - float(ratio[worst])
        rows.append(CheckRow(
            name=name, passed=bool(margin >= -_SLOPE_TOL * (1 + declared)),
            margin=margin,
            witness={"first": _row_env(t, x1, y1, z1, k1, worst),
                     "second": _row_env(t, x2, y2, z2, k2, worst),
                     "observed_slope": float(ratio[worst])},
            n_samples=n_samples,
        ))

    b_diff = np.linalg.norm(cs.eval_b(t, x1, y1, z1, q1) - cs.eval_b(t, x2, y2, z2, q2), axis=1)
    slope_row("lipschitz_b", b_diff, denom_full, con.K, ok)
    s1 = cs.eval_sigma(t, x1, y1, z1, q1)
    s2 = cs.eval_sigma(t, x2, y2, z2, q2)
    sig_diff = np.linalg.norm((s1 - s2).reshape(n_samples, -1), axis=1)
    slope_row("lipschitz_sigma", sig_diff, denom_full, con.K, ok)
    g_diff = np.abs(g(t, x1, y1, z1, k1) - g(t, x2, y2, z2, k2))
    slope_row("lipschitz_driver", g_diff, denom_full, con.K, ok)
    phi_diff = np.abs(cs.eval_phi(x1) - cs.eval_phi(x2))
    dx = np.linalg.norm(x1 - x2, axis=1)
    slope_row("lipschitz_terminal", phi_diff, dx, con.K, dx > 1e-9)

    # sigma slope in (z, k) only: freeze (x, y)
    dzk = np.linalg.norm(z1 - z2, axis=1) + _k_norm(k1 - k2, weights)
    s2zk = cs.eval_sigma(t, x1, y1, z2, q2)
    sig_zk = np.linalg.norm((s1 - s2zk).reshape(n_samples, -1), axis=1)
    slope_row("sigma_zk_slope", sig_zk, dzk, con.L_sigma, dzk > 1e-9)

    for j, atom in enumerate(ms.atoms):
        h1 = cs.eval_h(t, x1, y1, z1, k1[:, j], atom.e)
        dzk_j = np.linalg.norm(z1 - z2, axis=1) + np.abs(k1[:, j] - k2[:, j])
        h2zk = cs.eval_h(t, x1, y1, z2, k2[:, j], atom.e)
        slope_row(f"h_zk_slope[{j}]", np.linalg.norm(h1 - h2zk, axis=1),
                  dzk_j, con.L_h[j], dzk_j > 1e-9)
        dxy = np.linalg.norm(x1 - x2, axis=1) + np.abs(y1 - y2)
        h2xy = cs.eval_h(t, x2, y2, z1, k1[:, j], atom.e)
        rho_j = ms.rho_scale * min(1.0, abs(atom.e))
        slope_row(f"h_xy_slope[{j}]", np.linalg.norm(h1 - h2xy, axis=1),
                  dxy, rho_j, dxy > 1e-9)

    # linear growth of (b, sigma, g, phi)
    scale = (1.0 + np.linalg.norm(x1, axis=1) + np.abs(y1)
             + np.linalg.norm(z1, axis=1) + _k_norm(k1, weights))
    growth = (np.linalg.norm(cs.eval_b(t, x1, y1, z1, q1), axis=1)
              + np.linalg.norm(s1.reshape(n_samples, -1), axis=1)
              + np.abs(g(t, x1, y1, z1, k1)) + np.abs(cs.eval_phi(x1)))
    slope_row("growth_linear", growth, scale, con.L, np.ones(n_samples, bool))
    for j, atom in enumerate(ms.atoms):
        h1 = cs.eval_h(t, x1, y1, z1, k1[:, j], atom.e)
        rho_j = ms.rho_scale * min(1.0, abs(atom.e))
        hscale = (1.0 + np.linalg.norm(x1, axis=1) + np.abs(y1)
                  + np.linalg.norm(z1, axis=1) + np.abs(k1[:, j]))
        slope_row(f"growth_h[{j}]", np.linalg.norm(h1, axis=1),
                  hscale, rho_j, np.ones(n_samples, bool))

    # driver monotone in the reduced jump argument
    q_hi = np.maximum(q1, q2)
    q_lo = np.minimum(q1, q2)
    f_gap = cs.eval_f(t, x1, y1, z1, q_hi) - cs.eval_f(t, x1, y1, z1, q_lo)
    worst = int(np.argmin(f_gap))
    rows.append(CheckRow(
        name="driver_monotone_in_q",
        passed=bool(f_gap[worst] >= -_SLOPE_TOL),
        margin=float(f_gap[worst]),
        witness={"q_low": float(q_lo[worst]), "q_high": float(q_hi[worst]),
                 "state": _row_env(t, x1, y1, z1, k1, worst)},
        n_samples=n_samples,
    ))

    claimed = cs.claims if include_optional is None else (
        OPTIONAL_CHECKS if include_optional else ())
    if "sigma_growth_xy" in claimed:
        xyscale = 1.0 + np.linalg.norm(x1, axis=1) + np.abs(y1)
        sig_mag = np.linalg.norm(s1.reshape(n_samples, -1), axis=1)
        slope_row("sigma_growth_xy", sig_mag, xyscale, con.L,
                  np.ones(n_samples, bool))
    if "h_growth_xy" in claimed:
        for j, atom in enumerate(ms.atoms):
            h1 = cs.eval_h(t, x1, y1, z1, k1[:, j], atom.e)
            rho_j = ms.rho_scale * min(1.0, abs(atom.e))
            xyscale = 1.0 + np.linalg.norm(x1, axis=1) + np.abs(y1)
            slope_row(f"h_growth_xy[{j}]", np.linalg.norm(h1, axis=1),
                      xyscale, rho_j, np.ones(n_samples, bool))

    return AssumptionReport(model=cs.name, rows=tuple(rows))


def validate_model(cs: CoefficientSet, ms: MarkSpace, n_samples: int = 10_000,
                   seed: int = 0) -> AssumptionReport:
    """Full sampled validation: constants, slopes, growth, and any claimed
    optional conditions including monotonicity."""
    cs.constants.check_against(ms)
    report = check_lipschitz_growth(cs, ms, n_samples=n_samples, seed=seed)
    rows = list(report.rows)
    if "monotonicity" in cs.claims or "terminal_monotonicity" in cs.claims:
        params = cs.monotonicity or MonotonicityParams()
        mono = check_monotonicity(cs, ms, params, n_samples=n_samples, seed=seed)
        wanted = {"monotonicity", "monotonicity_parameter_pattern"} \
            if "monotonicity" in cs.claims else set()
        if "terminal_monotonicity" in cs.claims:
            wanted.add("terminal_monotonicity")
        rows.extend(r for r in mono.rows if r.name in wanted)
    return AssumptionReport(model=cs.name, rows=tuple(rows))


# -- JSON model documents -------------------------------------------------------


def _require(doc: dict, key: str, kind, path: str):
    if key not in doc:
        raise ValidationError(f"{path}.{key}: missing")
    val = doc[key]
    if kind is float and isinstance(val, (int, float)) and not isinstance(val, bool):
        return float(val)
    if not isinstance(val, kind):
        raise ValidationError(f"{path}.{key}: expected {kind.__name__}")
    return val


def _parse_named(text, where: str) -> Expr:
    if not isinstance(text, str):
        raise ValidationError(f"{where}: expected an expression string")
    try:
        return parse_expr(text)
    except Exception as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def model_from_dict(doc: dict) -> tuple[CoefficientSet, MarkSpace]:
    if not isinstance(doc, dict):
        raise ValidationError("model document must be a JSON object")
    n = int(_require(doc, "n", int, "model"))
    d = int(_require(doc, "d", int, "model"))
    ms = MarkSpace.from_json_dict(_require(doc, "mark_space", dict, "model"))
    b_raw = _require(doc, "b", list, "model")
    if len(b_raw) != n:
        raise ValidationError(f"model.b: expected {n} entries, got {len(b_raw)}")
    b = tuple(_parse_named(s, f"model.b[{i}]") for i, s in enumerate(b_raw))
    s_raw = _require(doc, "sigma", list, "model")
    if len(s_raw) != n or any(not isinstance(r, list) or len(r) != d for r in s_raw):
        raise ValidationError(f"model.sigma: expected an {n}x{d} table")
    sigma = tuple(
        tuple(_parse_named(s, f"model.sigma[{i}][{j}]") for j, s in enumerate(row))
        for i, row in enumerate(s_raw))
    h_raw = _require(doc, "h", list, "model")
    if len(h_raw) != n:
        raise ValidationError(f"model.h: expected {n} entries, got {len(h_raw)}")
    h = tuple(_parse_named(s, f"model.h[{i}]") for i, s in enumerate(h_raw))
    f_expr = _parse_named(_require(doc, "f", str, "model"), "model.f")
    phi = _parse_named(_require(doc, "phi", str, "model"), "model.phi")
    G_raw = _require(doc, "G", list, "model")
    con_raw = _require(doc, "constants", dict, "model")
    lh = con_raw.get("L_h", 0.0)
    if isinstance(lh, (int, float)):
        lh = [float(lh)] * ms.n_atoms
    constants = Constants(
        K=float(_require(con_raw, "K", float, "model.constants")),
        L=float(_require(con_raw, "L", float, "model.constants")),
        L_sigma=float(_require(con_raw, "L_sigma", float, "model.constants")),
        L_h=tuple(float(v) for v in lh),
        C_h=float(_require(con_raw, "C_h", float, "model.constants")),
    )
    mono = None
    if "monotonicity" in doc:
        mraw = _require(doc, "monotonicity", dict, "model")
        mono = MonotonicityParams(
            beta1=float(mraw.get("beta1", 0.0)), beta2=float(mraw.get("beta2", 0.0)),
            beta3=float(mraw.get("beta3", 0.0)), mu1=float(mraw.get("mu1", 0.0)))
    box = SampleBox()
    if "sample_box" in doc:
        braw = _require(doc, "sample_box", dict, "model")
        def pair(key, default):
            v = braw.get(key, default)
            if not (isinstance(v, list) and len(v) == 2):
                raise ValidationError(f"model.sample_box.{key}: expected [lo, hi]")
            return (float(v[0]), float(v[1]))
        box = SampleBox(t=pair("t", [0.0, 1.0]), x=pair("x", [-5.0, 5.0]),
                        y=pair("y", [-5.0, 5.0]), z=pair("z", [-5.0, 5.0]),
                        k=pair("k", [-5.0, 5.0]))
    cs = CoefficientSet(
        n=n, d=d, b_exprs=b, sigma_exprs=sigma, h_exprs=h, f_expr=f_expr,
        phi_expr=phi, G=np.asarray(G_raw, dtype=float), constants=constants,
        monotonicity=mono, claims=tuple(doc.get("claims", ())),
        sample_box=box,
        zeta=doc.get("zeta"), zeta_box=doc.get("zeta_box"),
        name=str(doc.get("name", "")),
    )
    constants.check_against(ms)
    return cs, ms


def model_to_dict(cs: CoefficientSet, ms: MarkSpace) -> dict:
    doc = {
        "name": cs.name,
        "n": cs.n,
        "d": cs.d,
        "b": [to_text(e) for e in cs.b_exprs],
        "sigma": [[to_text(e) for e in row] for row in cs.sigma_exprs],
        "h": [to_text(e) for e in cs.h_exprs],
        "f": to_text(cs.f_expr),
        "phi": to_text(cs.phi_expr),
        "G": cs.G.tolist(),
        "constants": {"K": cs.constants.K, "L": cs.constants.L,
                      "L_sigma": cs.constants.L_sigma,
                      "L_h": list(cs.constants.L_h), "C_h": cs.constants.C_h},
        "mark_space": ms.to_json_dict(),
        "claims": list(cs.claims),
        "sample_box": {"t": list(cs.sample_box.t), "x": list(cs.sample_box.x),
                       "y": list(cs.sample_box.y), "z": list(cs.sample_box.z),
                       "k": list(cs.sample_box.k)},
    }
    if cs.monotonicity is not None:
        doc["monotonicity"] = {"beta1": cs.monotonicity.beta1,
                               "beta2": cs.monotonicity.beta2,
                               "beta3": cs.monotonicity.beta3,
                               "mu1": cs.monotonicity.mu1}
    if cs.zeta is not None:
        doc["zeta"] = np.asarray(cs.zeta).tolist()
    if cs.zeta_box is not None:
        doc["zeta_box"] = np.asarray(cs.zeta_box).tolist()
    return doc
