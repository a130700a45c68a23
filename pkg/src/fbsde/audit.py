"""Monte Carlo verification harness.

Every estimator is a plain sample mean over per-path functionals with its
standard error, so audits studentize honestly. Conditional estimates are
taken at deterministic initial states, where conditioning on the start
information is ordinary expectation. Scaling laws are checked through
log-log slope fits because the theory's constants are not explicit; the
exponents are the falsifiable content.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .expressions import parse_expr, to_text, variables
from .marks import MarkSpace
from .model import CoefficientSet
from .pathsim import (PathBundle, TimeGrid, euler_forward, sample_drivers,
                      sample_initial_states)
from .solver import (PolicyChain, SolverConfig, backward_regression_pass,
                     picard_solve, window_seed)

__all__ = [
    "MomentEstimate",
    "ScalingFit",
    "LemmaResult",
    "ComparisonResult",
    "StabilityResult",
    "FieldRegularityReport",
    "FUNCTIONALS",
    "estimate_moments",
    "fit_scaling",
    "check_jump_moment_lemma",
    "resimulate",
    "constant_k_bundle",
    "compare_terminal",
    "random_comparison_configs",
    "stability_gap",
    "epsilon_shift_gap",
    "field_regularity",
    "flow_residual",
]

FUNCTIONALS = ("sup_x", "sup_y", "int_z", "int_k", "sup_x_inc")

# Reporting gate for scaling fits: at least 4 points spanning (about) a
# decade; 7.9 admits the documented 0.0125..0.1 grid.
MIN_SPAN_RATIO = 7.9
MIN_FIT_POINTS = 4


@dataclass(frozen=True)
class MomentEstimate:
    functional: str
    p: float
    value: float
    stderr: float
    n_paths: int
    delta: float

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)


def _per_path_functional(bundle: PathBundle, ms: MarkSpace, name: str,
                         p: float) -> np.ndarray:
    dt = bundle.grid.dt
    if name == "sup_x":
        mag = np.linalg.norm(bundle.X, axis=2)
        return mag.max(axis=1) ** p
    if name == "sup_y":
        return np.abs(bundle.Y).max(axis=1) ** p
    if name == "sup_x_inc":
        inc = bundle.X - bundle.zeta[:, None, :]
        return np.linalg.norm(inc, axis=2).max(axis=1) ** p
    if name == "int_z":
        q = (bundle.Z ** 2).sum(axis=(1, 2)) * dt
        return q ** (p / 2.0)
    if name == "int_k":
        q = ((bundle.K ** 2) @ ms.weights()).sum(axis=1) * dt
        return q ** (p / 2.0)
    raise ValidationError(f"unknown functional {name!r}; have {FUNCTIONALS}")


def estimate_moments(bundle: PathBundle, ms: MarkSpace, p: float,
                     which=FUNCTIONALS) -> list[MomentEstimate]:
    """Sample mean and stderr of the discretized moment functionals."""
    if p < 2:
        raise ValidationError("p must be >= 2")
    out = []
    for name in which:
        vals = _per_path_functional(bundle, ms, name, p)
        m = vals.size
        out.append(MomentEstimate(
            functional=name, p=p, value=float(vals.mean()),
            stderr=float(vals.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0,
            n_paths=m, delta=bundle.grid.delta))
    return out


@dataclass(frozen=True)
class ScalingFit:
    functional: str
    p: float
    deltas: tuple[float, ...]
    moments: tuple[float, ...]
    stderrs: tuple[float, ...]
    slope: float | None
    intercept: float | None
    r_squared: float | None
    slope_stderr: float | None
    skipped_reason: str = ""

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)


def _fit_loglog(deltas, moments):
    lx = np.log(np.asarray(deltas))
    ly = np.log(np.asarray(moments))
    n = lx.size
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    se = float(np.sqrt(ss_res / max(n - 2, 1) / sxx)) if sxx > 0 else float("inf")
    return float(slope), float(intercept), r2, se


def _solve_grid_point(cs, ms, config, delta, seed):
    dt = config.delta / config.n_steps
    n_steps = max(4, int(round(delta / dt)))
    cfg = dataclasses.replace(config, delta=delta, n_steps=n_steps)
    _, bundle, _ = picard_solve(cs, ms, cfg, seed=seed)
    return bundle


def fit_scaling(cs: CoefficientSet, ms: MarkSpace, p_list, deltas,
                config: SolverConfig, seed: int = 0,
                functionals=("sup_x_inc", "int_z", "int_k")) -> list[ScalingFit]:
    """Solve at every window length and fit log E[functional] vs log delta.

    The step size of ``config`` is kept across window lengths. Initial state
    is the model's deterministic point (conditioning = plain expectation).
    """
    deltas = sorted(float(dv) for dv in deltas)
    if len(deltas) < MIN_FIT_POINTS:
        raise ValidationError(f"need >= {MIN_FIT_POINTS} window lengths for a fit")
    if deltas[-1] / deltas[0] < MIN_SPAN_RATIO:
        raise ValidationError(
            f"window lengths must span about a decade (ratio >= {MIN_SPAN_RATIO}), "
            f"got {deltas[-1] / deltas[0]:.2f}")
    if config.zeta is None and cs.zeta is None:
        raise ValidationError("scaling audits need a deterministic initial state")
    cfg = config if config.zeta is not None else dataclasses.replace(
        config, zeta=cs.zeta, zeta_box=None)
    estimates: dict[tuple[str, float], list[MomentEstimate]] = {}
    for idx, delta in enumerate(deltas):
        bundle = _solve_grid_point(cs, ms, cfg, delta, window_seed(seed, idx))
        for p in p_list:
            for est in estimate_moments(bundle, ms, p, which=functionals):
                estimates.setdefault((est.functional, p), []).append(est)
    fits = []
    for (name, p), series in estimates.items():
        moments = [e.value for e in series]
        ses = [e.stderr for e in series]
        if min(moments) <= 0:
            fits.append(ScalingFit(
                functional=name, p=p, deltas=tuple(deltas),
                moments=tuple(moments), stderrs=tuple(ses), slope=None,
                intercept=None, r_squared=None, slope_stderr=None,
                skipped_reason="non-positive moment estimate (functional "
                               "vanishes for this model)"))
            continue
        slope, intercept, r2, se = _fit_loglog(deltas, moments)
        fits.append(ScalingFit(
            functional=name, p=p, deltas=tuple(deltas), moments=tuple(moments),
            stderrs=tuple(ses), slope=slope, intercept=intercept,
            r_squared=r2, slope_stderr=se))
    return fits


@dataclass(frozen=True)
class LemmaResult:
    """Both sides of the jump-moment inequality, estimated from the same
    paths: the compensator side and (p/2)^{p/2} times the raw-measure side."""

    p: float
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_stderr: float
    studentized_margin: float
    passed: bool

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)


def check_jump_moment_lemma(bundle: PathBundle, ms: MarkSpace, p: float,
                            threshold: float = 3.0) -> LemmaResult:
    if p < 2:
        raise ValidationError("p must be >= 2")
    dt = bundle.grid.dt
    weights = ms.weights()
    lam_side = (((bundle.K ** 2) @ weights).sum(axis=1) * dt) ** (p / 2.0)
    counts = bundle.drivers.jumps.counts.astype(float)
    mu_side = ((bundle.K ** 2) * counts).sum(axis=(1, 2)) ** (p / 2.0)
    const = (p / 2.0) ** (p / 2.0)
    diff = const * mu_side - lam_side
    m = diff.size
    se = float(diff.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0
    margin = float(diff.mean() / se) if se > 0 else float(np.sign(diff.mean()) * np.inf
                                                          if diff.mean() != 0 else 0.0)
    return LemmaResult(
        p=p,
        lhs=float(lam_side.mean()),
        lhs_stderr=float(lam_side.std(ddof=1) / np.sqrt(m)),
        rhs=float(const * mu_side.mean()),
        rhs_stderr=float(const * mu_side.std(ddof=1) / np.sqrt(m)),
        studentized_margin=margin,
        passed=bool(margin >= -threshold),
    )


def resimulate(cs: CoefficientSet, ms: MarkSpace, policy, config: SolverConfig,
               seed: int) -> PathBundle:
    """Out-of-sample evaluation bundle: fresh drivers under a frozen policy.
    Regression coefficients are independent of these drivers, so predictable
    evaluations decorrelate from the jump counts."""
    grid = config.grid()
    drivers = sample_drivers(grid, ms, config.n_paths, seed, d=cs.d,
                             workers=config.workers)
    zeta = sample_initial_states(cs, config.n_paths, seed, zeta=config.zeta,
                                 zeta_box=config.zeta_box)
    return euler_forward(cs, ms, policy, zeta, drivers)


def constant_k_bundle(ms: MarkSpace, grid: TimeGrid, c: float, n_paths: int,
                      seed: int = 0) -> PathBundle:
    """Synthetic bundle with K identically c on real jump drivers; the
    analytic reference case of the jump-moment inequality."""
    drivers = sample_drivers(grid, ms, n_paths, seed, d=1)
    shape = (n_paths, grid.n_steps)
    return PathBundle(
        grid=grid,
        X=np.zeros((n_paths, grid.n_steps + 1, 1)),
        Y=np.zeros((n_paths, grid.n_steps + 1)),
        Z=np.zeros(shape + (1,)),
        K=np.full(shape + (ms.n_atoms,), float(c)),
        zeta=np.zeros((n_paths, 1)),
        drivers=drivers,
    )


# -- comparison theorem ----------------------------------------------------------


@dataclass(frozen=True)
class ComparisonResult:
    query_points: tuple
    gaps: tuple            # mean Y1 - Y2 per query point
    stderrs: tuple
    min_studentized: float
    passed: bool
    control_exact_zero: bool | None = None

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)


def _require_comparison_form(cs: CoefficientSet) -> None:
    """The comparison statement covers forward coefficients free of the jump
    argument: b, sigma without q; h without k."""
    for label, exprs in (("b", cs.b_exprs),
                         ("sigma", [c for row in cs.sigma_exprs for c in row])):
        for ex in exprs:
            if "q" in variables(ex):
                raise ValidationError(
                    f"comparison audit needs {label} independent of the jump "
                    "argument q")
    for ex in cs.h_exprs:
        if "k" in variables(ex):
            raise ValidationError("comparison audit needs h independent of k")


def _with_phi(cs: CoefficientSet, phi) -> CoefficientSet:
    expr = parse_expr(phi) if isinstance(phi, str) else phi
    return dataclasses.replace(cs, phi_expr=expr)


def compare_terminal(cs: CoefficientSet, ms: MarkSpace, phi1, phi2,
                     config: SolverConfig, seed: int = 0,
                     query_points=None, n_replicates: int = 3,
                     threshold: float = 3.0) -> ComparisonResult:
    """Solve twice under common random numbers with ordered terminal
    functions and studentize the initial-value gap at query states."""
    _require_comparison_form(cs)
    cs1 = _with_phi(cs, phi1)
    cs2 = _with_phi(cs, phi2)
    if query_points is None:
        box = config.zeta_box if config.zeta_box is not None else cs.zeta_box
        if box is None:
            raise ValidationError("no query points and no initial-state box")
        query_points = np.linspace(box[0][0], box[0][1], 5)[:, None]
    query_points = np.atleast_2d(np.asarray(query_points, dtype=float))
    gaps = np.empty((n_replicates, query_points.shape[0]))
    identical = to_text(cs1.phi_expr) == to_text(cs2.phi_expr)
    for r in range(n_replicates):
        rseed = window_seed(seed, r)
        p1, b1, _ = picard_solve(cs1, ms, config, seed=rseed)
        p2, b2, _ = picard_solve(cs2, ms, config, seed=rseed)
        phi1_terminal = cs1.eval_phi(b2.X[:, -1])
        phi2_terminal = cs2.eval_phi(b2.X[:, -1])
        if np.any(phi1_terminal < phi2_terminal - 1e-12):
            raise ValidationError(
                "hypothesis failure: terminal ordering phi1 >= phi2 is violated "
                "on the sampled terminal states; the comparison test does not apply")
        u1, _ = _field_values(p1, query_points)
        u2, _ = _field_values(p2, query_points)
        gaps[r] = u1 - u2
    mean_gap = gaps.mean(axis=0)
    se = gaps.std(axis=0, ddof=1) / np.sqrt(n_replicates) if n_replicates > 1 \
        else np.zeros_like(mean_gap)
    stud = np.where(se > 0, mean_gap / np.where(se > 0, se, 1.0),
                    np.where(mean_gap >= 0, np.inf, -np.inf))
    stud = np.where((se == 0) & (mean_gap == 0), 0.0, stud)
    return ComparisonResult(
        query_points=tuple(map(tuple, query_points.tolist())),
        gaps=tuple(mean_gap.tolist()),
        stderrs=tuple(se.tolist()),
        min_studentized=float(stud.min()),
        passed=bool(stud.min() >= -threshold),
        control_exact_zero=bool(np.all(gaps == 0.0)) if identical else None,
    )


def _field_values(policy, pts):
    from .solver import decoupling_field
    return decoupling_field(policy, pts)


def random_comparison_configs(base_cs: CoefficientSet, n_configs: int,
                              seed: int = 0):
    """Random coefficient/terminal-pair configurations inside the comparison
    class: coefficients free of the jump argument, driver non-decreasing in
    q, and phi1 = phi2 + a pointwise-nonnegative bump."""
    gen = np.random.Generator(np.random.Philox(key=seed))
    configs = []
    for _ in range(n_configs):
        c_b0, c_by = gen.uniform(-0.4, 0.4, 2)
        c_s0 = gen.uniform(0.5, 1.2)
        c_sx = gen.uniform(-0.2, 0.2)
        c_h = gen.uniform(0.0, 0.2)
        c_g0, c_gy = gen.uniform(-0.4, 0.4, 2)
        c_gq = gen.uniform(0.0, 0.4)
        a1 = gen.uniform(0.5, 1.5)
        a2 = gen.uniform(-0.3, 0.3)
        s0 = gen.uniform(0.0, 0.6)
        s1 = gen.uniform(0.0, 0.5)
        phi2 = f"{a1:.6f}*x + {a2:.6f}*tanh(x)"
        phi1 = f"{phi2} + {s0:.6f} + {s1:.6f}*(1 + tanh(x))"
        doc_b = f"{c_b0:.6f} + {c_by:.6f}*y"
        doc_sigma = f"{c_s0:.6f} + {c_sx:.6f}*tanh(x)"
        doc_h = f"{c_h:.6f}*cap1(e)*tanh(x)"
        doc_f = f"{c_g0:.6f} + {c_gy:.6f}*y + {c_gq:.6f}*q"
        cs = dataclasses.replace(
            base_cs,
            b_exprs=(parse_expr(doc_b),),
            sigma_exprs=((parse_expr(doc_sigma),),),
            h_exprs=(parse_expr(doc_h),),
            f_expr=parse_expr(doc_f),
            phi_expr=parse_expr(phi2),
            name=f"{base_cs.name}-cmp",
        )
        configs.append((cs, phi1, phi2))
    return configs


# -- stability under coefficient perturbation ------------------------------------


@dataclass(frozen=True)
class StabilityResult:
    gap: float
    gap_stderr: float
    lhs: float                  # squared initial gap
    rhs_terms: dict             # per-term expectations along the first solution
    c_hat: float | None
    refined_c_hat: float | None
    ratio: float | None
    passed: bool
    inconsistent: bool

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coef_sq_gap_terms(cs1, cs2, ms, bundle) -> dict:
    """RHS integrals of the perturbation bound evaluated along the first
    model's solution; the b and g terms carry the extra window-length factor."""
    grid = bundle.grid
    dt = grid.dt
    delta = grid.delta
    times = grid.times()
    weights = ms.weights()
    lw = ms.l_values() * weights
    n_paths = bundle.n_paths
    term_b = np.zeros(n_paths)
    term_sigma = np.zeros(n_paths)
    term_g = np.zeros(n_paths)
    term_h = np.zeros(n_paths)
    for i in range(grid.n_steps):
        x, y, z, k = bundle.X[:, i], bundle.Y[:, i], bundle.Z[:, i], bundle.K[:, i]
        q = k @ lw
        db = cs1.eval_b(times[i], x, y, z, q) - cs2.eval_b(times[i], x, y, z, q)
        term_b += np.sum(db ** 2, axis=1) * dt
        ds = cs1.eval_sigma(times[i], x, y, z, q) - cs2.eval_sigma(times[i], x, y, z, q)
        term_sigma += np.sum(ds ** 2, axis=(1, 2)) * dt
        dg = cs1.eval_f(times[i], x, y, z, q) - cs2.eval_f(times[i], x, y, z, q)
        term_g += dg ** 2 * dt
        for j, atom in enumerate(ms.atoms):
            dh = (cs1.eval_h(times[i], x, y, z, k[:, j], atom.e)
                  - cs2.eval_h(times[i], x, y, z, k[:, j], atom.e))
            term_h += np.sum(dh ** 2, axis=1) * weights[j] * dt
    dphi = cs1.eval_phi(bundle.X[:, -1]) - cs2.eval_phi(bundle.X[:, -1])
    return {
        "phi": float(np.mean(dphi ** 2)),
        "b": delta * float(np.mean(term_b)),
        "sigma": float(np.mean(term_sigma)),
        "g": delta * float(np.mean(term_g)),
        "h": float(np.mean(term_h)),
    }


def _initial_gap(cs1, cs2, ms, config, seed, n_replicates):
    """Initial-value gap at the fixed initial state under common random
    numbers, replicated over sub-seeds for an honest stderr."""
    gaps = []
    bundle1 = None
    for r in range(n_replicates):
        rseed = window_seed(seed, 100 + r)
        p1, b1, _ = picard_solve(cs1, ms, config, seed=rseed)
        p2, _, _ = picard_solve(cs2, ms, config, seed=rseed)
        zeta = config.zeta if config.zeta is not None else cs1.zeta
        pt = np.asarray(zeta, dtype=float).reshape(1, -1)
        u1, _ = _field_values(p1, pt)
        u2, _ = _field_values(p2, pt)
        gaps.append(float(u1[0] - u2[0]))
        if bundle1 is None:
            bundle1 = b1
    gaps = np.asarray(gaps)
    se = float(gaps.std(ddof=1) / np.sqrt(len(gaps))) if len(gaps) > 1 else 0.0
    return float(gaps.mean()), se, bundle1


def stability_gap(cs1: CoefficientSet, cs2: CoefficientSet, ms: MarkSpace,
                  config: SolverConfig, seed: int = 0, n_replicates: int = 3,
                  refine: bool = True) -> StabilityResult:
    """Perturbation audit: implied constant, and its stability under doubled
    paths and halved steps when ``refine`` is set."""
    if config.zeta is None and cs1.zeta is None:
        raise ValidationError("stability audit needs a deterministic initial state")
    cfg = config if config.zeta is not None else dataclasses.replace(
        config, zeta=cs1.zeta, zeta_box=None)
    gap, gap_se, bundle1 = _initial_gap(cs1, cs2, ms, cfg, seed, n_replicates)
    terms = _coef_sq_gap_terms(cs1, cs2, ms, bundle1)
    rhs_sum = sum(terms.values())
    lhs = gap ** 2
    noise = (3.0 * gap_se) ** 2
    inconsistent = rhs_sum <= 1e-14 and lhs > noise
    c_hat = lhs / rhs_sum if rhs_sum > 1e-14 else None
    refined_c_hat = None
    ratio = None
    passed = not inconsistent
    if refine and c_hat is not None:
        fine = dataclasses.replace(cfg, n_paths=2 * cfg.n_paths,
                                   n_steps=2 * cfg.n_steps)
        gap2, _, bundle2 = _initial_gap(cs1, cs2, ms, fine, seed + 1, n_replicates)
        terms2 = _coef_sq_gap_terms(cs1, cs2, ms, bundle2)
        rhs2 = sum(terms2.values())
        refined_c_hat = gap2 ** 2 / rhs2 if rhs2 > 1e-14 else None
        if refined_c_hat is not None and c_hat > 0:
            ratio = refined_c_hat / c_hat
            passed = passed and 0.5 <= ratio <= 2.0
    return StabilityResult(gap=gap, gap_stderr=gap_se, lhs=lhs, rhs_terms=terms,
                           c_hat=c_hat, refined_c_hat=refined_c_hat, ratio=ratio,
                           passed=passed, inconsistent=inconsistent)


def epsilon_shift_gap(cs: CoefficientSet, ms: MarkSpace, epsilon: float,
                      config: SolverConfig, seed: int = 0,
                      n_replicates: int = 3):
    """Terminal shifted by a constant: gap of initial values vs epsilon."""
    shifted = dataclasses.replace(
        cs, phi_expr=parse_expr(f"{to_text(cs.phi_expr)} + ({epsilon!r})"))
    cfg = config if config.zeta is not None else dataclasses.replace(
        config, zeta=cs.zeta, zeta_box=None)
    gap, gap_se, _ = _initial_gap(shifted, cs, ms, cfg, seed, n_replicates)
    return gap, gap_se


# -- decoupling-field regularity and the flow property ---------------------------


@dataclass(frozen=True)
class FieldRegularityReport:
    lipschitz_ratio: float
    growth_ratio: float
    n_pairs: int

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)


def field_regularity(policy, seed: int = 0, n_pairs: int = 512,
                     min_separation: float | None = None) -> FieldRegularityReport:
    """Empirical Lipschitz and linear-growth ratios of the decoupling field
    over random pairs inside the training support."""
    support = policy.support
    n = support.shape[0]
    gen = np.random.Generator(np.random.Philox(key=seed))
    lo, hi = support[:, 0], support[:, 1]
    if min_separation is None:
        min_separation = 0.05 * float(np.max(hi - lo) + 1e-12)
    a = gen.uniform(lo, hi, size=(n_pairs, n))
    b = gen.uniform(lo, hi, size=(n_pairs, n))
    dist = np.linalg.norm(a - b, axis=1)
    keep = dist >= min_separation
    ua, _ = _field_values(policy, a)
    ub, _ = _field_values(policy, b)
    lip = float(np.max(np.abs(ua - ub)[keep] / dist[keep])) if keep.any() else 0.0
    growth = float(np.max(np.abs(ua) / (1.0 + np.linalg.norm(a, axis=1))))
    return FieldRegularityReport(lipschitz_ratio=lip, growth_ratio=growth,
                                 n_pairs=int(keep.sum()))


def flow_residual(cs: CoefficientSet, ms: MarkSpace, chain: PolicyChain,
                  config: SolverConfig, seed: int = 0) -> float:
    """Average squared disagreement between the solved value policies and an
    independent re-estimate on fresh paths.

    Fresh forward paths are driven by the solved chain (common coupling);
    each window then gets one fresh backward sweep against the original next
    window's field. Both sides share the basis, so the basis projection bias
    cancels and the residual tracks the Monte Carlo error, which must shrink
    under refinement.
    """
    fresh_seed = window_seed(seed, 10_000)
    total = 0.0
    n_terms = 0
    zeta = sample_initial_states(cs, config.n_paths, fresh_seed,
                                 zeta=config.zeta, zeta_box=config.zeta_box)
    x_start = zeta
    for w, (t0_w, policy) in enumerate(chain.windows):
        grid = TimeGrid(t0=t0_w, delta=chain.delta, n_steps=policy.n_steps)
        drivers = sample_drivers(grid, ms, config.n_paths,
                                 window_seed(fresh_seed, w), d=cs.d)
        bundle = euler_forward(cs, ms, policy, x_start, drivers)
        if w + 1 < chain.n_windows:
            nxt = chain.policy(w + 1)
            terminal = (lambda p: (lambda x: p.y_at(0, x)))(nxt)
        else:
            terminal = lambda x: cs.eval_phi(x)
        fresh = backward_regression_pass(cs, ms, bundle, terminal, config.basis)
        for i in range(policy.n_steps):
            xi = bundle.X[:, i]
            resid = fresh.y_at(i, xi) - policy.y_at(i, xi)
            total += float(np.mean(resid ** 2))
            n_terms += 1
        x_start = bundle.X[:, -1]
    return total / max(n_terms, 1)
