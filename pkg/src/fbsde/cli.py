"""Command-line front end: configuration ingestion, experiment orchestration,
run-artifact persistence, and report emission.

Every run writes into ``<out>/<command>/<label>/``: a manifest first, then
CSVs, JSON verdicts, and SVG plots. All randomness flows from --seed through
named substreams; reruns of the same plan at the same seed reproduce CSVs
byte for byte (plot timestamp metadata is suppressed).
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, audit, presets
from .errors import BudgetError, ValidationError
from .model import model_from_dict, validate_model
from .pathsim import bundle_to_csv
from .solver import (RegressionBasis, SolverConfig, chain_horizon,
                     decoupling_field, find_delta0, picard_solve)

DEFAULT_BUDGET = 10_000_000  # path-steps per run


def load_model(ref: str):
    """Resolve a builtin alias or a JSON file into model objects.

    Returns (cs, ms, document, raw bytes used for the manifest hash).
    """
    if ref in presets.REGISTRY:
        doc = presets.preset_dict(ref)
        raw = json.dumps(doc, indent=2, sort_keys=True).encode()
        cs, ms = model_from_dict(doc)
        return cs, ms, doc, raw
    path = Path(ref)
    if not path.exists():
        raise ValidationError(f"model {ref!r}: not a builtin alias and file not found")
    raw = path.read_bytes()
    try:
        doc = json.loads(raw.decode())
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"model {ref!r}: JSON schema error at byte offset {exc.pos}: {exc.msg}"
        ) from exc
    cs, ms = model_from_dict(doc)
    return cs, ms, doc, raw


def _out_root(args) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get("FBSDE_OUT")
    return Path(env) if env else Path("fbsde-runs")


def _run_dir(args, command: str) -> Path:
    label = args.label or _dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    d = _out_root(args) / command / label
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
            for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_manifest(run_dir: Path, command: str, model_ref: str, raw: bytes,
                   config: dict, seed: int, outputs: list[str]) -> None:
    manifest = {
        "tool": "fbsde",
        "version": __version__,
        "command": command,
        "model": model_ref,
        "model_sha256": hashlib.sha256(raw).hexdigest(),
        "config": config,
        "seed": seed,
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "outputs": outputs,
    }
    _write_json(run_dir / "manifest.json", manifest)


def check_budget(cost: int, budget: int) -> None:
    if cost > budget:
        raise BudgetError(
            f"plan needs {cost} path-steps, over the budget of {budget}; "
            "raise --budget or shrink the sweep")


def _solver_config(args, cs) -> SolverConfig:
    basis = RegressionBasis(kind=args.basis, degree=args.degree,
                            n_knots=args.knots)
    zeta = None
    zeta_box = None
    if getattr(args, "zeta", None):
        zeta = np.array([float(v) for v in args.zeta.split(",")])
    return SolverConfig(delta=args.delta, n_steps=args.steps,
                        n_paths=args.paths, basis=basis,
                        picard_tol=args.tol, max_iter=args.max_iter,
                        rho_max=args.rho_max, zeta=zeta, zeta_box=zeta_box,
                        workers=args.workers)


def _parse_deltas(spec: str) -> list[float]:
    """``a:b:n`` is n geometric points from a to b; a comma list is literal."""
    if ":" in spec:
        a, b, n = spec.split(":")
        return list(np.geomspace(float(a), float(b), int(n)))
    return [float(v) for v in spec.split(",")]


def _config_dict(config: SolverConfig) -> dict:
    doc = dataclasses.asdict(config)
    doc["zeta"] = None if config.zeta is None else np.asarray(config.zeta).tolist()
    doc["zeta_box"] = (None if config.zeta_box is None
                       else np.asarray(config.zeta_box).tolist())
    return doc


# -- commands --------------------------------------------------------------------


def cmd_validate(args) -> int:
    cs, ms, _, raw = load_model(args.model)
    report = validate_model(cs, ms, n_samples=args.samples, seed=args.seed)
    print(report.to_table())
    if args.out:
        run_dir = _run_dir(args, "validate")
        write_manifest(run_dir, "validate", args.model, raw,
                       {"samples": args.samples}, args.seed, ["report.json"])
        _write_json(run_dir / "report.json", report.to_json_dict())
        print(f"report written to {run_dir}")
    return 0 if report.passed else 1


def cmd_solve(args) -> int:
    cs, ms, _, raw = load_model(args.model)
    config = _solver_config(args, cs)
    check_budget(config.n_paths * config.n_steps, args.budget)
    run_dir = _run_dir(args, "solve")
    outputs = ["policy.json", "diagnostics.json", "paths.csv"]
    write_manifest(run_dir, "solve", args.model, raw, _config_dict(config),
                   args.seed, outputs)
    policy, bundle, diag = picard_solve(cs, ms, config, seed=args.seed)
    (run_dir / "policy.json").write_text(
        json.dumps(policy.to_json_dict(), indent=2, sort_keys=True) + "\n")
    _write_json(run_dir / "diagnostics.json", diag.to_json_dict())
    keep = min(args.csv_paths, bundle.n_paths)
    sample = dataclasses.replace(
        bundle, X=bundle.X[:keep], Y=bundle.Y[:keep], Z=bundle.Z[:keep],
        K=bundle.K[:keep], zeta=bundle.zeta[:keep])
    with open(run_dir / "paths.csv", "w") as fh:
        bundle_to_csv(sample, fh)
    print(f"solve: {diag.iterations} sweeps, converged={diag.converged}, "
          f"final norm {diag.final_norm:.3e}")
    print(f"artifacts in {run_dir}")
    return 0


def _model_has_jumps(cs, ms) -> bool:
    gen = np.random.default_rng(7)
    x = gen.uniform(-2, 2, size=(64, cs.n))
    y = gen.uniform(-2, 2, 64)
    z = gen.uniform(-2, 2, size=(64, cs.d))
    k = gen.uniform(-2, 2, 64)
    for atom in ms.atoms:
        h = cs.eval_h(0.0, x, y, z, k, atom.e)
        if np.max(np.abs(h)) > 1e-12:
            return True
    return False


def _slope_window(functional: str, p: float, jumps: bool):
    if functional == "sup_x_inc":
        target = 1.0 if jumps else p / 2.0
        half = 0.25 if jumps else 0.3
    else:
        target = p / 2.0
        half = 0.3 * max(1.0, p / 2.0)
    return target, (target - half, target + half)


def cmd_audit_scaling(args) -> int:
    cs, ms, _, raw = load_model(args.model)
    config = _solver_config(args, cs)
    deltas = _parse_deltas(args.deltas)
    p_list = [float(v) for v in args.p.split(",")]
    functionals = tuple(args.functionals.split(","))
    dt = config.delta / config.n_steps
    cost = sum(config.n_paths * max(4, int(round(dv / dt))) for dv in deltas)
    check_budget(cost, args.budget)
    run_dir = _run_dir(args, "audit-scaling")
    write_manifest(run_dir, "audit scaling", args.model, raw,
                   dict(_config_dict(config), deltas=deltas, p=p_list,
                        functionals=list(functionals)),
                   args.seed, ["estimates.csv", "verdict.json", "scaling.svg"])
    fits = audit.fit_scaling(cs, ms, p_list, deltas, config, seed=args.seed,
                             functionals=functionals)
    jumps = _model_has_jumps(cs, ms)
    rows = []
    verdict = {"passed": True, "fits": []}
    for fit in fits:
        for dv, mv, sv in zip(fit.deltas, fit.moments, fit.stderrs):
            rows.append([fit.functional, fit.p, dv, mv, sv])
        entry = fit.to_json_dict()
        if fit.slope is None:
            entry["verdict"] = f"skipped: {fit.skipped_reason}"
        else:
            target, window = _slope_window(fit.functional, fit.p, jumps)
            ok = window[0] <= fit.slope <= window[1]
            entry.update(target=target, window=list(window), passed=ok)
            entry["verdict"] = "pass" if ok else "fail"
            verdict["passed"] = verdict["passed"] and ok
        verdict["fits"].append(entry)
    _write_csv(run_dir / "estimates.csv",
               ["functional", "p", "delta", "moment", "stderr"], rows)
    _write_json(run_dir / "verdict.json", verdict)
    _plot_scaling(run_dir / "scaling.svg", fits, jumps)
    for entry in verdict["fits"]:
        slope = entry.get("slope")
        print(f"{entry['functional']} p={entry['p']}: slope="
              f"{'n/a' if slope is None else f'{slope:.3f}'} -> {entry['verdict']}")
    print(f"artifacts in {run_dir}")
    return 0 if verdict["passed"] else 1


def _plot_scaling(path: Path, fits, jumps: bool) -> None:
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "fbsde"
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for fit in fits:
        if fit.slope is None:
            continue
        d = np.asarray(fit.deltas)
        m = np.asarray(fit.moments)
        ax.loglog(d, m, "o", label=f"{fit.functional} p={fit.p:g} "
                                   f"(slope {fit.slope:.2f})")
        ax.loglog(d, np.exp(fit.intercept) * d ** fit.slope, "-", alpha=0.6)
        anchor = m[0]
        for ref, style in ((1.0, "--"), (fit.p / 2.0, ":")):
            ax.loglog(d, anchor * (d / d[0]) ** ref, style, color="gray", alpha=0.5)
    ax.set_xlabel("window length")
    ax.set_ylabel("moment estimate")
    ax.legend(fontsize=7)
    ax.set_title("log-log scaling (gray: reference slopes 1 and p/2)")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def cmd_audit_lemma(args) -> int:
    cs, ms, _, raw = load_model(args.model)
    config = _solver_config(args, cs)
    check_budget(config.n_paths * config.n_steps, args.budget)
    run_dir = _run_dir(args, "audit-lemma")
    write_manifest(run_dir, "audit lemma", args.model, raw,
                   dict(_config_dict(config), p=args.p, constant_k=args.constant_k),
                   args.seed, ["estimates.csv", "verdict.json"])
    p_list = [float(v) for v in args.p.split(",")]
    results = []
    synthetic = audit.constant_k_bundle(ms, config.grid(), args.constant_k,
                                        config.n_paths, seed=args.seed)
    for p in p_list:
        res = audit.check_jump_moment_lemma(synthetic, ms, p)
        results.append(("constant_k", p, res))
    policy, _, _ = picard_solve(cs, ms, config, seed=args.seed)
    fresh = audit.resimulate(cs, ms, policy, config, seed=args.seed + 1)
    for p in p_list:
        res = audit.check_jump_moment_lemma(fresh, ms, p)
        results.append(("solved", p, res))
    rows = [[case, p, r.lhs, r.lhs_stderr, r.rhs, r.rhs_stderr,
             r.studentized_margin] for case, p, r in results]
    _write_csv(run_dir / "estimates.csv",
               ["case", "p", "lhs", "lhs_stderr", "rhs", "rhs_stderr",
                "studentized_margin"], rows)
    passed = all(r.passed for _, _, r in results)
    _write_json(run_dir / "verdict.json", {
        "passed": passed,
        "cases": [dict(case=case, **r.to_json_dict()) for case, _, r in results]})
    for case, p, r in results:
        print(f"{case} p={p:g}: margin {r.studentized_margin:+.2f} -> "
              f"{'pass' if r.passed else 'fail'}")
    print(f"artifacts in {run_dir}")
    return 0 if passed else 1


def cmd_audit_compare(args) -> int:
    cs, ms, _, raw = load_model(args.model)
    config = _solver_config(args, cs)
    run_dir = _run_dir(args, "audit-compare")
    write_manifest(run_dir, "audit compare", args.model, raw,
                   dict(_config_dict(config), phi1=args.phi1, phi2=args.phi2,
                        random_configs=args.random_configs,
                        replicates=args.replicates),
                   args.seed, ["gaps.csv", "verdict.json"])
    jobs = []
    if args.random_configs:
        for i, (rcs, phi1, phi2) in enumerate(audit.random_comparison_configs(
                cs, args.random_configs, seed=args.seed)):
            jobs.append((f"random[{i}]", rcs, phi1, phi2))
    else:
        phi1 = args.phi1 or "x + 0.5*tanh(x) + 0.5"
        phi2 = args.phi2 or "x"
        jobs.append(("explicit", cs, phi1, phi2))
    cost = 2 * args.replicates * len(jobs) * config.n_paths * config.n_steps
    check_budget(cost, args.budget)
    rows = []
    results = []
    for name, jcs, phi1, phi2 in jobs:
        res = audit.compare_terminal(jcs, ms, phi1, phi2, config,
                                     seed=args.seed,
                                     n_replicates=args.replicates)
        results.append((name, res))
        for pt, gap, se in zip(res.query_points, res.gaps, res.stderrs):
            rows.append([name, pt[0], gap, se])
    _write_csv(run_dir / "gaps.csv", ["config", "x", "gap", "stderr"], rows)
    passed = all(r.passed for _, r in results)
    _write_json(run_dir / "verdict.json", {
        "passed": passed,
        "configs": [dict(name=n, **r.to_json_dict()) for n, r in results]})
    for name, r in results:
        print(f"{name}: min studentized gap {r.min_studentized:+.2f} -> "
              f"{'pass' if r.passed else 'fail'}")
    print(f"artifacts in {run_dir}")
    return 0 if passed else 1


def cmd_audit_stability(args) -> int:
    cs, ms, _, raw = load_model(args.model)
    config = _solver_config(args, cs)
    cost = (2 + 2) * args.replicates * config.n_paths * config.n_steps * 3
    check_budget(cost, args.budget)
    run_dir = _run_dir(args, "audit-stability")
    write_manifest(run_dir, "audit stability", args.model, raw,
                   dict(_config_dict(config), epsilon=args.epsilon,
                        b_shift=args.b_shift, replicates=args.replicates),
                   args.seed, ["terms.csv", "verdict.json"])
    gap, gap_se = audit.epsilon_shift_gap(cs, ms, args.epsilon, config,
                                          seed=args.seed,
                                          n_replicates=args.replicates)
    shift_ok = abs(gap - args.epsilon) <= max(3 * gap_se, 1e-12)
    from .expressions import parse_expr, to_text
    shifted = dataclasses.replace(
        cs, b_exprs=tuple(parse_expr(f"{to_text(e)} + ({args.b_shift!r})")
                          for e in cs.b_exprs))
    res = audit.stability_gap(cs, shifted, ms, config, seed=args.seed,
                              n_replicates=args.replicates)
    rows = [["epsilon_shift", gap, gap_se, args.epsilon]]
    for term, v in res.rhs_terms.items():
        rows.append([f"rhs_{term}", v, 0.0, 0.0])
    _write_csv(run_dir / "terms.csv", ["term", "value", "stderr", "reference"], rows)
    passed = shift_ok and res.passed
    _write_json(run_dir / "verdict.json", {
        "passed": passed,
        "epsilon_shift": {"gap": gap, "stderr": gap_se, "epsilon": args.epsilon,
                          "passed": shift_ok},
        "perturbation": res.to_json_dict()})
    print(f"epsilon shift: gap {gap:.5f} vs {args.epsilon} -> "
          f"{'pass' if shift_ok else 'fail'}")
    print(f"perturbation: C_hat={res.c_hat} ratio={res.ratio} -> "
          f"{'pass' if res.passed else 'fail'}")
    print(f"artifacts in {run_dir}")
    return 0 if passed else 1


def cmd_audit_field(args) -> int:
    cs, ms, _, raw = load_model(args.model)
    config = _solver_config(args, cs)
    check_budget(3 * config.n_paths * config.n_steps, args.budget)
    run_dir = _run_dir(args, "audit-field")
    write_manifest(run_dir, "audit field", args.model, raw,
                   _config_dict(config), args.seed, ["verdict.json"])
    policy, _, _ = picard_solve(cs, ms, config, seed=args.seed)
    base = audit.field_regularity(policy, seed=args.seed)
    fine_cfg = dataclasses.replace(config, n_paths=2 * config.n_paths)
    policy2, _, _ = picard_solve(cs, ms, fine_cfg, seed=args.seed + 1)
    fine = audit.field_regularity(policy2, seed=args.seed)
    lip_ok = fine.lipschitz_ratio <= 2.0 * max(base.lipschitz_ratio, 1e-9) \
        and base.lipschitz_ratio <= 2.0 * max(fine.lipschitz_ratio, 1e-9)
    growth_ok = fine.growth_ratio <= 2.0 * max(base.growth_ratio, 1e-9) \
        and base.growth_ratio <= 2.0 * max(fine.growth_ratio, 1e-9)
    passed = lip_ok and growth_ok
    _write_json(run_dir / "verdict.json", {
        "passed": passed,
        "base": base.to_json_dict(),
        "refined": fine.to_json_dict(),
        "lipschitz_stable": lip_ok,
        "growth_stable": growth_ok})
    print(f"lipschitz ratio {base.lipschitz_ratio:.3f} -> {fine.lipschitz_ratio:.3f}; "
          f"growth {base.growth_ratio:.3f} -> {fine.growth_ratio:.3f}: "
          f"{'pass' if passed else 'fail'}")
    print(f"artifacts in {run_dir}")
    return 0 if passed else 1


def cmd_audit_flow(args) -> int:
    cs, ms, _, raw = load_model(args.model)
    config = _solver_config(args, cs)
    horizon = args.windows * config.delta
    check_budget(10 * args.windows * config.n_paths * config.n_steps, args.budget)
    run_dir = _run_dir(args, "audit-flow")
    write_manifest(run_dir, "audit flow", args.model, raw,
                   dict(_config_dict(config), windows=args.windows),
                   args.seed, ["verdict.json"])
    chain, _ = chain_horizon(cs, ms, horizon, config, seed=args.seed)
    base = audit.flow_residual(cs, ms, chain, config, seed=args.seed)
    fine_cfg = dataclasses.replace(config, n_paths=4 * config.n_paths)
    chain4, _ = chain_horizon(cs, ms, horizon, fine_cfg, seed=args.seed + 1)
    fine = audit.flow_residual(cs, ms, chain4, fine_cfg, seed=args.seed + 1)
    passed = fine <= base or fine < 1e-12
    _write_json(run_dir / "verdict.json", {
        "passed": passed, "residual": base, "residual_refined": fine,
        "windows": args.windows})
    print(f"flow residual {base:.3e} -> {fine:.3e} at 4x paths: "
          f"{'pass' if passed else 'fail'}")
    print(f"artifacts in {run_dir}")
    return 0 if passed else 1


def cmd_find_delta0(args) -> int:
    cs, ms, _, raw = load_model(args.model)
    config = _solver_config(args, cs)
    run_dir = _run_dir(args, "delta0")
    write_manifest(run_dir, "delta0", args.model, raw, _config_dict(config),
                   args.seed, ["verdict.json"])
    delta0, evidence = find_delta0(cs, ms, config, seed=args.seed)
    _write_json(run_dir / "verdict.json",
                {"delta0": delta0, "evidence": evidence})
    print(f"delta0 = {delta0:g} "
          f"(median ratio {evidence[-1]['median_ratio']:.3f})")
    print(f"artifacts in {run_dir}")
    return 0


def cmd_report(args) -> int:
    root = Path(args.rundir)
    if not root.exists():
        print(f"error: run directory {root} does not exist", file=sys.stderr)
        return 2
    rows = []
    all_pass = True
    for verdict_path in sorted(root.rglob("verdict.json")):
        doc = json.loads(verdict_path.read_text())
        passed = bool(doc.get("passed", True))
        all_pass = all_pass and passed
        rows.append((str(verdict_path.relative_to(root)),
                     "pass" if passed else "FAIL"))
    if not rows:
        print("no verdicts found")
        return 1
    width = max(len(r[0]) for r in rows)
    print(f"{'verdict'.ljust(width)}  result")
    for name, status in rows:
        print(f"{name.ljust(width)}  {status}")
    return 0 if all_pass else 1


# -- argument parsing --------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--paths", type=int, default=20_000)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--basis", choices=("poly", "pwlin"), default="poly")
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--knots", type=int, default=8)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=12)
    p.add_argument("--rho-max", type=float, default=0.5)
    p.add_argument("--zeta", type=str, default=None,
                   help="fixed initial state, comma-separated coordinates")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--label", type=str, default=None)
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET,
                   help="path-step budget for the run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fbsde",
        description="Solve coupled FBSDEs with jumps on small windows and "
                    "audit the solver's quantitative behavior.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="run sampled assumption checks")
    p.add_argument("model")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--label", type=str, default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="Picard-solve one window")
    p.add_argument("model")
    _add_common(p)
    p.add_argument("--csv-paths", type=int, default=100,
                   help="number of paths written to paths.csv")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("delta0", help="find an empirically contracting window")
    p.add_argument("model")
    _add_common(p)
    p.set_defaults(func=cmd_find_delta0)

    pa = sub.add_parser("audit", help="statistical audits")
    asub = pa.add_subparsers(dest="audit_command", required=True)

    p = asub.add_parser("scaling", help="log-log moment scaling in the window length")
    p.add_argument("model")
    _add_common(p)
    p.add_argument("--p", type=str, default="2,4")
    p.add_argument("--deltas", type=str, default="0.01:0.1:4",
                   help="a:b:n geometric grid or comma list")
    p.add_argument("--functionals", type=str, default="sup_x_inc,int_z,int_k")
    p.set_defaults(func=cmd_audit_scaling)

    p = asub.add_parser("lemma", help="jump-moment inequality on both measures")
    p.add_argument("model")
    _add_common(p)
    p.add_argument("--p", type=str, default="2,4")
    p.add_argument("--constant-k", type=float, default=1.0)
    p.set_defaults(func=cmd_audit_lemma)

    p = asub.add_parser("compare", help="terminal-ordering comparison audit")
    p.add_argument("model")
    _add_common(p)
    p.add_argument("--phi1", type=str, default=None)
    p.add_argument("--phi2", type=str, default=None)
    p.add_argument("--random-configs", type=int, default=0)
    p.add_argument("--replicates", type=int, default=3)
    p.set_defaults(func=cmd_audit_compare)

    p = asub.add_parser("stability", help="coefficient-perturbation audit")
    p.add_argument("model")
    _add_common(p)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--b-shift", type=float, default=0.1)
    p.add_argument("--replicates", type=int, default=3)
    p.set_defaults(func=cmd_audit_stability)

    p = asub.add_parser("field", help="decoupling-field regularity audit")
    p.add_argument("model")
    _add_common(p)
    p.set_defaults(func=cmd_audit_field)

    p = asub.add_parser("flow", help="flow-property residual audit")
    p.add_argument("model")
    _add_common(p)
    p.add_argument("--windows", type=int, default=2)
    p.set_defaults(func=cmd_audit_flow)

    p = sub.add_parser("report", help="summarize verdicts under a run directory")
    p.add_argument("rundir")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, BudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # structured diagnostic, nonzero exit
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
