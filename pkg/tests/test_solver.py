import dataclasses

import numpy as np
import pytest
from sklearn.base import clone

from fbsde import presets
from fbsde.errors import DivergenceError, ValidationError
from fbsde.model import model_from_dict
from fbsde.pathsim import euler_forward, sample_drivers, sample_initial_states
from fbsde.solver import (FBSDESolver, RegressionBasis, SolverConfig,
                          ZeroPolicy, _Projector, backward_regression_pass,
                          chain_horizon, decoupling_field, find_delta0,
                          measure_contraction, picard_solve,
                          policy_from_json, policy_norm_diff, policy_to_json,
                          window_seed)


def negative_control_model():
    # unit z-slope in sigma with a steeper terminal; the offset keeps the
    # diffusion channel active from the zero start so the large slope is
    # actually expressed by the iteration
    doc = presets.preset_dict("T3")
    doc["name"] = "T3-sigma-unit"
    doc["sigma"] = [["1 + z"]]
    doc["phi"] = "1.5*x"
    doc["constants"]["L_sigma"] = 1.0
    doc["constants"]["K"] = 1.5
    doc["constants"]["L"] = 3.0
    return model_from_dict(doc)


class TestRegressionBasis:
    def test_poly_features(self):
        basis = RegressionBasis(kind="poly", degree=2)
        x = np.array([[2.0], [3.0]])
        feats = basis.features(x, None)
        np.testing.assert_allclose(feats, [[1, 2, 4], [1, 3, 9]])
        assert basis.n_features(1) == 3
        assert basis.n_features(2) == 6  # 1, x1, x2, x1^2, x1x2, x2^2

    def test_pwlin_partition_of_unity(self):
        basis = RegressionBasis(kind="pwlin", n_knots=5)
        x = np.linspace(0.0, 1.0, 50)[:, None]
        state = basis.fit_state(x)
        feats = basis.features(x, state)
        np.testing.assert_allclose(feats.sum(axis=1), 1.0)
        # clamped extrapolation
        out = basis.features(np.array([[2.0]]), state)
        np.testing.assert_allclose(out.sum(axis=1), 1.0)

    def test_invalid(self):
        with pytest.raises(ValidationError):
            RegressionBasis(kind="spline")
        with pytest.raises(ValidationError):
            RegressionBasis(kind="pwlin", n_knots=1)


class TestProjector:
    def test_normal_equations_hold(self):
        gen = np.random.default_rng(0)
        feats = np.column_stack([np.ones(500), gen.normal(size=500)])
        target = 2.0 + 3.0 * feats[:, 1] + gen.normal(size=500)
        proj = _Projector(feats)
        coef = proj.coef(target)
        resid = target - feats @ coef
        np.testing.assert_allclose(feats.T @ resid, 0.0, atol=1e-9)
        assert not proj.deficient

    def test_known_function_recovery(self):
        gen = np.random.default_rng(1)
        x = gen.uniform(-1, 1, size=4000)
        feats = np.column_stack([np.ones_like(x), x, x ** 2])
        target = 1.0 - 2.0 * x + 0.5 * x ** 2 + 0.1 * gen.normal(size=x.size)
        coef = _Projector(feats).coef(target)
        np.testing.assert_allclose(coef, [1.0, -2.0, 0.5], atol=0.02)

    def test_degenerate_cloud_min_norm(self):
        feats = np.tile([1.0, 1.5, 2.25], (100, 1))
        proj = _Projector(feats)
        assert proj.deficient
        coef = proj.coef(np.full(100, 7.0))
        np.testing.assert_allclose(feats @ coef, 7.0, rtol=1e-12)


class TestBackwardPass:
    def test_brownian_martingale_representation(self):
        cs, ms = presets.get("T2")
        cfg = SolverConfig(delta=0.5, n_steps=25, n_paths=20_000)
        drv = sample_drivers(cfg.grid(), ms, cfg.n_paths, 3, d=1)
        zeta = sample_initial_states(cs, cfg.n_paths, 3)
        bundle = euler_forward(cs, ms, ZeroPolicy(1, 1, cs.eval_phi), zeta, drv)
        policy = backward_regression_pass(cs, ms, bundle, cs.eval_phi, cfg.basis)
        xs = np.linspace(0.7, 2.3, 7)[:, None]
        y0, z0, k0 = policy.evaluate(0, xs)
        np.testing.assert_allclose(y0, xs[:, 0], atol=0.05)
        np.testing.assert_allclose(z0, 1.0, atol=0.05)
        np.testing.assert_allclose(k0, 0.0, atol=0.05)

    def test_jump_martingale_representation(self):
        cs, ms = presets.get("T1")
        cfg = SolverConfig(delta=0.5, n_steps=25, n_paths=20_000)
        drv = sample_drivers(cfg.grid(), ms, cfg.n_paths, 4, d=1)
        zeta = sample_initial_states(cs, cfg.n_paths, 4)
        bundle = euler_forward(cs, ms, ZeroPolicy(1, 1, cs.eval_phi), zeta, drv)
        policy = backward_regression_pass(cs, ms, bundle, cs.eval_phi, cfg.basis)
        xs = np.linspace(0.7, 2.3, 7)[:, None]
        y0, z0, k0 = policy.evaluate(0, xs)
        np.testing.assert_allclose(y0, xs[:, 0], atol=0.06)
        np.testing.assert_allclose(k0, 0.5, atol=0.06)
        np.testing.assert_allclose(z0, 0.0, atol=0.05)

    def test_constant_terminal_exact(self):
        doc = presets.preset_dict("T0")
        doc["phi"] = "2.5"
        cs, ms = model_from_dict(doc)
        cfg = SolverConfig(delta=0.5, n_steps=10, n_paths=500,
                           zeta=np.array([1.5]))
        policy, bundle, _ = picard_solve(cs, ms, cfg, seed=5)
        assert np.abs(bundle.Y - 2.5).max() <= 1e-12
        assert np.abs(bundle.Z).max() <= 1e-12
        assert np.abs(bundle.K).max() <= 1e-12


class TestPicard:
    def test_t0_two_iterations_machine_precision(self):
        cs, ms = presets.get("T0")
        cfg = SolverConfig(delta=0.5, n_steps=50, n_paths=1000,
                           zeta=np.array([1.5]))
        policy, bundle, diag = picard_solve(cs, ms, cfg, seed=1)
        assert diag.iterations <= 2
        assert diag.converged
        assert np.abs(bundle.Y[:, 0] - 1.5).max() <= 1e-12

    def test_decoupled_converges_in_two(self):
        cs, ms = presets.get("T2")
        cfg = SolverConfig(delta=0.5, n_steps=20, n_paths=5000)
        _, bundle, diag = picard_solve(cs, ms, cfg, seed=2)
        assert diag.iterations <= 2
        assert diag.diffs[-1] == 0.0
        # Y_t ~ zeta for the martingale model
        resid = bundle.Y[:, 0] - bundle.X[:, 0, 0]
        se = resid.std(ddof=1) / np.sqrt(resid.size)
        assert abs(resid.mean()) <= max(3 * se, 5e-3)

    def test_terminal_consistency_exact(self):
        cs, ms = presets.get("T3")
        cfg = SolverConfig(delta=0.1, n_steps=10, n_paths=4000)
        _, bundle, _ = picard_solve(cs, ms, cfg, seed=3)
        phi = cs.eval_phi(bundle.X[:, -1])
        np.testing.assert_array_equal(bundle.Y[:, -1], phi)

    def test_t3_geometric_decay(self):
        cs, ms = presets.get("T3")
        cfg = SolverConfig(delta=0.1, n_steps=10, n_paths=10_000)
        diffs, ratios = measure_contraction(cs, ms, cfg, seed=4, n_sweeps=4)
        assert all(r < 0.5 for r in ratios)
        assert diffs[-1] < diffs[0]

    def test_fixed_point_idempotence(self):
        cs, ms = presets.get("T3")
        cfg = SolverConfig(delta=0.1, n_steps=10, n_paths=10_000,
                           picard_tol=1e-5)
        policy, bundle, diag = picard_solve(cs, ms, cfg, seed=5)
        assert diag.converged
        extra = backward_regression_pass(cs, ms, bundle, policy.terminal,
                                         cfg.basis)
        assert policy_norm_diff(extra, policy, bundle, ms) <= cfg.picard_tol

    def test_divergence_error(self):
        cs, ms = negative_control_model()
        cfg = SolverConfig(delta=0.2, n_steps=10, n_paths=3000, max_iter=6)
        with pytest.raises(DivergenceError, match="reduce the window"):
            picard_solve(cs, ms, cfg, seed=6)

    def test_lipschitz_in_initial_state(self):
        cs, ms = presets.get("T3")
        c_emp = {}
        for level, (m, n) in enumerate(((8000, 10), (16000, 20))):
            sups = {}
            for zeta in (1.0, 1.4):
                cfg = SolverConfig(delta=0.1, n_steps=n, n_paths=m,
                                   zeta=np.array([zeta]))
                _, bundle, _ = picard_solve(cs, ms, cfg, seed=7)
                sups[zeta] = bundle.Y
            gap_sq = np.max((sups[1.0] - sups[1.4]) ** 2, axis=1).mean()
            c_emp[level] = gap_sq / (1.0 - 1.4) ** 2
        assert c_emp[0] > 0
        assert 0.5 <= c_emp[1] / c_emp[0] <= 2.0


class TestFindDelta0:
    def test_decoupled_accepts_initial(self):
        cs, ms = presets.get("T2")
        cfg = SolverConfig(delta=0.2, n_steps=10, n_paths=3000)
        delta0, evidence = find_delta0(cs, ms, cfg, seed=1)
        assert delta0 == 0.2
        assert evidence[-1]["median_ratio"] <= 0.05

    def test_t3_contracts(self):
        cs, ms = presets.get("T3")
        cfg = SolverConfig(delta=0.1, n_steps=12, n_paths=8000)
        delta0, evidence = find_delta0(cs, ms, cfg, seed=2)
        assert delta0 > 0
        assert evidence[-1]["median_ratio"] <= 0.5

    def test_negative_control_refuses(self):
        cs, ms = negative_control_model()
        cfg = SolverConfig(delta=0.2, n_steps=16, n_paths=2000)
        with pytest.raises(DivergenceError, match="smallness"):
            find_delta0(cs, ms, cfg, seed=3)


class TestDecouplingField:
    def test_martingale_field(self):
        cs, ms = presets.get("T2")
        cfg = SolverConfig(delta=0.25, n_steps=10, n_paths=20_000)
        policy, _, _ = picard_solve(cs, ms, cfg, seed=8)
        xs = np.linspace(0.8, 2.2, 5)[:, None]
        u, outside = decoupling_field(policy, xs)
        assert not outside.any()
        np.testing.assert_allclose(u, xs[:, 0], atol=0.03)

    def test_constant_field_exact(self):
        doc = presets.preset_dict("T0")
        doc["phi"] = "3.25"
        cs, ms = model_from_dict(doc)
        cfg = SolverConfig(delta=0.25, n_steps=5, n_paths=500)
        policy, _, _ = picard_solve(cs, ms, cfg, seed=9)
        u, _ = decoupling_field(policy, np.array([[1.0], [2.0]]))
        np.testing.assert_allclose(u, 3.25, rtol=1e-12)

    def test_extrapolation_flagged(self):
        cs, ms = presets.get("T2")
        cfg = SolverConfig(delta=0.25, n_steps=5, n_paths=2000)
        policy, _, _ = picard_solve(cs, ms, cfg, seed=10)
        _, outside = decoupling_field(policy, np.array([[1.0], [99.0]]))
        assert outside.tolist() == [False, True]


class TestChain:
    def test_single_window_matches_picard(self):
        cs, ms = presets.get("T2")
        cfg = SolverConfig(delta=0.2, n_steps=8, n_paths=3000)
        chain, _ = chain_horizon(cs, ms, 0.2, cfg, seed=11)
        policy, _, _ = picard_solve(cs, ms, cfg, seed=window_seed(11, 0))
        for i in range(8):
            np.testing.assert_array_equal(chain.policy(0).coef_y[i],
                                          policy.coef_y[i])

    def test_two_window_tower(self):
        cs, ms = presets.get("T2")
        cfg = SolverConfig(delta=0.2, n_steps=8, n_paths=20_000)
        chain, _ = chain_horizon(cs, ms, 0.4, cfg, seed=12)
        xs = np.linspace(0.8, 2.2, 5)[:, None]
        u, _ = decoupling_field(chain.policy(0), xs)
        np.testing.assert_allclose(u, xs[:, 0], atol=0.05)

    def test_horizon_must_divide(self):
        cs, ms = presets.get("T2")
        cfg = SolverConfig(delta=0.3, n_steps=6, n_paths=500)
        with pytest.raises(ValidationError, match="multiple"):
            chain_horizon(cs, ms, 0.5, cfg, seed=13)


class TestPolicySerialization:
    def test_roundtrip_evaluates_identically(self):
        cs, ms = presets.get("T3")
        cfg = SolverConfig(delta=0.1, n_steps=6, n_paths=3000)
        policy, _, _ = picard_solve(cs, ms, cfg, seed=14)
        back = policy_from_json(policy_to_json(policy))
        xs = np.linspace(0.5, 2.5, 9)[:, None]
        for i in range(6):
            y1, z1, k1 = policy.evaluate(i, xs)
            y2, z2, k2 = back.evaluate(i, xs)
            np.testing.assert_array_equal(y1, y2)
            np.testing.assert_array_equal(z1, z2)
            np.testing.assert_array_equal(k1, k2)
        with pytest.raises(ValidationError, match="terminal"):
            back.terminal_values(xs)


class TestEstimatorFacade:
    def test_fit_predict(self):
        est = FBSDESolver(model="T2", delta=0.25, n_steps=10, n_paths=20_000,
                          seed=15)
        est.fit()
        xs = np.linspace(0.8, 2.2, 5)[:, None]
        np.testing.assert_allclose(est.predict(xs), xs[:, 0], atol=0.03)

    def test_fit_with_explicit_states(self):
        gen = np.random.default_rng(16)
        X = gen.uniform(0.5, 2.5, size=(5000, 1))
        est = FBSDESolver(model="T2", delta=0.25, n_steps=10, seed=16)
        est.fit(X)
        assert est.bundle_.n_paths == 5000
        np.testing.assert_array_equal(est.bundle_.X[:, 0], X)

    def test_sklearn_protocol(self):
        est = FBSDESolver(model="T2", n_paths=1234)
        params = est.get_params()
        assert params["n_paths"] == 1234
        twin = clone(est)
        assert twin.get_params() == params
        est.set_params(delta=0.05)
        assert est.delta == 0.05

    def test_predict_before_fit(self):
        with pytest.raises(ValidationError, match="not fitted"):
            FBSDESolver().predict(np.zeros((1, 1)))

    def test_wrong_width_rejected(self):
        est = FBSDESolver(model="T2", n_paths=100)
        with pytest.raises(ValidationError, match="columns"):
            est.fit(np.zeros((50, 3)))


class TestConfigValidation:
    def test_invariants(self):
        with pytest.raises(ValidationError):
            SolverConfig(picard_tol=0.0)
        with pytest.raises(ValidationError):
            SolverConfig(max_iter=1)
        with pytest.raises(ValidationError):
            SolverConfig(rho_max=1.5)
