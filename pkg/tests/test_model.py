import numpy as np
import pytest

from fbsde import presets
from fbsde.errors import ValidationError
from fbsde.marks import build_finite
from fbsde.model import (CheckRow, Constants, MonotonicityParams, assemble_A,
                         check_lipschitz_growth, check_monotonicity, derive_g,
                         model_from_dict, model_to_dict, validate_model)


def tiny_model(b="0", sigma="0", h="0", f="0", phi="x", atoms=((0.5, 2.0),),
               rho_scale=1.0, constants=None, **extra):
    doc = {
        "name": "tiny",
        "n": 1, "d": 1,
        "b": [b], "sigma": [[sigma]], "h": [h], "f": f, "phi": phi,
        "G": [[1.0]],
        "constants": constants or {"K": 2.0, "L": 2.0, "L_sigma": 1.0,
                                   "L_h": [1.0] * len(atoms), "C_h": None},
        "mark_space": {"atoms": [{"e": e, "w": w} for e, w in atoms],
                       "cutoff": 0.0, "rho_scale": rho_scale, "l": "cap1(e)"},
    }
    if doc["constants"]["C_h"] is None:
        lh = np.asarray(doc["constants"]["L_h"])
        w = np.asarray([a[1] for a in atoms])
        doc["constants"]["C_h"] = float(max((lh ** 2).max(), (lh ** 2) @ w))
    doc.update(extra)
    return model_from_dict(doc)


class TestDeriveG:
    def test_pure_reduction(self):
        cs, ms = tiny_model(f="q")
        g = derive_g(cs, ms)
        # single atom e=0.5, w=2, l=cap1: q = 1 * 0.5 * 2 = 1
        val = g(0.0, np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)),
                np.ones((1, 1)))
        assert val[0] == pytest.approx(1.0)

    def test_zero_k_passes_through_y(self):
        cs, ms = tiny_model(f="y + q")
        g = derive_g(cs, ms)
        val = g(0.0, np.zeros((3, 1)), np.array([1.0, 2.0, 3.0]),
                np.zeros((3, 1)), np.zeros((3, 1)))
        np.testing.assert_allclose(val, [1.0, 2.0, 3.0])

    def test_monotone_in_k(self):
        cs, ms = tiny_model(f="y + q", atoms=((0.5, 2.0), (-0.25, 1.0)))
        g = derive_g(cs, ms)
        gen = np.random.default_rng(0)
        k_lo = gen.normal(size=(200, 2))
        k_hi = k_lo + gen.uniform(0, 1, size=(200, 2))
        lo = g(0.0, np.zeros((200, 1)), np.zeros(200), np.zeros((200, 1)), k_lo)
        hi = g(0.0, np.zeros((200, 1)), np.zeros(200), np.zeros((200, 1)), k_hi)
        assert np.all(hi >= lo - 1e-12)


class TestAssembleA:
    def test_driver_only(self):
        cs, ms = tiny_model(f="y")
        A = assemble_A(cs, ms, 0.0, (np.array([2.0]), 3.0, np.array([4.0])),
                       np.zeros(1))
        np.testing.assert_allclose(A, [-3.0, 0.0, 0.0])

    def test_drift_only(self):
        cs, ms = tiny_model(b="x")
        A = assemble_A(cs, ms, 0.0, (np.array([2.0]), 3.0, np.array([4.0])),
                       np.zeros(1))
        np.testing.assert_allclose(A, [0.0, 2.0, 0.0])

    def test_t3_blocks_recomputed_by_hand(self):
        cs, ms = presets.get("T3")
        x, y, z = 1.3, -0.7, 0.4
        k = np.array([0.2, -0.1])
        A = assemble_A(cs, ms, 0.1, (np.array([x]), y, np.array([z])), k)
        # independent recomputation from the model formulas
        lw = np.minimum(1.0, np.abs(ms.marks())) * ms.weights()
        q = float(k @ lw)
        g_val = -0.5 * y + q
        b_val = -y
        sigma_val = 1 + 0.05 * z
        np.testing.assert_allclose(A, [-g_val, b_val, sigma_val], rtol=1e-12)

    def test_first_block_linear_in_g(self):
        cs1, ms = tiny_model(f="y + q")
        cs3, _ = tiny_model(f="3*y + 3*q")
        pi = (np.array([0.5]), 1.5, np.array([-2.0]))
        k = np.array([0.7])
        a1 = assemble_A(cs1, ms, 0.0, pi, k)
        a3 = assemble_A(cs3, ms, 0.0, pi, k)
        np.testing.assert_allclose(a3[:1], 3.0 * a1[:1], rtol=1e-12)
        np.testing.assert_allclose(a3[1:], a1[1:])


class TestMonotonicity:
    def test_zero_model_margin_exact_zero(self):
        cs, ms = tiny_model()
        report = check_monotonicity(cs, ms, MonotonicityParams(), n_samples=500)
        rows = {r.name: r for r in report.rows}
        assert rows["monotonicity"].margin == 0.0
        assert rows["monotonicity"].passed
        # phi = x, G = 1: mu1 = 1 is the exact alignment constant
        report = check_monotonicity(cs, ms, MonotonicityParams(mu1=1.0),
                                    n_samples=500)
        rows = {r.name: r for r in report.rows}
        assert rows["terminal_monotonicity"].margin >= -1e-9

    def test_classical_monotone_pair(self):
        # b = -y, driver g = x, G = 1: <dA, dpi> = -dx^2 - dy^2
        cs, ms = tiny_model(b="-y", f="x")
        params = MonotonicityParams(beta1=0.5, beta2=0.0, beta3=0.0, mu1=1.0)
        # brute-force grid oracle before trusting the sampler
        grid = np.linspace(-5, 5, 5)
        worst = np.inf
        for x1 in grid:
            for y1 in grid:
                for x2 in grid:
                    for y2 in grid:
                        dx, dy = x1 - x2, y1 - y2
                        lhs = -dx * dx - dy * dy
                        rhs = -params.beta1 * dx * dx
                        worst = min(worst, rhs - lhs)
        assert worst >= 0.0
        report = check_monotonicity(cs, ms, params, n_samples=4000)
        rows = {r.name: r for r in report.rows}
        assert rows["monotonicity"].passed
        assert rows["monotonicity"].margin >= 0.0
        assert rows["terminal_monotonicity"].passed

    def test_anti_monotone_fails(self):
        cs, ms = tiny_model(b="y")
        params = MonotonicityParams(beta2=0.25)
        # explicit counterexample: dy = 1, everything else equal
        # LHS = dy^2 = 1 > RHS = -0.25
        report = check_monotonicity(cs, ms, params, n_samples=4000)
        rows = {r.name: r for r in report.rows}
        assert not rows["monotonicity"].passed
        assert rows["monotonicity"].margin < 0.0

    def test_parameter_pattern(self):
        ok, _ = MonotonicityParams(beta1=1, beta2=1, beta3=1, mu1=1).pattern_ok(1, 1)
        assert ok
        ok, msg = MonotonicityParams().pattern_ok(1, 1)
        assert not ok and "beta1+beta2" in msg
        ok, _ = MonotonicityParams(beta1=1, beta3=1, mu1=1).pattern_ok(1, 1)
        assert ok
        # beta2 + mu1 > 0 is part of the pattern
        ok, _ = MonotonicityParams(beta1=1, beta3=1).pattern_ok(1, 1)
        assert not ok
        # m < n forces beta2, beta3 > 0
        ok, msg = MonotonicityParams(beta1=1, beta2=1, beta3=0, mu1=1).pattern_ok(1, 2)
        assert not ok

    def test_negative_params_rejected(self):
        with pytest.raises(ValidationError):
            MonotonicityParams(beta1=-0.1)


class TestLipschitzGrowth:
    def test_sigma_slope_pass_at_declared(self):
        cs, ms = tiny_model(sigma="0.05*z",
                            constants={"K": 1.0, "L": 1.0, "L_sigma": 0.05,
                                       "L_h": [0.0], "C_h": 0.0})
        report = check_lipschitz_growth(cs, ms, n_samples=4000)
        row = {r.name: r for r in report.rows}["sigma_zk_slope"]
        assert row.passed
        # the sampled sup approaches the true slope from below
        assert 0.0 <= row.margin <= 1e-3

    def test_sigma_slope_fail(self):
        cs, ms = tiny_model(sigma="z",
                            constants={"K": 1.0, "L": 1.5, "L_sigma": 0.05,
                                       "L_h": [0.0], "C_h": 0.0})
        report = check_lipschitz_growth(cs, ms, n_samples=4000)
        row = {r.name: r for r in report.rows}["sigma_zk_slope"]
        assert not row.passed
        assert row.witness["observed_slope"] == pytest.approx(1.0, abs=1e-2)

    def test_h_state_slope_within_rho(self):
        cs, ms = tiny_model(h="cap1(e)*0.1*x", rho_scale=0.1,
                            constants={"K": 1.0, "L": 1.0, "L_sigma": 0.0,
                                       "L_h": [0.0], "C_h": 0.0})
        report = check_lipschitz_growth(cs, ms, n_samples=4000)
        rows = {r.name: r for r in report.rows}
        assert rows["h_xy_slope[0]"].passed
        assert rows["h_zk_slope[0]"].passed

    def test_presets_validate(self):
        for alias in ("T0", "T1", "T2", "T3"):
            cs, ms = presets.get(alias)
            report = validate_model(cs, ms, n_samples=4000, seed=1)
            assert report.passed, f"{alias}: {report.to_table()}"


class TestModelDocuments:
    def test_missing_field_path(self):
        with pytest.raises(ValidationError, match="model.f"):
            model_from_dict({"n": 1, "d": 1, "b": ["0"], "sigma": [["0"]],
                             "h": ["0"], "phi": "x", "G": [[1.0]],
                             "constants": {"K": 1, "L": 1, "L_sigma": 0,
                                           "L_h": [0], "C_h": 0},
                             "mark_space": {"atoms": [{"e": 1.0, "w": 1.0}]}})

    def test_bad_expression_offset(self):
        with pytest.raises(ValidationError, match=r"model\.b\[0\].*offset"):
            tiny_model(b="x +")

    def test_sigma_shape(self):
        with pytest.raises(ValidationError, match="sigma"):
            model_from_dict({"n": 2, "d": 1, "b": ["0", "0"],
                             "sigma": [["0"]], "h": ["0", "0"], "f": "0",
                             "phi": "x1", "G": [[1.0, 0.0]],
                             "constants": {"K": 1, "L": 1, "L_sigma": 0,
                                           "L_h": [0], "C_h": 0},
                             "mark_space": {"atoms": [{"e": 1.0, "w": 1.0}]}})

    def test_c_h_mismatch(self):
        with pytest.raises(ValidationError, match="C_h"):
            tiny_model(constants={"K": 1.0, "L": 1.0, "L_sigma": 0.0,
                                  "L_h": [0.5], "C_h": 0.0})

    def test_disallowed_variables(self):
        with pytest.raises(ValidationError, match="not allowed"):
            tiny_model(b="e")
        with pytest.raises(ValidationError, match="not allowed"):
            tiny_model(phi="y")
        with pytest.raises(ValidationError, match="not allowed"):
            tiny_model(f="k")

    def test_roundtrip(self):
        cs, ms = presets.get("T3")
        doc = model_to_dict(cs, ms)
        cs2, ms2 = model_from_dict(doc)
        assert cs2.b_exprs == cs.b_exprs
        assert cs2.f_expr == cs.f_expr
        assert ms2 == ms
        assert cs2.constants == cs.constants

    def test_g_full_rank_required(self):
        with pytest.raises(ValidationError, match="full rank"):
            tiny_model(G=[[0.0]])

    def test_multidim_model_evaluates(self):
        doc = {
            "name": "twod", "n": 2, "d": 2,
            "b": ["-y", "x1 - x2"],
            "sigma": [["1", "0"], ["0.5", "1"]],
            "h": ["cap1(e)*0.1*x1", "0"],
            "f": "-y + q", "phi": "x1 + x2", "G": [[1.0, 0.5]],
            "constants": {"K": 3.0, "L": 3.0, "L_sigma": 0.0, "L_h": [0.0],
                          "C_h": 0.0},
            "mark_space": {"atoms": [{"e": 0.5, "w": 1.0}]},
        }
        cs, ms = model_from_dict(doc)
        x = np.array([[1.0, 2.0]])
        b = cs.eval_b(0.0, x, np.array([0.5]), np.array([[0.1, 0.2]]),
                      np.zeros(1))
        np.testing.assert_allclose(b, [[-0.5, -1.0]])
        A = assemble_A(cs, ms, 0.0, (x[0], 0.5, np.array([0.1, 0.2])),
                       np.zeros(1))
        assert A.shape == (2 + 1 + 2,)
