"""
steady 测试套件。

测试清单:
  Test 1: 亏量计数 (污染 ODE 与 21 节点 PDE, 临界特征值)
  Test 2: Newton 收敛与失败
  Test 3: 延拓 — 闭式对照、Hopf 定位、浅湖折点; 只凭分支重新检测分岔
  Test 4: CSS 目标 — Ψ 的正交性与零化性质
  Test 5: 参数检查与分支切换限制
"""
import unittest
from dataclasses import replace

import numpy as np

from src.exceptions import (
    ConfigurationError,
    InvalidArgumentError,
    NoConvergenceError,
    SaddlePointError,
    UnsupportedBifurcationError,
)
from src.models import PollutionModel, ShallowLakeModel, pollution_flat_css, sloc_flat_seed
from src.steady import (
    BifurcationEvent,
    ContinuationSettings,
    branch_switch,
    continue_css,
    css_target,
    detect_bifurcations,
    generalized_spectrum,
    make_point,
    newton_css,
    stable_mask,
)
from tests.linear_model import LinearSaddleModel


def _defect(model, fem, rho):
    params = model.default_params(rho=rho)
    u = pollution_flat_css(params, fem)
    return css_target(model, fem, u, params, require_spp=False).defect


# ══════════════════════════════════════════════════════════
# Test 1: 亏量计数
# ══════════════════════════════════════════════════════════

class TestDefectCounting(unittest.TestCase):
    """每越过一个 Hopf 点亏量增加 2。"""

    def test_ode_defect(self):
        model = PollutionModel(ode=True)
        fem = model.build_fem()
        self.assertEqual(_defect(model, fem, 0.5), 0)
        self.assertEqual(_defect(model, fem, 0.65), 2)

    def test_pde_defect_on_21_nodes(self):
        model = PollutionModel()
        fem = model.build_fem()
        self.assertEqual([_defect(model, fem, r) for r in (0.5, 0.55, 0.65)], [0, 2, 4])

    def test_linear_saddle_has_no_defect(self):
        model = LinearSaddleModel()
        fem = model.build_fem()
        params = model.default_params()
        target = css_target(model, fem, np.zeros(2), params)
        self.assertEqual(target.defect, 0)
        self.assertAlmostEqual(target.T_suggest, 1.0, places=12)

    def test_zero_eigenvalue_raises_defect(self):
        """a = 0 时 μ = 0 为临界特征值: 不计入稳定, 亏量为 1 并标记 near_degenerate。"""
        model = LinearSaddleModel()
        fem = model.build_fem()
        params = model.default_params(a=0.0)
        with self.assertLogs("src.steady", level="WARNING"):
            target = css_target(model, fem, np.zeros(2), params, require_spp=False)
        self.assertEqual(target.defect, 1)
        self.assertTrue(target.near_degenerate)
        self.assertIsNone(target.T_suggest)
        with self.assertRaises(SaddlePointError):
            css_target(model, fem, np.zeros(2), params)

    def test_marginal_threshold(self):
        mask = stable_mask(np.array([0.0, 1e-12, -1e-12, 1e-9, -1.0 + 2.0j, 3.0 - 1.0j]))
        np.testing.assert_array_equal(mask, [False, False, False, True, False, True])


# ══════════════════════════════════════════════════════════
# Test 2: Newton
# ══════════════════════════════════════════════════════════

class TestNewton(unittest.TestCase):

    def test_converges_from_perturbed_guess(self):
        rng = np.random.default_rng(42)
        model = PollutionModel()
        fem = model.build_fem()
        params = model.default_params()
        exact = pollution_flat_css(params, fem)
        u = newton_css(model, fem, exact + 0.01 * rng.standard_normal(exact.size), params)
        np.testing.assert_allclose(u, exact, atol=1e-8)

    def test_nonfinite_guess_rejected(self):
        model = LinearSaddleModel()
        with self.assertRaises(InvalidArgumentError):
            newton_css(model, model.build_fem(), np.array([np.nan, 0.0]), model.default_params())

    def test_iteration_limit(self):
        model = PollutionModel(ode=True)
        fem = model.build_fem()
        params = model.default_params()
        guess = pollution_flat_css(params) + 0.3
        with self.assertRaises(NoConvergenceError) as ctx:
            newton_css(model, fem, guess, params, max_iter=1)
        self.assertEqual(len(ctx.exception.residuals), 2)


# ══════════════════════════════════════════════════════════
# Test 3: 延拓
# ══════════════════════════════════════════════════════════

class TestContinuation(unittest.TestCase):

    def test_pollution_branch_matches_closed_form(self):
        model = PollutionModel(ode=True)
        fem = model.build_fem()
        params = model.default_params()
        start = make_point(model, fem, pollution_flat_css(params), params)
        branch = continue_css(model, fem, start, "rho", 0.02, 8,
                              ContinuationSettings(ds_max=0.02, bif_check=False))
        self.assertFalse(branch.failed)
        self.assertGreater(branch.param_values()[-1], 0.6)
        for pt in branch.points:
            np.testing.assert_allclose(pt.u, pollution_flat_css(pt.params), atol=1e-8)

    def test_pde_hopf_points(self):
        """ρ₁ ∈ [0.52, 0.54] 为 l=1 模态, ρ₂ ∈ [0.57, 0.59] 为 l=0 模态。"""
        model = PollutionModel()
        fem = model.build_fem()
        params = model.default_params()
        start = make_point(model, fem, pollution_flat_css(params, fem), params)
        branch = continue_css(model, fem, start, "rho", 0.01, 15,
                              ContinuationSettings(ds_max=0.01))
        hopf = [e for e in branch.events if e.kind == "hopf"]
        self.assertEqual(len(hopf), 2)
        self.assertTrue(0.52 <= hopf[0].param <= 0.54)
        self.assertEqual(hopf[0].spatial_mode, 1)
        self.assertTrue(0.57 <= hopf[1].param <= 0.59)
        self.assertEqual(hopf[1].spatial_mode, 0)
        self.assertLess(hopf[1].mu.imag, 0)

    def test_sloc_fold(self):
        """平坦 FSC 分支沿 b 增大在 b ≈ 0.73 处折返。"""
        model = ShallowLakeModel()
        fem = model.build_fem(nx=10)
        params = model.default_params()
        start = make_point(model, fem, sloc_flat_seed(params, "FSC", fem), params)
        branch = continue_css(model, fem, start, "b", 0.01, 40,
                              ContinuationSettings(ds_max=0.01))
        folds = [e for e in branch.events if e.kind == "fold"]
        self.assertTrue(folds)
        self.assertAlmostEqual(folds[0].param, 0.73, delta=0.01)

    def test_sloc_weight_keeps_parameter_moving(self):
        """协态对 b 敏感: 自动权重 θ < 1, 首步 b 至少前进 h/2。"""
        model = ShallowLakeModel()
        fem = model.build_fem(nx=10)
        params = model.default_params()
        start = make_point(model, fem, sloc_flat_seed(params, "FSC", fem), params)
        branch = continue_css(model, fem, start, "b", 0.01, 1,
                              ContinuationSettings(ds_max=0.01, bif_check=False))
        self.assertLess(branch.theta, 1.0)
        b = branch.param_values()
        self.assertGreater(b[1] - b[0], 0.005)

        fixed = continue_css(model, fem, start, "b", 0.01, 1,
                             ContinuationSettings(ds_max=0.01, bif_check=False, theta=1.0))
        b_fixed = fixed.param_values()
        self.assertLess(b_fixed[1] - b_fixed[0], 0.1 * (b[1] - b[0]))

    def test_linear_model_has_no_events(self):
        model = LinearSaddleModel()
        fem = model.build_fem()
        params = model.default_params()
        start = make_point(model, fem, np.zeros(2), params)
        branch = continue_css(model, fem, start, "a", 0.1, 5)
        self.assertEqual(branch.events, [])
        self.assertTrue(all(pt.stability == "spp" for pt in branch.points))

    def test_detect_from_branch_alone(self):
        """延拓时记录了模型与网格, detect_bifurcations(branch) 无需其它参数。"""
        model = PollutionModel(ode=True)
        fem = model.build_fem()
        params = model.default_params(rho=0.55)
        start = make_point(model, fem, pollution_flat_css(params), params)
        checked = continue_css(model, fem, start, "rho", 0.01, 6, ContinuationSettings(ds_max=0.01))
        plain = continue_css(model, fem, start, "rho", 0.01, 6,
                             ContinuationSettings(ds_max=0.01, bif_check=False))
        self.assertEqual([e for e in plain.events if e.kind == "hopf"], [])
        found = detect_bifurcations(plain)
        expected = [e for e in checked.events if e.kind == "hopf"]
        self.assertEqual(len(found), 1)
        self.assertEqual(found[0].kind, "hopf")
        self.assertAlmostEqual(found[0].param, expected[0].param, places=10)

    def test_detect_needs_model_and_mesh(self):
        model = LinearSaddleModel()
        fem = model.build_fem()
        start = make_point(model, fem, np.zeros(2), model.default_params())
        branch = continue_css(model, fem, start, "a", 0.1, 2)
        with self.assertRaises(InvalidArgumentError):
            detect_bifurcations(replace(branch, model=None, fem=None))


# ══════════════════════════════════════════════════════════
# Test 4: CSS 目标
# ══════════════════════════════════════════════════════════

class TestCssTarget(unittest.TestCase):

    def setUp(self):
        self.model = PollutionModel()
        self.fem = self.model.build_fem(nx=10)
        self.params = self.model.default_params()
        self.u = pollution_flat_css(self.params, self.fem)
        self.target = css_target(self.model, self.fem, self.u, self.params)

    def test_projector_rows_orthonormal(self):
        Psi = self.target.Psi
        self.assertEqual(Psi.shape, (self.model.N * self.fem.n, self.u.size))
        np.testing.assert_allclose(Psi @ Psi.T, np.eye(Psi.shape[0]), atol=1e-10)

    def test_projector_annihilates_stable_eigenvectors(self):
        mu, vecs = generalized_spectrum(self.model, self.fem, self.u, self.params)
        stable = vecs[:, stable_mask(mu)]
        stable = stable / np.linalg.norm(stable, axis=0)
        self.assertLess(np.max(np.abs(self.target.Psi @ stable)), 1e-8)

    def test_defect_raises(self):
        params = self.params.replace(rho=0.65)
        u = pollution_flat_css(params, self.fem)
        with self.assertRaises(SaddlePointError) as ctx:
            css_target(self.model, self.fem, u, params)
        self.assertEqual(ctx.exception.defect, 4)


# ══════════════════════════════════════════════════════════
# Test 5: 参数检查
# ══════════════════════════════════════════════════════════

class TestArguments(unittest.TestCase):

    def setUp(self):
        self.model = LinearSaddleModel()
        self.fem = self.model.build_fem()
        self.params = self.model.default_params()
        self.start = make_point(self.model, self.fem, np.zeros(2), self.params)

    def test_zero_step(self):
        with self.assertRaises(InvalidArgumentError):
            continue_css(self.model, self.fem, self.start, "a", 0.0, 3)

    def test_unknown_parameter(self):
        with self.assertRaises(InvalidArgumentError):
            continue_css(self.model, self.fem, self.start, "nope", 0.1, 3)

    def test_bad_step_bounds(self):
        with self.assertRaises(ConfigurationError):
            ContinuationSettings(ds_min=0.1, ds_max=0.01)

    def test_hopf_event_cannot_switch(self):
        event = BifurcationEvent(kind="hopf", param=0.1, spatial_mode=0,
                                 u=np.zeros(2), params=self.params)
        with self.assertRaises(UnsupportedBifurcationError):
            branch_switch(self.model, self.fem, event, 0.1)


if __name__ == "__main__":
    unittest.main()
