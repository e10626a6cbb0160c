"""
models 测试套件。

测试清单:
  Test 1: Jacobian 与有限差分一致 (全部模型, 相对误差 < 1e−5)
  Test 2: 污染模型闭式平坦 CSS 与 Hopf 条件量
  Test 3: 浅湖模型平坦根的个数 (折点两侧)
  Test 4: 玩具模型解析轨道与首次积分
  Test 5: 参数向量与注册表
"""
import unittest

import numpy as np

from src.exceptions import AdmissibilityError, DimensionError, InvalidArgumentError
from src.fem1d import FemOperators
from src.models import (
    PollutionModel,
    ShallowLakeModel,
    ToyModel,
    control_of,
    current_value,
    get_model,
    jacobian_G,
    pollution_flat_css,
    pollution_hopf_k,
    residual_G,
    sloc_flat_roots,
    sloc_flat_seed,
    toy_analytics,
    toy_energy,
)


def _fd_jacobian(model, fem, u, params, step=1e-6):
    cols = []
    for i in range(u.size):
        e = np.zeros(u.size)
        e[i] = step * max(1.0, abs(u[i]))
        cols.append((residual_G(model, fem, u + e, params)
                     - residual_G(model, fem, u - e, params)) / (2 * e[i]))
    return np.column_stack(cols)


# ══════════════════════════════════════════════════════════
# Test 1: Jacobian vs 有限差分
# ══════════════════════════════════════════════════════════

class TestJacobianFiniteDifference(unittest.TestCase):
    """在平坦 CSS 附近的随机扰动点上比较解析 Jacobian 与中心差分。"""

    def setUp(self):
        self.rng = np.random.default_rng(42)

    def _check(self, model, fem, u, params):
        J = jacobian_G(model, fem, u, params).toarray()
        J_fd = _fd_jacobian(model, fem, u, params)
        err = np.max(np.abs(J - J_fd)) / max(1.0, np.max(np.abs(J)))
        self.assertLess(err, 1e-5, f"{model.name}: 相对误差 {err:.2e}")

    def test_shallow_lake(self):
        model = ShallowLakeModel()
        fem = model.build_fem(nx=8)
        params = model.default_params()
        u = sloc_flat_seed(params, "FSC", fem)
        u = u + 0.01 * self.rng.standard_normal(u.size) * np.abs(u)
        self._check(model, fem, u, params)

    def test_pollution_pde_and_ode(self):
        for model in (PollutionModel(ode=False), PollutionModel(ode=True)):
            fem = model.build_fem(nx=8)
            params = model.default_params()
            u = pollution_flat_css(params, fem) + 0.05 * self.rng.standard_normal(model.n_u(fem))
            self._check(model, fem, u, params)

    def test_toy(self):
        model = ToyModel()
        fem = model.build_fem()
        params = model.default_params()
        self._check(model, fem, self.rng.uniform(-1.5, 1.5, 4), params)


# ══════════════════════════════════════════════════════════
# Test 2: 污染模型
# ══════════════════════════════════════════════════════════

class TestPollutionModel(unittest.TestCase):

    def setUp(self):
        self.model = PollutionModel()
        self.fem = self.model.build_fem()
        self.params = self.model.default_params()

    def test_flat_css_is_zero_of_G(self):
        for rho in (0.5, 0.55, 0.65):
            params = self.params.replace(rho=rho)
            u = pollution_flat_css(params, self.fem)
            self.assertLess(np.max(np.abs(residual_G(self.model, self.fem, u, params))), 1e-12)

    def test_default_mesh_has_21_nodes(self):
        self.assertEqual(self.fem.n, 21)

    def test_control_is_nodewise(self):
        """κ = −(1 + λ₁)/γ, 每个节点一个值。"""
        u = self.model.flat([0.2, 0.3, -4.0, -1.0], self.fem)
        kappa = control_of(self.model, self.fem, u, self.params)
        self.assertEqual(kappa.shape, (1, 21))
        np.testing.assert_allclose(kappa, 3.0 / self.params["gamma"])

    def test_hopf_quantity_matches_closed_form(self):
        """K_l = −(α'+d₂l²)(ρ+α'+d₂l²) − d₁l²(ρ+d₁l²), α' = 1 − 2z*。"""
        params = self.params.replace(rho=0.55)
        rho, p, beta = params["rho"], params["p"], params["beta"]
        d1, d2 = params["d1"], params["d2"]
        z = 0.5 * (1 + rho - beta / (p + rho))
        a = 1 - 2 * z
        for l in (0, 1, 2):
            expected = -(a + d2 * l ** 2) * (rho + a + d2 * l ** 2) - d1 * l ** 2 * (rho + d1 * l ** 2)
            self.assertAlmostEqual(pollution_hopf_k(params, l), expected, places=12)


# ══════════════════════════════════════════════════════════
# Test 3: 浅湖模型
# ══════════════════════════════════════════════════════════

class TestShallowLake(unittest.TestCase):

    def setUp(self):
        self.model = ShallowLakeModel()
        self.params = self.model.default_params()

    def test_three_flat_roots_below_fold(self):
        roots = sloc_flat_roots(self.params.replace(b=0.65))
        self.assertEqual(len(roots), 3)
        self.assertTrue(np.all(np.diff(roots) > 0))

    def test_single_flat_root_above_fold(self):
        roots = sloc_flat_roots(self.params.replace(b=0.8))
        self.assertEqual(len(roots), 1)
        self.assertGreater(roots[0], 1.0)

    def test_seed_is_flat_css(self):
        fem = self.model.build_fem(nx=10)
        for sel in ("FSC", "FSI", "FSM"):
            u = sloc_flat_seed(self.params, sel, fem)
            self.assertLess(np.max(np.abs(residual_G(self.model, fem, u, self.params))), 1e-9)

    def test_control_is_minus_inverse_costate(self):
        fem = self.model.build_fem(nx=4)
        kappa = control_of(self.model, fem, self.model.flat([0.5, -2.0], fem), self.params)
        np.testing.assert_allclose(kappa, [[0.5] * 5])
        with self.assertRaises(AdmissibilityError):
            control_of(self.model, fem, self.model.flat([0.5, 0.0], fem), self.params)

    def test_inadmissible_costate(self):
        """λ > 0 时 κ < 0, J_c 无定义。"""
        fem = self.model.build_fem(nx=4)
        u = self.model.flat([0.5, 1.0], fem)
        with self.assertRaises(AdmissibilityError):
            current_value(self.model, fem, u, self.params)

    def test_unknown_branch_selector(self):
        with self.assertRaises(InvalidArgumentError):
            sloc_flat_seed(self.params, "FSX", self.model.build_fem(nx=4))


# ══════════════════════════════════════════════════════════
# Test 4: 玩具模型
# ══════════════════════════════════════════════════════════

class TestToyModel(unittest.TestCase):

    def setUp(self):
        self.model = ToyModel()
        self.fem = FemOperators.ode()
        self.params = self.model.default_params()
        self.info = toy_analytics(self.params)

    def test_analytic_orbit_solves_system(self):
        """u̇ = f(u) = −G(u) 沿 (cos t, sin t, 1, 0)。"""
        theta = self.params["theta"]
        for t in np.linspace(0, self.info["T_p"], 7):
            u = self.info["cps_orbit"](t)
            du = np.array([-theta * np.sin(theta * t), theta * np.cos(theta * t), 0.0, 0.0])
            np.testing.assert_allclose(-residual_G(self.model, self.fem, u, self.params), du,
                                       atol=1e-12)

    def test_energy_level_on_orbit(self):
        E = toy_energy(1.0, 0.0, self.params)
        self.assertAlmostEqual(E, self.info["heteroclinic_level"], places=14)

    def test_multipliers(self):
        s = np.sqrt(2 * np.pi)
        np.testing.assert_allclose(self.info["multipliers"],
                                   [1.0, np.exp(-2 * np.pi * s), np.exp(4 * np.pi), np.exp(2 * np.pi * s)])

    def test_no_control(self):
        kappa = control_of(self.model, self.fem, np.array([1.0, 0.0, 1.0, 0.0]), self.params)
        self.assertEqual(kappa.shape, (0, 1))

    def test_not_discounted(self):
        self.assertFalse(self.model.discounted)
        self.assertEqual(self.model.component_labels(), ("x1", "x2", "y1", "y2"))


# ══════════════════════════════════════════════════════════
# Test 5: 参数与注册表
# ══════════════════════════════════════════════════════════

class TestParamsAndRegistry(unittest.TestCase):

    def test_replace_and_lookup(self):
        params = get_model("pollution").default_params(rho=0.55)
        self.assertEqual(params["rho"], 0.55)
        self.assertEqual(params.rho, 0.55)
        self.assertEqual(params.replace(p=2.0)["p"], 2.0)

    def test_unknown_parameter(self):
        params = get_model("sloc").default_params()
        with self.assertRaises(InvalidArgumentError):
            params["nope"]
        with self.assertRaises(InvalidArgumentError):
            params.replace(nope=1.0)

    def test_nonpositive_discount_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            get_model("pollution").default_params(rho=0.0)

    def test_unknown_model(self):
        with self.assertRaises(InvalidArgumentError):
            get_model("nope")

    def test_split_checks_length(self):
        model = get_model("pollution-ode")
        with self.assertRaises(DimensionError):
            model.split(np.zeros(3), FemOperators.ode())


if __name__ == "__main__":
    unittest.main()
