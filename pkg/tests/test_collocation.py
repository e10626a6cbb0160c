"""
collocation / linalg 测试套件。

测试清单:
  Test 1: 梯形残差 Jacobian 与有限差分一致 (路径与周期两种排列)
  Test 2: 转移因子与 Jacobian 块一致
  Test 3: 加边求解 — 块消去、奇异 A 退回整体 LU、整体奇异报错
  Test 4: Schur 补病态时退回整体 LU
"""
import unittest

import numpy as np
import scipy.sparse as sp

from src.collocation import trap_jacobian, trap_residual, transition_factors
from src.exceptions import SolverError
from src.linalg import bordered_solve, sparse_solve
from src.models import PollutionModel, mass_matrix, pollution_flat_css


class CollocationTestCase(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(42)
        self.model = PollutionModel()
        self.fem = self.model.build_fem(nx=4)
        self.params = self.model.default_params()
        base = pollution_flat_css(self.params, self.fem)
        self.U = base + 0.05 * self.rng.standard_normal((6, base.size))
        self.h = np.full(6, 1.0 / 6)

    def fd_jacobian(self, periodic: bool) -> np.ndarray:
        h = self.h if periodic else self.h[:-1]

        def flat_residual(z):
            R, _ = trap_residual(self.model, self.fem, z.reshape(self.U.shape), h, 2.5,
                                 self.params, periodic)
            return R.ravel()

        z = self.U.ravel()
        cols = []
        for i in range(z.size):
            e = np.zeros(z.size)
            e[i] = 1e-6
            cols.append((flat_residual(z + e) - flat_residual(z - e)) / 2e-6)
        return np.column_stack(cols)


# ══════════════════════════════════════════════════════════
# Test 1: Jacobian
# ══════════════════════════════════════════════════════════

class TestTrapJacobian(CollocationTestCase):

    def _check(self, periodic: bool):
        h = self.h if periodic else self.h[:-1]
        J = trap_jacobian(self.model, self.fem, self.U, h, 2.5, self.params, periodic).toarray()
        J_fd = self.fd_jacobian(periodic)
        self.assertEqual(J.shape, J_fd.shape)
        self.assertLess(np.max(np.abs(J - J_fd)) / np.max(np.abs(J)), 1e-6)

    def test_path_layout(self):
        self._check(periodic=False)

    def test_periodic_layout(self):
        self._check(periodic=True)

    def test_T_derivative(self):
        R1, dT = trap_residual(self.model, self.fem, self.U, self.h[:-1], 2.5, self.params)
        R2, _ = trap_residual(self.model, self.fem, self.U, self.h[:-1], 3.5, self.params)
        np.testing.assert_allclose(R2 - R1, dT, atol=1e-12)


# ══════════════════════════════════════════════════════════
# Test 2: 转移因子
# ══════════════════════════════════════════════════════════

class TestTransitionFactors(CollocationTestCase):

    def test_factors_match_jacobian_blocks(self):
        """Jacobian 第 j 行块: 左块 = −右因子/h_j, 右块 = 左因子/h_j。"""
        J = trap_jacobian(self.model, self.fem, self.U, self.h, 2.5, self.params,
                          periodic=True).toarray()
        pairs = transition_factors(self.model, self.fem, self.U, self.h, 2.5, self.params)
        n_u = self.U.shape[1]
        m = self.U.shape[0]
        for j in (0, 3, m - 1):
            left, right = pairs[j]
            rows = slice(j * n_u, (j + 1) * n_u)
            nxt = (j + 1) % m
            np.testing.assert_allclose(J[rows, j * n_u:(j + 1) * n_u], -right / self.h[j],
                                       atol=1e-10)
            np.testing.assert_allclose(J[rows, nxt * n_u:(nxt + 1) * n_u], left / self.h[j],
                                       atol=1e-10)

    def test_constant_state_factors(self):
        """常值状态下左右因子只差 J 的符号。"""
        U = np.tile(self.U[0], (3, 1))
        (left, right), = transition_factors(self.model, self.fem, U[:1], np.ones(1), 1.0,
                                            self.params)
        M = mass_matrix(self.model, self.fem).toarray()
        np.testing.assert_allclose(left + right, 2 * M, atol=1e-12)


# ══════════════════════════════════════════════════════════
# Test 3: 加边求解
# ══════════════════════════════════════════════════════════

class TestBorderedSolve(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(42)

    def _system(self, n=30, k=2):
        A = sp.random(n, n, density=0.2, random_state=42, format="csr") + 5 * sp.identity(n)
        B = self.rng.standard_normal((n, k))
        C = self.rng.standard_normal((k, n))
        D = self.rng.standard_normal((k, k))
        return A, B, C, D

    def test_matches_dense_solve(self):
        A, B, C, D = self._system()
        f, g = self.rng.standard_normal(30), self.rng.standard_normal(2)
        x, y = bordered_solve(A, B, C, D, f, g)
        full = np.block([[A.toarray(), B], [C, D]])
        z = np.linalg.solve(full, np.concatenate([f, g]))
        np.testing.assert_allclose(np.concatenate([x, y]), z, atol=1e-10)

    def test_singular_block_falls_back(self):
        """A 奇异而整体非奇异: 块消去失败后整体 LU 仍给出解。"""
        n = 4
        A = sp.diags([1.0, 1.0, 1.0, 0.0]).tocsr()
        B = np.array([[0.0], [0.0], [0.0], [1.0]])
        C = np.array([[0.0, 0.0, 0.0, 1.0]])
        D = np.zeros((1, 1))
        f = np.arange(1.0, n + 1)
        x, y = bordered_solve(A, B, C, D, f, np.array([2.0]))
        np.testing.assert_allclose(x, [1.0, 2.0, 3.0, 2.0])
        np.testing.assert_allclose(y, [4.0])

    def test_ill_conditioned_schur_falls_back(self):
        """A 近奇异使 S = D − C A⁻¹B 的条件数达 1e14: 不走块消去, 整体 LU 给出精确解。"""
        eps = 1e-14
        A = sp.diags([eps, 1.0]).tocsr()
        B = np.eye(2)
        C = np.eye(2)
        D = np.diag([0.0, 2.0])
        f, g = np.array([3.0, 5.0]), np.array([7.0, 11.0])
        with self.assertLogs("src.linalg", level="DEBUG") as logs:
            x, y = bordered_solve(A, B, C, D, f, g)
        self.assertTrue(any("改用整体 LU" in line for line in logs.output))
        np.testing.assert_allclose(x, [g[0], 2 * f[1] - g[1]], rtol=1e-12)
        np.testing.assert_allclose(y, [f[0] - eps * g[0], g[1] - f[1]], rtol=1e-12)

    def test_no_border(self):
        A, _, _, _ = self._system()
        f = self.rng.standard_normal(30)
        x, y = bordered_solve(A, None, None, None, f)
        np.testing.assert_allclose(A @ x, f, atol=1e-12)
        self.assertEqual(y.size, 0)

    def test_singular_system_raises(self):
        with self.assertRaises(SolverError):
            sparse_solve(sp.csr_matrix((3, 3)), np.ones(3))


if __name__ == "__main__":
    unittest.main()
