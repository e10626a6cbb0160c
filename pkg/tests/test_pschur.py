"""
pschur 测试套件。

测试清单:
  Test 1: 随机因子 — 与显式乘积的特征值对照
  Test 2: 结构 — Q 酉、T 上三角、A_j = Q_{j+1} T_j Q_jᴴ
  Test 3: 极端模长 — e^{±80} 的乘子由对数和给出
  Test 4: 排序与边界情形
"""
import unittest

import numpy as np

from src.exceptions import DimensionError
from src.pschur import periodic_schur


def _random_factors(rng, K, n):
    return [rng.standard_normal((n, n)) for _ in range(K)]


def _product(factors):
    P = np.eye(factors[0].shape[0])
    for A in factors:
        P = A @ P
    return P


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


# ══════════════════════════════════════════════════════════
# Test 1: 随机因子
# ══════════════════════════════════════════════════════════

class TestRandomOracle(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(42)

    def test_matches_explicit_product(self):
        """对每个显式乘积的特征值, 都有一个乘子与之相对误差 < 1e−10。"""
        for K, n in ((2, 3), (4, 5), (7, 6)):
            factors = _random_factors(self.rng, K, n)
            expected = np.linalg.eigvals(_product(factors))
            got = periodic_schur(factors).multipliers
            scale = np.max(np.abs(expected))
            for ev in expected:
                self.assertLess(np.min(np.abs(got - ev)), 1e-10 * scale,
                                f"K={K}, n={n}: 特征值 {ev} 未匹配")

    def test_single_factor(self):
        A = self.rng.standard_normal((4, 4))
        got = np.sort_complex(periodic_schur([A], order=None).multipliers)
        np.testing.assert_allclose(got, np.sort_complex(np.linalg.eigvals(A)), rtol=1e-12)


# ══════════════════════════════════════════════════════════
# Test 2: 结构
# ══════════════════════════════════════════════════════════

class TestStructure(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(42)
        self.factors = _random_factors(rng, 5, 4)
        self.ps = periodic_schur(self.factors)

    def test_unitary(self):
        for Q in self.ps.Q:
            np.testing.assert_allclose(Q.conj().T @ Q, np.eye(4), atol=1e-12)

    def test_triangular(self):
        for T in self.ps.T:
            self.assertLess(np.max(np.abs(np.tril(T, -1))), 1e-12 * np.linalg.norm(T))

    def test_reconstruction(self):
        K = len(self.factors)
        for j, A in enumerate(self.factors):
            Q_next = self.ps.Q[(j + 1) % K]
            rebuilt = Q_next @ self.ps.T[j] @ self.ps.Q[j].conj().T
            np.testing.assert_allclose(rebuilt, A, atol=1e-11 * np.linalg.norm(A))


# ══════════════════════════════════════════════════════════
# Test 3: 极端模长
# ══════════════════════════════════════════════════════════

class TestLogScale(unittest.TestCase):

    def test_spread_of_160_orders(self):
        """10 个因子各为 diag(e⁸, e⁻⁸) 的正交相似, 乘子 e^{±80}。"""
        rng = np.random.default_rng(42)
        K = 10
        V = [_orthogonal(rng, 2) for _ in range(K)]
        D = np.array([[np.exp(8.0), 1.0], [0.0, np.exp(-8.0)]])
        factors = [V[(j + 1) % K] @ D @ V[j].T for j in range(K)]
        ps = periodic_schur(factors)
        np.testing.assert_allclose(ps.log_abs, [80.0, -80.0], rtol=1e-10)
        np.testing.assert_allclose(np.real(ps.phases), [1.0, 1.0], atol=1e-10)


# ══════════════════════════════════════════════════════════
# Test 4: 排序与边界
# ══════════════════════════════════════════════════════════

class TestOrderingAndArguments(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(42)
        self.factors = _random_factors(rng, 3, 5)

    def test_descending(self):
        L = periodic_schur(self.factors, order="descending").log_abs
        self.assertTrue(np.all(np.diff(L) <= 1e-10))

    def test_ascending(self):
        L = periodic_schur(self.factors, order="ascending").log_abs
        self.assertTrue(np.all(np.diff(L) >= -1e-10))

    def test_empty_sequence(self):
        with self.assertRaises(DimensionError):
            periodic_schur([])

    def test_mismatched_shapes(self):
        with self.assertRaises(DimensionError):
            periodic_schur([np.eye(3), np.eye(2)])

    def test_unknown_order(self):
        with self.assertRaises(DimensionError):
            periodic_schur(self.factors, order="sideways")


if __name__ == "__main__":
    unittest.main()
