"""
周期 Schur 分解。
对因子序列 A_0, …, A_{K−1} (乘积 Π = A_{K−1}⋯A_0) 求酉矩阵 Q_0, …, Q_{K−1}, 使

    T_j = Q_{j+1}ᴴ A_j Q_j   (Q_K ≡ Q_0)

全部为上三角。乘积从不显式形成, 模长跨越许多数量级的乘子 (如 1e−80 与 1e+80)
由对角元的对数和给出, 不会溢出。

流程:
  Step 1: Hessenberg-三角约化 (T_{K−1} 为 Hessenberg, 其余为上三角)
  Step 2: 单位移隐式周期 QR 扫描, 直到 T_{K−1} 次对角全部收敛
  Step 3: 可选地按 |γ| 降序/升序重排对角 (交换相邻对角元)
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg as dsl
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from src.config import PSCHUR_MAX_SWEEPS
from src.exceptions import DimensionError, SolverError

logger = logging.getLogger(__name__)

_EPS = np.finfo(float).eps
_EXCEPTIONAL_EVERY = 10


@dataclass
class PeriodicSchur:
    """周期 Schur 形式; Q[0] 的列对应乘积 Π 的 Schur 向量。"""

    Q: List[np.ndarray]
    T: List[np.ndarray]

    @property
    def log_abs(self) -> np.ndarray:
        """log|γ_i| = Σ_j log|T_j[i, i]|。"""
        with np.errstate(divide="ignore"):
            return np.sum([np.log(np.abs(np.diag(t))) for t in self.T], axis=0)

    @property
    def phases(self) -> np.ndarray:
        ph = np.ones(self.T[0].shape[0], dtype=complex)
        for t in self.T:
            d = np.diag(t)
            mag = np.abs(d)
            ph *= np.where(mag > 0, d / np.where(mag > 0, mag, 1.0), 1.0)
        return ph

    @property
    def multipliers(self) -> np.ndarray:
        """γ_i = phase_i · exp(log|γ_i|) (极端模长可能溢出为 inf 或下溢为 0)。"""
        with np.errstate(over="ignore"):
            return self.phases * np.exp(self.log_abs)


# ──────────── 基本旋转 ────────────


def _givens(x0: complex, x1: complex) -> np.ndarray:
    """首列与 (x0, x1) 平行的 2×2 酉矩阵 G, 满足 Gᴴ(x0, x1)ᵀ = (r, 0)ᵀ。"""
    nr = np.hypot(abs(x0), abs(x1))
    if nr == 0:
        return np.eye(2, dtype=complex)
    c, s = x0 / nr, x1 / nr
    return np.array([[c, -np.conj(s)], [s, np.conj(c)]])


def _rot_rows(A: np.ndarray, i: int, G: np.ndarray):
    A[i:i + 2, :] = G.conj().T @ A[i:i + 2, :]


def _rot_cols(A: np.ndarray, i: int, G: np.ndarray):
    A[:, i:i + 2] = A[:, i:i + 2] @ G


# ──────────── Step 1: Hessenberg-三角约化 ────────────


def _hessenberg_triangular(T: List[np.ndarray], Q: List[np.ndarray]):
    K, n = len(T), T[0].shape[0]
    for j in range(K - 1):
        q, r = np.linalg.qr(T[j])
        T[j] = r
        Q[j + 1] = Q[j + 1] @ q
        T[j + 1] = T[j + 1] @ q

    last = K - 1
    for c in range(n - 2):
        x = T[last][c + 1:, c]
        if np.linalg.norm(x[1:]) == 0:
            continue
        z, _ = np.linalg.qr(x[:, None].astype(complex), mode="complete")
        T[last][c + 1:, :] = z.conj().T @ T[last][c + 1:, :]
        T[last][c + 2:, c] = 0
        Q[0][:, c + 1:] = Q[0][:, c + 1:] @ z
        T[0][:, c + 1:] = T[0][:, c + 1:] @ z
        # 填充沿三角因子链逐个消去
        for j in range(K - 1):
            q, r = np.linalg.qr(T[j][c + 1:, c + 1:])
            T[j][c + 1:, c + 1:] = r
            T[j][c + 1:, :c + 1] = 0
            Q[j + 1][:, c + 1:] = Q[j + 1][:, c + 1:] @ q
            T[j + 1][:, c + 1:] = T[j + 1][:, c + 1:] @ q

    for j in range(K - 1):
        T[j] = np.triu(T[j])
    T[last] = np.triu(T[last], -1)


# ──────────── Step 2: 周期 QR ────────────


def _log_polar(z: complex):
    mag = abs(z)
    if mag == 0:
        return -np.inf, 1.0 + 0j
    return np.log(mag), z / mag


def _shift(T: List[np.ndarray], hi: int, exceptional: bool):
    """末端 2×2 块乘积的 Wilkinson 位移, 以 (尾数, 对数尺度) 返回。"""
    blk = slice(hi - 1, hi + 1)
    P = np.eye(2, dtype=complex)
    scale = 0.0
    for t in T:
        P = t[blk, blk] @ P
        s = np.max(np.abs(P))
        if s == 0:
            return 0j, -np.inf
        P /= s
        scale += np.log(s)
    if exceptional:
        return P[1, 1] + 0.75 * abs(P[1, 0]), scale
    mu = np.linalg.eigvals(P)
    return mu[np.argmin(np.abs(mu - P[1, 1]))], scale


def _sweep(T: List[np.ndarray], Q: List[np.ndarray], lo: int, hi: int,
           sigma: complex, sigma_log: float):
    K = len(T)
    H = T[K - 1]
    r_log, r_ph = 0.0, 1.0 + 0j
    for t in T[:-1]:
        lg, ph = _log_polar(t[lo, lo])
        r_log += lg
        r_ph *= ph
    top = max(r_log, sigma_log)
    if not np.isfinite(top):
        top = 0.0
    with np.errstate(under="ignore"):
        a = np.exp(r_log - top) * r_ph
        b = np.exp(sigma_log - top) * sigma
    x0 = a * H[lo, lo] - b
    x1 = a * H[lo + 1, lo]

    G = _givens(x0, x1)
    _rot_rows(H, lo, G)
    _rot_cols(Q[0], lo, G)
    _rot_cols(T[0], lo, G)
    for k in range(lo, hi):
        if k > lo:
            G = _givens(H[k, k - 1], H[k + 1, k - 1])
            _rot_rows(H, k, G)
            H[k + 1, k - 1] = 0
            _rot_cols(Q[0], k, G)
            _rot_cols(T[0], k, G)
        for j in range(K - 1):
            G = _givens(T[j][k, k], T[j][k + 1, k])
            _rot_rows(T[j], k, G)
            T[j][k + 1, k] = 0
            _rot_cols(Q[j + 1], k, G)
            _rot_cols(T[j + 1], k, G)


def _periodic_qr(T: List[np.ndarray], Q: List[np.ndarray], max_sweeps: int):
    n = T[0].shape[0]
    H = T[-1]
    hi = n - 1
    iters = total = 0
    while hi > 0:
        lo = hi
        while lo > 0:
            s = abs(H[lo - 1, lo - 1]) + abs(H[lo, lo])
            if s == 0:
                s = np.linalg.norm(H, 1)
            if abs(H[lo, lo - 1]) <= _EPS * s:
                H[lo, lo - 1] = 0
                break
            lo -= 1
        if lo == hi:
            hi -= 1
            iters = 0
            continue
        iters += 1
        total += 1
        if total > max_sweeps * n:
            raise SolverError(f"周期 QR 在 {total} 次扫描后未收敛")
        sigma, sigma_log = _shift(T, hi, exceptional=iters % _EXCEPTIONAL_EVERY == 0)
        _sweep(T, Q, lo, hi, sigma, sigma_log)
    logger.debug("周期 QR: %d 次扫描 (n=%d, K=%d)", total, n, len(T))


# ──────────── Step 3: 对角重排 ────────────


def _swap(T: List[np.ndarray], Q: List[np.ndarray], i: int):
    """
    交换位置 i 与 i+1 的特征值。
    先解循环标量系统 c_j y_{j+1} − a_j y_j = b_j, 其中
    a_j = T_j[i,i], b_j = T_j[i,i+1], c_j = T_j[i+1,i+1],
    再用首列为 (y_j, 1)/‖·‖ 的旋转 G_j 做 T_j ← G_{j+1}ᴴ T_j G_j。
    """
    K = len(T)
    a = np.array([t[i, i] for t in T])
    b = np.array([t[i, i + 1] for t in T])
    c = np.array([t[i + 1, i + 1] for t in T])
    j = np.arange(K)
    S = sp.coo_matrix(
        (np.concatenate([-a, c]), (np.concatenate([j, j]), np.concatenate([j, (j + 1) % K]))),
        shape=(K, K),
    ).tocsc()
    y = np.atleast_1d(spsolve(S, b.astype(complex)))
    if not np.all(np.isfinite(y)):
        raise SolverError(f"对角交换 ({i}, {i + 1}) 失败: 特征值重合")
    Gs = [_givens(y[k], 1.0) for k in range(K)]
    for k in range(K):
        _rot_cols(T[k], i, Gs[k])
        _rot_rows(T[k], i, Gs[(k + 1) % K])
        _rot_cols(Q[k], i, Gs[k])
        T[k][i + 1, i] = 0


def _reorder(T: List[np.ndarray], Q: List[np.ndarray], descending: bool):
    n = T[0].shape[0]
    with np.errstate(divide="ignore"):
        L = np.sum([np.log(np.abs(np.diag(t))) for t in T], axis=0)
    sign = 1.0 if descending else -1.0
    for sweep in range(n):
        swapped = False
        for i in range(n - 1):
            margin = 1e-12 * max(1.0, abs(L[i]), abs(L[i + 1])) if np.isfinite(L[i]) else 0.0
            if sign * (L[i + 1] - L[i]) > margin:
                _swap(T, Q, i)
                L[i], L[i + 1] = L[i + 1], L[i]
                swapped = True
        if not swapped:
            break


# ──────────── 入口 ────────────


def periodic_schur(factors: Sequence[np.ndarray], order: Optional[str] = "descending",
                   max_sweeps: int = PSCHUR_MAX_SWEEPS) -> PeriodicSchur:
    """
    计算因子序列的周期 Schur 形式。

    Args:
        factors: K 个 n×n 矩阵, 乘积按 A_{K−1}⋯A_0 的顺序
        order: "descending" / "ascending" 按 |γ| 排序对角; None 保持 QR 输出顺序
        max_sweeps: 每个特征值平均允许的扫描次数

    Returns:
        PeriodicSchur
    """
    if len(factors) == 0:
        raise DimensionError("因子序列为空")
    A = [np.array(f, dtype=complex) for f in factors]
    n = A[0].shape[0]
    for k, f in enumerate(A):
        if f.shape != (n, n):
            raise DimensionError(f"因子 {k} 形状 {f.shape} ≠ ({n}, {n})")
    if order not in ("descending", "ascending", None):
        raise DimensionError(f"未知排序方式: {order}")

    K = len(A)
    T = [f.copy() for f in A]
    Q = [np.eye(n, dtype=complex) for _ in range(K)]
    if K == 1:
        T[0], Q[0] = dsl.schur(A[0], output="complex")
    elif n > 1:
        _hessenberg_triangular(T, Q)
        _periodic_qr(T, Q, max_sweeps)
    if order is not None and n > 1:
        _reorder(T, Q, descending=(order == "descending"))
    return PeriodicSchur(Q=Q, T=T)
