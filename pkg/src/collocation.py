"""
梯形配点离散。
周期轨道 (periodic) 与典则路径 (cpath) 共用同一套残差/Jacobian,
Floquet 转移因子也由同一格式线性化得到, 三者互相一致。

    𝒢_j = M(u_{j+1} − u_j)/h_j + (T/2)(G(u_j) + G(u_{j+1}))
"""
from __future__ import annotations

from typing import List, Tuple

import numpy as np
import scipy.sparse as sp

from src.fem1d import FemOperators
from src.models import CanonicalModel, ModelParams, jacobian_G, mass_matrix, residual_G


def evaluate_G(model: CanonicalModel, fem: FemOperators, U: np.ndarray,
               params: ModelParams) -> np.ndarray:
    """逐时间点计算 G(u_j), 返回形状 (m, n_u)。"""
    return np.array([residual_G(model, fem, u, params) for u in U])


def trap_residual(model: CanonicalModel, fem: FemOperators, U: np.ndarray,
                  h: np.ndarray, T: float, params: ModelParams,
                  periodic: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    梯形残差。

    Args:
        U: 非周期时为 (m, n_u), 给出 m−1 个残差; 周期时为 m 个互异点 (u_m ≡ u_0)
        h: 步长 (非周期 m−1 个, 周期 m 个)

    Returns:
        (R, dR/dT), 形状均为 (#残差, n_u)
    """
    M = mass_matrix(model, fem)
    G = evaluate_G(model, fem, U, params)
    if periodic:
        U0, U1, G0, G1 = U, np.roll(U, -1, axis=0), G, np.roll(G, -1, axis=0)
    else:
        U0, U1, G0, G1 = U[:-1], U[1:], G[:-1], G[1:]
    dT = 0.5 * (G0 + G1)
    R = (M @ (U1 - U0).T).T / h[:, None] + T * dT
    return R, dT


def trap_jacobian(model: CanonicalModel, fem: FemOperators, U: np.ndarray,
                  h: np.ndarray, T: float, params: ModelParams,
                  periodic: bool = False) -> sp.csr_matrix:
    """残差对全部 u_j 的稀疏 Jacobian (块双对角; 周期时带循环角块)。"""
    M = mass_matrix(model, fem)
    m, n_u = U.shape
    J = [jacobian_G(model, fem, u, params) for u in U]
    rows = m if periodic else m - 1
    left = [-M / h[j] + 0.5 * T * J[j] for j in range(rows)]
    right = [M / h[j] + 0.5 * T * J[(j + 1) % m] for j in range(rows)]
    L = sp.block_diag(left, format="csr")
    R = sp.block_diag(right, format="csr")
    if periodic:
        # 右块 j 位于列块 j+1 (mod m)
        R = sp.hstack([R[:, (m - 1) * n_u:], R[:, : (m - 1) * n_u]], format="csr")
        return (L + R).tocsr()
    zeros = sp.csr_matrix((rows * n_u, n_u))
    return (sp.hstack([L, zeros]) + sp.hstack([zeros, R])).tocsr()


def transition_factors(model: CanonicalModel, fem: FemOperators, U: np.ndarray,
                       h: np.ndarray, T: float, params: ModelParams) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    每步线性化的 (左, 右) 稠密矩阵对:
      (M + (h_j T/2) J_{j+1}) δu_{j+1} = (M − (h_j T/2) J_j) δu_j
    U 为 m 个互异点 (周期, u_m ≡ u_0)。
    """
    M = mass_matrix(model, fem).toarray()
    m = U.shape[0]
    J = [jacobian_G(model, fem, u, params).toarray() for u in U]
    return [
        (M + 0.5 * h[j] * T * J[(j + 1) % m], M - 0.5 * h[j] * T * J[j])
        for j in range(m)
    ]
