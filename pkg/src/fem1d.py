"""
一维有限元模块。
在 Ω = (−lx, lx) 上组装 P1 单元的质量矩阵 M 与 Neumann 刚度矩阵 K (M⁻¹K ≈ −Δ)。
ODE 模型使用退化情形 n = 1, M = I, K = 0。
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from src.exceptions import InvalidArgumentError


@dataclass(frozen=True)
class Mesh1D:
    """一维节点网格。"""

    nodes: np.ndarray
    element_lengths: np.ndarray

    @property
    def n(self) -> int:
        return int(self.nodes.size)

    @property
    def lx(self) -> float:
        return 0.5 * float(self.nodes[-1] - self.nodes[0])


@dataclass(frozen=True)
class FemOperators:
    """质量/刚度矩阵 (稀疏 CSR)。mesh 为 None 表示 ODE 情形。"""

    M: sp.csr_matrix
    K: sp.csr_matrix
    mesh: Optional[Mesh1D] = None

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def is_ode(self) -> bool:
        return self.mesh is None

    @property
    def volume(self) -> float:
        """|Ω| = 𝟙ᵀM𝟙 (ODE 情形为 1)。"""
        ones = np.ones(self.n)
        return float(ones @ (self.M @ ones))

    @classmethod
    def ode(cls) -> "FemOperators":
        return cls(M=sp.identity(1, format="csr"), K=sp.csr_matrix((1, 1)))


def build_mesh(lx: float, nx: int) -> Mesh1D:
    """
    构造 nx 个等长单元的网格。

    Args:
        lx: 半区间长度, Ω = (−lx, lx)
        nx: 单元数

    Returns:
        Mesh1D: nx+1 个等距节点
    """
    if not np.isfinite(lx) or lx <= 0:
        raise InvalidArgumentError(f"区间半长必须为正: lx={lx}")
    if int(nx) != nx or nx < 1:
        raise InvalidArgumentError(f"单元数必须 ≥ 1: nx={nx}")
    nodes = np.linspace(-lx, lx, int(nx) + 1)
    return Mesh1D(nodes=nodes, element_lengths=np.diff(nodes))


def assemble_operators(mesh: Mesh1D) -> FemOperators:
    """
    组装 P1 单元矩阵 (一致质量, 非集中)。

    单元 [x_i, x_{i+1}], 长度 h:
      K_e = (1/h) [[1, −1], [−1, 1]]
      M_e = (h/6) [[2, 1], [1, 2]]
    """
    h = np.asarray(mesh.element_lengths, dtype=float)
    if h.size == 0 or np.any(h <= 0):
        raise InvalidArgumentError("网格单元长度必须为正")
    n = h.size + 1
    i = np.arange(h.size)
    rows = np.concatenate([i, i, i + 1, i + 1])
    cols = np.concatenate([i, i + 1, i, i + 1])
    k_vals = np.concatenate([1 / h, -1 / h, -1 / h, 1 / h])
    m_vals = np.concatenate([2 * h, h, h, 2 * h]) / 6.0
    K = sp.coo_matrix((k_vals, (rows, cols)), shape=(n, n)).tocsr()
    M = sp.coo_matrix((m_vals, (rows, cols)), shape=(n, n)).tocsr()
    return FemOperators(M=M, K=K, mesh=mesh)


def cosine_modes(mesh: Mesh1D, n_modes: Optional[int] = None) -> np.ndarray:
    """Neumann 余弦模态 cos(lπ(x+lx)/(2lx)) 的节点值, 形状 (n_modes, n)。"""
    n_modes = mesh.n if n_modes is None else n_modes
    s = (mesh.nodes - mesh.nodes[0]) / (mesh.nodes[-1] - mesh.nodes[0])
    return np.cos(np.pi * np.outer(np.arange(n_modes), s))
