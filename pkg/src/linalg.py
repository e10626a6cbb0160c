"""
加边 (bordered) 稀疏线性系统求解。

    [ A  B ] [x]   [f]
    [ C  D ] [y] = [g]

A 为稀疏方阵 (BVP 块双对角部分), B/C/D 为低秩边界列、行与角块。
先对 A 做稀疏 LU 并以 Schur 补消去边界; A 奇异、Schur 补病态或残差过大时退回整体稀疏 LU。
"""
from __future__ import annotations

import logging
import warnings
from typing import Optional

import numpy as np
import scipy.linalg as dsl
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from src.exceptions import SolverError

logger = logging.getLogger(__name__)

_RESIDUAL_RTOL = 1e-8
_SCHUR_RCOND = 1e-12         # Schur 补倒数条件数下限, 低于此值改用整体 LU


def sparse_solve(matrix, rhs: np.ndarray) -> np.ndarray:
    """整体稀疏 LU 求解; 奇异时抛出 SolverError。"""
    try:
        lu = splu(sp.csc_matrix(matrix))
    except RuntimeError as e:
        raise SolverError(f"线性系统奇异: {e}") from e
    x = lu.solve(np.asarray(rhs, dtype=float))
    if not np.all(np.isfinite(x)):
        raise SolverError("线性求解结果含非有限值")
    return x


def assemble_bordered(A, B: Optional[np.ndarray], C, D: Optional[np.ndarray]) -> sp.csc_matrix:
    if B is None or B.shape[1] == 0:
        return sp.csc_matrix(A)
    return sp.bmat([[sp.csr_matrix(A), sp.csr_matrix(B)],
                    [sp.csr_matrix(C), sp.csr_matrix(D)]], format="csc")


def bordered_solve(A, B: Optional[np.ndarray], C, D: Optional[np.ndarray],
                   f: np.ndarray, g: Optional[np.ndarray] = None,
                   eliminate: bool = True):
    """
    求解加边系统, 返回 (x, y)。

    Step 1: splu(A), 解 A X = B 与 A x₀ = f
    Step 2: Schur 补 S = D − C X, 解 S y = g − C x₀
    Step 3: x = x₀ − X y, 并检查整体残差
    """
    k = 0 if B is None else B.shape[1]
    f = np.asarray(f, dtype=float)
    if k == 0:
        return sparse_solve(A, f), np.zeros(0)
    g = np.asarray(g, dtype=float)
    C = sp.csr_matrix(C)
    D = np.atleast_2d(np.asarray(D, dtype=float))

    if eliminate:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", dsl.LinAlgWarning)
                lu = splu(sp.csc_matrix(A))
                X = lu.solve(np.asarray(B, dtype=float))
                x0 = lu.solve(f)
                S = D - C @ X
                rcond = 1.0 / np.linalg.cond(S)
                if not rcond > _SCHUR_RCOND:
                    raise dsl.LinAlgError(f"Schur 补病态 (rcond={rcond:.1e})")
                y = dsl.solve(S, g - C @ x0)
            x = x0 - X @ y
            res = np.concatenate([A @ x + B @ y - f, C @ x + D @ y - g])
            scale = max(1.0, float(np.max(np.abs(np.concatenate([f, g])))))
            if np.all(np.isfinite(res)) and np.max(np.abs(res)) <= _RESIDUAL_RTOL * scale:
                return x, y
            logger.debug("块消去残差 %.3e 过大, 改用整体 LU", np.max(np.abs(res)))
        except (RuntimeError, dsl.LinAlgError, dsl.LinAlgWarning, ValueError) as e:
            logger.debug("块消去失败 (%s), 改用整体 LU", e)

    full = assemble_bordered(A, B, C, D)
    z = sparse_solve(full, np.concatenate([f, g]))
    n = full.shape[0] - k
    return z[:n], z[n:]
