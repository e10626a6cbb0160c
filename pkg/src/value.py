"""
价值与终点偏差诊断。
截断路径的价值按原样报告, 不加尾项 e^{−ρT}J(û)。
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid

from src.cpath import CanonicalPath, Target
from src.exceptions import AdmissibilityError, InvalidArgumentError
from src.fem1d import FemOperators
from src.models import CanonicalModel, ModelParams, current_value
from src.periodic import cps_value

logger = logging.getLogger(__name__)


@dataclass
class PathDiagnostics:
    """路径价值、终点偏差与逐时刻的 J_ca 序列 (绘图用)。"""

    J: float
    dev_inf: float
    dev_2: float
    t: np.ndarray              # 未缩放时间 t·T
    dev_t: np.ndarray          # ‖u(t) − û‖∞
    jca: np.ndarray
    discounted: np.ndarray     # e^{−ρt} J_ca(t)
    J0: Optional[float] = None
    J1: Optional[float] = None


def css_value(model: CanonicalModel, fem: FemOperators, u_hat: np.ndarray,
              params: ModelParams) -> float:
    """J(û) = J_ca(û)/ρ。"""
    if not model.discounted or params.rho <= 0:
        raise InvalidArgumentError(f"CSS 价值需要正贴现率, 得到 ρ={params.rho}")
    return current_value(model, fem, u_hat, params) / params.rho


def _jca_samples(model, fem, path: CanonicalPath, params: ModelParams) -> np.ndarray:
    out = np.empty(path.m)
    for j, u in enumerate(path.u):
        try:
            out[j] = current_value(model, fem, u, params)
        except AdmissibilityError as e:
            raise AdmissibilityError(f"网格点 {j} (t={path.t_mesh[j]:.4f}): {e}") from e
        if not np.isfinite(out[j]):
            raise AdmissibilityError(f"网格点 {j} (t={path.t_mesh[j]:.4f}) 处 J_ca 非有限")
    return out


def _rho(model: CanonicalModel, params: ModelParams) -> float:
    # 无贴现模型 (toy) 的 ρ 是动力学参数
    return params.rho if model.discounted else 0.0


def path_value(model: CanonicalModel, fem: FemOperators, path: CanonicalPath,
               params: ModelParams) -> float:
    """J = ∫₀¹ T e^{−ρTt} J_ca(u(t)) dt, 网格上的梯形求积。"""
    jca = _jca_samples(model, fem, path, params)
    rho = _rho(model, params)
    return float(path.T * trapezoid(np.exp(-rho * path.T * path.t_mesh) * jca, path.t_mesh))


def deviation(path: CanonicalPath, target: Target) -> Tuple[float, float]:
    """终点偏差 (sup 范数, 加权 L² 范数 (n_u⁻¹Σdᵢ²)^{1/2})。"""
    d = path.u[-1] - target.end_state
    return float(np.max(np.abs(d))), float(np.sqrt(np.mean(d ** 2)))


def diagnostics(model: CanonicalModel, fem: FemOperators, path: CanonicalPath, target: Target,
                start_u: Optional[np.ndarray] = None) -> PathDiagnostics:
    """
    汇总诊断量。

    J0 为起点 CSS start_u 的价值 (给出时), J1 为目标的价值
    (CPS 目标取锚点相位处的 cps_value)。
    """
    params = target.params
    jca = _jca_samples(model, fem, path, params)
    rho = _rho(model, params)
    t = path.times()
    disc = np.exp(-rho * t) * jca
    J = float(path.T * trapezoid(np.exp(-rho * path.T * path.t_mesh) * jca, path.t_mesh))
    dev_inf, dev_2 = deviation(path, target)
    dev_t = np.max(np.abs(path.u - target.end_state[None, :]), axis=1)

    J0 = J1 = None
    if model.discounted:
        if start_u is not None:
            J0 = css_value(model, fem, start_u, params)
        if target.kind == "css":
            J1 = css_value(model, fem, target.u_hat, params)
        else:
            phase = float(target.orbit.times()[target.anchor_index])
            J1 = cps_value(model, fem, target.orbit, phase)
    logger.debug("路径诊断: J=%.6e, dev_inf=%.2e, dev_2=%.2e", J, dev_inf, dev_2)
    return PathDiagnostics(J=J, dev_inf=dev_inf, dev_2=dev_2, t=t, dev_t=dev_t, jca=jca,
                           discounted=disc, J0=J0, J1=J1)
