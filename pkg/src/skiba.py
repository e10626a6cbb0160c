"""
Skiba (无差异) 点搜索。
沿同一条初始状态同伦 v0(α), 比较到两个目标 A、B 的路径价值, 对 J_A − J_B 的变号做二分。
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from src.config import CP_ALVIN, SKIBA_ALPHA_TOL, SKIBA_VALUE_TOL
from src.cpath import CanonicalPath, CpHistory, CpSettings, Target, init_T, isc
from src.exceptions import InvalidArgumentError, NoSkibaError, SaddlePointError, SolverError
from src.fem1d import FemOperators
from src.models import CanonicalModel
from src.periodic import cps_value
from src.value import css_value, path_value

logger = logging.getLogger(__name__)

Probe = Callable[[float], Tuple[float, float, Optional[CanonicalPath], Optional[CanonicalPath]]]


@dataclass
class SkibaSample:
    alpha: float
    J_A: float
    J_B: float
    valid: bool = True
    path_A: Optional[CanonicalPath] = None
    path_B: Optional[CanonicalPath] = None

    @property
    def diff(self) -> float:
        return self.J_A - self.J_B


@dataclass
class SkibaScan:
    """扫描表; probe(α) 在任意 α 处求解两条腿并返回 (J_A, J_B, path_A, path_B)。"""

    samples: List[SkibaSample] = field(default_factory=list)
    probe: Optional[Probe] = None

    def table(self) -> np.ndarray:
        return np.array([[s.alpha, s.J_A, s.J_B] for s in self.samples]).reshape(-1, 3)

    def bracket(self) -> Optional[Tuple[SkibaSample, SkibaSample]]:
        valid = [s for s in self.samples if s.valid]
        for a, b in zip(valid, valid[1:]):
            if a.diff * b.diff <= 0:
                return a, b
        return None


@dataclass
class SkibaResult:
    alpha_star: float
    J_A: float
    J_B: float
    bracket: Tuple[float, float]
    path_A: Optional[CanonicalPath] = None
    path_B: Optional[CanonicalPath] = None
    probes: int = 0


def solve_leg(model: CanonicalModel, fem: FemOperators, target: Target, v0: np.ndarray,
              settings: CpSettings, warm: Optional[CanonicalPath] = None,
              n_arc: int = 0) -> CanonicalPath:
    """
    求一条到 target 的 CP, 初始状态 v0。

    warm 为另一初始状态 w 下的已收敛路径时, 以 v(0) 从 w 到 v0 的单段同伦热启动;
    热启动失败再从目标处冷启动。
    """
    n_s = model.N * fem.n
    if warm is not None:
        try:
            path, hist = isc(model, fem, target, v0, [1.0], settings=settings,
                             path=replace(warm, alpha=0.0), v_base=warm.initial_states(n_s).copy())
            if not hist.stalled:
                return path
        except SolverError as e:
            logger.debug("热启动失败 (%s), 改为冷启动", e)
    path, hist = isc(model, fem, target, v0, CP_ALVIN, n_arc=n_arc, settings=settings)
    if hist.stalled:
        raise SolverError(f"到 {target.kind} 目标的 CP 在 α={hist.alphas[-1]:.3f} 处停滞")
    return path


def horizon_T(model: CanonicalModel, fem: FemOperators, targets: Sequence[Target],
              value_tol: float = SKIBA_VALUE_TOL) -> float:
    """
    价值比较用的截断时间: 不小于各目标的 T 初值, 且使 e^{−ρT}|J(û)| < value_tol。
    截断价值不含尾项, 两条腿只有在同一个足够长的 T 下才可比。
    """
    if not targets:
        raise InvalidArgumentError("至少需要一个目标")
    T = max(init_T(target) for target in targets)
    for target in targets:
        rho = target.params.rho
        if not model.discounted or rho <= 0:
            continue
        if target.kind == "css":
            J_hat = abs(css_value(model, fem, target.u_hat, target.params))
        else:
            J_hat = abs(cps_value(model, fem, target.orbit))
        if J_hat > value_tol:
            T = max(T, math.log(J_hat / value_tol) / rho)
    logger.info("Skiba 截断时间 T = %.2f", T)
    return float(T)


def skiba_scan(model: CanonicalModel, fem: FemOperators, history_to_A: CpHistory,
               target_B: Target, settings: CpSettings,
               target_A: Optional[Target] = None) -> SkibaScan:
    """
    对 history_to_A 中的每个 α, 从相同的 v0(α) 求到 B 的 CP 并记录两侧价值。
    任一腿失败 (鞍点性质或求解器) 时该 α 标记为无效, 扫描继续。
    target_A 给出时, 返回的 probe 可在任意 α 处重解 A 腿 (二分需要)。
    settings.T 为 None 时 B 腿沿用 A 腿的截断时间, 两侧价值按同一 T 比较。
    """
    if not history_to_A.alphas:
        raise InvalidArgumentError("history 为空, 没有可扫描的 α")
    if settings.T is None:
        settings = replace(settings, T=max(history_to_A.Ts))
    scan = SkibaScan()
    warm_B: Optional[CanonicalPath] = None
    for alpha, J_A, v0 in zip(history_to_A.alphas, history_to_A.values, history_to_A.v0s):
        try:
            path_B = solve_leg(model, fem, target_B, v0, settings, warm=warm_B)
            J_B = path_value(model, fem, path_B, target_B.params)
        except (SaddlePointError, SolverError) as e:
            logger.warning("α=%.4f 的 B 腿失败: %s", alpha, e)
            scan.samples.append(SkibaSample(alpha, J_A, float("nan"), valid=False))
            continue
        warm_B = path_B
        scan.samples.append(SkibaSample(alpha, J_A, J_B, path_A=history_to_A.path_at(alpha),
                                        path_B=path_B))
        logger.info("skiba scan α=%.4f: J_A=%.6e  J_B=%.6e  差=%.3e", alpha, J_A, J_B, J_A - J_B)

    def probe(alpha: float):
        if target_A is None:
            raise InvalidArgumentError("未提供目标 A, 无法在新 α 处求解")
        v0 = history_to_A.v0_at(alpha)
        valid = [s for s in scan.samples if s.valid]
        near = min(valid, key=lambda s: abs(s.alpha - alpha)) if valid else None
        warm_A = (near.path_A if near is not None and near.path_A is not None
                  else history_to_A.path_at(alpha))
        warm_B = near.path_B if near is not None else None
        path_A = solve_leg(model, fem, target_A, v0, settings, warm=warm_A)
        path_B = solve_leg(model, fem, target_B, v0, settings, warm=warm_B)
        J_A = path_value(model, fem, path_A, target_A.params)
        J_B = path_value(model, fem, path_B, target_B.params)
        scan.samples.append(SkibaSample(alpha, J_A, J_B, path_A=path_A, path_B=path_B))
        scan.samples.sort(key=lambda s: s.alpha)
        return J_A, J_B, path_A, path_B

    scan.probe = probe
    return scan


def skiba_bisect(scan: SkibaScan, value_tol: float = SKIBA_VALUE_TOL,
                 alpha_tol: float = SKIBA_ALPHA_TOL, max_probes: int = 60) -> SkibaResult:
    """
    在扫描表的第一个变号区间上对 α 二分, 每次探测都重解两条腿。
    |J_A − J_B| < value_tol 或区间宽度 < alpha_tol 时停止。
    """
    found = scan.bracket()
    if found is None:
        raise NoSkibaError("扫描范围内 J_A − J_B 不变号")
    lo, hi = found
    best = min((lo, hi), key=lambda s: abs(s.diff))
    probes = 0
    while abs(best.diff) >= value_tol and hi.alpha - lo.alpha >= alpha_tol:
        if scan.probe is None:
            raise InvalidArgumentError("扫描结果没有 probe, 无法二分")
        if probes >= max_probes:
            break
        mid = 0.5 * (lo.alpha + hi.alpha)
        J_A, J_B, path_A, path_B = scan.probe(mid)
        probes += 1
        sample = SkibaSample(mid, J_A, J_B, path_A=path_A, path_B=path_B)
        logger.info("skiba 二分 α=%.6f: J_A−J_B=%.3e", mid, sample.diff)
        if np.sign(sample.diff) == np.sign(lo.diff):
            lo = sample
        else:
            hi = sample
        best = sample
    return SkibaResult(alpha_star=best.alpha, J_A=best.J_A, J_B=best.J_B,
                       bracket=(lo.alpha, hi.alpha), path_A=best.path_A, path_B=best.path_B,
                       probes=probes)
