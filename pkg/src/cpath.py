"""
典则路径 (CP) 引擎。
固定网格梯形两点边值问题 M u̇ = −T G(u), t ∈ [0, 1]:
  v(0) = v0(α),   Ψ(u(1) − û) = 0 (CSS) 或 P(u(1) − û₀) = 0 (CPS)
外加可选的自由 T 闭合条件 ‖u(1) − û‖₂² = ε² 与弧长条件。
初始状态同伦 v0(α) = α·v0* + (1 − α)·v̂ 从 α = 0 的平凡路径出发。
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline

from src.collocation import trap_jacobian, trap_residual
from src.config import (
    CONT_EASY_ITERS,
    CP_EPS2_FACTOR,
    CP_EPS_INF,
    CP_MAX_HALVINGS,
    CP_DAMPING_STEPS,
    CP_MAX_NEWTON,
    CP_MIN_DALPHA,
    CP_NTI,
    CP_NTP,
    CP_SIG,
    CP_SIGMAX,
    CP_SIGMIN,
    CP_T_CAP_PERIODS,
    CP_TOL,
    CP_XI,
)
from src.exceptions import (
    ConfigurationError,
    DimensionError,
    InvalidArgumentError,
    NoConvergenceError,
    SaddlePointError,
    SolverError,
)
from src.fem1d import FemOperators
from src.linalg import sparse_solve
from src.models import CanonicalModel
from src.periodic import CpsTarget
from src.steady import CssTarget

logger = logging.getLogger(__name__)

Target = Union[CssTarget, CpsTarget]


# ──────────── 数据类定义 ────────────


@dataclass
class CpSettings:
    """isc 控制参数。"""

    nti: int = CP_NTI
    T: Optional[float] = None
    nTp: int = CP_NTP
    freeT: bool = False
    eps_inf: float = CP_EPS_INF
    eps2: Optional[float] = None
    msw: int = 1                      # 0 平凡预测, 1 割线预测
    sig: float = CP_SIG
    sigmin: float = CP_SIGMIN
    sigmax: float = CP_SIGMAX
    xi: float = CP_XI
    retsw: bool = False
    tol: float = CP_TOL
    max_newton: int = CP_MAX_NEWTON
    max_halvings: int = CP_MAX_HALVINGS
    min_dalpha: float = CP_MIN_DALPHA
    t_cap_periods: float = CP_T_CAP_PERIODS
    grading: float = 1.0              # CSS 目标的时间网格 t_j = (j/(nti−1))^grading

    def __post_init__(self):
        if not 0 < self.sigmin <= self.sig <= self.sigmax:
            raise ConfigurationError(
                f"需要 0 < sigmin ≤ sig ≤ sigmax, 得到 ({self.sigmin}, {self.sig}, {self.sigmax})"
            )
        if not 0 < self.xi <= 1:
            raise ConfigurationError(f"割线权重 xi 须在 (0, 1] 内: {self.xi}")
        if self.nti < 5:
            raise ConfigurationError(f"nti 至少为 5: {self.nti}")
        if self.msw not in (0, 1):
            raise ConfigurationError(f"msw 只能为 0 或 1: {self.msw}")
        if self.T is not None and not self.T > 0:
            raise ConfigurationError(f"T 必须为正: {self.T}")
        if self.eps2 is not None and not self.eps2 > 0:
            raise ConfigurationError(f"eps2 必须为正: {self.eps2}")
        if not self.eps_inf > 0:
            raise ConfigurationError(f"eps_inf 必须为正: {self.eps_inf}")
        if not self.grading >= 1:
            raise ConfigurationError(f"grading 不能小于 1: {self.grading}")


@dataclass
class CanonicalPath:
    """
    t ∈ [0, 1] 上的典则路径, u 形状 (m, n_u)。
    free_T 为 True 时 T 由闭合条件 ‖u(1) − û‖₂ = eps2 决定。
    """

    t_mesh: np.ndarray
    u: np.ndarray
    T: float
    alpha: float
    target_kind: str
    free_T: bool = False
    eps2: Optional[float] = None

    def __post_init__(self):
        self.t_mesh = np.asarray(self.t_mesh, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if self.u.ndim != 2 or self.u.shape[0] != self.t_mesh.size:
            raise DimensionError("路径快照数与时间网格点数不一致")
        if self.t_mesh[0] != 0 or self.t_mesh[-1] != 1 or np.any(np.diff(self.t_mesh) <= 0):
            raise InvalidArgumentError("时间网格须严格递增且 t₀=0, t_{m−1}=1")
        if not self.T > 0:
            raise InvalidArgumentError(f"截断时间必须为正: T={self.T}")

    @property
    def m(self) -> int:
        return self.t_mesh.size

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.t_mesh)

    def times(self) -> np.ndarray:
        return self.t_mesh * self.T

    def initial_states(self, n_states: int) -> np.ndarray:
        return self.u[0, :n_states]


@dataclass
class CpHistory:
    """isc 运行记录; prev/prev2 为最近两条已收敛路径 (割线与弧长重启用)。"""

    alphas: List[float] = field(default_factory=list)
    values: List[float] = field(default_factory=list)
    Ts: List[float] = field(default_factory=list)
    v0s: List[np.ndarray] = field(default_factory=list)
    paths: List[CanonicalPath] = field(default_factory=list)
    v0_star: Optional[np.ndarray] = None
    v_base: Optional[np.ndarray] = None
    prev: Optional[CanonicalPath] = None
    prev2: Optional[CanonicalPath] = None
    sigma: Optional[float] = None
    stalled: bool = False

    def v0_at(self, alpha: float) -> np.ndarray:
        return alpha * self.v0_star + (1 - alpha) * self.v_base

    def path_at(self, alpha: float) -> Optional[CanonicalPath]:
        """保留路径中 α 最接近的一条 (retsw 关闭时为 None)。"""
        if not self.paths:
            return None
        return min(self.paths, key=lambda p: abs(p.alpha - alpha))


@dataclass
class ArcRow:
    """弧长条件 ⟨s, u(0) − u0⟩ + s_α(α − alpha) = σ。"""

    s: np.ndarray
    s_alpha: float
    u0: np.ndarray
    alpha: float
    sigma: float


# ──────────── 残差堆栈 ────────────


class CpSystem:
    """
    CP 边值问题的残差与 Jacobian。

    方程顺序: m−1 个梯形残差 | N·n 个初始条件 | 投影边界条件 | 闭合 (自由 T) | 弧长
    未知量顺序: u_0, …, u_{m−1} | T (自由时) | α (弧长时)
    闭合行写成 mean((u(1) − û)²)/ε² − 1, 收敛判据对 ε 的大小是相对的。
    """

    def __init__(self, model: CanonicalModel, fem: FemOperators, target: Target,
                 t_mesh: np.ndarray, T: float, alpha: float, v0_star: np.ndarray,
                 v_base: np.ndarray, free_T: bool = False, eps2: Optional[float] = None,
                 arc: Optional[ArcRow] = None):
        self.model, self.fem, self.target = model, fem, target
        self.params = target.params
        self.t_mesh = np.asarray(t_mesh, dtype=float)
        self.h = np.diff(self.t_mesh)
        self.m = self.t_mesh.size
        self.n_u = model.n_u(fem)
        self.n_s = model.N * fem.n
        self.T0, self.alpha0 = float(T), float(alpha)
        self.v0_star = np.asarray(v0_star, dtype=float)
        self.v_base = np.asarray(v_base, dtype=float)
        self.proj = np.atleast_2d(target.projector)
        self.end = target.end_state
        self.T_free = target.kind == "cps" or free_T
        self.closure = free_T and target.kind != "cps"
        if self.closure and eps2 is None:
            raise ConfigurationError("自由 T 需要闭合半径 eps2")
        self.eps2 = eps2
        self.arc = arc
        self.n_extra = int(self.T_free) + int(arc is not None)
        self.n_core = self.m * self.n_u
        self.n_rows = ((self.m - 1) * self.n_u + self.n_s + self.proj.shape[0]
                       + int(self.closure) + int(arc is not None))
        if self.n_rows != self.n_core + self.n_extra:
            raise DimensionError(
                f"方程数 {self.n_rows} 与未知量数 {self.n_core + self.n_extra} 不一致"
            )

    def pack(self, U: np.ndarray, T: float, alpha: float) -> np.ndarray:
        extra = ([T] if self.T_free else []) + ([alpha] if self.arc is not None else [])
        return np.concatenate([np.asarray(U, dtype=float).ravel(), extra])

    def unpack(self, z: np.ndarray) -> Tuple[np.ndarray, float, float]:
        U = z[: self.n_core].reshape(self.m, self.n_u)
        k = self.n_core
        T = z[k] if self.T_free else self.T0
        alpha = z[-1] if self.arc is not None else self.alpha0
        return U, float(T), float(alpha)

    def residual(self, z: np.ndarray) -> np.ndarray:
        U, T, alpha = self.unpack(z)
        R, _ = trap_residual(self.model, self.fem, U, self.h, T, self.params)
        v0 = self.v_base + alpha * (self.v0_star - self.v_base)
        dev = U[-1] - self.end
        parts = [R.ravel(), U[0, : self.n_s] - v0, self.proj @ dev]
        if self.closure:
            parts.append([np.mean(dev ** 2) / self.eps2 ** 2 - 1.0])
        if self.arc is not None:
            a = self.arc
            parts.append([a.s @ (U[0] - a.u0) + a.s_alpha * (alpha - a.alpha) - a.sigma])
        return np.concatenate(parts)

    def jacobian(self, z: np.ndarray) -> sp.csr_matrix:
        U, T, _ = self.unpack(z)
        m, n_u, n_s = self.m, self.n_u, self.n_s
        tail = (m - 1) * n_u
        rows = [
            trap_jacobian(self.model, self.fem, U, self.h, T, self.params),
            sp.hstack([sp.eye(n_s, n_u), sp.csr_matrix((n_s, tail))]),
            sp.hstack([sp.csr_matrix((self.proj.shape[0], tail)), sp.csr_matrix(self.proj)]),
        ]
        if self.closure:
            grad = 2.0 / (n_u * self.eps2 ** 2) * (U[-1] - self.end)
            rows.append(sp.hstack([sp.csr_matrix((1, tail)), sp.csr_matrix(grad[None, :])]))
        if self.arc is not None:
            rows.append(sp.hstack([sp.csr_matrix(self.arc.s[None, :]), sp.csr_matrix((1, tail))]))
        J_u = sp.vstack(rows, format="csr")
        if self.n_extra == 0:
            return J_u
        E = np.zeros((self.n_rows, self.n_extra))
        col = 0
        if self.T_free:
            _, dT = trap_residual(self.model, self.fem, U, self.h, T, self.params)
            E[:tail, 0] = dT.ravel()
            col = 1
        if self.arc is not None:
            E[tail: tail + n_s, col] = -(self.v0_star - self.v_base)
            E[-1, col] = self.arc.s_alpha
        return sp.hstack([J_u, sp.csr_matrix(E)], format="csr")

    def newton(self, z0: np.ndarray, tol: float, max_newton: int) -> Tuple[np.ndarray, int]:
        """
        Newton 迭代; 返回 (z, 迭代次数)。
        线性步对整个 Jacobian 做稀疏 LU, 不做边界块消去。
        """
        z = np.array(z0, dtype=float)
        N0 = self.n_core
        residuals = []
        for it in range(max_newton + 1):
            F = self.residual(z)
            res = float(np.max(np.abs(F)))
            residuals.append(res)
            if not np.isfinite(res):
                break
            if res < tol:
                return z, it
            if it == max_newton:
                break
            J = self.jacobian(z)
            try:
                dz = sparse_solve(J, F)
            except SolverError as e:
                raise NoConvergenceError(f"CP Newton 线性求解失败: {e}", residuals) from e
            z = self._damped(z, dz, res)
            if self.T_free and not z[N0] > 0:
                raise NoConvergenceError(f"CP Newton 中 T 变为非正 ({z[N0]:.3e})", residuals)
        raise NoConvergenceError(
            f"CP Newton 在 {max_newton} 次迭代内未收敛, 末次残差 {residuals[-1]:.3e}", residuals
        )

    def _damped(self, z: np.ndarray, dz: np.ndarray, res: float) -> np.ndarray:
        """步长 1, 1/2, …, 1/2^k 中第一个使残差下降的步; 都不下降时取整步。"""
        for k in range(CP_DAMPING_STEPS + 1):
            trial = z - dz / 2 ** k
            if self.T_free and not trial[self.n_core] > 0:
                continue
            r = float(np.max(np.abs(self.residual(trial))))
            if np.isfinite(r) and r < res:
                return trial
        return z - dz


# ──────────── 基本操作 ────────────


def _check_target(target: Target):
    if target.defect != 0:
        raise SaddlePointError(f"目标不满足鞍点性质: 亏量 d = {target.defect}", target.defect)


def _solve(model, fem, target, guess: CanonicalPath, v0_star, v_base, alpha, free_T, eps2,
           settings: CpSettings, arc: Optional[ArcRow] = None) -> Tuple[CanonicalPath, int]:
    system = CpSystem(model, fem, target, guess.t_mesh, guess.T, alpha, v0_star, v_base,
                      free_T=free_T, eps2=eps2, arc=arc)
    z, iters = system.newton(system.pack(guess.u, guess.T, guess.alpha), settings.tol,
                             settings.max_newton)
    U, T, a = system.unpack(z)
    path = CanonicalPath(t_mesh=guess.t_mesh.copy(), u=U.copy(), T=T, alpha=a,
                         target_kind=target.kind, free_T=system.closure,
                         eps2=eps2 if system.closure else None)
    return path, iters


def _resolve(model, fem, target, path: CanonicalPath, settings: CpSettings,
             free_T: Optional[bool] = None, eps2: Optional[float] = None) -> CanonicalPath:
    """在当前 α 与 v(0) 下重新求解 (用于改变 T 的处理方式或网格)。"""
    v = path.initial_states(model.N * fem.n).copy()
    free_T = path.free_T if free_T is None else free_T
    eps2 = path.eps2 if eps2 is None else eps2
    return _solve(model, fem, target, path, v, v, path.alpha, free_T, eps2, settings)[0]


def end_deviation(path: CanonicalPath, target: Target) -> float:
    return float(np.max(np.abs(path.u[-1] - target.end_state)))


def init_T(target: Target, settings: Optional[CpSettings] = None) -> float:
    """T 初值: 用户给定值; CSS 取 1/Re μ₂; CPS 取 nTp·T_p。"""
    settings = settings or CpSettings()
    _check_target(target)
    if settings.T is not None:
        return float(settings.T)
    if target.kind == "cps":
        return float(settings.nTp * target.T_p)
    if target.T_suggest is None:
        raise InvalidArgumentError("CSS 目标没有稳定特征值, 无法给出 T 初值")
    return float(target.T_suggest)


def initial_path(model: CanonicalModel, fem: FemOperators, target: Target,
                 settings: Optional[CpSettings] = None) -> CanonicalPath:
    """
    α = 0 的起始路径。
    CSS: 常值 û, 网格按 grading 向 t = 0 加密; CPS: 周期样条沿轨道倒推, 使 u(1) = û₀。
    """
    settings = settings or CpSettings()
    T = init_T(target, settings)
    if target.kind == "css":
        t = np.linspace(0.0, 1.0, settings.nti) ** settings.grading
        U = np.tile(target.u_hat, (t.size, 1))
        return CanonicalPath(t_mesh=t, u=U, T=T, alpha=0.0, target_kind="css")

    orbit = target.orbit
    tau = orbit.times()
    spline = CubicSpline(tau, orbit.u, bc_type="periodic", axis=0)
    n_per = int(np.ceil(T / orbit.T_p))
    t = np.linspace(0.0, 1.0, max(settings.nti, n_per * orbit.m + 1))
    s = np.mod(tau[target.anchor_index] - T * (1 - t), orbit.T_p)
    U = spline(s)
    U[-1] = target.end_state
    return CanonicalPath(t_mesh=t, u=U, T=T, alpha=0.0, target_kind="cps")


def solve_cp_bvp(model: CanonicalModel, fem: FemOperators, target: Target, v0: np.ndarray,
                 path_guess: CanonicalPath, T: Optional[float] = None, freeT: bool = False,
                 settings: Optional[CpSettings] = None,
                 eps2: Optional[float] = None) -> CanonicalPath:
    """
    以 v(0) = v0 求解 CP 边值问题。

    Args:
        T: 截断时间初值 (None 时取 path_guess.T); CPS 目标下 T 总是未知量
        freeT: CSS 目标下是否加入闭合条件并释放 T (需要 eps2)

    Raises:
        SaddlePointError: 目标亏量 ≠ 0
        DimensionError: v0 长度 ≠ N·n 或方程数与未知量数不一致
        NoConvergenceError: Newton 发散, 附残差轨迹
    """
    settings = settings or CpSettings()
    _check_target(target)
    n_s = model.N * fem.n
    v0 = np.asarray(v0, dtype=float)
    if v0.shape != (n_s,):
        raise DimensionError(f"初始状态长度应为 {n_s}, 得到 {v0.size}")
    if path_guess.u.shape[1] != model.n_u(fem):
        raise DimensionError("路径初值的场向量长度与模型不一致")
    guess = path_guess if T is None else replace(path_guess, T=float(T))
    if freeT:
        eps2 = eps2 if eps2 is not None else (settings.eps2 or path_guess.eps2)
    path, iters = _solve(model, fem, target, guess, v0, v0, guess.alpha, freeT, eps2, settings)
    logger.debug("solve_cp_bvp: %d 次 Newton 迭代, T=%.5f", iters, path.T)
    return path


# ──────────── 自由 T / 周期追加 / 网格加密 ────────────


def free_T_policy(model: CanonicalModel, fem: FemOperators, path: CanonicalPath,
                  target: CssTarget, settings: CpSettings) -> CanonicalPath:
    """‖u(1) − û‖∞ > eps_inf 时加入闭合条件, eps2 缺省取 0.1·‖u(1) − û‖∞, 释放 T 后重解。"""
    if target.kind != "css":
        raise InvalidArgumentError("free_T_policy 只适用于 CSS 目标")
    dev = end_deviation(path, target)
    if path.free_T or dev <= settings.eps_inf:
        return path
    eps2 = settings.eps2 if settings.eps2 is not None else CP_EPS2_FACTOR * dev
    logger.info("终点偏差 %.3e > eps_inf=%.1e, 释放 T (eps2=%.3e)", dev, settings.eps_inf, eps2)
    try:
        return _resolve(model, fem, target, path, settings, free_T=True, eps2=eps2)
    except NoConvergenceError as e:
        e.partial = path
        raise


def tighten_eps(model: CanonicalModel, fem: FemOperators, path: CanonicalPath,
                target: CssTarget, eps_list: Sequence[float],
                settings: CpSettings) -> List[CanonicalPath]:
    """按给定序列逐级减小闭合半径 eps2 并重解, 返回各级路径。"""
    out = []
    for eps in eps_list:
        if not eps > 0:
            raise InvalidArgumentError(f"eps2 必须为正: {eps}")
        path = _resolve(model, fem, target, path, settings, free_T=True, eps2=float(eps))
        logger.info("eps2=%.2e: T=%.5f, ‖u(1)−û‖∞=%.3e", eps, path.T, end_deviation(path, target))
        out.append(path)
    return out


def _append_period(path: CanonicalPath, target: CpsTarget) -> CanonicalPath:
    orbit = target.orbit
    m_p, a = orbit.m, target.anchor_index
    k = np.arange(1, m_p + 1)
    idx = (a + k) % m_p
    offsets = np.mod(orbit.t_mesh[idx] - orbit.t_mesh[a], 1.0)
    offsets[-1] = 1.0
    T_new = path.T + orbit.T_p
    s = np.concatenate([path.times(), path.T + offsets * orbit.T_p]) / T_new
    s[-1] = 1.0
    U = np.vstack([path.u, orbit.snapshots[idx]])
    return replace(path, t_mesh=s, u=U, T=T_new)


def extend_T_cps(model: CanonicalModel, fem: FemOperators, path: CanonicalPath,
                 target: CpsTarget, settings: CpSettings) -> CanonicalPath:
    """
    只要 ‖u(1) − û₀‖∞ > eps_inf, 就在路径末尾追加一个周期的轨道快照, T += T_p, 重新求解。
    终点偏差只作为循环判据, 不作为方程。
    """
    if target.kind != "cps":
        raise InvalidArgumentError("extend_T_cps 只适用于 CPS 目标")
    cap = settings.t_cap_periods * target.T_p
    while end_deviation(path, target) > settings.eps_inf:
        if path.T + target.T_p > cap:
            raise SolverError(
                f"T 扩展超过上限 {settings.t_cap_periods:g}·T_p, 终点偏差仍为 "
                f"{end_deviation(path, target):.3e}"
            )
        path = _resolve(model, fem, target, _append_period(path, target), settings)
        logger.info("追加一个周期: T=%.4f (%.2f T_p), ‖u(1)−û₀‖∞=%.3e",
                    path.T, path.T / target.T_p, end_deviation(path, target))
    return path


def refine_path(model: CanonicalModel, fem: FemOperators, path: CanonicalPath, target: Target,
                settings: CpSettings) -> CanonicalPath:
    """网格均匀加倍 (插入中点, 线性插值) 后重解。"""
    mid = 0.5 * (path.t_mesh[:-1] + path.t_mesh[1:])
    t = np.sort(np.concatenate([path.t_mesh, mid]))
    U = np.empty((t.size, path.u.shape[1]))
    U[0::2] = path.u
    U[1::2] = 0.5 * (path.u[:-1] + path.u[1:])
    return _resolve(model, fem, target, replace(path, t_mesh=t, u=U), settings)


def _post_process(model, fem, target, path: CanonicalPath, settings: CpSettings) -> CanonicalPath:
    if target.kind == "css":
        return free_T_policy(model, fem, path, target, settings)
    return extend_T_cps(model, fem, path, target, settings)


# ──────────── 同伦延拓 ────────────


def _predict(history: CpHistory, path: CanonicalPath, alpha: float, msw: int) -> CanonicalPath:
    p1, p0 = history.prev, history.prev2
    if (msw == 1 and p0 is not None and p1 is not None
            and p1.u.shape == p0.u.shape and p1.alpha != p0.alpha):
        r = (alpha - p1.alpha) / (p1.alpha - p0.alpha)
        T = p1.T + r * (p1.T - p0.T)
        return replace(p1, u=p1.u + r * (p1.u - p0.u), T=T if T > 0 else p1.T, alpha=alpha)
    return replace(path, alpha=alpha)


def _push(history: CpHistory, model, fem, target, path: CanonicalPath, settings: CpSettings):
    from src.value import path_value

    history.prev2, history.prev = history.prev, path
    history.alphas.append(float(path.alpha))
    history.values.append(path_value(model, fem, path, target.params))
    history.Ts.append(float(path.T))
    history.v0s.append(path.initial_states(model.N * fem.n).copy())
    if settings.retsw:
        history.paths.append(path)


def arc_step(model: CanonicalModel, fem: FemOperators, target: Target, history: CpHistory,
             sigma: float, settings: CpSettings,
             direction: Optional[Tuple[np.ndarray, float]] = None) -> Tuple[CanonicalPath, int]:
    """
    一步伪弧长延拓, α 成为未知量。

    内积 ⟨(x, a), (y, b)⟩_* = ξ·n_u⁻¹⟨x, y⟩ + (1 − ξ)ab 作用于 (u(0), α);
    d 为最近两步 (u(0), α) 割线的 *-单位向量, 弧长条件 ⟨d, (u(0) − u⁽ʲ⁻¹⁾(0), α − α⁽ʲ⁻¹⁾)⟩_* = σ。
    direction = (s, s_α) 时直接使用给定系数 (s = 0, s_α = 1 即步长 σ 的自然延拓)。
    """
    p1, p0 = history.prev, history.prev2
    if p1 is None or p0 is None:
        raise InvalidArgumentError("弧长步需要两个已收敛的 (路径, α)")
    n_u = model.n_u(fem)
    if direction is None:
        du0 = p1.u[0] - p0.u[0]
        da = p1.alpha - p0.alpha
        dnorm = float(np.sqrt(settings.xi * np.mean(du0 ** 2) + (1 - settings.xi) * da ** 2))
        if dnorm == 0:
            raise InvalidArgumentError("最近两步路径相同, 无法构造割线")
        s = settings.xi * du0 / (n_u * dnorm)
        s_alpha = (1 - settings.xi) * da / dnorm
        if p1.u.shape == p0.u.shape:
            T = p1.T + sigma * (p1.T - p0.T) / dnorm
            guess = replace(p1, u=p1.u + sigma * (p1.u - p0.u) / dnorm,
                            T=T if T > 0 else p1.T, alpha=p1.alpha + sigma * da / dnorm)
        else:
            guess = replace(p1, alpha=p1.alpha + sigma * da / dnorm)
    else:
        s = np.asarray(direction[0], dtype=float) * np.ones(n_u)
        s_alpha = float(direction[1])
        step = sigma / s_alpha if s_alpha != 0 else 0.0
        guess = replace(p1, alpha=p1.alpha + step)

    arc = ArcRow(s=s, s_alpha=s_alpha, u0=p1.u[0].copy(), alpha=p1.alpha, sigma=sigma)
    return _solve(model, fem, target, guess, history.v0_star, history.v_base, guess.alpha,
                  p1.free_T, p1.eps2, settings, arc=arc)


def isc(model: CanonicalModel, fem: FemOperators, target: Target, v0_star: np.ndarray,
        alvin: Sequence[float], n_arc: int = 0, settings: Optional[CpSettings] = None,
        history: Optional[CpHistory] = None, path: Optional[CanonicalPath] = None,
        v_base: Optional[np.ndarray] = None) -> Tuple[CanonicalPath, CpHistory]:
    """
    初始状态同伦延拓。

    Step 1: α = 0 起始路径 (path 缺省时由 initial_path 构造并求解)
    Step 2: 依次达到 alvin 中各 α; 失败时 α 步长减半, 超过次数或低于下限即停滞
    Step 3: 每步成功后按目标类型做自由 T 处理 (CSS) 或周期追加 (CPS), 记入 history
    Step 4: 最多 n_arc 次弧长步, 到达 α = 1 时以自然步精确落在 α = 1

    Returns:
        (最后一条收敛路径, history); 未到达 α = 1 时 history.stalled 为 True
    """
    settings = settings or CpSettings()
    _check_target(target)
    n_s = model.N * fem.n
    v0_star = np.asarray(v0_star, dtype=float)
    if v0_star.shape != (n_s,):
        raise DimensionError(f"初始状态长度应为 {n_s}, 得到 {v0_star.size}")
    alvin = [float(a) for a in alvin]
    if any(not 0 < a <= 1 for a in alvin) or np.any(np.diff(alvin) <= 0):
        raise InvalidArgumentError(f"alvin 须严格递增且位于 (0, 1]: {alvin}")

    if history is None:
        history = CpHistory()
    if history.v0_star is None:
        history.v0_star = v0_star
        history.v_base = (np.asarray(v_base, dtype=float) if v_base is not None
                          else target.states(n_s).copy())
    history.stalled = False
    history.sigma = history.sigma or settings.sig

    if path is None:
        path = initial_path(model, fem, target, settings)
        path = _solve(model, fem, target, path, history.v0_star, history.v_base, 0.0,
                      settings.freeT, settings.eps2, settings)[0]
    if not history.alphas:
        _push(history, model, fem, target, path, settings)

    alpha = path.alpha
    for a_target in alvin:
        while alpha < a_target - 1e-14 and not history.stalled:
            d = a_target - alpha
            halvings = 0
            while True:
                a = alpha + d
                try:
                    guess = _predict(history, path, a, settings.msw)
                    new, iters = _solve(model, fem, target, guess, history.v0_star,
                                        history.v_base, a, path.free_T, path.eps2, settings)
                    new = _post_process(model, fem, target, new, settings)
                    break
                except SolverError as e:
                    halvings += 1
                    d *= 0.5
                    logger.info("α=%.4f 求解失败 (%s), 步长减半为 %.4g", a, e, d)
                    if halvings > settings.max_halvings or d < settings.min_dalpha:
                        logger.warning("自然延拓在 α=%.4f 处停滞", alpha)
                        history.stalled = True
                        break
            if history.stalled:
                break
            path, alpha = new, a
            _push(history, model, fem, target, path, settings)
            logger.info("[%s] α=%.4f  T=%.4f  J=%.6e  ‖u(1)−û‖∞=%.2e  (%d 次迭代)",
                        model.name, alpha, path.T, history.values[-1],
                        end_deviation(path, target), iters)
        if history.stalled:
            break

    if n_arc > 0 and alpha < 1:
        path = _arclength(model, fem, target, history, path, n_arc, settings)
    return path, history


def _arclength(model, fem, target, history: CpHistory, path: CanonicalPath, n_arc: int,
               settings: CpSettings) -> CanonicalPath:
    sigma = history.sigma
    reached = False
    for _ in range(n_arc):
        try:
            new, iters = arc_step(model, fem, target, history, sigma, settings)
            new = _post_process(model, fem, target, new, settings)
        except SolverError as e:
            sigma *= 0.5
            logger.info("弧长步失败 (%s), σ 减半为 %.3g", e, sigma)
            if sigma < settings.sigmin:
                logger.warning("弧长延拓停滞: σ < sigmin")
                break
            continue
        if new.alpha >= 1:
            try:
                final, _ = _solve(model, fem, target, replace(new, alpha=1.0), history.v0_star,
                                  history.v_base, 1.0, new.free_T, new.eps2, settings)
                new = _post_process(model, fem, target, final, settings)
            except SolverError as e:
                logger.warning("落点 α=1 求解失败 (%s)", e)
                break
            reached = True
        path = new
        _push(history, model, fem, target, path, settings)
        logger.info("[%s] 弧长步: α=%.4f  T=%.4f  J=%.6e  σ=%.3g",
                    model.name, path.alpha, path.T, history.values[-1], sigma)
        if reached:
            break
        if path.alpha < 0:
            logger.warning("弧长延拓使 α 减小到 0 以下, 停止")
            break
        if iters <= CONT_EASY_ITERS:
            sigma = min(2 * sigma, settings.sigmax)
    history.sigma = sigma
    history.stalled = not reached
    return path
