"""
典则周期解 (CPS) 模块。
从 Hopf 点构造初值, 以周期梯形配点 + 积分相位条件求解 M u̇ = −T_p G(u),
参数延拓, 周期 Schur 计算 Floquet 乘子, 以及锚点 û₀ 处的中心-不稳定投影 P。
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg as dsl
from scipy.integrate import trapezoid

from src.collocation import trap_jacobian, trap_residual, transition_factors
from src.config import (
    CONT_EASY_ITERS,
    CONT_EASY_STREAK,
    CPS_MAX_NEWTON,
    CPS_MESH,
    CPS_MESH_MIN,
    CPS_TOL,
    DEGENERATE_AMP,
    FD_STEP,
    TRIVIAL_MULT_TOL,
)
from src.exceptions import (
    DegenerateOrbitError,
    InvalidArgumentError,
    NoConvergenceError,
    SaddlePointError,
    SingularFactorError,
    SolverError,
    UnsupportedBifurcationError,
)
from src.fem1d import FemOperators
from src.linalg import bordered_solve
from src.models import CanonicalModel, ModelParams, current_value
from src.pschur import PeriodicSchur, periodic_schur
from src.steady import BifurcationEvent, ContinuationSettings, generalized_spectrum

logger = logging.getLogger(__name__)

_SINGULAR_RTOL = 1e-13


# ──────────── 数据类定义 ────────────


@dataclass
class CpsOrbit:
    """
    周期轨道, 时间已缩放到 [0, 1]。
    u 形状 (m+1, n_u), 末行与首行相同。
    """

    t_mesh: np.ndarray
    u: np.ndarray
    T_p: float
    params: ModelParams
    model_name: str = ""
    degenerate: bool = False

    def __post_init__(self):
        self.t_mesh = np.asarray(self.t_mesh, dtype=float)
        self.u = np.array(self.u, dtype=float)
        if self.u.ndim != 2 or self.u.shape[0] != self.t_mesh.size:
            raise InvalidArgumentError("轨道快照数与时间网格点数不一致")
        if self.t_mesh[0] != 0 or self.t_mesh[-1] != 1 or np.any(np.diff(self.t_mesh) <= 0):
            raise InvalidArgumentError("时间网格须严格递增且 t₀=0, t_m=1")
        self.u[-1] = self.u[0]

    @property
    def m(self) -> int:
        """互异网格点数。"""
        return self.t_mesh.size - 1

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.t_mesh)

    @property
    def snapshots(self) -> np.ndarray:
        return self.u[:-1]

    @property
    def amplitude(self) -> float:
        return float(np.max(np.ptp(self.u, axis=0)))

    def times(self) -> np.ndarray:
        """未缩放时间 t·T_p。"""
        return self.t_mesh * self.T_p


@dataclass
class CpsBranch:
    """CPS 延拓记录。"""

    param_name: str
    orbits: List[CpsOrbit] = field(default_factory=list)
    folds: List[float] = field(default_factory=list)
    failed: bool = False
    theta: float = 1.0

    def param_values(self) -> np.ndarray:
        return np.array([o.params[self.param_name] for o in self.orbits])


@dataclass
class FloquetResult:
    multipliers: np.ndarray
    log_abs: np.ndarray
    schur: PeriodicSchur
    factors: List[np.ndarray]
    anchor_index: int
    trivial_index: int

    @property
    def trivial_error(self) -> float:
        return float(abs(self.multipliers[self.trivial_index] - 1))

    def stable_mask(self) -> np.ndarray:
        """|γ| < 1 且不是平凡乘子。"""
        mask = self.log_abs < 0
        mask[self.trivial_index] = False
        return mask


@dataclass
class CpsTarget:
    """带投影 P 的 CPS 目标, 锚点 û₀ = orbit.u[anchor_index]。"""

    orbit: CpsOrbit
    anchor_index: int
    multipliers: np.ndarray
    log_abs: np.ndarray
    P: np.ndarray
    defect: int
    trivial_index: int
    kind: str = "cps"

    @property
    def params(self) -> ModelParams:
        return self.orbit.params

    @property
    def T_p(self) -> float:
        return self.orbit.T_p

    @property
    def end_state(self) -> np.ndarray:
        return self.orbit.u[self.anchor_index]

    @property
    def projector(self) -> np.ndarray:
        return self.P

    def states(self, n_states: int) -> np.ndarray:
        return self.end_state[:n_states]


# ──────────── 辅助函数 ────────────


def _phase_weights(h: np.ndarray) -> np.ndarray:
    """周期网格上的梯形积分权重。"""
    return 0.5 * (h + np.roll(h, 1))


def _periodic_derivative(U: np.ndarray, h: np.ndarray) -> np.ndarray:
    """周期中心差分 u̇_j ≈ (u_{j+1} − u_{j−1})/(h_j + h_{j−1})。"""
    return (np.roll(U, -1, axis=0) - np.roll(U, 1, axis=0)) / (h + np.roll(h, 1))[:, None]


def _phase_row(reference: CpsOrbit) -> np.ndarray:
    h = reference.h
    dU = _periodic_derivative(reference.snapshots, h)
    return (_phase_weights(h)[:, None] * dU).ravel()


def _orbit_from(U: np.ndarray, like: CpsOrbit, T_p: float, params: ModelParams) -> CpsOrbit:
    return CpsOrbit(t_mesh=like.t_mesh.copy(), u=np.vstack([U, U[:1]]), T_p=float(T_p),
                    params=params, model_name=like.model_name)


# ──────────── Hopf 初值 ────────────


def cps_from_hopf(model: CanonicalModel, fem: FemOperators, hopf_event: BifurcationEvent,
                  amplitude: float, m_p: int = CPS_MESH) -> CpsOrbit:
    """
    Hopf 点处的 CPS 初值 u(t) = û + a·Re(e^{2πit}φ), T_p = 2π/ω_H。

    φ 取 Im μ < 0 的特征向量并按 sup 范数归一; amplitude = 0 时返回常值轨道并标记退化。
    """
    if hopf_event.kind != "hopf":
        raise UnsupportedBifurcationError(f"{hopf_event.kind} 事件不能作为 CPS 起点")
    mu, phi = complex(hopf_event.mu), hopf_event.phi
    if phi is None:
        lam, vecs = generalized_spectrum(model, fem, hopf_event.u, hopf_event.params)
        want = np.conj(mu) if mu.imag > 0 else mu
        j = int(np.argmin(np.abs(lam - want)))
        mu, phi = complex(lam[j]), vecs[:, j]
    if mu.imag > 0:
        mu, phi = np.conj(mu), np.conj(phi)
    omega = -mu.imag
    if omega <= 0:
        raise UnsupportedBifurcationError("Hopf 事件的特征值没有虚部")
    phi = np.asarray(phi, dtype=complex)
    phi = phi / phi[np.argmax(np.abs(phi))]

    t = np.linspace(0.0, 1.0, int(m_p) + 1)
    U = hopf_event.u[None, :] + amplitude * np.real(np.exp(2j * np.pi * t)[:, None] * phi[None, :])
    orbit = CpsOrbit(t_mesh=t, u=U, T_p=2 * np.pi / omega, params=hopf_event.params,
                     model_name=model.name, degenerate=(amplitude == 0))
    logger.info("Hopf 初值: T_p=%.5f, 振幅=%.3e", orbit.T_p, amplitude)
    return orbit


# ──────────── Newton ────────────


def cps_newton(model: CanonicalModel, fem: FemOperators, guess: CpsOrbit,
               params: Optional[ModelParams] = None, tol: float = CPS_TOL,
               max_newton: int = CPS_MAX_NEWTON,
               reference: Optional[CpsOrbit] = None) -> CpsOrbit:
    """
    周期 BVP 的 Newton 求解, 未知量 (u_0, …, u_{m−1}, T_p)。

    Step 1: 周期梯形残差 (u_m ≡ u_0)
    Step 2: 积分相位条件 ∫⟨u̇_ref, u − u_ref⟩ = 0 (reference 缺省为 guess)
    Step 3: 整体稀疏 LU (配点块本身含时间平移零空间, 不做块消去)
    """
    params = params or guess.params
    if guess.m < CPS_MESH_MIN:
        raise InvalidArgumentError(f"周期轨道网格至少 {CPS_MESH_MIN} 点, 得到 {guess.m}")
    if guess.degenerate or guess.amplitude < DEGENERATE_AMP:
        raise DegenerateOrbitError(f"初值振幅 {guess.amplitude:.2e} 过小, 轨道退化为 CSS")
    ref = reference if reference is not None and reference.m == guess.m else guess
    row = _phase_row(ref)
    U_ref = ref.snapshots
    h = guess.h
    U = guess.snapshots.copy()
    T = guess.T_p
    residuals = []
    for it in range(max_newton + 1):
        R, dT = trap_residual(model, fem, U, h, T, params, periodic=True)
        ph = float(row @ (U - U_ref).ravel())
        res = max(float(np.max(np.abs(R))), abs(ph))
        residuals.append(res)
        if not np.isfinite(res):
            break
        if res < tol:
            break
        if it == max_newton:
            break
        A = trap_jacobian(model, fem, U, h, T, params, periodic=True)
        try:
            dx, dy = bordered_solve(A, dT.reshape(-1, 1), row[None, :], np.zeros((1, 1)),
                                    R.ravel(), np.array([ph]), eliminate=False)
        except SolverError as e:
            raise NoConvergenceError(f"CPS Newton 线性求解失败: {e}", residuals) from e
        U = U - dx.reshape(U.shape)
        T = T - dy[0]
    if not residuals[-1] < tol:
        raise NoConvergenceError(
            f"CPS Newton 在 {max_newton} 次迭代内未收敛, 末次残差 {residuals[-1]:.3e}", residuals
        )
    if T <= 0:
        raise NoConvergenceError(f"CPS Newton 收敛到非正周期 T_p={T:.3e}", residuals)
    orbit = _orbit_from(U, guess, T, params)
    if orbit.amplitude < DEGENERATE_AMP:
        raise DegenerateOrbitError(f"轨道振幅 {orbit.amplitude:.2e} 过小, 已退化为 CSS")
    logger.debug("cps_newton 收敛: %d 次迭代, T_p=%.8f", len(residuals) - 1, T)
    return orbit


# ──────────── 弧长延拓 ────────────


class _CpsArc:
    """x = (u_0..u_{m−1}, T_p, p) 上的加权内积与超平面校正。"""

    def __init__(self, model, fem, like: CpsOrbit, name: str, settings: ContinuationSettings,
                 theta: float = 1.0):
        self.model, self.fem, self.like, self.name, self.settings = model, fem, like, name, settings
        self.n_U = like.snapshots.size
        self.theta = theta
        self.w = np.concatenate([np.full(self.n_U, theta / self.n_U), [1.0 / like.T_p ** 2, 1.0]])

    def pack(self, orbit: CpsOrbit) -> np.ndarray:
        return np.concatenate([orbit.snapshots.ravel(), [orbit.T_p, orbit.params[self.name]]])

    def unpack(self, x: np.ndarray, base: ModelParams) -> CpsOrbit:
        U = x[: self.n_U].reshape(self.like.snapshots.shape)
        return _orbit_from(U, self.like, x[self.n_U], base.replace(**{self.name: x[-1]}))

    def norm(self, x: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self.w * x * x)))

    def _residual(self, U, T, pars):
        return trap_residual(self.model, self.fem, U, self.like.h, T, pars, periodic=True)

    def correct(self, x_pred, x_anchor, tau, step, base: ModelParams, reference: CpsOrbit):
        """Newton 校正至残差 < tol, 返回 (x, 迭代次数)。"""
        row = _phase_row(reference)
        U_ref = reference.snapshots
        w_row = self.w * tau
        shape = self.like.snapshots.shape
        x = x_pred.copy()
        residuals = []
        for it in range(self.settings.max_newton + 1):
            U, T, p = x[: self.n_U].reshape(shape), x[self.n_U], x[-1]
            pars = base.replace(**{self.name: p})
            R, dT = self._residual(U, T, pars)
            ph = float(row @ (U - U_ref).ravel())
            arc = float(w_row @ (x - x_anchor) - step)
            res = max(float(np.max(np.abs(R))), abs(ph), abs(arc))
            residuals.append(res)
            if not np.isfinite(res):
                break
            if res < self.settings.tol:
                return x, it
            if it == self.settings.max_newton:
                break
            delta = FD_STEP * max(1.0, abs(p))
            Rp = (self._residual(U, T, base.replace(**{self.name: p + delta}))[0]
                  - self._residual(U, T, base.replace(**{self.name: p - delta}))[0]) / (2 * delta)
            A = trap_jacobian(self.model, self.fem, U, self.like.h, T, pars, periodic=True)
            B = np.column_stack([dT.ravel(), Rp.ravel()])
            C = np.vstack([row, w_row[: self.n_U]])
            D = np.array([[0.0, 0.0], [w_row[self.n_U], w_row[-1]]])
            try:
                dx, dy = bordered_solve(A, B, C, D, R.ravel(), np.array([ph, arc]),
                                        eliminate=False)
            except SolverError as e:
                raise NoConvergenceError(str(e), residuals) from e
            x = x - np.concatenate([dx, dy])
        raise NoConvergenceError("CPS 弧长校正未收敛", residuals)

    def initial_tangent(self, orbit: CpsOrbit, direction: float) -> np.ndarray:
        """解 [A dT; φᵀ 0] τ = −[∂_pR; 0], τ_p = ±1 (未归一化)。"""
        U, T, p = orbit.snapshots, orbit.T_p, orbit.params[self.name]
        delta = FD_STEP * max(1.0, abs(p))
        Rp = (self._residual(U, T, orbit.params.replace(**{self.name: p + delta}))[0]
              - self._residual(U, T, orbit.params.replace(**{self.name: p - delta}))[0]) / (2 * delta)
        _, dT = self._residual(U, T, orbit.params)
        A = trap_jacobian(self.model, self.fem, U, self.like.h, T, orbit.params, periodic=True)
        row = _phase_row(orbit)
        du, dTp = bordered_solve(A, dT.reshape(-1, 1), row[None, :], np.zeros((1, 1)),
                                 -Rp.ravel(), np.zeros(1), eliminate=False)
        tau = np.concatenate([du, dTp, [1.0]])
        return tau if direction >= 0 else -tau

    def balance(self, tau: np.ndarray) -> float:
        """θ = min(1, (T_p 与 p 部分)² / (‖τ_U‖²/n_U))。"""
        u2 = float(tau[: self.n_U] @ tau[: self.n_U]) / self.n_U
        rest = float(np.sum(self.w[self.n_U:] * tau[self.n_U:] ** 2))
        if rest == 0 or u2 <= rest:
            return 1.0
        return rest / u2


def cps_continue(model: CanonicalModel, fem: FemOperators, orbit: CpsOrbit, param_name: str,
                 ds: float, n_steps: int, settings: Optional[ContinuationSettings] = None,
                 tangent: Optional[np.ndarray] = None,
                 stop: Optional[Callable[[CpsBranch], bool]] = None) -> CpsBranch:
    """
    在 (u, T_p, p) 上做伪弧长延拓, 相位条件每步以上一条轨道为参考。

    U 部分的范数权重 θ 取 settings.theta; 为 None 时, 切向由 ∂_pR 算出则自动平衡,
    调用方给出切向 (Hopf 分支切换) 则取 θ = 1。
    校正失败时步长减半, 低于 ds_min 则返回已得到的部分分支并标记 failed。
    stop(branch) 为真时提前结束。
    """
    settings = settings or ContinuationSettings()
    if ds == 0 or not np.isfinite(ds):
        raise InvalidArgumentError("延拓步长 ds 不能为 0")
    if param_name not in orbit.params.names:
        raise InvalidArgumentError(f"未知延拓参数: {param_name}")
    branch = CpsBranch(param_name=param_name, orbits=[orbit])
    if n_steps <= 0:
        return branch

    arc = _CpsArc(model, fem, orbit, param_name, settings)
    x = arc.pack(orbit)
    if tangent is None:
        tau = arc.initial_tangent(orbit, np.sign(ds))
        theta = settings.theta if settings.theta is not None else arc.balance(tau)
    else:
        tau = np.asarray(tangent, dtype=float)
        theta = settings.theta if settings.theta is not None else 1.0
    arc = _CpsArc(model, fem, orbit, param_name, settings, theta)
    branch.theta = theta
    tau = tau / arc.norm(tau)
    h = min(abs(ds), settings.ds_max)
    streak = 0
    current = orbit
    for step in range(n_steps):
        while True:
            try:
                x_new, iters = arc.correct(x + h * tau, x, tau, h, orbit.params, current)
                new = arc.unpack(x_new, orbit.params)
                if new.amplitude < DEGENERATE_AMP:
                    raise NoConvergenceError("轨道退化为 CSS")
                break
            except NoConvergenceError:
                h *= 0.5
                streak = 0
                if h < settings.ds_min:
                    logger.warning("CPS 延拓在第 %d 步失败: 步长低于 ds_min", step + 1)
                    branch.failed = True
                    break
        if branch.failed:
            break

        secant = x_new - x
        tau_new = secant / arc.norm(secant)
        if np.sign(tau_new[-1]) != np.sign(tau[-1]) and tau[-1] != 0:
            branch.folds.append(float(x_new[-1]))
            logger.info("CPS 分支折点: %s = %.6f", param_name, x_new[-1])
        branch.orbits.append(new)
        logger.info("[%s] cps step %d: %s=%.6f  T_p=%.6f  振幅=%.4e",
                    model.name, step + 1, param_name, x_new[-1], new.T_p, new.amplitude)
        x, tau, current = x_new, tau_new, new
        streak = streak + 1 if iters <= CONT_EASY_ITERS else 0
        if streak >= CONT_EASY_STREAK:
            h = min(2 * h, settings.ds_max)
            streak = 0
        if stop is not None and stop(branch):
            break
    return branch


def cps_branch_from_hopf(model: CanonicalModel, fem: FemOperators, hopf_event: BifurcationEvent,
                         amplitude: float, param_name: str, n_steps: int,
                         m_p: int = CPS_MESH,
                         settings: Optional[ContinuationSettings] = None,
                         stop: Optional[Callable[[CpsBranch], bool]] = None) -> CpsBranch:
    """
    Hopf 分支切换: 在超平面 ⟨τ, x − x_H⟩ = ‖guess − û‖ 上校正初值 (参数自由), 再沿割线延拓。
    x_H = (û, …, û, 2π/ω_H, p_H), τ = (guess − û, 0, 0)。
    """
    settings = settings or ContinuationSettings()
    if amplitude == 0:
        raise InvalidArgumentError("Hopf 分支切换振幅不能为 0")
    guess = cps_from_hopf(model, fem, hopf_event, amplitude, m_p)
    theta = settings.theta if settings.theta is not None else 1.0
    arc = _CpsArc(model, fem, guess, param_name, settings, theta)
    x_guess = arc.pack(guess)
    x_hopf = np.concatenate([np.tile(hopf_event.u, guess.m), x_guess[-2:]])
    tau = x_guess - x_hopf
    step = arc.norm(tau)
    tau = tau / step
    x, _ = arc.correct(x_guess, x_hopf, tau, step, guess.params, guess)
    orbit = arc.unpack(x, guess.params)
    if orbit.amplitude < DEGENERATE_AMP:
        raise DegenerateOrbitError("Hopf 分支切换后轨道退化为 CSS")
    return cps_continue(model, fem, orbit, param_name, settings.ds, n_steps, settings,
                        tangent=x - x_hopf, stop=stop)


# ──────────── Floquet ────────────


def _step_factors(model, fem, orbit: CpsOrbit) -> List[np.ndarray]:
    factors = []
    pairs = transition_factors(model, fem, orbit.snapshots, orbit.h, orbit.T_p, orbit.params)
    for j, (left, right) in enumerate(pairs):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", dsl.LinAlgWarning)
            lu, piv = dsl.lu_factor(left)
        d = np.abs(np.diag(lu))
        if not np.all(np.isfinite(d)) or d.min() <= _SINGULAR_RTOL * max(d.max(), 1.0):
            raise SingularFactorError(f"第 {j} 步转移因子奇异", j)
        factors.append(dsl.lu_solve((lu, piv), right))
    return factors


def floquet(model: CanonicalModel, fem: FemOperators, orbit: CpsOrbit,
            anchor_index: int = 0, order: str = "descending") -> FloquetResult:
    """
    Floquet 乘子: 梯形线性化的步转移因子 A_j, 以锚点为起点循环排列后做周期 Schur。
    乘积 Π A_j 从不显式形成。
    """
    if not 0 <= anchor_index < orbit.m:
        raise InvalidArgumentError(f"锚点编号越界: {anchor_index}")
    factors = _step_factors(model, fem, orbit)
    seq = factors[anchor_index:] + factors[:anchor_index]
    schur = periodic_schur(seq, order=order)
    log_abs = schur.log_abs
    mult = schur.multipliers
    trivial = int(np.argmin(np.abs(log_abs) + np.abs(schur.phases - 1)))
    result = FloquetResult(multipliers=mult, log_abs=log_abs, schur=schur, factors=seq,
                           anchor_index=anchor_index, trivial_index=trivial)
    if result.trivial_error > TRIVIAL_MULT_TOL:
        logger.warning("平凡乘子偏差 |γ₁−1| = %.2e > %.0e (可加密时间网格)",
                       result.trivial_error, TRIVIAL_MULT_TOL)
    logger.info("Floquet 乘子 (锚点 %d): %s", anchor_index,
                ", ".join(f"{g:.4e}" for g in np.abs(mult)))
    return result


def cps_target(model: CanonicalModel, fem: FemOperators, orbit: CpsOrbit,
               anchor_index: int = 0, require_spp: bool = True) -> CpsTarget:
    """
    CPS 目标。

    Step 1: 前向周期 Schur 得乘子, 亏量 = N·n − (1 + #{|γ| < 1, 非平凡})
    Step 2: 伴随序列 (因子转置、逆序) 的周期 Schur, 降序排列
    Step 3: 前 k 个 Schur 向量 (|γ| ≥ 1, 含平凡乘子) 取实部/虚部, SVD 得 P 的正交行
    """
    fwd = floquet(model, fem, orbit, anchor_index)
    stable = fwd.stable_mask()
    n_cs = int(np.count_nonzero(stable)) + 1
    defect = model.N * fem.n - n_cs
    if require_spp and defect != 0:
        raise SaddlePointError(f"CPS 不满足鞍点性质: 亏量 d = {defect}", defect)

    adjoint = [f.T for f in reversed(fwd.factors)]
    adj = periodic_schur(adjoint, order="descending")
    n_u = orbit.u.shape[1]
    k = n_u - int(np.count_nonzero(stable))
    Z = adj.Q[0][:, :k]
    U, s, _ = dsl.svd(np.hstack([Z.real, Z.imag]), full_matrices=False)
    if s[k - 1] < 1e-8 * s[0]:
        logger.warning("P 的实基秩不足 (σ_k/σ_1 = %.2e)", s[k - 1] / s[0])
    P = U[:, :k].T.copy()
    return CpsTarget(orbit=orbit, anchor_index=anchor_index, multipliers=fwd.multipliers,
                     log_abs=fwd.log_abs, P=P, defect=defect, trivial_index=fwd.trivial_index)


def estimate_periods(target: CpsTarget, dev0: float, eps: float) -> int:
    """需追加的周期数 k, 使 dev0·|γ₂|^k ≤ eps (γ₂ 为模最大的稳定非平凡乘子)。"""
    if dev0 <= 0 or eps <= 0:
        raise InvalidArgumentError("dev0 与 eps 必须为正")
    if dev0 <= eps:
        return 0
    mask = target.log_abs < 0
    mask[target.trivial_index] = False
    if not np.any(mask):
        raise InvalidArgumentError("CPS 目标没有稳定乘子")
    lg2 = float(np.max(target.log_abs[mask]))
    return max(1, math.ceil(math.log(eps / dev0) / lg2))


# ──────────── 价值 ────────────


def cps_value(model: CanonicalModel, fem: FemOperators, orbit: CpsOrbit,
              phase: float = 0.0) -> float:
    """J = (1 − e^{−ρT_p})⁻¹ ∫₀^{T_p} e^{−ρt} J_ca(û(t + phase)) dt, 梯形求积。"""
    rho = orbit.params.rho
    if not model.discounted or rho <= 0:
        raise InvalidArgumentError(f"CPS 价值需要正贴现率, 得到 ρ={rho}")
    if not 0 <= phase < orbit.T_p:
        raise InvalidArgumentError(f"相位须在 [0, T_p) 内: {phase}")
    tau = orbit.times()
    jc = np.array([current_value(model, fem, u, orbit.params) for u in orbit.u])
    shifted = np.interp(tau + phase, tau, jc, period=orbit.T_p)
    integral = trapezoid(np.exp(-rho * tau) * shifted, tau)
    return float(integral / (1 - np.exp(-rho * orbit.T_p)))
