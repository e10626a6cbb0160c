"""
典则稳态 (CSS) 模块。
Newton 校正、伪弧长延拓、基于特征值计数的分岔检测、分支切换,
以及 CSS 目标的亏量 (defect) 与不稳定子空间投影 Ψ。
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg as dsl
import scipy.sparse as sp

from src.config import (
    BIF_LOC_TOL,
    CONT_DS,
    CONT_DS_MAX,
    CONT_DS_MIN,
    CONT_EASY_ITERS,
    CONT_EASY_STREAK,
    CONT_MAX_NEWTON,
    CONT_TOL,
    FD_STEP,
    HOPF_IM_TOL,
    MARGINAL_RE,
    NEWTON_MAX_ITER,
    NEWTON_TOL,
)
from src.exceptions import (
    AdmissibilityError,
    ConfigurationError,
    InvalidArgumentError,
    NoConvergenceError,
    SaddlePointError,
    SolverError,
    UnsupportedBifurcationError,
)
from src.fem1d import FemOperators
from src.linalg import bordered_solve, sparse_solve
from src.models import (
    CanonicalModel,
    ModelParams,
    current_value,
    jacobian_G,
    mass_matrix,
    residual_G,
    spatial_mode,
)

logger = logging.getLogger(__name__)


# ──────────── 数据类定义 ────────────


@dataclass
class ContinuationSettings:
    """
    伪弧长延拓控制参数。

    theta 为弧长范数中 u 部分的权重 θ: ‖(u, p)‖² = θ‖u‖²/n_u + p²。
    None 表示由初始切向自动平衡, 使 u 部分与参数部分的贡献不超过 1:1。
    """

    ds: float = CONT_DS
    ds_min: float = CONT_DS_MIN
    ds_max: float = CONT_DS_MAX
    tol: float = CONT_TOL
    max_newton: int = CONT_MAX_NEWTON
    bif_check: bool = True
    theta: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.ds_min <= self.ds_max:
            raise ConfigurationError(
                f"需要 0 < ds_min ≤ ds_max, 得到 ({self.ds_min}, {self.ds_max})"
            )
        if self.theta is not None and not 0 < self.theta <= 1:
            raise ConfigurationError(f"需要 0 < theta ≤ 1, 得到 {self.theta}")


@dataclass
class BranchPoint:
    """分支上的一个 CSS。"""

    u: np.ndarray
    params: ModelParams
    arclength: float
    j_ca: float
    n_neg: int
    stability: str            # "spp" | "defect=<d>"
    tangent_p: float = float("nan")


@dataclass
class BifurcationEvent:
    """定位后的分岔/折点事件。"""

    kind: str                 # "steady" | "hopf" | "fold"
    param: float
    spatial_mode: int
    u: np.ndarray
    params: ModelParams
    mu: complex = 0j
    phi: Optional[np.ndarray] = None
    index: int = 0            # 所在分支段的起点编号


@dataclass
class Branch:
    """CSS 延拓记录。"""

    model_name: str
    param_name: str
    points: List[BranchPoint] = field(default_factory=list)
    events: List[BifurcationEvent] = field(default_factory=list)
    failed: bool = False
    theta: float = 1.0
    # 延拓时的模型与网格, 供 detect_bifurcations(branch) 复用; 从文件读回的分支为 None
    model: Optional[CanonicalModel] = field(default=None, repr=False, compare=False)
    fem: Optional[FemOperators] = field(default=None, repr=False, compare=False)

    def param_values(self) -> np.ndarray:
        return np.array([pt.params[self.param_name] for pt in self.points])


@dataclass
class CssTarget:
    """带鞍点性质检查的 CSS 目标。"""

    u_hat: np.ndarray
    params: ModelParams
    defect: int
    Psi: np.ndarray
    spectrum: np.ndarray
    T_suggest: Optional[float]
    near_degenerate: bool = False
    kind: str = "css"

    def states(self, n_states: int) -> np.ndarray:
        return self.u_hat[:n_states]

    @property
    def end_state(self) -> np.ndarray:
        return self.u_hat

    @property
    def projector(self) -> np.ndarray:
        return self.Psi


# ──────────── 谱与计数 ────────────


def generalized_spectrum(model: CanonicalModel, fem: FemOperators, u: np.ndarray,
                         params: ModelParams, adjoint: bool = False):
    """稠密求解 ∂_uG φ = μ M φ (adjoint=True 时求 ∂_uGᵀ Φ = Λ M Φ)。"""
    J = jacobian_G(model, fem, u, params).toarray()
    M = mass_matrix(model, fem).toarray()
    mu, vecs = dsl.eig(J.T if adjoint else J, M)
    return mu, vecs


def stable_mask(mu: np.ndarray) -> np.ndarray:
    """
    流 ∂ₜu = −G 约定下的稳定方向 Re μ > 0。

    临界特征值 |Re μ| < 1e−10 无法同时 "算作稳定" 又 "使亏量增加": 算作稳定会使亏量减小。
    这里按亏量增加处理, 即临界特征值不计入稳定, 零特征值使亏量 +1;
    css_target 同时置 near_degenerate 并给出警告。
    """
    return np.real(mu) > MARGINAL_RE


def count_neg(mu: np.ndarray) -> int:
    return int(np.count_nonzero(~stable_mask(mu)))


def defect_from_spectrum(model: CanonicalModel, fem: FemOperators, mu: np.ndarray) -> int:
    """亏量 = N·n − dim E_s (鞍点性质时为 0)。"""
    return model.N * fem.n - int(np.count_nonzero(stable_mask(mu)))


def _stability_tag(defect: int) -> str:
    return "spp" if defect == 0 else f"defect={defect}"


def make_point(model: CanonicalModel, fem: FemOperators, u: np.ndarray,
               params: ModelParams, arclength: float = 0.0,
               tangent_p: float = float("nan")) -> BranchPoint:
    mu, _ = generalized_spectrum(model, fem, u, params)
    try:
        j_ca = current_value(model, fem, u, params)
    except AdmissibilityError:
        j_ca = float("nan")
    defect = defect_from_spectrum(model, fem, mu)
    return BranchPoint(u=np.array(u, dtype=float), params=params, arclength=float(arclength),
                       j_ca=j_ca, n_neg=count_neg(mu), stability=_stability_tag(defect),
                       tangent_p=float(tangent_p))


# ──────────── Newton ────────────


def newton_css(model: CanonicalModel, fem: FemOperators, u_guess: np.ndarray,
               params: ModelParams, tol: float = NEWTON_TOL,
               max_iter: int = NEWTON_MAX_ITER) -> np.ndarray:
    """Newton 迭代至 ‖G(u)‖∞ < tol。"""
    u = np.array(u_guess, dtype=float)
    if not np.all(np.isfinite(u)):
        raise InvalidArgumentError("Newton 初值含非有限值")
    residuals = []
    for it in range(max_iter + 1):
        G = residual_G(model, fem, u, params)
        res = float(np.max(np.abs(G)))
        residuals.append(res)
        if not np.isfinite(res):
            break
        if res < tol:
            logger.debug("newton_css 收敛: %d 次迭代, 残差 %.2e", it, res)
            return u
        if it == max_iter:
            break
        try:
            u = u - sparse_solve(jacobian_G(model, fem, u, params), G)
        except SolverError as e:
            raise NoConvergenceError(f"Newton 线性求解失败: {e}", residuals) from e
    raise NoConvergenceError(
        f"Newton 在 {max_iter} 次迭代内未收敛, 末次残差 {residuals[-1]:.3e}", residuals
    )


# ──────────── 伪弧长延拓 ────────────


def _param_derivative(model, fem, u, params, name) -> np.ndarray:
    p = params[name]
    delta = FD_STEP * max(1.0, abs(p))
    plus = residual_G(model, fem, u, params.replace(**{name: p + delta}))
    minus = residual_G(model, fem, u, params.replace(**{name: p - delta}))
    return (plus - minus) / (2 * delta)


def _wnorm(x: np.ndarray, n_u: int, theta: float = 1.0) -> float:
    """加权范数: u 部分按 θ/n_u 加权, 参数分量权重 1。"""
    return float(np.sqrt(theta * np.dot(x[:n_u], x[:n_u]) / n_u + x[n_u:] @ x[n_u:]))


def balance_weight(tau: np.ndarray, n_u: int) -> float:
    """
    θ = min(1, (p 分量)² / (‖τ_u‖²/n_u))。
    u 部分贡献超过参数部分时 (如浅湖 FSC 的协态) 取 θ < 1 使二者相等。
    """
    u2 = float(np.dot(tau[:n_u], tau[:n_u])) / n_u
    p2 = float(tau[n_u:] @ tau[n_u:])
    if p2 == 0 or u2 <= p2:
        return 1.0
    return p2 / u2


def _corrector(model, fem, x_pred, x_anchor, tau, h, params, name, tol, max_newton,
               theta: float = 1.0):
    """
    在超平面 ⟨τ, x − x_anchor⟩_θ = h 上做 Newton 校正, x = (u, p)。

    Returns:
        (x, 迭代次数)
    """
    n_u = x_pred.size - 1
    x = x_pred.copy()
    w_row = np.concatenate([theta * tau[:n_u] / n_u, tau[n_u:]])
    residuals = []
    for it in range(max_newton + 1):
        pars = params.replace(**{name: x[n_u]})
        G = residual_G(model, fem, x[:n_u], pars)
        arc = float(w_row @ (x - x_anchor) - h)
        res = max(float(np.max(np.abs(G))), abs(arc))
        residuals.append(res)
        if not np.isfinite(res):
            break
        if res < tol:
            return x, it
        if it == max_newton:
            break
        Gu = jacobian_G(model, fem, x[:n_u], pars)
        Gp = _param_derivative(model, fem, x[:n_u], pars, name)
        try:
            du, dp = bordered_solve(Gu, Gp[:, None], w_row[None, :n_u], w_row[None, n_u:],
                                    G, np.array([arc]))
        except SolverError as e:
            raise NoConvergenceError(str(e), residuals) from e
        x = x - np.concatenate([du, dp])
    raise NoConvergenceError("弧长校正未收敛", residuals)


def _initial_tangent(model, fem, u, params, name, direction: float) -> np.ndarray:
    """未归一化的切向 (τ_u, ±1), 由 ∂_uG τ_u = −∂_pG 给出。"""
    Gu = jacobian_G(model, fem, u, params)
    Gp = _param_derivative(model, fem, u, params, name)
    tau = np.concatenate([-sparse_solve(Gu, Gp), [1.0]])
    return tau if direction >= 0 else -tau


def continue_css(model: CanonicalModel, fem: FemOperators, start: BranchPoint,
                 param_name: str, ds: float, n_steps: int,
                 settings: Optional[ContinuationSettings] = None,
                 tangent: Optional[np.ndarray] = None) -> Branch:
    """
    伪弧长延拓 CSS 分支。

    Step 1: 初始切向 (由 ∂_uG τ_u = −∂_pG 给出, 或调用方提供), 确定范数权重 θ
    Step 2: 预测 x + h τ, 加边 Newton 校正
    Step 3: 成功则割线更新切向; 失败则步长减半, 低于 ds_min 时标记失败返回
    Step 4: 切向参数分量变号记为折点, 随后按 n_neg 变化检测分岔

    settings.theta 为 None 时, 仅在切向由 ∂_pG 算出的情形自动平衡 θ;
    调用方给出切向 (分支切换) 时取 θ = 1。
    """
    settings = settings or ContinuationSettings()
    if ds == 0 or not np.isfinite(ds):
        raise InvalidArgumentError("延拓步长 ds 不能为 0")
    if param_name not in start.params.names:
        raise InvalidArgumentError(f"未知延拓参数: {param_name}")

    n_u = start.u.size
    x = np.concatenate([start.u, [start.params[param_name]]])
    if tangent is None:
        tau = _initial_tangent(model, fem, start.u, start.params, param_name, np.sign(ds))
        theta = settings.theta if settings.theta is not None else balance_weight(tau, n_u)
    else:
        tau = np.asarray(tangent, dtype=float)
        theta = settings.theta if settings.theta is not None else 1.0
    tau = tau / _wnorm(tau, n_u, theta)
    if theta < 1:
        logger.info("弧长范数 u 部分权重 θ = %.3e", theta)
    h = min(abs(ds), settings.ds_max)
    first = replace(start, tangent_p=float(tau[-1]))
    branch = Branch(model_name=model.name, param_name=param_name, points=[first],
                    theta=theta, model=model, fem=fem)
    streak = 0
    s = start.arclength

    for step in range(n_steps):
        while True:
            try:
                x_new, iters = _corrector(model, fem, x + h * tau, x, tau, h, start.params,
                                          param_name, settings.tol, settings.max_newton, theta)
                break
            except NoConvergenceError:
                h *= 0.5
                streak = 0
                if h < settings.ds_min:
                    logger.warning("延拓在第 %d 步失败: 步长低于 ds_min", step + 1)
                    branch.failed = True
                    break
        if branch.failed:
            break

        secant = x_new - x
        tau_new = secant / _wnorm(secant, n_u, theta)
        s += _wnorm(secant, n_u, theta)
        pars = start.params.replace(**{param_name: x_new[-1]})
        point = make_point(model, fem, x_new[:n_u], pars, s, tangent_p=tau_new[-1])
        if np.sign(tau_new[-1]) != np.sign(tau[-1]) and tau[-1] != 0:
            branch.events.append(BifurcationEvent(
                kind="fold", param=float(x_new[-1]), spatial_mode=0,
                u=x_new[:n_u].copy(), params=pars, index=len(branch.points) - 1,
            ))
            logger.info("检测到折点: %s = %.6f", param_name, x_new[-1])
        branch.points.append(point)
        logger.info("[%s] step %d: %s=%.6f  ‖u‖∞=%.4e  J_ca=%.6e  n_neg=%d",
                    model.name, step + 1, param_name, x_new[-1],
                    np.max(np.abs(x_new[:n_u])), point.j_ca, point.n_neg)

        x, tau = x_new, tau_new
        streak = streak + 1 if iters <= CONT_EASY_ITERS else 0
        if streak >= CONT_EASY_STREAK:
            h = min(2 * h, settings.ds_max)
            streak = 0

    if settings.bif_check and len(branch.points) >= 2:
        branch.events.extend(detect_bifurcations(branch, settings=settings))
        branch.events.sort(key=lambda e: (e.index, e.kind))
    return branch


# ──────────── 分岔检测 ────────────


def detect_bifurcations(branch: Branch, model: Optional[CanonicalModel] = None,
                        fem: Optional[FemOperators] = None,
                        settings: Optional[ContinuationSettings] = None) -> List[BifurcationEvent]:
    """
    在 n_neg 跳变的分支段上二分定位特征值穿越点。
    穿越的特征值为复数对时记为 hopf, 实数时记为 steady。
    model/fem 缺省取分支延拓时记录的对象。
    """
    settings = settings or ContinuationSettings()
    model = model if model is not None else branch.model
    fem = fem if fem is not None else branch.fem
    if model is None or fem is None:
        raise InvalidArgumentError("分支未记录模型与网格, 需显式传入 model 与 fem")
    name = branch.param_name
    theta = branch.theta
    fold_segments = {e.index for e in branch.events if e.kind == "fold"}
    events = []
    for k in range(len(branch.points) - 1):
        a, b = branch.points[k], branch.points[k + 1]
        if a.n_neg == b.n_neg:
            continue
        n_u = a.u.size
        lo = np.concatenate([a.u, [a.params[name]]])
        hi = np.concatenate([b.u, [b.params[name]]])
        n_lo = a.n_neg
        base = a.params
        mid = 0.5 * (lo + hi)
        for _ in range(40):
            if abs(hi[-1] - lo[-1]) < BIF_LOC_TOL:
                break
            mid = 0.5 * (lo + hi)
            d = hi - lo
            d = d / _wnorm(d, n_u, theta)
            try:
                mid, _ = _corrector(model, fem, mid, mid, d, 0.0, base, name,
                                    settings.tol, settings.max_newton, theta)
            except NoConvergenceError:
                break
            mu_mid, _ = generalized_spectrum(model, fem, mid[:n_u], base.replace(**{name: mid[-1]}))
            if count_neg(mu_mid) == n_lo:
                lo = mid
            else:
                hi = mid
        pars = base.replace(**{name: mid[-1]})
        mu, vecs = generalized_spectrum(model, fem, mid[:n_u], pars)
        j = int(np.argmin(np.abs(np.real(mu))))
        if abs(mu[j].imag) > HOPF_IM_TOL:
            # 取 Im μ < 0 的一支, 使线性化解 e^{−μt}φ 以正频率旋转
            conj = np.flatnonzero(np.isclose(mu, np.conj(mu[j]), rtol=1e-8, atol=1e-10))
            if mu[j].imag > 0 and conj.size:
                j = int(conj[0])
            kind = "hopf"
        else:
            kind = "steady"
            if k in fold_segments:
                continue
        phi = vecs[:, j]
        blocks = phi.reshape(2 * model.N, fem.n)[: model.N]
        comp = int(np.argmax(np.linalg.norm(blocks, axis=1)))
        mode = spatial_mode(fem, blocks[comp])
        events.append(BifurcationEvent(kind=kind, param=float(mid[-1]), spatial_mode=mode,
                                       u=mid[:n_u].copy(), params=pars, mu=complex(mu[j]),
                                       phi=phi, index=k))
        logger.info("检测到 %s 分岔: %s ≈ %.5f (模态 l=%d, μ=%.3e%+.3ej)",
                    kind, name, mid[-1], mode, mu[j].real, mu[j].imag)
    return events


# ──────────── 分支切换 ────────────


def _kernel_vector(model, fem, event: BifurcationEvent) -> np.ndarray:
    mu, vecs = generalized_spectrum(model, fem, event.u, event.params)
    order = np.argsort(np.abs(mu))
    mu_min = abs(mu[order[0]])
    kernel = np.count_nonzero(np.abs(mu) <= 10 * mu_min + 1e-10)
    if kernel != 1:
        raise UnsupportedBifurcationError(f"核维数为 {kernel}, 仅支持一维核的分支切换")
    phi = vecs[:, order[0]]
    phi = phi * np.exp(-1j * np.angle(phi[np.argmax(np.abs(phi))]))
    phi = np.real(phi)
    return phi / np.max(np.abs(phi))


def branch_switch(model: CanonicalModel, fem: FemOperators, bif_event: BifurcationEvent,
                  amplitude: float) -> np.ndarray:
    """稳态分岔点处的预测 u* + amplitude·φ (φ 为 sup 范数归一的核向量)。"""
    if bif_event.kind != "steady":
        raise UnsupportedBifurcationError(
            f"{bif_event.kind} 事件不能做稳态分支切换 (Hopf 请使用 periodic.cps_from_hopf)"
        )
    return bif_event.u + amplitude * _kernel_vector(model, fem, bif_event)


def switch_branch(model: CanonicalModel, fem: FemOperators, bif_event: BifurcationEvent,
                  param_name: str, amplitude: float, n_steps: int,
                  settings: Optional[ContinuationSettings] = None) -> Branch:
    """从稳态分岔点切换到分岔分支并继续延拓。"""
    settings = settings or ContinuationSettings()
    if amplitude == 0:
        raise InvalidArgumentError("分支切换振幅不能为 0")
    predictor = branch_switch(model, fem, bif_event, amplitude)
    n_u = predictor.size
    p0 = bif_event.params[param_name]
    anchor = np.concatenate([bif_event.u, [p0]])
    tau = np.concatenate([predictor - bif_event.u, [0.0]])
    h = _wnorm(tau, n_u)
    tau = tau / h
    x, _ = _corrector(model, fem, np.concatenate([predictor, [p0]]), anchor, tau, h,
                      bif_event.params, param_name, settings.tol, settings.max_newton)
    pars = bif_event.params.replace(**{param_name: x[-1]})
    start = make_point(model, fem, x[:n_u], pars)
    secant = x - anchor
    return continue_css(model, fem, start, param_name, settings.ds, n_steps, settings,
                        tangent=secant)


# ──────────── CSS 目标 ────────────


def css_target(model: CanonicalModel, fem: FemOperators, u_hat: np.ndarray,
               params: ModelParams, require_spp: bool = True) -> CssTarget:
    """
    计算 CSS 目标: 亏量、Ψ 与 T 建议值。

    Step 1: 稠密求解伴随广义特征问题 ∂_uGᵀ Φ = Λ M Φ
    Step 2: 亏量 = N·n − #{Re Λ > 0}
    Step 3: Re Λ ≤ 0 的左特征向量 MΦ 取实部/虚部, SVD 正交化为 Ψ 的行
    Step 4: T_suggest = 1/Re μ₂, μ₂ 为实部最小的稳定特征值
    """
    u_hat = np.asarray(u_hat, dtype=float)
    lam, Phi = generalized_spectrum(model, fem, u_hat, params, adjoint=True)
    near = bool(np.any(np.abs(np.real(lam)) < MARGINAL_RE))
    if near:
        logger.warning("CSS 目标存在临界特征值 |Re μ| < %.0e, 亏量可能不可靠", MARGINAL_RE)
    defect = defect_from_spectrum(model, fem, lam)
    if require_spp and defect != 0:
        raise SaddlePointError(f"CSS 不满足鞍点性质: 亏量 d = {defect}", defect)

    unstable = ~stable_mask(lam)
    M = mass_matrix(model, fem)
    W = M @ Phi[:, unstable]
    k = int(np.count_nonzero(unstable))
    if k:
        basis = np.hstack([W.real, W.imag])
        U, _, _ = dsl.svd(basis, full_matrices=False)
        Psi = U[:, :k].T.copy()
    else:
        Psi = np.zeros((0, u_hat.size))

    re_stable = np.real(lam[stable_mask(lam)])
    T_suggest = float(1.0 / re_stable.min()) if re_stable.size else None
    return CssTarget(u_hat=u_hat.copy(), params=params, defect=defect, Psi=Psi,
                     spectrum=np.sort_complex(lam), T_suggest=T_suggest, near_degenerate=near)
