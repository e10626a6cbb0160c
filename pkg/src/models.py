"""
典则系统模型模块。
统一接口 CanonicalModel: 逐节点的右端 f、Jacobian ∂_u f、控制映射 κ 与当前价值 J_c。
场向量布局 u = (v₁ 节点, …, v_N 节点, λ₁ 节点, …, λ_N 节点), 长度 n_u = 2·N·n。

离散系统写为 M u̇ = −G(u), G(u) = 𝒦u − M f(u),
𝒦 = blockdiag(+d_i K (状态), −d_i K (协态))。
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from src.config import (
    NEWTON_TOL,
    POLLUTION_DEFAULTS,
    POLLUTION_LX,
    POLLUTION_NX,
    SLOC_DEFAULTS,
    SLOC_LX,
    SLOC_NX,
    TOY_DEFAULTS,
)
from src.exceptions import (
    AdmissibilityError,
    DimensionError,
    InvalidArgumentError,
    NoConvergenceError,
)
from src.fem1d import FemOperators, assemble_operators, build_mesh, cosine_modes

logger = logging.getLogger(__name__)


# ──────────── 参数 ────────────


@dataclass(frozen=True)
class ModelParams:
    """命名参数向量, rho_index 指向贴现率 ρ。"""

    names: Tuple[str, ...]
    values: Tuple[float, ...]
    rho_index: int

    def __post_init__(self):
        if len(self.names) != len(self.values):
            raise DimensionError("参数名与参数值个数不一致")
        if not 0 <= self.rho_index < len(self.names):
            raise InvalidArgumentError(f"rho_index 越界: {self.rho_index}")

    def __getitem__(self, name: str) -> float:
        try:
            return self.values[self.names.index(name)]
        except ValueError:
            raise InvalidArgumentError(f"未知参数: {name}") from None

    @property
    def rho(self) -> float:
        return self.values[self.rho_index]

    def replace(self, **updates: float) -> "ModelParams":
        values = list(self.values)
        for name, value in updates.items():
            if name not in self.names:
                raise InvalidArgumentError(f"未知参数: {name}")
            values[self.names.index(name)] = float(value)
        return ModelParams(self.names, tuple(values), self.rho_index)

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.names, self.values))


# ──────────── 模型接口 ────────────


class CanonicalModel(ABC):
    """
    典则系统描述。

    子类给出逐节点函数, 输入 U 形状 (2N, n):
      f(U, p)     -> (2N, n)
      dfdu(U, p)  -> (2N, 2N, n)
      control(U, p) -> (n_controls, n)
      jc(U, p)    -> (n,)
    """

    name: str = ""
    N: int = 1
    ode: bool = False
    discounted: bool = True
    defaults: Dict[str, float] = {}
    rho_name: str = "rho"
    default_lx: Optional[float] = None
    default_nx: Optional[int] = None
    labels: Tuple[str, ...] = ()

    # ── 参数与离散 ──

    def default_params(self, **overrides: float) -> ModelParams:
        names = tuple(self.defaults)
        params = ModelParams(names, tuple(float(v) for v in self.defaults.values()),
                             names.index(self.rho_name))
        params = params.replace(**overrides) if overrides else params
        if self.discounted and params.rho <= 0:
            raise InvalidArgumentError(f"贴现率必须为正: ρ={params.rho}")
        return params

    def build_fem(self, lx: Optional[float] = None, nx: Optional[int] = None) -> FemOperators:
        if self.ode:
            return FemOperators.ode()
        mesh = build_mesh(lx or self.default_lx, nx or self.default_nx)
        return assemble_operators(mesh)

    def n_u(self, fem: FemOperators) -> int:
        return 2 * self.N * fem.n

    def component_labels(self) -> Tuple[str, ...]:
        if self.labels:
            return self.labels
        return tuple(f"v{i + 1}" for i in range(self.N)) + tuple(f"λ{i + 1}" for i in range(self.N))

    @abstractmethod
    def diffusion(self, params: ModelParams) -> np.ndarray:
        """2N 个扩散系数 (d, −d)。"""

    @abstractmethod
    def f(self, U: np.ndarray, params: ModelParams) -> np.ndarray:
        ...

    @abstractmethod
    def dfdu(self, U: np.ndarray, params: ModelParams) -> np.ndarray:
        ...

    @abstractmethod
    def control(self, U: np.ndarray, params: ModelParams) -> np.ndarray:
        ...

    @abstractmethod
    def jc(self, U: np.ndarray, params: ModelParams) -> np.ndarray:
        ...

    # ── 布局 ──

    def split(self, u: np.ndarray, fem: FemOperators) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.ndim != 1 or u.size != self.n_u(fem):
            raise DimensionError(
                f"{self.name}: 场向量长度 {u.size} ≠ n_u = {self.n_u(fem)}"
            )
        return u.reshape(2 * self.N, fem.n)

    def states(self, u: np.ndarray, fem: FemOperators) -> np.ndarray:
        """状态部分 (前 N·n 个分量)。"""
        return np.asarray(u, dtype=float)[: self.N * fem.n]

    def flat(self, values: Sequence[float], fem: FemOperators) -> np.ndarray:
        """把每个分量的常数值铺到所有节点。"""
        values = np.asarray(values, dtype=float)
        if values.size != 2 * self.N:
            raise DimensionError(f"需要 {2 * self.N} 个分量值, 得到 {values.size}")
        return np.repeat(values, fem.n)


# ──────────── 离散残差 / Jacobian ────────────


def residual_G(model: CanonicalModel, fem: FemOperators, u: np.ndarray,
               params: ModelParams) -> np.ndarray:
    """G(u) = Σ c_i K u_i − M f(u)_i (逐分量块); ODE 模型返回 −f(u)。"""
    U = model.split(u, fem)
    F = model.f(U, params)
    if fem.is_ode:
        return -F.ravel()
    c = model.diffusion(params)
    G = (c[:, None] * (fem.K @ U.T).T) - (fem.M @ F.T).T
    return G.ravel()


def jacobian_G(model: CanonicalModel, fem: FemOperators, u: np.ndarray,
               params: ModelParams) -> sp.csr_matrix:
    """∂_u G, 稀疏 (2N·n)×(2N·n)。"""
    U = model.split(u, fem)
    dF = model.dfdu(U, params)
    nc = 2 * model.N
    if fem.is_ode:
        return sp.csr_matrix(-dF[:, :, 0])
    c = model.diffusion(params)
    blocks = [[None] * nc for _ in range(nc)]
    for a in range(nc):
        for b in range(nc):
            block = None
            if np.any(dF[a, b] != 0):
                block = -(fem.M @ sp.diags(dF[a, b]))
            if a == b:
                # 对角块保持存在, bmat 才能推断块尺寸
                diag = c[a] * fem.K
                block = diag if block is None else block + diag
            blocks[a][b] = block
    return sp.bmat(blocks, format="csr")


def mass_matrix(model: CanonicalModel, fem: FemOperators) -> sp.csr_matrix:
    """全场质量矩阵 blockdiag(M, …, M) (2N 块)。"""
    return sp.block_diag([fem.M] * (2 * model.N), format="csr")


def control_of(model: CanonicalModel, fem: FemOperators, u: np.ndarray,
               params: ModelParams) -> np.ndarray:
    return model.control(model.split(u, fem), params)


def current_value(model: CanonicalModel, fem: FemOperators, u: np.ndarray,
                  params: ModelParams) -> float:
    """J_ca = |Ω|⁻¹ 𝟙ᵀ M J_c(u) (PDE); ODE 直接为 J_c。"""
    jc = model.jc(model.split(u, fem), params)
    if fem.is_ode:
        return float(jc[0])
    return float(np.ones(fem.n) @ (fem.M @ jc)) / fem.volume


def spatial_mode(fem: FemOperators, w: np.ndarray) -> int:
    """节点场 w (可为复数) 的主导 Neumann 余弦模态编号。"""
    if fem.is_ode:
        return 0
    modes = cosine_modes(fem.mesh)
    w = np.asarray(w)
    weights = np.abs(modes @ (fem.M @ w.real)) + np.abs(modes @ (fem.M @ w.imag))
    norms = np.sqrt(np.einsum("ij,ij->i", modes, (fem.M @ modes.T).T))
    return int(np.argmax(weights / norms))


def dockner_k(jac: np.ndarray) -> float:
    """
    二维状态典则 ODE 的 Hopf 必要条件量 K (需 K > 0)。

    jac 为 4×4 的 ∂_u f, 布局 (v₁, v₂, λ₁, λ₂)。
    """
    J = np.asarray(jac, dtype=float)

    def minor(i, j, k, l):
        return J[i, k] * J[j, l] - J[i, l] * J[j, k]

    return minor(0, 2, 0, 2) + minor(1, 3, 1, 3) + 2 * minor(0, 2, 1, 3)


# ──────────── 浅湖模型 (sloc) ────────────


class ShallowLakeModel(CanonicalModel):
    """
    浅湖磷负荷控制:
      f₁ = κ − b v + v²/(1+v²),  κ = −1/λ
      f₂ = 2γ v + λ(ρ + b − 2v/(1+v²)²)
      J_c = ln κ − γ v²
    """

    name = "sloc"
    N = 1
    defaults = SLOC_DEFAULTS
    default_lx = SLOC_LX
    default_nx = SLOC_NX
    branches = ("FSC", "FSI", "FSM")
    labels = ("v", "λ")

    def diffusion(self, params):
        D = params["D"]
        return np.array([D, -D])

    def f(self, U, params):
        b, rho, gamma = params["b"], params["rho"], params["gamma"]
        v, lam = U
        with np.errstate(divide="ignore"):
            kappa = -1.0 / lam
        q = 1.0 + v ** 2
        return np.array([
            kappa - b * v + v ** 2 / q,
            2 * gamma * v + lam * (rho + b - 2 * v / q ** 2),
        ])

    def dfdu(self, U, params):
        b, rho, gamma = params["b"], params["rho"], params["gamma"]
        v, lam = U
        q = 1.0 + v ** 2
        dg = 2 * v / q ** 2
        ddg = (2 - 6 * v ** 2) / q ** 3
        with np.errstate(divide="ignore"):
            dk = 1.0 / lam ** 2
        return np.array([
            [-b + dg, dk],
            [2 * gamma - lam * ddg, rho + b - dg],
        ])

    def control(self, U, params):
        lam = U[1]
        if np.any(lam == 0):
            raise AdmissibilityError("浅湖模型: λ = 0, 控制 κ = −1/λ 无定义")
        return (-1.0 / lam)[None, :]

    def jc(self, U, params):
        kappa = self.control(U, params)[0]
        if np.any(kappa <= 0):
            raise AdmissibilityError("浅湖模型: κ ≤ 0, ln κ 无定义")
        return np.log(kappa) - params["gamma"] * U[0] ** 2


def _sloc_flat_residual(x, params):
    v, lam = x
    model = ShallowLakeModel()
    return model.f(np.array([[v], [lam]]), params)[:, 0]


def _sloc_flat_h(v, params):
    """把 λ = −1/κ(v) 代入后的一元方程 (κ > 0 时有效)。"""
    b, rho, gamma = params["b"], params["rho"], params["gamma"]
    q = 1 + v ** 2
    kappa = b * v - v ** 2 / q
    return 2 * gamma * v * kappa - (rho + b - 2 * v / q ** 2)


def sloc_flat_roots(params: ModelParams, v_max: float = 6.0) -> list:
    """扫描 κ > 0 区域内的全部平坦根 v (升序)。"""
    b = params["b"]
    grid = np.linspace(1e-4, v_max, 6001)
    kappa = b * grid - grid ** 2 / (1 + grid ** 2)
    h = _sloc_flat_h(grid, params)
    roots = []
    for k in range(grid.size - 1):
        if kappa[k] <= 0 or kappa[k + 1] <= 0:
            continue
        if h[k] == 0:
            roots.append(grid[k])
        elif h[k] * h[k + 1] < 0:
            roots.append(brentq(_sloc_flat_h, grid[k], grid[k + 1], args=(params,),
                                xtol=1e-14))
    return roots


def sloc_flat_seed(params: ModelParams, branch_selector: str, fem: FemOperators,
                   tol: float = NEWTON_TOL) -> np.ndarray:
    """
    浅湖平坦 CSS 初值。

    Step 1: 在 κ > 0 区域扫描平坦根 (由低到高)
    Step 2: 三根时依次为 FSC / FSI / FSM; 两根时为 FSC / FSM;
            单根时 v > 1 视为 FSM, 否则为 FSC
    Step 3: 对二元代数系统做 Newton 精化, 残差 < tol
    """
    selector = branch_selector.upper()
    if selector not in ShallowLakeModel.branches:
        raise InvalidArgumentError(f"未知平坦分支: {branch_selector}")
    roots = sloc_flat_roots(params)
    if len(roots) == 3:
        table = dict(zip(ShallowLakeModel.branches, roots))
    elif len(roots) == 2:
        table = {"FSC": roots[0], "FSM": roots[1]}
    elif len(roots) == 1:
        table = {"FSM" if roots[0] > 1 else "FSC": roots[0]}
    else:
        table = {}
    if selector not in table:
        raise NoConvergenceError(
            f"b = {params['b']:.4g} 处平坦分支 {selector} 不存在 (共 {len(roots)} 个平坦根)"
        )

    v = table[selector]
    b = params["b"]
    x = np.array([v, -1.0 / (b * v - v ** 2 / (1 + v ** 2))])
    model = ShallowLakeModel()
    residuals = []
    for _ in range(20):
        r = _sloc_flat_residual(x, params)
        residuals.append(float(np.max(np.abs(r))))
        if residuals[-1] < tol:
            break
        J = model.dfdu(np.array([[x[0]], [x[1]]]), params)[:, :, 0]
        x = x - np.linalg.solve(J, r)
    else:
        raise NoConvergenceError(f"平坦分支 {selector} 的 Newton 未收敛", residuals)
    logger.debug("sloc 平坦根 %s: v=%.6f λ=%.6f", selector, x[0], x[1])
    return model.flat(x, fem)


# ──────────── 污染模型 ────────────


class PollutionModel(CanonicalModel):
    """
    污染控制 (两状态):
      f = (−κ, v₁ − v₂(1−v₂), ρλ₁ − p − λ₂, (ρ + 1 − 2v₂)λ₂ + β),  κ = −(1+λ₁)/γ
      J_c = p v₁ − β v₂ − (κ + κ²/(2γ))
    """

    N = 2
    defaults = POLLUTION_DEFAULTS
    default_lx = POLLUTION_LX
    default_nx = POLLUTION_NX

    def __init__(self, ode: bool = False):
        self.ode = ode
        self.name = "pollution-ode" if ode else "pollution"

    def diffusion(self, params):
        d1, d2 = params["d1"], params["d2"]
        return np.array([d1, d2, -d1, -d2])

    def f(self, U, params):
        rho, p, beta, gamma = params["rho"], params["p"], params["beta"], params["gamma"]
        v1, v2, l1, l2 = U
        kappa = -(1 + l1) / gamma
        return np.array([
            -kappa,
            v1 - v2 * (1 - v2),
            rho * l1 - p - l2,
            (rho + 1 - 2 * v2) * l2 + beta,
        ])

    def dfdu(self, U, params):
        rho, gamma = params["rho"], params["gamma"]
        v1, v2, l1, l2 = U
        zero = np.zeros_like(v1)
        one = np.ones_like(v1)
        return np.array([
            [zero, zero, one / gamma, zero],
            [one, -(1 - 2 * v2), zero, zero],
            [zero, zero, rho * one, -one],
            [zero, -2 * l2, zero, rho + 1 - 2 * v2],
        ])

    def control(self, U, params):
        return (-(1 + U[2]) / params["gamma"])[None, :]

    def jc(self, U, params):
        p, beta, gamma = params["p"], params["beta"], params["gamma"]
        kappa = self.control(U, params)[0]
        return p * U[0] - beta * U[1] - (kappa + kappa ** 2 / (2 * gamma))


def pollution_flat_css(params: ModelParams, fem: Optional[FemOperators] = None) -> np.ndarray:
    """闭式平坦 CSS u* = (z(1−z), z, −1, −(p+ρ)), z = ½(1+ρ−β/(p+ρ))。"""
    rho, p, beta = params["rho"], params["p"], params["beta"]
    if p + rho <= 0:
        raise InvalidArgumentError(f"需要 p + ρ > 0, 得到 {p + rho}")
    z = 0.5 * (1 + rho - beta / (p + rho))
    values = np.array([z * (1 - z), z, -1.0, -(p + rho)])
    n = 1 if fem is None else fem.n
    return np.repeat(values, n)


def pollution_hopf_k(params: ModelParams, l: int) -> float:
    """
    空间波数 l 的 Hopf 必要条件量:
    K = −(α' + d₂l²)(ρ + α' + d₂l²) − d₁l²(ρ + d₁l²),  α' = 1 − 2z*。
    """
    u = pollution_flat_css(params)
    model = PollutionModel(ode=True)
    jac = model.dfdu(u.reshape(4, 1), params)[:, :, 0]
    jac = jac - np.diag(model.diffusion(params)) * l ** 2
    return dockner_k(jac)


# ──────────── 玩具模型 (toy) ────────────


class ToyModel(CanonicalModel):
    """
    解析可解的 ODE 玩具问题 (无控制, J_c ≡ 0):
      ẋ₁ = ρ(−x₁ − θx₂/ρ + x₁y₁r²),  ẋ₂ = ρ(−x₂ + θx₁/ρ + x₂y₁r²)
      ẏ₁ = ω y₂,  ẏ₂ = ω sin(2πy₁)
    此处 ρ 是动力学参数, 不是贴现率。
    """

    name = "toy"
    N = 2
    ode = True
    discounted = False
    defaults = TOY_DEFAULTS
    labels = ("x1", "x2", "y1", "y2")

    def diffusion(self, params):
        return np.zeros(4)

    def f(self, U, params):
        rho, omega, theta = params["rho"], params["omega"], params["theta"]
        x1, x2, y1, y2 = U
        r2 = x1 ** 2 + x2 ** 2
        return np.array([
            -rho * x1 - theta * x2 + rho * x1 * y1 * r2,
            -rho * x2 + theta * x1 + rho * x2 * y1 * r2,
            omega * y2,
            omega * np.sin(2 * np.pi * y1),
        ])

    def dfdu(self, U, params):
        rho, omega, theta = params["rho"], params["omega"], params["theta"]
        x1, x2, y1, y2 = U
        r2 = x1 ** 2 + x2 ** 2
        zero = np.zeros_like(x1)
        return np.array([
            [-rho + rho * y1 * (r2 + 2 * x1 ** 2), -theta + 2 * rho * y1 * x1 * x2,
             rho * x1 * r2, zero],
            [theta + 2 * rho * y1 * x1 * x2, -rho + rho * y1 * (r2 + 2 * x2 ** 2),
             rho * x2 * r2, zero],
            [zero, zero, zero, omega + zero],
            [zero, zero, 2 * np.pi * omega * np.cos(2 * np.pi * y1), zero],
        ])

    def control(self, U, params):
        return np.zeros((0, U.shape[1]))

    def jc(self, U, params):
        return np.zeros(U.shape[1])


def toy_energy(y1, y2, params: ModelParams):
    """首次积分 E(y) = ½y₂² + (ω²/2π) cos(2πy₁)。"""
    omega = params["omega"]
    return 0.5 * np.asarray(y2) ** 2 + omega ** 2 / (2 * np.pi) * np.cos(2 * np.pi * np.asarray(y1))


def toy_analytics(params: ModelParams) -> dict:
    """解析 CPS û(t) = (cos θt, sin θt, 1, 0)、乘子与能量函数。"""
    rho, omega, theta = params["rho"], params["omega"], params["theta"]
    if min(rho, omega, theta) <= 0:
        raise InvalidArgumentError("玩具模型要求 ρ, ω, θ > 0")
    T_p = 2 * np.pi / theta
    s = np.sqrt(2 * np.pi) * omega

    def orbit(t):
        t = np.asarray(t, dtype=float)
        return np.stack([np.cos(theta * t), np.sin(theta * t),
                         np.ones_like(t), np.zeros_like(t)], axis=-1)

    multipliers = np.array([
        1.0,
        np.exp(-2 * np.pi * s / theta),
        np.exp(4 * np.pi * rho / theta),
        np.exp(2 * np.pi * s / theta),
    ])
    return {
        "cps_orbit": orbit,
        "T_p": T_p,
        "multipliers": multipliers,
        "energy": lambda y1, y2: toy_energy(y1, y2, params),
        "heteroclinic_level": omega ** 2 / (2 * np.pi),
    }


# ──────────── 注册表 ────────────

MODEL_REGISTRY = {
    "sloc": ShallowLakeModel,
    "pollution": lambda: PollutionModel(ode=False),
    "pollution-ode": lambda: PollutionModel(ode=True),
    "toy": ToyModel,
}


def get_model(name: str) -> CanonicalModel:
    try:
        return MODEL_REGISTRY[name]()
    except KeyError:
        raise InvalidArgumentError(
            f"未知模型: {name} (可选: {', '.join(MODEL_REGISTRY)})"
        ) from None
