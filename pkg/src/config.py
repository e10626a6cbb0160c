"""
occ 全局配置常量。
所有默认值均可在运行配置文件 (key = value) 或命令行覆盖项中重新设置。
"""
import math
import os
from pathlib import Path

# ──────────────── 路径配置 ────────────────
PROJECT_ROOT = Path(__file__).parent.parent  # occ/
DATA_DIR = PROJECT_ROOT / "data"
OUTPUT_DIR = Path(os.environ.get("OCC_OUT_DIR", DATA_DIR / "out"))
LOG_DIR = DATA_DIR / "logs"
OUT_DIR_ENV = "OCC_OUT_DIR"

# ──────────────── 文件格式 ────────────────
FORMAT_MAGIC = "#OCC"
FORMAT_VERSION = (1, 0)     # (major, minor), 读取端拒绝更高 major
FORMAT_TRAILER = "#END"
FLOAT_FMT = "%.17g"         # 双精度无损往返

# ──────────────── Newton / 稳态 ────────────────
NEWTON_TOL = 1e-10          # CSS 残差 (sup 范数)
NEWTON_MAX_ITER = 20
MARGINAL_RE = 1e-10         # |Re μ| 小于该值视为临界: 不计入稳定, 亏量因此增加
FD_STEP = 1e-6              # 参数方向有限差分步长

# ──────────────── 弧长延拓 ────────────────
CONT_DS = 0.01
CONT_DS_MIN = 1e-5
CONT_DS_MAX = 0.05
CONT_TOL = 1e-9
CONT_MAX_NEWTON = 8
CONT_EASY_ITERS = 3         # 迭代次数 ≤ 该值视为 "轻松" 收敛
CONT_EASY_STREAK = 3        # 连续轻松收敛次数达到后步长加倍
BIF_LOC_TOL = 1e-3          # 分岔点参数定位精度
HOPF_IM_TOL = 1e-6          # |Im μ| 大于该值判为 Hopf

# ──────────────── 周期轨道 / Floquet ────────────────
CPS_MESH = 100              # 周期轨道默认时间网格点数
CPS_MESH_MIN = 20
CPS_TOL = 1e-8
CPS_MAX_NEWTON = 15
DEGENERATE_AMP = 1e-8       # 振幅低于该值视为退化为 CSS
TRIVIAL_MULT_TOL = 1e-8     # |γ₁−1| 超出该值时给出警告
PSCHUR_MAX_SWEEPS = 60      # 每个特征值允许的最大 QR 扫描次数

# ──────────────── 典则路径 (CP) ────────────────
CP_NTI = 50                 # 初始时间网格点数
CP_NTP = 2                  # CPS 目标的 T 初值 = nTp * T_p
CP_EPS_INF = math.inf       # sup 范数终点偏差门限, 默认不启用
CP_SIG = 0.1                # 弧长步长 σ
CP_SIGMIN = 1e-2
CP_SIGMAX = 10.0
CP_XI = 1e-3                # 割线权重 ξ
CP_TOL = 1e-8               # BVP Newton 容差 (sup 范数)
CP_MAX_NEWTON = 10
CP_DAMPING_STEPS = 4        # CP Newton 回溯阻尼的最多减半次数
CP_MAX_HALVINGS = 4         # 自然延拓中 α 步长最多减半次数
CP_MIN_DALPHA = 1e-3
CP_T_CAP_PERIODS = 20       # CPS 目标下 T 的上限 (以 T_p 计)
CP_EPS2_FACTOR = 0.1        # ε 初值 = 0.1 * ‖u(1)−û‖∞
CP_ALVIN = (0.25, 0.5, 0.75, 1.0)   # 冷启动的 α 目标序列

# ──────────────── Skiba ────────────────
SKIBA_VALUE_TOL = 1e-4
SKIBA_ALPHA_TOL = 1e-3

# ──────────────── 模型默认参数 ────────────────
SLOC_DEFAULTS = {"b": 0.65, "rho": 0.03, "gamma": 0.5, "D": 0.5}
SLOC_LX = 2 * math.pi / 0.44    # 半区间长度, 容纳首个 Turing 波数
SLOC_NX = 40
POLLUTION_DEFAULTS = {
    "rho": 0.5, "p": 1.0, "beta": 0.2, "gamma": 300.0, "d1": 0.001, "d2": 0.2,
}
POLLUTION_LX = math.pi / 2      # Ω = (−π/2, π/2)
POLLUTION_NX = 20               # 21 个节点
TOY_DEFAULTS = {"rho": 1.0, "omega": 1.0, "theta": 1.0}

# ──────────────── 命令行 ────────────────
CONT_PARAM_DEFAULT = {          # 各模型缺省的延拓参数
    "sloc": "b", "pollution": "rho", "pollution-ode": "rho", "toy": "omega",
}
CLI_STEPS = 50                  # cont.steps 缺省值
PLOT_SUBDIR = "plot"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
