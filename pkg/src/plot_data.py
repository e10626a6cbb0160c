"""
绘图数据导出。
把分支、路径、诊断量、Skiba 扫描与 Floquet 乘子整理成 DataFrame 并写成 CSV;
列名固定, 空对象写出只有表头的文件。
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from src.config import FLOAT_FMT
from src.cpath import CanonicalPath
from src.exceptions import InvalidArgumentError
from src.fem1d import FemOperators
from src.models import CanonicalModel
from src.periodic import CpsBranch, CpsTarget, FloquetResult, cps_value
from src.skiba import SkibaScan
from src.steady import Branch
from src.value import PathDiagnostics

logger = logging.getLogger(__name__)

BRANCH_COLUMNS = ["param", "norm_u", "j_ca", "stability"]
HEATMAP_COLUMNS = ["t", "x", "component", "value"]
DIAGNOSTIC_COLUMNS = ["t", "dev", "jca", "discounted"]
SKIBA_COLUMNS = ["alpha", "J_A", "J_B"]
MULTIPLIER_COLUMNS = ["index", "re", "im", "abs"]
CPS_BRANCH_COLUMNS = ["param", "T_p", "amplitude", "J_phase0", "J_half"]


def _state_norm(u: np.ndarray, model: Optional[CanonicalModel],
                fem: Optional[FemOperators]) -> float:
    """状态部分的 L² 均值范数 (|Ω|⁻¹ Σ vᵢᵀMvᵢ / N)^{1/2}; 无模型信息时取全向量 RMS。"""
    if model is None or fem is None:
        return float(np.sqrt(np.mean(np.square(u))))
    V = model.split(u, fem)[: model.N]
    sq = sum(float(v @ (fem.M @ v)) for v in V)
    return float(np.sqrt(sq / (model.N * fem.volume)))


# ──────────── DataFrame 构造 ────────────


def branch_frame(branch: Branch, model: Optional[CanonicalModel] = None,
                 fem: Optional[FemOperators] = None) -> pd.DataFrame:
    rows = [(pt.params[branch.param_name], _state_norm(pt.u, model, fem), pt.j_ca, pt.stability)
            for pt in branch.points]
    return pd.DataFrame(rows, columns=BRANCH_COLUMNS)


def path_frames(path: CanonicalPath, model: CanonicalModel,
                fem: FemOperators) -> Dict[str, pd.DataFrame]:
    """
    ODE 模型: 每个分量一张时间序列表 (t, <分量名>), t 为未缩放时间 t·T。
    PDE 模型: 一张长表 (t, x, component, value), 适合画时空热图。
    """
    labels = model.component_labels()
    t = path.times()
    if fem.is_ode:
        return {
            label: pd.DataFrame({"t": t, label: path.u[:, i]})
            for i, label in enumerate(labels)
        }
    x = fem.mesh.nodes
    n = fem.n
    frames = []
    for i, label in enumerate(labels):
        block = path.u[:, i * n:(i + 1) * n]
        frames.append(pd.DataFrame({
            "t": np.repeat(t, n),
            "x": np.tile(x, t.size),
            "component": label,
            "value": block.ravel(),
        }))
    return {"heatmap": pd.concat(frames, ignore_index=True)[HEATMAP_COLUMNS]}


def diagnostics_frame(diag: PathDiagnostics) -> pd.DataFrame:
    return pd.DataFrame({"t": diag.t, "dev": diag.dev_t, "jca": diag.jca,
                         "discounted": diag.discounted}, columns=DIAGNOSTIC_COLUMNS)


def skiba_frame(scan: SkibaScan) -> pd.DataFrame:
    return pd.DataFrame(scan.table(), columns=SKIBA_COLUMNS)


def multiplier_frame(source: Union[FloquetResult, CpsTarget, np.ndarray]) -> pd.DataFrame:
    gamma = np.asarray(getattr(source, "multipliers", source), dtype=complex).ravel()
    return pd.DataFrame({
        "index": np.arange(1, gamma.size + 1),
        "re": gamma.real,
        "im": gamma.imag,
        "abs": np.abs(gamma),
    }, columns=MULTIPLIER_COLUMNS)


def cps_branch_frame(branch: CpsBranch, model: CanonicalModel,
                     fem: FemOperators) -> pd.DataFrame:
    """每条轨道在相位 0 与半周期处的价值 (无贴现模型记为 NaN)。"""
    rows = []
    for orbit, p in zip(branch.orbits, branch.param_values()):
        if model.discounted:
            j0 = cps_value(model, fem, orbit, 0.0)
            jh = cps_value(model, fem, orbit, 0.5 * orbit.T_p)
        else:
            j0 = jh = float("nan")
        rows.append((p, orbit.T_p, orbit.amplitude, j0, jh))
    return pd.DataFrame(rows, columns=CPS_BRANCH_COLUMNS)


# ──────────── 写出 ────────────


def _write(df: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FMT, lineterminator="\n")
    return path


def emit_plot_data(obj, kind: str, out_dir: Union[str, Path], name: str,
                   model: Optional[CanonicalModel] = None,
                   fem: Optional[FemOperators] = None) -> List[Path]:
    """
    按 kind 写出 CSV, 返回文件列表。

    Args:
        obj: 与 kind 对应的对象
        kind: "branch" | "path" | "diagnostics" | "skiba" | "multipliers" | "cps_branch"
        out_dir: 输出目录
        name: 文件名前缀
        model, fem: path / cps_branch 必需, branch 可选 (用于状态范数)
    """
    out_dir = Path(out_dir)
    if kind == "branch":
        frames = {"": branch_frame(obj, model, fem)}
    elif kind == "path":
        if model is None or fem is None:
            raise InvalidArgumentError("path 数据需要 model 与 fem")
        frames = {f"_{k}": v for k, v in path_frames(obj, model, fem).items()}
    elif kind == "diagnostics":
        frames = {"": diagnostics_frame(obj)}
    elif kind == "skiba":
        frames = {"": skiba_frame(obj)}
    elif kind == "multipliers":
        frames = {"": multiplier_frame(obj)}
    elif kind == "cps_branch":
        if model is None or fem is None:
            raise InvalidArgumentError("cps_branch 数据需要 model 与 fem")
        frames = {"": cps_branch_frame(obj, model, fem)}
    else:
        raise InvalidArgumentError(f"未知绘图数据类型: {kind}")

    written = [_write(df, out_dir / f"{name}{suffix}.csv") for suffix, df in frames.items()]
    logger.info("绘图数据 (%s): %s", kind, ", ".join(p.name for p in written))
    return written
