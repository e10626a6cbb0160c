"""
结果存储模块: 行式文本文件。
保存/读取 CSS 点、分支 (含分岔事件)、周期轨道、典则路径与 isc 运行记录。

文件结构:
    #OCC {"columns": [...], "dims": {...}, "format": "occ-path", "meta": {...}, "rows": R, "version": [1, 0]}
    <R 行数值, %.17g, 空格分隔>
    #END
末行 #END 缺失即视为截断。
"""
from __future__ import annotations

import io
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from src.config import FLOAT_FMT, FORMAT_MAGIC, FORMAT_TRAILER, FORMAT_VERSION, OUT_DIR_ENV, OUTPUT_DIR
from src.cpath import CanonicalPath, CpHistory
from src.exceptions import FormatError
from src.models import ModelParams
from src.periodic import CpsOrbit
from src.steady import BifurcationEvent, Branch, BranchPoint

logger = logging.getLogger(__name__)

SUFFIX = ".occ"


def default_root() -> Path:
    """输出根目录, 环境变量 OCC_OUT_DIR 优先。"""
    env = os.environ.get(OUT_DIR_ENV)
    return Path(env) if env else Path(OUTPUT_DIR)


# ──────────── 表格读写 ────────────


def write_table(path: Path, fmt: str, columns: List[str], rows: np.ndarray,
                meta: Dict[str, Any], dims: Optional[Dict[str, int]] = None) -> Path:
    rows = np.asarray(rows, dtype=float).reshape(-1, len(columns))
    header = {
        "format": fmt,
        "version": list(FORMAT_VERSION),
        "dims": dims or {},
        "columns": columns,
        "meta": meta,
        "rows": int(rows.shape[0]),
    }
    buf = io.StringIO()
    buf.write(f"{FORMAT_MAGIC} {json.dumps(header, sort_keys=True, ensure_ascii=False)}\n")
    if rows.size:
        np.savetxt(buf, rows, fmt=FLOAT_FMT, delimiter=" ")
    buf.write(f"{FORMAT_TRAILER}\n")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(buf.getvalue())
    return path


def read_table(path: Path, fmt: str) -> Tuple[Dict[str, Any], np.ndarray]:
    """读取并校验文件, 返回 (header, rows); 任何不一致都抛出 FormatError。"""
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()

    if not lines or not lines[0].startswith(FORMAT_MAGIC + " "):
        raise FormatError(f"{path}: 缺少 {FORMAT_MAGIC} 文件头")
    try:
        header = json.loads(lines[0][len(FORMAT_MAGIC) + 1:])
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: 文件头不是合法 JSON") from e

    if header.get("format") != fmt:
        raise FormatError(f"{path}: 格式为 {header.get('format')!r}, 期望 {fmt!r}")
    version = header.get("version") or [0, 0]
    if int(version[0]) > FORMAT_VERSION[0]:
        raise FormatError(f"{path}: 版本 {version} 高于支持的主版本 {FORMAT_VERSION[0]}")

    body = [ln for ln in lines[1:] if ln.strip()]
    if not body or body[-1].strip() != FORMAT_TRAILER:
        raise FormatError(f"{path}: 文件被截断 (缺少 {FORMAT_TRAILER})")
    body = body[:-1]
    n_rows, n_cols = int(header.get("rows", -1)), len(header.get("columns", []))
    if len(body) != n_rows:
        raise FormatError(f"{path}: 行数 {len(body)} 与文件头声明的 {n_rows} 不符")
    if n_rows == 0:
        return header, np.empty((0, n_cols))
    try:
        rows = np.loadtxt(io.StringIO("\n".join(body)), dtype=float, ndmin=2)
    except ValueError as e:
        raise FormatError(f"{path}: 数值行无法解析") from e
    if rows.shape[1] != n_cols:
        raise FormatError(f"{path}: 列数 {rows.shape[1]} 与列名个数 {n_cols} 不符")
    return header, rows


# ──────────── 元数据编码 ────────────


def _params_meta(params: ModelParams) -> Dict[str, Any]:
    return {"names": list(params.names), "values": list(params.values),
            "rho_index": params.rho_index}


def _params_from(meta: Dict[str, Any]) -> ModelParams:
    return ModelParams(tuple(meta["names"]), tuple(float(v) for v in meta["values"]),
                       int(meta["rho_index"]))


def _event_meta(ev: BifurcationEvent) -> Dict[str, Any]:
    out = {
        "kind": ev.kind,
        "param": float(ev.param),
        "spatial_mode": int(ev.spatial_mode),
        "index": int(ev.index),
        "mu": [float(np.real(ev.mu)), float(np.imag(ev.mu))],
        "params": _params_meta(ev.params),
        "u": np.asarray(ev.u, dtype=float).tolist(),
    }
    if ev.phi is not None:
        phi = np.asarray(ev.phi, dtype=complex)
        out["phi_re"] = phi.real.tolist()
        out["phi_im"] = phi.imag.tolist()
    return out


def _event_from(meta: Dict[str, Any]) -> BifurcationEvent:
    phi = None
    if "phi_re" in meta:
        phi = np.asarray(meta["phi_re"]) + 1j * np.asarray(meta["phi_im"])
    return BifurcationEvent(
        kind=meta["kind"],
        param=float(meta["param"]),
        spatial_mode=int(meta["spatial_mode"]),
        u=np.asarray(meta["u"], dtype=float),
        params=_params_from(meta["params"]),
        mu=complex(*meta["mu"]),
        phi=phi,
        index=int(meta["index"]),
    )


def _u_columns(n_u: int) -> List[str]:
    return [f"u{i}" for i in range(n_u)]


# ──────────── 存储器 ────────────


class ArtifactStore:
    """目录级结果存储; name 不带后缀时补 .occ, 相对路径落在 root 下。"""

    def __init__(self, root: Optional[Union[str, Path]] = None):
        self.root = Path(root) if root is not None else default_root()
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, name: Union[str, Path]) -> Path:
        p = Path(name)
        if not p.suffix:
            p = p.with_suffix(SUFFIX)
        return p if p.is_absolute() else self.root / p

    def exists(self, name: Union[str, Path]) -> bool:
        return self.path_for(name).exists()

    # ── CSS 点 ──

    def save_point(self, name: str, point: BranchPoint) -> Path:
        meta = {
            "params": _params_meta(point.params),
            "arclength": float(point.arclength),
            "j_ca": float(point.j_ca),
            "n_neg": int(point.n_neg),
            "stability": point.stability,
            "tangent_p": float(point.tangent_p),
        }
        u = np.asarray(point.u, dtype=float)
        return write_table(self.path_for(name), "occ-point", _u_columns(u.size), u[None, :], meta,
                           dims={"n_u": u.size})

    def load_point(self, name: str) -> BranchPoint:
        header, rows = read_table(self.path_for(name), "occ-point")
        if rows.shape[0] != 1:
            raise FormatError(f"{name}: CSS 点文件应只有一行, 实际 {rows.shape[0]}")
        meta = header["meta"]
        return BranchPoint(
            u=rows[0].copy(),
            params=_params_from(meta["params"]),
            arclength=float(meta["arclength"]),
            j_ca=float(meta["j_ca"]),
            n_neg=int(meta["n_neg"]),
            stability=meta["stability"],
            tangent_p=float(meta["tangent_p"]),
        )

    # ── 分支 ──

    def save_branch(self, name: str, branch: Branch) -> Path:
        """每行一个点: (param, arclength, j_ca, n_neg, tangent_p, u...)。"""
        n_u = branch.points[0].u.size if branch.points else 0
        columns = ["param", "arclength", "j_ca", "n_neg", "tangent_p"] + _u_columns(n_u)
        rows = np.array([
            [pt.params[branch.param_name], pt.arclength, pt.j_ca, pt.n_neg, pt.tangent_p, *pt.u]
            for pt in branch.points
        ]).reshape(-1, len(columns))
        meta = {
            "model": branch.model_name,
            "param_name": branch.param_name,
            "params": _params_meta(branch.points[0].params) if branch.points else None,
            "stability": [pt.stability for pt in branch.points],
            "events": [_event_meta(ev) for ev in branch.events],
            "failed": bool(branch.failed),
            "theta": float(branch.theta),
        }
        return write_table(self.path_for(name), "occ-branch", columns, rows, meta,
                           dims={"n_u": n_u, "points": len(branch.points)})

    def load_branch(self, name: str) -> Branch:
        header, rows = read_table(self.path_for(name), "occ-branch")
        meta = header["meta"]
        branch = Branch(model_name=meta["model"], param_name=meta["param_name"],
                        failed=bool(meta.get("failed", False)),
                        theta=float(meta.get("theta", 1.0)))
        if rows.shape[0]:
            base = _params_from(meta["params"])
            stability = meta["stability"]
            if len(stability) != rows.shape[0]:
                raise FormatError(f"{name}: 稳定性标签个数与点数不符")
            for row, tag in zip(rows, stability):
                branch.points.append(BranchPoint(
                    u=row[5:].copy(),
                    params=base.replace(**{branch.param_name: row[0]}),
                    arclength=float(row[1]),
                    j_ca=float(row[2]),
                    n_neg=int(row[3]),
                    stability=tag,
                    tangent_p=float(row[4]),
                ))
        branch.events = [_event_from(ev) for ev in meta.get("events", [])]
        return branch

    # ── 周期轨道 ──

    def save_orbit(self, name: str, orbit: CpsOrbit) -> Path:
        n_u = orbit.u.shape[1]
        rows = np.hstack([orbit.t_mesh[:, None], orbit.u])
        meta = {
            "T_p": float(orbit.T_p),
            "params": _params_meta(orbit.params),
            "model": orbit.model_name,
            "degenerate": bool(orbit.degenerate),
        }
        return write_table(self.path_for(name), "occ-orbit", ["t"] + _u_columns(n_u), rows, meta,
                           dims={"n_u": n_u, "m": orbit.m})

    def load_orbit(self, name: str) -> CpsOrbit:
        header, rows = read_table(self.path_for(name), "occ-orbit")
        meta = header["meta"]
        return CpsOrbit(
            t_mesh=rows[:, 0].copy(),
            u=rows[:, 1:].copy(),
            T_p=float(meta["T_p"]),
            params=_params_from(meta["params"]),
            model_name=meta.get("model", ""),
            degenerate=bool(meta.get("degenerate", False)),
        )

    # ── 典则路径 ──

    def save_path(self, name: str, path: CanonicalPath,
                  extra: Optional[Dict[str, Any]] = None) -> Path:
        n_u = path.u.shape[1]
        rows = np.hstack([path.t_mesh[:, None], path.u])
        meta = {
            "T": float(path.T),
            "alpha": float(path.alpha),
            "target_kind": path.target_kind,
            "free_T": bool(path.free_T),
            "eps2": None if path.eps2 is None else float(path.eps2),
        }
        if extra:
            meta["extra"] = extra
        return write_table(self.path_for(name), "occ-path", ["t"] + _u_columns(n_u), rows, meta,
                           dims={"n_u": n_u, "m": path.m})

    def load_path(self, name: str) -> CanonicalPath:
        header, rows = read_table(self.path_for(name), "occ-path")
        meta = header["meta"]
        eps2 = meta.get("eps2")
        return CanonicalPath(
            t_mesh=rows[:, 0].copy(),
            u=rows[:, 1:].copy(),
            T=float(meta["T"]),
            alpha=float(meta["alpha"]),
            target_kind=meta["target_kind"],
            free_T=bool(meta.get("free_T", False)),
            eps2=None if eps2 is None else float(eps2),
        )

    def load_path_extra(self, name: str) -> Dict[str, Any]:
        header, _ = read_table(self.path_for(name), "occ-path")
        return header["meta"].get("extra", {})

    # ── isc 运行记录 ──

    def save_history(self, name: str, history: CpHistory) -> Path:
        """保存 (α, J, T, v0(α)) 序列与同伦端点; 中间路径不保存。"""
        n_s = history.v0_star.size if history.v0_star is not None else 0
        columns = ["alpha", "J", "T"] + [f"v{i}" for i in range(n_s)]
        rows = np.array([
            [a, J, T, *v0] for a, J, T, v0 in
            zip(history.alphas, history.values, history.Ts, history.v0s)
        ]).reshape(-1, len(columns))
        meta = {
            "v0_star": None if history.v0_star is None else history.v0_star.tolist(),
            "v_base": None if history.v_base is None else history.v_base.tolist(),
            "sigma": None if history.sigma is None else float(history.sigma),
            "stalled": bool(history.stalled),
        }
        return write_table(self.path_for(name), "occ-history", columns, rows, meta,
                           dims={"n_states": n_s, "steps": rows.shape[0]})

    def load_history(self, name: str) -> CpHistory:
        header, rows = read_table(self.path_for(name), "occ-history")
        meta = header["meta"]
        hist = CpHistory(
            alphas=rows[:, 0].tolist(),
            values=rows[:, 1].tolist(),
            Ts=rows[:, 2].tolist(),
            v0s=[r[3:].copy() for r in rows],
            sigma=meta.get("sigma"),
            stalled=bool(meta.get("stalled", False)),
        )
        if meta.get("v0_star") is not None:
            hist.v0_star = np.asarray(meta["v0_star"], dtype=float)
        if meta.get("v_base") is not None:
            hist.v_base = np.asarray(meta["v_base"], dtype=float)
        logger.debug("读取 isc 记录 %s: %d 步", name, len(hist.alphas))
        return hist

    def format_of(self, name: str) -> str:
        """只读文件头, 返回格式名 (occ-point / occ-orbit / ...)。"""
        path = self.path_for(name)
        with open(path, "r", encoding="utf-8") as f:
            first = f.readline()
        if not first.startswith(FORMAT_MAGIC + " "):
            raise FormatError(f"{path}: 缺少 {FORMAT_MAGIC} 文件头")
        try:
            return json.loads(first[len(FORMAT_MAGIC) + 1:])["format"]
        except (json.JSONDecodeError, KeyError) as e:
            raise FormatError(f"{path}: 文件头无法解析") from e
