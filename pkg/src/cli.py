"""
occ 命令行入口。

用法:
    python occ.py <stage> --config run.cfg [key=value ...] [--verbose]

stage: css | swibra | hopf | cps | floquet | path | skiba | value
配置文件为扁平的 key = value 文本 (点号分组, # 注释), 命令行覆盖项最后生效;
未知键一律拒绝。退出码: 0 成功, 2 配置错误, 3 求解失败, 4 鞍点性质不满足。
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from src.chart_renderer import ChartRenderer
from src.config import CLI_STEPS, CONT_PARAM_DEFAULT, CP_ALVIN, LOG_DIR, LOG_FORMAT, PLOT_SUBDIR
from src.cpath import CpSettings, Target, end_deviation, isc, refine_path, tighten_eps
from src.exceptions import (
    AdmissibilityError,
    ConfigurationError,
    FormatError,
    InvalidArgumentError,
    OccError,
    SaddlePointError,
    SolverError,
)
from src.fem1d import FemOperators
from src.models import (
    CanonicalModel,
    ModelParams,
    get_model,
    pollution_flat_css,
    sloc_flat_seed,
    toy_analytics,
)
from src.periodic import CpsOrbit, cps_branch_from_hopf, cps_continue, cps_newton, cps_target, floquet
from src.plot_data import (
    branch_frame,
    cps_branch_frame,
    emit_plot_data,
    multiplier_frame,
    path_frames,
    skiba_frame,
)
from src.skiba import horizon_T, skiba_bisect, skiba_scan
from src.steady import (
    ContinuationSettings,
    continue_css,
    css_target,
    make_point,
    newton_css,
    switch_branch,
)
from src.store import ArtifactStore
from src.value import diagnostics, path_value

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_SPP = 4

STAGES = ("css", "swibra", "hopf", "cps", "floquet", "path", "skiba", "value")


# ──────────── 配置解析 ────────────


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"不是布尔值: {text}")


def _floats(text: str) -> List[float]:
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


def _ints(text: str) -> List[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _optional_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "none") else float(text)


SCHEMA: Dict[str, Callable[[str], Any]] = {
    "stage": str,
    "model": str,
    "out": str,
    "mesh.lx": float,
    "mesh.nx": int,
    # 输入文件
    "input.point": str,
    "input.branch": str,
    "input.orbit": str,
    "input.target": str,
    "input.target_b": str,
    "input.history": str,
    "input.path": str,
    # 稳态与延拓
    "css.guess": str,
    "css.points": _ints,
    "cont.param": str,
    "cont.ds": float,
    "cont.ds_min": float,
    "cont.ds_max": float,
    "cont.tol": float,
    "cont.max_newton": int,
    "cont.steps": int,
    "cont.bif_check": _bool,
    "cont.theta": _optional_float,
    "swibra.event": int,
    "swibra.amplitude": float,
    # 周期轨道
    "hopf.event": int,
    "cps.amplitude": float,
    "cps.mesh": int,
    "cps.analytic": _bool,
    "floquet.anchor": int,
    "target.anchor": int,
    # 典则路径
    "path.v0": _floats,
    "path.alvin": _floats,
    "path.n_arc": int,
    "path.refine": _bool,
    "path.eps_list": _floats,
    # Skiba
    "skiba.value_tol": float,
    "skiba.alpha_tol": float,
    "skiba.max_probes": int,
    # 输出
    "plot.html": _bool,
    "plot.dir": str,
}

_CP_TYPES = {"int": int, "float": float, "bool": _bool, "Optional[float]": _optional_float}
for _f in fields(CpSettings):
    SCHEMA[f"cp.{_f.name}"] = _CP_TYPES[str(_f.type)]


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """解析 key = value 行; 空行与 # 注释忽略, 重复键以后者为准。"""
    raw: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: 缺少 '=': {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"{source}:{lineno}: 键为空")
        raw[key] = value
    return raw


@dataclass
class RunConfig:
    """一次运行的完整配置; values 已按 SCHEMA 转换类型。"""

    stage: str
    model: str
    params: Dict[str, float] = field(default_factory=dict)
    values: Dict[str, Any] = field(default_factory=dict)

    def get(self, key: str, default: Any = None) -> Any:
        return self.values.get(key, default)

    def require(self, key: str) -> Any:
        if key not in self.values:
            raise ConfigurationError(f"stage={self.stage} 需要配置项 {key}")
        return self.values[key]

    def cp_settings(self) -> CpSettings:
        kwargs = {k[3:]: v for k, v in self.values.items() if k.startswith("cp.")}
        return CpSettings(**kwargs)

    def cont_settings(self) -> ContinuationSettings:
        kwargs = {k[5:]: v for k, v in self.values.items()
                  if k.startswith("cont.") and k[5:] in {f.name for f in fields(ContinuationSettings)}}
        return ContinuationSettings(**kwargs)

    @classmethod
    def from_raw(cls, raw: Dict[str, str], stage: Optional[str] = None) -> "RunConfig":
        values: Dict[str, Any] = {}
        params: Dict[str, float] = {}
        for key, text in raw.items():
            if key.startswith("param."):
                conv: Callable[[str], Any] = float
            elif key in SCHEMA:
                conv = SCHEMA[key]
            else:
                raise ConfigurationError(f"未知配置项: {key}")
            try:
                value = conv(text)
            except (TypeError, ValueError) as e:
                raise ConfigurationError(f"配置项 {key} 的值无效: {text!r}") from e
            if key.startswith("param."):
                params[key[6:]] = value
            else:
                values[key] = value
        stage = stage or values.get("stage")
        if stage not in STAGES:
            raise ConfigurationError(f"未知 stage: {stage} (可选: {', '.join(STAGES)})")
        if "model" not in values:
            raise ConfigurationError("缺少配置项 model")
        values["stage"] = stage
        return cls(stage=stage, model=values["model"], params=params, values=values)


def load_config(path: Optional[Path], overrides: Sequence[str] = (),
                stage: Optional[str] = None) -> RunConfig:
    raw: Dict[str, str] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"配置文件不存在: {path}")
        raw.update(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    raw.update(parse_config_text("\n".join(overrides), "<command line>"))
    return RunConfig.from_raw(raw, stage)


# ──────────── 运行上下文 ────────────


@dataclass
class _Context:
    cfg: RunConfig
    model: CanonicalModel
    fem: FemOperators
    params: ModelParams
    store: ArtifactStore

    @property
    def out(self) -> str:
        return self.cfg.get("out", self.cfg.stage)

    @property
    def plot_dir(self) -> Path:
        return self.store.root / self.cfg.get("plot.dir", PLOT_SUBDIR)

    def cont_param(self) -> str:
        return self.cfg.get("cont.param", CONT_PARAM_DEFAULT.get(self.model.name, self.model.rho_name))

    def input_name(self, key: str) -> str:
        name = self.cfg.require(key)
        if not self.store.exists(name):
            raise ConfigurationError(f"target not found: {self.store.path_for(name)}")
        return name

    def plot(self, figures: Dict[str, Any]):
        if not self.cfg.get("plot.html", False):
            return
        for name, fig in figures.items():
            ChartRenderer.write_html(fig, self.plot_dir / f"{self.out}_{name}.html")


def _build_context(cfg: RunConfig, out_dir: Optional[Path]) -> _Context:
    try:
        model = get_model(cfg.model)
        params = model.default_params(**cfg.params)
        fem = model.build_fem(cfg.get("mesh.lx"), cfg.get("mesh.nx"))
    except InvalidArgumentError as e:
        raise ConfigurationError(str(e)) from e
    return _Context(cfg=cfg, model=model, fem=fem, params=params, store=ArtifactStore(out_dir))


def _load_target(ctx: _Context, key: str) -> Target:
    """点文件 → CSS 目标; 轨道文件 → CPS 目标 (锚点 target.anchor)。"""
    name = ctx.input_name(key)
    fmt = ctx.store.format_of(name)
    if fmt == "occ-point":
        point = ctx.store.load_point(name)
        return css_target(ctx.model, ctx.fem, point.u, point.params)
    if fmt == "occ-orbit":
        orbit = ctx.store.load_orbit(name)
        return cps_target(ctx.model, ctx.fem, orbit, ctx.cfg.get("target.anchor", 0))
    raise FormatError(f"{name}: 格式 {fmt} 不能作为目标")


def _initial_states(ctx: _Context) -> np.ndarray:
    """path.v0 给出每个状态分量一个值 (铺到全部节点) 或完整的 N·n 个节点值。"""
    v0 = np.asarray(ctx.cfg.require("path.v0"), dtype=float)
    N, n = ctx.model.N, ctx.fem.n
    if v0.size == N:
        return np.repeat(v0, n)
    if v0.size == N * n:
        return v0
    raise ConfigurationError(f"path.v0 需要 {N} 或 {N * n} 个值, 得到 {v0.size}")


# ──────────── 各 stage ────────────


def _stage_css(ctx: _Context) -> str:
    cfg, model, fem = ctx.cfg, ctx.model, ctx.fem
    if cfg.get("input.point"):
        point = ctx.store.load_point(ctx.input_name("input.point"))
        params = point.params.replace(**cfg.params) if cfg.params else point.params
        guess = point.u
    else:
        params = ctx.params
        if model.name == "sloc":
            guess = sloc_flat_seed(params, cfg.get("css.guess", "FSC"), fem)
        elif model.name.startswith("pollution"):
            guess = pollution_flat_css(params, fem)
        else:
            guess = model.flat(np.zeros(2 * model.N), fem)
    u = newton_css(model, fem, guess, params)
    start = make_point(model, fem, u, params)
    settings = cfg.cont_settings()
    branch = continue_css(model, fem, start, ctx.cont_param(), settings.ds,
                          cfg.get("cont.steps", CLI_STEPS), settings)
    branch.model_name = model.name
    ctx.store.save_branch(f"{ctx.out}_branch", branch)
    for k in cfg.get("css.points", []):
        if not 0 <= k < len(branch.points):
            raise ConfigurationError(f"css.points 中的编号 {k} 越界 (共 {len(branch.points)} 个点)")
        ctx.store.save_point(f"{ctx.out}_pt{k}", branch.points[k])
    emit_plot_data(branch, "branch", ctx.plot_dir, f"{ctx.out}_branch", model, fem)
    ctx.plot({"branch": _branch_figure(branch, model, fem)})
    events = ", ".join(f"{e.kind}@{e.param:.5f}(l={e.spatial_mode})" for e in branch.events)
    return f"css: {len(branch.points)} 个点, 事件: {events or '无'}"


def _branch_figure(branch, model, fem, cps_branch=None):
    cps_df = cps_branch_frame(cps_branch, model, fem) if cps_branch is not None else None
    return ChartRenderer.render_branch(branch_frame(branch, model, fem), cps_df,
                                       param_name=branch.param_name)


def _pick_event(branch, kind: str, index: int):
    events = [e for e in branch.events if e.kind == kind]
    if not events:
        raise ConfigurationError(f"分支上没有 {kind} 事件")
    if not 0 <= index < len(events):
        raise ConfigurationError(f"{kind} 事件编号 {index} 越界 (共 {len(events)} 个)")
    return events[index]


def _stage_swibra(ctx: _Context) -> str:
    cfg = ctx.cfg
    parent = ctx.store.load_branch(ctx.input_name("input.branch"))
    event = _pick_event(parent, "steady", cfg.get("swibra.event", 0))
    settings = cfg.cont_settings()
    branch = switch_branch(ctx.model, ctx.fem, event, parent.param_name,
                           cfg.get("swibra.amplitude", 0.1), cfg.get("cont.steps", CLI_STEPS),
                           settings)
    branch.model_name = ctx.model.name
    ctx.store.save_branch(f"{ctx.out}_branch", branch)
    for k in cfg.get("css.points", []):
        if 0 <= k < len(branch.points):
            ctx.store.save_point(f"{ctx.out}_pt{k}", branch.points[k])
    emit_plot_data(branch, "branch", ctx.plot_dir, f"{ctx.out}_branch", ctx.model, ctx.fem)
    return (f"swibra: 自 {parent.param_name}={event.param:.5f} (l={event.spatial_mode}) "
            f"得到 {len(branch.points)} 个点")


def _save_cps_branch(ctx: _Context, cps) -> None:
    for k, orbit in enumerate(cps.orbits):
        ctx.store.save_orbit(f"{ctx.out}_orbit{k}", orbit)
    emit_plot_data(cps, "cps_branch", ctx.plot_dir, f"{ctx.out}_cps", ctx.model, ctx.fem)


def _stage_hopf(ctx: _Context) -> str:
    cfg = ctx.cfg
    parent = ctx.store.load_branch(ctx.input_name("input.branch"))
    event = _pick_event(parent, "hopf", cfg.get("hopf.event", 0))
    cps = cps_branch_from_hopf(ctx.model, ctx.fem, event, cfg.get("cps.amplitude", 0.1),
                               cfg.get("cont.param", parent.param_name),
                               cfg.get("cont.steps", CLI_STEPS),
                               m_p=cfg.get("cps.mesh", 100), settings=cfg.cont_settings())
    _save_cps_branch(ctx, cps)
    ctx.plot({"bd": _branch_figure(parent, ctx.model, ctx.fem, cps)})
    last = cps.orbits[-1]
    status = " (延拓提前终止)" if cps.failed else ""
    return (f"hopf: {len(cps.orbits)} 条轨道, 末端 {cps.param_name}="
            f"{last.params[cps.param_name]:.5f} T_p={last.T_p:.5f}{status}")


def _stage_cps(ctx: _Context) -> str:
    cfg, model, fem = ctx.cfg, ctx.model, ctx.fem
    if cfg.get("cps.analytic", False):
        if model.name != "toy":
            raise ConfigurationError("cps.analytic 只适用于 toy 模型")
        info = toy_analytics(ctx.params)
        t = np.linspace(0.0, 1.0, cfg.get("cps.mesh", 100) + 1)
        guess = CpsOrbit(t_mesh=t, u=info["cps_orbit"](t * info["T_p"]), T_p=info["T_p"],
                         params=ctx.params, model_name=model.name)
        params = ctx.params
    else:
        guess = ctx.store.load_orbit(ctx.input_name("input.orbit"))
        params = guess.params.replace(**cfg.params) if cfg.params else guess.params
    orbit = cps_newton(model, fem, guess, params)
    steps = cfg.get("cont.steps", 0)
    settings = cfg.cont_settings()
    cps = cps_continue(model, fem, orbit, ctx.cont_param(), settings.ds, steps, settings)
    _save_cps_branch(ctx, cps)
    last = cps.orbits[-1]
    return f"cps: {len(cps.orbits)} 条轨道, T_p={last.T_p:.6f}, 振幅={last.amplitude:.4e}"


def _stage_floquet(ctx: _Context) -> str:
    orbit = ctx.store.load_orbit(ctx.input_name("input.orbit"))
    res = floquet(ctx.model, ctx.fem, orbit, ctx.cfg.get("floquet.anchor", 0))
    emit_plot_data(res, "multipliers", ctx.plot_dir, f"{ctx.out}_multipliers")
    ctx.plot({"multipliers": ChartRenderer.render_multipliers(multiplier_frame(res))})
    gammas = ", ".join(f"{g:.6e}" for g in np.abs(res.multipliers))
    return f"floquet: |γ| = [{gammas}], |γ₁−1| = {res.trivial_error:.2e}"


def _stage_path(ctx: _Context) -> str:
    cfg, model, fem = ctx.cfg, ctx.model, ctx.fem
    target = _load_target(ctx, "input.target")
    settings = cfg.cp_settings()
    v0 = _initial_states(ctx)
    path, history = isc(model, fem, target, v0, cfg.get("path.alvin", CP_ALVIN),
                        n_arc=cfg.get("path.n_arc", 0), settings=settings)
    if not history.stalled:
        if cfg.get("path.refine", False):
            path = refine_path(model, fem, path, target, settings)
        if cfg.get("path.eps_list") and target.kind == "css":
            path = tighten_eps(model, fem, path, target, cfg.get("path.eps_list"), settings)[-1]

    ctx.store.save_path(f"{ctx.out}_path", path, extra={"target": cfg.get("input.target")})
    ctx.store.save_history(f"{ctx.out}_history", history)
    diag = diagnostics(model, fem, path, target)
    emit_plot_data(path, "path", ctx.plot_dir, f"{ctx.out}_path", model, fem)
    emit_plot_data(diag, "diagnostics", ctx.plot_dir, f"{ctx.out}_diagnostics")
    ctx.plot({"path": ChartRenderer.render_path(path_frames(path, model, fem))})
    if history.stalled:
        raise SolverError(f"典则路径在 α={path.alpha:.4f} 处停滞, 已保存部分结果")
    return (f"path: α={path.alpha:.4f} T={path.T:.5f} J={diag.J:.6e} "
            f"‖u(1)−û‖∞={end_deviation(path, target):.2e}")


def _stage_skiba(ctx: _Context) -> str:
    cfg = ctx.cfg
    history = ctx.store.load_history(ctx.input_name("input.history"))
    target_A = _load_target(ctx, "input.target")
    target_B = _load_target(ctx, "input.target_b")
    needed = horizon_T(ctx.model, ctx.fem, [target_A, target_B])
    if history.Ts and max(history.Ts) < needed:
        logger.warning("历史截断时间 T = %.1f 短于价值尾项要求的 %.1f, 可用 cp.T 加长",
                       max(history.Ts), needed)
    scan = skiba_scan(ctx.model, ctx.fem, history, target_B, cfg.cp_settings(), target_A=target_A)
    emit_plot_data(scan, "skiba", ctx.plot_dir, f"{ctx.out}_scan")
    kwargs = {k[6:]: cfg.get(k) for k in ("skiba.value_tol", "skiba.alpha_tol", "skiba.max_probes")
              if k in cfg.values}
    result = skiba_bisect(scan, **kwargs)
    # 二分探测点已并入扫描表, 重写一次
    emit_plot_data(scan, "skiba", ctx.plot_dir, f"{ctx.out}_scan")
    ctx.plot({"skiba": ChartRenderer.render_skiba(skiba_frame(scan), result.alpha_star)})
    return (f"skiba: α* = {result.alpha_star:.5f} ∈ [{result.bracket[0]:.5f}, "
            f"{result.bracket[1]:.5f}], J_A={result.J_A:.6e}, J_B={result.J_B:.6e}")


def _stage_value(ctx: _Context) -> str:
    path = ctx.store.load_path(ctx.input_name("input.path"))
    target = _load_target(ctx, "input.target")
    J = path_value(ctx.model, ctx.fem, path, target.params)
    diag = diagnostics(ctx.model, ctx.fem, path, target)
    emit_plot_data(diag, "diagnostics", ctx.plot_dir, f"{ctx.out}_diagnostics")
    return f"value: J={J:.10e}  dev_inf={diag.dev_inf:.3e}  dev_2={diag.dev_2:.3e}"


STAGE_RUNNERS: Dict[str, Callable[[_Context], str]] = {
    "css": _stage_css,
    "swibra": _stage_swibra,
    "hopf": _stage_hopf,
    "cps": _stage_cps,
    "floquet": _stage_floquet,
    "path": _stage_path,
    "skiba": _stage_skiba,
    "value": _stage_value,
}


# ──────────── 日志 / 入口 ────────────


def setup_logging(verbose: bool = False, log_file: Optional[Path] = None) -> None:
    """控制台 (stdout) 输出消息本身, 日志文件带时间戳; 重复调用会替换旧 handler。"""
    root = logging.getLogger("src")
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    for h in list(root.handlers):
        root.removeHandler(h)
        h.close()
    console = logging.StreamHandler(sys.stdout)
    console.setFormatter(logging.Formatter("%(message)s"))
    root.addHandler(console)
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        fh = logging.FileHandler(log_file, mode="w", encoding="utf-8")
        fh.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(fh)
    root.propagate = False


def run(cfg: RunConfig, out_dir: Optional[Path] = None) -> int:
    """执行一个 stage 并返回退出码; 领域错误在此转换为退出码。"""
    try:
        ctx = _build_context(cfg, out_dir)
        summary = STAGE_RUNNERS[cfg.stage](ctx)
    except (ConfigurationError, FormatError) as e:
        logger.error("配置错误: %s", e)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        logger.error("target not found: %s", e.filename)
        return EXIT_CONFIG
    except SaddlePointError as e:
        logger.error("鞍点性质不满足 (亏量 %d): %s", e.defect, e)
        return EXIT_SPP
    except (SolverError, AdmissibilityError) as e:
        logger.error("求解失败: %s", e)
        return EXIT_SOLVER
    except InvalidArgumentError as e:
        logger.error("参数无效: %s", e)
        return EXIT_CONFIG
    except OccError as e:
        logger.error("运行失败: %s", e)
        return EXIT_SOLVER
    logger.info(summary)
    return EXIT_OK


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="occ", description="分布式最优控制的典则系统求解器")
    parser.add_argument("stage", choices=STAGES, help="要执行的计算阶段")
    parser.add_argument("overrides", nargs="*", metavar="key=value", help="覆盖配置文件中的项")
    parser.add_argument("--config", type=Path, default=None, help="运行配置文件")
    parser.add_argument("--out-dir", type=Path, default=None,
                        help="输出目录 (缺省为 OCC_OUT_DIR 或 data/out)")
    parser.add_argument("--verbose", action="store_true", help="输出 DEBUG 级日志")
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    setup_logging(args.verbose, LOG_DIR / f"occ_{args.stage}.log")
    try:
        cfg = load_config(args.config, args.overrides, args.stage)
    except ConfigurationError as e:
        logger.error("配置错误: %s", e)
        return EXIT_CONFIG
    return run(cfg, args.out_dir)


if __name__ == "__main__":
    sys.exit(main())
