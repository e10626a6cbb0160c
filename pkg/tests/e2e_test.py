"""
occ 端到端验收脚本。
在台式机规模 (PDE 21 个节点, 时间网格 ≤ 400, 玩具模型的高精度项除外) 上复算各项数值结论,
逐项打印 ✅ / ❌ 与实测值, 最后给出综合结论。单元测试不依赖本脚本。

用法:
    python tests/e2e_test.py            # 全部验收点
    python tests/e2e_test.py 1 2 5      # 只跑指定编号
"""
import argparse
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.config import CP_ALVIN  # noqa: E402
from src.cpath import CpSettings, end_deviation, isc  # noqa: E402
from src.models import (  # noqa: E402
    PollutionModel,
    ShallowLakeModel,
    ToyModel,
    pollution_flat_css,
    sloc_flat_roots,
    sloc_flat_seed,
    toy_analytics,
    toy_energy,
)
from src.periodic import CpsOrbit, cps_branch_from_hopf, cps_newton, cps_target, floquet  # noqa: E402
from src.skiba import horizon_T, skiba_bisect, skiba_scan  # noqa: E402
from src.steady import ContinuationSettings, continue_css, css_target, make_point, newton_css  # noqa: E402
from src.value import path_value  # noqa: E402

# 测试结果收集
results = {
    "checks": [],
    "errors": [],
}

TOY_M_P = 400
TOY_M_P_FINE = 2400          # 梯形离散的乘子误差 O(m⁻²), 1e−4 相对精度需要更细的网格


def record(number: int, name: str, passed: bool, detail: str, seconds: float):
    results["checks"].append((number, name, passed, detail, seconds))
    icon = "✅" if passed else "❌"
    print(f"  {icon} {detail}  ({seconds:.1f}s)")


# ──────────── 共享构造 ────────────


def toy_cps(m_p: int, **overrides):
    model = ToyModel()
    fem = model.build_fem()
    params = model.default_params(**overrides)
    info = toy_analytics(params)
    t = np.linspace(0.0, 1.0, m_p + 1)
    guess = CpsOrbit(t_mesh=t, u=info["cps_orbit"](t * info["T_p"]), T_p=info["T_p"],
                     params=params, model_name=model.name)
    return model, fem, cps_newton(model, fem, guess), info


def leading_stable(result) -> float:
    """模最大的非平凡稳定乘子 |γ₂|。"""
    return float(np.max(np.abs(result.multipliers[result.stable_mask()])))


def circular_distance(x: float, y: float, period: float) -> float:
    return abs((x - y + period / 2) % period - period / 2)


_cache = {}


def pollution_hopf_events(ode: bool):
    key = ("hopf", ode)
    if key not in _cache:
        model = PollutionModel(ode=ode)
        fem = model.build_fem()
        params = model.default_params()
        start = make_point(model, fem, pollution_flat_css(params, fem), params)
        branch = continue_css(model, fem, start, "rho", 0.01, 15,
                              ContinuationSettings(ds_max=0.01))
        _cache[key] = (model, fem, [e for e in branch.events if e.kind == "hopf"])
    return _cache[key]


def orbit_at(model, fem, event, rho: float, m_p: int = 50, max_steps: int = 150):
    """
    沿 Hopf 分支延拓到参数越过 rho 为止 (亚临界分支先经过折点),
    在最低参数点之后的一段上取最接近 rho 的轨道, 并在 rho 处重新求解。
    """
    def passed(branch) -> bool:
        values = branch.param_values()
        return bool(values.min() < rho <= values[-1])

    cps = cps_branch_from_hopf(model, fem, event, 0.01, "rho", max_steps, m_p=m_p,
                               settings=ContinuationSettings(ds=0.01, ds_max=0.05), stop=passed)
    values = cps.param_values()
    if not passed(cps):
        raise RuntimeError(f"CPS 分支只覆盖 ρ ∈ [{values.min():.4f}, {values.max():.4f}]"
                           f" ({len(values)} 条轨道)")
    start = int(np.argmin(values))
    nearest = cps.orbits[start + int(np.argmin(np.abs(values[start:] - rho)))]
    return cps_newton(model, fem, nearest, nearest.params.replace(rho=rho)), cps


def pollution_h2_pde():
    if "h2" not in _cache:
        model, fem, hopf = pollution_hopf_events(ode=False)
        _cache["h2"] = (model, fem, orbit_at(model, fem, hopf[1], 0.57)[0])
    return _cache["h2"]


TOY_SETTINGS = CpSettings(nTp=2, eps_inf=1e-4, max_halvings=8, min_dalpha=1e-4)
TOY_ALVIN = np.round(np.linspace(0.05, 1.0, 20), 10)


def toy_path(anchor: int, v0):
    """到锚点 anchor 的 CP: 先从 (1, 0) 到 (4, 0), v0 不同时再从 (4, 0) 同伦到 v0。"""
    key = ("toy_path", anchor, tuple(v0))
    if key not in _cache:
        model, fem, orbit, info = toy_cps(TOY_M_P)
        target = cps_target(model, fem, orbit, anchor)
        path, history = isc(model, fem, target, np.array([4.0, 0.0]), TOY_ALVIN, n_arc=20,
                            settings=TOY_SETTINGS)
        if not history.stalled and tuple(v0) != (4.0, 0.0):
            path, history = isc(model, fem, target, np.asarray(v0, dtype=float), TOY_ALVIN,
                                n_arc=20, settings=TOY_SETTINGS,
                                path=replace(path, alpha=0.0), v_base=np.array([4.0, 0.0]))
        _cache[key] = (model, fem, orbit, info, target, path, history)
    return _cache[key]


# ──────────── 验收点 ────────────


def check_toy_multipliers():
    model, fem, orbit, info = toy_cps(TOY_M_P)
    g1, g2, g3, g4 = info["multipliers"]
    res = floquet(model, fem, orbit)
    got = np.sort(np.abs(res.multipliers))
    e1, e2 = res.trivial_error, abs(got[0] - g2)
    _, _, fine, _ = toy_cps(TOY_M_P_FINE)
    got_fine = np.sort(np.abs(floquet(model, fem, fine).multipliers))
    e3, e4 = abs(got_fine[2] - g3) / g3, abs(got_fine[3] - g4) / g4
    passed = e1 < 1e-8 and e2 < 1e-9 and e3 < 1e-4 and e4 < 1e-4
    return passed, (f"|γ₁−1|={e1:.1e}  |γ₂−γ₂*|={e2:.1e}  "
                    f"rel γ₃={e3:.1e}  rel γ₄={e4:.1e} (m_p={TOY_M_P_FINE})")


def check_toy_slow_regime():
    model, fem, orbit, _ = toy_cps(TOY_M_P, omega=0.04)
    g2 = leading_stable(floquet(model, fem, orbit))
    return abs(g2 - 0.5325) <= 0.02, f"ω=0.04: γ₂={g2:.4f} (期望 0.5325 ± 0.02)"


def check_toy_cp():
    model, fem, orbit, info, target, path, history = toy_path(0, (4.0, 0.0))
    dev = end_deviation(path, target)
    energy = toy_energy(path.u[:, 2], path.u[:, 3], orbit.params) - info["heteroclinic_level"]
    drift = float(np.max(np.abs(energy)))
    passed = not history.stalled and path.alpha == 1.0 and dev < 1e-4 and drift < 1e-3
    return passed, f"α={path.alpha:.3f}  ‖u(1)−û₀‖∞={dev:.1e}  max|E−ω²/2π|={drift:.1e}  T={path.T:.4f}"


def check_toy_T_quantization():
    Ts = []
    for anchor in (0, TOY_M_P // 2):
        _, _, orbit, _, _, path, history = toy_path(anchor, (4.0, 4.0))
        if history.stalled:
            return False, f"锚点 {anchor}: 同伦在 α={path.alpha:.3f} 停滞"
        Ts.append(path.T)
    d0 = circular_distance(Ts[0], 7 * math.pi / 4, 2 * math.pi)
    d1 = circular_distance(Ts[1] - Ts[0], orbit.T_p / 2, orbit.T_p)
    passed = d0 < 1e-2 and d1 < 1e-2
    return passed, (f"T={Ts[0]:.4f} (mod 2π 偏离 7π/4: {d0:.1e}); "
                    f"半周期锚点 T={Ts[1]:.4f} (偏离 T_p/2: {d1:.1e})")


def check_pollution_hopf():
    model, fem, hopf = pollution_hopf_events(ode=False)
    found = [(e.param, e.spatial_mode) for e in hopf]
    defects = []
    for rho in (0.5, 0.55, 0.65):
        params = model.default_params(rho=rho)
        u = pollution_flat_css(params, fem)
        defects.append(css_target(model, fem, u, params, require_spp=False).defect)
    passed = (len(found) == 2 and 0.52 <= found[0][0] <= 0.54 and found[0][1] == 1
              and 0.57 <= found[1][0] <= 0.59 and found[1][1] == 0 and defects == [0, 2, 4])
    listed = ", ".join(f"ρ={p:.4f}(l={l})" for p, l in found)
    return passed, f"Hopf: {listed}; 亏量 {defects}"


ODE_H2_MULTIPLIERS = (0.303, 1.0, 1.012e10, 3.789e10)


def check_pollution_cps_multipliers():
    ode_model, ode_fem, ode_hopf = pollution_hopf_events(ode=True)
    orbit, _ = orbit_at(ode_model, ode_fem, ode_hopf[0], 0.57, m_p=200)
    res = floquet(ode_model, ode_fem, orbit)
    g_ode = np.sort(np.abs(res.multipliers))
    ref = np.array(ODE_H2_MULTIPLIERS)
    ok_ode = (abs(g_ode[0] - ref[0]) / ref[0] < 0.05 and res.trivial_error < 1e-6
              and np.all(np.abs(np.log10(g_ode[2:]) - np.log10(ref[2:])) < 0.05))

    model, fem, h2 = pollution_h2_pde()
    g2_h2 = leading_stable(floquet(model, fem, h2))

    _, _, hopf = pollution_hopf_events(ode=False)
    h1, _ = orbit_at(model, fem, hopf[0], 0.56)
    target_h1 = cps_target(model, fem, h1, require_spp=False)
    stable = target_h1.log_abs < 0
    stable[target_h1.trivial_index] = False
    g2_h1 = float(np.max(np.abs(target_h1.multipliers[stable])))
    ok_h1 = target_h1.defect == 0 and abs(g2_h1 - 0.948) <= 0.02
    passed = ok_ode and abs(g2_h2 - 0.905) <= 0.02 and ok_h1
    shown = ", ".join(f"{g:.4g}" for g in g_ode)
    return passed, (f"ODE h2 |γ|=({shown}), |γ₁−1|={res.trivial_error:.1e}; "
                    f"PDE h2 γ₂={g2_h2:.4f}; h1(ρ=0.56) γ₂={g2_h1:.4f} d={target_h1.defect}")


def check_pollution_cp_values():
    """ρ=0.55 在 PDE (21 节点) 中已越过 l=1 的 Hopf 点 (亏量 2), 均匀路径在 ODE 中计算。"""
    model = PollutionModel(ode=True)
    fem = model.build_fem()
    params = model.default_params(rho=0.55)
    target = css_target(model, fem, pollution_flat_css(params), params)
    settings = CpSettings(nti=150, grading=2.0, eps_inf=1e-2)
    values = []
    for v0 in ((0.4, 0.4), (0.0, 0.0)):
        path, history = isc(model, fem, target, np.array(v0), CP_ALVIN, n_arc=20,
                            settings=settings)
        if history.stalled:
            return False, f"v0={v0}: 同伦在 α={path.alpha:.3f} 停滞"
        values.append(path_value(model, fem, path, params))
    passed = abs(values[0] + 0.1297) <= 5e-3 and abs(values[1] - 0.0202) <= 5e-3
    return passed, f"J(0.4,0.4)={values[0]:.4f} (−0.1297), J(0,0)={values[1]:.4f} (0.0202)"


def check_pollution_cps_T_growth():
    model, fem, h2 = pollution_h2_pde()
    target = cps_target(model, fem, h2)
    settings = CpSettings(nti=50, nTp=2, eps_inf=1e-2)
    path, history = isc(model, fem, target, np.repeat([0.4, 0.4], fem.n), CP_ALVIN, n_arc=20,
                        settings=settings)
    periods = path.T / target.T_p
    dev = end_deviation(path, target)
    passed = not history.stalled and abs(periods - 10) <= 2 and dev <= 5e-4
    return passed, f"T={periods:.2f} T_p  ‖u(1)−û₀‖∞={dev:.1e}  α={path.alpha:.3f}"


def check_sloc_structure():
    model = ShallowLakeModel()
    fem = model.build_fem()
    params = model.default_params(b=0.55)
    start = make_point(model, fem, sloc_flat_seed(params, "FSC", fem), params)
    branch = continue_css(model, fem, start, "b", 0.01, 60,
                          ContinuationSettings(ds_max=0.02))
    folds = [e.param for e in branch.events if e.kind == "fold"]
    steady = [e.param for e in branch.events if e.kind == "steady"]
    n_roots = len(sloc_flat_roots(model.default_params(b=0.65)))
    passed = bool(folds) and abs(folds[0] - 0.73) <= 0.01 and n_roots == 3 and len(steady) >= 1
    fold_text = f"{folds[0]:.4f}" if folds else "未检测到"
    return passed, (f"折点 b={fold_text}; b=0.65 平坦根 {n_roots} 个; 稳态分岔 {len(steady)} 个; "
                    f"θ={branch.theta:.2e}")


def check_skiba():
    model = ShallowLakeModel()
    fem = model.build_fem()
    params = model.default_params()
    n_s = model.N * fem.n
    targets = {}
    for name in ("FSC", "FSM"):
        u = newton_css(model, fem, sloc_flat_seed(params, name, fem), params)
        targets[name] = css_target(model, fem, u, params)
    T = horizon_T(model, fem, list(targets.values()))
    settings = CpSettings(nti=200, T=T, grading=2.0)
    alvin = np.round(np.linspace(0.1, 1.0, 10), 10)
    _, history = isc(model, fem, targets["FSC"], targets["FSM"].states(n_s), alvin,
                     settings=settings)
    scan = skiba_scan(model, fem, history, targets["FSM"], settings, target_A=targets["FSC"])
    result = skiba_bisect(scan)
    gap = abs(result.J_A - result.J_B)
    passed = 0.40 <= result.alpha_star <= 0.48 and gap < 1e-4
    return passed, f"T={T:.1f}  α*={result.alpha_star:.4f}  |J_A−J_B|={gap:.1e}  ({result.probes} 次探测)"


CHECKS = {
    1: ("玩具模型 Floquet 乘子 (解析对照)", check_toy_multipliers),
    2: ("玩具模型慢速区 γ₂", check_toy_slow_regime),
    3: ("玩具模型 CP 收敛与能量守恒", check_toy_cp),
    4: ("玩具模型截断时间量子化", check_toy_T_quantization),
    5: ("污染模型 Hopf 点与亏量", check_pollution_hopf),
    6: ("污染模型 CPS 乘子", check_pollution_cps_multipliers),
    7: ("污染模型 CP 价值", check_pollution_cp_values),
    8: ("污染模型到 CPS 的 T 增长", check_pollution_cps_T_growth),
    9: ("浅湖模型分支结构", check_sloc_structure),
    10: ("浅湖模型 Skiba 点", check_skiba),
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="occ 端到端验收")
    parser.add_argument("numbers", nargs="*", type=int, help="验收点编号 (缺省为全部)")
    args = parser.parse_args(argv)
    numbers = args.numbers or sorted(CHECKS)

    print("=" * 60)
    print("  occ 端到端数值验收")
    print("=" * 60)
    for number in numbers:
        name, check = CHECKS[number]
        print(f"\n  [验收点 {number}] {name}...")
        t0 = time.perf_counter()
        try:
            passed, detail = check()
        except Exception as e:
            passed, detail = False, f"异常: {type(e).__name__}: {e}"
            results["errors"].append(f"验收点 {number}: {detail}")
        record(number, name, passed, detail, time.perf_counter() - t0)

    return print_report()


def print_report() -> int:
    """打印最终验收报告, 返回进程退出码。"""
    print("\n" + "=" * 60)
    print("  验收结果汇报")
    print("=" * 60)

    all_pass = True
    for number, name, passed, _, seconds in results["checks"]:
        icon = "✅" if passed else "❌"
        status = "通过" if passed else "失败"
        print(f"  {icon} {number:>2}. {name}: {status} ({seconds:.0f}s)")
        all_pass = all_pass and passed

    if results["errors"]:
        print(f"\n  ⚠️ 错误详情 ({len(results['errors'])} 个):")
        for err in results["errors"]:
            print(f"    - {err}")

    print("\n" + "-" * 60)
    conclusion = "✅ 综合结论: 通过" if all_pass else "❌ 综合结论: 失败"
    print(f"  {conclusion}")
    print("-" * 60)
    return 0 if all_pass else 1


if __name__ == "__main__":
    sys.exit(main())
