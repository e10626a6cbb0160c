"""
图表渲染模块。
使用 Plotly 绘制分岔图、路径时间序列/时空热图、Floquet 乘子谱与 Skiba 交叉图,
输入为 plot_data 生成的 DataFrame。
"""
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

FIGURE_DIV_ID = "occ-figure"

_STABILITY_COLORS = {"spp": "#1f77b4"}
_DEFECT_COLOR = "gray"


def _layout(fig: go.Figure, title: str, xaxis_title: str, yaxis_title: str) -> go.Figure:
    fig.update_layout(
        title=title,
        xaxis_title=xaxis_title,
        yaxis_title=yaxis_title,
        template="plotly_dark",
        hovermode="x unified",
        legend=dict(
            orientation="h",
            yanchor="bottom",
            y=1.02,
            xanchor="right",
            x=1
        ),
        margin=dict(l=20, r=20, t=60, b=20),
    )
    return fig


class ChartRenderer:
    """occ 结果图渲染器。"""

    @staticmethod
    def render_branch(
        branch_df: pd.DataFrame,
        cps_df: Optional[pd.DataFrame] = None,
        param_name: str = "param",
        y: str = "j_ca",
    ) -> go.Figure:
        """
        分岔图: 满足鞍点性质的段用实线, 有亏量的段用灰色细线。

        Args:
            branch_df: plot_data.branch_frame 的输出
            cps_df: plot_data.cps_branch_frame 的输出 (可选, 画两条相位价值曲线)
            param_name: 横轴标题
            y: "j_ca" 或 "norm_u"
        """
        fig = go.Figure()
        # 按稳定性标签分段, 相邻段共享端点以保持连续
        tags = branch_df["stability"].tolist()
        start = 0
        for i in range(1, len(tags) + 1):
            if i < len(tags) and tags[i] == tags[start]:
                continue
            seg = branch_df.iloc[start:min(i + 1, len(tags))]
            tag = tags[start]
            spp = tag == "spp"
            fig.add_trace(
                go.Scatter(
                    x=seg["param"],
                    y=seg[y],
                    mode="lines",
                    name=tag,
                    line=dict(color=_STABILITY_COLORS.get(tag, _DEFECT_COLOR),
                              width=3 if spp else 1),
                    showlegend=tag not in {t.name for t in fig.data},
                )
            )
            start = i

        if cps_df is not None and not cps_df.empty:
            for col, label, dash in (("J_phase0", "CPS J(相位 0)", "solid"),
                                     ("J_half", "CPS J(半周期)", "dot")):
                fig.add_trace(
                    go.Scatter(
                        x=cps_df["param"],
                        y=cps_df[col],
                        mode="lines",
                        name=label,
                        line=dict(color="orange", dash=dash),
                    )
                )
        return _layout(fig, "分岔图", param_name, "J_ca" if y == "j_ca" else "‖v‖")

    @staticmethod
    def render_path(frames: Dict[str, pd.DataFrame], component: Optional[str] = None) -> go.Figure:
        """
        路径图。ODE 帧 (每分量一张) 画成上下堆叠的时间序列;
        PDE 的 "heatmap" 长表画成选定分量的时空热图 (默认第一个分量)。
        """
        if "heatmap" in frames:
            df = frames["heatmap"]
            comp = component or df["component"].iloc[0]
            sub = df[df["component"] == comp]
            grid = sub.pivot(index="t", columns="x", values="value")
            fig = go.Figure(
                go.Heatmap(
                    x=grid.columns.to_numpy(),
                    y=grid.index.to_numpy(),
                    z=grid.to_numpy(),
                    colorscale="Viridis",
                    colorbar=dict(title=comp),
                )
            )
            return _layout(fig, f"典则路径: {comp}(t, x)", "x", "t")

        labels = list(frames)
        fig = make_subplots(
            rows=len(labels),
            cols=1,
            shared_xaxes=True,
            vertical_spacing=0.05,
        )
        for row, label in enumerate(labels, start=1):
            df = frames[label]
            fig.add_trace(go.Scatter(x=df["t"], y=df[label], mode="lines", name=label),
                          row=row, col=1)
        return _layout(fig, "典则路径", "t", "")

    @staticmethod
    def render_multipliers(mult_df: pd.DataFrame) -> go.Figure:
        """Floquet 乘子: 横轴 log₁₀|γ|, 纵轴辐角, 竖线标出 |γ| = 1。"""
        with np.errstate(divide="ignore"):
            log_abs = np.log10(mult_df["abs"].to_numpy())
        fig = go.Figure(
            go.Scatter(
                x=log_abs,
                y=np.angle(mult_df["re"].to_numpy() + 1j * mult_df["im"].to_numpy()),
                mode="markers",
                marker=dict(size=8, color="#1f77b4"),
                text=[f"γ{i}" for i in mult_df["index"]],
                name="γ",
            )
        )
        fig.add_vline(x=0.0, line_width=1, line_dash="dash", line_color="white")
        return _layout(fig, "Floquet 乘子", "log₁₀|γ|", "arg γ")

    @staticmethod
    def render_skiba(scan_df: pd.DataFrame, alpha_star: Optional[float] = None) -> go.Figure:
        """两条腿的价值随 α 的变化, 交点即 Skiba 点。"""
        fig = go.Figure()
        for col, color in (("J_A", "#1f77b4"), ("J_B", "orange")):
            fig.add_trace(
                go.Scatter(
                    x=scan_df["alpha"],
                    y=scan_df[col],
                    mode="lines+markers",
                    name=col,
                    line=dict(color=color),
                )
            )
        if alpha_star is not None:
            fig.add_vline(
                x=alpha_star,
                line_width=1,
                line_dash="dash",
                line_color="white",
                annotation_text=f"α* = {alpha_star:.4f}",
                annotation_position="top left"
            )
        return _layout(fig, "Skiba 交叉", "α", "J")

    @staticmethod
    def write_html(fig: go.Figure, path: Union[str, Path]) -> Path:
        """写出独立 HTML; 固定 div id, 相同输入得到相同文件。"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.write_html(str(path), include_plotlyjs="cdn", full_html=True, div_id=FIGURE_DIV_ID)
        return path
