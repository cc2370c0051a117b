"""
Sweep figure
"""

import logging
from pathlib import Path
from typing import Union

import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from .solution_io import atomic_write

logger = logging.getLogger(__name__)


def sweep_figure(table: pd.DataFrame) -> go.Figure:
    """Dual value and primal cost (top), energies and martingale slope (bottom) against beta"""
    ok = table[table["status"] == "ok"].sort_values("beta")
    fig = make_subplots(
        rows=2, cols=1, shared_xaxes=True,
        subplot_titles=("Value", "Energies and martingale slope"),
        specs=[[{}], [{"secondary_y": True}]],
    )
    fig.add_trace(go.Scatter(x=ok["beta"], y=ok["dual_value"], mode="lines+markers", name="dual value"), row=1, col=1)
    fig.add_trace(go.Scatter(x=ok["beta"], y=ok["primal_cost"], mode="markers", name="primal cost (MC)"), row=1, col=1)
    if "sinkhorn_value" in ok and ok["sinkhorn_value"].notna().any():
        fig.add_trace(go.Scatter(x=ok["beta"], y=ok["sinkhorn_value"], mode="lines", name="Schroedinger bridge",
                                 line={"dash": "dash"}), row=1, col=1)
    fig.add_trace(go.Scatter(x=ok["beta"], y=ok["drift_energy"], mode="lines+markers", name="drift energy"), row=2, col=1)
    fig.add_trace(go.Scatter(x=ok["beta"], y=ok["diffusion_energy"], mode="lines+markers", name="diffusion energy"),
                  row=2, col=1)
    fig.add_trace(go.Scatter(x=ok["beta"], y=ok["martingale_slope"], mode="lines+markers", name="martingale slope",
                             line={"dash": "dot"}), row=2, col=1, secondary_y=True)
    fig.update_xaxes(type="log", title_text="beta", row=2, col=1)
    fig.update_layout(title="beta sweep", template="plotly_white", height=700)
    return fig


def write_sweep_html(table: pd.DataFrame, path: Union[str, Path]) -> Path:
    fig = sweep_figure(table)
    out = atomic_write(Path(path), lambda tmp: fig.write_html(tmp, include_plotlyjs="cdn"))
    logger.info(f"Sweep figure written to {out}")
    return out
