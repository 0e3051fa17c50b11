"""
SVG Charts Module

Line charts of curves, densities and traces written as standalone SVG files.
Rendering goes through matplotlib's non-interactive Agg backend; dates and
element ids are pinned so repeated runs produce the same file.
"""

from typing import Collection, Dict, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .curve import AgingCurve  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "agecurve"
matplotlib.rcParams["svg.fonttype"] = "none"

Series = Tuple[Sequence[float], Sequence[float]]


def line_chart(path, series: Dict[str, Series], title: str = "", xlabel: str = "", ylabel: str = "",
               bands: Optional[Dict[str, Tuple[Sequence[float], Sequence[float], Sequence[float]]]] = None,
               faint: Collection[str] = ()) -> None:
    """One polyline per named series; optional shaded (x, low, high) bands; `faint` series are thin and grey"""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    try:
        for name, (lo_x, low, high) in (bands or {}).items():
            ax.fill_between(lo_x, low, high, alpha=0.2, label=name)
        for name, (x, y) in series.items():
            if name in faint:
                ax.plot(x, y, linewidth=0.7, color="0.65", label=name)
            else:
                ax.plot(x, y, linewidth=1.4, label=name)
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if series or bands:
            ax.legend(fontsize="small", frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)


def curves_chart(path, curves: Dict[str, AgingCurve], title: str = "", band: Optional[str] = None,
                 faint: Collection[str] = ()) -> None:
    """Aging curves against age; `band` names the curve whose CI is shaded"""
    first = next(iter(curves.values()))
    series = {name: (c.grid.ages, c.mean) for name, c in curves.items()}
    bands = None
    if band is not None and curves[band].ci_low is not None:
        c = curves[band]
        bands = {f"{band} CI": (c.grid.ages, c.ci_low, c.ci_high)}
    ylabel = "OPS" if first.units == "ops" else "transformed OPS"
    line_chart(path, series, title=title, xlabel="age", ylabel=ylabel, bands=bands, faint=faint)
