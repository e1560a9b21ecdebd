"""Optional NMSE figures written next to the CSV output."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiment import SummaryRow  # noqa: E402

XLABELS = {"pilot": "Pilot length L", "snr": "SNR (dB)"}
STYLES = {"proposed": ("tab:blue", "o"), "exhaustive": ("tab:red", "s")}


def plot_summary(summary: Sequence[SummaryRow], sweep: str, path) -> Path:
    """NMSE in dB against the sweep value, median solid and mean dashed, one colour per method."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    for method in dict.fromkeys(s.method for s in summary):
        rs = [s for s in summary if s.method == method]
        x = [s.sweep_value for s in rs]
        color, marker = STYLES.get(method, ("k", "^"))
        med = [_db(s.median) for s in rs]
        mean = [_db(s.mean) for s in rs]
        ax.plot(x, med, color=color, marker=marker, label=f"{method} (median)")
        ax.plot(x, mean, color=color, marker=marker, ls="--", mfc="none", label=f"{method} (mean)")
    ax.set_xlabel(XLABELS.get(sweep, sweep))
    ax.set_ylabel("NMSE (dB)")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _db(x: float) -> float:
    return 10 * math.log10(x) if x > 0 else float("nan")
