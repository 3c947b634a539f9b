"""
Optional SVG plots, always drawn from the CSV tables
"""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from utils.logger import logger


def plot_decay_curve(frame: pd.DataFrame, path: str, reference_rate: float = None) -> str:
    """-(1/n') log p_hat against n; flagged rows are skipped"""
    rows = frame[~frame["flagged"].astype(bool)]
    fig, ax = plt.subplots(figsize=(6, 4))
    if len(rows):
        hi = rows["rate_ci_high"].replace(np.inf, np.nan)
        ax.errorbar(rows["n"], rows["minus_log_p_over_nprime"],
                    yerr=[rows["minus_log_p_over_nprime"] - rows["rate_ci_low"],
                          (hi - rows["minus_log_p_over_nprime"]).fillna(0.0)],
                    marker="o", capsize=3, label="-(1/n') log p")
    if reference_rate is not None and np.isfinite(reference_rate):
        ax.axhline(reference_rate, linestyle="--", color="gray", label="rate upper bound")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("n")
    ax.set_ylabel("decay rate")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"Plot saved: {path}")
    return path


def plot_lln_errors(frame: pd.DataFrame, path: str) -> str:
    """Median |theta^n(f) - theta*(f)| with IQR bars, log-log"""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(frame["n"], frame["median_abs_error"], yerr=frame["iqr"] / 2.0, marker="o", capsize=3)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("median absolute error")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info(f"Plot saved: {path}")
    return path
