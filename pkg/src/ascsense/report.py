"""Figure rendering for sweep and resolution reports.

Renders median curves with interquartile bands from aggregate tables to
PNG files next to the delimited output.  Uses the non-interactive Agg
backend so it works headless.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np
import pandas as pd

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_METRIC_LABELS = {
    "to_rel_err_m": "relative TO error (m)",
    "to_abs_err_m": "absolute TO error (m)",
    "delay_rel_err_m": "relative delay error (m)",
    "delay_abs_err_m": "absolute delay error (m)",
    "gamma_beta_db": "gain-sequence SNR (dB)",
}
_AXIS_LABELS = {
    "snr_db": "SNR (dB)",
    "dyn_proportion": "dynamic power proportion",
    "tau_sep_m": "target separation (m)",
}
_LOG_METRICS = {"to_rel_err_m", "to_abs_err_m", "delay_rel_err_m", "delay_abs_err_m"}


def _varying_axes(agg: pd.DataFrame) -> list[str]:
    axes = []
    for axis in ("snr_db", "dyn_proportion", "tau_sep_m"):
        vals = agg[axis].dropna().unique()
        if len(vals) > 1:
            axes.append(axis)
    return axes


def _plot_metric(agg: pd.DataFrame, axis: str, metric: str, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5.4, 3.8))
    for method, group in agg.groupby("method"):
        group = group.dropna(subset=[axis]).sort_values(axis)
        if group.empty or group[f"{metric}_median"].isna().all():
            continue
        x = group[axis].to_numpy(dtype=float)
        med = group[f"{metric}_median"].to_numpy(dtype=float)
        ax.plot(x, med, marker="o", label=method)
        ax.fill_between(x, group[f"{metric}_q25"].to_numpy(dtype=float),
                        group[f"{metric}_q75"].to_numpy(dtype=float), alpha=0.2)
    if metric in _LOG_METRICS:
        ax.set_yscale("log")
    ax.set_xlabel(_AXIS_LABELS[axis])
    ax.set_ylabel(_METRIC_LABELS.get(metric, metric))
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _plot_resolution(agg: pd.DataFrame, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5.4, 3.8))
    for method, group in agg.groupby("method"):
        group = group.dropna(subset=["tau_sep_m"]).sort_values("tau_sep_m")
        if group.empty:
            continue
        ax.plot(group["tau_sep_m"].to_numpy(dtype=float),
                group["resolution_probability"].to_numpy(dtype=float),
                marker="o", label=method)
    ax.set_xlabel(_AXIS_LABELS["tau_sep_m"])
    ax.set_ylabel("probability of resolution")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_figures(agg: pd.DataFrame, out_dir, prefix: str = "sweep") -> list[Path]:
    """Render each metric against every varying sweep axis; returns paths."""
    out = Path(out_dir)
    paths: list[Path] = []
    if agg.empty:
        return paths
    axes = _varying_axes(agg)
    for axis in axes or ["snr_db"]:
        if axis == "tau_sep_m":
            path = out / f"{prefix}_resolution_vs_separation.png"
            _plot_resolution(agg, path)
            paths.append(path)
            continue
        for metric in _METRIC_LABELS:
            if agg[f"{metric}_median"].isna().all():
                continue
            path = out / f"{prefix}_{metric}_vs_{axis}.png"
            _plot_metric(agg, axis, metric, path)
            paths.append(path)
    return paths


def render_spectrum(spectrum, out_path, truth_delays_m: np.ndarray | None = None) -> Path:
    """Render a delay (or joint angle-delay) pseudo-spectrum to a PNG."""
    from .signal_model import delay_to_range

    out_path = Path(out_path)
    fig, ax = plt.subplots(figsize=(5.8, 3.8))
    ranges = delay_to_range(spectrum.delays)
    if spectrum.values.ndim == 1:
        ax.plot(ranges, 10.0 * np.log10(np.maximum(spectrum.values, 1e-300)))
        ax.set_xlabel("range (m)")
        ax.set_ylabel("spectrum (dB)")
        if truth_delays_m is not None:
            for r in np.atleast_1d(truth_delays_m):
                ax.axvline(r, color="k", linestyle=":", alpha=0.6)
    else:
        mesh = ax.pcolormesh(ranges, np.rad2deg(spectrum.angles),
                             10.0 * np.log10(np.maximum(spectrum.values, 1e-300)),
                             shading="auto")
        fig.colorbar(mesh, ax=ax, label="spectrum (dB)")
        ax.set_xlabel("range (m)")
        ax.set_ylabel("arrival angle (deg)")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_similarity(candidates_ns: np.ndarray, similarity: np.ndarray, estimate_ns: float,
                      out_path) -> Path:
    """Render the clock-error similarity objective from calibration."""
    out_path = Path(out_path)
    fig, ax = plt.subplots(figsize=(5.4, 3.4))
    ax.plot(candidates_ns, similarity)
    ax.axvline(estimate_ns, color="r", linestyle="--", label=f"estimate {estimate_ns:.2f} ns")
    ax.set_xlabel("clock error (ns)")
    ax.set_ylabel("reciprocity similarity")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
