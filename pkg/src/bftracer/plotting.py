"""Figure rendering for the report paths; PNG files next to the plot data."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update({
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 140,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
})

_CURVE_LABELS = {
    "total": "microscopic vs effective",
    "aux_gap": "microscopic vs quadratic model",
    "aux_bf_gap": "quadratic model vs effective",
}


def save_error_curve_figure(path, curves: dict) -> None:
    fig, ax = plt.subplots()
    any_positive = False
    for kind, curve in curves.items():
        errs = [e if e > 0 else np.nan for e in curve.errors]
        any_positive = any_positive or any(e > 0 for e in curve.errors)
        ax.plot(curve.n_values, errs, "o-", label=_CURVE_LABELS.get(kind, kind))
    ref = curves.get("total") or next(iter(curves.values()))
    n = np.array(ref.n_values, dtype=float)
    k = ref.bound_prefactor()
    if k > 0:
        ax.plot(n, k * n**-0.25, "k--", label=r"$K\,N^{-1/4}$ envelope")
    ax.set_xscale("log")
    if any_positive:
        ax.set_yscale("log")
    ax.set_xlabel("boson number N")
    ax.set_ylabel("evolution distance at fixed time")
    ax.set_title(f"effective-dynamics error at t = {ref.time:g}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_spectrum_figure(path, report) -> None:
    fig, ax = plt.subplots()
    x = [float(np.linalg.norm(p)) for p in report.momenta]
    for cap in report.caps:
        gaps = [report.gaps[cap].get(p, np.nan) for p in report.momenta]
        ax.plot(x, gaps, "o", alpha=0.5, label=f"cap {cap}")
    if not report.unstable:
        oracle = [report.oracle[p] for p in report.momenta]
        ax.plot(x, oracle, "k_", markersize=14, label="quasiparticle oracle")
    ax.set_xlabel("|p|")
    ax.set_ylabel("lowest gap in momentum block")
    ax.set_title("quadratic excitation spectrum" +
                 (" (UNSTABLE)" if report.unstable else ""))
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_observables_figure(path, times, columns: dict) -> None:
    names = list(columns)
    fig, axes = plt.subplots(len(names), 1, sharex=True,
                             figsize=(6.0, 1.8 * len(names)))
    if len(names) == 1:
        axes = [axes]
    for ax, name in zip(axes, names):
        ax.plot(times, columns[name])
        ax.set_ylabel(name, fontsize=8)
    axes[-1].set_xlabel("time t")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
