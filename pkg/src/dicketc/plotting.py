"""Figure rendering for the CLI report paths.

Every CLI command that writes delimited data can also render a matplotlib
figure next to it.  Figures are diagnostic quality: phase diagrams as label
maps, trajectories with their spectrum, scans with error bars.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import BoundaryNorm, ListedColormap

from .analysis import Phase, power_spectrum
from .integrate import TrajectorySeries

LABEL_ORDER = [Phase.THERMAL, Phase.TC, Phase.TQC,
               Phase.LIGHT_INDUCED_NP, Phase.OTHER, Phase.ERROR]
LABEL_COLORS = {
    Phase.THERMAL: "#c44e52",
    Phase.TC: "#1a1a2e",
    Phase.TQC: "#4c72b0",
    Phase.LIGHT_INDUCED_NP: "#dd8452",
    Phase.OTHER: "#f2f2f2",
    Phase.ERROR: "#ff00ff",
}


def save_trajectory_figure(series: TrajectorySeries, path, spectrum: bool = True) -> None:
    """Time trace of jx (plus photon number when present) and its spectrum."""
    n_rows = 2 if spectrum else 1
    fig, axes = plt.subplots(n_rows, 1, figsize=(7, 3 * n_rows), squeeze=False)
    ax = axes[0, 0]
    tp = series.t / series.period
    ax.plot(tp, series.jx, lw=0.8, label=r"$j_x$")
    if series.n_photon is not None and np.any(series.n_photon):
        ax2 = ax.twinx()
        ax2.plot(tp, series.n_photon, lw=0.8, color="tab:orange", alpha=0.7,
                 label="photon number")
        ax2.set_ylabel("photon number", color="tab:orange")
    if "jx" in series.stderr:
        ax.fill_between(tp, series.jx - series.stderr["jx"],
                        series.jx + series.stderr["jx"], alpha=0.3)
    ax.set_xlabel(r"$t / T_d$")
    ax.set_ylabel(r"$j_x$")
    ax.set_ylim(-0.55, 0.55)
    if spectrum:
        ps = power_spectrum(series, 0.0, series.horizon)
        axs = axes[1, 0]
        omega_d = series.meta.get("omega_d", 2 * math.pi / series.period)
        keep = ps.power > 0
        axs.semilogy(ps.omega[keep] / omega_d, ps.power[keep], lw=0.8)
        axs.axhline(math.exp(-8), color="gray", ls="--", lw=0.8)
        axs.axvline(0.5, color="tab:red", ls=":", lw=0.8)
        axs.set_xlim(0, 3)
        axs.set_ylim(1e-12, 2)
        axs.set_xlabel(r"$\omega / \omega_d$")
        axs.set_ylabel(r"$P(\omega)$")
    fig.tight_layout()
    fig.savefig(path, dpi=160)
    plt.close(fig)


def save_spectrum_figure(ps, omega_d: float, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.2))
    keep = ps.power > 0
    ax.semilogy(ps.omega[keep] / omega_d, ps.power[keep], lw=0.8)
    ax.axhline(math.exp(-8), color="gray", ls="--", lw=0.8)
    ax.set_xlabel(r"$\omega / \omega_d$")
    ax.set_ylabel(r"$P(\omega)$")
    ax.set_xlim(0, 3)
    fig.tight_layout()
    fig.savefig(path, dpi=160)
    plt.close(fig)


def save_phase_diagram_figure(diagram, path) -> None:
    """Label map over the (duty, drive frequency) grid."""
    index = {ph.value: i for i, ph in enumerate(LABEL_ORDER)}
    grid = np.vectorize(lambda s: index.get(s, index[Phase.OTHER.value]))(diagram.labels)
    cmap = ListedColormap([LABEL_COLORS[ph] for ph in LABEL_ORDER])
    norm = BoundaryNorm(np.arange(len(LABEL_ORDER) + 1) - 0.5, len(LABEL_ORDER))
    duty = diagram.spec.duty.values()
    wd = diagram.spec.omega_d.values()
    fig, ax = plt.subplots(figsize=(6, 4.5))
    im = ax.pcolormesh(duty, wd, grid, cmap=cmap, norm=norm, shading="nearest")
    cbar = fig.colorbar(im, ax=ax, ticks=range(len(LABEL_ORDER)))
    cbar.ax.set_yticklabels([ph.value for ph in LABEL_ORDER])
    ax.set_xlabel("duty cycle $D$")
    ax.set_ylabel(r"$\omega_d / \omega_0$")
    kappa = diagram.spec.kappa
    ktxt = r"\infty" if math.isinf(kappa) else f"{kappa:g}"
    ax.set_title(rf"$\kappa/\omega_0 = {ktxt}$, $\lambda_0 = {diagram.spec.lam0:g}\lambda_c$")
    fig.tight_layout()
    fig.savefig(path, dpi=160)
    plt.close(fig)


def save_kappa_scan_figure(rows, path) -> None:
    """Lifetime and decorrelator against the decay rate (log axis)."""
    kap = [1e9 if r["kappa"] == "inf" else max(r["kappa"], 1e-9) for r in rows]
    ttc = [r["T_TC_over_Td"] for r in rows]
    d = [r["d"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    ax1.semilogx(kap, ttc, "o-")
    ax1.set_ylabel(r"$T_{TC} / T_d$")
    ax2.loglog(kap, np.maximum(d, 1e-18), "s-")
    ax2.axhline(0.01, color="gray", ls="--", lw=0.8)
    ax2.set_ylabel("$d$")
    ax2.set_xlabel(r"$\kappa / \omega_0$")
    fig.tight_layout()
    fig.savefig(path, dpi=160)
    plt.close(fig)


def save_disorder_scan_figure(rows, path) -> None:
    """Relative crystalline fraction vs disorder strength, one curve per kappa."""
    fig, ax = plt.subplots(figsize=(6, 4))
    kappas = sorted({str(r["kappa"]) for r in rows})
    for k in kappas:
        sel = [r for r in rows if str(r["kappa"]) == k]
        sel.sort(key=lambda r: r["strength"])
        x = [r["strength"] for r in sel]
        y = [r["xi_rel"] for r in sel]
        e = [r["xi_rel_err"] for r in sel]
        ax.errorbar(x, y, yerr=e, marker="o", capsize=2, label=rf"$\kappa={k}$")
    ax.set_xlabel("disorder strength")
    ax.set_ylabel(r"$\Xi / \Xi_0$")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=160)
    plt.close(fig)


def save_envelope_figure(series: TrajectorySeries, env_t, env_x, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 3.2))
    tp = series.t / series.period
    ax.plot(tp, series.jx, lw=0.5, alpha=0.6)
    ax.plot(np.asarray(env_t) / series.period, env_x, "o-", ms=2, lw=1.0,
            color="tab:red", label="peak envelope")
    ax.set_xlabel(r"$t / T_d$")
    ax.set_ylabel(r"$\langle J_x \rangle / N$")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=160)
    plt.close(fig)
