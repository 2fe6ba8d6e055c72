"""SVG figures: loss traces, SFR overlays, PSF mosaics."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .optics import CHANNELS  # noqa: E402

# fixed ids and no timestamp keep reruns byte-identical
matplotlib.rcParams["svg.hashsalt"] = "psflearn"
_META = {"Date": None}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def loss_traces(report, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    n = max(1, len(report.traces))
    cmap = plt.get_cmap("viridis")
    for b, tr in enumerate(report.traces):
        if tr:
            ax.semilogy(tr, color=cmap(b / n), lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel(f"{report.stage} loss")
    ax.set_title(f"{report.stage} ({report.basis}); colour = band")
    _save(fig, path)


def sfr_overlay(ms, fm_curves: dict, path, bands=None):
    """Measured (dots) vs model (lines) G-channel SFR for a few bands.

    ``fm_curves`` maps (band, nominal_phi) to a model SFR array.
    """
    bands = sorted({s.band for s in ms.sfr}) if bands is None else bands
    bands = bands[:: max(1, len(bands) // 4)][:4]
    fig, axes = plt.subplots(1, len(bands), figsize=(3 * len(bands), 3), squeeze=False)
    for ax, b in zip(axes[0], bands):
        for s in ms.sfr:
            if s.band == b and s.channel == "G":
                line = ax.plot(s.freqs, s.values, ".", ms=2)[0]
                m = fm_curves.get((b, round(s.nominal_phi, 9)))
                if m is not None:
                    ax.plot(s.freqs, m, "-", color=line.get_color(), lw=0.8,
                            label=f"{np.rad2deg(s.nominal_phi):.0f} deg")
        ax.set_title(f"band {b}")
        ax.set_xlabel("cycles/pixel")
        ax.set_ylim(0, 1.05)
    axes[0][0].set_ylabel("SFR")
    axes[0][0].legend(fontsize=6)
    fig.tight_layout()
    _save(fig, path)


def psf_mosaic(stacks: dict, H_rows, path, phi: float = 0.0):
    """Rows: stacks; columns: (H, channel); each tile is gamma-stretched."""
    names = list(stacks)
    cols = [(H, c) for H in H_rows for c in range(3)]
    fig, axes = plt.subplots(len(names), len(cols), figsize=(1.2 * len(cols), 1.3 * len(names)),
                             squeeze=False)
    for i, name in enumerate(names):
        st = stacks[name]
        for j, (H, c) in enumerate(cols):
            k = st.kernels_at(H, phi)[c]
            ax = axes[i][j]
            ax.imshow(np.clip(k / k.max(), 0, 1) ** 0.5, cmap="gray", interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if i == 0:
                ax.set_title(f"H={H:g} {CHANNELS[c]}", fontsize=6)
        axes[i][0].set_ylabel(name, fontsize=7)
    _save(fig, path)
