"""Report figures written next to the tabular CLI output."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import StftConfig, stft  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def _figure(width=6.0, nrows=1, ncols=1, aspect=0.62):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(nrows, ncols, figsize=(width, width * aspect), squeeze=False)
    return fig, ax


def _save(fig, path):
    with plt.rc_context(STYLE):
        fig.tight_layout()
        fig.savefig(path)
    plt.close(fig)


def plot_ablation(result, path):
    """Per-variant Phase L2 and Wave L2: seed scatter plus median bar."""
    variants = list(result.medians)
    fig, axes = _figure(7.0, 1, 2, aspect=0.4)
    for ax, key, label in zip(axes[0], ("phase_l2", "wave_l2"), ("Phase L2", "Wave L2 (x1e-3)")):
        scale = 1e3 if key == "wave_l2" else 1.0
        med = [result.medians[v][key] * scale if result.medians[v] else np.nan for v in variants]
        ax.bar(range(len(variants)), med, color="0.8", edgecolor="0.3", label="median")
        for i, v in enumerate(variants):
            pts = [c.metrics[key] * scale for c in result.cells if c.variant == v and c.ok]
            ax.plot([i] * len(pts), pts, "k.", ms=4)
        base = result.baseline.get(key)
        if base is not None:
            ax.axhline(base * scale, color="C3", ls="--", lw=1, label="untrained warp")
        dsp = result.dsp_baseline.get(key)
        if dsp is not None:
            ax.axhline(dsp * scale, color="C0", ls=":", lw=1, label="DSP render")
        ax.set_xticks(range(len(variants)))
        ax.set_xticklabels(variants, rotation=30)
        ax.set_ylabel(label)
    axes[0][0].legend(frameon=False)
    _save(fig, path)


def plot_training_curves(logs: dict, path):
    """Training loss per cell (``{label: [log entries]}``), log scale."""
    fig, axes = _figure(6.0)
    ax = axes[0][0]
    for label, entries in logs.items():
        if not entries:
            continue
        steps = [e["step"] for e in entries]
        ax.semilogy(steps, [e["loss"] for e in entries], lw=0.8, label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("training loss (MSE)")
    ax.legend(frameon=False, ncol=2)
    _save(fig, path)


def plot_spectrograms(ref, est, path, config=StftConfig(), sample_rate=48000, fmax=None):
    """Left-ear log-magnitude spectrograms of reference and estimate."""
    fig, axes = _figure(7.0, 1, 2, aspect=0.4)
    for ax, sig, title in zip(axes[0], (ref, est), ("reference", "estimate")):
        spec = 20 * np.log10(np.abs(stft(sig, config)) + 1e-9)
        t_end = len(sig) / sample_rate
        ax.imshow(spec.T, origin="lower", aspect="auto", cmap="magma",
                  extent=(0, t_end, 0, sample_rate / 2), vmin=spec.max() - 80, vmax=spec.max())
        ax.set_ylim(0, fmax or sample_rate / 2)
        ax.set_title(title)
        ax.set_xlabel("time (s)")
    axes[0][0].set_ylabel("frequency (Hz)")
    _save(fig, path)
