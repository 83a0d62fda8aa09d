"""CSV and PNG emitters for error curves, prompt activations and prompt similarity."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import EvalReport  # noqa: E402


def _slug(text: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in text).strip("_")


def _level_tag(level: Mapping) -> str:
    return "_".join(f"{k}{v}" for k, v in sorted(level.items()))


def emit_error_curves(report: EvalReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for e in report.entries:
        stem = out / f"error_{_slug(e.task)}_{_slug(_level_tag(e.level))}"
        with open(stem.with_suffix(".csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["band", "restored_error", "degraded_error"])
            for b, (r, d) in enumerate(zip(e.curve, e.curve_degraded)):
                w.writerow([b, f"{r:.8g}", f"{d:.8g}"])
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(e.curve_degraded, label="degraded", color="tab:gray")
        ax.plot(e.curve, label="restored", color="tab:red")
        ax.set_xlabel("band")
        ax.set_ylabel("normalized DN error")
        ax.set_title(f"{e.task} {_level_tag(e.level)}")
        ax.legend()
        fig.tight_layout()
        fig.savefig(stem.with_suffix(".png"), dpi=80, metadata={"Software": None})
        plt.close(fig)
        written += [stem.with_suffix(".csv"), stem.with_suffix(".png")]
    return written


def emit_activation_bars(activations: Mapping[str, np.ndarray], out_path: str | Path) -> Path:
    """Grouped bars of spectral-prompt activation proportions, one group per degradation."""
    if not activations:
        raise ValueError("no activation probes")
    out = Path(out_path)
    names = list(activations)
    vals = np.stack([np.asarray(activations[n]) for n in names])
    with open(out.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["probe"] + [f"pattern_{i}" for i in range(vals.shape[1])])
        for n, row in zip(names, vals):
            w.writerow([n] + [f"{v:.8g}" for v in row])
    fig, ax = plt.subplots(figsize=(6, 3))
    width = 0.8 / len(names)
    for i, (n, row) in enumerate(zip(names, vals)):
        ax.bar(np.arange(len(row)) + i * width, row, width=width, label=n)
    ax.set_xlabel("spectral pattern")
    ax.set_ylabel("activation proportion")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out.with_suffix(".png"), dpi=80, metadata={"Software": None})
    plt.close(fig)
    return out.with_suffix(".png")


def emit_similarity_heatmap(names: Sequence[str], sim: np.ndarray, out_path: str | Path) -> Path:
    out = Path(out_path)
    with open(out.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([""] + list(names))
        for n, row in zip(names, sim):
            w.writerow([n] + [f"{v:.8g}" for v in row])
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(sim, vmin=min(0.0, float(sim.min())), vmax=1.0, cmap="viridis")
    ax.set_xticks(range(len(names)), names, rotation=60, ha="right", fontsize=7)
    ax.set_yticks(range(len(names)), names, fontsize=7)
    for i in range(len(names)):
        for j in range(len(names)):
            ax.text(j, i, f"{sim[i, j]:.2f}", ha="center", va="center", fontsize=6, color="w")
    fig.colorbar(im)
    fig.tight_layout()
    fig.savefig(out.with_suffix(".png"), dpi=80, metadata={"Software": None})
    plt.close(fig)
    return out.with_suffix(".png")


def emit_plots(report: EvalReport | None, out_dir: str | Path, similarity: tuple[Sequence[str], np.ndarray] | None = None,
               activations: Mapping[str, np.ndarray] | None = None) -> list[Path]:
    """Write every chart whose inputs are present; at least one input is required."""
    if report is None and similarity is None and not activations:
        raise ValueError("nothing to plot: no report, similarity matrix or activation probes")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if report is not None:
        written += emit_error_curves(report, out / "error_curves")
    if similarity is not None:
        written.append(emit_similarity_heatmap(similarity[0], similarity[1], out / "prompt_similarity"))
    if activations:
        written.append(emit_activation_bars(activations, out / "spectral_prompt_activations"))
    return written
