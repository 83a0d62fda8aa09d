"""Prompt diagnostics: task-prompt similarity and spectral-prompt activations."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
import torch

from .cube import HSICube
from .net import MPHSIR
from .predictor import DegradationPredictor
from .prompts import select_textual_prompt, task_probs


@torch.no_grad()
def fused_prompt_vectors(model: MPHSIR, probs) -> np.ndarray:
    """Concatenated per-level TVSP prompt vectors (post-attention, pre-concat), (B, sum C_l)."""
    if model.tvsp is None:
        raise ValueError("model has no text-visual prompt module")
    probs = torch.as_tensor(probs, dtype=next(model.parameters()).dtype)
    p_t = select_textual_prompt(probs, model.text) if model.text is not None else None
    vecs = [m.prompt_vector(p_t, probs.shape[0]) for m in model.tvsp]
    return torch.cat(vecs, dim=-1).cpu().numpy().astype(np.float64)


def cosine_matrix(vectors: np.ndarray) -> np.ndarray:
    v = vectors / np.linalg.norm(vectors, axis=1, keepdims=True).clip(min=1e-300)
    sim = v @ v.T
    sim = 0.5 * (sim + sim.T)
    np.fill_diagonal(sim, 1.0)
    return sim


def prompt_similarity_matrix(model: MPHSIR, probes: Mapping[str, Sequence[HSICube]] | Sequence[str],
                             predictor: DegradationPredictor | None = None) -> tuple[list[str], np.ndarray]:
    """Cosine similarity of the mean fused prompt vector of each task.

    ``probes`` maps task name to degraded probe cubes. Without a predictor the
    ground-truth task selects the textual prompt, so the probe images do not
    matter and a plain list of task names suffices.
    """
    names = list(probes)
    means = []
    for name in names:
        if predictor is None:
            probs = task_probs(model.text, name) if model.text is not None else torch.zeros(1, 1)
        else:
            cubes = probes[name]
            if not cubes:
                raise ValueError(f"no probe cubes for {name}")
            probs = torch.stack([predictor.predict_probs(c) for c in cubes])
        means.append(fused_prompt_vectors(model, probs).mean(axis=0))
    return names, cosine_matrix(np.stack(means))


def _local_modules(model: MPHSIR, level: int):
    blocks = model.encoder[level]
    mods = [b.pgssa.local for b in blocks if b.pgssa is not None and b.pgssa.local is not None]
    if not mods or not mods[0].use_prompt:
        raise ValueError("model has no prompt-guided local spectral attention")
    return mods


@torch.no_grad()
def spectral_prompt_activations(model: MPHSIR, cube: HSICube, region: tuple[int, int, int, int],
                                level: int = 0, block: int = 0, task: str | None = None,
                                predictor: DegradationPredictor | None = None) -> np.ndarray:
    """Mean softmax weights over the spectral-prompt rows for windows touching ``region``.

    ``region`` is ``(row0, row1, col0, col1)`` in input pixels, half-open.
    """
    r0, r1, c0, c1 = region
    if not (0 <= r0 < r1 <= cube.height and 0 <= c0 < c1 <= cube.width):
        raise ValueError(f"region {region} empty or outside the {cube.height}x{cube.width} cube")
    mod = _local_modules(model, level)[block]
    mod.keep_alpha = True
    try:
        dtype = next(model.parameters()).dtype
        y = torch.from_numpy(cube.data).to(dtype)[None]
        probs = None
        if model.text is not None:
            if task is not None:
                probs = task_probs(model.text, task, dtype=dtype)
            elif predictor is not None:
                probs = predictor.predict_probs(cube)[None].to(dtype)
            else:
                probs = torch.full((1, len(model.text.task_names)), 1.0, dtype=dtype)
        model.eval()
        model(y, probs)
        alpha = mod.last_alpha[0].cpu().numpy().astype(np.float64)  # (h', w', L)
    finally:
        mod.keep_alpha = False
        mod.last_alpha = None
    cell = model.cfg.window * 2 ** level
    rows = range(r0 // cell, min(alpha.shape[0], -(-r1 // cell)))
    cols = range(c0 // cell, min(alpha.shape[1], -(-c1 // cell)))
    sel = alpha[np.ix_(list(rows), list(cols))].reshape(-1, alpha.shape[-1])
    return sel.mean(axis=0)
