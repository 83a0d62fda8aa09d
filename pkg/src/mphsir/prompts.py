"""Textual and visual prompts and the text-visual fusion module."""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import torch
import torch.nn as nn

from .degrade import ALL_IN_ONE_TASKS, Task

DEFAULT_DESCRIPTIONS: dict[str, str] = {
    Task.GaussianNoise.value: "Remove the Gaussian noise in the hyperspectral image",
    Task.ComplexNoise.value: "Remove the complex mixed noise in the hyperspectral image",
    Task.GaussianBlur.value: "Remove the Gaussian blur in the hyperspectral image",
    Task.Downsample.value: "Increase the spatial resolution of the hyperspectral image",
    Task.Inpaint.value: "Fill in the missing pixels of the hyperspectral image",
    Task.Haze.value: "Remove the haze in the hyperspectral image",
    Task.BandDrop.value: "Recover the missing bands of the hyperspectral image",
    Task.MotionBlur.value: "Remove the motion blur in the hyperspectral image",
    Task.PoissonNoise.value: "Remove the Poisson noise in the hyperspectral image",
}


class TextEncoder(Protocol):
    dim: int

    def encode(self, text: str) -> np.ndarray: ...


class HashTextEncoder:
    """Offline stand-in for a frozen text encoder.

    Words and word bigrams are hashed into a sparse bag, which a fixed seeded
    Gaussian matrix projects to ``dim``; outputs are unit-norm. Descriptions
    that share words therefore get correlated embeddings.
    """

    def __init__(self, dim: int = 512, seed: int = 0, buckets: int = 2048):
        self.dim, self.seed, self.buckets = dim, seed, buckets
        rng = np.random.default_rng(seed)
        self._proj = rng.standard_normal((buckets, dim)) / np.sqrt(dim)

    def _bucket(self, token: str) -> int:
        h = hashlib.blake2b(token.encode(), digest_size=8, key=str(self.seed).encode()).digest()
        return int.from_bytes(h, "little") % self.buckets

    def encode(self, text: str) -> np.ndarray:
        words = re.findall(r"[a-z0-9]+", text.lower())
        bag = np.zeros(self.buckets)
        for tok in words + [a + " " + b for a, b in zip(words, words[1:])]:
            bag[self._bucket(tok)] += 1.0
        v = bag @ self._proj
        return (v / (np.linalg.norm(v) + 1e-12)).astype(np.float32)


class FileTextEncoder:
    """Precomputed embeddings, looked up by task name or description.

    File layout: a JSON header line ``{"dim": d, "index": {name: byte_offset}}``
    followed by the little-endian float32 rows.
    """

    def __init__(self, path: str | Path):
        raw = Path(path).read_bytes()
        nl = raw.index(b"\n")
        header = json.loads(raw[:nl])
        self.dim = int(header["dim"])
        payload = raw[nl + 1:]
        self._rows = {}
        for name, off in header["index"].items():
            chunk = payload[off:off + 4 * self.dim]
            if len(chunk) != 4 * self.dim:
                raise ValueError(f"embedding for {name!r} is truncated")
            self._rows[name] = np.frombuffer(chunk, dtype="<f4").astype(np.float32)

    def encode(self, text: str) -> np.ndarray:
        if text not in self._rows:
            raise KeyError(f"no precomputed embedding for {text!r}")
        return self._rows[text].copy()

    @staticmethod
    def write(path: str | Path, embeddings: dict[str, np.ndarray]) -> None:
        dims = {len(v) for v in embeddings.values()}
        if len(dims) != 1:
            raise ValueError("all embeddings must share one dimension")
        dim = dims.pop()
        index, blobs, off = {}, [], 0
        for name, v in embeddings.items():
            index[name] = off
            blob = np.asarray(v, dtype="<f4").tobytes()
            blobs.append(blob)
            off += len(blob)
        with open(path, "wb") as fh:
            fh.write(json.dumps({"dim": dim, "index": index}).encode() + b"\n")
            fh.write(b"".join(blobs))


class TextualPromptTable(nn.Module):
    """One learnable embedding row per task, initialized from a text encoder."""

    def __init__(self, task_names: Sequence[str], dim: int = 512, encoder: TextEncoder | None = None,
                 descriptions: dict[str, str] | None = None):
        super().__init__()
        if not task_names:
            raise ValueError("textual prompt table needs at least one task")
        self.task_names = list(task_names)
        encoder = encoder or HashTextEncoder(dim)
        if encoder.dim != dim:
            raise ValueError(f"encoder dim {encoder.dim} != table dim {dim}")
        descriptions = {**DEFAULT_DESCRIPTIONS, **(descriptions or {})}
        rows = []
        for name in self.task_names:
            try:
                rows.append(encoder.encode(descriptions.get(name, name)))
            except KeyError:
                rows.append(encoder.encode(name))
        self.embeddings = nn.Parameter(torch.from_numpy(np.stack(rows)).float())

    def index(self, task: str | Task) -> int:
        name = task.value if isinstance(task, Task) else str(task)
        if name not in self.task_names:
            raise ValueError(f"unknown task {name!r}; table holds {self.task_names}")
        return self.task_names.index(name)


def task_probs(table: TextualPromptTable, task: str | Task, batch: int = 1, dtype=torch.float32):
    """One-hot probability rows selecting ``task``."""
    probs = torch.zeros(batch, len(table.task_names), dtype=dtype)
    probs[:, table.index(task)] = 1.0
    return probs


def select_textual_prompt(probs, table: TextualPromptTable, mode: str = "hard", override: str | Task | None = None):
    """Textual prompt for each row of ``probs`` (shape (T,) or (B, T)).

    ``hard`` takes the argmax row (first index on ties), ``soft`` the
    probability-weighted mixture; ``override`` ignores ``probs`` entirely.
    """
    emb = table.embeddings
    if emb.shape[0] == 0:
        raise ValueError("empty textual prompt table")
    probs = torch.as_tensor(probs, dtype=emb.dtype)
    squeeze = probs.dim() == 1
    probs = probs.reshape(-1, emb.shape[0])
    if override is not None:
        out = emb[table.index(override)].expand(probs.shape[0], -1)
    elif (probs < 0).any():
        raise ValueError("prompt probabilities must be non-negative")
    elif mode == "hard":
        out = emb[probs.argmax(-1)]
    elif mode == "soft":
        w = probs / probs.sum(-1, keepdim=True).clamp(min=1e-12)
        out = w @ emb
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    return out[0] if squeeze else out


class TVSP(nn.Module):
    """Text-visual prompt fusion on one skip connection.

    The textual prompt queries the level's learnable visual tokens; the attended
    vector is broadcast over the map, concatenated with the encoder features and
    reduced back to ``dim`` channels by a pointwise conv.
    """

    def __init__(self, dim: int, text_dim: int = 512, n_visual: int = 8,
                 use_text: bool = True, use_visual: bool = True):
        super().__init__()
        if not (use_text or use_visual):
            raise ValueError("TVSP needs the textual or the visual prompt")
        self.dim, self.use_text, self.use_visual = dim, use_text, use_visual
        self.q_proj = nn.Linear(text_dim, dim)
        if use_visual:
            self.visual = nn.Parameter(torch.zeros(n_visual, text_dim))
            self.k_proj = nn.Linear(text_dim, dim)
            self.v_proj = nn.Linear(text_dim, dim)
        if not use_text:
            # task-agnostic learned query replaces the textual prompt
            self.query = nn.Parameter(torch.zeros(1, text_dim))
        self.reduce = nn.Conv2d(2 * dim, dim, 1)
        self.last_attn = None

    def prompt_vector(self, p_t=None, batch: int = 1):
        """The fused (B, dim) prompt vector, independent of the image features."""
        if not self.use_text:
            p_t = self.query.expand(batch, -1)
        elif p_t is None:
            raise ValueError("TVSP with a textual prompt needs P_T")
        q = self.q_proj(p_t)
        if not self.use_visual:
            return q
        k, v = self.k_proj(self.visual), self.v_proj(self.visual)
        attn = (q @ k.t() * self.dim ** -0.5).softmax(-1)
        self.last_attn = attn.detach()
        return attn @ v

    def forward(self, feat, p_t=None):
        b, _, h, w = feat.shape
        vec = self.prompt_vector(p_t, b)
        if vec.shape[0] != b:
            vec = vec.expand(b, -1)
        cat = torch.cat([feat, vec[:, :, None, None].expand(-1, -1, h, w)], dim=1)
        return self.reduce(cat)


ALL_IN_ONE_NAMES = [t.value for t in ALL_IN_ONE_TASKS]
