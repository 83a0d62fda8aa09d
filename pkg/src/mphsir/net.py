"""U-shaped all-in-one restoration network and its checkpoint format."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .cube import HSICube
from .prompts import ALL_IN_ONE_NAMES, TVSP, TextualPromptTable, select_textual_prompt, task_probs
from .sst import PGSSTB


@dataclass
class ModelConfig:
    in_bands: int = 31
    base_channels: int = 32
    blocks_per_level: tuple[int, int, int] = (2, 3, 4)
    heads_per_level: tuple[int, int, int] = (2, 4, 8)
    window: int = 8
    prompt_len: int = 16
    prompt_dim: int = 64
    gmlp_expansion: float = 2.0
    n_visual: int = 8
    text_dim: int = 512
    width_multiplier: float = 1.0
    epsilon_init: float = 1.0
    task_names: tuple[str, ...] = tuple(ALL_IN_ONE_NAMES)
    # ablation switches
    use_global_spectral: bool = True
    use_local_spectral: bool = True
    use_spectral_prompt: bool = True
    use_text_prompt: bool = True
    use_visual_prompt: bool = True
    local_outer_product: bool = False

    def __post_init__(self):
        self.blocks_per_level = tuple(self.blocks_per_level)
        self.heads_per_level = tuple(self.heads_per_level)
        self.task_names = tuple(self.task_names)
        if len(self.blocks_per_level) != 3 or len(self.heads_per_level) != 3:
            raise ValueError("the network has exactly three levels")
        if min(self.in_bands, self.base_channels, self.window, self.prompt_len, self.prompt_dim, self.n_visual) < 1:
            raise ValueError("sizes must be positive")
        for c, h in zip(self.level_channels, self.heads_per_level):
            if c % h:
                raise ValueError(f"level width {c} not divisible by {h} heads")
        if len(self.task_names) < 1:
            raise ValueError("need at least one task name")

    @property
    def level_channels(self) -> list[int]:
        c0 = int(round(self.base_channels * self.width_multiplier))
        return [c0, 2 * c0, 4 * c0]

    @property
    def uses_tvsp(self) -> bool:
        return self.use_text_prompt or self.use_visual_prompt

    @property
    def pad_multiple(self) -> int:
        return 4 * self.window

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ModelConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


class MPHSIR(nn.Module):
    def __init__(self, cfg: ModelConfig, text_encoder=None):
        super().__init__()
        self.cfg = cfg
        ch = cfg.level_channels
        p = cfg.window

        def blocks(level: int):
            return nn.ModuleList(
                PGSSTB(ch[level], cfg.heads_per_level[level], p, shift=(p // 2 if i % 2 else 0),
                       prompt_len=cfg.prompt_len, prompt_dim=cfg.prompt_dim, expansion=cfg.gmlp_expansion,
                       epsilon_init=cfg.epsilon_init, use_global=cfg.use_global_spectral,
                       use_local=cfg.use_local_spectral, use_prompt=cfg.use_spectral_prompt,
                       outer=cfg.local_outer_product)
                for i in range(cfg.blocks_per_level[level])
            )

        self.stem = nn.Conv2d(cfg.in_bands, ch[0], 3, padding=1)
        self.encoder = nn.ModuleList(blocks(level) for level in range(3))
        self.down = nn.ModuleList(nn.Conv2d(ch[i], ch[i + 1], 3, stride=2, padding=1) for i in range(2))
        self.up = nn.ModuleList(nn.ConvTranspose2d(ch[i + 1], ch[i], 2, stride=2) for i in range(2))
        self.merge = nn.ModuleList(nn.Conv2d(2 * ch[i], ch[i], 1) for i in range(2))
        self.decoder = nn.ModuleList(blocks(level) for level in range(2))
        self.head = nn.Conv2d(ch[0], cfg.in_bands, 3, padding=1)
        if cfg.use_local_spectral and cfg.use_spectral_prompt:
            self.spectral_prompts = nn.ParameterList(
                nn.Parameter(torch.zeros(cfg.prompt_len, cfg.prompt_dim)) for _ in range(3))
        else:
            self.spectral_prompts = None
        if cfg.use_text_prompt:
            self.text = TextualPromptTable(cfg.task_names, cfg.text_dim, text_encoder)
        else:
            self.text = None
        if cfg.uses_tvsp:
            self.tvsp = nn.ModuleList(
                TVSP(ch[i], cfg.text_dim, cfg.n_visual, cfg.use_text_prompt, cfg.use_visual_prompt) for i in range(2))
        else:
            self.tvsp = None

    def _prompt(self, level: int):
        return self.spectral_prompts[level] if self.spectral_prompts is not None else None

    def textual_prompt(self, probs, mode: str = "hard"):
        if self.text is None:
            return None
        if probs is None:
            raise ValueError("this model needs task probabilities (predictor output or override)")
        return select_textual_prompt(probs, self.text, mode)

    def forward(self, y, probs=None, mode: str = "hard"):
        """Restore ``y`` (B, bands, H, W) given per-sample task probabilities."""
        if y.dim() != 4 or y.shape[1] != self.cfg.in_bands:
            raise ValueError(f"expected (B, {self.cfg.in_bands}, H, W) input, got {tuple(y.shape)}")
        h, w = y.shape[-2:]
        m = self.cfg.pad_multiple
        ph, pw = (-h) % m, (-w) % m
        x = y
        if ph or pw:
            pad_mode = "reflect" if ph < h and pw < w else "replicate"
            x = F.pad(y, (0, pw, 0, ph), mode=pad_mode)
        p_t = self.textual_prompt(probs, mode)

        feat = self.stem(x)
        skips = []
        for level in range(3):
            for blk in self.encoder[level]:
                feat = blk(feat, self._prompt(level))
            if level < 2:
                skips.append(feat)
                feat = self.down[level](feat)
        for level in (1, 0):
            feat = self.up[level](feat)
            skip = skips[level]
            if self.tvsp is not None:
                skip = self.tvsp[level](skip, p_t)
            feat = self.merge[level](torch.cat([feat, skip], dim=1))
            for blk in self.decoder[level]:
                feat = blk(feat, self._prompt(level))
        out = self.head(feat)[..., :h, :w]
        return out + y


def init_weights(model: nn.Module, seed: int) -> nn.Module:
    """Deterministic init: truncated normal (std 0.02) for attention, MLP and prompt
    projections and the head, zero biases, uniform [0, 0.02) for spectral and visual
    prompt parameters. The convolutional scaffold (stem, down/up sampling, skip merges,
    TVSP reductions) gets variance-preserving truncated normal (std 1/sqrt(fan_in))
    so encoder features reach the decoder at their own scale."""
    g = torch.Generator().manual_seed(int(seed) % (2**63))
    with torch.no_grad():
        for name, prm in model.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if name.startswith("text."):
                continue  # keeps the text-encoder initialization
            if name.startswith("spectral_prompts") or leaf in ("visual", "query"):
                nn.init.uniform_(prm, 0.0, 1.0, generator=g).mul_(0.02)
            elif leaf == "epsilon":
                continue
            elif ".norm" in name or name.startswith("norm"):
                continue  # LayerNorm keeps ones / zeros
            elif leaf == "bias":
                prm.zero_()
            elif _is_scaffold(name):
                std = 1.0 / np.sqrt(_fan_in(name, prm))
                nn.init.trunc_normal_(prm, std=std, a=-2 * std, b=2 * std, generator=g)
            else:
                nn.init.trunc_normal_(prm, std=0.02, a=-0.04, b=0.04, generator=g)
    return model


SCAFFOLD = ("stem.", "down.", "up.", "merge.")


def _is_scaffold(name: str) -> bool:
    return name.startswith(SCAFFOLD) or (name.startswith("tvsp.") and ".reduce." in name)


def _fan_in(name: str, prm: torch.Tensor) -> int:
    # transposed convs store (in, out, kh, kw); each output sees in * kh * kw / stride^2 = in inputs
    if name.startswith("up."):
        return prm.shape[0]
    return int(np.prod(prm.shape[1:]))


def build_model(cfg: ModelConfig, seed: int = 0, text_encoder=None) -> MPHSIR:
    model = MPHSIR(cfg, text_encoder)
    init_weights(model, seed)
    model.seed = int(seed)
    return model


def count_params(weights) -> int:
    """Exact scalar count of a module or a name -> tensor mapping."""
    if isinstance(weights, nn.Module):
        weights = dict(weights.named_parameters())
    return int(sum(int(np.prod(tuple(t.shape))) for t in weights.values()))


# ------------------------------------------------------------------ checkpoints

def save_weights(path: str | Path, tensors: Mapping[str, torch.Tensor], meta: Mapping[str, Any]) -> None:
    """Write ``tensors`` as one JSON index line plus a concatenated float32 LE payload."""
    index, blobs, off = {}, [], 0
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().numpy().astype("<f4")
        blob = arr.tobytes(order="C")
        index[name] = {"dtype": "f32le", "shape": list(arr.shape), "offset": off}
        blobs.append(blob)
        off += len(blob)
    header = {"meta": dict(meta), "tensors": index, "payload_bytes": off}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(b"".join(blobs))


def load_weights(path: str | Path) -> tuple[dict[str, torch.Tensor], dict[str, Any]]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: malformed checkpoint header")
    header = json.loads(raw[:nl])
    payload = raw[nl + 1:]
    if len(payload) != header["payload_bytes"]:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, header says {header['payload_bytes']}")
    tensors = {}
    for name, info in header["tensors"].items():
        if info["dtype"] != "f32le":
            raise ValueError(f"unsupported dtype {info['dtype']!r} for {name}")
        n = int(np.prod(info["shape"])) if info["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=info["offset"]).reshape(info["shape"])
        tensors[name] = torch.from_numpy(arr.astype(np.float32))
    return tensors, header["meta"]


def save_model(path: str | Path, model: MPHSIR, extra: Mapping[str, Any] | None = None) -> None:
    meta = {"kind": "mphsir", "config": model.cfg.to_dict(), "seed": getattr(model, "seed", 0), **(extra or {})}
    save_weights(path, model.state_dict(), meta)


def load_model(path: str | Path) -> tuple[MPHSIR, dict[str, Any]]:
    tensors, meta = load_weights(path)
    if meta.get("kind") != "mphsir":
        raise ValueError(f"{path} is not a restoration-model checkpoint")
    model = MPHSIR(ModelConfig.from_dict(meta["config"]))
    model.load_state_dict(tensors)
    model.seed = meta.get("seed", 0)
    return model, meta


# ------------------------------------------------------------------ cube-level inference

@torch.no_grad()
def restore_cube(model: MPHSIR, cube: HSICube, task: str | None = None, predictor=None,
                 mode: str = "hard") -> tuple[HSICube, np.ndarray | None]:
    """Restore one cube. ``task`` overrides the predictor; returns (cube, probs used)."""
    model.eval()
    dtype = next(model.parameters()).dtype
    y = torch.from_numpy(cube.data).to(dtype)[None]
    probs = None
    if model.text is not None:
        if task is not None:
            probs = task_probs(model.text, task, dtype=dtype)
        elif predictor is not None:
            probs = predictor.predict_probs(cube)[None].to(dtype)
        else:
            raise ValueError("textual prompts need a predictor or an explicit task")
    out = model(y, probs, mode)[0].cpu().numpy()
    return cube.replace(out), (probs[0].cpu().numpy() if probs is not None else None)
