"""Degradation-type classifier: small residual CNN with Fourier-convolution branches."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .cube import HSICube
from .degrade import ALL_IN_ONE_TASKS
from .net import load_weights, save_weights

PROB_CLAMP = 1e-7
# floor inside the log-gradient features; exact zeros (blockwise-constant upsampling) map to log(1e-6)
GRAD_EPS = 1e-6


@dataclass
class PredictorConfig:
    in_bands: int = 31
    blocks: int = 4
    channels: int = 32
    num_tasks: int = 7
    use_fourier_branch: bool = True
    task_names: tuple[str, ...] = tuple(t.value for t in ALL_IN_ONE_TASKS)

    def __post_init__(self):
        self.task_names = tuple(self.task_names)
        if self.num_tasks < 2:
            raise ValueError("predictor needs at least two classes")
        if len(self.task_names) != self.num_tasks:
            raise ValueError("task_names must list num_tasks names")
        if self.blocks < 1 or self.channels < 1:
            raise ValueError("blocks and channels must be positive")

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["task_names"] = list(self.task_names)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> PredictorConfig:
        return cls(**d)


class FourierUnit(nn.Module):
    """Pointwise conv in the 2-D real-FFT domain on stacked real/imaginary parts."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(2 * channels, 2 * channels, 1)

    def forward(self, x):
        h, w = x.shape[-2:]
        spec = torch.fft.rfft2(x, norm="ortho")
        z = self.conv(torch.cat([spec.real, spec.imag], dim=1))
        re, im = z.chunk(2, dim=1)
        return torch.fft.irfft2(torch.complex(re, im), s=(h, w), norm="ortho")


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, fourier: bool):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, padding_mode="circular")
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, padding_mode="circular")
        self.fourier = FourierUnit(channels) if fourier else None

    def forward(self, x):
        branch = self.conv2(F.relu(self.conv1(x)))
        if self.fourier is not None:
            branch = branch + self.fourier(x)
        return F.relu(x + branch)


def log_gradient_features(x):
    """(N, 1, H, W) -> (N, 3, H, W): the image and log|dx|, log|dy| scaled to roughly unit range."""
    dx = x - torch.roll(x, 1, dims=-1)
    dy = x - torch.roll(x, 1, dims=-2)
    scale = -1.0 / np.log(GRAD_EPS)
    return torch.cat([x, 1 + scale * torch.log(dx.abs() + GRAD_EPS), 1 + scale * torch.log(dy.abs() + GRAD_EPS)], dim=1)


class DegradationPredictor(nn.Module):
    """Per-band residual trunk shared across bands, then statistics across bands.

    Every band runs through the same stem and residual blocks as a single-channel
    image, alongside the log magnitude of its circular horizontal and vertical
    differences so that smoothing, blockwise upsampling and haze, which differ
    mostly in the scale of fine detail, are separable from the first layer. Spatial average pooling gives one descriptor per band, and the mean,
    max, min and standard deviation of those descriptors over the bands feed a
    small classification head. Band-wise effects (dropped bands, per-band noise
    levels, stripes) are then directly visible to the head.
    """

    def __init__(self, cfg: PredictorConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.stem = nn.Conv2d(3, c, 3, padding=1, padding_mode="circular")
        self.blocks = nn.ModuleList(ResidualBlock(c, cfg.use_fourier_branch) for _ in range(cfg.blocks))
        self.hidden = nn.Linear(4 * c, 2 * c)
        self.head = nn.Linear(2 * c, cfg.num_tasks)

    def band_descriptors(self, x):
        """(N, bands, H, W) -> (N, bands, C) pooled per-band features."""
        n, b, h, w = x.shape
        z = F.relu(self.stem(log_gradient_features(x.reshape(n * b, 1, h, w))))
        for i, blk in enumerate(self.blocks):
            if i < 2 and min(z.shape[-2:]) >= 4:
                z = F.avg_pool2d(z, 2)
            z = blk(z)
        return z.mean((2, 3)).view(n, b, -1)

    def forward(self, x):
        """Class logits; pass through ``torch.sigmoid`` for per-class probabilities."""
        if x.dim() != 4 or x.shape[1] != self.cfg.in_bands:
            raise ValueError(f"predictor trained for {self.cfg.in_bands} bands, got shape {tuple(x.shape)}")
        d = self.band_descriptors(x)
        stats = torch.cat([d.mean(1), d.amax(1), d.amin(1), d.std(1, unbiased=False)], dim=1)
        return self.head(F.relu(self.hidden(stats)))

    @torch.no_grad()
    def predict_probs(self, cube: HSICube) -> torch.Tensor:
        self.eval()
        dtype = next(self.parameters()).dtype
        return torch.sigmoid(self(torch.from_numpy(cube.data).to(dtype)[None]))[0]

    def predict(self, cube: HSICube) -> dict[str, float]:
        probs = self.predict_probs(cube)
        return {name: float(p) for name, p in zip(self.cfg.task_names, probs)}


def predict_degradation(model: DegradationPredictor, y: HSICube) -> np.ndarray:
    return model.predict_probs(y).cpu().numpy()


def bce_loss(probs, labels):
    """Mean binary cross-entropy over all scalar terms; probs clamped to [1e-7, 1 - 1e-7]."""
    if probs.shape != labels.shape:
        raise ValueError(f"shape mismatch {tuple(probs.shape)} vs {tuple(labels.shape)}")
    p = probs.clamp(PROB_CLAMP, 1 - PROB_CLAMP)
    return -(labels * torch.log(p) + (1 - labels) * torch.log(1 - p)).mean()


def build_predictor(cfg: PredictorConfig, seed: int = 0) -> DegradationPredictor:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = DegradationPredictor(cfg)
    model.seed = int(seed)
    return model


def save_predictor(path, model: DegradationPredictor, extra: Mapping[str, Any] | None = None) -> None:
    meta = {"kind": "predictor", "config": model.cfg.to_dict(), "seed": getattr(model, "seed", 0), **(extra or {})}
    save_weights(path, model.state_dict(), meta)


def load_predictor(path) -> tuple[DegradationPredictor, dict[str, Any]]:
    tensors, meta = load_weights(path)
    if meta.get("kind") != "predictor":
        raise ValueError(f"{path} is not a predictor checkpoint")
    model = build_predictor(PredictorConfig.from_dict(meta["config"]), meta.get("seed", 0))
    model.load_state_dict(tensors)
    model.eval()
    return model, meta
