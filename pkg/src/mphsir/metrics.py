"""Image-quality metrics and evaluation reports."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .cube import HSICube

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _arr(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, HSICube) else x, dtype=np.float64)


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    a, b = _arr(x), _arr(y)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(x, y) -> float:
    a, b = _pair(x, y)
    return float(np.mean((a - b) ** 2))


def psnr(x, y, peak: float = 1.0) -> float:
    """Joint PSNR over all voxels in dB; identical inputs give the 100 dB cap."""
    err = mse(x, y)
    if err == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak**2 / err))


def _gauss_window() -> np.ndarray:
    r = SSIM_WINDOW // 2
    g = np.exp(-0.5 * (np.arange(-r, r + 1) / SSIM_SIGMA) ** 2)
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable valid-mode Gaussian filtering over the last two axes
    img = sliding_window_view(img, len(g), axis=-1) @ g
    img = sliding_window_view(img, len(g), axis=-2) @ g
    return img


def ssim_per_band(x, y, data_range: float = 1.0) -> np.ndarray:
    a, b = _pair(x, y)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs spatial extent >= {SSIM_WINDOW}, got {a.shape[-2:]}")
    g = _gauss_window()
    c1, c2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    s_aa = _filter_valid(a * a, g) - mu_a**2
    s_bb = _filter_valid(b * b, g) - mu_b**2
    s_ab = _filter_valid(a * b, g) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + c1) * (2 * s_ab + c2)) / ((mu_a**2 + mu_b**2 + c1) * (s_aa + s_bb + c2))
    return smap.mean(axis=(-2, -1))


def ssim(x, y, data_range: float = 1.0) -> float:
    """Gaussian-window SSIM per band, averaged over bands."""
    return float(ssim_per_band(x, y, data_range).mean())


def spectral_error_curve(x, y) -> np.ndarray:
    """Mean absolute error of every band (normalized DN error)."""
    a, b = _pair(x, y)
    return np.abs(a - b).mean(axis=(1, 2))


def masked_band_eval(x, y, dropped: Sequence[int]) -> tuple[float, float]:
    """PSNR and SSIM restricted to the listed bands."""
    idx = sorted(set(int(i) for i in dropped))
    if not idx:
        raise ValueError("dropped band set is empty")
    a, b = _pair(x, y)
    return psnr(a[idx], b[idx]), ssim(a[idx], b[idx])


@dataclass
class EvalEntry:
    task: str
    level: dict[str, Any]
    psnr: float
    ssim: float
    psnr_degraded: float
    ssim_degraded: float
    curve: list[float]
    curve_degraded: list[float]
    n_images: int = 1
    identical: bool = False


@dataclass
class EvalReport:
    entries: list[EvalEntry] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=lambda: {"psnr_mode": "joint"})

    def get(self, task: str, **level) -> EvalEntry:
        for e in self.entries:
            if e.task == task and all(e.level.get(k) == v for k, v in level.items()):
                return e
        raise KeyError(f"no entry for {task} {level}")

    def for_task(self, task: str) -> list[EvalEntry]:
        return [e for e in self.entries if e.task == task]

    def to_json(self) -> str:
        return json.dumps({"metadata": self.metadata, "entries": [asdict(e) for e in self.entries]}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> EvalReport:
        raw = json.loads(text)
        return cls([EvalEntry(**e) for e in raw["entries"]], raw["metadata"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> EvalReport:
        return cls.from_json(Path(path).read_text())
