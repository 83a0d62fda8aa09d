"""Synthesis of the nine hyperspectral degradations.

All operators take a clean, normalized :class:`HSICube` and return a new cube
(plus auxiliary masks where evaluation needs them). Randomness always comes
from an explicit seed, so ``(cube, params, seed)`` fully determines the output.
Outputs are intentionally not clipped to [0, 1].
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import ndimage

from .cube import HSICube

T_MIN = 1e-3


class Task(str, enum.Enum):
    GaussianNoise = "GaussianNoise"
    ComplexNoise = "ComplexNoise"
    GaussianBlur = "GaussianBlur"
    Downsample = "Downsample"
    Inpaint = "Inpaint"
    Haze = "Haze"
    BandDrop = "BandDrop"
    MotionBlur = "MotionBlur"
    PoissonNoise = "PoissonNoise"

    @classmethod
    def parse(cls, name: str | Task) -> Task:
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown task {name!r}; choose from {[t.value for t in cls]}") from None


# the seven tasks the all-in-one model and the predictor are trained on
ALL_IN_ONE_TASKS: tuple[Task, ...] = tuple(list(Task)[:7])


def derive_seed(*parts: Any) -> int:
    """Stable 64-bit seed from arbitrary printable parts."""
    text = "\x1f".join(str(p.value if isinstance(p, enum.Enum) else p) for p in parts)
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _per_band(cube: HSICube, fn) -> HSICube:
    x = cube.data.astype(np.float64)
    return cube.replace(np.stack([fn(band) for band in x]))


# --------------------------------------------------------------------------- noise

def apply_gaussian_noise(cube: HSICube, sigma: float, seed: int) -> HSICube:
    """i.i.d. additive noise; ``sigma`` is on the 0-255 scale."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(cube.data.shape) * (sigma / 255.0)
    return cube.replace(cube.data.astype(np.float64) + noise)


def apply_complex_noise(cube: HSICube, case: int, seed: int, return_info: bool = False):
    """Non-i.i.d. Gaussian noise, optionally with stripes, deadlines or impulses.

    With ``return_info`` the call returns ``(cube, info)`` where ``info`` lists
    the extra-corrupted bands and the per-band draws.
    """
    if case not in (1, 2, 3, 4):
        raise ValueError(f"invalid complex-noise case {case!r}; expected 1..4")
    rng = np.random.default_rng(seed)
    b, h, w = cube.data.shape
    sigmas = rng.uniform(10, 70, size=b) / 255.0
    y = cube.data.astype(np.float64) + rng.standard_normal((b, h, w)) * sigmas[:, None, None]
    info: dict[str, Any] = {"sigmas": sigmas, "bands": [], "ratios": []}
    if case > 1:
        bands = np.sort(rng.choice(b, size=b // 3, replace=False))
        info["bands"] = bands.tolist()
        for band in bands:
            if case in (2, 3):
                frac = rng.uniform(0.05, 0.15)
                n = max(1, _round_half_up(frac * w))
                cols = rng.choice(w, size=n, replace=False)
                if case == 2:
                    y[band][:, cols] += rng.uniform(-0.25, 0.25, size=n)[None, :]
                else:
                    y[band][:, cols] = 0.0
            else:
                frac = rng.uniform(0.1, 0.7)
                n = _round_half_up(frac * h * w)
                idx = rng.choice(h * w, size=n, replace=False)
                salt = rng.random(n) < 0.5
                flat = y[band].reshape(-1)
                flat[idx[salt]] = 1.0
                flat[idx[~salt]] = 0.0
            info["ratios"].append(frac)
    out = cube.replace(y)
    return (out, info) if return_info else out


def apply_poisson(cube: HSICube, factor: float, seed: int) -> HSICube:
    if factor <= 0:
        raise ValueError("Poisson factor must be positive")
    x = cube.data.astype(np.float64)
    if (x < 0).any():
        raise ValueError("Poisson model needs non-negative input voxels")
    rng = np.random.default_rng(seed)
    return cube.replace(rng.poisson(x * factor) / factor)


# --------------------------------------------------------------------------- blur

def blur_sigma(kernel_size: int) -> float:
    """Gaussian std for a given odd kernel size: ``0.3 * ((K - 1) / 2 - 1) + 0.8``."""
    if kernel_size < 3 or kernel_size % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 3, got {kernel_size}")
    # exact decimal evaluation: tenths as an integer numerator
    return (3 * ((kernel_size - 1) // 2 - 1) + 8) / 10


def gaussian_kernel(kernel_size: int) -> np.ndarray:
    sigma = blur_sigma(kernel_size)
    r = (kernel_size - 1) // 2
    g = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def _convolve_bands(cube: HSICube, kernel: np.ndarray) -> HSICube:
    if kernel.shape[0] > cube.height or kernel.shape[1] > cube.width:
        raise ValueError(f"kernel {kernel.shape} larger than spatial extent {cube.height}x{cube.width}")
    return _per_band(cube, lambda band: ndimage.convolve(band, kernel, mode="mirror"))


def apply_gaussian_blur(cube: HSICube, kernel_size: int) -> HSICube:
    return _convolve_bands(cube, gaussian_kernel(kernel_size))


def motion_kernel(radius: int, angle: float) -> np.ndarray:
    """Line kernel of length ``2 * radius + 1`` at ``angle`` degrees (counter-clockwise)."""
    if radius < 1:
        raise ValueError("motion blur radius must be >= 1")
    size = 2 * radius + 1
    k = np.zeros((size, size))
    theta = math.radians(angle)
    for t in np.linspace(-radius, radius, 8 * size + 1):
        col = radius + int(round(t * math.cos(theta)))
        row = radius - int(round(t * math.sin(theta)))
        k[row, col] = 1.0
    return k / k.sum()


def apply_motion_blur(cube: HSICube, radius: int, angle: float) -> HSICube:
    return _convolve_bands(cube, motion_kernel(radius, angle))


# --------------------------------------------------------------------------- resampling

def _cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    x = np.abs(x)
    return np.where(
        x <= 1,
        (a + 2) * x**3 - (a + 3) * x**2 + 1,
        np.where(x < 2, a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a, 0.0),
    )


def _mirror_index(j: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(j)
    period = 2 * (n - 1)
    j = np.mod(j, period)
    return np.where(j >= n, period - j, j)


def bicubic_weights(n_in: int, scale: int) -> np.ndarray:
    """(n_in // scale, n_in) antialiased Catmull-Rom downsampling matrix."""
    n_out = n_in // scale
    m = np.zeros((n_out, n_in))
    support = 2 * scale
    for i in range(n_out):
        center = (i + 0.5) * scale - 0.5
        taps = np.arange(math.floor(center - support) + 1, math.ceil(center + support))
        wts = _cubic((taps - center) / scale)
        np.add.at(m[i], _mirror_index(taps, n_in), wts)
        m[i] /= m[i].sum()
    return m


def bicubic_downsample(cube: HSICube, scale: int) -> np.ndarray:
    mh, mw = bicubic_weights(cube.height, scale), bicubic_weights(cube.width, scale)
    return np.einsum("ih,bhw,jw->bij", mh, cube.data.astype(np.float64), mw)


def downsample_then_unpool(cube: HSICube, scale: int) -> HSICube:
    if scale not in (2, 4, 8):
        raise ValueError(f"scale must be 2, 4 or 8, got {scale}")
    if cube.height % scale or cube.width % scale:
        raise ValueError(f"spatial extent {cube.height}x{cube.width} not divisible by {scale}")
    low = bicubic_downsample(cube, scale)
    return cube.replace(low.repeat(scale, axis=1).repeat(scale, axis=2))


# --------------------------------------------------------------------------- masks

def apply_inpaint_mask(cube: HSICube, rate: float, seed: int) -> tuple[HSICube, np.ndarray]:
    """Zero ``round(rate * H * W)`` random pixels in every band; mask is 1 where kept."""
    if not 0 <= rate < 1:
        raise ValueError("mask rate must lie in (0, 1)")
    h, w = cube.height, cube.width
    n = _round_half_up(rate * h * w)
    rng = np.random.default_rng(seed)
    mask = np.ones(h * w, dtype=np.float32)
    mask[rng.choice(h * w, size=n, replace=False)] = 0.0
    mask = mask.reshape(h, w)
    return cube.replace(cube.data * mask[None]), mask


def drop_bands(cube: HSICube, rate: float, seed: int) -> tuple[HSICube, list[int]]:
    n = _round_half_up(rate * cube.bands)
    if not 0 < rate < 1 or n == 0 or n == cube.bands:
        raise ValueError(f"drop rate {rate} removes {n} of {cube.bands} bands")
    rng = np.random.default_rng(seed)
    dropped = sorted(int(i) for i in rng.choice(cube.bands, size=n, replace=False))
    data = cube.data.copy()
    data[dropped] = 0.0
    return cube.replace(data), dropped


# --------------------------------------------------------------------------- haze

@dataclass
class HazeParams:
    omega: float
    cirrus: np.ndarray
    atmospheric_light: float = 0.9
    gamma: float = 1.0
    lambda_ref: float | None = None  # defaults to the shortest band

    def __post_init__(self):
        if not 0 < self.omega <= 1:
            raise ValueError("omega must lie in (0, 1]")
        if not 0 < self.atmospheric_light <= 1:
            raise ValueError("atmospheric light must lie in (0, 1]")
        self.cirrus = np.asarray(self.cirrus, dtype=np.float64)

    def reference_transmission(self) -> np.ndarray:
        return np.clip(1.0 - self.omega * self.cirrus, T_MIN, 1.0)


def synth_cirrus_map(seed: int, h: int, w: int) -> np.ndarray:
    """Smooth multi-octave random field scaled to [0, 1]."""
    rng = np.random.default_rng(seed)
    field_ = np.zeros((h, w))
    for sigma, weight in ((16.0, 1.0), (8.0, 0.5), (4.0, 0.25)):
        layer = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma, mode="wrap")
        field_ += weight * layer / (layer.std() + 1e-12)
    lo, hi = field_.min(), field_.max()
    return np.clip((field_ - lo) / (hi - lo + 1e-300), 0.0, 1.0)


def apply_haze(cube: HSICube, hp: HazeParams) -> HSICube:
    if cube.wavelengths is None:
        raise ValueError("haze synthesis needs band wavelengths")
    if hp.cirrus.shape != (cube.height, cube.width):
        raise ValueError(f"cirrus map shape {hp.cirrus.shape} does not match cube {cube.height}x{cube.width}")
    lam = np.asarray(cube.wavelengths)
    lam1 = lam[0] if hp.lambda_ref is None else hp.lambda_ref
    t1 = hp.reference_transmission()
    # t1 ** r == exp(r * ln t1); the power form is exact when r == 1
    t = t1[None] ** ((lam1 / lam) ** hp.gamma)[:, None, None]
    j = cube.data.astype(np.float64)
    return cube.replace(j * t + hp.atmospheric_light * (1.0 - t))


# --------------------------------------------------------------------------- dispatch

_PARAM_KEYS = {
    Task.GaussianNoise: {"sigma"},
    Task.ComplexNoise: {"case"},
    Task.GaussianBlur: {"kernel_size"},
    Task.Downsample: {"scale"},
    Task.Inpaint: {"rate"},
    Task.Haze: {"omega"},
    Task.BandDrop: {"rate"},
    Task.MotionBlur: {"radius", "angle"},
    Task.PoissonNoise: {"factor"},
}


@dataclass
class DegradationSpec:
    task: Task
    params: dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.task = Task.parse(self.task)
        p = self.params
        missing = _PARAM_KEYS[self.task] - set(p)
        if missing:
            raise ValueError(f"{self.task.value} spec missing params {sorted(missing)}")
        t = self.task
        if t is Task.GaussianNoise and not 0 < p["sigma"] <= 255:
            raise ValueError("sigma must lie in (0, 255]")
        if t is Task.ComplexNoise and p["case"] not in (1, 2, 3, 4):
            raise ValueError(f"invalid complex-noise case {p['case']!r}")
        if t is Task.GaussianBlur:
            blur_sigma(p["kernel_size"])
        if t is Task.Downsample and p["scale"] not in (2, 4, 8):
            raise ValueError("scale must be 2, 4 or 8")
        if t in (Task.Inpaint, Task.BandDrop) and not 0 < p["rate"] < 1:
            raise ValueError("rate must lie in (0, 1)")
        if t is Task.Haze and not 0 < p["omega"] <= 1:
            raise ValueError("omega must lie in (0, 1]")
        if t is Task.MotionBlur and p["radius"] < 1:
            raise ValueError("radius must be >= 1")
        if t is Task.PoissonNoise and not p["factor"] > 0:
            raise ValueError("Poisson factor must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {"task": self.task.value, "params": dict(self.params), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> DegradationSpec:
        return cls(Task.parse(d["task"]), dict(d.get("params", {})), int(d.get("seed", 0)))


def degrade(cube: HSICube, spec: DegradationSpec) -> tuple[HSICube, Task, Any]:
    """Apply ``spec`` and return ``(degraded, task label, aux)``.

    ``aux`` is the keep-mask for inpainting, the dropped band indices for band
    completion, and ``None`` otherwise.
    """
    p, seed, t = spec.params, spec.seed, spec.task
    aux = None
    if t is Task.GaussianNoise:
        out = apply_gaussian_noise(cube, p["sigma"], seed)
    elif t is Task.ComplexNoise:
        out = apply_complex_noise(cube, int(p["case"]), seed)
    elif t is Task.GaussianBlur:
        out = apply_gaussian_blur(cube, int(p["kernel_size"]))
    elif t is Task.Downsample:
        out = downsample_then_unpool(cube, int(p["scale"]))
    elif t is Task.Inpaint:
        out, aux = apply_inpaint_mask(cube, p["rate"], seed)
    elif t is Task.Haze:
        cirrus = p.get("cirrus")
        if cirrus is None:
            cirrus = synth_cirrus_map(derive_seed(seed, "cirrus"), cube.height, cube.width)
        hp = HazeParams(
            omega=p["omega"],
            cirrus=cirrus,
            atmospheric_light=p.get("atmospheric_light", 0.9),
            gamma=p.get("gamma", 1.0),
            lambda_ref=p.get("lambda_ref"),
        )
        out = apply_haze(cube, hp)
    elif t is Task.BandDrop:
        out, aux = drop_bands(cube, p["rate"], seed)
    elif t is Task.MotionBlur:
        out = apply_motion_blur(cube, int(p["radius"]), float(p["angle"]))
    else:
        out = apply_poisson(cube, p["factor"], seed)
    return out, t, aux


# evaluation grid levels and training ranges for the all-in-one tasks
TEST_LEVELS: dict[Task, list[dict[str, Any]]] = {
    Task.GaussianNoise: [{"sigma": s} for s in (30, 50, 70)],
    Task.ComplexNoise: [{"case": c} for c in (1, 2, 3, 4)],
    Task.GaussianBlur: [{"kernel_size": k} for k in (9, 15, 21)],
    Task.Downsample: [{"scale": s} for s in (2, 4, 8)],
    Task.Inpaint: [{"rate": r} for r in (0.7, 0.8, 0.9)],
    Task.Haze: [{"omega": w} for w in (0.5, 0.75, 1.0)],
    Task.BandDrop: [{"rate": r} for r in (0.1, 0.2, 0.3)],
    Task.MotionBlur: [{"radius": 15, "angle": 45.0}],
    Task.PoissonNoise: [{"factor": 10.0}],
}


def random_spec(task: Task, seed: int) -> DegradationSpec:
    """Training-time draw of a degradation level for ``task``."""
    rng = np.random.default_rng(derive_seed(seed, "level", task))
    t = Task.parse(task)
    if t is Task.GaussianNoise:
        params: dict[str, Any] = {"sigma": float(rng.uniform(30, 70))}
    elif t is Task.Haze:
        params = {"omega": float(rng.choice([0.5, 0.75, 1.0])), "atmospheric_light": float(rng.uniform(0.7, 1.0))}
    else:
        levels = TEST_LEVELS[t]
        params = dict(levels[int(rng.integers(len(levels)))])
    return DegradationSpec(t, params, seed)
