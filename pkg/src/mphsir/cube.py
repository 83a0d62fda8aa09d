"""Hyperspectral cube container, file format, patching and synthetic scenes.

Cubes are stored band-major, ``data.shape == (bands, height, width)``, as
float32. The on-disk format is a single JSON header line followed by the raw
little-endian float32 payload in the same band-major order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "CubeFormatError",
    "HSICube",
    "PatchSpec",
    "DatasetManifest",
    "normalize_minmax",
    "crop_patches",
    "synth_cube",
    "write_cube",
    "read_cube",
]


class CubeFormatError(ValueError):
    """Raised for malformed cube files."""


@dataclass(frozen=True, eq=False)
class HSICube:
    data: np.ndarray
    wavelengths: tuple[float, ...] | None = None

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"cube data must be a non-empty (bands, height, width) array, got {data.shape}")
        object.__setattr__(self, "data", data)
        if self.wavelengths is not None:
            wl = tuple(float(v) for v in self.wavelengths)
            if len(wl) != data.shape[0]:
                raise ValueError(f"expected {data.shape[0]} wavelengths, got {len(wl)}")
            if any(b <= a for a, b in zip(wl, wl[1:])):
                raise ValueError("wavelengths must be strictly increasing")
            object.__setattr__(self, "wavelengths", wl)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def replace(self, data: np.ndarray) -> HSICube:
        """New cube with the same wavelengths and different values."""
        return HSICube(data, self.wavelengths)

    def __eq__(self, other):
        if not isinstance(other, HSICube):
            return NotImplemented
        return (
            self.wavelengths == other.wavelengths
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass(frozen=True)
class PatchSpec:
    size: int
    stride: int

    def __post_init__(self):
        if self.size < 1 or self.stride < 1:
            raise ValueError("patch size and stride must be positive")
        if self.stride > self.size:
            raise ValueError("stride must not exceed patch size")


@dataclass
class DatasetManifest:
    """List of ``(path, split, scene_id)`` entries plus the dataset seed."""

    entries: list[tuple[str, str, str]] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        self.entries = [tuple(e) for e in self.entries]
        paths = [e[0] for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be unique")
        for _, split, _ in self.entries:
            if split not in ("train", "test"):
                raise ValueError(f"unknown split tag {split!r}")

    def split(self, tag: str) -> list[tuple[str, str, str]]:
        return [e for e in self.entries if e[1] == tag]

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "entries": [list(e) for e in self.entries]}, indent=1)

    @classmethod
    def load(cls, path: str | Path) -> DatasetManifest:
        path = Path(path)
        raw = json.loads(path.read_text())
        entries = []
        for p, split, scene in raw["entries"]:
            # relative paths are relative to the manifest file
            full = p if Path(p).is_absolute() else str(path.parent / p)
            entries.append((full, split, scene))
        return cls(entries, int(raw.get("seed", 0)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    def validate(self) -> None:
        """Parse every listed cube; raises on the first bad file."""
        for p, _, _ in self.entries:
            read_cube(p)


def normalize_minmax(cube: HSICube) -> HSICube:
    """Global affine map of the cube onto [0, 1]."""
    x = cube.data.astype(np.float64)
    lo, hi = x.min(), x.max()
    if not hi > lo:
        raise ValueError("degenerate range: cube is constant")
    return cube.replace((x - lo) / (hi - lo))


def crop_patches(cube: HSICube, spec: PatchSpec) -> list[HSICube]:
    """Row-major list of square patches with all bands kept."""
    if spec.size > min(cube.height, cube.width):
        raise ValueError(f"patch size {spec.size} exceeds cube extent {cube.height}x{cube.width}")
    rows = range(0, cube.height - spec.size + 1, spec.stride)
    cols = range(0, cube.width - spec.size + 1, spec.stride)
    s = spec.size
    return [cube.replace(cube.data[:, r:r + s, c:c + s]) for r in rows for c in cols]


def _smooth_field(rng: np.random.Generator, h: int, w: int, n_waves: int = 12, max_freq: float = 0.18) -> np.ndarray:
    # random sinusoid mixture, amplitude ~ 1/f
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    out = np.zeros((h, w))
    for _ in range(n_waves):
        f = rng.uniform(0.01, max_freq)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        out += np.cos(2 * np.pi * f * (xx * np.cos(theta) + yy * np.sin(theta)) + phase) * (0.02 / f)
    return out / (np.abs(out).max() + 1e-12)


def _signatures(rng: np.random.Generator, b: int, rank: int) -> np.ndarray:
    lam = np.linspace(0.0, 1.0, b)
    sigs = np.empty((rank, b))
    for r in range(rank):
        s = rng.uniform(0.05, 0.3) + rng.uniform(-0.3, 0.3) * lam
        for _ in range(3):
            mu, width, amp = rng.uniform(-0.1, 1.1), rng.uniform(0.05, 0.4), rng.uniform(0.1, 0.8)
            s = s + amp * np.exp(-0.5 * ((lam - mu) / width) ** 2)
        sigs[r] = s
    if rank == b:
        # smooth bumps alone can be near-collinear; a small random component keeps full rank robust
        sigs += 0.05 * rng.standard_normal((rank, b))
    return sigs


def synth_cube(seed: int, h: int, w: int, b: int, rank: int, sharpness: float = 6.0) -> HSICube:
    """Low-rank synthetic scene ``sum_r a_r(x, y) * s_r(lambda)``, min-max normalized.

    Abundances ``a_r`` are a softmax over smooth random fields, so ``sharpness``
    controls how crisp the material boundaries are. Wavelengths span 400-700 nm.
    """
    if not 1 <= rank <= b:
        raise ValueError(f"rank must lie in [1, {b}], got {rank}")
    rng = np.random.default_rng(seed)
    if rank == 1:
        abund = (0.2 + 0.8 * (_smooth_field(rng, h, w) + 1) / 2)[None]
    else:
        fields = np.stack([_smooth_field(rng, h, w) for _ in range(rank)])
        logits = sharpness * fields
        logits -= logits.max(axis=0, keepdims=True)
        abund = np.exp(logits)
        abund /= abund.sum(axis=0, keepdims=True)
        # per-pixel brightness modulation keeps texture inside homogeneous regions
        abund *= 0.6 + 0.4 * (_smooth_field(rng, h, w, max_freq=0.3)[None] + 1) / 2
    sigs = _signatures(rng, b, rank)
    data = np.einsum("rb,rhw->bhw", sigs, abund)
    wl = tuple(np.linspace(400.0, 700.0, b)) if b > 1 else (550.0,)
    return normalize_minmax(HSICube(data, wl)) if data.max() > data.min() else HSICube(data, wl)


def write_cube(cube: HSICube, path: str | Path) -> None:
    header = {
        "h": cube.height,
        "w": cube.width,
        "b": cube.bands,
        "dtype": "f32le",
        "order": "bhw",
        "wavelengths": list(cube.wavelengths) if cube.wavelengths is not None else None,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(cube.data.astype("<f4", copy=False).tobytes(order="C"))


def read_cube(path: str | Path) -> HSICube:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CubeFormatError("malformed header: no newline terminator")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
        h, w, b = int(header["h"]), int(header["w"]), int(header["b"])
        dtype, order = header["dtype"], header.get("order", "bhw")
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise CubeFormatError(f"malformed header: {exc}") from exc
    if dtype != "f32le":
        raise CubeFormatError(f"unsupported dtype {dtype!r}")
    if order != "bhw":
        raise CubeFormatError(f"unsupported order {order!r}")
    if min(h, w, b) < 1:
        raise CubeFormatError("malformed header: non-positive extent")
    payload = raw[nl + 1:]
    expected = 4 * h * w * b
    if len(payload) < expected:
        raise CubeFormatError(f"truncated payload: expected {expected} bytes, got {len(payload)}")
    if len(payload) > expected:
        raise CubeFormatError(f"shape mismatch: {len(payload) - expected} trailing bytes")
    data = np.frombuffer(payload, dtype="<f4").reshape(b, h, w).astype(np.float32)
    wl = header.get("wavelengths")
    try:
        return HSICube(data, tuple(wl) if wl is not None else None)
    except ValueError as exc:
        raise CubeFormatError(f"shape mismatch: {exc}") from exc
