"""Prompt-guided all-in-one hyperspectral image restoration."""

from .cube import HSICube, read_cube, synth_cube, write_cube
from .degrade import DegradationSpec, Task, degrade
from .net import MPHSIR, ModelConfig, build_model, load_model, restore_cube, save_model

__all__ = [
    "HSICube", "read_cube", "synth_cube", "write_cube",
    "DegradationSpec", "Task", "degrade",
    "MPHSIR", "ModelConfig", "build_model", "load_model", "restore_cube", "save_model",
]
