"""Training loops for the restoration network and the degradation predictor."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import torch

from .cube import HSICube, read_cube
from .degrade import ALL_IN_ONE_TASKS, DegradationSpec, Task, degrade, derive_seed, random_spec
from .net import MPHSIR, save_model
from .predictor import DegradationPredictor, bce_loss

log = logging.getLogger(__name__)

# prompt used for tasks without their own textual prompt
PROXY_TASK = {Task.MotionBlur: Task.GaussianBlur, Task.PoissonNoise: Task.GaussianNoise}


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    lr_init: float = 2e-4
    lr_min: float = 1e-6
    steps: int = 20000
    batch: int = 32
    crop: int = 64
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-4
    loss: str = "L1"
    seed: int = 0
    task_mix: list[dict[str, Any]] = field(
        default_factory=lambda: [{"task": t.value, "weight": 1.0} for t in ALL_IN_ONE_TASKS])
    checkpoint_every: int = 0
    log_every: int = 100

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if not self.lr_min < self.lr_init:
            raise ValueError("lr_min must be below lr_init")
        if self.batch < 1 or self.steps < 1:
            raise ValueError("batch and steps must be positive")
        if self.loss != "L1":
            raise ValueError("only the L1 loss is supported")
        if not self.task_mix:
            raise ValueError("task_mix is empty")

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TrainConfig:
        return cls(**d)


def cosine_lr(step: int, total: int, lr_init: float, lr_min: float) -> float:
    if total <= 0:
        raise ValueError("total steps must be positive")
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    return lr_min + 0.5 * (lr_init - lr_min) * (1 + math.cos(math.pi * step / total))


def l1_loss(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).abs().mean()


def make_optimizer(params, lr: float, betas=(0.9, 0.999), weight_decay: float = 1e-4):
    return torch.optim.AdamW(params, lr=lr, betas=tuple(betas), weight_decay=weight_decay)


def load_cubes(paths: Sequence[str]) -> list[HSICube]:
    return [read_cube(p) for p in paths]


def _pick_task(mix: Sequence[Mapping[str, Any]], rng: np.random.Generator) -> Task:
    w = np.array([float(m.get("weight", 1.0)) for m in mix])
    return Task.parse(mix[int(rng.choice(len(mix), p=w / w.sum()))]["task"])


def _crop(cube: HSICube, size: int, rng: np.random.Generator) -> HSICube:
    if size >= cube.height and size >= cube.width:
        return cube
    r = int(rng.integers(cube.height - size + 1))
    c = int(rng.integers(cube.width - size + 1))
    return cube.replace(cube.data[:, r:r + size, c:c + size])


def sample_pair(cubes: Sequence[HSICube], mix, crop: int, seed: int) -> tuple[HSICube, HSICube, Task]:
    """One on-the-fly (degraded, clean, task) triple, fully determined by ``seed``."""
    rng = np.random.default_rng(seed)
    clean = _crop(cubes[int(rng.integers(len(cubes)))], crop, rng)
    task = _pick_task(mix, rng)
    spec = random_spec(task, derive_seed(seed, task))
    noisy, label, _ = degrade(clean, spec)
    return noisy, clean, label


def prompt_rows(model: MPHSIR, labels: Sequence[Task], dtype=torch.float32):
    """Ground-truth one-hot prompt probabilities (None for text-free variants)."""
    if model.text is None:
        return None
    probs = torch.zeros(len(labels), len(model.text.task_names), dtype=dtype)
    for i, t in enumerate(labels):
        probs[i, model.text.index(PROXY_TASK.get(t, t))] = 1.0
    return probs


def _stack(cubes: Sequence[HSICube], dtype) -> torch.Tensor:
    return torch.from_numpy(np.stack([c.data for c in cubes])).to(dtype)


def train(model: MPHSIR, cfg: TrainConfig, cubes: Sequence[HSICube] | None = None,
          pairs: Sequence[tuple[HSICube, HSICube, Task]] | None = None, out_dir: str | Path | None = None,
          prompt_fn: Callable[[Sequence[HSICube], Sequence[Task]], torch.Tensor | None] | None = None,
          steps: int | None = None) -> list[float]:
    """Optimize L1(model(Y), X) with AdamW and a cosine schedule; returns the loss trace.

    Either ``cubes`` (clean scenes, degraded on the fly from ``cfg.task_mix``) or
    fixed ``pairs`` (cycled in a seeded order) must be given. ``prompt_fn`` maps a
    batch of degraded cubes and labels to prompt probabilities; the default uses
    the ground-truth labels. ``steps`` truncates the run while keeping the
    schedule of ``cfg.steps`` (used for deterministic replay of a prefix).
    """
    if not cubes and not pairs:
        raise ValueError("training needs clean cubes or fixed pairs")
    torch.use_deterministic_algorithms(True)
    dtype = next(model.parameters()).dtype
    opt = make_optimizer(model.parameters(), cfg.lr_init, cfg.betas, cfg.weight_decay)
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    order_rng = np.random.default_rng(derive_seed(cfg.seed, "order"))
    order: list[int] = []
    trace: list[float] = []
    total = cfg.steps
    n_steps = total if steps is None else min(steps, total)
    model.train()
    for step in range(n_steps):
        if pairs:
            batch = []
            for _ in range(min(cfg.batch, len(pairs))):
                if not order:
                    order = list(order_rng.permutation(len(pairs)))
                batch.append(pairs[order.pop(0)])
        else:
            batch = [sample_pair(cubes, cfg.task_mix, cfg.crop, derive_seed(cfg.seed, "sample", step, i))
                     for i in range(cfg.batch)]
        y = _stack([b[0] for b in batch], dtype)
        x = _stack([b[1] for b in batch], dtype)
        labels = [b[2] for b in batch]
        probs = prompt_fn([b[0] for b in batch], labels) if prompt_fn else prompt_rows(model, labels, dtype)
        for group in opt.param_groups:
            group["lr"] = cosine_lr(step, total, cfg.lr_init, cfg.lr_min)
        loss = l1_loss(model(y, probs), x)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(step, value)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        trace.append(value)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d loss %.5f", step, value)
        if out_dir and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_model(out_dir / f"step{step + 1:06d}.ckpt", model, {"step": step + 1})
            (out_dir / "loss_trace.json").write_text(json.dumps(trace))
    if out_dir:
        save_model(out_dir / "final.ckpt", model, {"step": n_steps, "train_config": cfg.to_dict()})
        (out_dir / "loss_trace.json").write_text(json.dumps(trace))
    model.eval()
    return trace


# ------------------------------------------------------------------ predictor

@dataclass
class PredictorTrainConfig:
    lr_init: float = 1e-4
    lr_min: float = 1e-6
    steps: int = 1500
    batch: int = 64
    crop: int = 64
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    test_per_task: int = 20

    def __post_init__(self):
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> PredictorTrainConfig:
        return cls(**d)


def classification_report(model: DegradationPredictor, samples: Sequence[tuple[HSICube, Task]]) -> dict[str, Any]:
    names = list(model.cfg.task_names)
    k = len(names)
    conf = np.zeros((k, k), dtype=int)
    model.eval()
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        for i in range(0, len(samples), 32):
            chunk = samples[i:i + 32]
            logits = model(_stack([c for c, _ in chunk], dtype))
            for (_, t), pred in zip(chunk, logits.argmax(-1).tolist()):
                conf[names.index(t.value), pred] += 1
    col = conf.sum(0)
    precision = {names[j]: float(conf[j, j] / col[j]) if col[j] else 0.0 for j in range(k)}
    recall = {names[j]: float(conf[j, j] / conf[j].sum()) if conf[j].sum() else 0.0 for j in range(k)}
    return {
        "accuracy": float(np.trace(conf) / conf.sum()),
        "precision": precision,
        "recall": recall,
        "confusion": conf.tolist(),
        "n": int(conf.sum()),
    }


def predictor_samples(cubes: Sequence[HSICube], tasks: Sequence[Task], per_task: int, crop: int,
                      seed: int) -> list[tuple[HSICube, Task]]:
    out = []
    for t in tasks:
        for i in range(per_task):
            s = derive_seed(seed, "predictor-sample", t, i)
            rng = np.random.default_rng(s)
            clean = _crop(cubes[int(rng.integers(len(cubes)))], crop, rng)
            out.append((degrade(clean, random_spec(t, s))[0], t))
    return out


def train_predictor(model: DegradationPredictor, cfg: PredictorTrainConfig, train_cubes: Sequence[HSICube],
                    test_cubes: Sequence[HSICube] | None = None, tasks: Sequence[Task] | None = None,
                    ) -> tuple[list[float], dict[str, Any]]:
    """Sigmoid-BCE training on on-the-fly degradations; returns (loss trace, held-out report)."""
    if not train_cubes:
        raise ValueError("empty training set")
    tasks = [Task.parse(t) for t in (tasks or model.cfg.task_names)]
    if len(set(tasks)) < model.cfg.num_tasks:
        raise ValueError("task mix must cover every predictor class")
    torch.use_deterministic_algorithms(True)
    names = list(model.cfg.task_names)
    dtype = next(model.parameters()).dtype
    opt = make_optimizer(model.parameters(), cfg.lr_init, cfg.betas, cfg.weight_decay)
    trace = []
    model.train()
    for step in range(cfg.steps):
        batch = []
        for i in range(cfg.batch):
            s = derive_seed(cfg.seed, "predictor", step, i)
            rng = np.random.default_rng(s)
            clean = _crop(train_cubes[int(rng.integers(len(train_cubes)))], cfg.crop, rng)
            t = tasks[int(rng.integers(len(tasks)))]
            batch.append((degrade(clean, random_spec(t, s))[0], t))
        x = _stack([c for c, _ in batch], dtype)
        labels = torch.zeros(len(batch), len(names), dtype=dtype)
        for i, (_, t) in enumerate(batch):
            labels[i, names.index(t.value)] = 1.0
        for group in opt.param_groups:
            group["lr"] = cosine_lr(step, cfg.steps, cfg.lr_init, cfg.lr_min)
        loss = bce_loss(torch.sigmoid(model(x)), labels)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(step, value)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        trace.append(value)
        if step % 100 == 0:
            log.info("predictor step %d bce %.4f", step, value)
    model.eval()
    held_out = predictor_samples(test_cubes or train_cubes, tasks, cfg.test_per_task, cfg.crop,
                                 derive_seed(cfg.seed, "held-out"))
    return trace, classification_report(model, held_out)
