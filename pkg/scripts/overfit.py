"""Overfit the default model on eight fixed 64x64x31 degraded/clean pairs.

Writes final.ckpt, loss_trace.json and result.json (full-set L1 of the final
weights) to --out. The acceptance suite reads these and replays a prefix.
"""

import argparse
import json
import logging
import time
from pathlib import Path

import torch

from mphsir.cube import synth_cube
from mphsir.degrade import ALL_IN_ONE_TASKS, degrade, derive_seed, random_spec
from mphsir.net import ModelConfig, build_model
from mphsir.training import TrainConfig, prompt_rows, train, _stack


def overfit_pairs(n: int = 8, size: int = 64, bands: int = 31, seed: int = 0):
    pairs = []
    for i in range(n):
        clean = synth_cube(derive_seed(seed, "overfit-scene", i), size, size, bands, 4)
        task = ALL_IN_ONE_TASKS[i % len(ALL_IN_ONE_TASKS)]
        degraded, label, _ = degrade(clean, random_spec(task, derive_seed(seed, "overfit-level", i)))
        pairs.append((degraded, clean, label))
    return pairs


def overfit_config(steps: int = 2000, batch: int = 4, lr: float = 1e-3, seed: int = 0) -> TrainConfig:
    return TrainConfig(lr_init=lr, steps=steps, batch=batch, crop=64, seed=seed, log_every=50)


@torch.no_grad()
def per_pair_l1(model, pairs) -> list[float]:
    model.eval()
    y = _stack([p[0] for p in pairs], torch.float32)
    x = _stack([p[1] for p in pairs], torch.float32)
    return (model(y, prompt_rows(model, [p[2] for p in pairs])) - x).abs().mean((1, 2, 3)).tolist()


def full_set_l1(model, pairs) -> float:
    return float(sum(per_pair_l1(model, pairs)) / len(pairs))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="experiments/overfit")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(1)
    out = Path(args.out)
    cfg = overfit_config(args.steps, args.batch, args.lr, args.seed)
    pairs = overfit_pairs(seed=args.seed)
    model = build_model(ModelConfig(), args.seed)
    t0 = time.time()
    trace = train(model, cfg, pairs=pairs, out_dir=out)
    result = {"train": cfg.to_dict(), "model_seed": args.seed, "steps": len(trace),
              "final_batch_l1": trace[-1], "full_set_l1": full_set_l1(model, pairs),
              "seconds": time.time() - t0}
    (out / "result.json").write_text(json.dumps(result, indent=1))
    print(json.dumps(result))


if __name__ == "__main__":
    main()
