"""Train the degradation-type predictor on synthetic cubes and score it on held-out scenes.

Writes predictor.ckpt, loss_trace.json and result.json (accuracy, per-class
precision, confusion matrix, wall-clock seconds) to --out.
"""

import argparse
import json
import logging
import time
from pathlib import Path

import torch

from mphsir.cube import synth_cube
from mphsir.predictor import PredictorConfig, build_predictor, save_predictor
from mphsir.training import PredictorTrainConfig, train_predictor

TRAIN_SEED0, TEST_SEED0 = 1000, 2000


def scenes(n_train: int = 24, n_test: int = 6, size: int = 64, bands: int = 31):
    train = [synth_cube(TRAIN_SEED0 + i, size, size, bands, 4) for i in range(n_train)]
    test = [synth_cube(TEST_SEED0 + i, size, size, bands, 4) for i in range(n_test)]
    return train, test


def load_config(path):
    cfg = json.loads(Path(path).read_text())
    return (PredictorConfig.from_dict(cfg.get("predictor", {})), PredictorTrainConfig.from_dict(cfg.get("train", {})),
            cfg.get("model_seed", 0))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/predictor.json")
    ap.add_argument("--out", default="experiments/predictor")
    ap.add_argument("--steps", type=int)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(1)
    pcfg, tcfg, model_seed = load_config(args.config)
    if args.steps:
        tcfg.steps = args.steps
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test = scenes()
    model = build_predictor(pcfg, model_seed)
    t0 = time.time()
    trace, report = train_predictor(model, tcfg, train, test)
    seconds = time.time() - t0
    save_predictor(out / "predictor.ckpt", model, {"report": report})
    (out / "loss_trace.json").write_text(json.dumps(trace))
    result = {"predictor": pcfg.to_dict(), "train": tcfg.to_dict(), "model_seed": model_seed, "seconds": seconds,
              **report}
    (out / "result.json").write_text(json.dumps(result, indent=1))
    print(json.dumps({"accuracy": report["accuracy"], "precision": report["precision"], "seconds": seconds}))
    for row in report["confusion"]:
        print(row)


if __name__ == "__main__":
    main()
