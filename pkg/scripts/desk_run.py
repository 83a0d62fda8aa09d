"""Desk-scale pipeline: synthetic data, 20k-step training, gain evaluation.

Each stage is a CLI call and is skipped when its output already exists, so an
interrupted run resumes at the first missing artifact.
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from mphsir.cli import main as cli


def stage(name: str, done: Path, argv: list[str], timing: Path) -> None:
    if done.exists():
        logging.info("skip %s (%s exists)", name, done)
        return
    logging.info("run %s: mphsir %s", name, " ".join(argv))
    t0 = time.time()
    if cli(argv) != 0:
        sys.exit(f"stage {name} failed")
    seconds = json.loads(timing.read_text()) if timing.exists() else {}
    seconds[name] = time.time() - t0
    timing.write_text(json.dumps(seconds, indent=1))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="experiments/desk")
    ap.add_argument("--config", default="configs/desk.json")
    ap.add_argument("--grid", default="configs/gain_grid.json")
    ap.add_argument("--steps", type=int, help="override the configured step count")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = Path(args.out)
    data = out / "data"
    timing = out / "timing.json"
    out.mkdir(parents=True, exist_ok=True)
    stage("synth-data", data / "manifest.json", ["synth-data", "--out", str(data), "--n-train", "24", "--n-test", "6"], timing)
    train = ["-v", "train", "--config", args.config, "--data", str(data / "manifest.json"), "--out", str(out / "run")]
    if args.steps:
        train += ["--steps", str(args.steps)]
    stage("train", out / "run" / "final.ckpt", train, timing)
    stage("eval", out / "gain.json", ["eval", "--ckpt", str(out / "run" / "final.ckpt"), "--data",
                                      str(data / "manifest.json"), "--grid", args.grid, "--out", str(out / "gain.json")], timing)
    report = json.loads((out / "gain.json").read_text())
    for e in report["entries"]:
        print(f"{e['task']:14s} {json.dumps(e['level']):18s} restored {e['psnr']:6.2f} dB  degraded {e['psnr_degraded']:6.2f} dB")


if __name__ == "__main__":
    main()
