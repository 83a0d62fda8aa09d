"""Command-line entry point.

Relative paths are resolved against ``$MPHSIR_ROOT`` when it is set. On failure
the command exits non-zero and writes ``{"error": ..., "message": ...}`` to
stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .cube import DatasetManifest, HSICube, read_cube, synth_cube, write_cube
from .degrade import DegradationSpec, Task, degrade
from .net import ModelConfig, build_model, load_model, restore_cube
from .predictor import PredictorConfig, build_predictor, load_predictor, save_predictor

ROOT_ENV = "MPHSIR_ROOT"


def resolve(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    root = os.environ.get(ROOT_ENV)
    return p if p.is_absolute() or not root else Path(root) / p


def _load_json(path: str | None) -> dict:
    return json.loads(resolve(path).read_text()) if path else {}


def _manifest_cubes(path, split: str) -> list[HSICube]:
    manifest = DatasetManifest.load(resolve(path))
    entries = manifest.split(split)
    if not entries:
        raise ValueError(f"manifest has no {split!r} entries")
    return [read_cube(p) for p, _, _ in entries]


# ------------------------------------------------------------------ commands

def cmd_synth_data(args) -> None:
    out = resolve(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(args.n_train + args.n_test):
        split = "train" if i < args.n_train else "test"
        name = f"scene{i:03d}.cube"
        write_cube(synth_cube(args.seed * 1_000_003 + i, args.size, args.size, args.bands, args.rank), out / name)
        entries.append((name, split, f"scene{i:03d}"))
    (out / "manifest.json").write_text(DatasetManifest(entries, args.seed).to_json())
    print(json.dumps({"manifest": str(out / "manifest.json"), "cubes": len(entries)}))


def cmd_degrade(args) -> None:
    cube = read_cube(resolve(args.input))
    params = json.loads(args.params) if args.params else {}
    spec = DegradationSpec(Task.parse(args.task), params, args.seed)
    out, label, aux = degrade(cube, spec)
    write_cube(out, resolve(args.out))
    if args.aux:
        if aux is None:
            raise ValueError(f"{label.value} produces no auxiliary output")
        if label is Task.BandDrop:
            arr = np.zeros((1, 1, cube.bands), dtype=np.float32)
            arr[0, 0, aux] = 1.0
        else:
            arr = np.asarray(aux, dtype=np.float32)[None]
        write_cube(HSICube(arr), resolve(args.aux))
    print(json.dumps({"task": label.value, "out": str(resolve(args.out))}))


def cmd_train(args) -> None:
    from .training import TrainConfig, train
    cfg = _load_json(args.config)
    model_cfg = ModelConfig.from_dict(cfg.get("model", {}))
    train_cfg = TrainConfig.from_dict(cfg.get("train", {}))
    if args.steps:
        train_cfg.steps = args.steps
    model = build_model(model_cfg, cfg.get("model_seed", train_cfg.seed))
    trace = train(model, train_cfg, cubes=_manifest_cubes(args.data, "train"), out_dir=resolve(args.out))
    print(json.dumps({"steps": len(trace), "final_loss": trace[-1], "out": str(resolve(args.out))}))


def cmd_train_predictor(args) -> None:
    from .training import PredictorTrainConfig, train_predictor
    cfg = _load_json(args.config)
    pcfg = PredictorConfig.from_dict(cfg.get("predictor", {}))
    tcfg = PredictorTrainConfig.from_dict(cfg.get("train", {}))
    model = build_predictor(pcfg, cfg.get("model_seed", tcfg.seed))
    manifest = DatasetManifest.load(resolve(args.data))
    test = [read_cube(p) for p, _, _ in manifest.split("test")] or None
    trace, report = train_predictor(model, tcfg, _manifest_cubes(args.data, "train"), test)
    save_predictor(resolve(args.out), model, {"report": report})
    print(json.dumps({"accuracy": report["accuracy"], "precision": report["precision"]}))


def cmd_predict(args) -> None:
    model, _ = load_predictor(resolve(args.ckpt))
    print(json.dumps(model.predict(read_cube(resolve(args.input)))))


def cmd_restore(args) -> None:
    model, _ = load_model(resolve(args.ckpt))
    predictor = load_predictor(resolve(args.predictor))[0] if args.predictor else None
    if args.task is not None:
        Task.parse(args.task)
    cube = read_cube(resolve(args.input))
    out, probs = restore_cube(model, cube, args.task, predictor)
    write_cube(out, resolve(args.out))
    used = None
    if probs is not None:
        used = model.text.task_names[int(np.argmax(probs))]
    print(json.dumps({"out": str(resolve(args.out)), "prompt": used}))


def cmd_eval(args) -> None:
    from .evaluation import evaluate, parse_grid
    model, meta = load_model(resolve(args.ckpt))
    predictor = load_predictor(resolve(args.predictor))[0] if args.predictor else None
    grid = parse_grid(_load_json(args.grid).get("grid")) if args.grid else None
    train_cubes = _manifest_cubes(args.data, "train") if args.finetune_steps else None
    report = evaluate(model, _manifest_cubes(args.data, "test"), grid, predictor, args.seed,
                      train_cubes=train_cubes, finetune_steps=args.finetune_steps,
                      metadata={"checkpoint": Path(args.ckpt).name})
    report.save(resolve(args.out))
    print(json.dumps({"entries": len(report.entries), "out": str(resolve(args.out))}))


def cmd_ablate(args) -> None:
    from .ablation import AblationPlan, ablate
    from .training import TrainConfig
    cfg = _load_json(args.config)
    rows = ablate(AblationPlan(), ModelConfig.from_dict(cfg.get("model", {})),
                  TrainConfig.from_dict(cfg.get("train", {})), _manifest_cubes(args.data, "train"),
                  _manifest_cubes(args.data, "test"), cfg.get("model_seed", 0), resolve(args.out))
    print(json.dumps(rows))


def cmd_plot(args) -> None:
    from .diagnostics import prompt_similarity_matrix, spectral_prompt_activations
    from .metrics import EvalReport
    from .plots import emit_plots
    report = EvalReport.load(resolve(args.report)) if args.report else None
    similarity = activations = None
    if args.ckpt:
        model, _ = load_model(resolve(args.ckpt))
        if model.tvsp is not None:
            similarity = prompt_similarity_matrix(model, list(model.cfg.task_names))
        if args.probe:
            cube = read_cube(resolve(args.probe))
            region = tuple(args.region) if args.region else (0, cube.height, 0, cube.width)
            activations = {}
            for task in args.probe_tasks:
                spec = DegradationSpec(Task.parse(task), dict(_first_level(task)), args.seed)
                degraded = degrade(cube, spec)[0]
                activations[task] = spectral_prompt_activations(model, degraded, region, task=_prompt_task(model, task))
    written = emit_plots(report, resolve(args.out), similarity, activations)
    print(json.dumps({"files": [str(p) for p in written]}))


def _first_level(task: str) -> dict:
    from .degrade import TEST_LEVELS
    return TEST_LEVELS[Task.parse(task)][0]


def _prompt_task(model, task: str) -> str | None:
    from .training import PROXY_TASK
    if model.text is None:
        return None
    t = Task.parse(task)
    return PROXY_TASK.get(t, t).value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mphsir", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write synthetic cubes and a manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=24)
    p.add_argument("--n-test", type=int, default=6)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--bands", type=int, default=31)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("degrade", help="apply one degradation to a cube")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--params", default="{}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--aux")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="train the restoration network")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-predictor", help="train the degradation predictor")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_predictor)

    p = sub.add_parser("predict", help="print predicted degradation probabilities")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the task grid")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--predictor")
    p.add_argument("--grid", help='JSON file {"grid": [...]}')
    p.add_argument("--finetune-steps", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the module ablation")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("restore", help="restore a degraded cube")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", help="force this task's textual prompt")
    p.add_argument("--predictor")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("plot", help="emit error curves, prompt similarity and activation charts")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--ckpt")
    p.add_argument("--probe", help="clean cube used for activation probes")
    p.add_argument("--probe-tasks", nargs="+", default=["GaussianNoise", "Haze"])
    p.add_argument("--region", type=int, nargs=4, metavar=("R0", "R1", "C0", "C1"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    torch.set_num_threads(max(1, torch.get_num_threads()))
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - reported as machine-readable JSON
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
