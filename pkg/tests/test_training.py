import json
import math

import numpy as np
import pytest
import torch

from mphsir.ablation import VARIANTS, AblationPlan, ablate
from mphsir.cube import synth_cube
from mphsir.degrade import Task
from mphsir.diagnostics import cosine_matrix, prompt_similarity_matrix, spectral_prompt_activations
from mphsir.evaluation import DEFAULT_GRID, evaluate, finetune_copy, parse_grid
from mphsir.net import ModelConfig, build_model, load_model
from mphsir.plots import emit_plots
from mphsir.training import (
    PROXY_TASK,
    TrainConfig,
    TrainingDiverged,
    cosine_lr,
    l1_loss,
    prompt_rows,
    sample_pair,
    train,
)

TINY = dict(in_bands=5, base_channels=8, blocks_per_level=(1, 1, 1), heads_per_level=(2, 2, 4), window=2,
            prompt_len=3, prompt_dim=4, n_visual=2, text_dim=8)


@pytest.fixture(scope="module")
def cubes():
    return [synth_cube(i, 32, 32, 5, 2) for i in range(3)]


def tiny_cfg(**kw):
    return TrainConfig(**{"steps": 3, "batch": 2, "crop": 16, "log_every": 0, **kw})


def test_cosine_schedule_endpoints():
    assert cosine_lr(0, 100, 2e-4, 1e-6) == pytest.approx(2e-4)
    assert cosine_lr(100, 100, 2e-4, 1e-6) == pytest.approx(1e-6)
    assert cosine_lr(50, 100, 2e-4, 1e-6) == pytest.approx((2e-4 + 1e-6) / 2)
    lrs = [cosine_lr(s, 20, 1.0, 0.0) for s in range(21)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(ValueError):
        cosine_lr(5, 4, 1.0, 0.0)


def test_l1_loss():
    a = torch.tensor([0.0, 1.0, 2.0])
    assert l1_loss(a, torch.zeros(3)).item() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        l1_loss(a, torch.zeros(2))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr_init=1e-6, lr_min=1e-5)
    with pytest.raises(ValueError):
        TrainConfig(loss="L2")
    with pytest.raises(ValueError):
        TrainConfig(task_mix=[])
    cfg = TrainConfig(batch=3)
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_sample_pair_deterministic(cubes):
    mix = TrainConfig().task_mix
    a, b = sample_pair(cubes, mix, 16, 7), sample_pair(cubes, mix, 16, 7)
    assert a[0] == b[0] and a[1] == b[1] and a[2] is b[2]
    assert a[0].shape == (5, 16, 16)


def test_prompt_rows_use_proxy():
    model = build_model(ModelConfig(**TINY), 0)
    rows = prompt_rows(model, [Task.MotionBlur, Task.PoissonNoise, Task.Haze])
    assert rows.argmax(-1).tolist() == [model.text.index(PROXY_TASK[Task.MotionBlur]),
                                        model.text.index(Task.GaussianNoise), model.text.index(Task.Haze)]
    assert torch.equal(rows.sum(-1), torch.ones(3))


def test_train_deterministic_and_writes(tmp_path, cubes):
    traces, states = [], []
    for run in range(2):
        model = build_model(ModelConfig(**TINY), 0)
        traces.append(train(model, tiny_cfg(), cubes=cubes, out_dir=tmp_path / f"r{run}"))
        states.append(model.state_dict())
    assert traces[0] == traces[1] and len(traces[0]) == 3
    assert all(torch.equal(states[0][k], states[1][k]) for k in states[0])
    assert (tmp_path / "r0" / "final.ckpt").read_bytes() == (tmp_path / "r1" / "final.ckpt").read_bytes()
    assert json.loads((tmp_path / "r0" / "loss_trace.json").read_text()) == traces[0]


def test_train_prefix_replay(cubes):
    full = train(build_model(ModelConfig(**TINY), 0), tiny_cfg(steps=4), cubes=cubes)
    prefix = train(build_model(ModelConfig(**TINY), 0), tiny_cfg(steps=4), cubes=cubes, steps=2)
    assert prefix == full[:2]


def test_train_fixed_pairs_reduce_loss(cubes):
    pairs = [sample_pair(cubes, TrainConfig().task_mix, 16, i) for i in range(2)]
    trace = train(build_model(ModelConfig(**TINY), 0), tiny_cfg(steps=30, lr_init=2e-3), pairs=pairs)
    assert np.mean(trace[-5:]) < np.mean(trace[:5])


def test_train_needs_data():
    with pytest.raises(ValueError):
        train(build_model(ModelConfig(**TINY), 0), tiny_cfg())


def test_train_diverges_on_nan(cubes):
    model = build_model(ModelConfig(**TINY), 0)
    with torch.no_grad():
        model.head.bias.fill_(float("nan"))
    with pytest.raises(TrainingDiverged) as info:
        train(model, tiny_cfg(), cubes=cubes)
    assert info.value.step == 0


def test_checkpoints_every(tmp_path, cubes):
    train(build_model(ModelConfig(**TINY), 0), tiny_cfg(steps=4, checkpoint_every=2), cubes=cubes, out_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.glob("*.ckpt")) == ["final.ckpt", "step000002.ckpt", "step000004.ckpt"]
    model, meta = load_model(tmp_path / "final.ckpt")
    assert meta["step"] == 4


# ------------------------------------------------------------ evaluation

def test_parse_grid():
    assert parse_grid(None) == DEFAULT_GRID
    assert parse_grid(["Haze"]) == [(Task.Haze, {"omega": w}) for w in (0.5, 0.75, 1.0)]
    assert parse_grid([{"task": "Inpaint", "level": {"rate": 0.7}}]) == [(Task.Inpaint, {"rate": 0.7})]
    with pytest.raises(ValueError):
        parse_grid(["Rain"])


def test_default_grid_covers_nine_tasks():
    assert {t for t, _ in DEFAULT_GRID} == set(Task)
    assert len(DEFAULT_GRID) == 3 + 4 + 3 + 3 + 3 + 3 + 3 + 1 + 1


def test_evaluate_small_grid(cubes):
    model = build_model(ModelConfig(**TINY), 0)
    grid = [(Task.GaussianNoise, {"sigma": 50}), (Task.BandDrop, {"rate": 0.2}), (Task.MotionBlur, {"radius": 3, "angle": 45.0})]
    rep = evaluate(model, cubes[:2], grid, seed=1)
    assert [e.task for e in rep.entries] == ["GaussianNoise", "BandDrop", "MotionBlur"]
    assert all(e.n_images == 2 and len(e.curve) == 5 for e in rep.entries)
    assert rep.metadata["psnr_mode"] == "joint"
    again = evaluate(model, cubes[:2], grid, seed=1)
    assert again.to_json() == rep.to_json()


def test_evaluate_rejects_empty():
    with pytest.raises(ValueError):
        evaluate(build_model(ModelConfig(**TINY), 0), [], None)


def test_finetune_copy_leaves_original(cubes):
    model = build_model(ModelConfig(**TINY), 0)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    tuned = finetune_copy(model, cubes * 7, Task.MotionBlur, 2, None, crop=32)
    assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())
    assert any(not torch.equal(before[k], v) for k, v in tuned.state_dict().items())


def test_finetune_needs_train_cubes(cubes):
    with pytest.raises(ValueError):
        evaluate(build_model(ModelConfig(**TINY), 0), cubes[:1], [(Task.MotionBlur, {"radius": 3, "angle": 0.0})],
                 finetune_steps=1)


# ------------------------------------------------------------ diagnostics

def test_similarity_matrix_properties():
    model = build_model(ModelConfig(**TINY), 0)
    names, sim = prompt_similarity_matrix(model, list(model.cfg.task_names))
    assert names == list(model.cfg.task_names)
    assert np.allclose(sim, sim.T, atol=1e-12)
    assert np.allclose(np.diag(sim), 1.0)


def test_cosine_matrix_identical_rows():
    v = np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 1.0]])
    sim = cosine_matrix(v)
    assert sim[0, 1] == pytest.approx(1.0)
    assert sim[0, 2] == pytest.approx(2 / math.sqrt(5))


def test_activations_simplex_and_deterministic():
    model = build_model(ModelConfig(**TINY), 0)
    cube = synth_cube(0, 16, 16, 5, 2)
    a = spectral_prompt_activations(model, cube, (0, 8, 0, 8), task="Haze")
    b = spectral_prompt_activations(model, cube, (0, 8, 0, 8), task="Haze")
    assert a.shape == (3,)
    assert abs(a.sum() - 1) < 1e-6 and (a >= 0).all()
    assert np.array_equal(a, b)


def test_activations_single_pattern_is_one():
    model = build_model(ModelConfig(**{**TINY, "prompt_len": 1}), 0)
    a = spectral_prompt_activations(model, synth_cube(0, 8, 8, 5, 2), (0, 8, 0, 8), task="Haze")
    assert a.tolist() == [1.0]


@pytest.mark.parametrize("region", [(0, 0, 0, 4), (0, 20, 0, 4), (4, 2, 0, 4)])
def test_activations_bad_region(region):
    model = build_model(ModelConfig(**TINY), 0)
    with pytest.raises(ValueError):
        spectral_prompt_activations(model, synth_cube(0, 16, 16, 5, 2), region, task="Haze")


# ------------------------------------------------------------ ablation and plots

def test_ablation_report_shape(tmp_path, cubes):
    rows = ablate(AblationPlan(eval_level={"rate": 0.7}), ModelConfig(**TINY), tiny_cfg(steps=1), cubes, cubes[:1],
                  out_dir=tmp_path)
    assert [r["variant"] for r in rows] == [v[0] for v in VARIANTS]
    assert len(rows) == 8
    assert rows[0]["params"] < rows[-1]["params"]
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert len(lines) == 9 and lines[0] == "variant,psnr,ssim,params"


def test_emit_plots(tmp_path, cubes):
    model = build_model(ModelConfig(**TINY), 0)
    rep = evaluate(model, cubes[:1], [(Task.GaussianNoise, {"sigma": 30})])
    sim = prompt_similarity_matrix(model, list(model.cfg.task_names))
    acts = {"GaussianNoise": np.array([0.2, 0.3, 0.5]), "Haze": np.array([0.1, 0.1, 0.8])}
    files = emit_plots(rep, tmp_path, sim, acts)
    names = {p.name for p in files}
    assert {"prompt_similarity.png", "spectral_prompt_activations.png"} <= names
    assert (tmp_path / "error_curves" / "error_GaussianNoise_sigma30.csv").exists()
    assert (tmp_path / "prompt_similarity.csv").read_text().count("\n") == 8
    with pytest.raises(ValueError):
        emit_plots(None, tmp_path)

