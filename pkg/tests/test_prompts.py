import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from fd import TOL, check_gradients, module_tensors, scalar_probe
from mphsir.degrade import Task
from mphsir.prompts import (
    ALL_IN_ONE_NAMES,
    DEFAULT_DESCRIPTIONS,
    TVSP,
    FileTextEncoder,
    HashTextEncoder,
    TextualPromptTable,
    select_textual_prompt,
    task_probs,
)


@pytest.fixture(scope="module")
def table():
    return TextualPromptTable(ALL_IN_ONE_NAMES, 16, HashTextEncoder(16))


def test_hash_encoder_deterministic_unit_norm():
    a, b = HashTextEncoder(64, seed=1), HashTextEncoder(64, seed=1)
    v = a.encode("Remove the haze")
    assert np.array_equal(v, b.encode("Remove the haze"))
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-6)
    assert not np.array_equal(v, HashTextEncoder(64, seed=2).encode("Remove the haze"))


def test_hash_encoder_shared_words_correlate():
    enc = HashTextEncoder(512)
    g = enc.encode(DEFAULT_DESCRIPTIONS["GaussianNoise"])
    c = enc.encode(DEFAULT_DESCRIPTIONS["ComplexNoise"])
    other = enc.encode("completely unrelated sentence about cats")
    assert g @ c > g @ other


def test_default_descriptions_cover_all_tasks():
    assert set(DEFAULT_DESCRIPTIONS) == {t.value for t in Task}
    assert len(set(DEFAULT_DESCRIPTIONS.values())) == len(Task)


def test_file_encoder_roundtrip(tmp_path):
    rows = {"GaussianNoise": np.arange(4, dtype=np.float32), "Haze": -np.ones(4, dtype=np.float32)}
    FileTextEncoder.write(tmp_path / "emb.bin", rows)
    enc = FileTextEncoder(tmp_path / "emb.bin")
    assert enc.dim == 4
    assert np.array_equal(enc.encode("Haze"), rows["Haze"])
    with pytest.raises(KeyError):
        enc.encode("Rain")


def test_file_encoder_table_falls_back_to_name(tmp_path):
    rows = {n: np.full(3, i, dtype=np.float32) for i, n in enumerate(["GaussianNoise", "Haze"])}
    FileTextEncoder.write(tmp_path / "emb.bin", rows)
    table = TextualPromptTable(["GaussianNoise", "Haze"], 3, FileTextEncoder(tmp_path / "emb.bin"))
    assert table.embeddings[1].tolist() == [1.0, 1.0, 1.0]


def test_table_dim_mismatch():
    with pytest.raises(ValueError):
        TextualPromptTable(ALL_IN_ONE_NAMES, 8, HashTextEncoder(16))


def test_table_is_learnable(table):
    assert table.embeddings.requires_grad
    assert table.embeddings.shape == (7, 16)


def test_one_hot_selects_row(table):
    probs = task_probs(table, "Downsample")
    assert torch.equal(select_textual_prompt(probs, table), table.embeddings[3][None])
    assert torch.equal(select_textual_prompt(probs[0], table), table.embeddings[3])


def test_override_beats_probs(table):
    probs = task_probs(table, "Haze")
    out = select_textual_prompt(probs, table, override="GaussianBlur")
    assert torch.equal(out[0], table.embeddings[table.index("GaussianBlur")])


def test_soft_uniform_over_two_is_mean(table):
    probs = torch.zeros(7)
    probs[[1, 4]] = 0.5
    out = select_textual_prompt(probs, table, mode="soft")
    assert torch.allclose(out, 0.5 * (table.embeddings[1] + table.embeddings[4]))


def test_hard_ties_take_lowest_index(table):
    probs = torch.tensor([0.1, 0.4, 0.4, 0, 0, 0, 0])
    assert torch.equal(select_textual_prompt(probs, table), table.embeddings[1])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=7, max_size=7), st.floats(0.1, 10.0))
def test_hard_mode_monotone_invariance(p, scale):
    table = TextualPromptTable(ALL_IN_ONE_NAMES, 8, HashTextEncoder(8))
    probs = torch.tensor(p, dtype=torch.float64)
    a = select_textual_prompt(probs, table)
    b = select_textual_prompt(torch.exp(probs * scale), table)
    assert torch.equal(a, b)


def test_negative_probs_rejected(table):
    with pytest.raises(ValueError):
        select_textual_prompt(torch.tensor([-1.0, 0, 0, 0, 0, 0, 1]), table)


def test_unknown_task(table):
    with pytest.raises(ValueError):
        table.index("Rain")


# ------------------------------------------------------------ TVSP

def _tvsp(**kw):
    m = TVSP(4, 6, 3, **kw).double()
    g = torch.Generator().manual_seed(0)
    with torch.no_grad():
        for p in m.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * 0.5)
    return m


def test_tvsp_concat_width_and_output():
    m = _tvsp()
    assert m.reduce.in_channels == 8
    out = m(torch.randn(2, 4, 3, 5, dtype=torch.float64), torch.randn(2, 6, dtype=torch.float64))
    assert out.shape == (2, 4, 3, 5)


def test_tvsp_attention_is_distribution():
    m = _tvsp()
    m.prompt_vector(torch.randn(3, 6, dtype=torch.float64))
    assert torch.allclose(m.last_attn.sum(-1), torch.ones(3, dtype=torch.float64), atol=1e-6)


def test_tvsp_single_visual_token_ignores_text():
    m = TVSP(4, 6, 1).double()
    with torch.no_grad():
        m.visual.normal_()
    a = m.prompt_vector(torch.randn(1, 6, dtype=torch.float64))
    b = m.prompt_vector(torch.randn(1, 6, dtype=torch.float64))
    v = m.v_proj(m.visual)
    assert torch.allclose(a, v) and torch.allclose(b, v)


def test_tvsp_prompt_independent_of_features():
    m = _tvsp()
    p_t = torch.randn(1, 6, dtype=torch.float64)
    v1 = m.prompt_vector(p_t)
    m(torch.randn(1, 4, 2, 2, dtype=torch.float64), p_t)
    assert torch.equal(v1, m.prompt_vector(p_t))


def test_tvsp_variants():
    x = torch.randn(1, 4, 2, 2, dtype=torch.float64)
    assert _tvsp(use_text=False)(x).shape == x.shape
    assert _tvsp(use_visual=False)(x, torch.randn(1, 6, dtype=torch.float64)).shape == x.shape
    with pytest.raises(ValueError):
        TVSP(4, 6, 3, use_text=False, use_visual=False)
    with pytest.raises(ValueError):
        _tvsp()(x)


def test_grad_tvsp_fuse():
    m = _tvsp()
    g = torch.Generator().manual_seed(1)
    feat = torch.randn(1, 4, 4, 4, dtype=torch.float64, generator=g, requires_grad=True)
    p_t = torch.randn(1, 6, dtype=torch.float64, generator=g, requires_grad=True)
    errs = check_gradients(lambda: scalar_probe(m(feat, p_t)), module_tensors(m, feat, p_t))
    assert max(errs.values()) < TOL, errs
