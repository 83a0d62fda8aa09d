import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mphsir.cube import (
    CubeFormatError,
    DatasetManifest,
    HSICube,
    PatchSpec,
    crop_patches,
    normalize_minmax,
    read_cube,
    synth_cube,
    write_cube,
)


def cube_from(values, shape=None):
    arr = np.asarray(values, dtype=np.float32)
    return HSICube(arr.reshape(shape) if shape else arr)


def test_normalize_endpoints():
    out = normalize_minmax(cube_from([2, 4, 6], (3, 1, 1)))
    assert out.data.ravel().tolist() == [0.0, 0.5, 1.0]


def test_normalize_identity_on_unit_range():
    c = cube_from(np.linspace(0, 1, 24), (2, 3, 4))
    assert normalize_minmax(c) == c


def test_normalize_hand_value():
    out = normalize_minmax(cube_from([10, 35, 110], (3, 1, 1)))
    assert out.data[1, 0, 0] == pytest.approx(0.25, abs=1e-7)


def test_normalize_constant_raises():
    with pytest.raises(ValueError, match="degenerate range"):
        normalize_minmax(cube_from(np.full((2, 2, 2), 3.0)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, (3, 4, 5), elements=st.floats(-100, 100, width=32)))
def test_normalize_idempotent(arr):
    if arr.max() == arr.min():
        return
    once = normalize_minmax(HSICube(arr))
    twice = normalize_minmax(once)
    assert once.data.min() == 0.0 and once.data.max() == 1.0
    np.testing.assert_allclose(twice.data, once.data, atol=1e-12, rtol=0)


@pytest.mark.parametrize("h,w,size,stride,count", [(128, 128, 64, 64, 4), (64, 64, 64, 64, 1), (100, 64, 64, 32, 2)])
def test_crop_counts(h, w, size, stride, count):
    cube = HSICube(np.random.default_rng(0).random((3, h, w)))
    patches = crop_patches(cube, PatchSpec(size, stride))
    assert len(patches) == count
    assert all(p.shape == (3, size, size) for p in patches)


def test_crop_single_patch_equals_input():
    cube = synth_cube(1, 64, 64, 5, 2)
    (patch,) = crop_patches(cube, PatchSpec(64, 64))
    assert patch == cube


@settings(max_examples=25, deadline=None)
@given(st.integers(4, 20), st.integers(4, 20), st.integers(1, 4), st.data())
def test_crop_pixels_match_source(h, w, size, data):
    stride = data.draw(st.integers(1, size))
    cube = HSICube(np.random.default_rng(h * 31 + w).random((2, h, w)))
    patches = crop_patches(cube, PatchSpec(size, stride))
    rows = list(range(0, h - size + 1, stride))
    cols = list(range(0, w - size + 1, stride))
    assert len(patches) == len(rows) * len(cols)
    for k, p in enumerate(patches):
        r, c = rows[k // len(cols)], cols[k % len(cols)]
        assert np.array_equal(p.data, cube.data[:, r:r + size, c:c + size])


def test_crop_too_large():
    with pytest.raises(ValueError):
        crop_patches(HSICube(np.zeros((1, 10, 10))), PatchSpec(11, 1))


def test_patchspec_stride_bound():
    with pytest.raises(ValueError):
        PatchSpec(4, 5)


def test_synth_deterministic():
    a, b = synth_cube(7, 64, 64, 31, 4), synth_cube(7, 64, 64, 31, 4)
    assert a == b
    assert a.data.min() == 0.0 and a.data.max() == 1.0
    assert synth_cube(8, 64, 64, 31, 4) != a


def test_synth_rank_one_affinely_collinear():
    cube = synth_cube(3, 16, 16, 31, 1)
    spectra = cube.data.reshape(31, -1).T.astype(np.float64)
    centered = spectra - spectra.mean(0)
    s = np.linalg.svd(centered, compute_uv=False)
    # differences between spectra all lie along one signature direction
    assert s[1] < 1e-5 * s[0]


def test_synth_full_rank():
    cube = synth_cube(5, 32, 32, 31, 31)
    s = np.linalg.svd(cube.data.reshape(31, -1).astype(np.float64), compute_uv=False)
    assert int((s > 1e-8 * s[0]).sum()) == 31


def test_synth_low_rank_bound():
    cube = synth_cube(5, 32, 32, 31, 4)
    s = np.linalg.svd(cube.data.reshape(31, -1).astype(np.float64), compute_uv=False)
    # normalization adds at most one constant direction
    assert int((s > 1e-5 * s[0]).sum()) <= 5


def test_synth_rank_too_large():
    with pytest.raises(ValueError):
        synth_cube(0, 8, 8, 4, 5)


def test_roundtrip_bit_exact(tmp_path):
    cube = synth_cube(2, 20, 24, 7, 3)
    write_cube(cube, tmp_path / "a.cube")
    back = read_cube(tmp_path / "a.cube")
    assert back == cube
    assert back.wavelengths == cube.wavelengths


@settings(max_examples=20, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(allow_nan=False, width=32)))
def test_roundtrip_any_values(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("rt") / "c.cube"
    write_cube(HSICube(arr), path)
    assert read_cube(path).data.tobytes() == arr.tobytes()


def test_header_layout(tmp_path):
    cube = HSICube(np.arange(6, dtype=np.float32).reshape(1, 2, 3))
    write_cube(cube, tmp_path / "c.cube")
    raw = (tmp_path / "c.cube").read_bytes()
    header, payload = raw.split(b"\n", 1)
    assert json.loads(header) == {"h": 2, "w": 3, "b": 1, "dtype": "f32le", "order": "bhw", "wavelengths": None}
    assert np.frombuffer(payload, "<f4").tolist() == [0, 1, 2, 3, 4, 5]


def _write_raw(path, header, n_floats):
    path.write_bytes(json.dumps(header).encode() + b"\n" + np.zeros(n_floats, "<f4").tobytes())


def test_truncated_payload(tmp_path):
    p = tmp_path / "t.cube"
    _write_raw(p, {"h": 2, "w": 2, "b": 31, "dtype": "f32le", "order": "bhw", "wavelengths": None}, 30 * 4)
    with pytest.raises(CubeFormatError, match="truncated payload"):
        read_cube(p)


def test_unsupported_dtype(tmp_path):
    p = tmp_path / "t.cube"
    _write_raw(p, {"h": 1, "w": 1, "b": 1, "dtype": "f64le", "order": "bhw", "wavelengths": None}, 2)
    with pytest.raises(CubeFormatError, match="unsupported dtype"):
        read_cube(p)


def test_malformed_header(tmp_path):
    p = tmp_path / "t.cube"
    p.write_bytes(b"{not json\n")
    with pytest.raises(CubeFormatError, match="malformed header"):
        read_cube(p)


def test_wavelength_length_mismatch(tmp_path):
    p = tmp_path / "t.cube"
    _write_raw(p, {"h": 1, "w": 1, "b": 2, "dtype": "f32le", "order": "bhw", "wavelengths": [400.0]}, 2)
    with pytest.raises(CubeFormatError, match="shape mismatch"):
        read_cube(p)


def test_wavelengths_must_increase():
    with pytest.raises(ValueError):
        HSICube(np.zeros((2, 1, 1)), (500.0, 400.0))


def test_manifest_roundtrip(tmp_path):
    write_cube(synth_cube(0, 8, 8, 3, 2), tmp_path / "a.cube")
    write_cube(synth_cube(1, 8, 8, 3, 2), tmp_path / "b.cube")
    m = DatasetManifest([("a.cube", "train", "s0"), ("b.cube", "test", "s1")], seed=9)
    m.save(tmp_path / "manifest.json")
    back = DatasetManifest.load(tmp_path / "manifest.json")
    assert back.seed == 9
    assert [e[1] for e in back.entries] == ["train", "test"]
    back.validate()


def test_manifest_unique_paths():
    with pytest.raises(ValueError):
        DatasetManifest([("a", "train", "s"), ("a", "test", "t")])
