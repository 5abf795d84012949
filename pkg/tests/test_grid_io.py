import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from relief.grid import (
    DegeneratePixelError,
    DepthMap,
    EncodedNormalMap,
    GridError,
    NormalMap,
    decode_normals,
    encode_normals,
    viz_depth,
)
from relief.io import FormatError, load_depth, load_normals, read_pfm, save_depth, save_normals, write_pfm


def _pfm_bytes(ident, w, h, scale, payload):
    return b"%s\n%d %d\n%s\n" % (ident, w, h, scale) + payload


# --------------------------------------------------------------------- types

def test_depthmap_rejects_tiny_and_nonfinite():
    with pytest.raises(GridError):
        DepthMap(np.zeros((1, 5)))
    with pytest.raises(GridError):
        DepthMap(np.array([[0.0, np.nan], [0.0, 0.0]]))
    # non-finite allowed where masked out
    m = DepthMap(np.array([[0.0, np.nan], [1.0, 2.0]]),
                 mask=np.array([[True, False], [True, True]]))
    assert m.thickness == 2.0


def test_depthmap_is_immutable():
    d = DepthMap(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        d.values[0, 0] = 1.0


def test_normalmap_invariants():
    with pytest.raises(GridError):
        NormalMap(np.tile([1.0, 0.0, 0.0], (2, 2, 1)))  # z not > 0
    with pytest.raises(GridError):
        NormalMap(np.tile([0.0, 0.0, 2.0], (2, 2, 1)))  # not unit
    NormalMap.flat(2, 2)


def test_encode_examples():
    v = np.zeros((2, 2, 3))
    v[..., 2] = 1.0
    v[0, 0] = (0.6, 0.0, 0.8)
    e = encode_normals(NormalMap(v)).channels
    assert tuple(e[1, 1]) == (0.5, 0.5, 1.0)
    assert np.allclose(e[0, 0], (0.8, 0.5, 0.9), atol=1e-15)
    assert np.all(e[..., 2] > 0.5)


def test_decode_examples():
    c = np.tile([0.5, 0.5, 1.0], (2, 2, 1))
    assert np.array_equal(decode_normals(EncodedNormalMap(c)).vectors, np.tile([0.0, 0.0, 1.0], (2, 2, 1)))
    c[1, 0] = (0.5, 0.5, 0.5)
    with pytest.raises(DegeneratePixelError) as info:
        decode_normals(EncodedNormalMap(c))
    assert info.value.coords == [(1, 0)]


def test_decode_clamps_back_facing():
    c = np.tile([0.5, 0.5, 1.0], (2, 2, 1))
    c[0, 0] = (0.9, 0.5, 0.3)  # decodes to z < 0
    n = decode_normals(EncodedNormalMap(c)).vectors[0, 0]
    assert n[2] > 0 and abs(np.linalg.norm(n) - 1) < 1e-12


unit_normals = arrays(np.float64, (4, 5, 3), elements=st.floats(-1, 1)).map(
    lambda a: a + np.array([0, 0, 1.5])
).map(lambda a: a / np.linalg.norm(a, axis=2, keepdims=True))


@given(unit_normals)
def test_encode_decode_roundtrip(v):
    n = NormalMap(v)
    back = decode_normals(encode_normals(n))
    assert np.max(np.abs(back.vectors - n.vectors)) < 1e-6
    e = encode_normals(n)
    assert np.max(np.abs(encode_normals(decode_normals(e)).channels - e.channels)) < 1e-6


# ----------------------------------------------------------------------- viz

def test_viz_endpoints_and_midpoint():
    v = np.zeros((2, 3))
    v[0, 1] = 445.73
    v[1, 2] = 445.73 / 2
    img, degenerate = viz_depth(DepthMap(v))
    assert not degenerate
    assert img.dtype == np.uint8
    assert img[0, 0] == 0 and img[0, 1] == 255
    # 127.5 rounds half away from zero
    assert img[1, 2] == 128


def test_viz_constant_map_warns():
    img, degenerate = viz_depth(DepthMap(np.full((4, 4), 7.0)))
    assert degenerate and not img.any()


@given(st.floats(0.01, 100), st.floats(-1000, 1000))
@settings(max_examples=50)
def test_viz_affine_invariance(a, b):
    base = np.arange(20, dtype=float).reshape(4, 5) * 3.1
    img1, _ = viz_depth(DepthMap(base))
    img2, _ = viz_depth(DepthMap(a * base + b))
    # rounding of the affine map may move values at exact .5 boundaries by one level
    assert np.max(np.abs(img1.astype(int) - img2.astype(int))) <= 1


def test_viz_affine_invariance_exact_for_dyadic_scales():
    base = np.arange(20, dtype=float).reshape(4, 5)
    img1, _ = viz_depth(DepthMap(base))
    img2, _ = viz_depth(DepthMap(4.0 * base + 16.0))
    assert np.array_equal(img1, img2)


# ----------------------------------------------------------------------- PFM

def test_pfm_zero_map(tmp_path):
    p = tmp_path / "z.pfm"
    p.write_bytes(_pfm_bytes(b"Pf", 2, 2, b"-1.0", b"\0" * 16))
    d = load_depth(p)
    assert d.shape == (2, 2) and not d.values.any() and d.thickness == 0


def test_pfm_big_endian_and_row_order(tmp_path):
    p = tmp_path / "be.pfm"
    # bottom row first in the file
    payload = struct.pack(">4f", 3.0, 4.0, 1.0, 2.0)
    p.write_bytes(_pfm_bytes(b"Pf", 2, 2, b"1.0", payload))
    assert np.array_equal(load_depth(p).values, [[1.0, 2.0], [3.0, 4.0]])


@pytest.mark.parametrize("content, offset", [
    (b"Pf\n2 2\n-1.0\n" + b"\0" * 15, 27),   # truncated payload
    (b"PX\n2 2\n-1.0\n" + b"\0" * 16, 0),    # bad identifier
    (b"Pf\n1 2\n-1.0\n" + b"\0" * 8, 3),     # width 1
    (b"Pf\n2 2\n", 7),                        # no scale line
])
def test_pfm_format_errors(tmp_path, content, offset):
    p = tmp_path / "bad.pfm"
    p.write_bytes(content)
    with pytest.raises(FormatError) as info:
        load_depth(p)
    assert info.value.offset == offset


def test_pfm_nonfinite_payload_offset(tmp_path):
    p = tmp_path / "nan.pfm"
    p.write_bytes(_pfm_bytes(b"Pf", 2, 2, b"-1.0", struct.pack("<4f", 0, 0, float("nan"), 0)))
    with pytest.raises(FormatError) as info:
        load_depth(p)
    assert info.value.offset == len(b"Pf\n2 2\n-1.0\n") + 8


@given(arrays(np.float32, st.tuples(st.integers(2, 9), st.integers(2, 9)),
              elements=st.floats(width=32, allow_nan=False, allow_infinity=False)))
@settings(max_examples=60, deadline=None)
def test_pfm_roundtrip_bit_exact(tmp_path_factory, values):
    p = tmp_path_factory.mktemp("pfm") / "d.pfm"
    save_depth(DepthMap(values.astype(np.float64)), p)
    back = load_depth(p).values.astype(np.float32)
    assert back.tobytes() == values.tobytes()


def test_pfm_rejects_float32_overflow(tmp_path):
    with pytest.raises(ValueError):
        save_depth(DepthMap(np.full((2, 2), 1e300)), tmp_path / "o.pfm")


def test_normals_pfm_roundtrip(tmp_path, rng):
    v = rng.normal(size=(5, 6, 3))
    v[..., 2] = np.abs(v[..., 2]) + 0.5
    v = (v / np.linalg.norm(v, axis=2, keepdims=True)).astype(np.float32).astype(np.float64)
    n = NormalMap(v / np.linalg.norm(v, axis=2, keepdims=True))
    save_normals(n, tmp_path / "n.pfm")
    assert read_pfm(tmp_path / "n.pfm").shape == (5, 6, 3)
    assert np.max(np.abs(load_normals(tmp_path / "n.pfm").vectors - n.vectors)) < 1e-6


def test_normals_png_roundtrip(tmp_path, rng):
    v = rng.normal(size=(5, 6, 3))
    v[..., 2] = np.abs(v[..., 2]) + 0.5
    n = NormalMap(v / np.linalg.norm(v, axis=2, keepdims=True))
    save_normals(n, tmp_path / "n.png")
    back = load_normals(tmp_path / "n.png").vectors
    # 8-bit quantization: half a level per channel is ~0.004 in vector units
    assert np.max(np.abs(back - n.vectors)) < 0.02


# --------------------------------------------------------------------- PNG16

def test_png16_large_thickness(tmp_path):
    from relief.io import write_png16

    p = tmp_path / "d.png"
    write_png16(p, np.array([[0, 65535], [0, 0]]))
    (tmp_path / "d.json").write_text(json.dumps({"scale": 445.73 / 65535, "offset": 0.0}))
    assert load_depth(p).thickness == pytest.approx(445.73, abs=1e-9)


def test_png16_default_scale_without_sidecar(tmp_path):
    from relief.io import write_png16

    p = tmp_path / "raw.png"
    write_png16(p, np.array([[0, 7], [65535, 3]]))
    assert np.array_equal(load_depth(p).values, [[0, 7], [65535, 3]])


def test_png16_zero_map(tmp_path):
    p = tmp_path / "z.png"
    save_depth(DepthMap(np.zeros((3, 3))), p)
    assert not load_depth(p).values.any()


def test_png16_ramp_quantization_bound(tmp_path):
    ramp = np.arange(16, dtype=float).reshape(4, 4)
    p = tmp_path / "ramp.png"
    save_depth(DepthMap(ramp), p)
    scale = json.loads((tmp_path / "ramp.json").read_text())["scale"]
    err = np.max(np.abs(load_depth(p).values - ramp))
    assert scale == 15 / 65535
    assert err <= scale / 2


def test_png16_random_quantization_bound(tmp_path, rng):
    v = rng.uniform(-50, 400, (12, 9))
    p = tmp_path / "r.png"
    save_depth(DepthMap(v), p)
    scale = (v.max() - v.min()) / 65535
    assert np.max(np.abs(load_depth(p).values - v)) <= scale / 2 * (1 + 1e-9)


def test_png16_truncated(tmp_path):
    p = tmp_path / "t.png"
    save_depth(DepthMap(np.arange(64, dtype=float).reshape(8, 8)), p)
    data = p.read_bytes()
    p.write_bytes(data[: len(data) // 2])
    with pytest.raises(FormatError):
        load_depth(p)


def test_save_to_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        save_depth(DepthMap(np.zeros((2, 2))), tmp_path / "missing" / "d.pfm")
