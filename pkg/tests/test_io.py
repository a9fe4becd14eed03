import struct

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adaptkit.io import (
    FormatError,
    load_checkpoint,
    load_idx,
    read_flow,
    read_image,
    read_pnm_bytes,
    save_checkpoint,
    write_flow,
    write_image,
    write_pnm_bytes,
)

tmp_settings = settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])


@tmp_settings
@given(arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9))))
def test_pgm_bit_exact_roundtrip(tmp_path, pixels):
    p = tmp_path / "x.pgm"
    write_pnm_bytes(p, pixels)
    assert read_pnm_bytes(p).tobytes() == pixels.tobytes()
    assert p.read_bytes().startswith(b"P5")


@tmp_settings
@given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3))))
def test_ppm_bit_exact_roundtrip(tmp_path, pixels):
    p = tmp_path / "x.ppm"
    write_pnm_bytes(p, pixels)
    back = read_pnm_bytes(p)
    assert back.shape == pixels.shape and back.tobytes() == pixels.tobytes()


def test_float_image_roundtrip_quantises(tmp_path):
    img = np.random.default_rng(0).random((4, 5))
    write_image(tmp_path / "a.pgm", img)
    back = read_image(tmp_path / "a.pgm")
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_pnm_header_comments_and_errors(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# a comment\n2 1\n255\n" + bytes([7, 9]))
    np.testing.assert_array_equal(read_pnm_bytes(p), [[7, 9]])
    p.write_bytes(b"P2\n2 1\n255\n7 9")
    with pytest.raises(FormatError, match="magic"):
        read_pnm_bytes(p)
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([1]))
    with pytest.raises(FormatError, match="raster"):
        read_pnm_bytes(p)
    p.write_bytes(b"P5\n2 1\n65535\n" + bytes(4))
    with pytest.raises(FormatError, match="maxval"):
        read_pnm_bytes(p)


def test_flow_file_layout(tmp_path):
    flow = np.arange(12, dtype=float).reshape(2, 3, 2) / 4
    write_flow(tmp_path / "f.flo", flow)
    raw = (tmp_path / "f.flo").read_bytes()
    assert raw[:4] == b"AFLW"
    assert struct.unpack("<II", raw[4:12]) == (2, 3)
    assert struct.unpack("<2f", raw[12:20]) == (0.0, 0.25)  # (F_x, F_y) of pixel (0, 0)
    np.testing.assert_array_equal(read_flow(tmp_path / "f.flo"), flow)


def test_flow_errors(tmp_path):
    p = tmp_path / "f.flo"
    p.write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(FormatError):
        read_flow(p)
    p.write_bytes(b"AFLW" + struct.pack("<II", 2, 2) + bytes(4))
    with pytest.raises(FormatError):
        read_flow(p)
    with pytest.raises(FormatError):
        write_flow(p, np.zeros((2, 2, 3)))


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"w": rng.normal(size=(3, 2)).astype(np.float32), "b": np.zeros(2, np.float32), "s": np.float32(1.5)}
    save_checkpoint(tmp_path / "m.ckpt", tensors)
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert list(back) == ["w", "b", "s"]
    for k, v in tensors.items():
        np.testing.assert_array_equal(back[k], v)


def test_checkpoint_truncated(tmp_path):
    save_checkpoint(tmp_path / "m.ckpt", {"w": np.ones((4, 4))})
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "m.ckpt").write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "m.ckpt")


def test_idx_two_images(tmp_path):
    # hand-built: magic 00 00 08 03, dims 2, 2, 2 (big-endian), then 8 raw bytes
    body = bytes([0, 255, 51, 102, 10, 20, 30, 40])
    (tmp_path / "img.idx").write_bytes(bytes([0, 0, 8, 3]) + struct.pack(">3I", 2, 2, 2) + body)
    x = load_idx(tmp_path / "img.idx")
    assert x.shape == (2, 2, 2)
    np.testing.assert_allclose(x.reshape(-1), np.array(list(body)) / 255.0)
    assert x[0, 0, 1] == 1.0 and x[0, 1, 0] == 0.2


def test_idx_labels(tmp_path):
    (tmp_path / "lab.idx").write_bytes(bytes([0, 0, 8, 1]) + struct.pack(">I", 3) + bytes([3, 0, 9]))
    np.testing.assert_array_equal(load_idx(tmp_path / "lab.idx", rescale=False), [3, 0, 9])


@pytest.mark.parametrize(
    "payload",
    [b"", bytes([1, 0, 8, 1]), bytes([0, 0, 0x0D, 1]) + struct.pack(">I", 1) + bytes(4), bytes([0, 0, 8, 2, 0, 0])],
    ids=["empty", "bad-magic", "float-type", "truncated-dims"],
)
def test_idx_errors(tmp_path, payload):
    (tmp_path / "bad.idx").write_bytes(payload)
    with pytest.raises(FormatError):
        load_idx(tmp_path / "bad.idx")


def test_idx_truncated_data(tmp_path):
    (tmp_path / "t.idx").write_bytes(bytes([0, 0, 8, 1]) + struct.pack(">I", 5) + bytes(3))
    with pytest.raises(FormatError, match="expected 5"):
        load_idx(tmp_path / "t.idx")
