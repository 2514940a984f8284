import numpy as np
import pytest

from tlonlab.errors import FormatError
from tlonlab.tlonio import read_sidecar, read_tensors, write_sidecar, write_tensors


def test_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "a": rng.standard_normal((3, 4)),
        "nested/name": rng.standard_normal(7),
        "scalar": np.array(3.5),
        "cube": rng.standard_normal((2, 3, 4)),
    }
    p = tmp_path / "t.tlon"
    write_tensors(p, tensors)
    back = read_tensors(p)
    assert list(back) == list(tensors)
    for k in tensors:
        assert np.array_equal(back[k], tensors[k])
    # writing the read-back content reproduces identical bytes
    p2 = tmp_path / "t2.tlon"
    write_tensors(p2, back)
    assert p.read_bytes() == p2.read_bytes()


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.tlon"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError):
        read_tensors(p)


def test_truncated_file(tmp_path):
    p = tmp_path / "t.tlon"
    write_tensors(p, {"x": np.ones((4, 4))})
    data = p.read_bytes()
    p.write_bytes(data[: len(data) // 2])
    with pytest.raises(FormatError):
        read_tensors(p)


def test_trailing_bytes_rejected(tmp_path):
    p = tmp_path / "t.tlon"
    write_tensors(p, {"x": np.ones(2)})
    p.write_bytes(p.read_bytes() + b"junk")
    with pytest.raises(FormatError):
        read_tensors(p)


def test_unsupported_version(tmp_path):
    p = tmp_path / "t.tlon"
    write_tensors(p, {"x": np.ones(2)})
    data = bytearray(p.read_bytes())
    data[4] = 9  # version little-endian low byte
    p.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        read_tensors(p)


def test_header_layout_is_exactly_specified(tmp_path):
    p = tmp_path / "t.tlon"
    write_tensors(p, {"ab": np.array([1.0, 2.0])})
    raw = p.read_bytes()
    assert raw[:4] == b"TLON"
    assert int.from_bytes(raw[4:8], "little") == 1  # version
    assert int.from_bytes(raw[8:12], "little") == 1  # tensor count
    assert int.from_bytes(raw[12:14], "little") == 2  # name length
    assert raw[14:16] == b"ab"
    assert raw[16] == 1  # rank
    assert int.from_bytes(raw[17:25], "little") == 2  # dim
    assert np.frombuffer(raw[25:41], dtype="<f8").tolist() == [1.0, 2.0]
    assert len(raw) == 41


def test_sidecar_roundtrip_and_stable_bytes(tmp_path):
    p = tmp_path / "t.tlon"
    write_tensors(p, {"x": np.ones(1)})
    meta = {"b": 1, "a": {"z": [1, 2], "y": "s"}}
    write_sidecar(p, meta)
    assert read_sidecar(p) == meta
    first = (tmp_path / "t.tlon.json").read_bytes()
    write_sidecar(p, meta)
    assert (tmp_path / "t.tlon.json").read_bytes() == first
