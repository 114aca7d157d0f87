"""ZOOW container: bit-exact round trips and malformed-input errors."""

import struct

import numpy as np
import pytest

from modelzoo.errors import ContainerError
from modelzoo.tensor import Tensor, tensor_equal
from modelzoo.weights import decode_weights, encode_weights, load_weights, save_weights

RNG = np.random.default_rng(8)


def table():
    return {
        "a.weight": Tensor(RNG.standard_normal((2, 3, 4, 5)).astype(np.float32)),
        "a.bias": Tensor(RNG.standard_normal(7).astype(np.float32)),
        "wide/name with spaces": Tensor(RNG.standard_normal((3, 3)).astype(np.float64)),
    }


def test_round_trip_bit_exact(tmp_path):
    t = table()
    path = tmp_path / "w.zoow"
    save_weights(t, path)
    back = load_weights(path)
    assert list(back) == list(t)
    for name in t:
        assert tensor_equal(back[name], t[name])
    # encoding is canonical: re-encoding the decoded table is byte-identical
    assert encode_weights(back) == path.read_bytes()


def test_flipped_magic_reports_offset_zero():
    data = bytearray(encode_weights(table()))
    data[0] ^= 0xFF
    with pytest.raises(ContainerError) as err:
        decode_weights(bytes(data))
    assert err.value.offset == 0


def test_unsupported_version():
    data = bytearray(encode_weights(table()))
    struct.pack_into("<I", data, 4, 99)
    with pytest.raises(ContainerError) as err:
        decode_weights(bytes(data))
    assert err.value.offset == 4


def test_truncated_payload_names_tensor():
    data = encode_weights({"conv9.weight": Tensor(np.ones((4, 4), np.float32))})
    with pytest.raises(ContainerError, match="conv9.weight"):
        decode_weights(data[:-8])


def test_trailing_garbage_rejected():
    data = encode_weights(table())
    with pytest.raises(ContainerError, match="trailing"):
        decode_weights(data + b"\x00")


def test_header_layout_is_little_endian():
    # hand-assemble a one-tensor container and make sure it decodes
    payload = np.array([1.5, -2.0, 0.25], dtype="<f4").tobytes()
    raw = (b"ZOOW" + struct.pack("<I", 1) + struct.pack("<I", 1)
           + struct.pack("<H", 1) + b"t" + struct.pack("<BB", 0, 1)
           + struct.pack("<I", 3) + payload)
    back = decode_weights(raw)
    assert np.array_equal(back["t"].array, np.array([1.5, -2.0, 0.25], np.float32))
    assert encode_weights(back) == raw


def test_empty_table_round_trips():
    assert decode_weights(encode_weights({})) == {}
