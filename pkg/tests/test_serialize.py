import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cpat.serialize import (
    FormatError,
    load_tensor,
    save_tensor,
    store_from_bytes,
    store_to_bytes,
    tensor_from_bytes,
    tensor_to_bytes,
)


def test_tensor_header_layout():
    blob = tensor_to_bytes(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert blob[:4] == b"CPT1"
    assert blob[4:6] == bytes([0, 2])
    assert struct.unpack("<2I", blob[6:14]) == (2, 3)
    assert np.frombuffer(blob[14:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(st.sampled_from([np.float32, np.float64]), hnp.array_shapes(min_dims=0, max_dims=4, max_side=5)))
def test_tensor_roundtrip_bitwise(arr):
    back = tensor_from_bytes(tensor_to_bytes(arr))
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == np.ascontiguousarray(arr).tobytes()


def test_file_roundtrip(tmp_path, rng):
    arr = rng.standard_normal((3, 4, 5))
    save_tensor(arr, tmp_path / "t.cpt")
    assert np.array_equal(load_tensor(tmp_path / "t.cpt"), arr)


@pytest.mark.parametrize("cut", [0, 3, 5, 9, 20])
def test_truncated_tensor(cut):
    blob = tensor_to_bytes(np.ones((2, 2)))
    with pytest.raises(FormatError, match="truncated|magic"):
        tensor_from_bytes(blob[:cut])


def test_bad_dtype_rejected():
    with pytest.raises(FormatError):
        tensor_to_bytes(np.ones(3, dtype=np.int32))
    blob = bytearray(tensor_to_bytes(np.ones(3)))
    blob[4] = 7
    with pytest.raises(FormatError, match="dtype code"):
        tensor_from_bytes(bytes(blob))


def test_store_roundtrip_and_order(rng):
    params = {"b.weight": rng.standard_normal((2, 3)).astype(np.float32), "a.bias": rng.standard_normal(4), "s": np.float64(2.5) * np.ones(())}
    back = store_from_bytes(store_to_bytes(params))
    assert list(back) == list(params)
    for k in params:
        assert back[k].dtype == params[k].dtype and np.array_equal(back[k], params[k])


def test_store_manifest_offsets(rng):
    params = {"x": np.zeros(2), "yy": np.ones((1, 3), np.float32)}
    blob = store_to_bytes(params)
    assert blob[:6] == b"CPATW1"
    (count,) = struct.unpack("<I", blob[6:10])
    assert count == 2
    # entry 0: name len, name, code, rank, dims, offset
    assert struct.unpack("<H", blob[10:12]) == (1,)
    off0 = struct.unpack("<Q", blob[12 + 1 + 2 + 4:12 + 1 + 2 + 4 + 8])[0]
    assert off0 == 0


def test_store_errors():
    with pytest.raises(FormatError, match="magic"):
        store_from_bytes(b"NOPE" + b"\0" * 10)
    good = store_to_bytes({"a": np.ones(3)})
    with pytest.raises(FormatError, match="truncated"):
        store_from_bytes(good[:-4])
    dup = store_to_bytes({"a": np.ones(1), "b": np.ones(1)}).replace(b"\x01\x00b", b"\x01\x00a")
    with pytest.raises(FormatError, match="duplicate"):
        store_from_bytes(dup)
