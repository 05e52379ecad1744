from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from peace.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from peace.errors import FormatError


@given(st.dictionaries(st.text(min_size=1, max_size=12),
                       arrays(np.float64, array_shapes(min_dims=0, max_dims=3, max_side=4),
                              elements=st.floats(allow_nan=False)), max_size=4))
def test_round_trip_bit_exact(state):
    back, meta = decode_checkpoint(encode_checkpoint(state, {"k": 1}))
    assert meta == {"k": 1} and set(back) == set(state)
    for k in state:
        assert back[k].shape == state[k].shape and back[k].tobytes() == state[k].tobytes()


def test_file_io_and_errors(tmp_path):
    state = {"a.w": np.arange(6.0).reshape(2, 3)}
    p = save_checkpoint(tmp_path / "x" / "ck.pck", state, {"hash": "abc"})
    back, meta = load_checkpoint(p)
    np.testing.assert_array_equal(back["a.w"], state["a.w"])
    assert meta["hash"] == "abc"
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.pck")
    blob = p.read_bytes()
    with pytest.raises(FormatError, match="magic"):
        decode_checkpoint(b"XXXX" + blob[4:])
    with pytest.raises(FormatError):
        decode_checkpoint(blob[:-3])
    with pytest.raises(FormatError, match="trailing"):
        decode_checkpoint(blob + b"\0")
    with pytest.raises(FormatError):
        decode_checkpoint(blob[:5])
