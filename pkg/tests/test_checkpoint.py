"""Binary checkpoint format round trips and structural checks."""

import struct

import numpy as np
import pytest

from fskgc.errors import FormatError
from fskgc.numkit import (
    AdamState, Tensor, adam_step, load_arrays, load_checkpoint, save_arrays,
    save_checkpoint,
)


def test_roundtrip_preserves_values(tmp_path, rng):
    arrays = {
        "weights": rng.normal(size=(3, 4)),
        "bias": rng.normal(size=4),
        "scalar": np.asarray(2.5),
    }
    path = tmp_path / "model.tnck"
    save_arrays(path, arrays)
    loaded = load_arrays(path)
    assert set(loaded) == set(arrays)
    for name in arrays:
        np.testing.assert_array_equal(loaded[name], arrays[name])
        assert loaded[name].dtype == np.float64


def test_header_layout(tmp_path):
    path = tmp_path / "one.tnck"
    save_arrays(path, {"ab": np.asarray([1.0, 2.0])})
    raw = path.read_bytes()
    assert raw[:4] == b"TNCK"
    assert struct.unpack_from("<I", raw, 4)[0] == 1
    assert struct.unpack_from("<I", raw, 8)[0] == 2  # name length
    assert raw[12:14] == b"ab"
    assert struct.unpack_from("<I", raw, 14)[0] == 1  # rank
    assert struct.unpack_from("<Q", raw, 18)[0] == 2  # extent
    np.testing.assert_array_equal(
        np.frombuffer(raw, dtype="<f8", count=2, offset=26), [1.0, 2.0]
    )
    assert len(raw) == 26 + 16


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.tnck"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError):
        load_arrays(path)


def test_adam_state_roundtrip(tmp_path, rng):
    params = {
        "w": Tensor(rng.normal(size=(2, 2)), requires_grad=True),
        "b": Tensor(rng.normal(size=2), requires_grad=True),
    }
    adam = AdamState(lr=0.01)
    for _ in range(3):
        for p in params.values():
            p.grad = rng.normal(size=p.data.shape)
        adam_step(list(params.values()), adam)
    path = tmp_path / "ck.tnck"
    save_checkpoint(path, params, adam)

    raw = load_arrays(path)
    assert {"w", "w-m", "w-v", "b", "b-m", "b-v", "adam-step"} <= set(raw)

    fresh = {
        "w": Tensor(np.zeros((2, 2)), requires_grad=True),
        "b": Tensor(np.zeros(2), requires_grad=True),
    }
    fresh_adam = AdamState(lr=0.01)
    load_checkpoint(path, fresh, fresh_adam)
    assert fresh_adam.step_count == 3
    np.testing.assert_array_equal(fresh["w"].data, params["w"].data)
    for name in params:
        m_old, v_old = adam.slots_for(params[name])
        m_new, v_new = fresh_adam.slots_for(fresh[name])
        np.testing.assert_array_equal(m_old, m_new)
        np.testing.assert_array_equal(v_old, v_new)


def test_missing_parameter_rejected(tmp_path):
    path = tmp_path / "ck.tnck"
    save_arrays(path, {"a": np.zeros(2)})
    with pytest.raises(FormatError):
        load_checkpoint(path, {"a": Tensor(np.zeros(2)), "b": Tensor(np.zeros(1))})
