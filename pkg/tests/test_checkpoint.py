import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from sparsett import checkpoint
from sparsett.checkpoint import MAGIC, CheckpointError
from sparsett.model import SparseTT, micro_config

arrays = hnp.arrays(
    st.sampled_from([np.float64, np.float32, np.int64, np.uint8]),
    hnp.array_shapes(min_dims=0, max_dims=3, min_side=0, max_side=4),
)


class TestFormat:
    def test_header_layout(self):
        blob = checkpoint.dumps({"w": np.array([1.5, -2.0])})
        assert blob[:8] == MAGIC
        assert struct.unpack_from("<II", blob, 8) == (1, 1)
        (n,) = struct.unpack_from("<I", blob, 16)
        assert blob[20:20 + n] == b"w"
        code, rank = struct.unpack_from("<BI", blob, 20 + n)
        assert (code, rank) == (1, 1)
        assert struct.unpack_from("<Q", blob, 25 + n) == (2,)
        assert np.frombuffer(blob[33 + n:], "<f8").tolist() == [1.5, -2.0]

    @given(st.dictionaries(st.text(min_size=1, max_size=12), arrays, max_size=4))
    def test_roundtrip_bit_exact(self, tensors):
        back = checkpoint.loads(checkpoint.dumps(tensors))
        assert list(back) == list(tensors)
        for k, v in tensors.items():
            assert back[k].dtype == v.dtype and back[k].shape == v.shape
            assert back[k].tobytes() == v.tobytes()

    def test_special_values_survive(self):
        v = np.array([np.nan, -0.0, np.inf, 5e-324])
        assert checkpoint.loads(checkpoint.dumps({"v": v}))["v"].tobytes() == v.tobytes()

    def test_bad_magic(self):
        with pytest.raises(CheckpointError):
            checkpoint.loads(b"NOTACKPT" + bytes(8))

    def test_truncated(self):
        blob = checkpoint.dumps({"w": np.ones(10)})
        with pytest.raises(CheckpointError):
            checkpoint.loads(blob[:-8])

    def test_unsupported_dtype(self):
        with pytest.raises(CheckpointError):
            checkpoint.dumps({"c": np.ones(2, np.complex128)})


class TestFiles:
    def test_config_travels_with_weights(self, tmp_path):
        checkpoint.save(tmp_path / "m.ckpt", {"a": np.eye(2)}, "seed = 3\n")
        tensors, text = checkpoint.load(tmp_path / "m.ckpt")
        assert text == "seed = 3\n" and list(tensors) == ["a"]

    def test_model_state_roundtrip(self, tmp_path):
        model = SparseTT(micro_config(), seed=7)
        checkpoint.save(tmp_path / "m.ckpt", model.state_dict())
        other = SparseTT(micro_config(), seed=8)
        other.load_state_dict(checkpoint.load(tmp_path / "m.ckpt")[0])
        for (n1, p1), (n2, p2) in zip(model.named_parameters(), other.named_parameters()):
            assert n1 == n2 and p1.data.tobytes() == p2.data.tobytes()
