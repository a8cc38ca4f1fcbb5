import numpy as np
import pytest

from gaitcontour import checkpoint
from gaitcontour.errors import ChecksumMismatch, FormatError
from gaitcontour.model import GaitContour, ModelConfig


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    params = {"a.weight": rng.normal(size=(3, 4)), "b": np.array(1.5), "c.bias": rng.normal(size=7)}
    blob = checkpoint.dumps(params)
    back = checkpoint.loads(blob)
    assert list(back) == list(params)
    for k in params:
        assert back[k].shape == np.shape(params[k])
        assert back[k].tobytes() == np.asarray(params[k], dtype="<f8").tobytes()
    assert checkpoint.dumps(back) == blob
    checkpoint.save(tmp_path / "m.gct", params)
    assert (tmp_path / "m.gct").read_bytes() == blob


def test_header_layout():
    blob = checkpoint.dumps({"w": np.zeros((2, 3))})
    assert blob[:4] == b"GCT1"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert len(blob) == 4 + 4 + 4 + 1 + 4 + 8 + 6 * 8 + 4


def test_corruption_detected():
    blob = bytearray(checkpoint.dumps({"w": np.ones(4)}))
    blob[20] ^= 0xFF
    with pytest.raises(ChecksumMismatch):
        checkpoint.loads(bytes(blob))
    with pytest.raises((ChecksumMismatch, FormatError)):
        checkpoint.loads(bytes(blob[:10]))
    with pytest.raises(FormatError):
        checkpoint.loads(b"XXXX" + bytes(blob[4:]))


def test_model_state_round_trip():
    a = GaitContour(ModelConfig(init_seed=1))
    b = GaitContour(ModelConfig(init_seed=2))
    b.load_state_dict(checkpoint.loads(checkpoint.dumps(a.state_dict())))
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)
