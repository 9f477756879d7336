import struct

import numpy as np
import pytest

from mrca.checkpoint import MAGIC, Checkpoint, CheckpointError, from_bytes, load, save, to_bytes
from mrca.network import NetworkShape, init_params


@pytest.fixture
def ckpt():
    params = init_params(3, NetworkShape(4, 3, 8, 2, 4, 2))
    return Checkpoint(params, ("born_in", "lives_in"), {"d": 4, "vocab_size": 9, "v": 2},
                      {"seed": 3})


def test_round_trip(ckpt, tmp_path):
    path = tmp_path / "m.mrca"
    save(ckpt, path)
    back = load(path)
    assert back.relation_vocab == ckpt.relation_vocab
    assert back.embedding == ckpt.embedding and back.extra == {"seed": 3}
    assert back.params.shape == ckpt.params.shape
    for name, arr in ckpt.params.tensors.items():
        np.testing.assert_array_equal(back.params[name], arr)


def test_bytes_are_stable(ckpt):
    assert to_bytes(ckpt) == to_bytes(from_bytes(to_bytes(ckpt)))


def test_bad_magic(ckpt):
    with pytest.raises(CheckpointError, match="magic"):
        from_bytes(b"NOTACKPT" + to_bytes(ckpt)[8:])


def test_bad_version(ckpt):
    blob = to_bytes(ckpt)
    _, hlen = struct.unpack("<IQ", blob[8:20])
    with pytest.raises(CheckpointError, match="version"):
        from_bytes(MAGIC + struct.pack("<IQ", 99, hlen) + blob[20:])


def test_truncated(ckpt):
    blob = to_bytes(ckpt)
    with pytest.raises(CheckpointError):
        from_bytes(blob[:-8])
    with pytest.raises(CheckpointError):
        from_bytes(blob[:12])


def test_vocab_size_mismatch(ckpt):
    ckpt.relation_vocab = ("only_one",)
    with pytest.raises(CheckpointError, match="vocabulary"):
        from_bytes(to_bytes(ckpt))
