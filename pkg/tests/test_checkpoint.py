import struct

import numpy as np
import pytest

from conftest import toy_model
from raseq import checkpoint
from raseq.data import Vocab
from raseq.errors import CheckpointError


def test_roundtrip(tmp_path, dyn_model):
    sv, tv = Vocab(["a"]), Vocab(["b", "c"])
    checkpoint.save(tmp_path / "m.ckpt", dyn_model, sv, tv, extra={"epoch": 3})
    model, sv2, tv2, extra = checkpoint.load(tmp_path / "m.ckpt")
    assert model.config == dyn_model.config
    assert (sv2, tv2, extra) == (sv, tv, {"epoch": 3})
    for name, p in dyn_model.params.items():
        np.testing.assert_array_equal(model[name].data, p.data.astype(np.float32))
        assert model[name].dtype == np.float32


def test_identical_models_identical_bytes():
    assert checkpoint.dumps(toy_model(seed=4)) == checkpoint.dumps(toy_model(seed=4))
    assert checkpoint.dumps(toy_model(seed=4)) != checkpoint.dumps(toy_model(seed=5))


def test_header_layout(base_model):
    data = checkpoint.dumps(base_model)
    assert data.startswith(b"RASEQ2SEQ")
    version, size = struct.unpack_from("<II", data, 9)
    assert version == checkpoint.VERSION
    n_floats = sum(p.data.size for p in base_model.params.values())
    assert len(data) == 9 + 8 + size + 4 * n_floats


def test_bad_magic():
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint.loads(b"NOTACHECKPOINT")


def test_version_mismatch_names_versions(base_model):
    data = bytearray(checkpoint.dumps(base_model))
    struct.pack_into("<I", data, 9, 7)
    with pytest.raises(CheckpointError, match=r"version 7.*expected 1"):
        checkpoint.loads(bytes(data))


def test_truncated(base_model):
    with pytest.raises(CheckpointError, match="truncated"):
        checkpoint.loads(checkpoint.dumps(base_model)[:-4])


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        checkpoint.load(tmp_path / "nope.ckpt")


def test_save_leaves_no_temp_files(tmp_path, base_model):
    checkpoint.save(tmp_path / "m.ckpt", base_model)
    checkpoint.save(tmp_path / "m.ckpt", base_model)
    assert [p.name for p in tmp_path.iterdir()] == ["m.ckpt"]
