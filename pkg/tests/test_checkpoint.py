import struct
import zlib

import numpy as np
import pytest

from app.core.errors import CompatibilityError, FormatError, IngestionError
from app.core.nets import assemble, assembly_checkpoint, assembly_from_checkpoint, build_encoder, forward, linear_head
from app.core.schemas import Checkpoint, EncoderArch
from app.services.checkpoint import (
    MAGIC,
    decode_checkpoint,
    descriptors_compatible,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)


@pytest.fixture
def ckpt():
    rng = np.random.default_rng(0)
    return Checkpoint(
        params={
            "encoder.stem.conv.w": rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
            "encoder.stem.bn.gamma": np.ones(4, dtype=np.float32),
            "head.fc.b": np.array(0.5, dtype=np.float32),
        },
        descriptor="mini_res-w4-d1+linear3",
        step=17,
        config_fingerprint="abc123",
    )


def test_round_trip_is_exact(tmp_path, ckpt):
    path = save_checkpoint(ckpt, str(tmp_path / "model.ckpt"))
    loaded = load_checkpoint(str(path))
    assert loaded.descriptor == ckpt.descriptor
    assert loaded.step == 17
    assert loaded.config_fingerprint == "abc123"
    assert list(loaded.params) == list(ckpt.params)
    for name, values in ckpt.params.items():
        assert loaded.params[name].dtype == np.float32
        assert loaded.params[name].shape == values.shape
        assert loaded.params[name].tobytes() == values.tobytes()


def test_encoding_is_deterministic(ckpt):
    data = encode_checkpoint(ckpt)
    assert data.startswith(MAGIC)
    assert encode_checkpoint(ckpt) == data
    assert encode_checkpoint(decode_checkpoint(data)) == data


def test_save_creates_parent_directories(tmp_path, ckpt):
    path = save_checkpoint(ckpt, str(tmp_path / "a" / "b" / "model.ckpt"))
    assert [p.name for p in path.parent.iterdir()] == ["model.ckpt"]


@pytest.mark.parametrize("position", [8, 20, -10, -1])
def test_corruption_is_detected(ckpt, position):
    data = bytearray(encode_checkpoint(ckpt))
    data[position] ^= 0xFF
    with pytest.raises(FormatError):
        decode_checkpoint(bytes(data))


@pytest.mark.parametrize("length", [0, 4, 30, -1])
def test_truncation_is_detected(ckpt, length):
    data = encode_checkpoint(ckpt)
    with pytest.raises(FormatError):
        decode_checkpoint(data[:length])


def test_bad_magic(ckpt):
    data = encode_checkpoint(ckpt)
    with pytest.raises(FormatError, match="magic"):
        decode_checkpoint(b"NOTACKPT" + data[8:])


def test_unsupported_version(ckpt):
    body = bytearray(encode_checkpoint(ckpt)[:-4])
    body[8:10] = struct.pack("<H", 99)
    data = bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    with pytest.raises(FormatError, match="version 99"):
        decode_checkpoint(data)


def test_missing_file(tmp_path):
    with pytest.raises(IngestionError):
        load_checkpoint(str(tmp_path / "absent.ckpt"))


def test_descriptor_compatibility():
    assert descriptors_compatible("mini_res-w4-d1+proj4x32", "mini_res-w4-d1")
    assert descriptors_compatible("mini_res-w4-d1", "mini_res-w4-d1")
    assert not descriptors_compatible("mini_res-w4-d1", "mini_plain-w4-d1")
    assert not descriptors_compatible("mini_res-w4-d1+linear3", "mini_res-w4-d1+linear5")


def test_load_rejects_wrong_architecture(tmp_path, ckpt):
    path = save_checkpoint(ckpt, str(tmp_path / "model.ckpt"))
    with pytest.raises(CompatibilityError):
        load_checkpoint(str(path), expected_descriptor="mini_res-w8-d1")
    assert load_checkpoint(str(path), expected_descriptor="mini_res-w4-d1").step == 17


def test_model_state_survives_disk(tmp_path):
    assembly = assemble(build_encoder(EncoderArch(width=4, depth=2), seed=1), linear_head(8, 3), False, seed=1)
    original = assembly_checkpoint(assembly, step=3)
    loaded = load_checkpoint(str(save_checkpoint(original, str(tmp_path / "m.ckpt"))))
    assert set(loaded.params) == set(original.params)
    assert any(name.endswith("running_var") for name in loaded.params)
    for name in original.params:
        np.testing.assert_array_equal(loaded.params[name], original.params[name])
    x = np.random.default_rng(0).uniform(0, 1, (2, 3, 8, 8)).astype(np.float32)
    rebuilt = assembly_from_checkpoint(loaded)
    assert forward(rebuilt, x).data.tobytes() == forward(assembly, x).data.tobytes()
