import numpy as np
import pytest

from laat.checkpoint import (
    MAGIC,
    Checkpoint,
    CheckpointError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from laat.data import CodeVocabulary, Vocabulary
from laat.model import JointConfig, LaatConfig, LaatModel


def make_ckpt(joint=False):
    vocab = Vocabulary(["alpha", "beta", "gamma"])
    codes = CodeVocabulary.from_codes(["1.1", "1.2", "2.0"])
    cfg = LaatConfig(vocab_size=len(vocab), num_labels=3, d_e=3, u=2, d_a=2,
                     joint=JointConfig(2, 2) if joint else None)
    return Checkpoint(LaatModel(cfg, np.random.default_rng(0)), vocab, codes, 100, {"epoch": 3})


@pytest.mark.parametrize("joint", [False, True])
def test_roundtrip_is_exact(tmp_path, joint):
    ckpt = make_ckpt(joint)
    path = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, path)
    back = load_checkpoint(path)
    assert back.model.config == ckpt.model.config
    assert back.vocab.tokens == ckpt.vocab.tokens and back.vocab_hash == ckpt.vocab_hash
    assert back.codes.to_dict() == ckpt.codes.to_dict()
    assert back.max_len == 100 and back.extra == {"epoch": 3}
    for k, v in ckpt.model.state_dict().items():
        np.testing.assert_array_equal(back.model.params[k].data, v)
    assert encode_checkpoint(back) == encode_checkpoint(ckpt)


def test_layout_starts_with_magic():
    assert encode_checkpoint(make_ckpt()).startswith(MAGIC)


def test_corruption_detected(tmp_path):
    blob = bytearray(encode_checkpoint(make_ckpt()))
    blob[len(blob) // 2] ^= 0xFF
    with pytest.raises(CheckpointError, match="checksum"):
        decode_checkpoint(bytes(blob))
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"not a checkpoint at all, just some bytes" * 2)
    path = tmp_path / "trunc.ckpt"
    path.write_bytes(bytes(blob[:20]))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")
