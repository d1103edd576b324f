"""Named-tensor checkpoint container."""

import numpy as np
import pytest

from attrinject.checkpoint import (
    CheckpointError,
    checksum_arrays,
    load_checkpoint,
    load_model,
    save_checkpoint,
    save_model,
)
from attrinject.layers import ModelConfig, SentimentModel

RNG = np.random.default_rng(31)


class TestContainer:
    def test_round_trip_values_exact(self, tmp_path):
        tensors = {
            "weights": RNG.normal(size=(3, 4)),
            "bias": RNG.normal(size=5),
            "scalarish": np.array(3.25),
        }
        path = tmp_path / "model.bin"
        save_checkpoint(path, tensors, {"note": "fixture", "dims": 4})
        loaded, config = load_checkpoint(path)
        assert config == {"note": "fixture", "dims": 4}
        for name, arr in tensors.items():
            assert np.array_equal(loaded[name], arr)
            assert loaded[name].dtype == np.float64

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "model.bin"
        save_checkpoint(path, {"w": RNG.normal(size=(4, 4))}, {})
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_checksum_sensitive_to_values_not_order(self):
        a = {"x": np.ones(3), "y": np.zeros(2)}
        b = {"y": np.zeros(2), "x": np.ones(3)}
        assert checksum_arrays(a) == checksum_arrays(b)
        c = {"x": np.ones(3), "y": np.full(2, 1e-12)}
        assert checksum_arrays(a) != checksum_arrays(c)


class TestModelCheckpoint:
    def test_model_round_trip_forward_identical(self, tmp_path):
        cfg = ModelConfig(
            vocab_size=15, num_classes=3, embed_dim=6, word_dim=6, hidden_dim=4,
            attn_dim=4, num_users=3, num_products=3, user_dim=4, product_dim=4,
            representation="chunk", sites=("classify",), chunk_rows=1, chunk_cols=2,
        )
        model = SentimentModel(cfg, seed=7)
        path = tmp_path / "model.bin"
        save_model(path, model, extra={"user_names": ["<unk>", "a", "b"]})
        restored, config = load_model(path)
        assert config["user_names"] == ["<unk>", "a", "b"]
        ids = np.array([1, 2, 3, 4])
        got = restored.forward(ids, user=2, product=1).data
        want = model.forward(ids, user=2, product=1).data
        assert np.array_equal(got, want)
