"""Key=value configuration files."""

import pytest

from attrinject.config import (
    ConfigError,
    load_config,
    model_template,
    parse_config_text,
    train_config,
)


class TestParsing:
    def test_values_comments_and_blanks(self):
        text = """
        # experiment settings
        representation = chunk
        sites = embed, classify   # two sites
        chunk_rows = 3
        dropout_rate = 0.2
        """
        values = parse_config_text(text)
        assert values["representation"] == "chunk"
        assert values["sites"] == ("embed", "classify")
        assert values["chunk_rows"] == 3
        assert values["dropout_rate"] == 0.2

    def test_unknown_key_lists_valid_ones(self):
        with pytest.raises(ConfigError, match="representation"):
            parse_config_text("reprsentation = chunk")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("seed = 1\nseed = 2")

    def test_bad_value_reports_line(self):
        with pytest.raises(ConfigError, match=":2"):
            parse_config_text("seed = 1\nbatch_size = many")

    def test_missing_equals_sign(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config_text("just some words")

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "run.conf"
        path.write_text("representation = bias\nsites = attend\nseed = 9\n")
        values = load_config(path)
        assert values == {"representation": "bias", "sites": ("attend",), "seed": 9}


class TestTemplates:
    def test_model_template_applies_fields(self):
        template = model_template(
            {"representation": "chunk", "sites": ("embed",), "hidden_dim": 32}
        )
        assert template.representation == "chunk"
        assert template.hidden_dim == 32

    def test_invalid_site_rejected(self):
        with pytest.raises(ConfigError, match="unknown sites"):
            model_template({"representation": "bias", "sites": ("everywhere",)})

    def test_invalid_representation_rejected(self):
        with pytest.raises(ConfigError, match="representation"):
            model_template({"representation": "hologram"})

    def test_train_config_fields(self):
        cfg = train_config({"batch_size": 8, "patience": 3, "seed": 4})
        assert (cfg.batch_size, cfg.patience, cfg.seed) == (8, 3, 4)

    def test_train_config_validation_propagates(self):
        with pytest.raises(ConfigError):
            train_config({"dropout_rate": 1.5})
