"""Plain-text key=value configuration files for experiments.

Lines are ``key = value``; blank lines and ``#`` comments are ignored.
Unknown keys are rejected with the full list of valid ones, so typos fail
fast instead of silently training the wrong model.
"""

from __future__ import annotations

from pathlib import Path

from .layers import REPRESENTATIONS, SITES, TILE_MODES, ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """A configuration file or key set is invalid."""


def _to_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _to_sites(text: str) -> tuple[str, ...]:
    items = tuple(s.strip() for s in text.split(",") if s.strip())
    return items


MODEL_KEYS = {
    "representation": str,
    "sites": _to_sites,
    "embed_dim": int,
    "word_dim": int,
    "hidden_dim": int,
    "attn_dim": int,
    "user_dim": int,
    "product_dim": int,
    "chunk_rows": int,
    "chunk_cols": int,
    "tile_mode": str,
}

TRAIN_KEYS = {
    "batch_size": int,
    "dropout_rate": float,
    "max_norm": float,
    "adadelta_rho": float,
    "adadelta_eps": float,
    "patience": int,
    "max_epochs": int,
    "seed": int,
    "unknown_attr_rate": float,
}

DATA_KEYS = {
    "min_word_freq": int,
}

ALL_KEYS = {**MODEL_KEYS, **TRAIN_KEYS, **DATA_KEYS}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in ALL_KEYS:
            raise ConfigError(
                f"{source}:{lineno}: unknown key {key!r}; "
                f"valid keys: {', '.join(sorted(ALL_KEYS))}"
            )
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = ALL_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}")
    return values


def load_config(path) -> dict:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), source=str(path))


def model_template(values: dict) -> ModelConfig:
    """A ModelConfig template; corpus-derived sizes are placeholders that
    BoundCorpus.model_config fills in."""
    fields = {k: v for k, v in values.items() if k in MODEL_KEYS}
    representation = fields.get("representation", "none")
    if representation not in REPRESENTATIONS:
        raise ConfigError(
            f"representation must be one of {REPRESENTATIONS}, got {representation!r}"
        )
    sites = fields.get("sites", ())
    bad = [s for s in sites if s not in SITES]
    if bad:
        raise ConfigError(f"unknown sites {bad}; valid sites: {', '.join(SITES)}")
    if fields.get("tile_mode", "periodic") not in TILE_MODES:
        raise ConfigError(f"tile_mode must be one of {TILE_MODES}")
    placeholders = dict(
        vocab_size=2,
        num_classes=2,
        num_users=0 if representation == "none" else 2,
        num_products=0 if representation == "none" else 2,
    )
    try:
        return ModelConfig(**placeholders, **fields)
    except ValueError as exc:
        raise ConfigError(str(exc))


def train_config(values: dict) -> TrainConfig:
    fields = {k: v for k, v in values.items() if k in TRAIN_KEYS}
    try:
        return TrainConfig(**fields)
    except ValueError as exc:
        raise ConfigError(str(exc))
