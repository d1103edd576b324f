"""The base classifier: word nonlinearity, BiLSTM encoder, attention pooling,
and a logistic classifier.

Every affine map accepts an optional weight modulator so user/product
representations can replace, gate, or bias it without touching the layer
code itself. With all modulators absent the forward pass is exactly the
plain model.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor

SITES = ("embed", "encode", "attend", "classify")
REPRESENTATIONS = ("none", "bias", "matrix", "chunk")
TILE_MODES = ("periodic", "block")


class ModelConfigError(ValueError):
    """A model configuration is internally inconsistent."""


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and attribute settings; fully determines parameter shapes."""

    vocab_size: int
    num_classes: int
    embed_dim: int = 64          # width of word vectors (rows of the lookup table)
    word_dim: int = 64           # width of the transformed word representation
    hidden_dim: int = 64         # total BiLSTM width; each direction gets half
    attn_dim: int = 0            # attention projection width; 0 means hidden_dim
    num_users: int = 0           # attribute table rows, including the unknown row 0
    num_products: int = 0
    user_dim: int = 16
    product_dim: int = 16
    representation: str = "none"
    sites: tuple[str, ...] = ()
    chunk_rows: int = 2
    chunk_cols: int = 2
    tile_mode: str = "periodic"

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ModelConfigError("vocab_size must be >= 2 (pad and unknown rows)")
        if self.num_classes < 2:
            raise ModelConfigError("num_classes must be >= 2")
        if self.hidden_dim % 2 != 0:
            raise ModelConfigError(
                f"hidden_dim must be even to split across directions, "
                f"got {self.hidden_dim}"
            )
        if self.representation not in REPRESENTATIONS:
            raise ModelConfigError(
                f"representation must be one of {REPRESENTATIONS}, "
                f"got {self.representation!r}"
            )
        if self.tile_mode not in TILE_MODES:
            raise ModelConfigError(
                f"tile_mode must be one of {TILE_MODES}, got {self.tile_mode!r}"
            )
        bad = [s for s in self.sites if s not in SITES]
        if bad:
            raise ModelConfigError(f"unknown injection sites {bad}; valid: {SITES}")
        if len(set(self.sites)) != len(self.sites):
            raise ModelConfigError(f"duplicate injection sites in {self.sites}")
        if self.representation == "none" and self.sites:
            raise ModelConfigError("sites given but representation is 'none'")
        if self.representation != "none" and not self.sites:
            raise ModelConfigError(
                f"representation {self.representation!r} needs at least one site"
            )
        if self.representation != "none":
            if self.num_users < 2 or self.num_products < 2:
                raise ModelConfigError(
                    "attribute injection needs user/product tables "
                    "(num_users and num_products >= 2, row 0 is the unknown entity)"
                )

    @property
    def half_hidden(self) -> int:
        return self.hidden_dim // 2

    @property
    def attention_dim(self) -> int:
        return self.attn_dim if self.attn_dim > 0 else self.hidden_dim

    def site_shape(self, site: str) -> tuple[int, int]:
        """Weight-matrix shape of the affine map at an injection site."""
        if site == "embed":
            return (self.word_dim, self.embed_dim)
        if site == "encode":
            return (4 * self.half_hidden, self.word_dim + self.half_hidden)
        if site == "attend":
            return (self.attention_dim, self.hidden_dim)
        if site == "classify":
            return (self.num_classes, self.hidden_dim)
        raise ModelConfigError(f"unknown site {site!r}")

    def without_attributes(self) -> "ModelConfig":
        return replace(self, representation="none", sites=())


def glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


class Modulator:
    """How an attribute representation alters one affine map.

    Exactly one of the three fields is set: ``shift`` adds to the
    pre-activation (bias representation), ``replacement`` substitutes the
    weight matrix wholesale (matrix representation), and ``gate`` multiplies
    it elementwise (chunked gate representation).
    """

    __slots__ = ("shift", "replacement", "gate")

    def __init__(self, shift=None, replacement=None, gate=None):
        self.shift = shift
        self.replacement = replacement
        self.gate = gate

    def effective(self, w: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
        if self.replacement is not None:
            return self.replacement, b
        if self.gate is not None:
            return ag.mul(self.gate, w), b
        if self.shift is not None:
            return w, ag.add(b, self.shift)
        return w, b


def _resolve(w: Tensor, b: Tensor, modulator: Optional[Modulator]):
    if modulator is None:
        return w, b
    return modulator.effective(w, b)


class EmbeddingLayer:
    """Word lookup followed by a tanh affine map.

    From-scratch word vectors start at a pretrained-like scale; rows are
    usually overwritten by a pretrained table, whose own missing-token
    fallback is the much smaller [-0.01, 0.01].
    """

    WORD_INIT_SCALE = 0.5

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.word_table = ag.parameter(
            rng.uniform(
                -self.WORD_INIT_SCALE,
                self.WORD_INIT_SCALE,
                (cfg.vocab_size, cfg.embed_dim),
            ),
            name="word_table",
        )
        self.w = ag.parameter(glorot(rng, cfg.site_shape("embed")), name="embed.w")
        self.b = ag.parameter(np.zeros(cfg.word_dim), name="embed.b")

    def forward(
        self,
        token_ids: np.ndarray,
        modulator: Optional[Modulator] = None,
        keep_mask: Optional[np.ndarray] = None,
    ) -> Tensor:
        if token_ids.size < 1:
            raise ag.InvalidInputError("cannot embed an empty token sequence")
        if token_ids.max() >= self.word_table.shape[0]:
            raise ag.InvalidInputError(
                f"token id {int(token_ids.max())} outside vocabulary of "
                f"{self.word_table.shape[0]} rows"
            )
        x = ag.take_rows(self.word_table, token_ids)
        if keep_mask is not None:
            x = ag.mul(x, ag.constant(keep_mask))
        w, b = _resolve(self.w, self.b, modulator)
        return ag.tanh(ag.add_rowvec(ag.matmul(x, ag.transpose(w)), b))

    def parameters(self) -> dict[str, Tensor]:
        return {"word_table": self.word_table, "embed.w": self.w, "embed.b": self.b}


class BiLstmEncoder:
    """Forward and backward recurrences over the word sequence.

    Each direction applies one stacked gate matrix to [w_t; h_{t-1}]; the
    backward direction consumes the reversed sequence and its outputs are
    re-reversed before concatenation, so row t is [fwd_t; bwd_t].
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        shape = cfg.site_shape("encode")
        self.hidden = cfg.half_hidden
        self.w_fwd = ag.parameter(glorot(rng, shape), name="encode.w_fwd")
        self.b_fwd = ag.parameter(np.zeros(shape[0]), name="encode.b_fwd")
        self.w_bwd = ag.parameter(glorot(rng, shape), name="encode.w_bwd")
        self.b_bwd = ag.parameter(np.zeros(shape[0]), name="encode.b_bwd")

    def forward(
        self,
        words: Tensor,
        modulators: Optional[tuple[Optional[Modulator], Optional[Modulator]]] = None,
        keep_masks: Optional[tuple[np.ndarray, np.ndarray]] = None,
    ) -> Tensor:
        mod_f, mod_b = modulators if modulators is not None else (None, None)
        mask_f, mask_b = keep_masks if keep_masks is not None else (None, None)
        wf, bf = _resolve(self.w_fwd, self.b_fwd, mod_f)
        wb, bb = _resolve(self.w_bwd, self.b_bwd, mod_b)
        fwd = ag.lstm_sequence(wf, bf, words, self.hidden, keep_mask=mask_f)
        rev = ag.lstm_sequence(
            wb, bb, ag.flip_rows(words), self.hidden, keep_mask=mask_b
        )
        return ag.concat_cols(fwd, ag.flip_rows(rev))

    def parameters(self) -> dict[str, Tensor]:
        return {
            "encode.w_fwd": self.w_fwd,
            "encode.b_fwd": self.b_fwd,
            "encode.w_bwd": self.w_bwd,
            "encode.b_bwd": self.b_bwd,
        }


class AttentionLayer:
    """Scores timesteps through a tanh projection and pools their encodings."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        shape = cfg.site_shape("attend")
        self.w = ag.parameter(glorot(rng, shape), name="attend.w")
        self.b = ag.parameter(np.zeros(shape[0]), name="attend.b")
        self.v = ag.parameter(glorot(rng, (shape[0], 1))[:, 0], name="attend.v")

    def forward(
        self,
        encodings: Tensor,
        mask: Optional[np.ndarray] = None,
        modulator: Optional[Modulator] = None,
        keep_mask: Optional[np.ndarray] = None,
    ) -> tuple[Tensor, Tensor]:
        w, b = _resolve(self.w, self.b, modulator)
        inputs = encodings
        if keep_mask is not None:
            inputs = ag.mul(encodings, ag.constant(keep_mask))
        scores = ag.matmul(
            ag.tanh(ag.add_rowvec(ag.matmul(inputs, ag.transpose(w)), b)), self.v
        )
        weights = ag.softmax(scores, mask=mask)
        pooled = ag.matmul(ag.transpose(encodings), weights)
        return pooled, weights

    def parameters(self) -> dict[str, Tensor]:
        return {"attend.w": self.w, "attend.b": self.b, "attend.v": self.v}


class ClassifierLayer:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        shape = cfg.site_shape("classify")
        self.w = ag.parameter(glorot(rng, shape), name="classify.w")
        self.b = ag.parameter(np.zeros(shape[0]), name="classify.b")

    def forward(
        self,
        pooled: Tensor,
        modulator: Optional[Modulator] = None,
        keep_mask: Optional[np.ndarray] = None,
    ) -> Tensor:
        if keep_mask is not None:
            pooled = ag.mul(pooled, ag.constant(keep_mask))
        w, b = _resolve(self.w, self.b, modulator)
        return ag.add(ag.matmul(w, pooled), b)

    def parameters(self) -> dict[str, Tensor]:
        return {"classify.w": self.w, "classify.b": self.b}


def predicted_class(logits: np.ndarray) -> int:
    """Argmax with the lowest index winning ties."""
    return int(np.argmax(logits))


class SentimentModel:
    """The full classifier, optionally carrying an attribute module."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        from .injection import AttributeModule

        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.embedding = EmbeddingLayer(cfg, rng)
        self.encoder = BiLstmEncoder(cfg, rng)
        self.attention = AttentionLayer(cfg, rng)
        self.classifier = ClassifierLayer(cfg, rng)
        self.attributes = (
            AttributeModule(cfg, rng) if cfg.representation != "none" else None
        )

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        params.update(self.embedding.parameters())
        params.update(self.encoder.parameters())
        params.update(self.attention.parameters())
        params.update(self.classifier.parameters())
        if self.attributes is not None:
            params.update(self.attributes.parameters())
        return params

    def constrained_matrices(self) -> dict[str, Tensor]:
        """Weight matrices subject to the row-wise norm limit.

        Biases and the word/user/product lookup tables are exempt.
        """
        mats = {
            "embed.w": self.embedding.w,
            "encode.w_fwd": self.encoder.w_fwd,
            "encode.w_bwd": self.encoder.w_bwd,
            "attend.w": self.attention.w,
            "classify.w": self.classifier.w,
        }
        if self.attributes is not None:
            mats.update(self.attributes.generator_matrices())
        return mats

    def _dropout_masks(self, n: int, rate: float, rng: np.random.Generator):
        cfg = self.cfg

        def keep(shape):
            return (rng.random(shape) >= rate) / (1.0 - rate)

        return {
            "embed": keep((n, cfg.embed_dim)),
            "encode": (
                keep((n, cfg.word_dim + cfg.half_hidden)),
                keep((n, cfg.word_dim + cfg.half_hidden)),
            ),
            "attend": keep((n, cfg.hidden_dim)),
            "classify": keep((cfg.hidden_dim,)),
        }

    def forward(
        self,
        token_ids,
        user: int = 0,
        product: int = 0,
        train: bool = False,
        dropout_rate: float = 0.0,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """Logits for one document; attribute ids index the lookup tables."""
        ids = np.asarray(token_ids, dtype=np.intp)
        mods = (
            self.attributes.modulators(user, product)
            if self.attributes is not None
            else {}
        )
        masks = None
        if train and dropout_rate > 0.0:
            if rng is None:
                raise ag.InvalidInputError("dropout requires a random generator")
            masks = self._dropout_masks(ids.size, dropout_rate, rng)
        words = self.embedding.forward(
            ids,
            modulator=mods.get("embed"),
            keep_mask=masks["embed"] if masks else None,
        )
        encodings = self.encoder.forward(
            words,
            modulators=mods.get("encode"),
            keep_masks=masks["encode"] if masks else None,
        )
        pooled, _ = self.attention.forward(
            encodings,
            modulator=mods.get("attend"),
            keep_mask=masks["attend"] if masks else None,
        )
        return self.classifier.forward(
            pooled,
            modulator=mods.get("classify"),
            keep_mask=masks["classify"] if masks else None,
        )

    def attend_weights(self, token_ids, user: int = 0, product: int = 0) -> np.ndarray:
        ids = np.asarray(token_ids, dtype=np.intp)
        mods = (
            self.attributes.modulators(user, product)
            if self.attributes is not None
            else {}
        )
        words = self.embedding.forward(ids, modulator=mods.get("embed"))
        encodings = self.encoder.forward(words, modulators=mods.get("encode"))
        _, weights = self.attention.forward(encodings, modulator=mods.get("attend"))
        return weights.data

    def predict(self, token_ids, user: int = 0, product: int = 0) -> int:
        return predicted_class(self.forward(token_ids, user, product).data)

    def invalidate_caches(self) -> None:
        if self.attributes is not None:
            self.attributes.bump_version()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_snapshot(self, values: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(values)
        if missing:
            raise ag.InvalidInputError(f"snapshot missing tensors: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ag.DimensionError(
                    f"snapshot tensor {name} has shape {arr.shape}, "
                    f"expected {p.data.shape}"
                )
            p.data = arr.copy()
        self.invalidate_caches()
