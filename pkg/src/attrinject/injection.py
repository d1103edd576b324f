"""User/product representations and their injection into the classifier.

Three representations of a (user, product) pair:

* ``bias``: a learned shift added to one affine map's pre-activation.
* ``matrix``: a generated full weight matrix that replaces the site's own.
* ``chunk``: a small generated chunk, tiled up to the site's weight shape
  and squashed through a sigmoid into (0,1) gates that multiply the
  original weights elementwise.

A representation can be bound to any subset of the four sites: embed,
encode, attend, classify. The encoder gets one independent generator per
direction, each covering the whole stacked gate matrix.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .layers import ModelConfig, Modulator, glorot


class InjectionConfigError(ValueError):
    """Attribute-injection settings do not fit the model dimensions."""


class AttributeEmbeddings:
    """Lookup tables for users and products; row 0 is the unknown entity.

    Initialized wider than the word table: generator inputs are products of
    table entries and generator weights, so a tiny scale here starves the
    whole attribute path of gradient signal early in training.
    """

    INIT_SCALE = 0.1

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.user_table = ag.parameter(
            rng.uniform(-self.INIT_SCALE, self.INIT_SCALE, (cfg.num_users, cfg.user_dim)),
            name="user_table",
        )
        self.product_table = ag.parameter(
            rng.uniform(
                -self.INIT_SCALE, self.INIT_SCALE, (cfg.num_products, cfg.product_dim)
            ),
            name="product_table",
        )

    def lookup(self, user: int, product: int) -> tuple[Tensor, Tensor]:
        return ag.row(self.user_table, user), ag.row(self.product_table, product)

    def parameters(self) -> dict[str, Tensor]:
        return {"user_table": self.user_table, "product_table": self.product_table}


class BiasShiftGenerator:
    """b' - b = W_u u + W_p p for one site's pre-activation."""

    def __init__(self, site: str, dim: int, cfg: ModelConfig, rng: np.random.Generator):
        self.w_user = ag.parameter(
            glorot(rng, (dim, cfg.user_dim)), name=f"{site}.bias.w_user"
        )
        self.w_product = ag.parameter(
            glorot(rng, (dim, cfg.product_dim)), name=f"{site}.bias.w_product"
        )

    def shift(self, u: Tensor, p: Tensor) -> Tensor:
        return ag.add(ag.matmul(self.w_user, u), ag.matmul(self.w_product, p))

    def modulator(self, u: Tensor, p: Tensor) -> Modulator:
        return Modulator(shift=self.shift(u, p))

    def parameters(self) -> dict[str, Tensor]:
        return {self.w_user.name: self.w_user, self.w_product.name: self.w_product}

    def matrices(self) -> dict[str, Tensor]:
        return self.parameters()


class MatrixGenerator:
    """Generates a full replacement weight matrix from [u; p].

    The generator bias is initialized to a flattened weight-style matrix so
    an untrained model starts from a sensible affine map instead of noise.
    """

    def __init__(
        self, site: str, d1: int, d2: int, cfg: ModelConfig, rng: np.random.Generator
    ):
        self.d1, self.d2 = d1, d2
        in_dim = cfg.user_dim + cfg.product_dim
        self.w_c = ag.parameter(
            glorot(rng, (d1 * d2, in_dim)) * 0.1, name=f"{site}.matrix.w_c"
        )
        self.b_c = ag.parameter(
            glorot(rng, (d1, d2)).reshape(-1), name=f"{site}.matrix.b_c"
        )

    def full_matrix(self, u: Tensor, p: Tensor) -> Tensor:
        flat = ag.add(ag.matmul(self.w_c, ag.concat_vec(u, p)), self.b_c)
        return ag.reshape(flat, (self.d1, self.d2))

    def modulator(self, u: Tensor, p: Tensor) -> Modulator:
        return Modulator(replacement=self.full_matrix(u, p))

    def parameters(self) -> dict[str, Tensor]:
        return {self.w_c.name: self.w_c, self.b_c.name: self.b_c}

    def matrices(self) -> dict[str, Tensor]:
        return {self.w_c.name: self.w_c}


class ChunkGateGenerator:
    """Generates sigmoid gates for a site from a tiled chunk matrix.

    The chunk has shape (d1/c1, d2/c2); tiling it c1*c2 times and applying
    the sigmoid yields a (d1, d2) gate in (0,1) that multiplies the site's
    weights, shrinking the ones the (user, product) pair deems unimportant.
    """

    def __init__(
        self,
        site: str,
        d1: int,
        d2: int,
        cfg: ModelConfig,
        rng: np.random.Generator,
    ):
        c1, c2 = cfg.chunk_rows, cfg.chunk_cols
        if d1 % c1 != 0 or d2 % c2 != 0:
            raise InjectionConfigError(
                f"site {site!r} weights are {d1}x{d2} but chunk factors "
                f"({c1}, {c2}) must divide both dimensions"
            )
        self.rows, self.cols = d1 // c1, d2 // c2
        self.c1, self.c2 = c1, c2
        self.tile_mode = cfg.tile_mode
        in_dim = cfg.user_dim + cfg.product_dim
        self.w_c = ag.parameter(
            glorot(rng, (self.rows * self.cols, in_dim)), name=f"{site}.chunk.w_c"
        )
        self.b_c = ag.parameter(np.zeros(self.rows * self.cols), name=f"{site}.chunk.b_c")

    def chunk(self, u: Tensor, p: Tensor) -> Tensor:
        flat = ag.add(ag.matmul(self.w_c, ag.concat_vec(u, p)), self.b_c)
        return ag.reshape(flat, (self.rows, self.cols))

    def gate(self, u: Tensor, p: Tensor) -> Tensor:
        tiled = ag.reshape_tile(self.chunk(u, p), self.c1, self.c2, mode=self.tile_mode)
        return ag.sigmoid(tiled)

    def modulator(self, u: Tensor, p: Tensor) -> Modulator:
        return Modulator(gate=self.gate(u, p))

    def parameters(self) -> dict[str, Tensor]:
        return {self.w_c.name: self.w_c, self.b_c.name: self.b_c}

    def matrices(self) -> dict[str, Tensor]:
        return {self.w_c.name: self.w_c}


def _build_generator(site: str, tag: str, cfg: ModelConfig, rng: np.random.Generator):
    d1, d2 = cfg.site_shape(site)
    if cfg.representation == "bias":
        return BiasShiftGenerator(tag, d1, cfg, rng)
    if cfg.representation == "matrix":
        return MatrixGenerator(tag, d1, d2, cfg, rng)
    if cfg.representation == "chunk":
        return ChunkGateGenerator(tag, d1, d2, cfg, rng)
    raise InjectionConfigError(f"no generator for representation {cfg.representation!r}")


class AttributeModule:
    """Embeddings plus one generator per injected site.

    Modulators depend only on (user, product), never on the document, so
    they are cached per pair and reused across timesteps and documents
    until ``bump_version`` invalidates them (call it after every parameter
    update).
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embeddings = AttributeEmbeddings(cfg, rng)
        self.generators: dict[str, object] = {}
        for site in cfg.sites:
            if site == "encode":
                self.generators["encode"] = (
                    _build_generator("encode", "encode.fwd", cfg, rng),
                    _build_generator("encode", "encode.bwd", cfg, rng),
                )
            else:
                self.generators[site] = _build_generator(site, site, cfg, rng)
        self.version = 0
        self._cache: dict[tuple[int, int], dict[str, object]] = {}
        self.cache_enabled = True

    def bump_version(self) -> None:
        self.version += 1
        self._cache.clear()

    def modulators(self, user: int, product: int) -> dict[str, object]:
        key = (user, product)
        if self.cache_enabled and key in self._cache:
            return self._cache[key]
        u, p = self.embeddings.lookup(user, product)
        mods: dict[str, object] = {}
        for site, gen in self.generators.items():
            if site == "encode":
                fwd, bwd = gen
                mods["encode"] = (fwd.modulator(u, p), bwd.modulator(u, p))
            else:
                mods[site] = gen.modulator(u, p)
        if self.cache_enabled:
            self._cache[key] = mods
        return mods

    def parameters(self) -> dict[str, Tensor]:
        params = dict(self.embeddings.parameters())
        for gen in self.generators.values():
            parts = gen if isinstance(gen, tuple) else (gen,)
            for part in parts:
                params.update(part.parameters())
        return params

    def generator_matrices(self) -> dict[str, Tensor]:
        mats: dict[str, Tensor] = {}
        for gen in self.generators.values():
            parts = gen if isinstance(gen, tuple) else (gen,)
            for part in parts:
                mats.update(part.matrices())
        return mats


def count_parameters(cfg: ModelConfig) -> dict[str, object]:
    """Exact per-component parameter counts for a configuration.

    The generator count for a gated site is smaller than the matrix
    generator for the same site by exactly chunk_rows*chunk_cols, reported
    as ``matrix_to_chunk_ratio``.
    """
    h = cfg.half_hidden
    counts: dict[str, int] = {
        "word_table": cfg.vocab_size * cfg.embed_dim,
        "embed": cfg.word_dim * cfg.embed_dim + cfg.word_dim,
        "encode": 2 * (4 * h * (cfg.word_dim + h) + 4 * h),
        "attend": cfg.attention_dim * cfg.hidden_dim + 2 * cfg.attention_dim,
        "classify": cfg.num_classes * cfg.hidden_dim + cfg.num_classes,
    }
    base_total = sum(counts.values())

    attribute: dict[str, int] = {}
    if cfg.representation != "none":
        attribute["user_table"] = cfg.num_users * cfg.user_dim
        attribute["product_table"] = cfg.num_products * cfg.product_dim
        attr_in = cfg.user_dim + cfg.product_dim
        for site in cfg.sites:
            d1, d2 = cfg.site_shape(site)
            per_direction = 1 if site != "encode" else 2
            if cfg.representation == "bias":
                gen = attr_in * d1
            elif cfg.representation == "matrix":
                gen = (attr_in + 1) * d1 * d2
            else:
                gen = (attr_in + 1) * (d1 // cfg.chunk_rows) * (d2 // cfg.chunk_cols)
            attribute[f"{site}.generator"] = per_direction * gen

    table = {
        "base": counts,
        "attribute": attribute,
        "base_total": base_total,
        "attribute_total": sum(attribute.values()),
        "total": base_total + sum(attribute.values()),
        "matrix_to_chunk_ratio": cfg.chunk_rows * cfg.chunk_cols,
    }
    return table
