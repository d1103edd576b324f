"""Finite-difference verification of every parameter gradient.

Builds tiny models (dimensions <= 8, chunk factors 2), computes analytic
gradients of a summed cross-entropy loss over a couple of fixed examples,
and compares each coordinate against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .layers import SITES, ModelConfig, SentimentModel
from .training import cross_entropy

TINY_DIMS = dict(
    vocab_size=12,
    num_classes=4,
    embed_dim=6,
    word_dim=6,
    hidden_dim=8,
    attn_dim=8,
    num_users=3,
    num_products=3,
    user_dim=4,
    product_dim=4,
    chunk_rows=2,
    chunk_cols=2,
)

# Fixed probe documents: (token ids, user, product, gold class).
_EXAMPLES = (
    ([1, 5, 9, 3], 1, 2, 0),
    ([7, 2, 2, 10, 4], 2, 1, 3),
)


@dataclass
class GroupReport:
    name: str
    max_relative_error: float
    checked: int

    @property
    def ok(self) -> bool:
        return self.max_relative_error < 1e-4


@dataclass
class CheckReport:
    label: str
    groups: list[GroupReport]

    @property
    def max_relative_error(self) -> float:
        return max((g.max_relative_error for g in self.groups), default=0.0)

    @property
    def ok(self) -> bool:
        return all(g.ok for g in self.groups)


def tiny_config(representation: str = "none", sites: tuple[str, ...] = ()) -> ModelConfig:
    extra = {} if representation != "none" else {"num_users": 0, "num_products": 0}
    dims = dict(TINY_DIMS, **extra)
    return ModelConfig(representation=representation, sites=sites, **dims)


def _loss_value(model: SentimentModel) -> float:
    model.invalidate_caches()
    total = 0.0
    for tokens, user, product, gold in _EXAMPLES:
        logits = model.forward(np.asarray(tokens), user, product)
        m = logits.data.max()
        total += m + np.log(np.exp(logits.data - m).sum()) - logits.data[gold]
    return float(total)


def _analytic_gradients(model: SentimentModel) -> dict[str, np.ndarray]:
    params = model.parameters()
    ag.zero_grads(params)
    model.invalidate_caches()
    with ag.Tape() as tape:
        loss = None
        for tokens, user, product, gold in _EXAMPLES:
            ce = cross_entropy(model.forward(np.asarray(tokens), user, product), gold)
            loss = ce if loss is None else ag.add(loss, ce)
    tape.backward(loss)
    return {name: p.grad_or_zeros().copy() for name, p in params.items()}


def relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-8) -> float:
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    mask = diff >= atol
    if not mask.any():
        return 0.0
    return float((diff[mask] / denom[mask]).max())


def scramble(model: SentimentModel, seed: int = 0, scale: float = 0.3) -> None:
    """Move all parameters to a generic position so no gradient path is
    accidentally near a stationary point during checking."""
    rng = np.random.default_rng(seed)
    for p in model.parameters().values():
        p.data += rng.normal(scale=scale, size=p.data.shape)
    model.invalidate_caches()


def check_model(model: SentimentModel, label: str, h: float = 1e-5) -> CheckReport:
    analytic = _analytic_gradients(model)
    groups = []
    for name, p in model.parameters().items():
        flat = p.data.ravel()
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = _loss_value(model)
            flat[i] = orig - h
            down = _loss_value(model)
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * h)
        model.invalidate_caches()
        err = relative_error(analytic[name].ravel(), numeric)
        groups.append(GroupReport(name=name, max_relative_error=err, checked=flat.size))
    return CheckReport(label=label, groups=groups)


def standard_configurations() -> list[tuple[str, str, tuple[str, ...]]]:
    """Base model, the nine single injections, and the six gated pairs."""
    configs: list[tuple[str, str, tuple[str, ...]]] = [("base", "none", ())]
    configs.append(("bias-attend", "bias", ("attend",)))
    for representation in ("matrix", "chunk"):
        for site in SITES:
            configs.append((f"{representation}-{site}", representation, (site,)))
    for i, a in enumerate(SITES):
        for b in SITES[i + 1:]:
            configs.append((f"chunk-{a}+{b}", "chunk", (a, b)))
    return configs


def run_standard_checks(seed: int = 0) -> list[CheckReport]:
    reports = []
    for label, representation, sites in standard_configurations():
        model = SentimentModel(tiny_config(representation, sites), seed=seed)
        scramble(model, seed=seed + 1)
        reports.append(check_model(model, label))
    return reports
