"""Cross-entropy training with Adadelta, row-norm constraints, dropout,
and early stopping on development accuracy.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import checksum_arrays
from .layers import SentimentModel, predicted_class


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    dropout_rate: float = 0.1
    max_norm: float = 3.0
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-6
    patience: int = 5
    max_epochs: int = 50
    seed: int = 0
    unknown_attr_rate: float = 0.01   # chance of training an example as the unknown entity

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ag.InvalidInputError(
                f"dropout_rate must be in [0, 1), got {self.dropout_rate}"
            )
        if self.max_norm <= 0:
            raise ag.InvalidInputError(f"max_norm must be positive, got {self.max_norm}")
        if self.patience < 1:
            raise ag.InvalidInputError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ag.InvalidInputError("batch_size and max_epochs must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_accuracy: float
    dev_rmse: float
    seconds: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "epoch": self.epoch,
                "loss": round(self.train_loss, 6),
                "dev_acc": round(self.dev_accuracy, 6),
                "dev_rmse": round(self.dev_rmse, 6),
                "seconds": round(self.seconds, 3),
            }
        )


@dataclass
class RunMetrics:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_dev_accuracy: float = 0.0
    best_dev_rmse: float = float("inf")
    best_checksum: str = ""
    stopped_early: bool = False

    @property
    def final_train_loss(self) -> float:
        return self.epochs[-1].train_loss if self.epochs else float("nan")


def cross_entropy(logits: Tensor, gold: int) -> Tensor:
    """Negative log softmax probability of the gold class."""
    n = logits.data.size
    if not 0 <= gold < n:
        raise ag.InvalidInputError(f"gold class {gold} outside [0, {n})")
    return ag.mul(ag.pick(ag.log_softmax(logits), gold), -1.0)


class Adadelta:
    """Per-coordinate update from decayed squared-gradient and squared-step
    accumulators; no learning rate."""

    def __init__(self, params: dict[str, Tensor], rho: float = 0.95, eps: float = 1e-6):
        self.params = params
        self.rho = rho
        self.eps = eps
        self.sq_grad = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.sq_step = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._scratch = {k: np.empty_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        rho, eps = self.rho, self.eps
        for name, p in self.params.items():
            eg = self.sq_grad[name]
            ed = self.sq_step[name]
            eg *= rho
            if p.grad is None:
                ed *= rho
                continue
            g = p.grad
            buf = self._scratch[name]
            np.multiply(g, g, out=buf)
            buf *= 1.0 - rho
            eg += buf
            np.add(eg, eps, out=buf)
            # Step scale reads the squared-step accumulator from the
            # previous update; it decays only after the step is taken.
            delta = ed + eps
            delta /= buf
            np.sqrt(delta, out=delta)
            delta *= g
            p.data -= delta
            ed *= rho
            delta *= delta
            delta *= 1.0 - rho
            ed += delta


def max_norm_constrain(matrices: Sequence[Tensor] | dict[str, Tensor], limit: float) -> None:
    """Rescale any weight row whose l2 norm exceeds the limit down to it."""
    if limit <= 0:
        raise ag.InvalidInputError(f"norm limit must be positive, got {limit}")
    values = matrices.values() if isinstance(matrices, dict) else matrices
    for m in values:
        data = m.data
        norms = np.linalg.norm(data, axis=-1, keepdims=True)
        over = norms > limit
        if over.any():
            scale = np.where(over, limit / np.maximum(norms, 1e-30), 1.0)
            data *= scale


def dropout_keep_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """Inverted-dropout multiplier: zero with probability rate, else 1/(1-rate)."""
    return (rng.random(shape) >= rate) / (1.0 - rate)


def evaluate(model: SentimentModel, reviews, encoder=None) -> tuple[float, float]:
    """Accuracy and RMSE over integer class indices; dropout is never applied."""
    if not reviews:
        raise ag.InvalidInputError("cannot evaluate an empty split")
    correct = 0
    sq_err = 0.0
    for rv in reviews:
        tokens, user, product, label = _example(rv, encoder)
        pred = predicted_class(model.forward(tokens, user, product).data)
        correct += pred == label
        sq_err += (pred - label) ** 2
    n = len(reviews)
    return correct / n, float(np.sqrt(sq_err / n))


def _example(rv, encoder):
    """Records are (token_ids, user_id, product_id, label) tuples, or
    anything an explicit encoder maps to one."""
    if encoder is not None:
        return encoder(rv)
    return rv


def _batches(order: np.ndarray, lengths: np.ndarray, size: int, rng) -> list[np.ndarray]:
    """Length-bucketed batches in shuffled order."""
    by_length = order[np.argsort(lengths[order], kind="stable")]
    chunks = [by_length[i:i + size] for i in range(0, len(by_length), size)]
    rng.shuffle(chunks)
    return chunks


def train(
    model: SentimentModel,
    train_set: Sequence,
    dev_set: Sequence,
    cfg: TrainConfig,
    encoder=None,
    log_path=None,
    quiet: bool = True,
) -> RunMetrics:
    """Mini-batch training; returns metrics with the best-epoch parameters
    restored into the model.

    ``train_set`` and ``dev_set`` hold (token_ids, user_id, product_id,
    label) tuples, or arbitrary records that ``encoder`` maps to such
    tuples.
    """
    if not train_set or not dev_set:
        raise ag.InvalidInputError("train and dev splits must be non-empty")

    rng = np.random.default_rng(cfg.seed)
    examples = [_example(rv, encoder) for rv in train_set]
    lengths = np.array([len(e[0]) for e in examples])
    params = model.parameters()
    opt = Adadelta(params, rho=cfg.adadelta_rho, eps=cfg.adadelta_eps)
    constrained = model.constrained_matrices()
    has_attrs = model.attributes is not None

    metrics = RunMetrics()
    best_snapshot = None
    since_best = 0
    log_file = open(log_path, "a") if log_path else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(len(examples))
            total_loss = 0.0
            for batch in _batches(order, lengths, cfg.batch_size, rng):
                ag.zero_grads(params)
                with ag.Tape() as tape:
                    loss = None
                    for idx in batch:
                        tokens, user, product, label = examples[idx]
                        if has_attrs and cfg.unknown_attr_rate > 0.0:
                            if rng.random() < cfg.unknown_attr_rate:
                                user = 0
                            if rng.random() < cfg.unknown_attr_rate:
                                product = 0
                        logits = model.forward(
                            tokens,
                            user,
                            product,
                            train=True,
                            dropout_rate=cfg.dropout_rate,
                            rng=rng,
                        )
                        ce = cross_entropy(logits, label)
                        loss = ce if loss is None else ag.add(loss, ce)
                    loss = ag.mul(loss, 1.0 / len(batch))
                tape.backward(loss)
                total_loss += float(loss.data) * len(batch)
                opt.step()
                max_norm_constrain(constrained, cfg.max_norm)
                model.invalidate_caches()

            dev_acc, dev_rmse = evaluate(model, dev_set, encoder=encoder)
            record = EpochRecord(
                epoch=epoch,
                train_loss=total_loss / len(examples),
                dev_accuracy=dev_acc,
                dev_rmse=dev_rmse,
                seconds=time.perf_counter() - t0,
            )
            metrics.epochs.append(record)
            if log_file:
                log_file.write(record.to_json() + "\n")
                log_file.flush()
            if not quiet:
                print(record.to_json())

            if dev_acc > metrics.best_dev_accuracy or metrics.best_epoch < 0:
                metrics.best_epoch = epoch
                metrics.best_dev_accuracy = dev_acc
                metrics.best_dev_rmse = dev_rmse
                best_snapshot = model.snapshot()
                metrics.best_checksum = checksum_arrays(best_snapshot)
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    metrics.stopped_early = True
                    break
    finally:
        if log_file:
            log_file.close()

    if best_snapshot is not None:
        model.load_snapshot(best_snapshot)
    return metrics
