"""Transfer of frozen attribute encodings to two downstream tasks:
product-category classification (accuracy) and headline generation
measured by teacher-forced perplexity.

The encodings are the user/product embedding tables of a trained
sentiment model. They are inputs here, never parameters: both task models
read them through constants, and their checksums are asserted unchanged
by callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import checksum_arrays, load_checkpoint
from .data import DataError, EntityVocab, TransferCorpus, TransferRecord
from .layers import glorot, predicted_class
from .training import Adadelta, cross_entropy, max_norm_constrain


@dataclass
class FrozenEncodings:
    """Attribute tables copied out of a checkpoint, or drawn at random."""

    user_table: np.ndarray
    product_table: np.ndarray
    users: EntityVocab
    products: EntityVocab
    provenance: str

    def checksum(self) -> str:
        return checksum_arrays(
            {"user_table": self.user_table, "product_table": self.product_table}
        )

    def pair_vector(self, user: str, product: str) -> np.ndarray:
        u = self.user_table[self.users.id_of(user)]
        p = self.product_table[self.products.id_of(product)]
        return np.concatenate([u, p])

    @classmethod
    def from_checkpoint(cls, path) -> "FrozenEncodings":
        tensors, config = load_checkpoint(path)
        if "user_table" not in tensors or "product_table" not in tensors:
            raise DataError(
                f"{path}: checkpoint has no attribute tables "
                "(was the model trained without attribute injection?)"
            )
        return cls(
            user_table=tensors["user_table"],
            product_table=tensors["product_table"],
            users=EntityVocab.from_names(config.get("user_names", [])),
            products=EntityVocab.from_names(config.get("product_names", [])),
            provenance=f"checkpoint:{path}",
        )

    @classmethod
    def from_model(cls, model, users: EntityVocab, products: EntityVocab, tag: str):
        emb = model.attributes.embeddings
        return cls(
            user_table=emb.user_table.data.copy(),
            product_table=emb.product_table.data.copy(),
            users=users,
            products=products,
            provenance=tag,
        )

    @classmethod
    def random(cls, users: EntityVocab, products: EntityVocab,
               user_dim: int, product_dim: int, seed: int) -> "FrozenEncodings":
        # Matches the missing-pretrained-row initialization convention.
        rng = np.random.default_rng(seed)
        return cls(
            user_table=rng.uniform(-0.01, 0.01, (len(users), user_dim)),
            product_table=rng.uniform(-0.01, 0.01, (len(products), product_dim)),
            users=users,
            products=products,
            provenance=f"random(seed={seed})",
        )


@dataclass
class CategoryResult:
    mean_accuracy: float
    interval: float              # sample standard deviation over the runs
    per_seed: list[float] = field(default_factory=list)
    provenance: str = ""


def majority_baseline(corpus: TransferCorpus) -> float:
    """Accuracy of always predicting the most common training category."""
    counts = np.bincount(
        [r.category for r in corpus.train], minlength=corpus.num_categories
    )
    majority = int(np.argmax(counts))
    test = corpus.test
    return sum(r.category == majority for r in test) / len(test)


def _category_accuracy(w, b, features, records) -> float:
    correct = 0
    for rec in records:
        logits = w.data @ features(rec) + b.data
        correct += predicted_class(logits) == rec.category
    return correct / len(records)


def category_classify_train(
    encodings: FrozenEncodings,
    corpus: TransferCorpus,
    seeds: Sequence[int] = tuple(range(10)),
    epochs: int = 60,
    batch_size: int = 8,
    product_only: bool = False,
) -> CategoryResult:
    """Logistic classifier on [u; p]; mean accuracy and spread over seeds.

    ``product_only`` is an ablation that reads the product encoding alone
    (the category is a product property, after all).
    """
    categories = {r.category for r in corpus.train}
    if len(categories) < 2:
        raise ag.InvalidInputError(
            "category transfer needs at least two categories in the train split"
        )

    def features(rec: TransferRecord) -> np.ndarray:
        if product_only:
            return encodings.product_table[encodings.products.id_of(rec.product)]
        return encodings.pair_vector(rec.user, rec.product)

    dim = (
        encodings.product_table.shape[1]
        if product_only
        else encodings.user_table.shape[1] + encodings.product_table.shape[1]
    )
    accuracies = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        w = ag.parameter(glorot(rng, (corpus.num_categories, dim)), name="category.w")
        b = ag.parameter(np.zeros(corpus.num_categories), name="category.b")
        params = {"category.w": w, "category.b": b}
        opt = Adadelta(params)
        inputs = [
            (ag.constant(features(r)), r.category) for r in corpus.train
        ]
        best_dev, best_snap, since = -1.0, None, 0
        for _ in range(epochs):
            order = rng.permutation(len(inputs))
            for start in range(0, len(order), batch_size):
                ag.zero_grads(params)
                with ag.Tape() as tape:
                    loss = None
                    for idx in order[start:start + batch_size]:
                        vec, gold = inputs[idx]
                        ce = cross_entropy(ag.add(ag.matmul(w, vec), b), gold)
                        loss = ce if loss is None else ag.add(loss, ce)
                tape.backward(loss)
                opt.step()
                max_norm_constrain([w], 3.0)
            dev_acc = _category_accuracy(w, b, features, corpus.dev)
            if dev_acc > best_dev:
                best_dev, since = dev_acc, 0
                best_snap = (w.data.copy(), b.data.copy())
            else:
                since += 1
                if since >= 10:
                    break
        w.data, b.data = best_snap
        accuracies.append(_category_accuracy(w, b, features, corpus.test))
    arr = np.array(accuracies)
    return CategoryResult(
        mean_accuracy=float(arr.mean()),
        interval=float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
        per_seed=accuracies,
        provenance=encodings.provenance,
    )


class HeadlineDecoder:
    """Single-layer recurrent decoder whose initial state is an affine map
    of the frozen [u; p] vector; scores next tokens with a linear layer."""

    def __init__(self, vocab_size: int, attr_dim: int, hidden: int = 300,
                 embed_dim: int = 64, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.hidden = hidden
        self.vocab_size = vocab_size
        self.table = ag.parameter(
            rng.uniform(-0.5, 0.5, (vocab_size, embed_dim)), name="decoder.table"
        )
        self.w_init = ag.parameter(glorot(rng, (hidden, attr_dim)), name="decoder.w_init")
        self.b_init = ag.parameter(np.zeros(hidden), name="decoder.b_init")
        self.w_cell = ag.parameter(
            glorot(rng, (4 * hidden, embed_dim + hidden)), name="decoder.w_cell"
        )
        self.b_cell = ag.parameter(np.zeros(4 * hidden), name="decoder.b_cell")
        self.w_out = ag.parameter(glorot(rng, (vocab_size, hidden)), name="decoder.w_out")
        self.b_out = ag.parameter(np.zeros(vocab_size), name="decoder.b_out")

    def parameters(self) -> dict[str, Tensor]:
        return {
            t.name: t
            for t in (self.table, self.w_init, self.b_init,
                      self.w_cell, self.b_cell, self.w_out, self.b_out)
        }

    def zero_output_layer(self) -> None:
        """Force the next-token distribution to exactly uniform."""
        self.w_out.data[:] = 0.0
        self.b_out.data[:] = 0.0

    def sequence_nll(self, attr_vec: np.ndarray, token_ids: Sequence[int]) -> tuple[Tensor, int]:
        """Teacher-forced negative log-likelihood of ids[1:] given ids[:-1].

        The first id is the begin marker; the initial hidden state is the
        affine projection of the attribute vector, injected by biasing the
        first recurrence step.
        """
        ids = list(token_ids)
        if len(ids) < 2:
            raise ag.InvalidInputError("a headline needs a marker plus one token")
        h0 = ag.add(ag.matmul(self.w_init, ag.constant(attr_vec)), self.b_init)
        inputs = ag.take_rows(self.table, ids[:-1])
        states = ag.lstm_sequence(
            self.w_cell, self.b_cell, inputs, self.hidden, h0=h0
        )
        logits = ag.add_rowvec(ag.matmul(states, ag.transpose(self.w_out)), self.b_out)
        log_probs = ag.rows_log_softmax(logits)
        picked = ag.pick_per_row(log_probs, ids[1:])
        nll = ag.mul(ag.sum_all(picked), -1.0)
        return nll, len(ids) - 1


def perplexity(decoder: HeadlineDecoder, encodings: FrozenEncodings,
               records: Sequence[TransferRecord]) -> float:
    """exp(total NLL / total predicted tokens) under teacher forcing."""
    if not records:
        raise ag.InvalidInputError("cannot evaluate perplexity on an empty split")
    total_nll = 0.0
    total_tokens = 0
    for rec in records:
        vec = encodings.pair_vector(rec.user, rec.product)
        nll, count = decoder.sequence_nll(vec, rec.headline)
        total_nll += float(nll.data)
        total_tokens += count
    return math.exp(total_nll / total_tokens)


def headline_perplexity(
    encodings: FrozenEncodings,
    corpus: TransferCorpus,
    hidden: int = 300,
    epochs: int = 20,
    batch_size: int = 8,
    seed: int = 0,
) -> float:
    """Train the decoder on the train split, report test perplexity."""
    attr_dim = encodings.user_table.shape[1] + encodings.product_table.shape[1]
    decoder = HeadlineDecoder(
        corpus.headline_vocab_size, attr_dim, hidden=hidden, seed=seed
    )
    params = decoder.parameters()
    opt = Adadelta(params)
    rng = np.random.default_rng(seed)
    examples = [
        (encodings.pair_vector(r.user, r.product), list(r.headline))
        for r in corpus.train
    ]
    best = math.inf
    since = 0
    for _ in range(epochs):
        order = rng.permutation(len(examples))
        for start in range(0, len(order), batch_size):
            ag.zero_grads(params)
            with ag.Tape() as tape:
                loss = None
                for idx in order[start:start + batch_size]:
                    vec, ids = examples[idx]
                    nll, _ = decoder.sequence_nll(vec, ids)
                    loss = nll if loss is None else ag.add(loss, nll)
            tape.backward(loss)
            opt.step()
            max_norm_constrain([decoder.w_cell, decoder.w_out, decoder.w_init], 3.0)
        dev_ppl = perplexity(decoder, encodings, corpus.dev)
        if dev_ppl < best - 1e-9:
            best, since = dev_ppl, 0
        else:
            since += 1
            if since >= 5:
                break
    return perplexity(decoder, encodings, corpus.test)
