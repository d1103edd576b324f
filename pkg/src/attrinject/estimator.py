"""Scikit-learn estimator facade over the attribute-injected classifier.

X is a sequence of documents, each either a :class:`~attrinject.data.Review`
or a ``(tokens, user, product)`` triple; y carries the labels when the
documents do not. The estimator builds vocabularies on fit, holds out a
seeded development fraction for early stopping, and predicts in the
original label space.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .data import Corpus, DataError, Review
from .experiment import BoundCorpus, attribute_template, run_experiment
from .layers import REPRESENTATIONS, SITES
from .training import TrainConfig, evaluate


def _as_reviews(X, y) -> list[Review]:
    reviews = []
    for i, item in enumerate(X):
        if isinstance(item, Review):
            label = item.label if y is None else int(y[i])
            reviews.append(replace(item, label=label) if y is not None else item)
            continue
        try:
            tokens, user, product = item
        except (TypeError, ValueError):
            raise DataError(
                f"X[{i}] is neither a Review nor a (tokens, user, product) triple"
            )
        if y is None:
            raise DataError("y is required when X holds (tokens, user, product) triples")
        reviews.append(
            Review(
                user=str(user),
                product=str(product),
                label=int(y[i]),
                tokens=tuple(str(t) for t in tokens),
            )
        )
    if not reviews:
        raise DataError("X is empty")
    return reviews


class AttributeSentimentClassifier(BaseEstimator, ClassifierMixin):
    """Sentiment classifier conditioned on user/product attributes.

    Parameters mirror the model and training configurations; ``sites``
    accepts any subset of ("embed", "encode", "attend", "classify").
    """

    def __init__(
        self,
        representation: str = "chunk",
        sites: tuple[str, ...] = ("embed",),
        dims: int = 64,
        user_dim: int = 16,
        product_dim: int = 16,
        chunk_rows: int = 2,
        chunk_cols: int = 2,
        min_word_freq: int = 1,
        dev_fraction: float = 0.15,
        batch_size: int = 4,
        dropout_rate: float = 0.1,
        max_norm: float = 3.0,
        patience: int = 25,
        max_epochs: int = 100,
        seed: int = 0,
    ):
        self.representation = representation
        self.sites = sites
        self.dims = dims
        self.user_dim = user_dim
        self.product_dim = product_dim
        self.chunk_rows = chunk_rows
        self.chunk_cols = chunk_cols
        self.min_word_freq = min_word_freq
        self.dev_fraction = dev_fraction
        self.batch_size = batch_size
        self.dropout_rate = dropout_rate
        self.max_norm = max_norm
        self.patience = patience
        self.max_epochs = max_epochs
        self.seed = seed

    def _validate_params(self) -> None:
        if self.representation not in REPRESENTATIONS:
            raise ValueError(
                f"representation must be one of {REPRESENTATIONS}, "
                f"got {self.representation!r}"
            )
        bad = [s for s in self.sites if s not in SITES]
        if bad:
            raise ValueError(f"unknown sites {bad}; valid sites: {SITES}")
        if not 0.0 < self.dev_fraction < 0.5:
            raise ValueError("dev_fraction must be in (0, 0.5)")

    def fit(self, X, y=None):
        self._validate_params()
        reviews = _as_reviews(X, y)
        labels = sorted({rv.label for rv in reviews})
        if len(labels) < 2:
            raise ValueError("need at least two distinct labels to fit")
        self.classes_ = np.array(labels)
        index_of = {label: i for i, label in enumerate(labels)}
        normalized = [replace(rv, label=index_of[rv.label]) for rv in reviews]

        rng = np.random.default_rng(self.seed)
        order = rng.permutation(len(normalized))
        n_dev = max(1, int(len(normalized) * self.dev_fraction))
        dev = [normalized[i] for i in order[:n_dev]]
        train_part = [normalized[i] for i in order[n_dev:]]
        if not train_part:
            raise ValueError("dev_fraction leaves no training documents")

        corpus = Corpus(
            train=train_part, dev=dev, test=list(dev), num_classes=len(labels)
        )
        self.bound_ = BoundCorpus.bind(corpus, min_freq=self.min_word_freq)
        template = attribute_template(
            self.representation,
            tuple(self.sites),
            dims=self.dims,
            user_dim=self.user_dim,
            product_dim=self.product_dim,
            chunk_rows=self.chunk_rows,
            chunk_cols=self.chunk_cols,
        )
        result = run_experiment(
            self.bound_,
            template,
            TrainConfig(
                batch_size=self.batch_size,
                dropout_rate=self.dropout_rate,
                max_norm=self.max_norm,
                patience=self.patience,
                max_epochs=self.max_epochs,
                seed=self.seed,
            ),
        )
        self.model_ = result.model
        self.metrics_ = result.metrics
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "this AttributeSentimentClassifier instance is not fitted yet"
            )

    def _encode(self, item):
        if isinstance(item, Review):
            tokens, user, product = item.tokens, item.user, item.product
        else:
            tokens, user, product = item
        return (
            self.bound_.words.encode([str(t) for t in tokens]),
            self.bound_.users.id_of(str(user)),
            self.bound_.products.id_of(str(product)),
        )

    def predict(self, X):
        self._check_fitted()
        out = []
        for item in X:
            tokens, user, product = self._encode(item)
            out.append(self.classes_[self.model_.predict(tokens, user, product)])
        return np.array(out)

    def predict_proba(self, X):
        self._check_fitted()
        rows = []
        for item in X:
            tokens, user, product = self._encode(item)
            logits = self.model_.forward(tokens, user, product).data
            shifted = np.exp(logits - logits.max())
            rows.append(shifted / shifted.sum())
        return np.array(rows)

    def score(self, X, y=None):
        """Accuracy; y may be omitted when X holds labeled Reviews."""
        self._check_fitted()
        reviews = _as_reviews(X, y)
        index_of = {label: i for i, label in enumerate(self.classes_)}
        encoded = []
        for rv in reviews:
            if rv.label not in index_of:
                raise ValueError(f"label {rv.label} was not seen during fit")
            tokens, user, product = self._encode(rv)
            encoded.append((tokens, user, product, index_of[rv.label]))
        accuracy, _ = evaluate(self.model_, encoded)
        return accuracy
