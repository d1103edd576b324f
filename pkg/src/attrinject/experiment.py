"""Glue between corpora and models: vocabulary binding, run setup, and the
single-configuration experiment used by the harness and the sweeps."""

from __future__ import annotations

from dataclasses import dataclass, replace

from .data import Corpus, EntityVocab, Review, WordVocab
from .layers import ModelConfig, SentimentModel
from .training import RunMetrics, TrainConfig, evaluate, train


@dataclass
class BoundCorpus:
    """A corpus plus the vocabularies every model run over it shares."""

    corpus: Corpus
    words: WordVocab
    users: EntityVocab
    products: EntityVocab

    @classmethod
    def bind(cls, corpus: Corpus, min_freq: int = 2) -> "BoundCorpus":
        return cls(
            corpus=corpus,
            words=WordVocab(corpus.train, min_freq=min_freq),
            users=EntityVocab(rv.user for rv in corpus.train),
            products=EntityVocab(rv.product for rv in corpus.train),
        )

    def encode(self, rv: Review):
        return (
            self.words.encode(rv.tokens),
            self.users.id_of(rv.user),
            self.products.id_of(rv.product),
            rv.label,
        )

    def encoded_splits(self) -> dict[str, list]:
        return {
            name: [self.encode(rv) for rv in reviews]
            for name, reviews in self.corpus.splits().items()
        }

    def model_config(self, template: ModelConfig) -> ModelConfig:
        return replace(
            template,
            vocab_size=len(self.words),
            num_classes=self.corpus.num_classes,
            num_users=len(self.users),
            num_products=len(self.products),
        )


@dataclass
class RunResult:
    label: str
    seed: int
    metrics: RunMetrics
    test_accuracy: float
    test_rmse: float
    model: SentimentModel

    @property
    def dev_accuracy(self) -> float:
        return self.metrics.best_dev_accuracy


def run_experiment(
    bound: BoundCorpus,
    template: ModelConfig,
    train_cfg: TrainConfig,
    label: str = "",
    log_path=None,
) -> RunResult:
    """Train one configuration on a bound corpus and score its test split."""
    cfg = bound.model_config(template)
    model = SentimentModel(cfg, seed=train_cfg.seed)
    splits = bound.encoded_splits()
    metrics = train(
        model, splits["train"], splits["dev"], train_cfg, log_path=log_path
    )
    test_acc, test_rmse = evaluate(model, splits["test"])
    return RunResult(
        label=label or f"{cfg.representation}:{'+'.join(cfg.sites) or 'base'}",
        seed=train_cfg.seed,
        metrics=metrics,
        test_accuracy=test_acc,
        test_rmse=test_rmse,
        model=model,
    )


def attribute_template(
    representation: str,
    sites: tuple[str, ...],
    dims: int = 64,
    user_dim: int = 16,
    product_dim: int = 16,
    chunk_rows: int = 2,
    chunk_cols: int = 2,
) -> ModelConfig:
    """A desk-scale model template; corpus-dependent sizes filled in later."""
    return ModelConfig(
        vocab_size=2,
        num_classes=2,
        embed_dim=dims,
        word_dim=dims,
        hidden_dim=dims,
        attn_dim=dims,
        num_users=0 if representation == "none" else 2,
        num_products=0 if representation == "none" else 2,
        user_dim=user_dim,
        product_dim=product_dim,
        representation=representation,
        sites=sites,
        chunk_rows=chunk_rows,
        chunk_cols=chunk_cols,
    )
