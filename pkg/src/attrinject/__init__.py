"""Attribute-injected sentiment classification.

A BiLSTM-attention classifier whose affine maps can be biased, replaced,
or gated per (user, product) pair, with a training protocol, transfer
tasks over the learned attribute encodings, and a CLI harness, all on a
small reverse-mode tensor core.
"""

__version__ = "0.1.0"

from .autograd import DimensionError, InvalidInputError, Tape, Tensor
from .data import Corpus, InteractionSpec, Review, TransferSpec
from .estimator import AttributeSentimentClassifier
from .injection import count_parameters
from .layers import ModelConfig, SentimentModel
from .training import RunMetrics, TrainConfig, evaluate, train

__all__ = [
    "AttributeSentimentClassifier",
    "Corpus",
    "DimensionError",
    "InteractionSpec",
    "InvalidInputError",
    "ModelConfig",
    "Review",
    "RunMetrics",
    "SentimentModel",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TransferSpec",
    "count_parameters",
    "evaluate",
    "train",
]
