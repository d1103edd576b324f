"""Corpus ingestion, vocabularies, splits, and synthetic fixture corpora.

On-disk review format: UTF-8, one review per line, four tab-separated
fields ``user \\t product \\t label \\t text``. Labels are 1-based on disk
(star ratings) and 0-based in memory; sentences inside the text are
delimited by the literal token ``<sssss>``, which the non-hierarchical
model treats as an ordinary word.

Transfer sidecar format: ``user \\t product \\t category \\t ids`` where
``category`` is a 0-based integer and ``ids`` are space-separated subword
ids already carrying begin/end markers.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SENTENCE_SEP = "<sssss>"
PAD_ID = 0
UNKNOWN_ID = 1
UNKNOWN_ENTITY = 0


class DataError(ValueError):
    """A corpus file or record is malformed."""


@dataclass(frozen=True)
class Review:
    user: str
    product: str
    label: int                    # 0-based class index
    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.tokens:
            raise DataError("a review needs at least one token")
        if self.label < 0:
            raise DataError(f"label must be 0-based and nonnegative, got {self.label}")


@dataclass
class Corpus:
    train: list[Review]
    dev: list[Review]
    test: list[Review]
    num_classes: int

    def splits(self) -> dict[str, list[Review]]:
        return {"train": self.train, "dev": self.dev, "test": self.test}

    def all_reviews(self) -> list[Review]:
        return self.train + self.dev + self.test


class EntityVocab:
    """Dense, stable ids for users or products; id 0 is the unknown entity."""

    def __init__(self, names: Iterable[str]):
        self.names = ["<unk>"] + sorted(set(names))
        self._ids = {name: i for i, name in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        return self._ids.get(name, UNKNOWN_ENTITY)

    @classmethod
    def from_names(cls, names: list[str]) -> "EntityVocab":
        vocab = cls.__new__(cls)
        vocab.names = list(names)
        vocab._ids = {name: i for i, name in enumerate(names)}
        return vocab


class WordVocab:
    """Token ids from train-split frequencies; 0 is padding, 1 is unknown."""

    def __init__(self, reviews: Sequence[Review], min_freq: int = 2):
        counts = Counter(tok for rv in reviews for tok in rv.tokens)
        kept = sorted(
            (tok for tok, c in counts.items() if c >= min_freq),
            key=lambda tok: (-counts[tok], tok),
        )
        self.tokens = ["<pad>", "<unk>"] + kept
        self._ids = {tok: i for i, tok in enumerate(self.tokens)}
        self.min_freq = min_freq

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNKNOWN_ID)

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.id_of(t) for t in tokens], dtype=np.intp)

    @classmethod
    def from_tokens(cls, tokens: list[str], min_freq: int = 2) -> "WordVocab":
        vocab = cls.__new__(cls)
        vocab.tokens = list(tokens)
        vocab._ids = {tok: i for i, tok in enumerate(tokens)}
        vocab.min_freq = min_freq
        return vocab


def _parse_line(line: str, lineno: int, path) -> Review:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 4:
        raise DataError(
            f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}"
        )
    user, product, label_str, text = parts
    try:
        disk_label = int(label_str)
    except ValueError:
        raise DataError(f"{path}:{lineno}: label {label_str!r} is not an integer")
    if disk_label < 1:
        raise DataError(
            f"{path}:{lineno}: disk labels are 1-based, got {disk_label}"
        )
    tokens = tuple(text.split())
    if not tokens:
        raise DataError(f"{path}:{lineno}: empty review text")
    return Review(user=user, product=product, label=disk_label - 1, tokens=tokens)


def load_split(path, num_classes: int | None = None) -> list[Review]:
    """One split file to a review list; 1-based disk labels become 0-based."""
    reviews: list[Review] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rv = _parse_line(line, lineno, path)
            if num_classes is not None and rv.label >= num_classes:
                raise DataError(
                    f"{path}:{lineno}: label {rv.label + 1} outside [1..{num_classes}]"
                )
            reviews.append(rv)
    if not reviews:
        raise DataError(f"{path}: no reviews found")
    return reviews


def write_split(reviews: Sequence[Review], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rv in reviews:
            fh.write(f"{rv.user}\t{rv.product}\t{rv.label + 1}\t{' '.join(rv.tokens)}\n")


def load_corpus(train_path, dev_path, test_path, num_classes: int | None = None) -> Corpus:
    train = load_split(train_path, num_classes)
    dev = load_split(dev_path, num_classes)
    test = load_split(test_path, num_classes)
    if num_classes is None:
        num_classes = 1 + max(rv.label for rv in train + dev + test)
    return Corpus(train=train, dev=dev, test=test, num_classes=num_classes)


def corpus_dir_paths(directory) -> tuple[Path, Path, Path]:
    d = Path(directory)
    return d / "train.txt", d / "dev.txt", d / "test.txt"


def save_corpus(corpus: Corpus, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, reviews in corpus.splits().items():
        write_split(reviews, d / f"{name}.txt")


def load_corpus_dir(directory, num_classes: int | None = None) -> Corpus:
    train, dev, test = corpus_dir_paths(directory)
    return load_corpus(train, dev, test, num_classes)


def corpus_stats(corpus: Corpus) -> dict[str, float | int]:
    everything = corpus.all_reviews()
    users = {rv.user for rv in everything}
    products = {rv.product for rv in everything}
    total = len(everything)
    return {
        "num_classes": corpus.num_classes,
        "train": len(corpus.train),
        "dev": len(corpus.dev),
        "test": len(corpus.test),
        "users": len(users),
        "products": len(products),
        "docs_per_user": round(total / len(users), 2),
        "docs_per_product": round(total / len(products), 2),
    }


def load_pretrained_vectors(path, vocab: WordVocab, dim: int, seed: int = 0):
    """Initialize a lookup table from a ``token v1 .. vE`` text file.

    Rows for matched tokens are copied verbatim; everything else is drawn
    uniform in [-0.01, 0.01]. Returns the table and the matched fraction.
    """
    rng = np.random.default_rng(seed)
    table = rng.uniform(-0.01, 0.01, size=(len(vocab), dim))
    matched = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise DataError(
                    f"{path}:{lineno}: expected {dim} values, got {len(values)}"
                )
            idx = vocab._ids.get(token)
            if idx is not None:
                table[idx] = [float(v) for v in values]
                matched += 1
    return table, matched / len(vocab)


def _ratio_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    """Integer split sizes proportional to ratios, remainders to the
    largest fractional parts (first-listed wins ties)."""
    total = float(sum(ratios))
    raw = [n * r / total for r in ratios]
    sizes = [int(x) for x in raw]
    remainder = n - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (raw[i] - sizes[i]), reverse=True)
    for i in order[:remainder]:
        sizes[i] += 1
    return sizes


def make_twenty_core_split(
    reviews: Sequence[Review],
    k: int = 20,
    ratios: Sequence[float] = (8, 1, 1),
    seed: int = 0,
) -> Corpus:
    """Drop users/products with fewer than k reviews until a fixpoint, then
    split what survives by ratio with a seeded shuffle."""
    surviving = list(reviews)
    while True:
        user_counts = Counter(rv.user for rv in surviving)
        product_counts = Counter(rv.product for rv in surviving)
        kept = [
            rv
            for rv in surviving
            if user_counts[rv.user] >= k and product_counts[rv.product] >= k
        ]
        if len(kept) == len(surviving):
            break
        surviving = kept
    if not surviving:
        raise DataError(f"no reviews survive the {k}-core filter")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(surviving))
    shuffled = [surviving[i] for i in order]
    n_train, n_dev, _ = _ratio_sizes(len(shuffled), ratios)
    num_classes = 1 + max(rv.label for rv in surviving)
    return Corpus(
        train=shuffled[:n_train],
        dev=shuffled[n_train:n_train + n_dev],
        test=shuffled[n_train + n_dev:],
        num_classes=num_classes,
    )


@dataclass(frozen=True)
class TransferRecord:
    user: str
    product: str
    category: int                  # 0-based category label
    headline: tuple[int, ...]      # subword ids with begin/end markers

    def __post_init__(self):
        if self.category < 0:
            raise DataError(f"category must be nonnegative, got {self.category}")


@dataclass
class TransferCorpus:
    train: list[TransferRecord]
    dev: list[TransferRecord]
    test: list[TransferRecord]
    num_categories: int
    headline_vocab_size: int

    def splits(self) -> dict[str, list[TransferRecord]]:
        return {"train": self.train, "dev": self.dev, "test": self.test}


def load_transfer_sidecar(path) -> list[TransferRecord]:
    records: list[TransferRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise DataError(
                    f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}"
                )
            user, product, category_str, ids_str = parts
            try:
                category = int(category_str)
                ids = tuple(int(v) for v in ids_str.split())
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer category or headline id")
            records.append(
                TransferRecord(user=user, product=product, category=category, headline=ids)
            )
    if not records:
        raise DataError(f"{path}: no records found")
    return records


def write_transfer_sidecar(records: Sequence[TransferRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            ids = " ".join(str(i) for i in rec.headline)
            fh.write(f"{rec.user}\t{rec.product}\t{rec.category}\t{ids}\n")


def make_disjoint_entity_split(
    records: Sequence[TransferRecord],
    ratios: Sequence[float] = (8, 1, 1),
    seed: int = 0,
) -> TransferCorpus:
    """Assign users and products to splits independently and keep only the
    pairs whose two assignments agree, so no entity crosses splits."""
    users = sorted({r.user for r in records})
    products = sorted({r.product for r in records})
    rng = np.random.default_rng(seed)

    def assign(names: list[str]) -> dict[str, int]:
        order = rng.permutation(len(names))
        sizes = _ratio_sizes(len(names), ratios)
        result = {}
        bounds = np.cumsum([0] + sizes)
        for split_idx in range(len(sizes)):
            for j in order[bounds[split_idx]:bounds[split_idx + 1]]:
                result[names[j]] = split_idx
        return result

    user_split = assign(users)
    product_split = assign(products)
    splits: tuple[list[TransferRecord], ...] = ([], [], [])
    for rec in records:
        u, p = user_split[rec.user], product_split[rec.product]
        if u == p:
            splits[u].append(rec)
    train, dev, test = splits
    if not train or not dev or not test:
        raise DataError(
            "disjoint-entity split produced an empty split; "
            "not enough distinct users/products"
        )
    num_categories = 1 + max(r.category for r in records)
    vocab_size = 1 + max(max(r.headline) for r in records if r.headline)
    return TransferCorpus(
        train=train,
        dev=dev,
        test=test,
        num_categories=num_categories,
        headline_vocab_size=vocab_size,
    )


@dataclass(frozen=True)
class InteractionSpec:
    """Synthetic task whose label is user parity XOR marked-token presence.

    Every document is a shuffled copy of the same small filler set, with the
    marked token inserted in half of them. The filler text therefore carries
    no label information at all: identical texts occur under users of both
    parities with opposite labels, so a model blind to the user cannot beat
    chance even on its own training set, and memorizing text is a dead end.
    """

    num_users: int = 8
    num_products: int = 2
    num_fillers: int = 4
    train_docs: int = 256
    dev_docs: int = 192
    test_docs: int = 192
    mark_token: str = "marked"
    mark_rate: float = 0.5

    def __post_init__(self):
        if self.num_users % 2 != 0:
            raise DataError("num_users must be even so parities balance")
        if self.num_fillers < 1:
            raise DataError("need at least one filler token")


def generate_interaction_corpus(spec: InteractionSpec, seed: int = 0) -> Corpus:
    """Deterministic corpus for the attribute-interaction task (2 classes)."""
    rng = np.random.default_rng(seed)
    fillers = np.array([f"w{i:03d}" for i in range(spec.num_fillers)])

    def make_docs(count: int) -> list[Review]:
        docs = []
        for i in range(count):
            # Round-robin users so every split covers every user and parity.
            user_idx = i % spec.num_users
            product_idx = int(rng.integers(spec.num_products))
            tokens = list(rng.permutation(fillers))
            marked = bool(rng.random() < spec.mark_rate)
            if marked:
                tokens.insert(int(rng.integers(len(tokens) + 1)), spec.mark_token)
            label = (user_idx % 2) ^ int(marked)
            docs.append(
                Review(
                    user=f"u{user_idx:03d}",
                    product=f"p{product_idx:03d}",
                    label=label,
                    tokens=tuple(tokens),
                )
            )
        return docs

    return Corpus(
        train=make_docs(spec.train_docs),
        dev=make_docs(spec.dev_docs),
        test=make_docs(spec.test_docs),
        num_classes=2,
    )


@dataclass(frozen=True)
class TransferSpec:
    """Synthetic sentiment + transfer data driven by latent entity bits.

    Each user and product carries one hidden bit. The sentiment label is
    2*user_bit + product_bit (4 classes, text uninformative), so a model
    can only solve it by encoding the bits into the attribute tables. The
    product category equals the product bit, making transfer success a
    direct readout of what the frozen encodings learned.
    """

    num_users: int = 24
    num_products: int = 24
    vocab_size: int = 20
    train_docs: int = 384
    dev_docs: int = 128
    test_docs: int = 128
    min_len: int = 3
    max_len: int = 5
    headline_vocab: int = 12
    headline_len: int = 3


def _entity_bit(idx: int) -> int:
    return idx % 2


def generate_transfer_data(spec: TransferSpec, seed: int = 0):
    """Returns (sentiment corpus, transfer records for every pair seen)."""
    rng = np.random.default_rng(seed)
    fillers = [f"w{i:03d}" for i in range(spec.vocab_size)]
    seen_pairs: set[tuple[int, int]] = set()

    def make_docs(count: int) -> list[Review]:
        docs = []
        for i in range(count):
            user_idx = i % spec.num_users
            product_idx = int(rng.integers(spec.num_products))
            seen_pairs.add((user_idx, product_idx))
            length = int(rng.integers(spec.min_len, spec.max_len + 1))
            tokens = tuple(rng.choice(fillers, size=length))
            label = 2 * _entity_bit(user_idx) + _entity_bit(product_idx)
            docs.append(
                Review(
                    user=f"u{user_idx:03d}",
                    product=f"p{product_idx:03d}",
                    label=label,
                    tokens=tokens,
                )
            )
        return docs

    corpus = Corpus(
        train=make_docs(spec.train_docs),
        dev=make_docs(spec.dev_docs),
        test=make_docs(spec.test_docs),
        num_classes=4,
    )
    # Headline: begin marker, a token correlated with the product bit, end marker.
    begin, end = 0, 1
    records = []
    for user_idx, product_idx in sorted(seen_pairs):
        bit = _entity_bit(product_idx)
        body = [
            2 + int(rng.integers(bit * (spec.headline_vocab - 2) // 2,
                                 (bit + 1) * (spec.headline_vocab - 2) // 2))
            for _ in range(spec.headline_len)
        ]
        records.append(
            TransferRecord(
                user=f"u{user_idx:03d}",
                product=f"p{product_idx:03d}",
                category=bit,
                headline=tuple([begin] + body + [end]),
            )
        )
    return corpus, records
