"""Optimizer, constraints, loss, evaluation, and the training loop."""

import math

import numpy as np
import pytest

from attrinject import autograd as ag
from attrinject import training as tr
from attrinject.checkpoint import checksum_arrays
from attrinject.data import InteractionSpec, Review, Corpus, generate_interaction_corpus
from attrinject.experiment import BoundCorpus, attribute_template, run_experiment
from attrinject.layers import ModelConfig, SentimentModel
from oracles import cross_entropy_reference

RNG = np.random.default_rng(17)


class TestCrossEntropy:
    def test_uniform_logits_give_log_class_count(self):
        loss = tr.cross_entropy(ag.constant(np.zeros(5)), 2)
        assert float(loss.data) == pytest.approx(math.log(5), abs=1e-12)

    def test_saturated_gold_logit_is_near_zero(self):
        logits = np.zeros(4)
        logits[1] = 1000.0
        loss = tr.cross_entropy(ag.constant(logits), 1)
        assert float(loss.data) == pytest.approx(0.0, abs=1e-9)

    def test_matches_scalar_reference(self):
        logits = RNG.normal(size=3)
        loss = tr.cross_entropy(ag.constant(logits), 2)
        assert float(loss.data) == pytest.approx(
            cross_entropy_reference(logits.tolist(), 2), abs=1e-12
        )

    def test_gold_out_of_range_rejected(self):
        with pytest.raises(ag.InvalidInputError):
            tr.cross_entropy(ag.constant(np.zeros(3)), 3)


class TestAdadelta:
    def test_first_step_closed_form(self):
        p = ag.parameter(np.array([1.0]), name="p")
        p.grad = np.array([1.0])
        opt = tr.Adadelta({"p": p}, rho=0.95, eps=1e-6)
        opt.step()
        expected_delta = -math.sqrt(1e-6 / (0.05 + 1e-6))
        assert p.data[0] == pytest.approx(1.0 + expected_delta, rel=1e-12)
        assert expected_delta < 0

    def test_zero_gradient_leaves_parameter_and_decays_state(self):
        p = ag.parameter(np.array([2.0]), name="p")
        opt = tr.Adadelta({"p": p}, rho=0.9)
        opt.sq_grad["p"][:] = 1.0
        opt.sq_step["p"][:] = 0.5
        p.grad = np.array([0.0])
        opt.step()
        assert p.data[0] == 2.0
        assert opt.sq_grad["p"][0] == pytest.approx(0.9)
        assert opt.sq_step["p"][0] == pytest.approx(0.45)

    def test_step_after_zero_gradient_is_zero(self):
        p = ag.parameter(np.array([1.0]), name="p")
        opt = tr.Adadelta({"p": p})
        p.grad = np.array([1.0])
        opt.step()
        moved = p.data[0]
        p.grad = np.array([0.0])
        opt.step()
        assert p.data[0] == moved


class TestMaxNorm:
    def test_row_above_limit_rescaled_exactly(self):
        m = ag.parameter(np.array([[6.0, 0.0], [0.0, 2.0]]), name="m")
        tr.max_norm_constrain([m], 3.0)
        assert np.allclose(m.data[0], [3.0, 0.0])
        assert np.allclose(m.data[1], [0.0, 2.0])

    def test_row_below_limit_untouched(self):
        vals = RNG.normal(size=(3, 4)) * 0.1
        m = ag.parameter(vals.copy(), name="m")
        tr.max_norm_constrain([m], 3.0)
        assert np.array_equal(m.data, vals)

    def test_all_rows_bounded_after_training_step(self):
        cfg = ModelConfig(
            vocab_size=12, num_classes=2, embed_dim=6, word_dim=6, hidden_dim=4,
            attn_dim=4, num_users=3, num_products=3, user_dim=4, product_dim=4,
            representation="chunk", sites=("embed",), chunk_rows=2, chunk_cols=2,
        )
        model = SentimentModel(cfg, seed=1)
        # Inflate weights so the constraint must bite.
        for m in model.constrained_matrices().values():
            m.data *= 50.0
        params = model.parameters()
        opt = tr.Adadelta(params)
        rng = np.random.default_rng(2)
        for _ in range(3):
            ag.zero_grads(params)
            with ag.Tape() as tape:
                logits = model.forward(np.array([1, 2, 3]), 1, 1,
                                       train=True, dropout_rate=0.1, rng=rng)
                loss = tr.cross_entropy(logits, 1)
            tape.backward(loss)
            opt.step()
            tr.max_norm_constrain(model.constrained_matrices(), 3.0)
            model.invalidate_caches()
            for name, m in model.constrained_matrices().items():
                norms = np.linalg.norm(m.data, axis=-1)
                assert norms.max() <= 3.0 + 1e-9, name


class TestDropout:
    def test_inverted_scaling_preserves_expectation(self):
        rng = np.random.default_rng(5)
        mask = tr.dropout_keep_mask(rng, (100_000,), 0.1)
        assert mask.mean() == pytest.approx(1.0, rel=0.01)
        zeros = (mask == 0).mean()
        assert zeros == pytest.approx(0.1, abs=0.01)
        kept = mask[mask > 0]
        assert np.allclose(kept, 1.0 / 0.9)


def one_hot_logits(cls: int, n: int = 5) -> np.ndarray:
    out = np.zeros(n)
    out[cls] = 1.0
    return out


class _StubModel:
    """Predicts the class encoded in each document's first token id."""

    def forward(self, tokens, user=0, product=0, **kwargs):
        return ag.constant(one_hot_logits(int(tokens[0])))


class TestEvaluate:
    def test_all_correct(self):
        data = [((np.array([2]),), 0, 0, 2), ((np.array([4]),), 0, 0, 4)]
        examples = [(t[0], u, p, y) for t, u, p, y in data]
        acc, rmse = tr.evaluate(_StubModel(), examples)
        assert acc == 1.0 and rmse == 0.0

    def test_off_by_one_everywhere(self):
        examples = [(np.array([1]), 0, 0, 0), (np.array([3]), 0, 0, 2)]
        acc, rmse = tr.evaluate(_StubModel(), examples)
        assert acc == 0.0 and rmse == 1.0

    def test_spot_case_half_right(self):
        examples = [(np.array([4]), 0, 0, 0), (np.array([4]), 0, 0, 4)]
        acc, rmse = tr.evaluate(_StubModel(), examples)
        assert acc == 0.5
        assert rmse == pytest.approx(math.sqrt(8.0))

    def test_empty_split_rejected(self):
        with pytest.raises(ag.InvalidInputError):
            tr.evaluate(_StubModel(), [])

    def test_evaluation_pure_and_repeatable(self):
        corpus = generate_interaction_corpus(
            InteractionSpec(train_docs=24, dev_docs=12, test_docs=12), seed=0
        )
        bound = BoundCorpus.bind(corpus, min_freq=1)
        cfg = bound.model_config(
            attribute_template("chunk", ("classify",), dims=8, user_dim=4, product_dim=4)
        )
        model = SentimentModel(cfg, seed=3)
        split = bound.encoded_splits()["dev"]
        before = checksum_arrays(model.snapshot())
        first = tr.evaluate(model, split)
        second = tr.evaluate(model, split)
        assert first == second
        assert checksum_arrays(model.snapshot()) == before


def tiny_text_only_corpus(n=64, seed=0):
    """Labels depend only on the text (marked-token presence)."""
    rng = np.random.default_rng(seed)
    fillers = [f"w{i}" for i in range(12)]
    reviews = []
    for i in range(n):
        tokens = list(rng.choice(fillers, size=4))
        marked = bool(rng.random() < 0.5)
        if marked:
            tokens.insert(int(rng.integers(5)), "marked")
        reviews.append(
            Review(user="u0", product="p0", label=int(marked), tokens=tuple(tokens))
        )
    return Corpus(train=reviews, dev=list(reviews), test=list(reviews), num_classes=2)


class TestTrainLoop:
    def test_overfits_small_set_and_loss_decreases(self):
        corpus = tiny_text_only_corpus()
        bound = BoundCorpus.bind(corpus, min_freq=1)
        cfg = bound.model_config(attribute_template("none", (), dims=16))
        model = SentimentModel(cfg, seed=4)
        splits = bound.encoded_splits()
        metrics = tr.train(
            model,
            splits["train"],
            splits["dev"],
            tr.TrainConfig(batch_size=16, max_epochs=200, patience=30, seed=4),
        )
        assert len(metrics.epochs) >= 10
        assert metrics.best_dev_accuracy >= 0.98
        assert metrics.epochs[9].train_loss < metrics.epochs[0].train_loss

    def test_patience_one_with_worsening_dev_stops_after_two_epochs(self, monkeypatch):
        scores = iter([0.9, 0.8, 0.7, 0.6])
        monkeypatch.setattr(tr, "evaluate", lambda *a, **k: (next(scores), 0.0))
        corpus = tiny_text_only_corpus(n=16)
        bound = BoundCorpus.bind(corpus, min_freq=1)
        model = SentimentModel(
            bound.model_config(attribute_template("none", (), dims=8)), seed=5
        )
        splits = bound.encoded_splits()
        metrics = tr.train(
            model,
            splits["train"],
            splits["dev"],
            tr.TrainConfig(batch_size=8, max_epochs=50, patience=1, seed=5),
        )
        assert len(metrics.epochs) == 2
        assert metrics.stopped_early
        assert metrics.best_epoch == 1

    def test_best_epoch_parameters_restored(self, monkeypatch):
        # Dev peaks at epoch 2 and falls afterwards; the returned model must
        # carry exactly the epoch-2 parameters.
        scores = iter([0.5, 0.9, 0.4, 0.3, 0.2])
        monkeypatch.setattr(tr, "evaluate", lambda *a, **k: (next(scores), 0.0))
        corpus = tiny_text_only_corpus(n=16)
        bound = BoundCorpus.bind(corpus, min_freq=1)
        model = SentimentModel(
            bound.model_config(attribute_template("none", (), dims=8)), seed=6
        )
        splits = bound.encoded_splits()
        metrics = tr.train(
            model,
            splits["train"],
            splits["dev"],
            tr.TrainConfig(batch_size=8, max_epochs=5, patience=3, seed=6),
        )
        assert metrics.best_epoch == 2
        assert checksum_arrays(model.snapshot()) == metrics.best_checksum

    def test_same_seed_same_trace(self):
        corpus = generate_interaction_corpus(
            InteractionSpec(train_docs=48, dev_docs=24, test_docs=24), seed=1
        )
        bound = BoundCorpus.bind(corpus, min_freq=1)
        template = attribute_template(
            "chunk", ("classify",), dims=8, user_dim=4, product_dim=4
        )
        cfg_t = tr.TrainConfig(batch_size=16, max_epochs=4, patience=4, seed=11)
        runs = [run_experiment(bound, template, cfg_t) for _ in range(2)]
        trace_a = [(e.train_loss, e.dev_accuracy, e.dev_rmse) for e in runs[0].metrics.epochs]
        trace_b = [(e.train_loss, e.dev_accuracy, e.dev_rmse) for e in runs[1].metrics.epochs]
        assert trace_a == trace_b
        assert checksum_arrays(runs[0].model.snapshot()) == checksum_arrays(
            runs[1].model.snapshot()
        )

    def test_empty_split_rejected(self):
        corpus = tiny_text_only_corpus(n=8)
        bound = BoundCorpus.bind(corpus, min_freq=1)
        model = SentimentModel(
            bound.model_config(attribute_template("none", (), dims=8)), seed=7
        )
        with pytest.raises(ag.InvalidInputError):
            tr.train(model, [], bound.encoded_splits()["dev"], tr.TrainConfig())
