"""Scikit-learn API conformance and behavior of the estimator facade."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from attrinject import AttributeSentimentClassifier
from attrinject.data import InteractionSpec, generate_interaction_corpus


def interaction_documents(n_train=120, seed=3):
    spec = InteractionSpec(
        num_users=4, num_products=2, num_fillers=3, mark_rate=0.3,
        train_docs=n_train, dev_docs=24, test_docs=48,
    )
    corpus = generate_interaction_corpus(spec, seed=seed)
    to_xy = lambda reviews: (
        [(list(rv.tokens), rv.user, rv.product) for rv in reviews],
        np.array([rv.label for rv in reviews]),
    )
    return to_xy(corpus.train), to_xy(corpus.test)


class TestSklearnProtocol:
    def test_get_set_params_round_trip(self):
        est = AttributeSentimentClassifier(representation="bias", sites=("attend",))
        params = est.get_params()
        assert params["representation"] == "bias"
        est.set_params(dims=32, seed=7)
        assert est.dims == 32 and est.seed == 7

    def test_clone_preserves_settings(self):
        est = AttributeSentimentClassifier(sites=("encode",), max_epochs=5)
        twin = clone(est)
        assert twin.get_params() == est.get_params()

    def test_unfitted_predict_raises(self):
        est = AttributeSentimentClassifier()
        with pytest.raises(NotFittedError):
            est.predict([(["hello"], "u", "p")])

    def test_bad_representation_rejected_at_fit(self):
        (X, y), _ = interaction_documents(n_train=12)
        est = AttributeSentimentClassifier(representation="wizardry")
        with pytest.raises(ValueError, match="representation"):
            est.fit(X, y)

    def test_bad_input_shape_message(self):
        est = AttributeSentimentClassifier()
        with pytest.raises(Exception, match="triple"):
            est.fit([42], None)


class TestFitPredict:
    def test_learns_interaction_task(self):
        (X, y), (Xt, yt) = interaction_documents()
        est = AttributeSentimentClassifier(
            representation="chunk", sites=("classify",),
            dims=16, user_dim=8, product_dim=8,
            batch_size=4, max_epochs=60, patience=60, seed=0,
        )
        est.fit(X, y)
        assert est.score(Xt, yt) >= 0.9

    def test_predictions_in_original_label_space(self):
        (X, y), (Xt, _) = interaction_documents(n_train=40)
        shifted = y + 3  # labels 3 and 4
        est = AttributeSentimentClassifier(
            dims=8, user_dim=4, product_dim=4, max_epochs=2, patience=2, seed=1,
        )
        est.fit(X, shifted)
        assert set(est.classes_) == {3, 4}
        preds = est.predict(Xt[:10])
        assert set(preds) <= {3, 4}

    def test_predict_proba_rows_normalized(self):
        (X, y), (Xt, _) = interaction_documents(n_train=40)
        est = AttributeSentimentClassifier(
            dims=8, user_dim=4, product_dim=4, max_epochs=2, patience=2, seed=2,
        )
        est.fit(X, y)
        proba = est.predict_proba(Xt[:7])
        assert proba.shape == (7, 2)
        assert np.allclose(proba.sum(axis=1), 1.0)

    def test_accepts_review_objects(self):
        spec = InteractionSpec(num_users=4, num_products=2, num_fillers=3,
                               train_docs=40, dev_docs=8, test_docs=8)
        corpus = generate_interaction_corpus(spec, seed=9)
        est = AttributeSentimentClassifier(
            dims=8, user_dim=4, product_dim=4, max_epochs=2, patience=2, seed=3,
        )
        est.fit(corpus.train)
        score = est.score(corpus.test)
        assert 0.0 <= score <= 1.0

    def test_unseen_entities_fall_back_to_unknown_row(self):
        (X, y), _ = interaction_documents(n_train=40)
        est = AttributeSentimentClassifier(
            dims=8, user_dim=4, product_dim=4, max_epochs=2, patience=2, seed=4,
        )
        est.fit(X, y)
        pred = est.predict([(["w000", "w001"], "brand-new-user", "new-product")])
        assert pred[0] in est.classes_
