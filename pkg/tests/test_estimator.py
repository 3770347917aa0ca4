import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from abxi.errors import ConfigError, DataError
from abxi.estimator import ABXIRecommender, check_history, check_interactions
from abxi.synthetic import SyntheticSpec, generate_synthetic

SPEC = SyntheticSpec(n_items=60, cluster_size=6, n_interests=5, min_len=6, max_len=12)
FAST = dict(d=16, r_d=4, r_i=4, n_neg=5, dropout=0.1, max_len=20, max_epochs=2, warmup_epochs=1,
            batch_size=64, eval_negatives=20)


@pytest.fixture(scope="module")
def fitted():
    log = generate_synthetic("shared-interest", 120, seed=1, spec=SPEC)
    return ABXIRecommender(**FAST).fit(log)


def test_get_params_and_clone():
    est = ABXIRecommender(d=32, variant="V4")
    params = est.get_params()
    assert params["d"] == 32 and params["variant"] == "V4" and params["seed"] == 3407
    twin = clone(est)
    assert twin.get_params() == params and not hasattr(twin, "model_")
    est.set_params(r_d=8)
    assert est.r_d == 8


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        ABXIRecommender().predict([[("A0000", "A")]], "A")


def test_invalid_params_raise_at_fit():
    log = generate_synthetic("shared-interest", 40, seed=0, spec=SPEC)
    with pytest.raises(ConfigError):
        ABXIRecommender(variant="V9").fit(log)
    with pytest.raises(ConfigError):
        ABXIRecommender(d=16, r_d=16).fit(log)


def test_check_interactions_rejects_garbage():
    with pytest.raises(DataError):
        check_interactions([])
    with pytest.raises(DataError):
        check_interactions([("u", "i", "A", 1)])


def test_fit_predict_shapes(fitted):
    corpus = fitted.split_.corpus
    hist = [(corpus.item_ids_A[0], "A"), (corpus.item_ids_B[0], "B")]
    top = fitted.predict([hist, hist[:1]], "B", k=5)
    assert len(top) == 2 and all(len(t) == 5 for t in top)
    assert corpus.item_ids_B[0] not in top[0]
    assert all(t.startswith("B") for t in top[1])
    scores = fitted.predict_scores([hist], "A")
    assert scores.shape == (1, corpus.n_items_A) and np.isfinite(scores).all()


def test_check_history_unknown_item(fitted):
    with pytest.raises(DataError, match="unknown item"):
        check_history(fitted.split_.corpus, [("nope", "A")])


def test_score_is_mrr_sum(fitted):
    rep = fitted.evaluate("test")
    assert fitted.score() == pytest.approx(rep.metrics["A"]["MRR"] + rep.metrics["B"]["MRR"])
    assert 0 < fitted.score() <= 2
    assert fitted.score(fitted.split_) == pytest.approx(fitted.score())
