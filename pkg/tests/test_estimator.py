import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from maskdiff.checkpoint import dumps, loads
from maskdiff.config import ExperimentConfig
from maskdiff.estimator import MaskDiffusionRecognizer


def _est(**kw):
    params = dict(max_len=8, dim=32, n_layers=1, n_heads=2, d_ff=64, total_steps=40,
                  warmup_steps=5, batch_size=32, lr=3e-3, random_state=0)
    params.update(kw)
    return MaskDiffusionRecognizer(**params)


@pytest.fixture(scope="module")
def fitted(small_dataset):
    texts, X, _, _ = small_dataset.arrays("train")
    return _est().fit(X[:500], texts[:500])


def test_get_params_and_clone():
    est = _est(policy="lc", steps=4)
    p = est.get_params()
    assert p["policy"] == "lc" and p["steps"] == 4 and p["max_len"] == 8
    c = clone(est)
    assert c.get_params() == p and not hasattr(c, "model_")
    est.set_params(steps=5)
    assert est.steps == 5


def test_from_config_maps_sections():
    cfg = ExperimentConfig().replace(train={"trn_enabled": False, "mask_strategy_set": ["random"]},
                                     infer={"policy": "lc", "K": 5})
    est = MaskDiffusionRecognizer.from_config(cfg, random_state=3)
    assert not est.trn_enabled and est.mask_strategies == ("random",)
    assert (est.policy, est.steps, est.random_state, est.dim) == ("lc", 5, 3, 64)


def test_predict_before_fit_raises():
    with pytest.raises(NotFittedError):
        _est().predict(np.zeros((1, 8, 32), dtype=np.float32))


def test_fit_input_validation(small_dataset):
    texts, X, _, _ = small_dataset.arrays("train")
    with pytest.raises(ValueError):
        _est().fit(X[:10], texts[:9])
    with pytest.raises(ValueError):
        _est().fit(X[:10, :, :16], texts[:10])
    bad = X[:10].copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        _est().fit(bad, texts[:10])
    with pytest.raises(ValueError):
        _est().fit(X[:2], ["toolongword", "ok"])
    with pytest.raises(ValueError):
        _est().fit(X[:2], ["Cat", "ok"])


def test_predict_score_trace(fitted, small_dataset):
    texts, X, _, _ = small_dataset.arrays("eval")
    pred = fitted.predict(X[:20])
    assert pred.shape == (20,) and pred.dtype == object
    assert all(isinstance(s, str) for s in pred)
    assert fitted.score(X[:20], texts[:20]) == np.mean([p == t for p, t in zip(pred, texts[:20])])
    assert fitted.predict_ids(X[:5], policy="ar").shape == (5, 8)
    single = fitted.predict(X[0])
    assert single.shape == (1,) and single[0] == pred[0]
    recs = fitted.trace(X[0], policy="lc", steps=4)
    assert [r["step"] for r in recs] == [1, 2, 3, 4]
    assert len(fitted.trace(X[0], policy="pd")) == 1


def test_fit_is_deterministic(fitted, small_dataset):
    texts, X, _, _ = small_dataset.arrays("train")
    again = _est().fit(X[:500], texts[:500])
    E = small_dataset.arrays("eval")[1]
    assert np.array_equal(again.predict_ids(E), fitted.predict_ids(E))


def test_checkpoint_round_trip_preserves_predictions(fitted, small_dataset):
    E = small_dataset.arrays("eval")[1]
    back = MaskDiffusionRecognizer.from_checkpoint(loads(dumps(fitted.to_checkpoint())))
    assert back.get_params() == fitted.get_params()
    assert back.n_steps_trained_ == 40
    for policy in ("pd", "blc", "ar"):
        assert np.array_equal(back.predict_ids(E, policy=policy), fitted.predict_ids(E, policy=policy))
