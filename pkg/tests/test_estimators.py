"""Estimator-facade tests: sklearn conventions over the library internals."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lgli.estimators import LGLIRetriever, TwoTowerLocalizer
from lgli.lpvl import propose_regions


def test_get_params_round_trip():
    est = LGLIRetriever(alpha=1e-3, epochs=7, concat_fallback=True)
    params = est.get_params()
    assert params["alpha"] == 1e-3 and params["epochs"] == 7
    est2 = LGLIRetriever().set_params(**params)
    assert est2.get_params() == params


def test_clone_preserves_configuration():
    est = LGLIRetriever(alpha=5e-4, seed=3, disable_mask=True)
    dup = clone(est)
    assert dup.get_params() == est.get_params()


def test_unfitted_estimators_raise():
    with pytest.raises(NotFittedError):
        LGLIRetriever().predict([], k=1)
    with pytest.raises(NotFittedError):
        TwoTowerLocalizer().predict([], [])


def test_localizer_estimator_fit_predict_score(tiny_dataset):
    est = TwoTowerLocalizer(epochs=8, batch_size=16, seed=0)
    est.fit(tiny_dataset)
    assert hasattr(est, "history_") and len(est.history_) == 8
    tp = next(t for t in tiny_dataset.split_triplets("test") if t.gt_box is not None)
    regions = propose_regions(tp.reference,
                              image=tiny_dataset.render(tp.reference.scene_id))
    chosen = est.predict(regions, tp.modification.localization_text_tokens)
    assert chosen in regions
    acc = est.score(tiny_dataset)
    assert 0.0 <= acc <= 1.0


@pytest.fixture(scope="module")
def fitted_retriever(tiny_dataset, tiny_localizer):
    params, _ = tiny_localizer
    est = LGLIRetriever(epochs=2, batch_size=16, seed=0, loss_tol=None, min_epochs=1)
    est.fit(tiny_dataset, localizer_params=params)
    return est


def test_retriever_fit_exposes_history(fitted_retriever):
    assert len(fitted_retriever.history_) == 2
    assert 0.0 <= fitted_retriever.best_val_r1_ <= 100.0


def test_retriever_transform_shape(fitted_retriever, tiny_dataset):
    trips = tiny_dataset.split_triplets("test")[:4]
    feats = fitted_retriever.transform(trips)
    assert feats.shape == (4, 256)
    norms = np.linalg.norm(feats, axis=1)
    assert np.allclose(norms, 1.0, atol=1e-9)


def test_retriever_predict_returns_topk_ids(fitted_retriever, tiny_dataset):
    trips = tiny_dataset.split_triplets("test")[:3]
    preds = fitted_retriever.predict(trips, k=4)
    pool = set(tiny_dataset.target_pool("test"))
    assert len(preds) == 3
    for row in preds:
        assert len(row) == 4
        assert set(row) <= pool


def test_retriever_score_is_fraction(fitted_retriever, tiny_dataset):
    score = fitted_retriever.score(tiny_dataset)
    assert 0.0 <= score <= 1.0


def test_checkpoint_round_trip_through_estimator(fitted_retriever, tiny_dataset, tmp_path):
    path = tmp_path / "est.ckpt"
    fitted_retriever.save(path)
    loaded = LGLIRetriever.from_checkpoint(path, dataset=tiny_dataset)
    a = fitted_retriever.score(tiny_dataset)
    b = loaded.score(tiny_dataset)
    assert a == b