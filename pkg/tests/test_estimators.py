"""Scikit-learn API conventions and end-to-end estimator behavior."""

import numpy as np
import pytest
from sklearn.base import clone

from semeda.datasets import gen_synthetic
from semeda.estimators import EdgeDetector, SemedaSegmenter


@pytest.fixture(scope="module")
def shapes_data():
    samples = gen_synthetic(8, 32, 3, 21)
    X = np.stack([s.image for s in samples])
    y = np.stack([s.mask for s in samples])
    return X, y


def test_get_params_round_trip():
    est = SemedaSegmenter(strategy="ppce", epochs=3, lambda2=0.5)
    params = est.get_params()
    assert params["strategy"] == "ppce"
    assert params["lambda2"] == 0.5
    rebuilt = SemedaSegmenter(**params)
    assert rebuilt.get_params() == params


def test_clone_preserves_params():
    est = EdgeDetector(n_classes=4, epochs=2, lr=0.2)
    cloned = clone(est)
    assert cloned.get_params() == est.get_params()


def test_set_params_chains():
    est = SemedaSegmenter()
    est.set_params(strategy="multitask", lambda1=2.0)
    assert est.strategy == "multitask"
    assert est.lambda1 == 2.0


def test_edge_detector_fit_predict_score(shapes_data):
    _, y = shapes_data
    det = EdgeDetector(n_classes=3, epochs=3, batch_size=4, random_state=0)
    assert det.fit(y) is det
    edges = det.predict(y)
    assert edges.shape == y.shape
    assert edges.dtype == bool
    proba = det.predict_proba(y)
    assert proba.shape == (len(y), 2, 32, 32)
    assert np.all(np.abs(proba.sum(axis=1) - 1.0) < 1e-12)
    score = det.score(y)
    assert 0.0 <= score <= 1.0


def test_edge_detector_transform_is_proba(shapes_data):
    _, y = shapes_data
    det = EdgeDetector(n_classes=3, epochs=1, batch_size=4).fit(y)
    assert np.array_equal(det.transform(y[:2]), det.predict_proba(y[:2]))


def test_edge_detector_unfitted_raises(shapes_data):
    from sklearn.exceptions import NotFittedError
    _, y = shapes_data
    with pytest.raises(NotFittedError):
        EdgeDetector().predict(y)


def test_segmenter_fit_predict_ppce(shapes_data):
    X, y = shapes_data
    est = SemedaSegmenter(strategy="ppce", n_classes=3, epochs=2, batch_size=4,
                          random_state=0)
    est.fit(X, y)
    labels = est.predict(X)
    assert labels.shape == y.shape
    assert labels.max() < 3
    proba = est.predict_proba(X[:2])
    assert proba.shape == (2, 3, 32, 32)
    assert np.all(np.abs(proba.sum(axis=1) - 1.0) < 1e-12)
    assert 0.0 <= est.score(X, y) <= 1.0


def test_segmenter_semeda_trains_edge_net_first(shapes_data):
    X, y = shapes_data
    est = SemedaSegmenter(strategy="semeda", n_classes=3, epochs=1,
                          edge_epochs=1, batch_size=4, random_state=1)
    est.fit(X, y)
    assert est.edge_params_ is not None
    assert hasattr(est, "edge_history_")


def test_segmenter_reuses_supplied_edge_net(shapes_data):
    X, y = shapes_data
    det = EdgeDetector(n_classes=3, epochs=1, batch_size=4).fit(y)
    est = SemedaSegmenter(strategy="semeda", n_classes=3, epochs=1, batch_size=4,
                          edge_params=det.params_)
    est.fit(X, y)
    assert est.edge_params_ is det.params_


def test_segmenter_accepts_channels_last(shapes_data):
    X, y = shapes_data
    est = SemedaSegmenter(strategy="ppce", n_classes=3, epochs=1, batch_size=4)
    est.fit(np.moveaxis(X, 1, -1), y)
    a = est.predict(X)
    b = est.predict(np.moveaxis(X, 1, -1))
    assert np.array_equal(a, b)


def test_segmenter_deterministic_per_random_state(shapes_data):
    X, y = shapes_data
    kw = dict(strategy="ppce", n_classes=3, epochs=1, batch_size=4, random_state=5)
    a = SemedaSegmenter(**kw).fit(X, y).predict(X)
    b = SemedaSegmenter(**kw).fit(X, y).predict(X)
    assert np.array_equal(a, b)


def test_segmenter_mismatched_lengths_rejected(shapes_data):
    X, y = shapes_data
    est = SemedaSegmenter(strategy="ppce", n_classes=3, epochs=1)
    with pytest.raises(ValueError, match="images"):
        est.fit(X[:3], y[:2])
