"""Scikit-learn style estimators wrapping the two-phase training pipeline.

Both classes follow the usual conventions: constructor arguments are stored
verbatim (so get_params/set_params/clone work), fitted state lives in
trailing-underscore attributes, and inputs are numpy arrays.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .losses import LossConfig
from .maskops import extract_edge_map, one_hot, perturb_mask
from .metrics import edge_accuracy
from .networks import predict_edge_probs, predict_labels, seg_net_forward
from .training import TrainConfig, train_edge_net, train_seg_net, validation_miou
from .validation import VOID_LABEL, check_image, check_label_mask


def _mask_batch(y, name="y"):
    arr = np.asarray(y)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"{name} must be (n_samples, H, W) label masks, "
                         f"got shape {arr.shape}")
    return [check_label_mask(m, name=name) for m in arr]


def _image_batch(X):
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"X must be (n_samples, 3, H, W) or (n_samples, H, W, 3), "
                         f"got shape {arr.shape}")
    return [check_image(img, name="X") for img in arr]


class EdgeDetector(BaseEstimator):
    """Learns to map soft segmentation masks to semantic edge maps.

    fit(X) takes integer label masks of shape (n_samples, H, W); targets are
    derived from the masks themselves (a pixel is an edge when its
    8-neighborhood contains another class), so no y is needed.  Inputs are
    one-hot encoded and softened with Gaussian noise + softmax during
    training to mimic the output distribution of a segmentation network.

    Parameters mirror TrainConfig; see also SemedaSegmenter, which trains
    one of these internally for its edge-aware loss.
    """

    def __init__(self, n_classes=5, epochs=30, lr=1e-1, momentum=0.9,
                 batch_size=8, sigma=0.5, void_label=VOID_LABEL, random_state=0):
        self.n_classes = n_classes
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.sigma = sigma
        self.void_label = void_label
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(batch_size=self.batch_size, edge_epochs=self.epochs,
                           edge_lr=self.lr, momentum=self.momentum,
                           sigma=self.sigma, seed=self.random_state,
                           loss=LossConfig(void_label=self.void_label))

    def fit(self, X, y=None):
        masks = _mask_batch(X, name="X")
        self.params_, self.history_ = train_edge_net(masks, self._train_config(),
                                                     n_classes=self.n_classes)
        return self

    def _soften(self, mask):
        hot = one_hot(mask, self.n_classes, void_label=self.void_label)
        return perturb_mask(hot, 0.0, 0)

    def predict_proba(self, X):
        """(n_samples, 2, H, W) edge probabilities from label masks."""
        check_is_fitted(self, "params_")
        return np.stack([predict_edge_probs(self.params_, self._soften(m))
                         for m in _mask_batch(X, name="X")])

    def predict(self, X):
        """(n_samples, H, W) boolean edge maps (argmax, ties to non-edge)."""
        proba = self.predict_proba(X)
        return np.argmax(proba, axis=1).astype(bool)

    def transform(self, X):
        return self.predict_proba(X)

    def score(self, X, y=None):
        """Mean pixel accuracy against edge maps derived from the masks."""
        check_is_fitted(self, "params_")
        masks = _mask_batch(X, name="X")
        proba = self.predict_proba(X)
        return float(np.mean([
            edge_accuracy(p, extract_edge_map(m, void_label=self.void_label))
            for p, m in zip(proba, masks)]))


class SemedaSegmenter(BaseEstimator):
    """Segmentation trained with an edge-aware embedding loss (or one of the
    baseline strategies from the ablation grid).

    fit(X, y) takes images (n_samples, 3, H, W) or (n_samples, H, W, 3) with
    values in [0, 1] and integer masks (n_samples, H, W).  Unless
    edge_params is supplied, strategies that need the edge net first train
    it on the masks of X (phase 1), then train the segmentation network
    while the edge net stays frozen (phase 2).

    strategy is one of "ppce", "multitask", "ppce_on_edges", "semeda";
    lambda1..lambda3 and match_point select the row of the ablation grid.
    """

    def __init__(self, strategy="semeda", n_classes=5, lambda1=0.0, lambda2=1.0,
                 lambda3=0.0, match_point="before_relu", distance="l1",
                 epochs=60, lr=1e-2, momentum=0.9, batch_size=8, sigma=0.5,
                 edge_epochs=30, edge_lr=1e-1, mirror=True, crop_size=None,
                 void_label=VOID_LABEL, random_state=0, edge_params=None):
        self.strategy = strategy
        self.n_classes = n_classes
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.match_point = match_point
        self.distance = distance
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.sigma = sigma
        self.edge_epochs = edge_epochs
        self.edge_lr = edge_lr
        self.mirror = mirror
        self.crop_size = crop_size
        self.void_label = void_label
        self.random_state = random_state
        self.edge_params = edge_params

    def _train_config(self):
        loss = LossConfig(strategy=self.strategy, lambda1=self.lambda1,
                          lambda2=self.lambda2, lambda3=self.lambda3,
                          match_point=self.match_point, distance=self.distance,
                          void_label=self.void_label)
        return TrainConfig(batch_size=self.batch_size, edge_epochs=self.edge_epochs,
                           seg_epochs=self.epochs, edge_lr=self.edge_lr,
                           seg_lr=self.lr, momentum=self.momentum,
                           sigma=self.sigma, seed=self.random_state,
                           mirror=self.mirror, crop_size=self.crop_size, loss=loss)

    def fit(self, X, y, val_X=None, val_y=None):
        from .datasets import Sample

        images = _image_batch(X)
        masks = _mask_batch(y)
        if len(images) != len(masks):
            raise ValueError(f"{len(images)} images but {len(masks)} masks")
        config = self._train_config()
        self.edge_params_ = self.edge_params
        if self.strategy in ("semeda", "ppce_on_edges") and self.edge_params_ is None:
            self.edge_params_, self.edge_history_ = train_edge_net(
                masks, config, n_classes=self.n_classes)
        samples = [Sample(str(i), img, m)
                   for i, (img, m) in enumerate(zip(images, masks))]
        val_samples = None
        if val_X is not None:
            val_samples = [Sample(f"v{i}", img, m) for i, (img, m) in
                           enumerate(zip(_image_batch(val_X), _mask_batch(val_y)))]
        self.params_, self.history_ = train_seg_net(
            samples, self.edge_params_, config, n_classes=self.n_classes,
            val_samples=val_samples)
        return self

    def predict_proba(self, X):
        """(n_samples, C, H, W) per-pixel class distributions."""
        check_is_fitted(self, "params_")
        return np.stack([seg_net_forward(self.params_, img).probs.value
                         for img in _image_batch(X)])

    def predict(self, X):
        """(n_samples, H, W) argmax label masks."""
        check_is_fitted(self, "params_")
        return np.stack([predict_labels(self.params_, img)
                         for img in _image_batch(X)])

    def score(self, X, y):
        """Dataset mIoU of the argmax predictions."""
        from .datasets import Sample

        check_is_fitted(self, "params_")
        samples = [Sample(str(i), img, m) for i, (img, m) in
                   enumerate(zip(_image_batch(X), _mask_batch(y)))]
        return validation_miou(self.params_, samples, self.n_classes,
                               self.void_label)
