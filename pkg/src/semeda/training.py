"""Two-phase training: first the edge net on perturbed ground-truth masks,
then the segmentation net with the selected strategy while the edge net
stays frozen.

All randomness is drawn from per-purpose streams keyed by
(seed, namespace, epoch, sample index), so runs are bitwise reproducible
and sample order never leaks between epochs or phases.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tape, backprop
from .losses import LossConfig, multitask_loss, ppce, total_loss
from .maskops import extract_edge_map, one_hot, perturb_mask
from .metrics import confusion_matrix, miou
from .networks import (init_params, param_arrays, param_names, predict_labels,
                       save_params, seg_net_forward, edge_net_forward,
                       with_param_arrays)
from .validation import as_rng, check_image, check_label_mask

# rng stream namespaces; sample streams are keyed per (epoch, index) so
# concurrent prefetching could never reorder draws
_NS_EDGE_INIT, _NS_SEG_INIT = 1, 2
_NS_EDGE_SHUFFLE, _NS_PERTURB = 3, 4
_NS_SEG_SHUFFLE, _NS_AUGMENT = 5, 6


@dataclass
class TrainConfig:
    """Hyperparameters for both phases plus reproducibility knobs."""

    batch_size: int = 8
    edge_epochs: int = 30
    seg_epochs: int = 60
    edge_lr: float = 1e-1
    seg_lr: float = 1e-2
    momentum: float = 0.9
    sigma: float = 0.5
    seed: int = 0
    mirror: bool = True
    crop_size: int | None = None
    loss: LossConfig = field(default_factory=LossConfig)
    lr_multipliers: dict = field(default_factory=dict)
    edge_checkpoint: str | None = None
    seg_checkpoint: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.edge_lr <= 0 or self.seg_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.edge_epochs < 0 or self.seg_epochs < 0:
            raise ValueError("epoch counts must be nonnegative")
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        if self.seed < 0:
            raise ValueError(f"seed must be nonnegative, got {self.seed}")


def _stream(seed: int, *key) -> np.random.Generator:
    return as_rng(np.random.SeedSequence([seed, *key]))


def sgd_step(params, grads, lr: float, momentum: float, velocity,
             lr_scales=None):
    """One SGD-with-momentum update: v <- momentum*v + g; p <- p - lr*v.

    Operates on parallel lists of arrays and returns (new_params,
    new_velocity) without mutating the inputs.
    """
    if not (len(params) == len(grads) == len(velocity)):
        raise ValueError(f"got {len(params)} params, {len(grads)} grads, "
                         f"{len(velocity)} velocity buffers")
    if lr_scales is None:
        lr_scales = [1.0] * len(params)
    new_p, new_v = [], []
    for p, g, v, s in zip(params, grads, velocity, lr_scales):
        p, g, v = np.asarray(p, dtype=np.float64), np.asarray(g), np.asarray(v)
        if p.shape != g.shape or p.shape != v.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, "
                             f"velocity {v.shape}")
        v = momentum * v + g
        new_v.append(v)
        new_p.append(p - lr * s * v)
    return new_p, new_v


def augment(image, mask, rng, mirror: bool = True, crop_size: int | None = None):
    """Random horizontal mirror and random crop, identical on image and mask.

    The mask is sliced, never interpolated, so labels are never blended.
    Draw order is fixed (mirror coin first, then crop offsets).
    """
    image = check_image(image)
    mask = check_label_mask(mask)
    if image.shape[1:] != mask.shape:
        raise ValueError(f"image {image.shape[1:]} and mask {mask.shape} sizes differ")
    rng = as_rng(rng)
    if mirror and rng.random() < 0.5:
        image = image[:, :, ::-1].copy()
        mask = mask[:, ::-1].copy()
    if crop_size is not None:
        h, w = mask.shape
        if crop_size > h or crop_size > w:
            raise ValueError(f"crop size {crop_size} exceeds image size {h}x{w}")
        top = int(rng.integers(0, h - crop_size + 1))
        left = int(rng.integers(0, w - crop_size + 1))
        image = image[:, top:top + crop_size, left:left + crop_size].copy()
        mask = mask[top:top + crop_size, left:left + crop_size].copy()
    return image, mask


def _flat_grad_nodes(out):
    nodes = [n for pair in out.param_nodes for n in pair]
    if getattr(out, "head_nodes", None) is not None:
        nodes.extend(out.head_nodes)
    return nodes


def _infer_classes(masks, void_label: int) -> int:
    labels = [m[m != void_label] for m in masks]
    top = max((int(l.max()) for l in labels if l.size), default=-1)
    if top < 0:
        raise ValueError("no labelled pixels in the dataset")
    return max(top + 1, 2)


def train_edge_net(masks, config: TrainConfig, n_classes: int | None = None):
    """Phase 1: fit the edge net to map perturbed one-hot masks to their
    ground-truth edge maps.

    Returns (params, history) where history holds one dict per epoch with
    the mean training loss.  Void pixels are excluded from the loss.
    """
    void = config.loss.void_label
    masks = [check_label_mask(m, void_label=void) for m in masks]
    if not masks:
        raise ValueError("mask dataset is empty")
    if n_classes is None:
        n_classes = _infer_classes(masks, void)
    masks = [check_label_mask(m, n_classes=n_classes, void_label=void) for m in masks]

    params = init_params("edge", n_classes, _stream(config.seed, _NS_EDGE_INIT))
    velocity = [np.zeros_like(a) for a in param_arrays(params)]
    onehots = [one_hot(m, n_classes, void_label=void) for m in masks]
    targets = [np.where(m == void, void, extract_edge_map(m, void_label=void)
                        .astype(np.int64)) for m in masks]

    history = []
    for epoch in range(config.edge_epochs):
        t0 = time.perf_counter()
        order = _stream(config.seed, _NS_EDGE_SHUFFLE, epoch).permutation(len(masks))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            grad_sum = [np.zeros_like(a) for a in param_arrays(params)]
            for idx in batch:
                idx = int(idx)
                noisy = perturb_mask(onehots[idx], config.sigma,
                                     _stream(config.seed, _NS_PERTURB, epoch, idx))
                tape = Tape()
                out = edge_net_forward(params, tape.constant(noisy), trainable=True)
                loss = ppce(out.edge_probs, targets[idx], void_label=void,
                            reduction=config.loss.reduction)
                grads = backprop(tape, loss)
                losses.append(float(loss.value))
                for j, node in enumerate(_flat_grad_nodes(out)):
                    g = grads.get(node.idx)
                    if g is not None:
                        grad_sum[j] += g
            mean_grads = [g / len(batch) for g in grad_sum]
            new_arrays, velocity = sgd_step(param_arrays(params), mean_grads,
                                            config.edge_lr, config.momentum, velocity)
            params = with_param_arrays(params, new_arrays)
        history.append({"epoch": epoch, "phase": "edge",
                        "loss": float(np.mean(losses)), "val_miou": None,
                        "wall_seconds": time.perf_counter() - t0})
    if config.edge_checkpoint:
        save_params(params, config.edge_checkpoint)
    return params, history


def validation_miou(params, samples, n_classes: int, void_label: int) -> float:
    """mIoU of argmax predictions accumulated over a list of samples."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for s in samples:
        cm += confusion_matrix(predict_labels(params, s.image), s.mask,
                               n_classes, void_label=void_label)
    return miou(cm)[0]


def train_seg_net(samples, edge_params, config: TrainConfig,
                  n_classes: int | None = None, val_samples=None):
    """Phase 2: fit the segmentation net with the configured strategy while
    the edge net (if any) stays frozen.

    Returns (params, history); history rows carry the mean training loss and,
    when val_samples is given, the validation mIoU per epoch.
    """
    strategy = config.loss.strategy
    void = config.loss.void_label
    if not samples:
        raise ValueError("training dataset is empty")
    if strategy in ("semeda", "ppce_on_edges") and edge_params is None:
        raise ValueError(f"strategy {strategy!r} requires a trained edge net")
    if n_classes is None:
        n_classes = _infer_classes([s.mask for s in samples], void)
    if edge_params is not None and edge_params.n_classes != n_classes:
        raise ValueError(f"edge net was trained for {edge_params.n_classes} classes, "
                         f"dataset has {n_classes}")

    params = init_params("seg", n_classes, _stream(config.seed, _NS_SEG_INIT),
                         edge_head=strategy == "multitask")
    names = param_names(params)
    lr_scales = [float(config.lr_multipliers.get(n, 1.0)) for n in names]
    velocity = [np.zeros_like(a) for a in param_arrays(params)]

    history = []
    for epoch in range(config.seg_epochs):
        t0 = time.perf_counter()
        order = _stream(config.seed, _NS_SEG_SHUFFLE, epoch).permutation(len(samples))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            grad_sum = [np.zeros_like(a) for a in param_arrays(params)]
            for idx in batch:
                idx = int(idx)
                image, mask = samples[idx].image, samples[idx].mask
                if config.mirror or config.crop_size is not None:
                    image, mask = augment(image, mask,
                                          _stream(config.seed, _NS_AUGMENT, epoch, idx),
                                          mirror=config.mirror,
                                          crop_size=config.crop_size)
                tape = Tape()
                out = seg_net_forward(params, tape.constant(check_image(image)),
                                      trainable=True)
                if strategy == "ppce":
                    loss = ppce(out.probs, mask, void_label=void,
                                reduction=config.loss.reduction)
                elif strategy == "multitask":
                    edges = extract_edge_map(mask, void_label=void)
                    loss = multitask_loss(out.probs, out.edge_probs, mask, edges,
                                          config.loss.lambda1, valid=mask != void,
                                          void_label=void,
                                          reduction=config.loss.reduction)
                else:
                    gt_hot = one_hot(mask, n_classes, void_label=void)
                    loss = total_loss(out.probs, mask, gt_hot, edge_params,
                                      config.loss)
                grads = backprop(tape, loss)
                losses.append(float(loss.value))
                for j, node in enumerate(_flat_grad_nodes(out)):
                    g = grads.get(node.idx)
                    if g is not None:
                        grad_sum[j] += g
            mean_grads = [g / len(batch) for g in grad_sum]
            new_arrays, velocity = sgd_step(param_arrays(params), mean_grads,
                                            config.seg_lr, config.momentum,
                                            velocity, lr_scales)
            params = with_param_arrays(params, new_arrays)
        val = validation_miou(params, val_samples, n_classes, void) \
            if val_samples else None
        history.append({"epoch": epoch, "phase": "seg",
                        "loss": float(np.mean(losses)), "val_miou": val,
                        "wall_seconds": time.perf_counter() - t0})
    if config.seg_checkpoint:
        save_params(params, config.seg_checkpoint)
    return params, history


def write_metrics_csv(history, path) -> None:
    """Deterministic per-epoch metrics (epoch, phase, loss, val_miou).

    Wall-clock timing is intentionally kept out of this file so repeated
    runs with one seed are byte-identical; see write_timing_csv.
    """
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "phase", "loss", "val_miou"])
        for row in history:
            val = "" if row.get("val_miou") is None else f"{row['val_miou']:.12g}"
            writer.writerow([row["epoch"], row["phase"], f"{row['loss']:.12g}", val])


def write_timing_csv(history, path) -> None:
    """Wall-seconds sidecar; excluded from the determinism contract."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "phase", "wall_seconds"])
        for row in history:
            writer.writerow([row["epoch"], row["phase"],
                             f"{row.get('wall_seconds', 0.0):.3f}"])
