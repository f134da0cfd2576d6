"""Training objectives: per-pixel cross-entropy, the multi-task edge-head
baseline, direct edge-map cross-entropy, and the edge-embedding matching loss
plus their combined totals.

Every loss accepts either a tape Node (differentiable, for training) or a
plain array (returns a float).  Gradients never reach ground-truth branches
or frozen edge-net weights; they are lifted as constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .maskops import extract_edge_map, one_hot
from .networks import EdgeNetParams, edge_net_forward
from .validation import VOID_LABEL, check_grid, check_label_mask

STRATEGIES = ("ppce", "multitask", "ppce_on_edges", "semeda")
MATCH_POINTS = ("before_relu", "after_relu")


@dataclass
class LossConfig:
    """Selects the training strategy and its hyperparameters.

    lambda1..lambda3 weight the per-layer embedding terms for the "semeda"
    strategy; for "multitask" and "ppce_on_edges" only lambda1 is used, as
    the weight of the edge term.  match_point picks whether embeddings are
    compared before or after the ReLU nonlinearity; the last layer has no
    ReLU, so layer3_embedding chooses between its pre-softmax logits
    (default) and its softmax output.  reduction "mean" averages over pixels
    so the lambdas transfer across image sizes; "sum" restores raw sums.
    """

    strategy: str = "semeda"
    lambda1: float = 0.0
    lambda2: float = 1.0
    lambda3: float = 0.0
    match_point: str = "before_relu"
    distance: str = "l1"
    layer3_embedding: str = "logits"
    void_label: int = VOID_LABEL
    reduction: str = "mean"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.match_point not in MATCH_POINTS:
            raise ValueError(f"match_point must be one of {MATCH_POINTS}, "
                             f"got {self.match_point!r}")
        if self.distance not in ("l1", "l2"):
            raise ValueError(f"distance must be 'l1' or 'l2', got {self.distance!r}")
        if self.layer3_embedding not in ("logits", "softmax"):
            raise ValueError(f"layer3_embedding must be 'logits' or 'softmax', "
                             f"got {self.layer3_embedding!r}")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")

    @property
    def lambdas(self) -> tuple[float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3)


def _as_pred_node(pred, name: str) -> tuple[Node, bool]:
    """Lift a prediction onto a tape; remember whether the caller gave a Node."""
    if isinstance(pred, Node):
        return pred, True
    return Tape().constant(check_grid(pred, ndim=3, name=name)), False


def _finish(node: Node, was_node: bool):
    return node if was_node else float(node.value)


def ppce(pred, target, void_label: int = VOID_LABEL, reduction: str = "mean"):
    """Per-pixel cross-entropy of a (C, H, W) distribution against a label mask.

    Void pixels are excluded; with "mean" reduction the result is averaged
    over the non-void pixels.  Raises if every pixel is void.
    """
    node, was_node = _as_pred_node(pred, "pred")
    n_classes = node.value.shape[0]
    target = check_label_mask(target, n_classes=n_classes, void_label=void_label,
                              name="target")
    if target.shape != node.value.shape[1:]:
        raise ValueError(f"target shape {target.shape} does not match prediction "
                         f"spatial shape {node.value.shape[1:]}")
    weights = one_hot(target, n_classes, void_label=void_label)
    n_scored = int((target != void_label).sum())
    if n_scored == 0:
        raise ValueError("all pixels are void; cross-entropy is undefined")
    if reduction == "mean":
        weights = weights / n_scored
    loss = ad.scale(ad.reduce_sum(ad.cmul(ad.log_clamped(node), weights)), -1.0)
    return _finish(loss, was_node)


def _pick_embeddings(out, config: LossConfig, final_layer: int):
    """Per-layer embedding nodes according to the matching configuration.

    ReLU layers follow match_point; the final layer has no ReLU, so it uses
    its pre-softmax logits unless layer3_embedding says "softmax".
    """
    picked = []
    for i in range(len(out.pre)):
        if i == final_layer:
            picked.append(out.post[i] if config.layer3_embedding == "softmax"
                          else out.pre[i])
        elif config.match_point == "after_relu":
            picked.append(out.post[i])
        else:
            picked.append(out.pre[i])
    return picked


def semeda_loss(pred_mask, gt_mask, edge_net: EdgeNetParams, config: LossConfig):
    """Distance between edge-net embeddings of the predicted and ground-truth
    masks, weighted per layer by lambda1..lambda3.

    Both masks are run through the frozen edge net; only the prediction
    branch carries gradients.  Identical masks give exactly zero.
    """
    node, was_node = _as_pred_node(pred_mask, "pred_mask")
    tape = node.tape
    gt = gt_mask.value if isinstance(gt_mask, Node) else \
        check_grid(gt_mask, ndim=3, name="gt_mask")
    if gt.shape != node.value.shape:
        raise ValueError(f"mask shapes differ: {node.value.shape} vs {gt.shape}")
    lams = config.lambdas
    total = tape.constant(0.0)
    if not any(lam > 0 for lam in lams):
        return _finish(total, was_node)
    depth = max(i for i, lam in enumerate(lams) if lam > 0) + 1
    final = len(edge_net.layers) - 1
    pred_emb = _pick_embeddings(
        edge_net_forward(edge_net, node, n_layers=depth), config, final)
    gt_emb = _pick_embeddings(
        edge_net_forward(edge_net, tape.constant(gt), n_layers=depth), config, final)
    n_pixels = node.value.shape[1] * node.value.shape[2]
    for lam, ep, eg in zip(lams, pred_emb, gt_emb):
        if lam == 0:
            continue
        diff = ad.sub(ep, eg)
        dist = ad.absval(diff) if config.distance == "l1" else ad.square(diff)
        weight = lam / n_pixels if config.reduction == "mean" else lam
        total = ad.add(total, ad.scale(ad.reduce_sum(dist), weight))
    return _finish(total, was_node)


def edge_ppce_loss(pred_mask, edge_net: EdgeNetParams, gt_edges, valid=None,
                   void_label: int = VOID_LABEL, reduction: str = "mean"):
    """Cross-entropy between the edge map predicted from a soft mask and a
    ground-truth edge map (edge = class 1, non-edge = class 0).

    Pixels where `valid` is False (e.g. void in the source labels) are
    excluded from the loss.
    """
    node, was_node = _as_pred_node(pred_mask, "pred_mask")
    out = edge_net_forward(edge_net, node)
    target = np.asarray(gt_edges, dtype=np.int64)
    if valid is not None:
        target = np.where(np.asarray(valid, dtype=bool), target, void_label)
    loss = ppce(out.edge_probs, target, void_label=void_label, reduction=reduction)
    return _finish(loss, was_node)


def multitask_loss(seg_pred, edge_head_pred, target, gt_edges, lambda1: float,
                   valid=None, void_label: int = VOID_LABEL, reduction: str = "mean"):
    """Segmentation cross-entropy plus lambda1 times the edge-head
    cross-entropy; gradients reach both heads and the shared backbone."""
    seg_node, was_node = _as_pred_node(seg_pred, "seg_pred")
    loss = ppce(seg_node, target, void_label=void_label, reduction=reduction)
    if lambda1 != 0:
        if isinstance(edge_head_pred, Node):
            edge_node = edge_head_pred
            if edge_node.tape is not seg_node.tape:
                raise ValueError("seg_pred and edge_head_pred must share a tape")
        else:
            edge_node = seg_node.tape.constant(
                check_grid(edge_head_pred, ndim=3, name="edge_head_pred"))
        edge_target = np.asarray(gt_edges, dtype=np.int64)
        if valid is not None:
            edge_target = np.where(np.asarray(valid, dtype=bool), edge_target, void_label)
        edge_loss = ppce(edge_node, edge_target, void_label=void_label,
                         reduction=reduction)
        loss = ad.add(loss, ad.scale(edge_loss, lambda1))
    return _finish(loss, was_node)


def total_loss(pred_mask, target, gt_one_hot, edge_net: EdgeNetParams | None,
               config: LossConfig):
    """Per-pixel cross-entropy plus the configured edge-aware term.

    Covers the "ppce", "ppce_on_edges" and "semeda" strategies; the
    multi-task baseline has its own head and uses multitask_loss instead.
    """
    if config.strategy == "multitask":
        raise ValueError("use multitask_loss for the multi-task strategy")
    node, was_node = _as_pred_node(pred_mask, "pred_mask")
    target = check_label_mask(target, n_classes=node.value.shape[0],
                              void_label=config.void_label, name="target")
    loss = ppce(node, target, void_label=config.void_label, reduction=config.reduction)
    if config.strategy in ("semeda", "ppce_on_edges") and edge_net is None:
        raise ValueError(f"strategy {config.strategy!r} needs a trained edge net")
    if config.strategy == "semeda":
        extra = semeda_loss(node, gt_one_hot, edge_net, config)
        loss = ad.add(loss, extra)
    elif config.strategy == "ppce_on_edges" and config.lambda1 != 0:
        edges = extract_edge_map(target, void_label=config.void_label)
        extra = edge_ppce_loss(node, edge_net, edges, valid=target != config.void_label,
                               void_label=config.void_label, reduction=config.reduction)
        loss = ad.add(loss, ad.scale(extra, config.lambda1))
    return _finish(loss, was_node)
