"""Edge-aware training for semantic segmentation.

A small, fully self-contained pipeline: a tape-based autodiff core over
float64 grids, a 3-layer semantic edge detection net, a compact
encoder-decoder segmentation net, four competing training objectives
(plain cross-entropy, a multi-task edge head, direct edge-map matching,
and edge-embedding matching), two-phase training, synthetic shape data
with netpbm I/O, and confusion-matrix / boundary-band evaluation.
"""

from .autodiff import Node, Tape, backprop, finite_diff_check
from .datasets import Sample, decode_pnm, encode_pnm, gen_synthetic, load_dataset
from .estimators import EdgeDetector, SemedaSegmenter
from .losses import LossConfig, edge_ppce_loss, multitask_loss, ppce, semeda_loss, total_loss
from .maskops import build_trimap_band, extract_edge_map, one_hot, perturb_mask
from .metrics import confusion_matrix, edge_accuracy, miou, trimap_miou
from .networks import (EdgeNetParams, SegNetParams, edge_net_forward, init_params,
                       load_params, predict_labels, save_params, seg_net_forward)
from .training import TrainConfig, augment, sgd_step, train_edge_net, train_seg_net

__version__ = "0.1.0"

__all__ = [
    "EdgeDetector", "EdgeNetParams", "LossConfig", "Node", "Sample",
    "SegNetParams", "SemedaSegmenter", "Tape", "TrainConfig", "augment",
    "backprop", "build_trimap_band", "confusion_matrix", "decode_pnm",
    "edge_accuracy", "edge_net_forward", "edge_ppce_loss", "encode_pnm",
    "extract_edge_map", "finite_diff_check", "gen_synthetic", "init_params",
    "load_dataset", "load_params", "miou", "multitask_loss", "one_hot",
    "perturb_mask", "ppce", "predict_labels", "save_params", "seg_net_forward",
    "semeda_loss", "sgd_step", "total_loss", "train_edge_net", "train_seg_net",
    "trimap_miou",
]
