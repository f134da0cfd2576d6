"""Finite-difference validation suite for every differentiable primitive and
each composite loss, usable from tests and from the `gradcheck` CLI command.

Random probe points keep a margin away from the ReLU/abs kinks so the
central-difference oracle measures the smooth branch, matching the
subgradient-at-zero convention.
"""

from __future__ import annotations

import zlib

import numpy as np

from . import autodiff as ad
from .autodiff import finite_diff_check
from .losses import LossConfig, edge_ppce_loss, ppce, semeda_loss, total_loss
from .maskops import extract_edge_map, one_hot
from .networks import init_params, seg_net_forward

KINK_MARGIN = 0.05
TOLERANCE = 1e-3


def _away_from_kinks(rng, shape):
    x = rng.normal(0.0, 1.0, size=shape)
    return np.where(np.abs(x) < KINK_MARGIN, np.sign(x) * KINK_MARGIN + x, x)


def _soft_mask(rng, n_classes, h, w):
    """Random per-pixel distribution with probabilities away from the log floor."""
    logits = rng.normal(0.0, 1.0, size=(n_classes, h, w))
    e = np.exp(logits - logits.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def check_primitives(n_instances: int = 20, seed: int = 0) -> dict[str, float]:
    """Max relative finite-difference error per primitive over random probes."""
    results: dict[str, float] = {}

    def run(name, f_builder, point_builder):
        worst = 0.0
        for i in range(n_instances):
            rng = np.random.default_rng((seed, zlib.crc32(name.encode()), i))
            point = point_builder(rng)
            worst = max(worst, finite_diff_check(f_builder(rng), point))
        results[name] = worst

    def fixed_conv_input(rng):
        w, b = rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
        return lambda x: ad.reduce_sum(ad.square(ad.conv2d(x, w, b, 2)))

    def fixed_conv_kernel(rng):
        x, b = rng.normal(size=(2, 6, 5)), rng.normal(size=3)
        return lambda w: ad.reduce_sum(ad.square(ad.conv2d(x, w, b)))

    def fixed_conv_bias(rng):
        x, w = rng.normal(size=(2, 4, 4)), rng.normal(size=(3, 2, 1, 1))
        return lambda b: ad.reduce_sum(ad.square(ad.conv2d(x, w, b)))

    run("conv2d_input", fixed_conv_input, lambda rng: rng.normal(size=(2, 5, 6)))
    run("conv2d_kernel", fixed_conv_kernel,
        lambda rng: rng.normal(size=(3, 2, 3, 3)))
    run("conv2d_bias", fixed_conv_bias, lambda rng: rng.normal(size=3))
    run("relu",
        lambda rng: (lambda x: ad.reduce_sum(ad.square(ad.relu(x)))),
        lambda rng: _away_from_kinks(rng, (4, 8, 8)))
    run("channel_softmax",
        lambda rng: (lambda x: ad.reduce_sum(ad.square(ad.channel_softmax(x)))),
        lambda rng: rng.normal(size=(4, 6, 6)))
    run("bilinear_upsample",
        lambda rng: (lambda x: ad.reduce_sum(ad.square(ad.bilinear_upsample(x, 2)))),
        lambda rng: rng.normal(size=(3, 4, 5)))
    def fixed_add_scale(rng):
        other = rng.normal(size=(3, 5, 5))
        return lambda x: ad.reduce_sum(ad.square(ad.add(ad.scale(x, 1.7), other)))

    run("add_scale", fixed_add_scale, lambda rng: rng.normal(size=(3, 5, 5)))
    run("abs",
        lambda rng: (lambda x: ad.reduce_sum(ad.absval(x))),
        lambda rng: _away_from_kinks(rng, (4, 8, 8)))
    run("log",
        lambda rng: (lambda x: ad.reduce_sum(ad.log_clamped(x))),
        lambda rng: rng.uniform(0.1, 2.0, size=(3, 6, 6)))
    return results


def check_losses(n_instances: int = 20, seed: int = 0) -> dict[str, float]:
    """Max relative finite-difference error for each composite loss, probed
    at the soft-mask (or image) input that training differentiates."""
    results: dict[str, float] = {}
    n_classes, h, w = 2, 6, 6

    def run(name, make):
        worst = 0.0
        for i in range(n_instances):
            rng = np.random.default_rng((seed, zlib.crc32(name.encode()), i))
            f, point = make(rng)
            worst = max(worst, finite_diff_check(f, point))
        results[name] = worst

    def random_mask(rng):
        return rng.integers(0, n_classes, size=(h, w))

    def run_cfg(name, cfg_kwargs):
        def make(rng):
            edge_net = init_params("edge", n_classes, rng.integers(2**31))
            target = random_mask(rng)
            gt_hot = one_hot(target, n_classes)
            cfg = LossConfig(**cfg_kwargs)
            return (lambda x: total_loss(ad.channel_softmax(x), target, gt_hot,
                                         edge_net, cfg),
                    rng.normal(size=(n_classes, h, w)))
        run(name, make)

    def make_ppce(rng):
        target = random_mask(rng)
        return (lambda x: ppce(ad.channel_softmax(x), target),
                rng.normal(size=(n_classes, h, w)))
    run("ppce", make_ppce)

    def make_edge_ppce(rng):
        edge_net = init_params("edge", n_classes, rng.integers(2**31))
        edges = extract_edge_map(random_mask(rng))
        return (lambda x: edge_ppce_loss(ad.channel_softmax(x), edge_net, edges),
                rng.normal(size=(n_classes, h, w)))
    run("edge_ppce", make_edge_ppce)

    def make_semeda(rng):
        edge_net = init_params("edge", n_classes, rng.integers(2**31))
        gt_hot = one_hot(random_mask(rng), n_classes)
        cfg = LossConfig(lambda1=0.7, lambda2=1.0, lambda3=0.3)
        return (lambda x: semeda_loss(ad.channel_softmax(x), gt_hot, edge_net, cfg),
                rng.normal(size=(n_classes, h, w)))
    run("semeda", make_semeda)

    run_cfg("total_semeda", dict(strategy="semeda", lambda1=0.5, lambda2=1.0,
                                 lambda3=0.25))
    run_cfg("total_ppce_on_edges", dict(strategy="ppce_on_edges", lambda1=1.0))

    def make_end_to_end(rng):
        seg = init_params("seg", n_classes, rng.integers(2**31))
        edge_net = init_params("edge", n_classes, rng.integers(2**31))
        target = rng.integers(0, n_classes, size=(6, 6))
        gt_hot = one_hot(target, n_classes)
        cfg = LossConfig(strategy="semeda", lambda2=1.0)

        def f(x):
            out = seg_net_forward(seg, x)
            return total_loss(out.probs, target, gt_hot, edge_net, cfg)
        return f, rng.uniform(0.0, 1.0, size=(3, 6, 6))
    run("seg_net_end_to_end", make_end_to_end)
    return results


def run_suite(n_instances: int = 20, seed: int = 0) -> dict[str, float]:
    results = check_primitives(n_instances, seed)
    results.update(check_losses(n_instances, seed))
    return results
