"""Loss values against closed forms and independent recomputations, plus
gradient routing (frozen edge net, ground-truth branch)."""

import numpy as np
import pytest

from semeda import autodiff as ad
from semeda.autodiff import Tape, backprop, finite_diff_check
from semeda.losses import (LossConfig, edge_ppce_loss, multitask_loss, ppce,
                           semeda_loss, total_loss)
from semeda.maskops import extract_edge_map, one_hot
from semeda.networks import (edge_net_forward, init_params, param_arrays,
                             with_param_arrays)

LN2 = np.log(2.0)


def soft_mask(rng, c, h, w):
    logits = rng.normal(size=(c, h, w))
    e = np.exp(logits - logits.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


# ---------------------------------------------------------------------------
# ppce


def test_ppce_perfect_prediction_hits_log_floor():
    mask = np.array([[0, 1], [1, 0]], dtype=int)
    assert ppce(one_hot(mask, 2), mask) <= 1e-11


def test_ppce_single_pixel_closed_form():
    pred = np.array([[[0.5]], [[0.5]]])
    target = np.zeros((1, 1), dtype=int)
    assert abs(ppce(pred, target) - LN2) < 1e-12


def test_ppce_void_pixel_excluded():
    pred = np.stack([np.array([[0.5, 0.9]]), np.array([[0.5, 0.1]])])
    target = np.array([[0, 255]], dtype=int)
    assert abs(ppce(pred, target) - LN2) < 1e-12


def test_ppce_all_void_rejected():
    with pytest.raises(ValueError, match="void"):
        ppce(np.full((2, 1, 2), 0.5), np.full((1, 2), 255, dtype=int))


def test_ppce_sum_reduction_scales_by_pixels():
    rng = np.random.default_rng(0)
    pred = soft_mask(rng, 3, 4, 4)
    target = rng.integers(0, 3, size=(4, 4))
    assert np.isclose(ppce(pred, target, reduction="sum"),
                      16 * ppce(pred, target), atol=1e-12)


def test_ppce_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    target = rng.integers(0, 2, size=(5, 5))
    err = finite_diff_check(lambda x: ppce(ad.channel_softmax(x), target),
                            rng.normal(size=(2, 5, 5)))
    assert err < 1e-3


def test_ppce_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="spatial"):
        ppce(np.full((2, 3, 3), 0.5), np.zeros((4, 4), dtype=int))


# ---------------------------------------------------------------------------
# semeda loss


def test_semeda_zero_on_identical_masks():
    rng = np.random.default_rng(2)
    edge_net = init_params("edge", 3, 0)
    mask = soft_mask(rng, 3, 6, 6)
    for match in ("before_relu", "after_relu"):
        cfg = LossConfig(lambda1=1.0, lambda2=0.5, lambda3=0.25, match_point=match)
        assert semeda_loss(mask, mask.copy(), edge_net, cfg) == 0.0


def test_semeda_zero_lambdas_give_zero():
    rng = np.random.default_rng(3)
    edge_net = init_params("edge", 2, 1)
    cfg = LossConfig(lambda1=0.0, lambda2=0.0, lambda3=0.0)
    assert semeda_loss(soft_mask(rng, 2, 4, 4), soft_mask(rng, 2, 4, 4),
                       edge_net, cfg) == 0.0


@pytest.mark.parametrize("match_point", ["before_relu", "after_relu"])
@pytest.mark.parametrize("distance", ["l1", "l2"])
def test_semeda_matches_duplicate_path_recomputation(match_point, distance):
    rng = np.random.default_rng(4)
    edge_net = init_params("edge", 3, 5)
    pred = soft_mask(rng, 3, 5, 7)
    gt = one_hot(rng.integers(0, 3, size=(5, 7)), 3)
    lams = (0.3, 1.0, 0.6)
    cfg = LossConfig(lambda1=lams[0], lambda2=lams[1], lambda3=lams[2],
                     match_point=match_point, distance=distance)
    got = semeda_loss(pred, gt, edge_net, cfg)

    # independent recomputation: run the net twice, pick embeddings by hand
    out_p = edge_net_forward(edge_net, pred)
    out_g = edge_net_forward(edge_net, gt)
    expected = 0.0
    for layer, lam in enumerate(lams):
        if layer < 2 and match_point == "after_relu":
            ep, eg = out_p.post[layer].value, out_g.post[layer].value
        else:
            ep, eg = out_p.pre[layer].value, out_g.pre[layer].value
        d = np.abs(ep - eg) if distance == "l1" else (ep - eg) ** 2
        expected += lam * d.sum() / (5 * 7)
    assert np.isclose(got, expected, rtol=1e-12, atol=1e-12)


def test_semeda_layer3_softmax_reading():
    rng = np.random.default_rng(5)
    edge_net = init_params("edge", 2, 6)
    pred, gt = soft_mask(rng, 2, 4, 4), soft_mask(rng, 2, 4, 4)
    cfg = LossConfig(lambda1=0, lambda2=0, lambda3=1.0, layer3_embedding="softmax")
    got = semeda_loss(pred, gt, edge_net, cfg)
    out_p = edge_net_forward(edge_net, pred)
    out_g = edge_net_forward(edge_net, gt)
    expected = np.abs(out_p.post[2].value - out_g.post[2].value).sum() / 16
    assert np.isclose(got, expected, rtol=1e-12)


def test_semeda_is_pseudometric():
    rng = np.random.default_rng(6)
    edge_net = init_params("edge", 2, 7)
    cfg = LossConfig(lambda1=0.5, lambda2=1.0, lambda3=0.25)
    for _ in range(5):
        a, b = soft_mask(rng, 2, 5, 5), soft_mask(rng, 2, 5, 5)
        ab = semeda_loss(a, b, edge_net, cfg)
        ba = semeda_loss(b, a, edge_net, cfg)
        assert ab >= 0
        assert np.isclose(ab, ba, rtol=1e-12)
        assert semeda_loss(a, a, edge_net, cfg) == 0.0


def test_semeda_linear_in_each_lambda():
    rng = np.random.default_rng(7)
    edge_net = init_params("edge", 3, 8)
    a, b = soft_mask(rng, 3, 6, 6), soft_mask(rng, 3, 6, 6)
    one = semeda_loss(a, b, edge_net, LossConfig(lambda2=1.0, lambda1=0, lambda3=0))
    two = semeda_loss(a, b, edge_net, LossConfig(lambda2=2.0, lambda1=0, lambda3=0))
    assert np.isclose(two, 2 * one, rtol=1e-12)


def test_semeda_gradients_skip_gt_branch_and_edge_weights():
    rng = np.random.default_rng(8)
    edge_net = init_params("edge", 2, 9)
    gt = one_hot(rng.integers(0, 2, size=(4, 4)), 2)
    tape = Tape()
    pred = tape.param(soft_mask(rng, 2, 4, 4))
    loss = semeda_loss(pred, gt, edge_net, LossConfig(lambda2=1.0))
    grads = backprop(tape, loss)
    assert pred.idx in grads
    assert np.isfinite(grads[pred.idx]).all()
    # the prediction is the only leaf with a gradient buffer: the frozen
    # weights and the gt branch are constants, so every other gradient key
    # must be an intermediate node recorded on the tape
    intermediates = {e.out for e in tape.entries}
    assert set(grads) <= {pred.idx} | intermediates


def test_semeda_reduction_sum_restores_raw_sums():
    rng = np.random.default_rng(9)
    edge_net = init_params("edge", 2, 10)
    a, b = soft_mask(rng, 2, 4, 4), soft_mask(rng, 2, 4, 4)
    mean_val = semeda_loss(a, b, edge_net, LossConfig(lambda2=1.0))
    sum_val = semeda_loss(a, b, edge_net, LossConfig(lambda2=1.0, reduction="sum"))
    assert np.isclose(sum_val, 16 * mean_val, rtol=1e-12)


# ---------------------------------------------------------------------------
# edge ppce


def test_edge_ppce_zero_net_gives_ln2():
    params = init_params("edge", 3, 0)
    zeroed = with_param_arrays(params, [np.zeros_like(a) for a in param_arrays(params)])
    rng = np.random.default_rng(10)
    pred = soft_mask(rng, 3, 5, 5)
    edges = extract_edge_map(rng.integers(0, 3, size=(5, 5)))
    assert abs(edge_ppce_loss(pred, zeroed, edges) - LN2) < 1e-12


def test_edge_ppce_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    edge_net = init_params("edge", 2, 12)
    edges = extract_edge_map(rng.integers(0, 2, size=(4, 4)))
    err = finite_diff_check(
        lambda x: edge_ppce_loss(ad.channel_softmax(x), edge_net, edges),
        rng.normal(size=(2, 4, 4)))
    assert err < 1e-3


def test_edge_ppce_valid_mask_excludes_pixels():
    params = init_params("edge", 2, 13)
    zeroed = with_param_arrays(params, [np.zeros_like(a) for a in param_arrays(params)])
    pred = np.full((2, 2, 2), 0.5)
    edges = np.zeros((2, 2), dtype=bool)
    valid = np.array([[True, False], [True, True]])
    # uniform net: every scored pixel contributes ln 2 regardless
    assert abs(edge_ppce_loss(pred, zeroed, edges, valid=valid) - LN2) < 1e-12


# ---------------------------------------------------------------------------
# multitask


def test_multitask_lambda_zero_equals_plain_ppce():
    rng = np.random.default_rng(12)
    seg_pred = soft_mask(rng, 3, 4, 4)
    edge_pred = soft_mask(rng, 2, 4, 4)
    target = rng.integers(0, 3, size=(4, 4))
    edges = extract_edge_map(target)
    assert multitask_loss(seg_pred, edge_pred, target, edges, 0.0) \
        == ppce(seg_pred, target)


def test_multitask_perfect_predictions():
    target = np.array([[0, 1], [2, 0]], dtype=int)
    edges = extract_edge_map(target)
    seg_pred = one_hot(target, 3)
    edge_pred = one_hot(edges.astype(np.int64), 2)
    assert multitask_loss(seg_pred, edge_pred, target, edges, 1.0) <= 2e-11


def test_multitask_two_term_hand_sum():
    seg_pred = np.array([[[0.5]], [[0.5]]])
    edge_pred = np.array([[[0.25]], [[0.75]]])
    target = np.zeros((1, 1), dtype=int)
    edges = np.ones((1, 1), dtype=bool)
    expected = LN2 + 1.0 * (-np.log(0.75))
    got = multitask_loss(seg_pred, edge_pred, target, edges, 1.0)
    assert abs(got - expected) < 1e-12


# ---------------------------------------------------------------------------
# total loss


def test_total_all_lambda_zero_equals_ppce_bitwise():
    rng = np.random.default_rng(13)
    edge_net = init_params("edge", 3, 14)
    pred = soft_mask(rng, 3, 6, 6)
    target = rng.integers(0, 3, size=(6, 6))
    cfg = LossConfig(strategy="semeda", lambda1=0, lambda2=0, lambda3=0)
    assert total_loss(pred, target, one_hot(target, 3), edge_net, cfg) \
        == ppce(pred, target)


def test_total_perfect_prediction_floor():
    target = np.array([[0, 1], [1, 0]], dtype=int)
    hot = one_hot(target, 2)
    edge_net = init_params("edge", 2, 15)
    cfg = LossConfig(strategy="semeda", lambda2=1.0)
    assert total_loss(hot, target, hot, edge_net, cfg) <= 1e-11


def test_total_is_sum_of_parts_exactly():
    rng = np.random.default_rng(16)
    edge_net = init_params("edge", 2, 17)
    pred = soft_mask(rng, 2, 5, 5)
    target = rng.integers(0, 2, size=(5, 5))
    hot = one_hot(target, 2)
    cfg = LossConfig(strategy="semeda", lambda1=0.5, lambda2=1.0, lambda3=0.25)
    total = total_loss(pred, target, hot, edge_net, cfg)
    assert total == ppce(pred, target) + semeda_loss(pred, hot, edge_net, cfg)


def test_total_ppce_on_edges_strategy():
    rng = np.random.default_rng(18)
    edge_net = init_params("edge", 2, 19)
    pred = soft_mask(rng, 2, 5, 5)
    target = rng.integers(0, 2, size=(5, 5))
    cfg = LossConfig(strategy="ppce_on_edges", lambda1=2.0)
    total = total_loss(pred, target, one_hot(target, 2), edge_net, cfg)
    edges = extract_edge_map(target)
    expected = ppce(pred, target) + 2.0 * edge_ppce_loss(pred, edge_net, edges,
                                                         valid=target != 255)
    assert np.isclose(total, expected, rtol=1e-12)


def test_total_requires_edge_net():
    cfg = LossConfig(strategy="semeda", lambda2=1.0)
    target = np.zeros((2, 2), dtype=int)
    with pytest.raises(ValueError, match="edge net"):
        total_loss(np.full((2, 2, 2), 0.5), target, one_hot(target, 2), None, cfg)


def test_total_gradient_matches_finite_differences():
    rng = np.random.default_rng(20)
    edge_net = init_params("edge", 2, 21)
    target = rng.integers(0, 2, size=(4, 4))
    hot = one_hot(target, 2)
    cfg = LossConfig(strategy="semeda", lambda1=1.0, lambda2=0.5, lambda3=0.25)
    err = finite_diff_check(
        lambda x: total_loss(ad.channel_softmax(x), target, hot, edge_net, cfg),
        rng.normal(size=(2, 4, 4)))
    assert err < 1e-3


# ---------------------------------------------------------------------------
# LossConfig


def test_config_validation():
    with pytest.raises(ValueError, match="strategy"):
        LossConfig(strategy="dice")
    with pytest.raises(ValueError, match="match_point"):
        LossConfig(match_point="middle")
    with pytest.raises(ValueError, match="lambda2"):
        LossConfig(lambda2=-1.0)
    with pytest.raises(ValueError, match="reduction"):
        LossConfig(reduction="median")


def test_table_configurations_expressible():
    rows = [("ppce", None, None)]
    rows += [("multitask", lam, None) for lam in (0.5, 1.0, 5.0)]
    rows += [("ppce_on_edges", lam, None) for lam in (1.0, 5.0)]
    semeda_rows = [(1, 0, 0), (0, 0.5, 0), (0.5, 0, 0), (0, 1, 0), (0, 0, 1),
                   (1, 0.5, 0.25), (0.25, 0.5, 1)]
    for match in ("before_relu", "after_relu"):
        rows += [("semeda", lams, match) for lams in semeda_rows]
    for strategy, lams, match in rows:
        kwargs = {"strategy": strategy}
        if strategy in ("multitask", "ppce_on_edges"):
            kwargs["lambda1"] = lams
        elif strategy == "semeda":
            kwargs.update(lambda1=lams[0], lambda2=lams[1], lambda3=lams[2],
                          match_point=match)
        cfg = LossConfig(**kwargs)
        assert cfg.strategy == strategy
