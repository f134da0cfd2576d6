"""Edge extraction, one-hot encoding, perturbation, and trimap bands
against brute-force oracles."""

import numpy as np
import pytest

from semeda.maskops import build_trimap_band, extract_edge_map, one_hot, perturb_mask

from oracles import chebyshev_band, edge_map_bruteforce


def test_constant_mask_has_no_edges():
    assert not extract_edge_map(np.full((4, 4), 2, dtype=int)).any()


def test_two_column_blocks_edge_at_the_seam():
    mask = np.zeros((4, 4), dtype=int)
    mask[:, 2:] = 1
    edges = extract_edge_map(mask)
    assert np.array_equal(edges, edge_map_bruteforce(mask))
    expected = np.zeros((4, 4), dtype=bool)
    expected[:, 1:3] = True
    assert np.array_equal(edges, expected)


def test_center_pixel_makes_all_nine_edges():
    mask = np.zeros((3, 3), dtype=int)
    mask[1, 1] = 1
    assert extract_edge_map(mask).all()


def test_edge_map_matches_bruteforce_on_1000_random_masks():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        h, w = rng.integers(2, 17, size=2)
        c = rng.integers(2, 6)
        mask = rng.integers(0, c, size=(h, w))
        if rng.random() < 0.3:  # sprinkle void pixels
            mask[rng.random(size=(h, w)) < 0.15] = 255
        assert np.array_equal(extract_edge_map(mask), edge_map_bruteforce(mask))


def test_edge_map_class_permutation_invariant():
    rng = np.random.default_rng(7)
    for _ in range(50):
        mask = rng.integers(0, 4, size=(10, 10))
        perm = rng.permutation(4)
        assert np.array_equal(extract_edge_map(mask), extract_edge_map(perm[mask]))


def test_void_pixels_are_never_edges_and_invisible():
    mask = np.zeros((3, 3), dtype=int)
    mask[1, 1] = 255
    # the void pixel differs from every neighbor, but neither it nor its
    # neighbors become edges
    assert not extract_edge_map(mask).any()


# ---------------------------------------------------------------------------
# one_hot


def test_one_hot_basic():
    mask = np.array([[1]], dtype=int)
    hot = one_hot(mask, 3)
    assert np.array_equal(hot[:, 0, 0], [0.0, 1.0, 0.0])


def test_one_hot_void_is_all_zero_and_channel_sums():
    mask = np.array([[0, 255], [2, 1]], dtype=int)
    hot = one_hot(mask, 3)
    sums = hot.sum(axis=0)
    assert np.array_equal(sums, [[1.0, 0.0], [1.0, 1.0]])


def test_one_hot_argmax_round_trip():
    rng = np.random.default_rng(3)
    mask = rng.integers(0, 5, size=(12, 9))
    hot = one_hot(mask, 5)
    assert np.array_equal(np.argmax(hot, axis=0), mask)


def test_one_hot_out_of_range_names_pixel_and_value():
    mask = np.array([[0, 7]], dtype=int)
    with pytest.raises(ValueError, match=r"7.*\(0, 1\)"):
        one_hot(mask, 3)


# ---------------------------------------------------------------------------
# perturb_mask


def test_perturb_sigma_zero_closed_form():
    hot = one_hot(np.array([[0, 1], [1, 0]], dtype=int), 2)
    soft = perturb_mask(hot, 0.0, 0)
    e = np.e
    hot_p, cold_p = e / (e + 1), 1 / (e + 1)
    assert np.allclose(soft[0, 0, 0], hot_p, atol=1e-12)
    assert np.allclose(soft[1, 0, 0], cold_p, atol=1e-12)


def test_perturb_sigma_zero_preserves_argmax():
    rng = np.random.default_rng(11)
    for seed in range(10):
        mask = rng.integers(0, 4, size=(8, 8))
        soft = perturb_mask(one_hot(mask, 4), 0.0, seed)
        assert np.array_equal(np.argmax(soft, axis=0), mask)


def test_perturb_is_deterministic_per_seed():
    hot = one_hot(np.random.default_rng(0).integers(0, 3, size=(6, 6)), 3)
    a = perturb_mask(hot, 0.5, 123)
    b = perturb_mask(hot, 0.5, 123)
    assert np.array_equal(a, b)
    c = perturb_mask(hot, 0.5, 124)
    assert not np.array_equal(a, c)


def test_perturb_outputs_distributions():
    hot = one_hot(np.zeros((5, 5), dtype=int), 3)
    soft = perturb_mask(hot, 2.0, 5)
    assert np.all(np.abs(soft.sum(axis=0) - 1.0) < 1e-12)
    assert np.all(soft >= 0)


def test_perturb_rejects_negative_sigma():
    with pytest.raises(ValueError, match="sigma"):
        perturb_mask(np.zeros((2, 3, 3)), -0.1, 0)


# ---------------------------------------------------------------------------
# trimap bands


def test_band_width_one_is_the_edge_set():
    rng = np.random.default_rng(5)
    for _ in range(20):
        edges = rng.random(size=(9, 9)) < 0.2
        assert np.array_equal(build_trimap_band(edges, 1), edges)


def test_band_single_center_pixel_width_two():
    edges = np.zeros((5, 5), dtype=bool)
    edges[2, 2] = True
    band = build_trimap_band(edges, 2)
    expected = np.zeros((5, 5), dtype=bool)
    expected[1:4, 1:4] = True
    assert np.array_equal(band, expected)


def test_band_saturates_at_image_diagonal():
    edges = np.zeros((6, 7), dtype=bool)
    edges[0, 0] = True
    assert build_trimap_band(edges, 13).all()


def test_band_matches_chebyshev_enumeration():
    rng = np.random.default_rng(9)
    for _ in range(30):
        edges = rng.random(size=(8, 8)) < 0.15
        for width in (1, 2, 3, 5):
            assert np.array_equal(build_trimap_band(edges, width),
                                  chebyshev_band(edges, width))


def test_bands_are_monotone_in_width():
    rng = np.random.default_rng(13)
    for _ in range(20):
        edges = rng.random(size=(10, 10)) < 0.1
        prev = build_trimap_band(edges, 1)
        for width in range(2, 6):
            cur = build_trimap_band(edges, width)
            assert np.all(prev <= cur)
            prev = cur


def test_empty_edge_set_gives_all_interior():
    band = build_trimap_band(np.zeros((4, 4), dtype=bool), 3)
    assert not band.any()


def test_band_rejects_bad_width():
    with pytest.raises(ValueError, match="width"):
        build_trimap_band(np.zeros((3, 3), dtype=bool), 0)
