"""Pure geometry on label masks: edge extraction, one-hot encoding,
training-time mask perturbation, and boundary-band construction."""

from __future__ import annotations

import numpy as np

from .autodiff import channel_softmax
from .validation import VOID_LABEL, as_rng, check_edge_map, check_label_mask

_NEIGHBOR_OFFSETS = [(-1, -1), (-1, 0), (-1, 1),
                     (0, -1), (0, 1),
                     (1, -1), (1, 0), (1, 1)]


def extract_edge_map(mask, void_label: int = VOID_LABEL) -> np.ndarray:
    """Mark pixels whose 8-neighborhood contains a different class label.

    Out-of-bounds neighbors are ignored (a uniform mask has no edge, border
    included).  Void pixels are never edges and are invisible as neighbors.
    """
    mask = check_label_mask(mask, void_label=void_label)
    h, w = mask.shape
    edges = np.zeros((h, w), dtype=bool)
    valid = mask != void_label
    for di, dj in _NEIGHBOR_OFFSETS:
        ci0, ci1 = max(0, -di), min(h, h - di)
        cj0, cj1 = max(0, -dj), min(w, w - dj)
        center = mask[ci0:ci1, cj0:cj1]
        neighbor = mask[ci0 + di:ci1 + di, cj0 + dj:cj1 + dj]
        differs = (center != neighbor) & valid[ci0:ci1, cj0:cj1] \
            & valid[ci0 + di:ci1 + di, cj0 + dj:cj1 + dj]
        edges[ci0:ci1, cj0:cj1] |= differs
    return edges


def one_hot(mask, n_classes: int, void_label: int = VOID_LABEL) -> np.ndarray:
    """Expand a label mask to a (C, H, W) indicator grid; void pixels are
    all-zero across channels."""
    mask = check_label_mask(mask, n_classes=n_classes, void_label=void_label)
    out = np.zeros((n_classes, *mask.shape))
    for c in range(n_classes):
        out[c] = mask == c
    return out


def perturb_mask(one_hot_grid, sigma: float, rng_seed) -> np.ndarray:
    """Add Gaussian noise to a one-hot grid and renormalize with a per-pixel
    channel softmax, mimicking the soft output of a trained network.

    Deterministic for a fixed integer seed.  sigma = 0 yields the softmax of
    the one-hot itself, so the per-pixel argmax is preserved.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    grid = np.asarray(one_hot_grid, dtype=np.float64)
    if grid.ndim != 3:
        raise ValueError(f"expected a (C, H, W) one-hot grid, got shape {grid.shape}")
    rng = as_rng(rng_seed)
    noisy = grid + rng.normal(0.0, sigma, size=grid.shape) if sigma > 0 else grid
    return channel_softmax(noisy).value


def build_trimap_band(edges, width: int) -> np.ndarray:
    """Pixels within Chebyshev distance width-1 of an edge pixel.

    Width 1 reproduces the edge set; bands grow monotonically with width.
    An empty edge set yields an all-interior (all-False) band.
    """
    edges = check_edge_map(edges)
    if not isinstance(width, int) or width < 1:
        raise ValueError(f"width must be a positive int, got {width!r}")
    band = edges.copy()
    for _ in range(width - 1):
        band = _dilate8(band)
    return band


def _dilate8(band: np.ndarray) -> np.ndarray:
    """One step of 8-connected dilation (Chebyshev radius grows by 1)."""
    out = band.copy()
    h, w = band.shape
    for di, dj in _NEIGHBOR_OFFSETS:
        ci0, ci1 = max(0, -di), min(h, h - di)
        cj0, cj1 = max(0, -dj), min(w, w - dj)
        out[ci0:ci1, cj0:cj1] |= band[ci0 + di:ci1 + di, cj0 + dj:cj1 + dj]
    return out
