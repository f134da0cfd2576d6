"""Input validation helpers shared across the package.

Follows the scikit-learn convention of small ``check_*`` functions that
normalize dtype/layout and raise ``ValueError`` with a usable message.
"""

from __future__ import annotations

import numpy as np

VOID_LABEL = 255


def check_grid(x, ndim: int | None = None, name: str = "grid") -> np.ndarray:
    """Return x as a finite float64 array, optionally enforcing its rank."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_label_mask(mask, n_classes: int | None = None,
                     void_label: int = VOID_LABEL, name: str = "mask") -> np.ndarray:
    """Return mask as a 2-D int64 array of class ids in [0, n_classes) or void."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (H, W), got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"{name} must hold integer class ids, got dtype {arr.dtype}")
    arr = arr.astype(np.int64, copy=False)
    if arr.size and arr.min() < 0:
        raise ValueError(f"{name} contains negative labels")
    if n_classes is not None:
        bad = (arr >= n_classes) & (arr != void_label)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise ValueError(f"{name} label {arr[i, j]} at pixel ({i}, {j}) is outside "
                             f"[0, {n_classes}) and is not the void id {void_label}")
    return arr


def check_edge_map(edges, name: str = "edges") -> np.ndarray:
    """Return edges as a 2-D boolean array."""
    arr = np.asarray(edges)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (H, W), got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def check_image(image, name: str = "image") -> np.ndarray:
    """Return an RGB image as (3, H, W) float64; accepts channels-last input."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be 3-D, got shape {arr.shape}")
    if arr.shape[0] != 3:
        if arr.shape[-1] == 3:
            arr = np.moveaxis(arr, -1, 0)
        else:
            raise ValueError(f"{name} must have 3 channels first or last, got shape {arr.shape}")
    return check_grid(arr, ndim=3, name=name)


def as_rng(seed) -> np.random.Generator:
    """Accept an int seed, a Generator, or None (fresh entropy), like
    sklearn's check_random_state but for the numpy Generator API."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
