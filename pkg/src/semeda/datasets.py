"""Synthetic multi-class shapes dataset and dependency-free image/mask I/O.

Images are stored as binary PPM (P6) and label masks as binary PGM (P5),
both with maxval 255, so every byte of the on-disk format is checkable
without a compression library.  A dataset directory holds ``img_<id>.ppm``,
``mask_<id>.pgm`` and ``train.txt``/``val.txt`` manifests (one id per line).
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .validation import as_rng, check_image, check_label_mask

GOLDEN_RATIO = 0.618033988749895
TEXTURE_SIGMA = 0.05  # per-pixel Gaussian noise so color alone is not enough


@dataclass
class Sample:
    id: str
    image: np.ndarray  # (3, H, W) float64 in [0, 1]
    mask: np.ndarray   # (H, W) int64 class ids


def class_color(c: int) -> np.ndarray:
    """Base RGB fill color for one class; hues are golden-ratio spaced so
    every class keeps a distinct band, background (class 0) stays dark."""
    if c == 0:
        return np.array(colorsys.hsv_to_rgb(0.6, 0.25, 0.25))
    return np.array(colorsys.hsv_to_rgb((GOLDEN_RATIO * c) % 1.0, 0.65, 0.85))


def _draw_rect(mask, base, cls: int, color, rng, size: int) -> None:
    h = int(rng.integers(size // 6, size // 2))
    w = int(rng.integers(size // 6, size // 2))
    top = int(rng.integers(-h // 3, size - h + h // 3 + 1))
    left = int(rng.integers(-w // 3, size - w + w // 3 + 1))
    y0, y1 = max(0, top), min(size, top + h)
    x0, x1 = max(0, left), min(size, left + w)
    mask[y0:y1, x0:x1] = cls
    base[:, y0:y1, x0:x1] = color[:, None, None]


def _draw_disk(mask, base, cls: int, color, rng, size: int) -> None:
    r = float(rng.uniform(size / 8, size / 4))
    cy = float(rng.uniform(r / 2, size - r / 2))
    cx = float(rng.uniform(r / 2, size - r / 2))
    ys, xs = np.mgrid[0:size, 0:size]
    inside = (ys - cy) ** 2 + (xs - cx) ** 2 <= r * r
    mask[inside] = cls
    base[:, inside] = color[:, None]


def _draw_triangle(mask, base, cls: int, color, rng, size: int) -> None:
    for _ in range(8):  # resample until non-degenerate
        pts = rng.uniform(0, size, size=(3, 2))
        area2 = abs((pts[1, 0] - pts[0, 0]) * (pts[2, 1] - pts[0, 1])
                    - (pts[2, 0] - pts[0, 0]) * (pts[1, 1] - pts[0, 1]))
        if area2 >= (size / 4) ** 2:
            break
    ys, xs = np.mgrid[0:size, 0:size]
    inside = np.ones((size, size), dtype=bool)
    for i in range(3):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % 3]
        ox, oy = pts[(i + 2) % 3]
        side = (bx - ax) * (ys - ay) - (by - ay) * (xs - ax)
        ref = (bx - ax) * (oy - ay) - (by - ay) * (ox - ax)
        inside &= side * ref >= 0
    mask[inside] = cls
    base[:, inside] = color[:, None]


_SHAPE_PAINTERS = (_draw_rect, _draw_disk, _draw_triangle)


def gen_synthetic(count: int, size: int, n_classes: int, rng_seed) -> list[Sample]:
    """Generate samples with 1-4 colored shapes over a dark background.

    Class 0 is background; class c in [1, n_classes) uses shape kind
    (c - 1) mod 3 (rectangle, disk, triangle) with its own color band.
    Later shapes occlude earlier ones.  Deterministic per seed.
    """
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes (background + shape), got {n_classes}")
    if size < 32:
        raise ValueError(f"size must be at least 32, got {size}")
    samples = []
    for i in range(count):
        rng = as_rng(np.random.SeedSequence([_seed_int(rng_seed), 7, i]))
        mask = np.zeros((size, size), dtype=np.int64)
        base = np.empty((3, size, size))
        base[:] = _jittered(class_color(0), rng)[:, None, None]
        for _ in range(int(rng.integers(1, 5))):
            cls = int(rng.integers(1, n_classes))
            painter = _SHAPE_PAINTERS[(cls - 1) % 3]
            painter(mask, base, cls, _jittered(class_color(cls), rng), rng, size)
        image = np.clip(base + rng.normal(0.0, TEXTURE_SIGMA, size=base.shape), 0.0, 1.0)
        samples.append(Sample(f"{i:05d}", image, mask))
    return samples


def _jittered(color: np.ndarray, rng) -> np.ndarray:
    return np.clip(color + rng.uniform(-0.08, 0.08, size=3), 0.0, 1.0)


def _seed_int(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    raise ValueError(f"rng_seed must be an int, got {type(seed).__name__}")


# ---------------------------------------------------------------------------
# netpbm encoding


def encode_pnm(sample: Sample, directory) -> None:
    """Write img_<id>.ppm (P6) and mask_<id>.pgm (P5), maxval 255.

    Image values are rounded to the nearest 1/255 step; mask labels are
    stored verbatim, so masks round trip exactly for labels 0..255.
    """
    directory = Path(directory)
    image = check_image(sample.image)
    mask = check_label_mask(sample.mask)
    if image.shape[1:] != mask.shape:
        raise ValueError(f"image {image.shape[1:]} and mask {mask.shape} sizes differ")
    if image.min() < 0 or image.max() > 1:
        raise ValueError("image values must lie in [0, 1]")
    if mask.max(initial=0) > 255:
        raise ValueError("mask labels above 255 cannot be stored in 8-bit PGM")
    h, w = mask.shape
    rgb = np.rint(image * 255.0).astype(np.uint8)
    ppm = f"P6\n{w} {h}\n255\n".encode("ascii") + np.moveaxis(rgb, 0, 2).tobytes()
    pgm = f"P5\n{w} {h}\n255\n".encode("ascii") + mask.astype(np.uint8).tobytes()
    (directory / f"img_{sample.id}.ppm").write_bytes(ppm)
    (directory / f"mask_{sample.id}.pgm").write_bytes(pgm)


def _parse_pnm(raw: bytes, magic: bytes, path) -> tuple[int, int, int]:
    """Validate a P5/P6 header; return (width, height, payload offset)."""
    if raw[:2] != magic:
        raise ValueError(f"{path}: expected magic {magic.decode()} at byte 0, "
                         f"got {raw[:2]!r}")
    pos = 2
    fields = []
    for _ in range(3):
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and raw[pos:pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise ValueError(f"{path}: malformed header at byte {start}")
        fields.append(int(raw[start:pos]))
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise ValueError(f"{path}: missing whitespace before payload at byte {pos}")
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval} "
                         f"(must be 255) at byte {pos}")
    return width, height, pos


def decode_pnm(directory, sample_id: str) -> Sample:
    """Read one sample back from its PPM/PGM pair."""
    directory = Path(directory)
    img_path = directory / f"img_{sample_id}.ppm"
    mask_path = directory / f"mask_{sample_id}.pgm"
    for p in (img_path, mask_path):
        if not p.exists():
            raise FileNotFoundError(f"sample {sample_id!r}: missing file {p}")

    raw = img_path.read_bytes()
    w, h, off = _parse_pnm(raw, b"P6", img_path)
    if len(raw) - off != w * h * 3:
        raise ValueError(f"{img_path}: payload has {len(raw) - off} bytes at offset "
                         f"{off}, expected {w * h * 3}")
    rgb = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=off)
    image = np.moveaxis(rgb.reshape(h, w, 3), 2, 0).astype(np.float64) / 255.0

    raw = mask_path.read_bytes()
    mw, mh, off = _parse_pnm(raw, b"P5", mask_path)
    if (mw, mh) != (w, h):
        raise ValueError(f"{mask_path}: size {mw}x{mh} does not match image {w}x{h}")
    if len(raw) - off != w * h:
        raise ValueError(f"{mask_path}: payload has {len(raw) - off} bytes at offset "
                         f"{off}, expected {w * h}")
    mask = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=off) \
        .reshape(h, w).astype(np.int64)
    return Sample(sample_id, image, mask)


# ---------------------------------------------------------------------------
# manifests and directory loading


def read_manifest(path) -> list[str]:
    """Ids from a manifest (one per line, LF, UTF-8); duplicates rejected."""
    text = Path(path).read_text(encoding="utf-8")
    ids = [line.strip() for line in text.split("\n") if line.strip()]
    seen = set()
    for sample_id in ids:
        if sample_id in seen:
            raise ValueError(f"{path}: duplicate id {sample_id!r}")
        seen.add(sample_id)
    return ids


def write_manifest(ids, path) -> None:
    Path(path).write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")


def load_dataset(directory, manifest) -> list[Sample]:
    """Load the samples named by a manifest file, in manifest order."""
    manifest = Path(manifest)
    if not manifest.is_absolute() and not manifest.exists():
        manifest = Path(directory) / manifest
    return [decode_pnm(directory, sid) for sid in read_manifest(manifest)]


def save_dataset(samples, directory, val_fraction: float = 1.0 / 6.0) -> tuple[int, int]:
    """Write all samples plus train/val manifests; returns the split sizes.

    The tail of the sample list becomes the validation split (generation
    order is already random).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for s in samples:
        encode_pnm(s, directory)
    n_val = int(round(len(samples) * val_fraction))
    n_train = len(samples) - n_val
    write_manifest([s.id for s in samples[:n_train]], directory / "train.txt")
    write_manifest([s.id for s in samples[n_train:]], directory / "val.txt")
    return n_train, n_val
