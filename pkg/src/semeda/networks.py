"""The two small convolutional networks and their checkpoint format.

The edge net maps a (C, H, W) soft segmentation mask to a 2-channel edge
probability map through three 3x3 stride-1 convolutions (C -> 16 -> 32 -> 2,
ReLU between, softmax at the end) and exposes every intermediate embedding.
The seg net maps a (3, H, W) image to a (C, H, W) per-pixel class
distribution through a deliberately coarse encoder (one stride-2 stage)
followed by bilinear x2 upsampling and a channel softmax; an optional 1x1
edge head reads the deepest shared features for the multi-task baseline.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .validation import as_rng, check_grid, check_image

CHECKPOINT_MAGIC = "SEMEDA1"
EDGE_CHANNELS = (16, 32, 2)


@dataclass(frozen=True)
class ConvLayer:
    kernel: np.ndarray  # (Cout, Cin, k, k)
    bias: np.ndarray    # (Cout,)
    stride: int = 1


@dataclass(frozen=True)
class EdgeNetParams:
    """Weights of the 3-layer edge detection net; input channels equal the
    segmentation class count."""
    n_classes: int
    layers: tuple[ConvLayer, ...]

    def __post_init__(self):
        chain = tuple(l.kernel.shape[0] for l in self.layers)
        if chain != EDGE_CHANNELS:
            raise ValueError(f"edge net channel chain must be {EDGE_CHANNELS}, got {chain}")
        if self.layers[0].kernel.shape[1] != self.n_classes:
            raise ValueError(f"edge net first layer expects {self.n_classes} input "
                             f"channels, got {self.layers[0].kernel.shape[1]}")


@dataclass(frozen=True)
class SegNetParams:
    """Weights of the stand-in segmentation net (plus optional edge head)."""
    n_classes: int
    layers: tuple[ConvLayer, ...]
    edge_head: ConvLayer | None = None

    def __post_init__(self):
        if self.layers[-1].kernel.shape[0] != self.n_classes:
            raise ValueError(f"seg net must output {self.n_classes} channels, "
                             f"got {self.layers[-1].kernel.shape[0]}")


def _he_conv(rng, c_out: int, c_in: int, k: int, stride: int = 1) -> ConvLayer:
    fan_in = c_in * k * k
    kernel = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, k, k))
    return ConvLayer(kernel, np.zeros(c_out), stride)


def init_params(kind: str, n_classes: int, rng_seed, edge_head: bool = False):
    """He-initialized parameters for one network kind ("edge" or "seg").

    Weights ~ N(0, 2/fan_in), biases zero; deterministic per seed.  The seg
    backbone is drawn before the optional head so the shared weights match
    with the head on or off.
    """
    rng = as_rng(rng_seed)
    if kind == "edge":
        c_prev = n_classes
        layers = []
        for c_out in EDGE_CHANNELS:
            layers.append(_he_conv(rng, c_out, c_prev, 3))
            c_prev = c_out
        return EdgeNetParams(n_classes, tuple(layers))
    if kind == "seg":
        layers = (
            _he_conv(rng, 16, 3, 3),
            _he_conv(rng, 32, 16, 3, stride=2),
            _he_conv(rng, 32, 32, 3),
            _he_conv(rng, n_classes, 32, 1),
        )
        head = _he_conv(rng, 2, 32, 1) if edge_head else None
        return SegNetParams(n_classes, layers, head)
    raise ValueError(f"unknown network kind {kind!r}")


# ---------------------------------------------------------------------------
# forward passes


@dataclass
class EdgeNetOutput:
    edge_probs: Node                       # (2, H, W), rows sum to 1
    pre: tuple[Node, ...]                  # conv outputs before activation
    post: tuple[Node, ...]                 # relu, relu, softmax outputs
    param_nodes: tuple[tuple[Node, Node], ...] | None = None


@dataclass
class SegNetOutput:
    probs: Node                            # (C, H, W)
    edge_probs: Node | None                # (2, H, W) when the head is present
    param_nodes: tuple[tuple[Node, Node], ...] | None = None
    head_nodes: tuple[Node, Node] | None = None


def _lift_layers(tape: Tape, layers, trainable: bool):
    lift = tape.param if trainable else tape.constant
    return tuple((lift(l.kernel), lift(l.bias)) for l in layers)


def edge_net_forward(params: EdgeNetParams, mask, tape: Tape | None = None,
                     trainable: bool = False,
                     n_layers: int | None = None) -> EdgeNetOutput:
    """Run the edge net on a (C, H, W) soft mask, recording on a tape.

    Returns the softmax edge map plus all pre/post-activation embeddings.
    Pass trainable=True to lift the weights as gradient-requiring leaves.
    n_layers truncates the forward pass (the embedding loss needs no layers
    above its deepest weighted one); edge_probs is then None.
    """
    if isinstance(mask, Node):
        tape = mask.tape
        x = mask
    else:
        tape = tape or Tape()
        x = tape.constant(check_grid(mask, ndim=3, name="mask"))
    if x.value.shape[0] != params.n_classes:
        raise ValueError(f"mask has {x.value.shape[0]} channels but the edge net "
                         f"was built for {params.n_classes} classes")
    n_total = len(params.layers)
    if n_layers is None:
        n_layers = n_total
    pnodes = _lift_layers(tape, params.layers[:n_layers], trainable)
    pre, post = [], []
    h = x
    for i, (kn, bn) in enumerate(pnodes):
        z = ad.conv2d(h, kn, bn, stride=params.layers[i].stride)
        pre.append(z)
        h = ad.relu(z) if i < n_total - 1 else ad.channel_softmax(z)
        post.append(h)
    edge_probs = post[-1] if n_layers == n_total else None
    return EdgeNetOutput(edge_probs, tuple(pre), tuple(post),
                         pnodes if trainable else None)


def seg_net_forward(params: SegNetParams, image, tape: Tape | None = None,
                    trainable: bool = False) -> SegNetOutput:
    """Run the seg net on a (3, H, W) image; H and W must be even.

    Output is a per-pixel distribution over the classes at full input
    resolution (bilinear x2 undoes the single stride-2 stage, softmax last).
    """
    if isinstance(image, Node):
        tape = image.tape
        x = image
    else:
        tape = tape or Tape()
        x = tape.constant(check_image(image))
    _, h, w = x.value.shape
    if h % 2 or w % 2:
        raise ValueError(f"image size {h}x{w} is not divisible by the downsampling "
                         f"factor 2; resize or crop to even dimensions")
    pnodes = _lift_layers(tape, params.layers, trainable)
    feat = x
    for i, (kn, bn) in enumerate(pnodes[:-1]):
        feat = ad.relu(ad.conv2d(feat, kn, bn, stride=params.layers[i].stride))
    # feat is the deepest shared representation; the main head and the
    # optional edge head both read it and never write it
    kn, bn = pnodes[-1]
    logits = ad.conv2d(feat, kn, bn, stride=params.layers[-1].stride)
    probs = ad.channel_softmax(ad.bilinear_upsample(logits, 2))

    edge_probs = None
    head_nodes = None
    if params.edge_head is not None:
        lift = tape.param if trainable else tape.constant
        hk, hb = lift(params.edge_head.kernel), lift(params.edge_head.bias)
        head_nodes = (hk, hb)
        edge_logits = ad.conv2d(feat, hk, hb, stride=params.edge_head.stride)
        edge_probs = ad.channel_softmax(ad.bilinear_upsample(edge_logits, 2))
    return SegNetOutput(probs, edge_probs, pnodes if trainable else None,
                        head_nodes if trainable else None)


def predict_labels(params: SegNetParams, image) -> np.ndarray:
    """Argmax class map for one image; ties resolve to the lowest class id."""
    probs = seg_net_forward(params, image).probs.value
    return np.argmax(probs, axis=0).astype(np.int64)


def predict_edge_probs(params: EdgeNetParams, soft_mask) -> np.ndarray:
    """(2, H, W) edge probability map for one soft segmentation mask."""
    return edge_net_forward(params, soft_mask).edge_probs.value


# ---------------------------------------------------------------------------
# flat parameter views used by the optimizer


def param_arrays(params) -> list[np.ndarray]:
    """Learnable arrays in a fixed order (layer kernels/biases, head last)."""
    arrays = []
    for layer in params.layers:
        arrays.extend([layer.kernel, layer.bias])
    if isinstance(params, SegNetParams) and params.edge_head is not None:
        arrays.extend([params.edge_head.kernel, params.edge_head.bias])
    return arrays


def param_names(params) -> list[str]:
    names = []
    for i in range(len(params.layers)):
        names.extend([f"layer{i + 1}.kernel", f"layer{i + 1}.bias"])
    if isinstance(params, SegNetParams) and params.edge_head is not None:
        names.extend(["edge_head.kernel", "edge_head.bias"])
    return names


def with_param_arrays(params, arrays):
    """Rebuild a params object from arrays in param_arrays order."""
    expected = len(param_arrays(params))
    if len(arrays) != expected:
        raise ValueError(f"expected {expected} arrays, got {len(arrays)}")
    it = iter(arrays)
    layers = tuple(ConvLayer(next(it), next(it), l.stride) for l in params.layers)
    if isinstance(params, SegNetParams):
        head = params.edge_head
        if head is not None:
            head = ConvLayer(next(it), next(it), head.stride)
        return replace(params, layers=layers, edge_head=head)
    return replace(params, layers=layers)


# ---------------------------------------------------------------------------
# checkpoint format: ASCII header, then little-endian float64 payloads


def _plan(layers) -> str:
    return ",".join(f"{l.kernel.shape[1]}:{l.kernel.shape[0]}:{l.kernel.shape[2]}:{l.stride}"
                    for l in layers)


def save_params(params, path) -> None:
    """Write a versioned binary checkpoint; round trips byte-exactly."""
    if isinstance(params, EdgeNetParams):
        kind, head = "edge", None
    elif isinstance(params, SegNetParams):
        kind, head = ("seg-mt" if params.edge_head is not None else "seg"), params.edge_head
    else:
        raise ValueError(f"cannot checkpoint object of type {type(params).__name__}")
    buf = io.BytesIO()
    buf.write(f"{CHECKPOINT_MAGIC}\n{kind}\nclasses={params.n_classes}\n".encode("ascii"))
    buf.write(f"layers={_plan(params.layers)}\n".encode("ascii"))
    buf.write(f"head={_plan([head]) if head is not None else 'none'}\n".encode("ascii"))
    for arr in param_arrays(params):
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


def _parse_plan(text: str) -> list[tuple[int, int, int, int]]:
    out = []
    for item in text.split(","):
        c_in, c_out, k, stride = (int(v) for v in item.split(":"))
        out.append((c_in, c_out, k, stride))
    return out


def load_params(path) -> EdgeNetParams | SegNetParams:
    """Read a checkpoint written by save_params, validating header and size."""
    raw = Path(path).read_bytes()
    header_end = 0
    lines = []
    for _ in range(5):
        nl = raw.find(b"\n", header_end)
        if nl < 0:
            raise ValueError(f"truncated checkpoint header in {path}")
        lines.append(raw[header_end:nl].decode("ascii", errors="replace"))
        header_end = nl + 1
    magic, kind, classes_line, layers_line, head_line = lines
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint (magic {magic!r})")
    if kind not in ("edge", "seg", "seg-mt"):
        raise ValueError(f"unknown network kind {kind!r} in {path}")
    if not classes_line.startswith("classes="):
        raise ValueError(f"malformed classes line {classes_line!r} in {path}")
    n_classes = int(classes_line.split("=", 1)[1])
    plan = _parse_plan(layers_line.split("=", 1)[1])
    head_spec = head_line.split("=", 1)[1]
    head_plan = None if head_spec == "none" else _parse_plan(head_spec)[0]
    if (head_plan is not None) != (kind == "seg-mt"):
        raise ValueError(f"head line {head_line!r} inconsistent with kind {kind!r}")

    offset = header_end

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape)) * 8
        if offset + n > len(raw):
            raise ValueError(f"truncated checkpoint payload in {path} "
                             f"(need {n} bytes at offset {offset})")
        arr = np.frombuffer(raw, dtype="<f8", count=int(np.prod(shape)),
                            offset=offset).reshape(shape).copy()
        offset += n
        return arr

    def read_layer(spec):
        c_in, c_out, k, stride = spec
        return ConvLayer(take((c_out, c_in, k, k)), take((c_out,)), stride)

    layers = tuple(read_layer(s) for s in plan)
    head = read_layer(head_plan) if head_plan is not None else None
    if offset != len(raw):
        raise ValueError(f"{len(raw) - offset} trailing bytes in {path}")
    if kind == "edge":
        return EdgeNetParams(n_classes, layers)
    return SegNetParams(n_classes, layers, head)
