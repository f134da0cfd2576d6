"""Dense float64 grids with tape-based reverse-mode differentiation.

Grids are plain ``numpy.ndarray`` values (row-major, 64-bit floats).  A
:class:`Tape` records every primitive applied to :class:`Node` wrappers so a
single backward sweep can return exact gradients for all parameter leaves.
Only the handful of primitives the networks and losses need is provided; no
broadcasting, no GPU.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

LOG_FLOOR = 1e-12


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("grid contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class Node:
    """Handle to one value recorded on a tape."""

    tape: "Tape"
    idx: int
    value: np.ndarray
    needs_grad: bool

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


@dataclass
class TapeEntry:
    op: str
    parents: tuple[int, ...]
    out: int
    # closure over saved forward values; maps upstream grad to per-parent grads
    backward: Callable[[np.ndarray], list[tuple[int, np.ndarray]]]


class Tape:
    """Ordered record of primitive applications, inputs always before outputs."""

    def __init__(self) -> None:
        self.entries: list[TapeEntry] = []
        self._n_nodes = 0

    def _new_node(self, value: np.ndarray, needs_grad: bool) -> Node:
        node = Node(self, self._n_nodes, value, needs_grad)
        self._n_nodes += 1
        return node

    def constant(self, value) -> Node:
        """Leaf that never receives a gradient (frozen weights, targets)."""
        return self._new_node(_as_array(value), needs_grad=False)

    def param(self, value) -> Node:
        """Leaf whose gradient is wanted (learnable weights, probed inputs)."""
        return self._new_node(_as_array(value), needs_grad=True)

    def record(self, op, value, parents: Sequence[Node], backward) -> Node:
        needs = any(p.needs_grad for p in parents)
        node = self._new_node(np.asarray(value, dtype=np.float64), needs)
        if needs:
            self.entries.append(
                TapeEntry(op, tuple(p.idx for p in parents), node.idx, backward)
            )
        return node


def _lift(tape: Tape | None, *args):
    """Coerce a mix of Nodes and arrays onto one tape; arrays become constants."""
    for a in args:
        if isinstance(a, Node):
            if tape is not None and a.tape is not tape:
                raise ValueError("nodes from different tapes cannot be combined")
            tape = a.tape
    if tape is None:
        tape = Tape()
    return tape, [a if isinstance(a, Node) else tape.constant(a) for a in args]


# ---------------------------------------------------------------------------
# network primitives


def conv2d(x, kernel, bias, stride: int = 1) -> Node:
    """2-D cross-correlation with per-output-channel bias and "same" zero padding.

    Args:
        x: input of shape (Cin, H, W).
        kernel: weights of shape (Cout, Cin, k, k); k must be odd.
        bias: per-output-channel offsets, shape (Cout,).
        stride: positive step; output is (Cout, ceil(H/stride), ceil(W/stride)).
    """
    tape, (xn, wn, bn) = _lift(None, x, kernel, bias)
    xv, wv, bv = xn.value, wn.value, bn.value
    if xv.ndim != 3 or wv.ndim != 4:
        raise ValueError(f"conv2d expects (Cin,H,W) input and (Cout,Cin,k,k) kernel, "
                         f"got {xv.shape} and {wv.shape}")
    cout, cin, k, k2 = wv.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"kernel must be square with odd size, got {k}x{k2}")
    if xv.shape[0] != cin:
        raise ValueError(f"input channels {xv.shape[0]} (input shape {xv.shape}) do not "
                         f"match kernel input channels {cin} (kernel shape {wv.shape})")
    if bv.shape != (cout,):
        raise ValueError(f"bias shape {bv.shape} does not match {cout} output channels")
    if not isinstance(stride, int) or stride < 1:
        raise ValueError(f"stride must be a positive int, got {stride!r}")

    _, h, w = xv.shape
    pad = (k - 1) // 2
    hout = -(-h // stride)
    wout = -(-w // stride)
    padded = np.zeros((cin, h + 2 * pad, w + 2 * pad))
    padded[:, pad:pad + h, pad:pad + w] = xv

    # im2col: one strided slice per kernel offset, then a single GEMM
    cols = np.empty((cin, k, k, hout, wout))
    for di in range(k):
        for dj in range(k):
            cols[:, di, dj] = padded[:, di:di + stride * (hout - 1) + 1:stride,
                                     dj:dj + stride * (wout - 1) + 1:stride]
    cols_flat = cols.reshape(cin * k * k, hout * wout)
    w_flat = wv.reshape(cout, cin * k * k)
    out = (w_flat @ cols_flat + bv[:, None]).reshape(cout, hout, wout)

    def backward(g):
        g_flat = g.reshape(cout, hout * wout)
        grads = []
        if xn.needs_grad:
            dcols = (w_flat.T @ g_flat).reshape(cin, k, k, hout, wout)
            dpad = np.zeros_like(padded)
            for di in range(k):
                for dj in range(k):
                    dpad[:, di:di + stride * (hout - 1) + 1:stride,
                         dj:dj + stride * (wout - 1) + 1:stride] += dcols[:, di, dj]
            grads.append((xn.idx, dpad[:, pad:pad + h, pad:pad + w]))
        if wn.needs_grad:
            grads.append((wn.idx, (g_flat @ cols_flat.T).reshape(wv.shape)))
        if bn.needs_grad:
            grads.append((bn.idx, g_flat.sum(axis=1)))
        return grads

    return tape.record("conv2d", out, (xn, wn, bn), backward)


def relu(x) -> Node:
    """Elementwise max(0, x); subgradient at 0 is 0."""
    tape, (xn,) = _lift(None, x)
    out = np.maximum(xn.value, 0.0)
    mask = xn.value > 0

    def backward(g):
        return [(xn.idx, g * mask)]

    return tape.record("relu", out, (xn,), backward)


def channel_softmax(x) -> Node:
    """Per-pixel softmax over the leading channel axis of a (C, H, W) grid."""
    tape, (xn,) = _lift(None, x)
    xv = xn.value
    if xv.ndim != 3:
        raise ValueError(f"channel_softmax expects (C,H,W), got shape {xv.shape}")
    z = xv - xv.max(axis=0, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=0, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=0, keepdims=True)
        return [(xn.idx, out * (g - inner))]

    return tape.record("channel_softmax", out, (xn,), backward)


def bilinear_upsample(x, factor: int) -> Node:
    """Upsample a (C, H, W) grid by an integer factor with bilinear interpolation.

    Source coordinates follow the half-pixel-center convention
    s = (d + 0.5) / factor - 0.5, clamped to the valid range, so constants are
    reproduced exactly and factor 1 is the identity.
    """
    tape, (xn,) = _lift(None, x)
    xv = xn.value
    if xv.ndim != 3:
        raise ValueError(f"bilinear_upsample expects (C,H,W), got shape {xv.shape}")
    if not isinstance(factor, int) or factor < 1:
        raise ValueError(f"factor must be a positive int, got {factor!r}")
    _, h, w = xv.shape
    ry = _interp_matrix(h, factor)
    rx = _interp_matrix(w, factor)
    out = np.matmul(np.matmul(ry, xv), rx.T)

    def backward(g):
        return [(xn.idx, np.matmul(np.matmul(ry.T, g), rx))]

    return tape.record("bilinear_upsample", out, (xn,), backward)


def _interp_matrix(n: int, factor: int) -> np.ndarray:
    """Row-interpolation matrix (factor*n, n); rows are convex weights."""
    m = np.zeros((factor * n, n))
    for d in range(factor * n):
        s = min(max((d + 0.5) / factor - 0.5, 0.0), n - 1.0)
        i0 = int(np.floor(s))
        t = s - i0
        i1 = min(i0 + 1, n - 1)
        m[d, i0] += 1.0 - t
        m[d, i1] += t
    return m


# ---------------------------------------------------------------------------
# elementwise / reduction primitives used by the losses


def add(x, y) -> Node:
    tape, (xn, yn) = _lift(None, x, y)
    if xn.value.shape != yn.value.shape:
        raise ValueError(f"add requires equal shapes, got {xn.value.shape} and {yn.value.shape}")
    out = xn.value + yn.value

    def backward(g):
        grads = []
        if xn.needs_grad:
            grads.append((xn.idx, g))
        if yn.needs_grad:
            grads.append((yn.idx, g))
        return grads

    return tape.record("add", out, (xn, yn), backward)


def sub(x, y) -> Node:
    return add(x, scale(y, -1.0))


def scale(x, alpha: float) -> Node:
    tape, (xn,) = _lift(None, x)
    a = float(alpha)
    out = xn.value * a

    def backward(g):
        return [(xn.idx, g * a)]

    return tape.record("scale", out, (xn,), backward)


def cmul(x, weights: np.ndarray) -> Node:
    """Elementwise product with a constant weight grid (not differentiated)."""
    tape, (xn,) = _lift(None, x)
    wv = np.asarray(weights, dtype=np.float64)
    if wv.shape != xn.value.shape:
        raise ValueError(f"cmul requires equal shapes, got {xn.value.shape} and {wv.shape}")
    out = xn.value * wv

    def backward(g):
        return [(xn.idx, g * wv)]

    return tape.record("cmul", out, (xn,), backward)


def absval(x) -> Node:
    """Elementwise absolute value; subgradient at 0 is 0."""
    tape, (xn,) = _lift(None, x)
    out = np.abs(xn.value)
    sgn = np.sign(xn.value)

    def backward(g):
        return [(xn.idx, g * sgn)]

    return tape.record("abs", out, (xn,), backward)


def square(x) -> Node:
    tape, (xn,) = _lift(None, x)
    out = xn.value ** 2
    xv = xn.value

    def backward(g):
        return [(xn.idx, 2.0 * g * xv)]

    return tape.record("square", out, (xn,), backward)


def log_clamped(x, floor: float = LOG_FLOOR) -> Node:
    """log(max(x, floor)); the clamp keeps cross-entropies finite."""
    tape, (xn,) = _lift(None, x)
    clamped = np.maximum(xn.value, floor)
    out = np.log(clamped)
    mask = xn.value > floor

    def backward(g):
        return [(xn.idx, g * mask / clamped)]

    return tape.record("log", out, (xn,), backward)


def reduce_sum(x) -> Node:
    """Sum every element down to a scalar."""
    tape, (xn,) = _lift(None, x)
    shape = xn.value.shape
    out = np.asarray(xn.value.sum())

    def backward(g):
        return [(xn.idx, np.broadcast_to(g, shape) if shape else g)]

    return tape.record("sum", out, (xn,), backward)


# ---------------------------------------------------------------------------
# backward sweep and the finite-difference oracle


def backprop(tape: Tape, loss: Node) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar loss node.

    Returns a dict mapping node index to gradient for every grad-requiring
    node reachable from the loss; unreachable nodes have no entry.
    """
    if loss.value.shape != ():
        raise ValueError(f"loss node must be scalar, got shape {loss.value.shape}")
    grads: dict[int, np.ndarray] = {loss.idx: np.asarray(1.0)}
    for entry in reversed(tape.entries):
        g = grads.get(entry.out)
        if g is None:
            continue
        for idx, contrib in entry.backward(g):
            if idx in grads:
                # never accumulate in place: entries may alias upstream grads
                grads[idx] = grads[idx] + contrib
            else:
                grads[idx] = contrib
    return grads


def finite_diff_check(f: Callable[[Node], Node], point: np.ndarray,
                      eps: float = 1e-5) -> float:
    """Compare backprop against central finite differences at one point.

    Args:
        f: builds a scalar loss node from a single input node.
        point: grid at which to probe.
        eps: central-difference half step, must be positive.

    Returns:
        Max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps!r}")
    point = _as_array(point)
    tape = Tape()
    x = tape.param(point)
    loss = f(x)
    if loss.value.shape != ():
        raise ValueError("f must produce a scalar loss")
    analytic = backprop(tape, loss).get(x.idx, np.zeros_like(point))

    def eval_at(p):
        return float(f(Tape().constant(p)).value)

    worst = 0.0
    flat = point.ravel()
    for i in range(flat.size):
        shifted = flat.copy()
        shifted[i] = flat[i] + eps
        hi = eval_at(shifted.reshape(point.shape))
        shifted[i] = flat[i] - eps
        lo = eval_at(shifted.reshape(point.shape))
        numeric = (hi - lo) / (2.0 * eps)
        a = float(analytic.ravel()[i])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
