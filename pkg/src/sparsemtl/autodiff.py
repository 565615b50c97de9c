"""Dense tensor ops and reverse-mode gradients for a fixed operation vocabulary.

Tensors are plain float64 ndarrays (row-major). The vocabulary covers exactly
what the dual-task classifier needs: dense affine, temporal convolution
(valid, stride 1, cross-correlation), spatial (full-height, width-1)
convolution, ELU, average pooling, flatten, softmax cross-entropy, and a
weighted sum for combining per-task losses. Every op accepts an optional
leading batch axis; parameters are never batched.

Evaluation is single-threaded and deterministic: node order is fixed at
build time and gradient accumulation follows it in reverse.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, GraphStateError, LabelError, NumericError

__all__ = [
    "as_tensor",
    "dense_forward",
    "conv_temporal_forward",
    "conv_spatial_forward",
    "elu",
    "avg_pool_forward",
    "softmax",
    "softmax_cross_entropy",
    "finite_difference_gradient",
    "Node",
    "Graph",
]


def as_tensor(x) -> np.ndarray:
    """Coerce to a C-contiguous float64 array."""
    return np.ascontiguousarray(x, dtype=np.float64)


def _batched(x: np.ndarray, core_ndim: int) -> tuple[np.ndarray, bool]:
    """View x with exactly one leading batch axis; report whether one was added."""
    if x.ndim == core_ndim:
        return x[None], True
    if x.ndim == core_ndim + 1:
        return x, False
    raise DimensionError(
        f"expected a {core_ndim}-d tensor or a batch of them, got shape {x.shape}"
    )


# ---------------------------------------------------------------------------
# forward kernels
# ---------------------------------------------------------------------------

def dense_forward(x, W, b) -> np.ndarray:
    """Affine map y = W x + b for x of shape (..., n_in)."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2 or b.ndim != 1 or W.shape[0] != b.shape[0]:
        raise DimensionError(f"dense: W {W.shape} and b {b.shape} do not conform")
    if x.shape[-1] != W.shape[1]:
        raise DimensionError(f"dense: x {x.shape} does not match W {W.shape}")
    return x @ W.T + b


def conv_temporal_forward(x, kernels, b) -> np.ndarray:
    """Valid cross-correlation along time, stride 1.

    x: (..., C, T); kernels: (F, C, k); b: (F,) -> (..., F, T-k+1) with
    out[f, t] = b[f] + sum_{c,tau} kernels[f, c, tau] * x[c, t+tau].
    """
    x, kernels, b = as_tensor(x), as_tensor(kernels), as_tensor(b)
    if kernels.ndim != 3 or b.ndim != 1 or kernels.shape[0] != b.shape[0]:
        raise DimensionError(
            f"conv_temporal: kernels {kernels.shape} and b {b.shape} do not conform"
        )
    xb, squeeze = _batched(x, 2)
    F, C, k = kernels.shape
    if xb.shape[1] != C:
        raise DimensionError(f"conv_temporal: x {x.shape} does not match kernels {kernels.shape}")
    if k > xb.shape[2]:
        raise DimensionError(f"conv_temporal: kernel width {k} exceeds input length {xb.shape[2]}")
    windows = sliding_window_view(xb, k, axis=2)  # (B, C, T-k+1, k)
    out = np.einsum("bctk,fck->bft", windows, kernels) + b[None, :, None]
    return out[0] if squeeze else out


def conv_spatial_forward(x, kernels, b) -> np.ndarray:
    """Full-height, width-1 convolution across the channel axis.

    x: (..., C, T); kernels: (F, C); b: (F,) -> (..., F, T) with
    out[f, t] = b[f] + sum_c kernels[f, c] * x[c, t].
    """
    x, kernels, b = as_tensor(x), as_tensor(kernels), as_tensor(b)
    if kernels.ndim != 2 or b.ndim != 1 or kernels.shape[0] != b.shape[0]:
        raise DimensionError(
            f"conv_spatial: kernels {kernels.shape} and b {b.shape} do not conform"
        )
    xb, squeeze = _batched(x, 2)
    if xb.shape[1] != kernels.shape[1]:
        raise DimensionError(f"conv_spatial: x {x.shape} does not match kernels {kernels.shape}")
    out = np.einsum("fc,bct->bft", kernels, xb) + b[None, :, None]
    return out[0] if squeeze else out


def elu(x) -> np.ndarray:
    """ELU with alpha=1; expm1 keeps the negative branch exact near zero."""
    x = as_tensor(x)
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    return np.where(x > 0, g, g * np.exp(np.minimum(x, 0.0)))


def avg_pool_forward(x, width: int) -> np.ndarray:
    """Non-overlapping mean pooling along the last axis; width must divide it."""
    x = as_tensor(x)
    T = x.shape[-1]
    if width < 1 or T % width != 0:
        raise DimensionError(f"avg_pool: width {width} does not divide length {T}")
    return x.reshape(x.shape[:-1] + (T // width, width)).mean(axis=-1)


def softmax(logits) -> np.ndarray:
    """Max-subtracted softmax along the last axis."""
    logits = as_tensor(logits)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, label) -> float:
    """Cross-entropy -log softmax(logits)[label].

    For 1-d logits, `label` is a single class index. For a (B, C) batch,
    `label` is a length-B index array and the mean loss is returned.
    """
    logits = as_tensor(logits)
    if logits.ndim == 1:
        logits2, labels = logits[None], np.asarray([label], dtype=np.int64)
    elif logits.ndim == 2:
        logits2, labels = logits, np.asarray(label, dtype=np.int64)
    else:
        raise DimensionError(f"softmax_cross_entropy: logits shape {logits.shape}")
    C = logits2.shape[1]
    if labels.shape != (logits2.shape[0],):
        raise LabelError(f"labels shape {labels.shape} does not match logits {logits2.shape}")
    if np.any(labels < 0) or np.any(labels >= C):
        raise LabelError(f"label out of range for {C} classes: {labels}")
    z = logits2 - logits2.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    losses = lse - z[np.arange(len(labels)), labels]
    return float(losses.mean())


def _softmax_ce_grad(logits: np.ndarray, labels: np.ndarray, g: float) -> np.ndarray:
    p = softmax(logits)
    p[np.arange(len(labels)), labels] -= 1.0
    return p * (g / len(labels))


def finite_difference_gradient(f, theta, eps: float) -> np.ndarray:
    """Central-difference gradient (f(x+eps e_j) - f(x-eps e_j)) / (2 eps).

    `f` maps a flat parameter vector to a scalar; used as the independent
    oracle against reverse-mode gradients.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    theta = as_tensor(theta).ravel()
    grad = np.zeros_like(theta)
    work = theta.copy()
    for j in range(theta.size):
        orig = work[j]
        work[j] = orig + eps
        fp = float(f(work))
        work[j] = orig - eps
        fm = float(f(work))
        work[j] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite evaluation at coordinate {j}")
        grad[j] = (fp - fm) / (2.0 * eps)
    return grad


# ---------------------------------------------------------------------------
# reverse-mode graph
# ---------------------------------------------------------------------------

class Node:
    """One graph node: cached forward value plus the local backward rule."""

    __slots__ = ("op", "inputs", "value", "grad", "_backward", "name")

    def __init__(self, op, inputs, value, backward=None, name=None):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.grad = None
        self._backward = backward
        self.name = name

    def __repr__(self):
        shape = getattr(self.value, "shape", ())
        return f"Node({self.op}, name={self.name!r}, shape={shape})"


class Graph:
    """A tape of ops in topological (construction) order.

    Builder methods append nodes and compute values eagerly; `backward`
    seeds the designated scalar output with 1 and accumulates gradients
    in fixed reverse order, so results are bitwise reproducible.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._forwarded = False

    def _add(self, node: Node) -> Node:
        self.nodes.append(node)
        return node

    # -- leaves ------------------------------------------------------------

    def input(self, value, name=None) -> Node:
        return self._add(Node("input", [], as_tensor(value), name=name))

    def parameter(self, value, name=None) -> Node:
        return self._add(Node("parameter", [], as_tensor(value), name=name))

    # -- ops ---------------------------------------------------------------

    def dense(self, x: Node, W: Node, b: Node) -> Node:
        out = dense_forward(x.value, W.value, b.value)
        xv = x.value

        def backward(g):
            if xv.ndim == 1:
                return [g @ W.value, np.outer(g, xv), g]
            return [g @ W.value, g.T @ xv, g.sum(axis=0)]

        return self._add(Node("dense", [x, W, b], out, backward))

    def conv_temporal(self, x: Node, kernels: Node, b: Node) -> Node:
        out = conv_temporal_forward(x.value, kernels.value, b.value)
        xb, squeeze = _batched(x.value, 2)
        k = kernels.value.shape[2]
        windows = sliding_window_view(xb, k, axis=2)

        def backward(g):
            gb3 = g[None] if squeeze else g
            grad_b = gb3.sum(axis=(0, 2))
            grad_k = np.einsum("bft,bctk->fck", gb3, windows)
            padded = np.pad(gb3, ((0, 0), (0, 0), (k - 1, k - 1)))
            gwin = sliding_window_view(padded, k, axis=2)[..., ::-1]
            grad_x = np.einsum("bstk,sck->bct", gwin, kernels.value)
            return [grad_x[0] if squeeze else grad_x, grad_k, grad_b]

        return self._add(Node("conv_temporal", [x, kernels, b], out, backward))

    def conv_spatial(self, x: Node, kernels: Node, b: Node) -> Node:
        out = conv_spatial_forward(x.value, kernels.value, b.value)
        xb, squeeze = _batched(x.value, 2)

        def backward(g):
            gb3 = g[None] if squeeze else g
            grad_b = gb3.sum(axis=(0, 2))
            grad_k = np.einsum("bft,bct->fc", gb3, xb)
            grad_x = np.einsum("bft,fc->bct", gb3, kernels.value)
            return [grad_x[0] if squeeze else grad_x, grad_k, grad_b]

        return self._add(Node("conv_spatial", [x, kernels, b], out, backward))

    def elu(self, x: Node) -> Node:
        out = elu(x.value)
        xv = x.value

        def backward(g):
            return [_elu_grad(xv, g)]

        return self._add(Node("elu", [x], out, backward))

    def avg_pool(self, x: Node, width: int) -> Node:
        out = avg_pool_forward(x.value, width)
        shape = x.value.shape

        def backward(g):
            return [np.repeat(g / width, width, axis=-1).reshape(shape)]

        return self._add(Node("avg_pool", [x], out, backward))

    def flatten(self, x: Node) -> Node:
        """Collapse all but the leading (batch) axis."""
        shape = x.value.shape
        out = x.value.reshape(shape[0], -1)

        def backward(g):
            return [g.reshape(shape)]

        return self._add(Node("flatten", [x], out, backward))

    def softmax_cross_entropy(self, logits: Node, labels) -> Node:
        labels = np.asarray(labels, dtype=np.int64)
        out = softmax_cross_entropy(logits.value, labels)
        lv = logits.value

        def backward(g):
            return [_softmax_ce_grad(lv, labels, g)]

        return self._add(Node("softmax_ce", [logits], np.float64(out), backward))

    def weighted_sum(self, terms: list[Node], weights) -> Node:
        """Scalar combination sum_i weights[i] * terms[i]."""
        weights = [float(w) for w in weights]
        if len(terms) != len(weights):
            raise DimensionError("weighted_sum: terms and weights differ in length")
        out = np.float64(sum(w * float(t.value) for t, w in zip(terms, weights)))

        def backward(g):
            return [np.float64(g * w) for w in weights]

        return self._add(Node("weighted_sum", list(terms), out, backward))

    # -- evaluation ---------------------------------------------------------

    def forward(self) -> None:
        """Mark the cached activations as the current forward pass.

        Values are computed eagerly at build time; this validates them and
        arms backward().
        """
        for node in self.nodes:
            v = node.value
            if not np.all(np.isfinite(v)):
                raise NumericError(f"non-finite activation in {node!r}")
        self._forwarded = True

    def backward(self, output: Node) -> None:
        """Accumulate gradients of the scalar `output` into every node."""
        if not self._forwarded:
            raise GraphStateError("backward called before forward")
        if np.ndim(output.value) != 0:
            raise DimensionError("backward output must be scalar")
        for node in self.nodes:
            node.grad = None
        output.grad = np.float64(1.0)
        for node in reversed(self.nodes):
            if node.grad is None or node._backward is None:
                continue
            for parent, g in zip(node.inputs, node._backward(node.grad)):
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    def gradients(self, params: dict[str, Node]) -> dict[str, np.ndarray]:
        """Gradient per named parameter node; zeros where no path to the loss."""
        out = {}
        for name, node in params.items():
            g = node.grad
            out[name] = np.zeros_like(node.value) if g is None else np.asarray(g)
        return out
