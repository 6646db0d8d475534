"""Small NHWC tensor engine: the layers the document classifier needs, with backprop.

Tensors are plain numpy arrays. Activations are laid out ``(batch, height,
width, channels)``; convolution kernels are ``(k, k, in, out)``. Use float64
for gradient checks and float32 for training.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CheckpointError, NonFiniteError, ShapeMismatch

EPS = 1e-12


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return x


# convolution

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    B, H, W, C = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # B, H, W, C, k, k
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(B * H * W, k * k * C)


def _col2im(cols: np.ndarray, shape: tuple, k: int) -> np.ndarray:
    B, H, W, C = shape
    p = k // 2
    cols = cols.reshape(B, H, W, k, k, C)
    dxp = np.zeros((B, H + 2 * p, W + 2 * p, C), dtype=cols.dtype)
    for dy in range(k):
        for dx in range(k):
            dxp[:, dy:dy + H, dx:dx + W, :] += cols[:, :, :, dy, dx, :]
    return dxp[:, p:p + H, p:p + W, :]


def _check_conv_shapes(x, w, b):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv expects 4-D input and kernels, got {x.shape} and {w.shape}")
    k = w.shape[0]
    if w.shape[1] != k or k % 2 == 0:
        raise ShapeMismatch(f"kernel must be square with odd extent, got {w.shape[:2]}")
    if x.shape[3] != w.shape[2]:
        raise ShapeMismatch(f"input has {x.shape[3]} channels, kernel expects {w.shape[2]}")
    if b is not None and b.shape != (w.shape[3],):
        raise ShapeMismatch(f"bias shape {b.shape} does not match {w.shape[3]} output channels")
    return k


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, cols=None) -> np.ndarray:
    """Same-padded, stride-1 convolution (cross-correlation)."""
    k = _check_conv_shapes(x, w, b)
    B, H, W, _ = x.shape
    if cols is None:
        cols = _im2col(x, k)
    out = cols @ w.reshape(-1, w.shape[3])
    out += b
    return out.reshape(B, H, W, w.shape[3])


def conv2d_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray, cols=None,
                    need_dx: bool = True):
    """Gradients ``(dx, dw, db)`` of :func:`conv2d_forward`.

    ``dx`` is None when ``need_dx`` is false (first layer of a network).
    """
    k = _check_conv_shapes(x, w, None)
    if dout.shape != x.shape[:3] + (w.shape[3],):
        raise ShapeMismatch(f"upstream gradient shape {dout.shape} does not match output")
    if cols is None:
        cols = _im2col(x, k)
    d2 = dout.reshape(-1, w.shape[3])
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dx = _col2im(d2 @ w.reshape(-1, w.shape[3]).T, x.shape, k) if need_dx else None
    return dx, dw, db


# pooling

def maxpool2x2_forward(x: np.ndarray):
    """2x2/stride-2 max pooling; odd extents are padded with -inf (ceil halving).

    Returns the pooled tensor and the cache for the backward pass. Ties go to
    the first maximal element in row-major window order.
    """
    B, H, W, C = x.shape
    H2, W2 = (H + 1) // 2, (W + 1) // 2
    if H % 2 or W % 2:
        xp = np.full((B, 2 * H2, 2 * W2, C), -np.inf, dtype=x.dtype)
        xp[:, :H, :W, :] = x
    else:
        xp = x
    quads = (xp[:, 0::2, 0::2], xp[:, 0::2, 1::2], xp[:, 1::2, 0::2], xp[:, 1::2, 1::2])
    out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))
    idx = np.full(out.shape, 3, dtype=np.uint8)
    for i in (2, 1, 0):
        idx[quads[i] == out] = i
    return out, (idx, x.shape)


def maxpool2x2_backward(dout: np.ndarray, cache) -> np.ndarray:
    idx, shape = cache
    B, H, W, C = shape
    H2, W2 = dout.shape[1], dout.shape[2]
    grad = np.zeros((B, 2 * H2, 2 * W2, C), dtype=dout.dtype)
    for i, (dy, dx) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        grad[:, dy::2, dx::2] = np.where(idx == i, dout, 0)
    return grad[:, :H, :W, :]


# elementwise

def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dout * (x > 0)


def dropout_forward(x: np.ndarray, rate: float, rng: np.random.Generator | None,
                    training: bool):
    """Inverted dropout. Returns ``(out, mask)``; ``mask`` is None when inactive."""
    if not training or rate == 0:
        return x, None
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.dtype) / x.dtype.type(keep)
    return x * mask, mask


def dropout_backward(dout: np.ndarray, mask) -> np.ndarray:
    return dout if mask is None else dout * mask


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeMismatch(f"dense layer {w.shape} cannot take input {x.shape}")
    return x @ w + b


def dense_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray):
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# loss

def cross_entropy(actual: np.ndarray, predicted: np.ndarray) -> float:
    """Per-class binary cross entropy averaged over the N classes.

    ``-(1/N) * sum_i [a_i log p_i + (1 - a_i) log(1 - p_i)]``, averaged over
    the batch when given 2-D input. Probabilities are clamped to
    ``[1e-12, 1 - 1e-12]``.
    """
    a = np.asarray(actual, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if a.shape != p.shape:
        raise ShapeMismatch(f"targets {a.shape} and predictions {p.shape} differ in shape")
    p = np.clip(p, EPS, 1.0 - EPS)
    n = a.shape[-1]
    per_sample = -(a * np.log(p) + (1 - a) * np.log1p(-p)).sum(axis=-1) / n
    return float(np.mean(per_sample))


def cross_entropy_grad(actual: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    """Derivative of :func:`cross_entropy` with respect to the probabilities."""
    a = np.asarray(actual, dtype=np.float64)
    p = np.clip(np.asarray(predicted, dtype=np.float64), EPS, 1.0 - EPS)
    if a.shape != p.shape:
        raise ShapeMismatch(f"targets {a.shape} and predictions {p.shape} differ in shape")
    n = a.shape[-1]
    batch = a.shape[0] if a.ndim == 2 else 1
    return -(a / p - (1 - a) / (1 - p)) / (n * batch)


def softmax_backward(dprob: np.ndarray, prob: np.ndarray) -> np.ndarray:
    return prob * (dprob - (dprob * prob).sum(axis=-1, keepdims=True))


def loss_and_grad(actual: np.ndarray, logits: np.ndarray):
    """Loss value and its gradient with respect to the logits."""
    prob = softmax(logits.astype(np.float64))
    loss = cross_entropy(actual, prob)
    dlogits = softmax_backward(cross_entropy_grad(actual, prob), prob)
    return loss, dlogits.astype(logits.dtype), prob


# optimizer

@dataclass
class Adam:
    """Bias-corrected Adam over a list of parameter arrays (updated in place)."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ShapeMismatch(f"gradient {g.shape} does not match parameter {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype)


# layers

class Conv2D:
    kind = "conv"

    def __init__(self, cin: int, cout: int, k: int = 3, dtype=np.float32, rng=None):
        rng = rng or np.random.default_rng(0)
        limit = np.sqrt(6.0 / (k * k * cin))
        self.w = rng.uniform(-limit, limit, size=(k, k, cin, cout)).astype(dtype)
        self.b = np.zeros(cout, dtype=dtype)
        self.spec = {"kind": self.kind, "kernel": k, "in": cin, "out": cout,
                     "stride": 1, "padding": "same"}

    def params(self):
        return [self.w, self.b]

    def forward(self, x, training=False, rng=None):
        self._x = x
        cols = _im2col(x, self.w.shape[0])
        self._cols = cols if training else None
        return conv2d_forward(x, self.w, self.b, cols=cols)

    def backward(self, dout, need_dx=True):
        dx, dw, db = conv2d_backward(dout, self._x, self.w, cols=self._cols, need_dx=need_dx)
        self.grads = [dw, db]
        self._cols = None
        return dx


class ReLU:
    kind = "relu"
    spec = {"kind": "relu"}

    def params(self):
        return []

    def forward(self, x, training=False, rng=None):
        self._x = x
        return relu_forward(x)

    def backward(self, dout):
        return relu_backward(dout, self._x)


class MaxPool2x2:
    kind = "maxpool"
    spec = {"kind": "maxpool", "size": 2, "stride": 2}

    def params(self):
        return []

    def forward(self, x, training=False, rng=None):
        out, self._cache = maxpool2x2_forward(x)
        return out

    def backward(self, dout):
        return maxpool2x2_backward(dout, self._cache)


class Dropout:
    kind = "dropout"

    def __init__(self, rate: float):
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.spec = {"kind": "dropout", "rate": rate}

    def params(self):
        return []

    def forward(self, x, training=False, rng=None):
        out, self._mask = dropout_forward(x, self.rate, rng, training)
        return out

    def backward(self, dout):
        return dropout_backward(dout, self._mask)


class Flatten:
    kind = "flatten"
    spec = {"kind": "flatten"}

    def params(self):
        return []

    def forward(self, x, training=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dense:
    kind = "dense"

    def __init__(self, nin: int, nout: int, dtype=np.float32, rng=None):
        rng = rng or np.random.default_rng(0)
        limit = np.sqrt(6.0 / (nin + nout))
        self.w = rng.uniform(-limit, limit, size=(nin, nout)).astype(dtype)
        self.b = np.zeros(nout, dtype=dtype)
        self.spec = {"kind": self.kind, "in": nin, "units": nout}

    def params(self):
        return [self.w, self.b]

    def forward(self, x, training=False, rng=None):
        self._x = x
        return dense_forward(x, self.w, self.b)

    def backward(self, dout):
        dx, dw, db = dense_backward(dout, self._x, self.w)
        self.grads = [dw, db]
        return dx


def layer_from_spec(spec: dict, dtype, rng):
    kind = spec["kind"]
    if kind == "conv":
        return Conv2D(spec["in"], spec["out"], spec["kernel"], dtype=dtype, rng=rng)
    if kind == "relu":
        return ReLU()
    if kind == "maxpool":
        return MaxPool2x2()
    if kind == "dropout":
        return Dropout(spec["rate"])
    if kind == "flatten":
        return Flatten()
    if kind == "dense":
        return Dense(spec["in"], spec["units"], dtype=dtype, rng=rng)
    raise ValueError(f"unknown layer kind {kind!r}")


class Network:
    """A straight chain of layers ending in logits; softmax is applied on top."""

    def __init__(self, layers: list, input_shape: tuple[int, int, int], dtype=np.float32,
                 meta: dict | None = None):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.meta = dict(meta or {})

    @classmethod
    def from_spec(cls, specs: list[dict], input_shape, dtype=np.float32, seed: int = 0,
                  meta=None):
        rng = np.random.default_rng(seed)
        return cls([layer_from_spec(s, dtype, rng) for s in specs], input_shape, dtype, meta)

    @property
    def spec(self) -> list[dict]:
        return [dict(layer.spec) for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def grads(self) -> list[np.ndarray]:
        return [g for layer in self.layers if layer.params() for g in layer.grads]

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params()))

    def forward(self, x: np.ndarray, training: bool = False, rng=None) -> np.ndarray:
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeMismatch(f"network expects input {self.input_shape}, got {x.shape[1:]}")
        x = x.astype(self.dtype, copy=False)
        for layer in self.layers:
            x = layer.forward(x, training=training, rng=rng)
        return x

    def backward(self, dlogits: np.ndarray, need_input_grad: bool = False):
        d = dlogits
        for layer in reversed(self.layers[1:]):
            d = layer.backward(d)
        first = self.layers[0]
        if isinstance(first, Conv2D) and not need_input_grad:
            first.backward(d, need_dx=False)
            return None
        return first.backward(d)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.forward(x, training=False).astype(np.float64))

    def copy_params(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params()]

    def set_params(self, values: list[np.ndarray]) -> None:
        for p, v in zip(self.params(), values):
            p[...] = v


# checkpoints: "WCNN" | u16 version | u32 json length | json | raw LE tensors

CKPT_MAGIC = b"WCNN"
CKPT_VERSION = 1
CKPT_SUFFIX = ".wcnn"


def save_checkpoint(net: Network, path) -> None:
    meta = {
        "layers": net.spec,
        "input_shape": list(net.input_shape),
        "dtype": net.dtype.name,
        "meta": net.meta,
        "shapes": [list(p.shape) for p in net.params()],
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    le = net.dtype.newbyteorder("<")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<HI", CKPT_VERSION, len(blob)) + blob)
        for p in net.params():
            fh.write(np.ascontiguousarray(p, dtype=le).tobytes())


def _read_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(data) < 10:
        raise CheckpointError(f"{path}: truncated header")
    version, n = struct.unpack_from("<HI", data, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        meta = json.loads(data[10:10 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata: {exc}") from None
    return data, meta, 10 + n


def read_checkpoint_meta(path) -> dict:
    """The JSON header of a checkpoint: layers, input_shape, dtype, meta, shapes."""
    return _read_checkpoint(path)[1]


def load_checkpoint(path) -> Network:
    data, meta, pos = _read_checkpoint(path)
    dtype = np.dtype(meta["dtype"])
    net = Network.from_spec(meta["layers"], tuple(meta["input_shape"]), dtype, 0, meta["meta"])
    le = dtype.newbyteorder("<")
    for p, shape in zip(net.params(), meta["shapes"]):
        if list(p.shape) != shape:
            raise CheckpointError(f"{path}: parameter shape {shape} does not match layer spec")
        size = p.size * dtype.itemsize
        if pos + size > len(data):
            raise CheckpointError(f"{path}: truncated parameter data")
        p[...] = np.frombuffer(data, dtype=le, count=p.size, offset=pos).reshape(p.shape)
        pos += size
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return net
