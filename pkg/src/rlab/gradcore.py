"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` when at
least one input requires a gradient. ``backward`` walks the tape in reverse
insertion order and returns a :class:`GradientMap`.

Image-like tensors are channels-last (``H x W x C``), optionally with any
number of leading batch axes.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binio import Reader, pack_f64, pack_text, pack_u32
from .errors import DomainError, FormatError, ShapeError

_TAPES = []

HALF_PI = math.pi / 2
LOG_2PI = math.log(2 * math.pi)


class Tensor:
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self.data.item()

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


@dataclass
class Node:
    kind: str
    inputs: tuple
    output: Tensor
    backward: object


class Tape:
    """Append-only record of differentiable operations.

    Use as a context manager; operations executed inside the ``with`` block
    are recorded when any of their inputs requires a gradient.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)


def current_tape():
    return _TAPES[-1] if _TAPES else None


class GradientMap:
    """Gradients keyed by tensor identity; unreachable tensors get zeros."""

    def __init__(self, grads):
        self._grads = grads

    def __getitem__(self, tensor):
        g = self._grads.get(id(tensor))
        if g is None:
            return np.zeros_like(tensor.data)
        return g

    def __contains__(self, tensor):
        return id(tensor) in self._grads


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(kind, data, inputs, backward):
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(Node(kind, inputs, out, backward))
    return out


def backward(tape, loss):
    """Reverse pass from scalar ``loss`` over ``tape``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    return GradientMap(grads)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _record(
        "div",
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        ),
    )


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record("matmul", a.data @ b.data, (a, b), bw)


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record("sum", x.data.sum(axis=axis, keepdims=keepdims), (x,), bw)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / n)


def reshape(x, shape):
    x = as_tensor(x)
    return _record("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    x = as_tensor(x)
    inverse = np.argsort(axes)
    return _record(
        "transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),)
    )


def _is_basic(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(None))) or i is Ellipsis for i in items)


def index(x, idx):
    x = as_tensor(x)
    basic = _is_basic(idx)

    def bw(g):
        out = np.zeros_like(x.data)
        if basic:
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _record("index", x.data[idx], (x,), bw)


def concat(tensors, axis=-1):
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _record(
        "concat",
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def stack(tensors, axis=0):
    tensors = tuple(as_tensor(t) for t in tensors)
    return _record(
        "stack",
        np.stack([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.moveaxis(g, axis, 0)),
    )


# ------------------------------------------------------------------ pointwise


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


_POINTWISE = {
    "relu": (lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64)),
    "sigmoid": (_sigmoid, lambda x, y: y * (1.0 - y)),
    "log": (np.log, lambda x, y: 1.0 / x),
    "exp": (np.exp, lambda x, y: y),
    "sin": (np.sin, lambda x, y: np.cos(x)),
    "cos": (np.cos, lambda x, y: -np.sin(x)),
    "square": (np.square, lambda x, y: 2.0 * x),
}


def pointwise(x, kind):
    """Elementwise ``relu | sigmoid | log | exp | sin | cos | square``."""
    x = as_tensor(x)
    try:
        fwd, deriv = _POINTWISE[kind]
    except KeyError:
        raise DomainError(f"unknown pointwise kind {kind!r}") from None
    if kind == "log" and np.any(x.data <= 0):
        raise DomainError("log of a non-positive value")
    y = fwd(x.data)
    return _record(kind, y, (x,), lambda g: (g * deriv(x.data, y),))


def relu(x):
    return pointwise(x, "relu")


def sigmoid(x):
    return pointwise(x, "sigmoid")


def log(x):
    return pointwise(x, "log")


def exp(x):
    return pointwise(x, "exp")


def square(x):
    return pointwise(x, "square")


EIG_SCALE = 99.99
EIG_OFFSET = 0.01


def scaled_sigmoid(z, scale=EIG_SCALE, offset=EIG_OFFSET):
    """``scale / (1 + exp(-z)) + offset``, kept strictly inside the open range."""
    if scale <= 0:
        raise DomainError(f"scaled_sigmoid needs scale > 0, got {scale}")
    z = as_tensor(z)
    s = _sigmoid(z.data)
    lo = np.nextafter(offset, np.inf)
    hi = np.nextafter(offset + scale, -np.inf)
    y = np.clip(scale * s + offset, lo, hi)
    return _record("scaled_sigmoid", y, (z,), lambda g: (g * scale * s * (1.0 - s),))


# --------------------------------------------------------------- layers


def affine(x, weight, bias):
    """``x @ weight + bias`` over the last axis of ``x``."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0] or bias.shape != weight.shape[1:]:
        raise ShapeError(
            f"affine: input {x.shape}, weight {weight.shape}, bias {bias.shape}"
        )
    flat = x.data.reshape(-1, weight.shape[0])

    def bw(g):
        g2 = g.reshape(-1, weight.shape[1])
        return (
            (g2 @ weight.data.T).reshape(x.shape),
            flat.T @ g2,
            g2.sum(axis=0),
        )

    return _record("affine", x.data @ weight.data + bias.data, (x, weight, bias), bw)


def _im2col(xp, h, w):
    return np.concatenate(
        [xp[..., dy:dy + h, dx:dx + w, :] for dy in range(3) for dx in range(3)], axis=-1
    )


def conv2d(x, kernel, bias):
    """3x3 convolution, stride 1, zero padding 1, channels-last."""
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if x.ndim < 3:
        raise ShapeError(f"conv2d input must be (..., H, W, C), got {x.shape}")
    if kernel.shape[:2] != (3, 3) or kernel.ndim != 4:
        raise ShapeError(f"conv2d kernel must be 3x3xCinxCout, got {kernel.shape}")
    cin, cout = kernel.shape[2:]
    if x.shape[-1] != cin:
        raise ShapeError(f"conv2d: input has {x.shape[-1]} channels, kernel expects {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape}, expected ({cout},)")
    h, w = x.shape[-3:-1]
    pad = [(0, 0)] * (x.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
    cols = _im2col(np.pad(x.data, pad), h, w)
    kmat = kernel.data.reshape(9 * cin, cout)
    out = cols @ kmat + bias.data

    def bw(g):
        g2 = g.reshape(-1, cout)
        gk = (cols.reshape(-1, 9 * cin).T @ g2).reshape(kernel.shape)
        dcols = (g @ kmat.T).reshape(g.shape[:-1] + (9, cin))
        gpad = np.zeros(x.shape[:-3] + (h + 2, w + 2, cin))
        for j in range(9):
            dy, dx = divmod(j, 3)
            gpad[..., dy:dy + h, dx:dx + w, :] += dcols[..., j, :]
        return gpad[..., 1:-1, 1:-1, :], gk, g2.sum(axis=0)

    return _record("conv2d", out, (x, kernel, bias), bw)


def avg_pool2(x):
    """2x2 average pooling with stride 2 over the (H, W) axes."""
    x = as_tensor(x)
    h, w, c = x.shape[-3:]
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even spatial extents, got {x.shape}")
    lead = x.shape[:-3]
    out = x.data.reshape(lead + (h // 2, 2, w // 2, 2, c)).mean(axis=(-4, -2))

    def bw(g):
        g = np.repeat(np.repeat(g, 2, axis=-3), 2, axis=-2)
        return (g * 0.25,)

    return _record("avg_pool2", out, (x,), bw)


# ------------------------------------------------------ covariance and NLL


def _cos_sin(theta):
    """cos/sin with exact quadrant reduction, so multiples of pi/2 are exact."""
    k = np.round(theta / HALF_PI)
    r = theta - k * HALF_PI
    cr, sr = np.cos(r), np.sin(r)
    q = np.mod(k, 4).astype(int)
    c = np.choose(q, [cr, -sr, -cr, sr])
    s = np.choose(q, [sr, cr, -sr, -cr])
    return c, s


def rotation_covariance(lambda1, lambda2, theta):
    """``R(theta)^T diag(lambda1, lambda2) R(theta)`` with trailing 2x2 axes."""
    l1, l2, th = as_tensor(lambda1), as_tensor(lambda2), as_tensor(theta)
    if np.any(l1.data <= 0) or np.any(l2.data <= 0):
        raise DomainError("rotation_covariance needs positive eigenvalues")
    a, b, t = np.broadcast_arrays(l1.data, l2.data, th.data)
    c, s = _cos_sin(t)
    c2 = c * c
    s2 = 1.0 - c2
    sc = s * c
    d = b - a
    out = np.empty(a.shape + (2, 2))
    out[..., 0, 0] = a * c2 + b * s2
    out[..., 1, 1] = a * s2 + b * c2
    out[..., 0, 1] = d * sc
    out[..., 1, 0] = out[..., 0, 1]

    def bw(g):
        g00, g11 = g[..., 0, 0], g[..., 1, 1]
        goff = g[..., 0, 1] + g[..., 1, 0]
        ga = g00 * c2 + g11 * s2 - goff * sc
        gb = g00 * s2 + g11 * c2 + goff * sc
        gt = (g00 - g11) * 2 * d * sc + goff * d * (c2 - s2)
        return (
            _unbroadcast(ga, l1.shape),
            _unbroadcast(gb, l2.shape),
            _unbroadcast(gt, th.shape),
        )

    return _record("rotation_covariance", out, (l1, l2, th), bw)


def gaussian_nll(y, mu, sigma):
    """Negative log density of a bivariate normal, batched over leading axes.

    ``0.5 * log det(2 pi sigma) + 0.5 * (y - mu)^T sigma^-1 (y - mu)``; the 2x2
    inverse and determinant are taken in closed form.
    """
    y, mu, sigma = as_tensor(y), as_tensor(mu), as_tensor(sigma)
    if y.shape[-1:] != (2,) or mu.shape[-1:] != (2,) or sigma.shape[-2:] != (2, 2):
        raise ShapeError(
            f"gaussian_nll: y {y.shape}, mu {mu.shape}, sigma {sigma.shape}"
        )
    S = sigma.data
    a, b, c, d = S[..., 0, 0], S[..., 0, 1], S[..., 1, 0], S[..., 1, 1]
    det = a * d - b * c
    scale = np.maximum(np.abs(a), np.abs(d))
    if np.any(a <= 0) or np.any(det <= 0) or np.any(np.abs(b - c) > 1e-3 * scale):
        raise DomainError("gaussian_nll: sigma is not symmetric positive definite")
    inv = np.empty_like(S)
    inv[..., 0, 0] = d / det
    inv[..., 0, 1] = -b / det
    inv[..., 1, 0] = -c / det
    inv[..., 1, 1] = a / det
    r = y.data - mu.data
    u = np.einsum("...ij,...j->...i", inv, r)  # sigma^-1 r
    v = np.einsum("...ji,...j->...i", inv, r)  # sigma^-T r
    q = np.einsum("...i,...i->...", r, u)
    out = LOG_2PI + 0.5 * np.log(det) + 0.5 * q

    def bw(g):
        gg = g[..., None]
        gr = 0.5 * gg * (u + v)
        inv_t = np.swapaxes(inv, -1, -2)
        gs = 0.5 * g[..., None, None] * (inv_t - v[..., :, None] * u[..., None, :])
        return (
            _unbroadcast(gr, y.shape),
            _unbroadcast(-gr, mu.shape),
            _unbroadcast(gs, sigma.shape),
        )

    return _record("gaussian_nll", out, (y, mu, sigma), bw)


def det2x2(sigma):
    sigma = as_tensor(sigma)
    S = sigma.data
    out = S[..., 0, 0] * S[..., 1, 1] - S[..., 0, 1] * S[..., 1, 0]

    def bw(g):
        gs = np.empty_like(S)
        gs[..., 0, 0] = g * S[..., 1, 1]
        gs[..., 1, 1] = g * S[..., 0, 0]
        gs[..., 0, 1] = -g * S[..., 1, 0]
        gs[..., 1, 0] = -g * S[..., 0, 1]
        return (gs,)

    return _record("det2x2", out, (sigma,), bw)


# ---------------------------------------------------------------- optimizer


@dataclass
class RmsPropState:
    learning_rate: float = 1e-4
    decay: float = 0.9
    epsilon: float = 1e-8
    mean_square: dict = field(default_factory=dict)


def rmsprop_step(params, grads, state):
    """Update ``params`` (name -> Tensor) in place from ``grads``."""
    for name, p in params.items():
        g = grads[p]
        ms = state.mean_square.get(name)
        if ms is None:
            ms = np.zeros_like(p.data)
        ms = state.decay * ms + (1.0 - state.decay) * g * g
        state.mean_square[name] = ms
        p.data -= state.learning_rate * g / np.sqrt(ms + state.epsilon)
    return state


# ------------------------------------------------------------ checkpoints

CHECKPOINT_MAGIC = b"RLLW"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays, metadata=None):
    """Write named float64 arrays plus a JSON metadata block.

    Layout: magic ``RLLW``, u32 version, u32 count, u32-length UTF-8 JSON
    metadata, then per tensor: u32-length name, u32 rank, u32 extents,
    little-endian f64 payload.
    """
    parts = [
        CHECKPOINT_MAGIC,
        pack_u32(CHECKPOINT_VERSION),
        pack_u32(len(arrays)),
        pack_text(json.dumps(metadata or {}, sort_keys=True)),
    ]
    for name, arr in arrays.items():
        arr = arr.data if isinstance(arr, Tensor) else np.asarray(arr, dtype=np.float64)
        parts.append(pack_text(name))
        parts.append(pack_u32(arr.ndim))
        parts.extend(pack_u32(n) for n in arr.shape)
        parts.append(pack_f64(arr))
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path):
    """Return ``(arrays, metadata)`` from a file written by ``save_checkpoint``."""
    r = Reader(Path(path).read_bytes(), what="checkpoint")
    r.magic(CHECKPOINT_MAGIC)
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    count = r.u32()
    meta_at = r.pos
    try:
        metadata = json.loads(r.text())
    except json.JSONDecodeError as exc:
        raise FormatError("checkpoint metadata is not valid JSON", offset=meta_at) from exc
    arrays = {}
    for _ in range(count):
        name = r.text()
        rank = r.u32()
        shape = tuple(r.u32() for _ in range(rank))
        arrays[name] = r.f64(int(np.prod(shape, dtype=np.int64))).reshape(shape)
    r.finish()
    return arrays, metadata


# ------------------------------------------------------- finite differences


def gradient_check(fn, arrays, eps=1e-4):
    """Largest relative error between tape gradients and central differences.

    ``fn`` maps a list of Tensors to a scalar Tensor. The error for each input
    is ``|analytic - numeric| / max(|analytic|, |numeric|)`` in the 2-norm.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = fn(leaves)
    grads = backward(tape, loss)
    worst = 0.0
    for i, a in enumerate(arrays):
        numeric = np.zeros_like(a)
        flat = numeric.reshape(-1)
        for j in range(a.size):
            plus, minus = a.copy(), a.copy()
            plus.reshape(-1)[j] += eps
            minus.reshape(-1)[j] -= eps
            fp = fn([Tensor(plus) if k == i else Tensor(x) for k, x in enumerate(arrays)])
            fm = fn([Tensor(minus) if k == i else Tensor(x) for k, x in enumerate(arrays)])
            flat[j] = (fp.item() - fm.item()) / (2 * eps)
        analytic = grads[leaves[i]]
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / denom))
    return worst
