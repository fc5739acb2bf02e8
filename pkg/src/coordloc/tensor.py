"""Minimal reverse-mode differentiable arrays.

Only the layer set used by LakshyaNet and NimeshaNet is provided: 1-D/2-D
convolution, batch normalisation, ReLU, sigmoid, window-2 average pooling,
full-extent depthwise convolution, learnable temporal weighting, linear
layers and an MSE loss.  Arrays are plain numpy; each op records a closure
that pushes its output gradient back to its parents.
"""
from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

STANDARD = np.float32
HIGH = np.float64

_ids = itertools.count()


def resolve_dtype(precision) -> np.dtype:
    if precision in ("standard", None):
        return np.dtype(STANDARD)
    if precision == "high":
        return np.dtype(HIGH)
    return np.dtype(precision)


class Tensor:
    """n-dimensional array participating in a computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: tuple = (), _backward: Callable | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(STANDARD)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.node_id = next(_ids)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True).reshape(self.data.shape)
        else:
            self.grad += g

    # a handful of arithmetic ops so small graphs can be written inline
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other, self.dtype), -1.0))

    def sum(self):
        return tensor_sum(self)

    def backward(self):
        backward(self)


def _as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype or STANDARD))


def _node(data, parents, backward_fn) -> Tensor:
    return Tensor(data, _parents=tuple(parents), _backward=backward_fn)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)

    def _bw(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), _bw)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)

    def _bw(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), _bw)


def tensor_sum(a: Tensor) -> Tensor:
    def _bw(g):
        a._accumulate(np.broadcast_to(g, a.shape))

    return _node(np.asarray(a.data.sum(), dtype=a.dtype), (a,), _bw)


def scale(a: Tensor, factor: float) -> Tensor:
    def _bw(g):
        a._accumulate(g * factor)

    return _node(a.data * a.dtype.type(factor), (a,), _bw)


def backward(loss: Tensor):
    """Populate ``.grad`` on every tensor reachable from a scalar ``loss``."""
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.node_id not in seen and p.requires_grad:
                stack.append((p, False))
    loss.grad = np.ones(loss.shape, dtype=loss.dtype)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        g, node.grad = node.grad, None  # interior buffers are released once consumed
        node._backward(g)
    return loss


# ---------------------------------------------------------------- layers


KINDS = ("conv2d", "conv1d", "batchnorm", "linear", "depthwise_conv2d", "weighted_avg1d")


@dataclass
class LayerParams:
    kind: str
    weight: Tensor
    bias: Tensor | None = None
    hyper: dict = field(default_factory=dict)
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        expected = expected_weight_shape(self.kind, self.hyper)
        if tuple(self.weight.shape) != expected:
            raise ValueError(f"{self.kind} weight shape {self.weight.shape} != {expected}")
        if self.running_var is not None and np.any(self.running_var < 0):
            raise ValueError("running_var must be non-negative")

    def parameters(self) -> list[Tensor]:
        return [t for t in (self.weight, self.bias) if t is not None]

    def n_params(self) -> int:
        return sum(t.data.size for t in self.parameters())


def expected_weight_shape(kind: str, h: dict) -> tuple:
    if kind == "conv2d":
        return (h["out_ch"], h["in_ch"] // h.get("groups", 1), h["kernel"], h["kernel"])
    if kind == "conv1d":
        return (h["out_ch"], h["in_ch"] // h.get("groups", 1), h["kernel"])
    if kind == "batchnorm":
        return (h["channels"],)
    if kind == "linear":
        return (h["out_features"], h["in_features"])
    if kind == "depthwise_conv2d":
        return (h["channels"], 1, h["kernel"], h["kernel"])
    if kind == "weighted_avg1d":
        return (h["channels"], h["length"])
    raise ValueError(kind)


def _kaiming(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _bias(rng, n, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=n).astype(dtype)


def make_conv(ndim: int, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
              padding: int = 0, stride: int = 1, dtype=STANDARD) -> LayerParams:
    kind = "conv2d" if ndim == 2 else "conv1d"
    hyper = dict(in_ch=in_ch, out_ch=out_ch, kernel=kernel, padding=padding, stride=stride, groups=1)
    shape = expected_weight_shape(kind, hyper)
    fan_in = in_ch * kernel ** ndim
    return LayerParams(kind, Tensor(_kaiming(rng, shape, fan_in, dtype), requires_grad=True),
                       Tensor(_bias(rng, out_ch, fan_in, dtype), requires_grad=True), hyper)


def make_batchnorm(channels: int, dtype=STANDARD, momentum: float = 0.1, eps: float = 1e-5) -> LayerParams:
    return LayerParams(
        "batchnorm",
        Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
        Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
        dict(channels=channels, momentum=momentum, eps=eps),
        running_mean=np.zeros(channels, dtype=dtype),
        running_var=np.ones(channels, dtype=dtype),
    )


def make_linear(in_features: int, out_features: int, rng: np.random.Generator, dtype=STANDARD) -> LayerParams:
    hyper = dict(in_features=in_features, out_features=out_features)
    return LayerParams("linear",
                       Tensor(_kaiming(rng, (out_features, in_features), in_features, dtype), requires_grad=True),
                       Tensor(_bias(rng, out_features, in_features, dtype), requires_grad=True), hyper)


def make_depthwise(channels: int, kernel: int, dtype=STANDARD) -> LayerParams:
    w = np.full((channels, 1, kernel, kernel), 1.0 / kernel ** 2, dtype=dtype)
    return LayerParams("depthwise_conv2d", Tensor(w, requires_grad=True),
                       Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
                       dict(channels=channels, kernel=kernel, groups=channels))


def make_weighted_avg1d(channels: int, length: int, dtype=STANDARD) -> LayerParams:
    w = np.full((channels, length), 1.0 / length, dtype=dtype)
    return LayerParams("weighted_avg1d", Tensor(w, requires_grad=True), None,
                       dict(channels=channels, length=length))


# ---------------------------------------------------------------- ops


def _conv_nd(x: Tensor, p: LayerParams, nd: int) -> Tensor:
    h = p.hyper
    if x.data.ndim != nd + 2:
        raise ValueError(f"expected {nd + 2}-d input, got shape {x.shape}")
    if x.shape[1] != h["in_ch"]:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, layer expects {h['in_ch']}")
    k, pad, s = h["kernel"], h.get("padding", 0), h.get("stride", 1)
    spatial = x.shape[2:]
    out_sp = tuple((n + 2 * pad - k) // s + 1 for n in spatial)
    if any(n <= 0 for n in out_sp):
        raise ValueError(f"non-positive output extent {out_sp}")
    w = p.weight.data
    xp = np.pad(x.data, [(0, 0), (0, 0)] + [(pad, pad)] * nd) if pad else x.data
    axes = tuple(range(2, 2 + nd))
    win = sliding_window_view(xp, (k,) * nd, axis=axes)
    if s != 1:
        win = win[(slice(None), slice(None)) + tuple(slice(None, None, s) for _ in range(nd))]
    # win: B, C, *out_sp, *k ; contract C and kernel axes
    cax = [1] + list(range(2 + nd, 2 + 2 * nd))
    out = np.tensordot(win, w, axes=(cax, [1] + list(range(2, 2 + nd))))  # B, *out_sp, O
    out = np.moveaxis(out, -1, 1)
    if p.bias is not None:
        out = out + p.bias.data.reshape((1, -1) + (1,) * nd)
    out = np.ascontiguousarray(out)

    def _bw(g):
        if p.bias is not None and p.bias.requires_grad:
            p.bias._accumulate(g.sum(axis=(0,) + axes))
        if p.weight.requires_grad:
            gw = np.tensordot(g, win, axes=([0] + list(axes), [0] + list(axes)))  # O, C, *k
            p.weight._accumulate(gw)
        if x.requires_grad:
            gcol = np.tensordot(g, w, axes=([1], [0]))  # B, *out_sp, C, *k
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            for off in itertools.product(range(k), repeat=nd):
                sl = (slice(None), slice(None)) + tuple(
                    slice(o, o + s * (n - 1) + 1, s) for o, n in zip(off, out_sp))
                gxp[sl] += np.moveaxis(gcol[(Ellipsis,) + off], -1, 1)
            if pad:
                gxp = gxp[(slice(None), slice(None)) + (slice(pad, -pad),) * nd]
            x._accumulate(gxp)

    return _node(out, (x, p.weight) + ((p.bias,) if p.bias is not None else ()), _bw)


def conv2d(x: Tensor, p: LayerParams) -> Tensor:
    """Cross-correlation over the last two axes of a ``B,C,H,W`` tensor."""
    return _conv_nd(x, p, 2)


def conv1d(x: Tensor, p: LayerParams) -> Tensor:
    return _conv_nd(x, p, 1)


def batchnorm(x: Tensor, p: LayerParams, training: bool) -> Tensor:
    """Per-channel normalisation over every axis except axis 1.

    Training mode uses batch statistics and updates the running estimates
    (biased variance for normalising, unbiased for the running estimate).
    """
    c = p.hyper["channels"]
    if x.data.ndim < 2 or x.shape[1] != c:
        raise ValueError(f"batchnorm expects {c} channels on axis 1, got shape {x.shape}")
    eps, mom = p.hyper.get("eps", 1e-5), p.hyper.get("momentum", 0.1)
    axes = (0,) + tuple(range(2, x.data.ndim))
    bshape = (1, c) + (1,) * (x.data.ndim - 2)
    gamma, beta = p.weight, p.bias
    if training:
        mu = x.data.mean(axis=axes)
        xc = x.data - mu.reshape(bshape)
        var = (xc * xc).mean(axis=axes)
        n = x.data.size // c
        unbiased = var * n / max(n - 1, 1)
        p.running_mean[...] = (1 - mom) * p.running_mean + mom * mu
        p.running_var[...] = (1 - mom) * p.running_var + mom * unbiased
    else:
        mu, var = p.running_mean, p.running_var
        xc = x.data - mu.reshape(bshape)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = xc * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def _bw(g):
        gamma._accumulate((g * xhat).sum(axis=axes))
        beta._accumulate(g.sum(axis=axes))
        if not x.requires_grad:
            return
        gx_hat = g * gamma.data.reshape(bshape)
        if training:
            m = x.data.size // c
            sum_g = gx_hat.sum(axis=axes).reshape(bshape)
            sum_gx = (gx_hat * xhat).sum(axis=axes).reshape(bshape)
            gx = (inv.reshape(bshape) / m) * (m * gx_hat - sum_g - xhat * sum_gx)
        else:
            gx = gx_hat * inv.reshape(bshape)
        x._accumulate(gx)

    return _node(out, (x, gamma, beta), _bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def _bw(g):
        x._accumulate(g * mask)

    return _node(x.data * mask, (x,), _bw)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so large |x| never overflows exp
    z = x.data
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)

    def _bw(g):
        x._accumulate(g * out * (1.0 - out))

    return _node(out, (x,), _bw)


def avgpool(x: Tensor, window: int = 2, ndim: int | None = None) -> Tensor:
    """Non-overlapping mean pooling over the trailing spatial axes.

    ``ndim`` defaults to ``x.ndim - 2``.  Odd extents drop the trailing
    element.
    """
    nd = x.data.ndim - 2 if ndim is None else ndim
    spatial = x.shape[-nd:]
    if any(n < window for n in spatial):
        raise ValueError(f"spatial extent {spatial} smaller than pooling window {window}")
    out_sp = tuple(n // window for n in spatial)
    lead = x.shape[:-nd]
    crop = x.data[(Ellipsis,) + tuple(slice(0, o * window) for o in out_sp)]
    shp = lead + sum(((o, window) for o in out_sp), ())
    red = tuple(len(lead) + 2 * i + 1 for i in range(nd))
    out = crop.reshape(shp).mean(axis=red)
    area = window ** nd

    def _bw(g):
        ge = g / area
        for i in range(nd):
            ge = np.repeat(ge, window, axis=len(lead) + i)
        full = np.zeros(x.shape, dtype=x.dtype)
        full[(Ellipsis,) + tuple(slice(0, o * window) for o in out_sp)] = ge
        x._accumulate(full)

    return _node(out, (x,), _bw)


def depthwise_conv2d(x: Tensor, p: LayerParams) -> Tensor:
    """Full-extent depthwise convolution: a learned weighted sum per channel."""
    c, k = p.hyper["channels"], p.hyper["kernel"]
    if x.data.ndim != 4 or x.shape[1] != c:
        raise ValueError(f"expected (B,{c},{k},{k}) input, got {x.shape}")
    if x.shape[2] != k or x.shape[3] != k:
        raise ValueError(f"kernel {k} must equal spatial extent {x.shape[2:]}")
    w = p.weight.data[:, 0]
    out = np.einsum("bcij,cij->bc", x.data, w) + p.bias.data
    out = out[:, :, None, None]

    def _bw(g):
        g2 = g[:, :, 0, 0]
        p.bias._accumulate(g2.sum(axis=0))
        p.weight._accumulate(np.einsum("bc,bcij->cij", g2, x.data)[:, None])
        x._accumulate(g2[:, :, None, None] * w[None])

    return _node(out, (x, p.weight, p.bias), _bw)


def weighted_avg1d(x: Tensor, p: LayerParams) -> Tensor:
    c, n = p.hyper["channels"], p.hyper["length"]
    if x.data.ndim != 3 or x.shape[1] != c:
        raise ValueError(f"expected (B,{c},{n}) input, got {x.shape}")
    if x.shape[2] != n:
        raise ValueError(f"weight length {n} != input length {x.shape[2]}")
    w = p.weight.data
    out = np.einsum("bct,ct->bc", x.data, w)

    def _bw(g):
        p.weight._accumulate(np.einsum("bc,bct->ct", g, x.data))
        x._accumulate(g[:, :, None] * w[None])

    return _node(out, (x, p.weight), _bw)


def linear(x: Tensor, p: LayerParams) -> Tensor:
    fin = p.hyper["in_features"]
    if x.data.ndim != 2 or x.shape[1] != fin:
        raise ValueError(f"linear expects (B,{fin}) input, got {x.shape}")
    w = p.weight.data
    out = x.data @ w.T + p.bias.data

    def _bw(g):
        p.weight._accumulate(g.T @ x.data)
        p.bias._accumulate(g.sum(axis=0))
        x._accumulate(g @ w)

    return _node(out, (x, p.weight, p.bias), _bw)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    def _bw(g):
        x._accumulate(g.reshape(x.shape))

    return _node(x.data.reshape(shape), (x,), _bw)


def mse_loss(pred: Tensor, target) -> Tensor:
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if pred.shape != t.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {t.shape}")
    diff = pred.data - t
    n = diff.size

    def _bw(g):
        pred._accumulate(g * 2.0 * diff / n)

    return _node(np.asarray((diff * diff).mean(), dtype=pred.dtype), (pred,), _bw)


def apply_layer(x: Tensor, p: LayerParams, training: bool = False) -> Tensor:
    if p.kind == "conv2d":
        return conv2d(x, p)
    if p.kind == "conv1d":
        return conv1d(x, p)
    if p.kind == "batchnorm":
        return batchnorm(x, p, training)
    if p.kind == "linear":
        return linear(x, p)
    if p.kind == "depthwise_conv2d":
        return depthwise_conv2d(x, p)
    return weighted_avg1d(x, p)


# ---------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update in place; gradients are cleared after."""
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if len(state.first_moment) != len(params):
        raise ValueError("parameter list changed between Adam steps")
    missing = [i for i, p in enumerate(params) if p.grad is None]
    if len(missing) == len(params):
        raise ValueError("adam_step called with no populated gradients")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= step.astype(p.dtype)
        p.grad = None


# ---------------------------------------------------------------- checkpoint

MAGIC = b"CLOC"
FORMAT_VERSION = 1
_KIND_TAG = {k: i for i, k in enumerate(KINDS)}
_HYPER_KEYS = ("in_ch", "out_ch", "kernel", "padding", "stride", "groups", "channels",
               "in_features", "out_features", "length")


def _write_array(buf: list, a: np.ndarray | None):
    if a is None:
        buf.append(struct.pack("<B", 0))
        return
    a = np.asarray(a)
    buf.append(struct.pack("<BB", 1, a.ndim))
    buf.append(struct.pack(f"<{a.ndim}I", *a.shape))
    buf.append(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_array(mv: memoryview, pos: int):
    (present,) = struct.unpack_from("<B", mv, pos)
    pos += 1
    if not present:
        return None, pos
    (nd,) = struct.unpack_from("<B", mv, pos)
    pos += 1
    shape = struct.unpack_from(f"<{nd}I", mv, pos)
    pos += 4 * nd
    n = int(np.prod(shape)) if nd else 1
    arr = np.frombuffer(mv, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
    return arr, pos + 8 * n


def dump_layers(layers: Iterable[LayerParams]) -> bytes:
    layers = list(layers)
    buf = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(layers))]
    for p in layers:
        buf.append(struct.pack("<B", _KIND_TAG[p.kind]))
        hyper_ints = [int(p.hyper.get(k, -1)) for k in _HYPER_KEYS]
        buf.append(struct.pack(f"<{len(_HYPER_KEYS)}i", *hyper_ints))
        buf.append(struct.pack("<2d", float(p.hyper.get("momentum", 0.0)), float(p.hyper.get("eps", 0.0))))
        for a in (p.weight.data, None if p.bias is None else p.bias.data, p.running_mean, p.running_var):
            _write_array(buf, a)
    return b"".join(buf)


def load_layers(blob: bytes, dtype=None) -> list[LayerParams]:
    """Inverse of :func:`dump_layers`.  ``dtype`` defaults to float64."""
    mv = memoryview(blob)
    if bytes(mv[:4]) != MAGIC:
        raise ValueError("not a CLOC checkpoint")
    version, count = struct.unpack_from("<HI", mv, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 10
    out = []
    kinds = {v: k for k, v in _KIND_TAG.items()}
    dt = np.dtype(dtype or HIGH)
    for _ in range(count):
        (tag,) = struct.unpack_from("<B", mv, pos)
        pos += 1
        vals = struct.unpack_from(f"<{len(_HYPER_KEYS)}i", mv, pos)
        pos += 4 * len(_HYPER_KEYS)
        mom, eps = struct.unpack_from("<2d", mv, pos)
        pos += 16
        hyper = {k: v for k, v in zip(_HYPER_KEYS, vals) if v != -1}
        kind = kinds[tag]
        if kind == "batchnorm":
            hyper.update(momentum=mom, eps=eps)
        arrays = []
        for _ in range(4):
            a, pos = _read_array(mv, pos)
            arrays.append(a)
        w, b, rm, rv = arrays
        out.append(LayerParams(
            kind, Tensor(w.astype(dt), requires_grad=True),
            None if b is None else Tensor(b.astype(dt), requires_grad=True), hyper,
            running_mean=None if rm is None else rm.astype(dt),
            running_var=None if rv is None else rv.astype(dt)))
    return out
