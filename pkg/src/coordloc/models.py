"""LakshyaNet (2-D centre regression) and NimeshaNet (1-D changepoint timing).

``variant="reduced"`` appends one more window-2 average pool to Conv
Block 4, shrinking the learnable pooling layer to a quarter (2-D) or about
half (1-D) of its weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T

# output-shape columns of the architecture tables, per (task, variant)
TABLE_SHAPES = {
    ("image", "full"): [("Input", (5, 256, 256)), ("Conv Block 1", (16, 128, 128)),
                        ("Conv Block 2", (32, 64, 64)), ("Conv Block 3", (64, 32, 32)),
                        ("Conv Block 4", (128, 32, 32)), ("Learnable Pool", (128, 1, 1)),
                        ("Fully Connected", (2,))],
    ("image", "reduced"): [("Input", (5, 256, 256)), ("Conv Block 1", (16, 128, 128)),
                           ("Conv Block 2", (32, 64, 64)), ("Conv Block 3", (64, 32, 32)),
                           ("Conv Block 4", (128, 16, 16)), ("Learnable Pool", (128, 1, 1)),
                           ("Fully Connected", (2,))],
    ("ecg", "full"): [("Input", (3, 500)), ("Conv Block 1", (16, 250)), ("Conv Block 2", (32, 125)),
                      ("Conv Block 3", (64, 62)), ("Conv Block 4", (128, 31)),
                      ("Learnable Pool", (128,)), ("Fully Connected", (1,))],
    ("ecg", "reduced"): [("Input", (3, 500)), ("Conv Block 1", (16, 250)), ("Conv Block 2", (32, 125)),
                         ("Conv Block 3", (64, 62)), ("Conv Block 4", (128, 15)),
                         ("Learnable Pool", (128,)), ("Fully Connected", (1,))],
}

CHANNELS = (16, 32, 64, 128)


@dataclass
class Block:
    name: str
    conv: str  # layer key
    bn: str
    pools: int  # number of window-2 pools after ReLU


@dataclass
class NetworkSpec:
    task: str
    variant: str
    input_shape: tuple
    blocks: list
    pool_kernel: int  # spatial/temporal extent consumed by the learnable pool
    out_features: int
    output_scale: float

    def __post_init__(self):
        if self.task not in ("image", "ecg"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.variant not in ("full", "reduced"):
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def ndim(self) -> int:
        return 2 if self.task == "image" else 1

    @property
    def name(self) -> str:
        base = "LakshyaNet" if self.task == "image" else "NimeshaNet"
        return base if self.variant == "full" else f"R.P. {base}"


@dataclass
class Network:
    spec: NetworkSpec
    layers: dict  # name -> LayerParams, insertion order = forward order
    dtype: np.dtype = field(default=np.dtype(np.float32))

    def parameters(self) -> list[T.Tensor]:
        return [t for p in self.layers.values() for t in p.parameters()]

    def layer_list(self) -> list[T.LayerParams]:
        return list(self.layers.values())


def _spec(task: str, variant: str) -> NetworkSpec:
    if task == "image":
        pools = [1, 1, 1, 0]
        inp, extent, out_f, scale = (5, 256, 256), 256, 2, 255.0
    else:
        pools = [1, 1, 1, 1]
        inp, extent, out_f, scale = (3, 500), 500, 1, 20.0
    if variant == "reduced":
        pools[3] += 1
    for p in pools:
        extent //= 2 ** p
    blocks = [Block(f"Conv Block {i + 1}", f"conv{i + 1}", f"bn{i + 1}", pools[i]) for i in range(4)]
    return NetworkSpec(task, variant, inp, blocks, extent, out_f, scale)


def _build(task: str, variant: str, seed: int, precision) -> Network:
    spec = _spec(task, variant)
    dtype = T.resolve_dtype(precision)
    rng = np.random.default_rng(seed)
    layers = {}
    cin = spec.input_shape[0]
    for blk, cout in zip(spec.blocks, CHANNELS):
        layers[blk.conv] = T.make_conv(spec.ndim, cin, cout, 3, rng, padding=1, dtype=dtype)
        layers[blk.bn] = T.make_batchnorm(cout, dtype=dtype)
        cin = cout
    if spec.ndim == 2:
        layers["pool"] = T.make_depthwise(cin, spec.pool_kernel, dtype=dtype)
    else:
        layers["pool"] = T.make_weighted_avg1d(cin, spec.pool_kernel, dtype=dtype)
    layers["fc"] = T.make_linear(cin, spec.out_features, rng, dtype=dtype)
    net = Network(spec, layers, dtype)
    check_shapes(net)
    return net


def build_lakshyanet(variant: str = "full", seed: int = 0, precision="standard") -> Network:
    return _build("image", variant, seed, precision)


def build_nimeshanet(variant: str = "full", seed: int = 0, precision="standard") -> Network:
    return _build("ecg", variant, seed, precision)


def build_network(task: str, variant: str = "full", seed: int = 0, precision="standard") -> Network:
    return _build(task, variant, seed, precision)


def infer_shapes(spec: NetworkSpec) -> list[tuple[str, tuple]]:
    """Per-sample output shape after each table row, computed symbolically."""
    shapes = [("Input", tuple(spec.input_shape))]
    spatial = list(spec.input_shape[1:])
    for blk, cout in zip(spec.blocks, CHANNELS):
        spatial = [(n + 2 * 1 - 3) // 1 + 1 for n in spatial]
        for _ in range(blk.pools):
            spatial = [n // 2 for n in spatial]
        shapes.append((blk.name, (cout, *spatial)))
    if any(n != spec.pool_kernel for n in spatial):
        raise ValueError(f"learnable pool kernel {spec.pool_kernel} does not cover extent {spatial}")
    shapes.append(("Learnable Pool", (CHANNELS[-1], 1, 1) if spec.ndim == 2 else (CHANNELS[-1],)))
    shapes.append(("Fully Connected", (spec.out_features,)))
    return shapes


def check_shapes(net: Network):
    got = infer_shapes(net.spec)
    want = TABLE_SHAPES[(net.spec.task, net.spec.variant)]
    if got != want:
        raise AssertionError(f"shape chain {got} does not match architecture table {want}")


def forward(net: Network, x, training: bool = False, trace: list | None = None) -> T.Tensor:
    """Predictions scaled to ``[0, output_scale]``.

    ``x`` is a ``(B, C, ...)`` array, EncodedInput, or Tensor.  When ``trace``
    is a list, ``(row name, per-sample shape)`` pairs are appended to it.
    """
    spec = net.spec
    if hasattr(x, "channels"):
        x = x.channels
    if not isinstance(x, T.Tensor):
        x = T.Tensor(np.asarray(x, dtype=net.dtype))
    if x.shape[1:] != spec.input_shape:
        raise ValueError(f"{spec.name} expects (B, {spec.input_shape}), got {x.shape}")
    if trace is not None:
        trace.append(("Input", x.shape[1:]))
    h = x
    for blk in spec.blocks:
        h = T.apply_layer(h, net.layers[blk.conv], training)
        h = T.batchnorm(h, net.layers[blk.bn], training)
        h = T.relu(h)
        for _ in range(blk.pools):
            h = T.avgpool(h, 2)
        if trace is not None:
            trace.append((blk.name, h.shape[1:]))
    h = T.apply_layer(h, net.layers["pool"], training)
    if trace is not None:
        trace.append(("Learnable Pool", h.shape[1:]))
    h = T.reshape(h, (h.shape[0], -1))
    h = T.linear(h, net.layers["fc"])
    h = T.scale(T.sigmoid(h), spec.output_scale)
    if trace is not None:
        trace.append(("Fully Connected", h.shape[1:]))
    return h


def predict(net: Network, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Eval-mode predictions without building a graph that outlives each batch."""
    outs = []
    for i in range(0, len(x), batch_size):
        outs.append(forward(net, np.asarray(x[i:i + batch_size], dtype=net.dtype), training=False).data)
    return np.concatenate(outs, axis=0) if outs else np.zeros((0, net.spec.out_features))


def param_count(net: Network) -> dict:
    counts = {name: {"weight": p.weight.data.size, "bias": 0 if p.bias is None else p.bias.data.size}
              for name, p in net.layers.items()}
    counts["total"] = sum(c["weight"] + c["bias"] for c in counts.values())
    return counts


def describe(net: Network) -> str:
    """Layer table in the layout of the architecture tables."""
    spec = net.spec
    rows = [("Layer", "Output Shape", "Details")]
    shapes = dict(infer_shapes(spec))
    fmt = lambda s: " x ".join(str(v) for v in s)
    unit = "" if spec.ndim == 2 else "1d"
    rows.append(("Input", fmt(shapes["Input"]),
                 "RGB + 2 coordinate channels" if spec.ndim == 2
                 else "2 ECG channels + 1 coordinate/intensity-weighted channel"))
    cin = spec.input_shape[0]
    for blk, cout in zip(spec.blocks, CHANNELS):
        k = "3x3" if spec.ndim == 2 else "3"
        detail = f"Conv{unit}({cin},{cout},{k},pad=1) + BN + ReLU"
        detail += "".join(f" + AvgPool{unit}(2)" for _ in range(blk.pools))
        rows.append((blk.name, fmt(shapes[blk.name]), detail))
        cin = cout
    if spec.ndim == 2:
        pool = f"Depthwise Conv({cin},{cin},k={spec.pool_kernel},groups={cin})"
    else:
        pool = f"WeightedAverage1D({cin},{spec.pool_kernel}): learnable weighted sum across time"
    rows.append(("Learnable Pool", fmt(shapes["Learnable Pool"]), pool))
    rng = "[0,255]" if spec.ndim == 2 else "[0,20]"
    rows.append(("Fully Connected", fmt(shapes["Fully Connected"]),
                 f"Linear({cin}->{spec.out_features}) + Sigmoid, scaled to {rng}"))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    lines = [f"{spec.name} (input {fmt(spec.input_shape)})"]
    for r in rows:
        lines.append(" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def save_checkpoint(net: Network, path):
    with open(path, "wb") as fh:
        fh.write(T.dump_layers(net.layer_list()))


def load_checkpoint(path, task: str, variant: str, precision="standard") -> Network:
    net = build_network(task, variant, 0, precision)
    with open(path, "rb") as fh:
        layers = T.load_layers(fh.read(), dtype=net.dtype)
    if len(layers) != len(net.layers):
        raise ValueError("checkpoint layer count does not match network")
    for name, p in zip(list(net.layers), layers):
        if p.kind != net.layers[name].kind or p.weight.shape != net.layers[name].weight.shape:
            raise ValueError(f"checkpoint layer {name} does not match {task}/{variant}")
        net.layers[name] = p
    return net
