"""Finite-difference checks of every differentiable op and both networks."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .models import build_network, forward


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tol: float
    n_checked: int
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err < self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<34} max rel err {self.max_rel_err:.2e} (tol {self.tol:.0e}, "
                f"{self.n_checked} entries, {self.seconds:.2f}s)")


def rel_err(analytic, numeric, floor: float) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps analytically-zero entries comparable."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_grad(f: Callable[[], float], arr: np.ndarray, idx, h: float) -> float:
    old = arr[idx]
    arr[idx] = old + h
    up = f()
    arr[idx] = old - h
    down = f()
    arr[idx] = old
    return (up - down) / (2 * h)


def check_tensors(name: str, loss_fn: Callable[[], T.Tensor], tensors: list[T.Tensor], rng,
                  max_entries: int = 40, h: float = 1e-6, tol: float = 1e-4) -> CheckResult:
    """Compare backward() against central differences on up to ``max_entries`` per tensor."""
    t0 = time.perf_counter()
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    T.backward(loss)
    grads = [None if t.grad is None else t.grad.copy() for t in tensors]

    def f():
        return float(loss_fn().data)

    worst, count = 0.0, 0
    for t, g in zip(tensors, grads):
        g = np.zeros_like(t.data) if g is None else g
        flat = np.arange(t.data.size)
        pick = flat if flat.size <= max_entries else rng.choice(flat, size=max_entries, replace=False)
        floor = max(1e-6 * float(np.abs(g).max()), 1e-10)
        for k in pick:
            idx = np.unravel_index(k, t.data.shape)
            num = numeric_grad(f, t.data, idx, h * max(1.0, abs(float(t.data[idx]))))
            worst = max(worst, float(rel_err(g[idx], num, floor)))
            count += 1
    for t in tensors:
        t.grad = None
    return CheckResult(name, worst, tol, count, time.perf_counter() - t0)


def _weighted_sum(out: T.Tensor, rng) -> Callable[[T.Tensor], T.Tensor]:
    w = rng.standard_normal(out.shape)
    return lambda o: T.tensor_sum(T.mul(o, T.Tensor(w.astype(o.dtype))))


def op_checks(seed: int = 0, tol: float = 1e-4) -> list[CheckResult]:
    """Every layer op in high precision against central differences."""
    rng = np.random.default_rng(seed)
    f64 = np.float64
    res = []

    def run(name, build, params_of):
        x, layer_fn = build()
        proj = _weighted_sum(layer_fn(x), rng)
        res.append(check_tensors(name, lambda: proj(layer_fn(x)), [x] + params_of(), rng, tol=tol))

    c2 = T.make_conv(2, 2, 3, 3, rng, padding=1, dtype=f64)
    run("conv2d", lambda: (T.Tensor(rng.standard_normal((2, 2, 5, 5)), requires_grad=True),
                           lambda x: T.conv2d(x, c2)), lambda: c2.parameters())
    c2s = T.make_conv(2, 2, 2, 3, rng, padding=1, stride=2, dtype=f64)
    run("conv2d stride 2", lambda: (T.Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True),
                                    lambda x: T.conv2d(x, c2s)), lambda: c2s.parameters())
    c1 = T.make_conv(1, 3, 4, 3, rng, padding=1, dtype=f64)
    run("conv1d", lambda: (T.Tensor(rng.standard_normal((2, 3, 11)), requires_grad=True),
                           lambda x: T.conv1d(x, c1)), lambda: c1.parameters())
    bn = T.make_batchnorm(3, dtype=f64)
    bn.weight.data[:] = rng.uniform(0.5, 1.5, 3)
    bn.bias.data[:] = rng.standard_normal(3)
    run("batchnorm (train)", lambda: (T.Tensor(rng.standard_normal((2, 3, 4, 4)) * 2 + 1, requires_grad=True),
                                      lambda x: T.batchnorm(x, _frozen_stats(bn), True)), lambda: bn.parameters())
    bne = T.make_batchnorm(3, dtype=f64)
    bne.running_mean[:] = rng.standard_normal(3)
    bne.running_var[:] = rng.uniform(0.5, 2, 3)
    run("batchnorm (eval)", lambda: (T.Tensor(rng.standard_normal((2, 3, 7)), requires_grad=True),
                                     lambda x: T.batchnorm(x, bne, False)), lambda: bne.parameters())
    run("relu", lambda: (T.Tensor(_away_from_zero(rng, (3, 7)), requires_grad=True), T.relu), lambda: [])
    run("sigmoid", lambda: (T.Tensor(rng.standard_normal((3, 7)) * 3, requires_grad=True), T.sigmoid), lambda: [])
    run("avgpool 2d", lambda: (T.Tensor(rng.standard_normal((2, 2, 5, 6)), requires_grad=True),
                               lambda x: T.avgpool(x, 2)), lambda: [])
    run("avgpool 1d", lambda: (T.Tensor(rng.standard_normal((2, 2, 9)), requires_grad=True),
                               lambda x: T.avgpool(x, 2)), lambda: [])
    dw = T.make_depthwise(3, 4, dtype=f64)
    dw.weight.data[:] = rng.standard_normal(dw.weight.shape)
    run("depthwise_conv2d", lambda: (T.Tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True),
                                     lambda x: T.depthwise_conv2d(x, dw)), lambda: dw.parameters())
    wa = T.make_weighted_avg1d(3, 6, dtype=f64)
    wa.weight.data[:] = rng.standard_normal(wa.weight.shape)
    run("weighted_avg1d", lambda: (T.Tensor(rng.standard_normal((2, 3, 6)), requires_grad=True),
                                   lambda x: T.weighted_avg1d(x, wa)), lambda: wa.parameters())
    lin = T.make_linear(5, 3, rng, dtype=f64)
    run("linear", lambda: (T.Tensor(rng.standard_normal((4, 5)), requires_grad=True),
                           lambda x: T.linear(x, lin)), lambda: lin.parameters())
    target = rng.standard_normal((4, 3))
    pred = T.Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    res.append(check_tensors("mse_loss", lambda: T.mse_loss(pred, target), [pred], rng, tol=tol))
    return res


def _frozen_stats(bn: T.LayerParams) -> T.LayerParams:
    # running-stat updates do not affect a training-mode forward; reset so repeated calls stay identical
    bn.running_mean[:] = 0.0
    bn.running_var[:] = 1.0
    return bn


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def network_check(task: str, precision: str = "high", n_params: int = 10, seed: int = 0,
                  batch: int = 2, tol: float | None = None) -> CheckResult:
    """MSE-loss gradient of a full network on sampled parameter entries.

    Standard precision compares the float32 backward pass against float64
    finite differences taken at the same parameter values.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    net = build_network(task, "full", seed=seed, precision=precision)
    ref = build_network(task, "full", seed=seed, precision="high")
    for name in net.layers:
        for a, b in zip(net.layers[name].parameters(), ref.layers[name].parameters()):
            b.data[...] = a.data.astype(np.float64)
    shape = (batch,) + net.spec.input_shape
    x = rng.standard_normal(shape)
    y = rng.uniform(0, net.spec.output_scale, size=(batch, net.spec.out_features))

    def loss_of(n):
        for p in n.layers.values():
            if p.kind == "batchnorm":
                p.running_mean[:] = 0.0
                p.running_var[:] = 1.0
        return T.mse_loss(forward(n, x.astype(n.dtype), training=True), y.astype(n.dtype))

    params = net.parameters()
    loss = loss_of(net)
    T.backward(loss)
    sizes = np.array([p.data.size for p in params])
    picks = []
    # conv biases feeding training-mode batch norm have an analytically zero gradient; sample elsewhere
    eligible = [i for i, (name, lp) in enumerate(_named(net)) if not (lp.kind in ("conv1d", "conv2d") and name == "bias")]
    probs = sizes[eligible] / sizes[eligible].sum()
    for _ in range(n_params):
        ti = eligible[rng.choice(len(eligible), p=probs)]
        picks.append((ti, np.unravel_index(rng.integers(sizes[ti]), params[ti].shape)))
    ref_params = ref.parameters()
    worst = 0.0
    for ti, idx in picks:
        g = float(params[ti].grad[idx])
        arr = ref_params[ti].data
        h = 1e-6 * max(1.0, abs(float(arr[idx])))
        num = numeric_grad(lambda: float(loss_of(ref).data), arr, idx, h)
        floor = 1e-6 * float(np.abs(params[ti].grad).max()) + 1e-12
        worst = max(worst, float(rel_err(g, num, floor)))
    for p in params:
        p.grad = None
    if tol is None:
        tol = 1e-4 if precision == "high" else 1e-2
    label = {"image": "LakshyaNet", "ecg": "NimeshaNet"}[task]
    return CheckResult(f"{label} full net ({precision})", worst, tol, len(picks), time.perf_counter() - t0)


def _named(net):
    out = []
    for lp in net.layers.values():
        out.append(("weight", lp))
        if lp.bias is not None:
            out.append(("bias", lp))
    return out


def run_all(seed: int = 0, net_tol: float = 1e-3) -> list[CheckResult]:
    results = op_checks(seed)
    for task in ("image", "ecg"):
        results.append(network_check(task, "high", seed=seed, tol=net_tol))
    return results
