"""Structure-constrained encoder/decoder.

Layout for ``levels = L`` (``L + 1`` encoder blocks, widths doubling):

* encoder block ``t`` (t = 1..L+1): [maxpool] conv-BN-ReLU x2 -> ``e_t``
* structure seed: conv-BN-ReLU on ``e_1``
* SCB ``t`` (t = 2..L+1): ``u = up(e_t)``;
  ``a = sigmoid(conv1x1(ReLU(BN(conv3x3(concat(u, s_t))))))``; ``f_t = u * a``;
  the next structure state is ``maxpool(f_t)``
* decoder level ``t`` (t = L+1..2): concat(up(d_t), f_t) -> conv-BN-ReLU x2
* depth head: conv1x1 on ``d_1`` -> sigmoid
* vessel head: ``f_{L+1}`` upsampled to full size -> conv3x3 -> sigmoid
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import (BatchNorm, Concat, Conv2d, Gate, MaxPool2, ReLU, ShapeError,
                     Sigmoid, Tape, Tensor, Upsample2)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class Topology:
    levels: int = 4
    base_width: int = 8
    in_channels: int = 1

    def __post_init__(self):
        if self.levels < 1 or self.base_width < 1 or self.in_channels < 1:
            raise ValueError(f"invalid topology {self}")

    def width(self, t: int) -> int:
        return self.base_width * 2 ** (t - 1)

    @property
    def n_encoder_blocks(self) -> int:
        return self.levels + 1


@dataclass
class ScNetParams:
    topology: Topology
    weights: dict = field(default_factory=dict)
    running: dict = field(default_factory=dict)  # bn name -> (mean, var)

    def astype(self, dtype) -> "ScNetParams":
        return ScNetParams(
            self.topology,
            {k: v.astype(dtype) for k, v in self.weights.items()},
            {k: (m.astype(dtype), v.astype(dtype)) for k, (m, v) in self.running.items()},
        )

    def copy(self) -> "ScNetParams":
        return self.astype(next(iter(self.weights.values())).dtype)

    @property
    def n_scb(self) -> int:
        return sum(1 for k in self.weights if k.startswith("scb") and k.endswith(".att.w"))


def _layer_specs(topo: Topology):
    """Yield (name, shape, kind) in canonical order."""
    w = topo.width
    L = topo.levels

    def conv_bn(prefix, cin, cout, k=3):
        yield f"{prefix}.conv.w", (cout, cin, k, k), "conv"
        yield f"{prefix}.bn.gamma", (cout,), "gamma"
        yield f"{prefix}.bn.beta", (cout,), "beta"

    for t in range(1, L + 2):
        cin = topo.in_channels if t == 1 else w(t - 1)
        yield from conv_bn(f"enc{t}.a", cin, w(t))
        yield from conv_bn(f"enc{t}.b", w(t), w(t))
    yield from conv_bn("seed", w(1), w(1))
    for t in range(2, L + 2):
        cs = w(1) if t == 2 else w(t - 1)
        yield from conv_bn(f"scb{t}", w(t) + cs, w(t - 1))
        yield f"scb{t}.att.w", (1, w(t - 1), 1, 1), "conv"
        yield f"scb{t}.att.b", (1,), "bias"
    for t in range(L + 1, 1, -1):
        yield from conv_bn(f"dec{t}.a", 2 * w(t), w(t - 1))
        yield from conv_bn(f"dec{t}.b", w(t - 1), w(t - 1))
    yield "head_depth.w", (1, w(1), 1, 1), "conv"
    yield "head_depth.b", (1,), "bias"
    yield "head_seg.w", (1, w(L + 1), 3, 3), "conv"
    yield "head_seg.b", (1,), "bias"


def init_params(topology: Topology = Topology(), seed: int = 0, dtype=np.float32) -> ScNetParams:
    """Fan-in scaled normal kernels, zero biases, unit BN scale."""
    rng = np.random.default_rng(seed)
    weights, running = {}, {}
    for name, shape, kind in _layer_specs(topology):
        if kind == "conv":
            fan_in = int(np.prod(shape[1:]))
            weights[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape).astype(dtype)
        elif kind == "gamma":
            weights[name] = np.ones(shape, dtype)
            running[name[: -len(".gamma")]] = (np.zeros(shape, dtype), np.ones(shape, dtype))
        else:
            weights[name] = np.zeros(shape, dtype)
    return ScNetParams(topology, weights, running)


@dataclass
class ForwardTrace:
    """Everything needed for backward: the tape, parameter leaves, outputs,
    attention maps and the batch statistics of every BN layer."""

    tape: Tape
    leaves: dict
    pred_depth: Tensor
    pred_seg: Tensor
    attention: dict
    features: dict
    bn_stats: dict

    def backward(self, d_depth=None, d_seg=None) -> dict:
        seeds = []
        if d_depth is not None:
            seeds.append((self.pred_depth, d_depth))
        if d_seg is not None:
            seeds.append((self.pred_seg, d_seg))
        g = self.tape.backward(seeds)
        return {name: g.get(id(t), np.zeros_like(t.value)) for name, t in self.leaves.items()}


class _Builder:
    def __init__(self, params: ScNetParams, train: bool):
        self.tape = Tape()
        self.params = params
        self.train = train
        self.leaves = {k: self.tape.leaf(v, k) for k, v in params.weights.items()}
        self.bn_records = {}

    def p(self, name):
        return self.leaves[name]

    def conv_bn_relu(self, prefix, x):
        tp = self.tape
        y = tp.apply(Conv2d, x, self.p(f"{prefix}.conv.w"), padding=1)
        running = None if self.train else self.params.running[f"{prefix}.bn"]
        y = tp.apply(BatchNorm, y, self.p(f"{prefix}.bn.gamma"), self.p(f"{prefix}.bn.beta"),
                     eps=BN_EPS, running=running)
        self.bn_records[f"{prefix}.bn"] = tp.records[-1][1]
        return tp.apply(ReLU, y)


def scb_forward(b: _Builder, t: int, e_t: Tensor, s_prev: Tensor, attention_override=None):
    """One structure-constraint block; returns (attention, filtered)."""
    tp = b.tape
    u = tp.apply(Upsample2, e_t)
    if u.shape[2:] != s_prev.shape[2:]:
        raise ShapeError(
            f"upsampled e_{t} is {u.shape[2:]} but structure state is {s_prev.shape[2:]}")
    h = b.conv_bn_relu(f"scb{t}", tp.apply(Concat, u, s_prev))
    a = tp.apply(Conv2d, h, b.p(f"scb{t}.att.w"), b.p(f"scb{t}.att.b"), padding=0)
    a = tp.apply(Sigmoid, a)
    if attention_override is not None:
        a = tp.leaf(np.full(a.shape, attention_override, dtype=u.value.dtype), f"a{t - 1}")
    return a, tp.apply(Gate, u, a)


def forward(params: ScNetParams, x, train: bool = True, attention_override=None):
    """Run the network on ``x`` of shape ``(n, in_channels, h, w)``.

    Returns ``(pred_depth, pred_seg, trace)`` with both predictions shaped
    ``(n, 1, h, w)``. ``train`` selects batch statistics for normalisation.
    """
    topo = params.topology
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1] != topo.in_channels:
        raise ShapeError(f"expected (n, {topo.in_channels}, h, w) input, got {x.shape}")
    div = 2 ** topo.levels
    if x.shape[2] % div or x.shape[3] % div:
        raise ShapeError(f"spatial size {x.shape[2:]} not divisible by {div}")
    dtype = next(iter(params.weights.values())).dtype
    b = _Builder(params, train)
    tp = b.tape
    inp = tp.leaf(x.astype(dtype, copy=False), "input")
    L = topo.levels

    e = {}
    h = inp
    for t in range(1, L + 2):
        if t > 1:
            h = tp.apply(MaxPool2, h)
        h = b.conv_bn_relu(f"enc{t}.a", h)
        h = b.conv_bn_relu(f"enc{t}.b", h)
        e[t] = h

    s = b.conv_bn_relu("seed", e[1])
    att, filt = {}, {}
    for t in range(2, L + 2):
        att[t - 1], filt[t] = scb_forward(b, t, e[t], s, attention_override)
        if t < L + 1:
            s = tp.apply(MaxPool2, filt[t])

    d = e[L + 1]
    for t in range(L + 1, 1, -1):
        d = tp.apply(Concat, tp.apply(Upsample2, d), filt[t])
        d = b.conv_bn_relu(f"dec{t}.a", d)
        d = b.conv_bn_relu(f"dec{t}.b", d)
    depth = tp.apply(Conv2d, d, b.p("head_depth.w"), b.p("head_depth.b"), padding=0)
    depth = tp.apply(Sigmoid, depth)

    v = filt[L + 1]
    for _ in range(L - 1):
        v = tp.apply(Upsample2, v)
    seg = tp.apply(Conv2d, v, b.p("head_seg.w"), b.p("head_seg.b"), padding=1)
    seg = tp.apply(Sigmoid, seg)

    stats = {k: (c["mean"], c["var"]) for k, c in b.bn_records.items()}
    trace = ForwardTrace(tp, b.leaves, depth, seg, att,
                         {"e": e, "filtered": filt}, stats)
    return depth.value, seg.value, trace


def update_running_stats(params: ScNetParams, trace: ForwardTrace,
                         momentum: float = BN_MOMENTUM) -> None:
    for name, (mean, var) in trace.bn_stats.items():
        rm, rv = params.running[name]
        params.running[name] = ((1 - momentum) * rm + momentum * mean,
                                (1 - momentum) * rv + momentum * var)
