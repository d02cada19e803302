"""Layer primitives: convolution, pooling, dense, LSTM, dropout, loss, init."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .tensor import Tensor, _make, as_tensor, concat, matmul, relu, sigmoid, tanh

LAYER_KINDS = ("conv1d", "conv2d", "conv3d", "dense", "lstm", "dropout")
_CONV_DIMS = {"conv1d": 1, "conv2d": 2, "conv3d": 3}
BCE_EPS = 1e-7


@dataclass
class LayerParams:
    """Weights, biases and hyperparameters of one layer.

    ``hyper`` keys by kind:

    conv*: ``kernel`` (tuple), ``stride`` (tuple), ``padding`` ("valid"|"same"),
    ``in_channels``, ``filters``.  dense: ``in_features``, ``units``.
    lstm: ``in_features``, ``units``.  dropout: ``rate``.
    """

    kind: str
    weights: Tensor | None = None
    biases: Tensor | None = None
    hyper: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dropout":
            rate = self.hyper.get("rate", 0.0)
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self._check_shapes()

    def _check_shapes(self) -> None:
        h = self.hyper
        if self.kind in _CONV_DIMS:
            want = (h["filters"], h["in_channels"], *h["kernel"])
            if self.weights.shape != want or self.biases.shape != (h["filters"],):
                raise ShapeError(f"{self.kind} weights {self.weights.shape} != {want}")
        elif self.kind == "dense":
            if self.weights.shape != (h["in_features"], h["units"]):
                raise ShapeError(f"dense weights {self.weights.shape} inconsistent with hyper")
            if self.biases.shape != (h["units"],):
                raise ShapeError("dense bias length must equal units")
        elif self.kind == "lstm":
            n = h["units"]
            if self.weights.shape != (h["in_features"] + n, 4 * n):
                raise ShapeError(f"lstm weights {self.weights.shape} inconsistent with hyper")
            if self.biases.shape != (4 * n,):
                raise ShapeError("lstm bias length must equal 4 * units")

    def parameters(self) -> list[Tensor]:
        return [t for t in (self.weights, self.biases) if t is not None]

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.parameters())


# -- initialisation -----------------------------------------------------------

def glorot_init(fan_in: int, fan_out: int, shape, rng_seed) -> Tensor:
    """Uniform Glorot initialisation on ``[-L, L]``, ``L = sqrt(6 / (fan_in + fan_out))``."""
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError(f"fan_in and fan_out must be positive, got {fan_in}, {fan_out}")
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def conv_params(kind: str, in_channels: int, filters: int, kernel, rng, stride=1,
                padding: str = "valid") -> LayerParams:
    nd = _CONV_DIMS[kind]
    kernel = _ntuple(kernel, nd)
    stride = _ntuple(stride, nd)
    k = int(np.prod(kernel))
    w = glorot_init(in_channels * k, filters * k, (filters, in_channels, *kernel), rng)
    b = Tensor(np.zeros(filters), requires_grad=True)
    hyper = dict(kernel=kernel, stride=stride, padding=padding,
                 in_channels=in_channels, filters=filters)
    return LayerParams(kind, w, b, hyper)


def dense_params(in_features: int, units: int, rng) -> LayerParams:
    w = glorot_init(in_features, units, (in_features, units), rng)
    b = Tensor(np.zeros(units), requires_grad=True)
    return LayerParams("dense", w, b, dict(in_features=in_features, units=units))


def lstm_params(in_features: int, units: int, rng, forget_bias: float = 1.0) -> LayerParams:
    w = glorot_init(in_features + units, 4 * units, (in_features + units, 4 * units), rng)
    b = np.zeros(4 * units)
    b[units:2 * units] = forget_bias
    return LayerParams("lstm", w, Tensor(b, requires_grad=True),
                       dict(in_features=in_features, units=units))


def _ntuple(v, n: int) -> tuple[int, ...]:
    if isinstance(v, (tuple, list)):
        if len(v) != n:
            raise ShapeError(f"expected {n} values, got {v}")
        return tuple(int(x) for x in v)
    return (int(v),) * n


# -- convolution --------------------------------------------------------------

def _pad_amounts(size: int, k: int, s: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding == "same":
        out = -(-size // s)
        total = max((out - 1) * s + k - size, 0)
        return total // 2, total - total // 2
    raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")


def conv_forward(x: Tensor, params: LayerParams) -> Tensor:
    """N-d cross-correlation over a channels-last ``(batch, *spatial, channels)`` input.

    Weights are stored ``(filters, channels, *kernel)``.
    """
    x = as_tensor(x)
    nd = _CONV_DIMS.get(params.kind)
    if nd is None:
        raise ValueError(f"conv_forward needs a conv layer, got {params.kind!r}")
    h = params.hyper
    kernel, stride = tuple(h["kernel"]), tuple(h["stride"])
    if x.ndim != nd + 2:
        raise ShapeError(f"{params.kind} expects a rank-{nd + 2} input, got {x.shape}")
    if x.shape[-1] != h["in_channels"]:
        raise ShapeError(f"{params.kind} expects {h['in_channels']} channels, got {x.shape[-1]}")
    spatial = x.shape[1:-1]
    pads = [_pad_amounts(n, k, s, h["padding"]) for n, k, s in zip(spatial, kernel, stride)]
    for n, k, (lo, hi) in zip(spatial, kernel, pads):
        if n + lo + hi < k:
            raise ShapeError(f"kernel {kernel} larger than padded input {spatial}")
    padded = any(lo or hi for lo, hi in pads)
    xp = np.pad(x.data, [(0, 0), *pads, (0, 0)]) if padded else x.data
    psp = xp.shape[1:-1]
    out_sp = tuple((p - k) // s + 1 for p, k, s in zip(psp, kernel, stride))
    n_batch, n_in = x.shape[0], x.shape[-1]
    w, b = params.weights, params.biases
    n_f = w.shape[0]
    n_k = int(np.prod(kernel))
    offsets = list(itertools.product(*(range(k) for k in kernel)))
    out_slices = [
        tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offs, stride, out_sp))
        for offs in offsets
    ]
    need_gx = x.requires_grad or x._backward is not None
    # shift-and-add is cheaper than explicit patches when channels outnumber filters
    shift_add = all(s == 1 for s in stride) and n_in * int(np.prod(out_sp)) > n_f * int(np.prod(psp))

    if shift_add:
        # w_taps: (C, K*F) with tap-major columns
        w_taps = w.data.reshape(n_f, n_in, n_k).transpose(1, 2, 0).reshape(n_in, n_k * n_f)
        z = (xp.reshape(-1, n_in) @ w_taps).reshape(n_batch, *psp, n_k, n_f)
        y = np.zeros((n_batch, *out_sp, n_f))
        for t, offs in enumerate(offsets):
            src = tuple(slice(o, o + n) for o, n in zip(offs, out_sp))
            y += z[(slice(None), *src, t)]
        y += b.data

        def back(g):
            gtap = np.zeros((n_batch, *psp, n_k, n_f))
            for t, offs in enumerate(offsets):
                dst = tuple(slice(o, o + n) for o, n in zip(offs, out_sp))
                gtap[(slice(None), *dst, t)] = g
            gtap2 = gtap.reshape(-1, n_k * n_f)
            gw = (xp.reshape(-1, n_in).T @ gtap2).reshape(n_in, n_k, n_f).transpose(2, 0, 1)
            gx = None
            if need_gx:
                gxp = (gtap2 @ w_taps.T).reshape(xp.shape)
                gx = _crop(gxp, pads, spatial)
            return gx, gw.reshape(w.shape), g.reshape(-1, n_f).sum(axis=0)

        return _make(y, (x, w, b), back)

    win = sliding_window_view(xp, kernel, axis=tuple(range(1, 1 + nd)))
    win = win[(slice(None), *(slice(None, None, s) for s in stride))]
    cols = win.reshape(-1, n_in * n_k)  # copies: (N*out, C*K)
    w_mat = w.data.reshape(n_f, n_in * n_k).T
    y = (cols @ w_mat).reshape(n_batch, *out_sp, n_f) + b.data

    def back_cols(g):
        g2 = g.reshape(-1, n_f)
        gw = (cols.T @ g2).T.reshape(w.shape)
        gx = None
        if need_gx:
            gcols = (g2 @ w_mat.T).reshape(n_batch, *out_sp, n_in, n_k)
            gxp = np.zeros_like(xp)
            for t, sl in enumerate(out_slices):
                gxp[(slice(None), *sl)] += gcols[..., t]
            gx = _crop(gxp, pads, spatial)
        return gx, gw, g2.sum(axis=0)

    return _make(y, (x, w, b), back_cols)


def _crop(xp: np.ndarray, pads, spatial) -> np.ndarray:
    return xp[(slice(None), *(slice(lo, lo + n) for (lo, _), n in zip(pads, spatial)))]


def max_pool(x: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping max pooling over every spatial axis of a channels-last input.

    Axes shorter than the window are left unpooled; trailing remainders are
    dropped. Ties route the gradient to the first maximal element.
    """
    x = as_tensor(x)
    sp = x.shape[1:-1]
    wins = tuple(window if n >= window else 1 for n in sp)
    outs = tuple(n // w for n, w in zip(sp, wins))
    views = [
        (slice(None), *(slice(o, o + w * n, w) for o, w, n in zip(offs, wins, outs)))
        for offs in itertools.product(*(range(w) for w in wins))
    ]
    y = x.data[views[0]].copy()
    for v in views[1:]:
        np.maximum(y, x.data[v], out=y)

    def back(g):
        gx = np.zeros_like(x.data)
        free = np.ones(y.shape, dtype=bool)
        for v in views:
            hit = (x.data[v] == y) & free
            gx[v] = np.where(hit, g, 0.0)
            free &= ~hit
        return (gx,)

    return _make(y, (x,), back)


def dense_forward(x: Tensor, params: LayerParams) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] != params.weights.shape[0]:
        raise ShapeError(
            f"dense input last dimension {x.shape[-1]} != weight rows {params.weights.shape[0]}"
        )
    return matmul(x, params.weights) + params.biases


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(as_tensor(x))


def dropout(x: Tensor, rate: float, mode: str = "train", rng_seed=None) -> Tensor:
    """Inverted dropout: identity in eval mode, scaled survivors in train mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = as_tensor(x)
    if mode == "eval" or rate == 0.0:
        return x
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


# -- recurrence ------------------------------------------------------------------

def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, params: LayerParams):
    """One LSTM step; gate order in the stacked weights is input, forget, candidate, output."""
    n = params.hyper["units"]
    x, h_prev, c_prev = as_tensor(x), as_tensor(h_prev), as_tensor(c_prev)
    if x.shape[-1] != params.hyper["in_features"]:
        raise ShapeError(f"lstm expects {params.hyper['in_features']} input features, got {x.shape[-1]}")
    if h_prev.shape[-1] != n or c_prev.shape != h_prev.shape:
        raise ShapeError(f"lstm state shapes {h_prev.shape}, {c_prev.shape} do not match {n} units")
    z = matmul(concat([x, h_prev], axis=-1), params.weights) + params.biases
    i = sigmoid(z[..., :n])
    f = sigmoid(z[..., n:2 * n])
    g = tanh(z[..., 2 * n:3 * n])
    o = sigmoid(z[..., 3 * n:])
    c = f * c_prev + i * g
    h = o * tanh(c)
    return h, c


def lstm_forward(seq: Tensor, params: LayerParams) -> Tensor:
    """Run over ``(batch, time, features)`` and return the final hidden state."""
    batch = seq.shape[0]
    n = params.hyper["units"]
    h = Tensor(np.zeros((batch, n)))
    c = Tensor(np.zeros((batch, n)))
    for t in range(seq.shape[1]):
        h, c = lstm_step(seq[:, t, :], h, c, params)
    return h


# -- loss --------------------------------------------------------------------

def bce_loss(p: Tensor, y) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to ``[1e-7, 1 - 1e-7]``."""
    p = as_tensor(p)
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if y.shape != p.shape:
        raise ShapeError(f"labels {y.shape} and probabilities {p.shape} differ in shape")
    pc = np.clip(p.data, BCE_EPS, 1.0 - BCE_EPS)
    n = p.data.size
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    inside = (p.data > BCE_EPS) & (p.data < 1.0 - BCE_EPS)

    def back(g):
        return (g * inside * (-y / pc + (1.0 - y) / (1.0 - pc)) / n,)

    return _make(np.asarray(loss), (p,), back)
