"""Layers with explicit forward caches and analytic backward passes.

Layers hold no parameter values. Every `forward` reads its parameters from a
mapping (usually a `ParameterStore` snapshot) and returns ``(output, cache)``;
`backward` takes that cache and returns ``(input_grad, param_grads)``. Running
the same layer twice (siamese branches) yields two caches whose parameter
gradients the caller sums.
"""
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import NeuroError

Params = Mapping[str, np.ndarray]
Grads = Dict[str, np.ndarray]


def check_finite(name: str, array: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(array)):
        raise NeuroError(f"{name}: non-finite values", "non-finite")
    return array


def _require_cache(name: str, cache: object) -> None:
    if cache is None:
        raise NeuroError(f"{name}: backward called without a forward pass", "no-forward")


def fan_in_uniform(
    rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, scale: float = 1.0
) -> np.ndarray:
    limit = scale * np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Dense:
    """y = x W + b over the last axis."""

    kind = "dense"

    def __init__(
        self, name: str, in_dim: int, out_dim: int, init: str = "fan_in", scale: float = 1.0
    ) -> None:
        if init not in ("fan_in", "identity", "zeros"):
            raise NeuroError(f"{name}: unknown init {init!r}")
        if init == "identity" and in_dim != out_dim:
            raise NeuroError(f"{name}: identity init needs a square layer", "shape-mismatch")
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.init = init
        self.scale = scale
        self.w_name = f"{name}.W"
        self.b_name = f"{name}.b"

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {self.w_name: (self.in_dim, self.out_dim), self.b_name: (self.out_dim,)}

    def init_params(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        if self.init == "identity":
            w = np.eye(self.in_dim)
        elif self.init == "zeros":
            w = np.zeros((self.in_dim, self.out_dim))
        else:
            w = fan_in_uniform(rng, (self.in_dim, self.out_dim), self.in_dim, self.scale)
        return {self.w_name: w, self.b_name: np.zeros(self.out_dim)}

    def forward(self, params: Params, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if x.shape[-1] != self.in_dim:
            raise NeuroError(
                f"{self.name}: expected input width {self.in_dim}, got {x.shape[-1]}",
                "shape-mismatch",
            )
        return check_finite(self.name, x @ params[self.w_name] + params[self.b_name]), x

    def backward(
        self, params: Params, cache: Optional[np.ndarray], dy: np.ndarray
    ) -> Tuple[np.ndarray, Grads]:
        _require_cache(self.name, cache)
        x = cache.reshape(-1, self.in_dim)
        d = dy.reshape(-1, self.out_dim)
        grads = {self.w_name: x.T @ d, self.b_name: d.sum(axis=0)}
        return dy @ params[self.w_name].T, grads


class ReLU:
    kind = "relu"

    def __init__(self, name: str) -> None:
        self.name = name

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {}

    def init_params(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        return {}

    def forward(self, params: Params, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        mask = x > 0
        return x * mask, mask

    def backward(
        self, params: Params, cache: Optional[np.ndarray], dy: np.ndarray
    ) -> Tuple[np.ndarray, Grads]:
        _require_cache(self.name, cache)
        return dy * cache, {}


class Concat:
    """Concatenate inputs along the last axis."""

    kind = "concat"

    def __init__(self, name: str) -> None:
        self.name = name

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {}

    def forward(self, xs: Sequence[np.ndarray]) -> Tuple[np.ndarray, List[int]]:
        lead = {x.shape[:-1] for x in xs}
        if len(lead) != 1:
            raise NeuroError(f"{self.name}: leading shapes differ {lead}", "shape-mismatch")
        return np.concatenate(xs, axis=-1), [x.shape[-1] for x in xs]

    def backward(self, cache: Optional[List[int]], dy: np.ndarray) -> List[np.ndarray]:
        _require_cache(self.name, cache)
        splits = np.cumsum(cache)[:-1]
        return np.split(dy, splits, axis=-1)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LSTMState:
    hidden: np.ndarray
    cell: np.ndarray

    @classmethod
    def zeros(cls, size: int, batch: int = 1) -> "LSTMState":
        return cls(np.zeros((batch, size)), np.zeros((batch, size)))

    def copy(self) -> "LSTMState":
        return LSTMState(self.hidden.copy(), self.cell.copy())


class LSTMCell:
    """Standard 4-gate LSTM, gate order (input, forget, cell, output)."""

    kind = "lstm"

    def __init__(self, name: str, in_dim: int, hidden: int, forget_bias: float = 1.0) -> None:
        self.name = name
        self.in_dim = in_dim
        self.hidden = hidden
        self.forget_bias = forget_bias
        self.w_name = f"{name}.W"
        self.b_name = f"{name}.b"

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {
            self.w_name: (self.in_dim + self.hidden, 4 * self.hidden),
            self.b_name: (4 * self.hidden,),
        }

    def init_params(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        fan_in = self.in_dim + self.hidden
        b = np.zeros(4 * self.hidden)
        b[self.hidden : 2 * self.hidden] = self.forget_bias
        return {
            self.w_name: fan_in_uniform(rng, (fan_in, 4 * self.hidden), fan_in, 0.5),
            self.b_name: b,
        }

    def forward(
        self, params: Params, x: np.ndarray, state: LSTMState
    ) -> Tuple[LSTMState, tuple]:
        if x.shape[-1] != self.in_dim:
            raise NeuroError(
                f"{self.name}: expected input width {self.in_dim}, got {x.shape[-1]}",
                "shape-mismatch",
            )
        H = self.hidden
        xh = np.concatenate([x, state.hidden], axis=-1)
        z = xh @ params[self.w_name] + params[self.b_name]
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c = f * state.cell + i * g
        tc = np.tanh(c)
        h = check_finite(self.name, o * tc)
        return LSTMState(h, check_finite(self.name, c)), (xh, state.cell, i, f, g, o, tc)

    def backward(
        self, params: Params, cache: Optional[tuple], dh: np.ndarray, dc: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, Grads]:
        """Returns (dx, dh_prev, dc_prev, grads)."""
        _require_cache(self.name, cache)
        xh, c_prev, i, f, g, o, tc = cache
        do = dh * tc
        dc = dc + dh * o * (1 - tc**2)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dc_prev = dc * f
        dz = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), dg * (1 - g**2), do * o * (1 - o)], axis=-1
        )
        grads = {self.w_name: xh.T @ dz, self.b_name: dz.sum(axis=0)}
        dxh = dz @ params[self.w_name].T
        return dxh[:, : self.in_dim], dxh[:, self.in_dim :], dc_prev, grads


class Conv2D:
    """3x3 (or k x k) same-padded convolution over NHWC tensors."""

    kind = "conv2d"

    def __init__(
        self, name: str, in_ch: int, out_ch: int, kernel: int = 3, bias: bool = False
    ) -> None:
        if kernel % 2 == 0:
            raise NeuroError(f"{name}: kernel size must be odd")
        self.name = name
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = kernel
        self.bias = bias
        self.w_name = f"{name}.W"
        self.b_name = f"{name}.b"

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        shapes = {self.w_name: (self.kernel, self.kernel, self.in_ch, self.out_ch)}
        if self.bias:
            shapes[self.b_name] = (self.out_ch,)
        return shapes

    def init_params(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        fan_in = self.kernel * self.kernel * self.in_ch
        params = {self.w_name: fan_in_uniform(rng, self.param_shapes()[self.w_name], fan_in)}
        if self.bias:
            params[self.b_name] = np.zeros(self.out_ch)
        return params

    def _columns(self, x: np.ndarray) -> np.ndarray:
        p = self.kernel // 2
        padded = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        windows = sliding_window_view(padded, (self.kernel, self.kernel), axis=(1, 2))
        # (B, H, W, C, k, k) -> (B, H, W, k, k, C)
        return windows.transpose(0, 1, 2, 4, 5, 3)

    def forward(self, params: Params, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if x.ndim != 4 or x.shape[-1] != self.in_ch:
            raise NeuroError(
                f"{self.name}: expected NHWC input with {self.in_ch} channels, got {x.shape}",
                "shape-mismatch",
            )
        cols = self._columns(x)
        y = np.tensordot(cols, params[self.w_name], axes=([3, 4, 5], [0, 1, 2]))
        if self.bias:
            y = y + params[self.b_name]
        return check_finite(self.name, y), x

    def backward(
        self, params: Params, cache: Optional[np.ndarray], dy: np.ndarray
    ) -> Tuple[np.ndarray, Grads]:
        _require_cache(self.name, cache)
        x = cache
        cols = self._columns(x)
        grads = {self.w_name: np.tensordot(cols, dy, axes=([0, 1, 2], [0, 1, 2]))}
        if self.bias:
            grads[self.b_name] = dy.sum(axis=(0, 1, 2))
        # Input gradient is the correlation of dy with the flipped kernel.
        k, p = self.kernel, self.kernel // 2
        flipped = params[self.w_name][::-1, ::-1].transpose(0, 1, 3, 2)
        padded = np.pad(dy, ((0, 0), (p, p), (p, p), (0, 0)))
        windows = sliding_window_view(padded, (k, k), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
        dx = np.tensordot(windows, flipped, axes=([3, 4, 5], [0, 1, 2]))
        return dx, grads


class AvgPool2D:
    """Non-overlapping average pooling over NHWC; sizes must divide evenly."""

    kind = "avgpool"

    def __init__(self, name: str, size: int) -> None:
        self.name = name
        self.size = size

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {}

    def forward(self, params: Params, x: np.ndarray) -> Tuple[np.ndarray, Tuple[int, ...]]:
        b, h, w, c = x.shape
        s = self.size
        if h % s or w % s:
            raise NeuroError(
                f"{self.name}: {h}x{w} not divisible by pool size {s}", "shape-mismatch"
            )
        return x.reshape(b, h // s, s, w // s, s, c).mean(axis=(2, 4)), x.shape

    def backward(
        self, params: Params, cache: Optional[Tuple[int, ...]], dy: np.ndarray
    ) -> Tuple[np.ndarray, Grads]:
        _require_cache(self.name, cache)
        s = self.size
        dx = np.repeat(np.repeat(dy, s, axis=1), s, axis=2) / (s * s)
        return dx, {}
