"""Conv / maxpool / ReLU primitives with exact analytic backward passes.

Tensors are contiguous (N, C, H, W) numpy arrays. Convolution is
cross-correlation with zero padding, implemented as im2col plus one matmul
per batch so the accumulation order is fixed and runs repeat bit-identically.
"""

from __future__ import annotations

import numpy as np


class Param:
    """A learnable tensor and its most recent gradient."""

    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray):
        self.data = data
        self.grad = None


def conv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    span = size + 2 * padding - dilation * (kernel - 1) - 1
    if span < 0 or span % stride:
        raise ValueError(
            f"conv output size not a positive integer for input {size}, "
            f"kernel {kernel}, stride {stride}, padding {padding}, dilation {dilation}"
        )
    return span // stride + 1


def _im2col(xp: np.ndarray, kernel: int, stride: int, dilation: int,
            oh: int, ow: int) -> np.ndarray:
    n, c, _, _ = xp.shape
    cols = np.empty((n, c, kernel, kernel, oh, ow), dtype=xp.dtype)
    for ki in range(kernel):
        for kj in range(kernel):
            r = ki * dilation
            s = kj * dilation
            cols[:, :, ki, kj] = xp[:, :, r : r + (oh - 1) * stride + 1 : stride,
                                    s : s + (ow - 1) * stride + 1 : stride]
    return cols.reshape(n, c * kernel * kernel, oh * ow)


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                   stride: int = 1, padding: int = 0, dilation: int = 1) -> np.ndarray:
    """Cross-correlate (N,Cin,H,W) with (Cout,Cin,k,k) weights plus bias."""
    n, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if k != k2:
        raise ValueError(f"kernel must be square, got {k}x{k2}")
    if cin != wcin:
        raise ValueError(
            f"channel mismatch: input {x.shape} vs weight {weight.shape}"
        )
    oh = conv_output_size(h, k, stride, padding, dilation)
    ow = conv_output_size(w, k, stride, padding, dilation)
    if padding:
        xp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
        xp[:, :, padding : padding + h, padding : padding + w] = x
    else:
        xp = x
    cols = _im2col(xp, k, stride, dilation, oh, ow)
    w2 = weight.reshape(cout, cin * k * k)
    out = np.matmul(w2, cols)  # (n, cout, oh*ow)
    out += bias.reshape(1, cout, 1)
    return out.reshape(n, cout, oh, ow)


def conv2d_backward(x: np.ndarray, weight: np.ndarray, grad_out: np.ndarray,
                    stride: int = 1, padding: int = 0, dilation: int = 1
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward w.r.t. (input, weight, bias)."""
    n, cin, h, w = x.shape
    cout, _, k, _ = weight.shape
    gn, gc, oh, ow = grad_out.shape
    if gn != n or gc != cout:
        raise ValueError(
            f"upstream grad shape {grad_out.shape} does not match forward "
            f"output (n={n}, cout={cout})"
        )
    if padding:
        xp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
        xp[:, :, padding : padding + h, padding : padding + w] = x
    else:
        xp = x
    cols = _im2col(xp, k, stride, dilation, oh, ow)
    g2 = grad_out.reshape(n, cout, oh * ow)

    grad_bias = g2.sum(axis=(0, 2))
    grad_weight = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
    grad_weight = grad_weight.reshape(weight.shape)

    w2 = weight.reshape(cout, cin * k * k)
    gcols = np.matmul(w2.T, g2)  # (n, cin*k*k, oh*ow)
    gcols = gcols.reshape(n, cin, k, k, oh, ow)
    gxp = np.zeros_like(xp)
    for ki in range(k):
        for kj in range(k):
            r = ki * dilation
            s = kj * dilation
            gxp[:, :, r : r + (oh - 1) * stride + 1 : stride,
                s : s + (ow - 1) * stride + 1 : stride] += gcols[:, :, ki, kj]
    if padding:
        grad_x = gxp[:, :, padding : padding + h, padding : padding + w].copy()
    else:
        grad_x = gxp
    return grad_x, grad_weight, grad_bias


def maxpool_forward(x: np.ndarray, window: int = 2, stride: int = 2
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Per-window maximum. Returns (output, argmax flat indices into H*W).

    Ties resolve to the first maximum in row-major window order.
    """
    n, c, h, w = x.shape
    if h % stride or w % stride:
        raise ValueError(f"input dims {h}x{w} not divisible by stride {stride}")
    if (h - window) % stride or (w - window) % stride or h < window or w < window:
        raise ValueError(
            f"window {window}/stride {stride} does not tile input dims {h}x{w}"
        )
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1
    win = np.empty((n, c, oh, ow, window * window), dtype=x.dtype)
    for wi in range(window):
        for wj in range(window):
            win[:, :, :, :, wi * window + wj] = x[
                :, :, wi : wi + (oh - 1) * stride + 1 : stride,
                wj : wj + (ow - 1) * stride + 1 : stride]
    local = np.argmax(win, axis=-1)  # first max in row-major window order
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    # translate window-local argmax to a flat index into the input plane
    base_r = np.arange(oh, dtype=np.int64)[:, None] * stride
    base_c = np.arange(ow, dtype=np.int64)[None, :] * stride
    rows = base_r + local // window
    cols = base_c + local % window
    idx = rows * w + cols
    return out, idx


def maxpool_backward(idx: np.ndarray, grad_out: np.ndarray,
                     input_shape: tuple[int, int, int, int]) -> np.ndarray:
    """Route upstream gradient to each window's argmax cell."""
    n, c, h, w = input_shape
    if idx.shape != grad_out.shape:
        raise RuntimeError(
            f"stale argmax indices: shape {idx.shape} vs upstream {grad_out.shape}"
        )
    grad_x = np.zeros((n, c, h * w), dtype=grad_out.dtype)
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    np.add.at(grad_x, (ni, ci, idx), grad_out)
    return grad_x.reshape(n, c, h, w)


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Mask upstream by x > 0 (subgradient 0 at x == 0)."""
    return grad_out * (x > 0)


# --- layer objects ----------------------------------------------------------

class Conv2d:
    """Convolution layer owning its weight/bias and cached forward input."""

    kind = "conv"

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, padding: int = 0, dilation: int = 1,
                 dtype=np.float32, rng: np.random.Generator | None = None):
        if kernel % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kernel}")
        if dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {dilation}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.dilation = dilation
        if rng is None:
            rng = np.random.default_rng(0)
        fan_in = kernel * kernel * in_channels
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                       size=(out_channels, in_channels, kernel, kernel))
        self.weight = Param(w.astype(dtype))
        self.bias = Param(np.zeros(out_channels, dtype=dtype))
        self._x = None

    def parameters(self) -> list[Param]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return conv2d_forward(x, self.weight.data, self.bias.data,
                              self.stride, self.padding, self.dilation)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("conv backward called before forward")
        gx, gw, gb = conv2d_backward(self._x, self.weight.data, grad_out,
                                     self.stride, self.padding, self.dilation)
        self.weight.grad = gw
        self.bias.grad = gb
        return gx

    def spec(self) -> dict:
        return {
            "kind": "conv",
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel": self.kernel,
            "stride": self.stride,
            "padding": self.padding,
            "dilation": self.dilation,
        }

    def param_count(self) -> int:
        return self.kernel * self.kernel * self.in_channels * self.out_channels \
            + self.out_channels


class MaxPool2d:
    kind = "maxpool"

    def __init__(self, window: int = 2, stride: int = 2):
        self.window = window
        self.stride = stride
        self._idx = None
        self._shape = None

    def parameters(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, idx = maxpool_forward(x, self.window, self.stride)
        self._idx = idx
        self._shape = x.shape
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._idx is None:
            raise RuntimeError("maxpool backward called before forward")
        return maxpool_backward(self._idx, grad_out, self._shape)

    def spec(self) -> dict:
        return {"kind": "maxpool", "window": self.window, "stride": self.stride}

    def param_count(self) -> int:
        return 0


class ReLU:
    kind = "relu"

    def __init__(self):
        self._x = None

    def parameters(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return relu_forward(x)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("relu backward called before forward")
        return relu_backward(self._x, grad_out)

    def spec(self) -> dict:
        return {"kind": "relu"}

    def param_count(self) -> int:
        return 0


def layer_from_spec(spec: dict, dtype=np.float32):
    kind = spec["kind"]
    if kind == "conv":
        return Conv2d(spec["in_channels"], spec["out_channels"], spec["kernel"],
                      spec["stride"], spec["padding"], spec["dilation"], dtype=dtype)
    if kind == "maxpool":
        return MaxPool2d(spec["window"], spec["stride"])
    if kind == "relu":
        return ReLU()
    raise ValueError(f"unknown layer kind {kind!r}")
