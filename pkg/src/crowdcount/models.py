"""Counting-network builders: the deep annotator and the lightweight targets.

Both architectures predict a 1-channel density map at 1/4 of the input
resolution. A width multiplier scales every channel count (ceil, min 1)
without touching kernels or strides, giving desk-scale variants.

- csrnet_lite: 7-conv VGG-style front-end (pools after convs 2 and 4 only)
  followed by six 3x3 dilation-2 convs and a 1x1 output conv. At multiplier
  1 with RGB input it has 3,911,553 parameters.
- mcnn: three columns with kernel ladders (9,7,7,7) / (7,5,5,5) / (5,3,3,3),
  pooled after the first two convs of each column, fused by a 1x1 conv.
"""

from __future__ import annotations

import math

import numpy as np

from .nn import Conv2d, MaxPool2d, Network, ReLU, Sequential

OUTPUT_STRIDE = 4

CSRNET_LITE_FRONT = (64, 64, 128, 128, 256, 256, 256)  # pools after convs 2 and 4
CSRNET_LITE_BACK = (256, 256, 256, 128, 64, 64)        # 3x3, dilation 2
MCNN_COLUMNS = (
    ((9, 7, 7, 7), (16, 32, 16, 8)),
    ((7, 5, 5, 5), (20, 40, 20, 10)),
    ((5, 3, 3, 3), (24, 48, 24, 12)),
)


def _scale(channels: int, multiplier: float) -> int:
    return max(1, math.ceil(channels * multiplier))


def _check_multiplier(multiplier: float) -> None:
    if not 0.0 < multiplier <= 1.0:
        raise ValueError(f"width multiplier must be in (0, 1], got {multiplier}")


def _conv_relu(layers, in_ch, out_ch, kernel, rng, dtype, dilation=1):
    pad = dilation * (kernel - 1) // 2  # 'same' for stride 1
    layers.append(Conv2d(in_ch, out_ch, kernel, padding=pad, dilation=dilation,
                         dtype=dtype, rng=rng))
    layers.append(ReLU())
    return out_ch


def build_csrnet_lite(width_multiplier: float = 1.0, in_channels: int = 1,
                      seed: int = 0, dtype=np.float32) -> Network:
    """Build the deep annotator network at the given width."""
    _check_multiplier(width_multiplier)
    rng = np.random.default_rng([seed, 0])
    layers: list = []
    ch = in_channels
    for i, out in enumerate(CSRNET_LITE_FRONT):
        ch = _conv_relu(layers, ch, _scale(out, width_multiplier), 3, rng, dtype)
        if i in (1, 3):
            layers.append(MaxPool2d(2, 2))
    for out in CSRNET_LITE_BACK:
        ch = _conv_relu(layers, ch, _scale(out, width_multiplier), 3, rng, dtype,
                        dilation=2)
    head = Sequential([Conv2d(ch, 1, 1, dtype=dtype, rng=rng)])
    name = f"csrnet_lite-{width_multiplier:g}x"
    return Network(name, [Sequential(layers)], head, OUTPUT_STRIDE)


def build_mcnn(width_multiplier: float = 1.0, in_channels: int = 1,
               seed: int = 0, dtype=np.float32) -> Network:
    """Build the three-column target network at the given width."""
    _check_multiplier(width_multiplier)
    columns = []
    fused_ch = 0
    for ci, (kernels, channels) in enumerate(MCNN_COLUMNS):
        rng = np.random.default_rng([seed, ci])
        layers: list = []
        ch = in_channels
        for li, (k, out) in enumerate(zip(kernels, channels)):
            ch = _conv_relu(layers, ch, _scale(out, width_multiplier), k, rng, dtype)
            if li in (0, 1):
                layers.append(MaxPool2d(2, 2))
        fused_ch += ch
        columns.append(Sequential(layers))
    rng = np.random.default_rng([seed, len(MCNN_COLUMNS)])
    head = Sequential([Conv2d(fused_ch, 1, 1, dtype=dtype, rng=rng)])
    name = f"mcnn-{width_multiplier:g}x"
    return Network(name, columns, head, OUTPUT_STRIDE)


ARCHITECTURES = {"csrnet_lite": build_csrnet_lite, "mcnn": build_mcnn}


def build_model(arch: str, width_multiplier: float = 1.0, in_channels: int = 1,
                seed: int = 0, dtype=np.float32) -> Network:
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}; "
                         f"choose from {sorted(ARCHITECTURES)}")
    return ARCHITECTURES[arch](width_multiplier, in_channels, seed, dtype)


def predict_density(network: Network, image: np.ndarray) -> np.ndarray:
    """Run one image through the network; negative outputs are clamped to 0.

    Accepts a (H, W) grayscale or (C, H, W) array. The predicted count is
    the sum of the returned map.
    """
    if image.ndim == 2:
        image = image[None, :, :]
    if image.ndim != 3:
        raise ValueError(f"expected (H, W) or (C, H, W) image, got {image.shape}")
    _, h, w = image.shape
    stride = network.output_stride
    if h % stride or w % stride:
        raise ValueError(
            f"image dims {h}x{w} not divisible by output stride {stride}; "
            "pad or crop first"
        )
    dtype = network.parameters()[0].data.dtype
    x = np.ascontiguousarray(image[None], dtype=dtype)
    out = network.forward(x)
    return np.maximum(out[0, 0].astype(np.float64), 0.0)
