"""Density-map ground truth from dot annotations, plus label corruption.

A density map is a plain float64 array of shape (H, W) whose total mass
equals the number of annotated heads. Each head deposits a truncated
Gaussian that is renormalized over its in-bounds support, so the count is
conserved even for dots on the image border.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_SIGMA = 7.0


@dataclass
class DotAnnotation:
    """Ordered head positions for one image.

    ``points`` is an (N, 2) float64 array of sub-pixel [x, y] pairs
    (x = column, y = row). Duplicates are allowed.
    """

    points: np.ndarray
    image_id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 2)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"points must be an (N, 2) array, got shape {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError(f"non-finite coordinates in annotation {self.image_id!r}")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def validate_bounds(self, height: int, width: int) -> None:
        """Raise ValueError naming the first point outside [0,W) x [0,H)."""
        for i, (x, y) in enumerate(self.points):
            if not (0.0 <= x < width and 0.0 <= y < height):
                raise ValueError(
                    f"dot {i} at ({x}, {y}) outside image bounds "
                    f"{height}x{width} (id={self.image_id!r})"
                )


@dataclass
class CorruptionSpec:
    """How to corrupt labels: 'none', 'missing' (drop dots) or 'annotator'."""

    kind: str = "none"
    fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "missing", "annotator"):
            raise ValueError(f"unknown corruption kind {self.kind!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError(f"fraction must be in [0, 1], got {self.fraction}")


def kernel_radius(sigma: float) -> int:
    """Truncation radius used for head kernels: ceil(3*sigma)."""
    return int(math.ceil(3.0 * sigma))


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """Normalized 2D Gaussian of side 2*radius+1 that sums to exactly 1."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    g1 = np.exp(-(d * d) / (2.0 * sigma * sigma))
    k = np.outer(g1, g1)
    return k / k.sum()


def render_density(
    dots: DotAnnotation, height: int, width: int, sigma: float = DEFAULT_SIGMA
) -> np.ndarray:
    """Render the ground-truth density map for one image.

    Every dot contributes mass exactly 1: its kernel window is clipped to
    the image and renormalized over the surviving support. The kernel is
    centered on the pixel containing the (sub-pixel) dot.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    dots.validate_bounds(height, width)
    out = np.zeros((height, width), dtype=np.float64)
    if len(dots) == 0:
        return out
    radius = kernel_radius(sigma)
    kernel = gaussian_kernel(sigma, radius)
    for x, y in dots.points:
        cx = int(x)  # containing pixel; dots are in [0, W) so this is in range
        cy = int(y)
        r0 = max(cy - radius, 0)
        r1 = min(cy + radius, height - 1)
        c0 = max(cx - radius, 0)
        c1 = min(cx + radius, width - 1)
        piece = kernel[
            r0 - cy + radius : r1 - cy + radius + 1,
            c0 - cx + radius : c1 - cx + radius + 1,
        ]
        out[r0 : r1 + 1, c0 : c1 + 1] += piece / piece.sum()
    return out


def downsample_sum(density: np.ndarray, factor: int) -> np.ndarray:
    """Sum-pool a density map by an integer factor, conserving total mass.

    Block elements are accumulated in row-major offset order, so every
    output cell is bitwise identical to a left-to-right nested-loop sum.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    h, w = density.shape
    if h % factor or w % factor:
        raise ValueError(f"factor {factor} does not divide map dims {h}x{w}")
    if factor == 1:
        return density.copy()
    out = density[0::factor, 0::factor].astype(np.float64).copy()
    for i in range(factor):
        for j in range(factor):
            if i == 0 and j == 0:
                continue
            out += density[i::factor, j::factor]
    return out


def drop_annotations(dots: DotAnnotation, fraction: float, seed: int) -> DotAnnotation:
    """Randomly delete round(fraction*N) dots; survivors keep their order.

    Deterministic for fixed (dots, fraction, seed). The drop count uses
    round-to-nearest so that the mean surviving fraction over typical desk
    datasets stays close to 1-fraction.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    n = len(dots)
    k = int(np.rint(fraction * n))
    k = min(max(k, 0), n)
    if k == 0:
        return DotAnnotation(dots.points.copy(), dots.image_id)
    rng = np.random.default_rng(seed)
    dropped = rng.choice(n, size=k, replace=False)
    keep = np.ones(n, dtype=bool)
    keep[dropped] = False
    return DotAnnotation(dots.points[keep].copy(), dots.image_id)
