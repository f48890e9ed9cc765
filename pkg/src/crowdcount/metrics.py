"""Counting and map-quality metrics: MAE, grid average mean error, SSIM, PSNR.

MAE compares per-image counts. The grid metric (GAME) splits each map into a
g x g grid and sums absolute per-patch count errors, so localization errors
cannot cancel; with g=1 it coincides with the per-image absolute count error.
SSIM and PSNR score the predicted maps against ground truth; evaluation is
always against perfect ground truth regardless of what labels a model was
trained on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
DATA_RANGE_FLOOR = 1e-12


@dataclass
class GameConfig:
    grid: int = 4

    def __post_init__(self):
        if self.grid < 1:
            raise ValueError(f"grid must be >= 1, got {self.grid}")


@dataclass
class MetricsReport:
    model: str
    regime: str
    dataset: str
    mae: float
    game: float
    game_grid: int
    ssim: float
    psnr: float
    n_images: int

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "regime": self.regime,
            "dataset": self.dataset,
            "mae": self.mae,
            "game": self.game,
            "game_grid": self.game_grid,
            "ssim": self.ssim,
            "psnr": _json_safe(self.psnr),
            "n_images": self.n_images,
        }


def _json_safe(value: float):
    return value if math.isfinite(value) else "inf"


def mae(pred_counts, gt_counts) -> float:
    """Mean absolute count error over a dataset."""
    pred = np.asarray(pred_counts, dtype=np.float64)
    gt = np.asarray(gt_counts, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise ValueError(f"count lists misaligned: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise ValueError("count lists are empty")
    return float(np.mean(np.abs(pred - gt)))


def _check_dims(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ValueError(f"map dims mismatch: {pred.shape} vs {gt.shape}")


def _pad_to_multiple(arr: np.ndarray, g: int) -> np.ndarray:
    h, w = arr.shape
    hp = (g - h % g) % g
    wp = (g - w % g) % g
    if hp == 0 and wp == 0:
        return arr
    return np.pad(arr, ((0, hp), (0, wp)))


def game(pred: np.ndarray, gt: np.ndarray, config: GameConfig = GameConfig()) -> float:
    """Sum of absolute per-patch count errors over a grid x grid split.

    Maps are zero-padded on the right/bottom when the grid does not divide
    their dims. Patch sums use plain contiguous-block summation so the g=1
    case reproduces the whole-map count exactly.
    """
    _check_dims(pred, gt)
    g = config.grid
    p = _pad_to_multiple(np.ascontiguousarray(pred, dtype=np.float64), g)
    t = _pad_to_multiple(np.ascontiguousarray(gt, dtype=np.float64), g)
    ph, pw = p.shape[0] // g, p.shape[1] // g
    total = 0.0
    for bi in range(g):
        for bj in range(g):
            sl = (slice(bi * ph, (bi + 1) * ph), slice(bj * pw, (bj + 1) * pw))
            total += abs(p[sl].sum() - t[sl].sum())
    return float(total)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    d = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(d * d) / (2.0 * sigma * sigma))
    return g / g.sum()


def _valid_filter(arr: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation with a 1D window applied to both axes."""
    k = window.size
    h, w = arr.shape
    rows = np.zeros((h, w - k + 1), dtype=np.float64)
    for j in range(k):
        rows += window[j] * arr[:, j : j + w - k + 1]
    out = np.zeros((h - k + 1, w - k + 1), dtype=np.float64)
    for i in range(k):
        out += window[i] * rows[i : i + h - k + 1, :]
    return out


def ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean local structural similarity over all fully-contained windows.

    Uses an 11x11 Gaussian window (sigma 1.5) and constants C1=(0.01R)^2,
    C2=(0.03R)^2 with the data range R taken from the map maxima, since
    density maps are not 8-bit. Two all-zero maps compare as 1.
    """
    _check_dims(pred, gt)
    h, w = pred.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(
            f"maps must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM, got {h}x{w}"
        )
    x = np.ascontiguousarray(pred, dtype=np.float64)
    y = np.ascontiguousarray(gt, dtype=np.float64)
    r = max(float(y.max()), float(x.max()), DATA_RANGE_FLOOR)
    c1 = (0.01 * r) ** 2
    c2 = (0.03 * r) ** 2
    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    mu_x = _valid_filter(x, win)
    mu_y = _valid_filter(y, win)
    var_x = _valid_filter(x * x, win) - mu_x * mu_x
    var_y = _valid_filter(y * y, win) - mu_y * mu_y
    cov = _valid_filter(x * y, win) - mu_x * mu_y
    smap = ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    return float(smap.mean())


def psnr(pred: np.ndarray, gt: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB after rescaling both maps to peak 255.

    The scale comes from the ground-truth maximum (prediction maximum if the
    ground truth is all-zero). Identical maps give +inf.
    """
    _check_dims(pred, gt)
    peak = float(gt.max())
    if peak <= 0.0:
        peak = float(pred.max())
    scale = 255.0 / max(peak, DATA_RANGE_FLOOR)
    diff = (pred.astype(np.float64) - gt.astype(np.float64)) * scale
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def evaluate(preds: list[np.ndarray], gts: list[np.ndarray],
             game_config: GameConfig = GameConfig(), *,
             model: str = "", regime: str = "", dataset: str = "") -> MetricsReport:
    """Aggregate all four metrics over aligned prediction / ground-truth maps."""
    if len(preds) != len(gts):
        raise ValueError(f"misaligned lists: {len(preds)} preds vs {len(gts)} gts")
    if not preds:
        raise ValueError("no maps to evaluate")
    pred_counts = np.array([p.sum() for p in preds], dtype=np.float64)
    gt_counts = np.array([t.sum() for t in gts], dtype=np.float64)
    games = np.array([game(p, t, game_config) for p, t in zip(preds, gts)])
    ssims = np.array([ssim(p, t) for p, t in zip(preds, gts)])
    psnrs = np.array([psnr(p, t) for p, t in zip(preds, gts)])
    return MetricsReport(
        model=model,
        regime=regime,
        dataset=dataset,
        mae=mae(pred_counts, gt_counts),
        game=float(np.mean(games)),
        game_grid=game_config.grid,
        ssim=float(np.mean(ssims)),
        psnr=float(np.mean(psnrs)),
        n_images=len(preds),
    )


def render_table(reports: list[MetricsReport]) -> str:
    """Aligned text table: Model, Dataset, Labels, MAE, GAME, SSIM, PSNR."""
    header = ("Model", "Dataset", "Labels", "MAE", "GAME", "SSIM", "PSNR")
    rows = [header]
    for r in reports:
        psnr_s = f"{r.psnr:.2f}" if math.isfinite(r.psnr) else "inf"
        rows.append((r.model, r.dataset, r.regime, f"{r.mae:.2f}",
                     f"{r.game:.2f}", f"{r.ssim:.2f}", psnr_s))
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for ri, row in enumerate(rows):
        cells = [cell.ljust(widths[i]) if i < 3 else cell.rjust(widths[i])
                 for i, cell in enumerate(row)]
        lines.append("  ".join(cells).rstrip())
        if ri == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines)
