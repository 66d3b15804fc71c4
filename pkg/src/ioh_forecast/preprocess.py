"""Per-window preprocessing: symmetric normalization and trend/seasonal
decomposition.

Both stages are pure functions on numpy arrays shaped [..., L, C]. The
statistics of ``normalize`` are always computed from the context window
alone and reused verbatim by ``denormalize``, which is what lets forecasts
be mapped back to mmHg exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff

SIGMA_FLOOR = 1e-5


@dataclass
class NormStats:
    """Per-channel mean/std of one context window.

    ``floored`` marks channels whose standard deviation fell below the
    sigma floor (flat-line windows) and was replaced by it.
    """

    mean: np.ndarray  # [..., C]
    std: np.ndarray   # [..., C], elementwise >= SIGMA_FLOOR
    floored: np.ndarray  # [..., C] bool


@dataclass
class DecomposedWindow:
    """Additive split of a normalized window; trend + seasonal == input."""

    trend: np.ndarray
    seasonal: np.ndarray
    window: int


def normalize(x: np.ndarray) -> tuple[np.ndarray, NormStats]:
    """Standardize each channel of a window to zero mean / unit variance.

    Uses the population (divide-by-L) standard deviation. Channels with
    std below the sigma floor are divided by the floor instead, so constant
    windows map to zeros rather than raising.

    Args:
        x: array [..., L, C] with L >= 2.

    Returns:
        (normalized array of the same shape, NormStats with [..., C] stats).
    """
    x = np.asarray(x)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    if x.ndim < 2 or x.shape[-2] < 2:
        raise ValueError(f"normalize expects [..., L>=2, C], got {x.shape}")
    mean = x.mean(axis=-2)
    std = x.std(axis=-2)
    floored = std < SIGMA_FLOOR
    safe_std = np.where(floored, SIGMA_FLOOR, std).astype(x.dtype)
    normalized = (x - mean[..., None, :]) / safe_std[..., None, :]
    return normalized, NormStats(mean=mean, std=safe_std, floored=floored)


def denormalize(y: np.ndarray, stats: NormStats, channel: int) -> np.ndarray:
    """Map normalized values back to the raw scale of one channel."""
    n_channels = stats.mean.shape[-1]
    if not -n_channels <= channel < n_channels:
        raise IndexError(
            f"channel {channel} out of range for {n_channels} channels"
        )
    return y * stats.std[..., channel] + stats.mean[..., channel]


def denormalize_all(y: np.ndarray, stats: NormStats) -> np.ndarray:
    """Denormalize an [..., T, C] block, all channels at once."""
    return y * stats.std[..., None, :] + stats.mean[..., None, :]


def identity_stats(n_channels: int = 2, dtype=np.float64) -> NormStats:
    """Stats under which (de)normalization is the identity map."""
    return NormStats(
        mean=np.zeros(n_channels, dtype=dtype),
        std=np.ones(n_channels, dtype=dtype),
        floored=np.zeros(n_channels, dtype=bool),
    )


def decompose(x: np.ndarray, window: int) -> DecomposedWindow:
    """Split a window into moving-average trend and seasonal residual.

    The trend is a replicate-padded moving average (odd window), computed
    by the same pooling kernel the model differentiates through; the
    seasonal part is the elementwise remainder, so the two components sum
    back to the input exactly up to rounding.
    """
    x = np.asarray(x)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    trend = autodiff.avgpool1d_replicate(autodiff.Tensor(x, dtype=x.dtype), window).data
    return DecomposedWindow(trend=trend, seasonal=x - trend, window=window)
