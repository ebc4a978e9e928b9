"""Facial-stream featurization: windowed local tensors and 8-statistic global vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import EXPRESSION_CHANNELS
from .errors import ConfigError, InsufficientDataError, SchemaError

GRID_RATE = 30  # frames per second on the regularized grid
MAX_WINDOW_MINUTES = 8

STAT_NAMES = ("max", "min", "mean", "std", "median", "kurtosis", "skewness", "rate_of_change")
N_STATS = len(STAT_NAMES)
GLOBAL_DIM = N_STATS * EXPRESSION_CHANNELS  # 408


@dataclass(frozen=True)
class WindowSpec:
    """End-anchored window: the final ``minutes`` minutes of a segment,
    regularized to 30 Hz and optionally mean-pooled by ``pool_stride``."""

    minutes: int
    pool_stride: int = 1

    def __post_init__(self):
        if not (1 <= int(self.minutes) <= MAX_WINDOW_MINUTES):
            raise ConfigError(f"window minutes must be in 1..{MAX_WINDOW_MINUTES}, got {self.minutes}")
        if int(self.pool_stride) < 1:
            raise ConfigError(f"pool stride must be >= 1, got {self.pool_stride}")
        object.__setattr__(self, "minutes", int(self.minutes))
        object.__setattr__(self, "pool_stride", int(self.pool_stride))

    @property
    def grid_frames(self):
        """Frames on the regularized grid before pooling."""
        return GRID_RATE * 60 * self.minutes

    @property
    def output_frames(self):
        return self.grid_frames // self.pool_stride


@dataclass(frozen=True)
class LocalTensor:
    """Regularized (T, 51) window; rows are frames, columns are channels."""

    frames: np.ndarray
    spec: WindowSpec

    def __post_init__(self):
        # contiguous layout keeps downstream reductions bit-deterministic
        frames = np.ascontiguousarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise SchemaError(f"local tensor must be (T>=1, C), got {frames.shape}")
        if not np.isfinite(frames).all():
            raise SchemaError("local tensor contains non-finite entries")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)


@dataclass(frozen=True)
class GlobalVector:
    """8 statistics x 51 channels, flattened statistic-major to length 408."""

    stats: np.ndarray

    def __post_init__(self):
        stats = np.asarray(self.stats, dtype=np.float64)
        if stats.shape != (N_STATS, EXPRESSION_CHANNELS):
            raise SchemaError(
                f"global stats must be ({N_STATS}, {EXPRESSION_CHANNELS}), got {stats.shape}"
            )
        if not np.isfinite(stats).all():
            raise SchemaError("global stats contain non-finite entries")
        stats = stats.view()
        stats.setflags(write=False)
        object.__setattr__(self, "stats", stats)

    @property
    def flat(self):
        return self.stats.reshape(-1)

    def stat(self, name):
        return self.stats[STAT_NAMES.index(name)]


def extract_window(stream, spec):
    """Cut the final ``spec.minutes`` minutes of a stream onto a uniform 30 Hz grid.

    Each grid point takes the nearest recorded frame (ties resolve to the
    earlier frame), which both fills gaps and pads the leading portion of
    windows longer than the stream by repeating the first frame.  With
    ``pool_stride > 1`` the grid is then mean-pooled in stride-sized blocks,
    dropping any leading remainder so the window stays anchored at the end.
    """
    if len(stream) == 0:
        raise InsufficientDataError(f"stream {stream.segment_id!r} is empty")
    if stream.duration < 1.0:
        raise InsufficientDataError(
            f"stream {stream.segment_id!r} spans {stream.duration:.3f}s, need >= 1s"
        )
    n = spec.grid_frames
    end = stream.duration
    grid = end - np.arange(n - 1, -1, -1, dtype=np.float64) / GRID_RATE

    times = stream.times
    right = np.searchsorted(times, grid)
    right = np.clip(right, 0, times.size - 1)
    left = np.clip(right - 1, 0, times.size - 1)
    d_left = np.abs(grid - times[left])
    d_right = np.abs(times[right] - grid)
    take = np.where(d_left <= d_right, left, right)

    vals = stream.values[take].astype(np.float64)
    stride = spec.pool_stride
    if stride > 1:
        t_out = n // stride
        vals = vals[n - t_out * stride:]
        vals = vals.reshape(t_out, stride, vals.shape[1]).mean(axis=1)
    return LocalTensor(vals, spec)


def global_stats(tensor):
    """Per-channel summary statistics over a local tensor.

    Definitions: population standard deviation (divide by T); median as the
    mean of the middle two for even T; Fisher excess kurtosis and third
    standardized moment skewness, both defined as 0 for constant channels;
    rate of change as the mean absolute first difference between consecutive
    regularized frames.
    """
    x = tensor.frames
    n_t = x.shape[0]
    if n_t < 2:
        raise InsufficientDataError(f"need at least 2 frames for global stats, got {n_t}")

    mx = x.max(axis=0)
    mn = x.min(axis=0)
    constant = mx == mn  # exact detection, immune to mean roundoff
    mean = np.where(constant, mx, x.mean(axis=0))
    d = x - mean
    m2 = np.mean(d * d, axis=0)
    std = np.where(constant, 0.0, np.sqrt(m2))
    med = np.median(x, axis=0)

    nz = std > 0.0
    skew = np.zeros_like(std)
    kurt = np.zeros_like(std)
    if nz.any():
        m3 = np.mean(d ** 3, axis=0)
        m4 = np.mean(d ** 4, axis=0)
        skew[nz] = m3[nz] / std[nz] ** 3
        kurt[nz] = m4[nz] / m2[nz] ** 2 - 3.0

    roc = np.mean(np.abs(np.diff(x, axis=0)), axis=0)

    return GlobalVector(np.stack([mx, mn, mean, std, med, kurt, skew, roc]))
