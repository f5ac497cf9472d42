"""Reference region-of-interest pooling kernels.

``roi_align`` keeps every coordinate as a real number: the region is
divided into an equal grid of bins, a fixed number of points per bin is
bilinearly sampled, and the samples reduce by max (default) or average.
``roi_pool`` is the quantized variant it is usually contrasted with:
region boundaries and bin edges snap to integer pixels, which makes the
output jump under sub-pixel shifts where ``roi_align`` moves smoothly.

Conventions: pixel (i, j) sits at continuous coordinates (x=j, y=i);
coordinates outside the map are clamped to the border before
interpolation.  All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, floor

import numpy as np

from .tensor_io import ScoreMap

__all__ = ["Roi", "PoolSpec", "FeatureMap", "bilinear_sample", "roi_align", "roi_pool"]


@dataclass(frozen=True)
class Roi:
    """Axis-aligned region on a feature map, in real coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        values = (self.x1, self.y1, self.x2, self.y2)
        if not all(np.isfinite(values)):
            raise ValueError(f"ROI coordinates must be finite: {values}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"ROI must have positive extent: {values}")


@dataclass(frozen=True)
class PoolSpec:
    """Output grid shape, sampling density, and reduction mode."""

    out_h: int
    out_w: int
    samples_per_side: int = 2  # 2 x 2 = four sample points per bin
    mode: str = "max"

    def __post_init__(self):
        if self.out_h < 1 or self.out_w < 1:
            raise ValueError("output size must be >= 1 in both dims")
        if self.samples_per_side < 1:
            raise ValueError("samples_per_side must be >= 1")
        if self.mode not in ("max", "avg"):
            raise ValueError(f"mode must be 'max' or 'avg', got {self.mode!r}")


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """H x W x C float64 feature tensor for the pooling kernels."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"feature map must be H x W x C, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature map contains non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_score_map(cls, scores: ScoreMap) -> "FeatureMap":
        return cls(scores.data)

    def to_score_map(self) -> ScoreMap:
        return ScoreMap(self.data.astype(np.float32))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FeatureMap)
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


def _interp_grid(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear samples at the cartesian grid ys x xs, all channels.

    Uses the incremental form f00 + dx*(f10-f00) per axis, which
    reproduces constant inputs exactly.
    """
    height, width = data.shape[:2]
    xs = np.clip(xs, 0.0, width - 1.0)
    ys = np.clip(ys, 0.0, height - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    dx = (xs - x0)[None, :, None]
    dy = (ys - y0)[:, None, None]
    f00 = data[np.ix_(y0, x0)]
    f10 = data[np.ix_(y0, x1)]
    f01 = data[np.ix_(y1, x0)]
    f11 = data[np.ix_(y1, x1)]
    top = f00 + dx * (f10 - f00)
    bottom = f01 + dx * (f11 - f01)
    return top + dy * (bottom - top)


def bilinear_sample(f: FeatureMap, x: float, y: float, c: int) -> float:
    """Interpolated value of channel ``c`` at the continuous point (x, y)."""
    if not (0 <= c < f.channels):
        raise IndexError(f"channel {c} out of range for {f.channels} channels")
    if not (np.isfinite(x) and np.isfinite(y)):
        raise ValueError("sample coordinates must be finite")
    value = _interp_grid(f.data[:, :, c : c + 1], np.array([x]), np.array([y]))
    return float(value[0, 0, 0])


def roi_align(f: FeatureMap, roi: Roi, spec: PoolSpec) -> FeatureMap:
    """Pool a region without quantizing any coordinate.

    The region splits into out_h x out_w equal bins; each bin is
    sampled at samples_per_side**2 points placed at fractional offsets
    (k + 0.5) / n of the bin extent, and the samples reduce by
    ``spec.mode``.
    """
    n = spec.samples_per_side
    bin_h = (roi.y2 - roi.y1) / spec.out_h
    bin_w = (roi.x2 - roi.x1) / spec.out_w
    offsets = (np.arange(n) + 0.5) / n
    ys = roi.y1 + (np.arange(spec.out_h)[:, None] + offsets[None, :]) * bin_h
    xs = roi.x1 + (np.arange(spec.out_w)[:, None] + offsets[None, :]) * bin_w
    samples = _interp_grid(f.data, xs.ravel(), ys.ravel())
    samples = samples.reshape(spec.out_h, n, spec.out_w, n, f.channels)
    if spec.mode == "max":
        pooled = samples.max(axis=(1, 3))
    else:
        pooled = samples.mean(axis=(1, 3))
    return FeatureMap(pooled)


def roi_pool(f: FeatureMap, roi: Roi, spec: PoolSpec) -> FeatureMap:
    """Quantized pooling: boundaries and bins snap to integer pixels.

    The region rounds outward (floor on x1/y1, ceil on x2/y2), each bin
    covers a floor/ceil split of the rounded extent, and whole pixels
    reduce by ``spec.mode``.  Bins left empty after clipping yield 0.
    """
    y_start, x_start = floor(roi.y1), floor(roi.x1)
    roi_h = ceil(roi.y2) - y_start
    roi_w = ceil(roi.x2) - x_start
    out = np.zeros((spec.out_h, spec.out_w, f.channels), dtype=np.float64)
    for i in range(spec.out_h):
        r0 = max(y_start + floor(i * roi_h / spec.out_h), 0)
        r1 = min(y_start + ceil((i + 1) * roi_h / spec.out_h), f.height)
        for j in range(spec.out_w):
            c0 = max(x_start + floor(j * roi_w / spec.out_w), 0)
            c1 = min(x_start + ceil((j + 1) * roi_w / spec.out_w), f.width)
            if r0 >= r1 or c0 >= c1:
                continue
            cell = f.data[r0:r1, c0:c1]
            out[i, j] = cell.max(axis=(0, 1)) if spec.mode == "max" else cell.mean(axis=(0, 1))
    return FeatureMap(out)
