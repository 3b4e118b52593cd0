"""Domain types shared by the whole toolkit.

Images are single-channel, row-major numpy arrays. All types validate on
construction and are immutable afterwards, so they can be shared freely
across worker processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np


class FlowsegError(Exception):
    """Base class for toolkit errors."""


class FormatError(FlowsegError):
    """A file does not conform to its declared format."""


class ConfigError(FlowsegError):
    """A configuration value is invalid or inconsistent."""


class SegmenterContractError(FlowsegError):
    """A segmenter implementation violated its output contract."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Frame:
    """Single-channel intensity image with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"frame data must be 2-D, got shape {arr.shape}")
        h, w = arr.shape
        if w < 8 or h < 8:
            raise ValueError(f"frame must be at least 8x8, got {w}x{h}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("frame contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("frame intensities must lie in [0, 1]")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense per-pixel displacement field (u = horizontal, v = vertical)."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float64, copy=True)
        v = np.array(self.v, dtype=np.float64, copy=True)
        if u.ndim != 2 or v.ndim != 2:
            raise ValueError("flow components must be 2-D")
        if u.shape != v.shape:
            raise ValueError(f"u shape {u.shape} != v shape {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("flow contains non-finite values")
        object.__setattr__(self, "u", _freeze(u))
        object.__setattr__(self, "v", _freeze(v))

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary segmentation image with values in {0, 1}."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"mask data must be 2-D, got shape {arr.shape}")
        if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
            raise ValueError("mask contains non-finite values")
        vals = np.unique(arr)
        if not np.all(np.isin(vals, (0, 1))):
            raise ValueError("mask values must be strictly binary (0 or 1)")
        object.__setattr__(self, "data", _freeze(arr.astype(np.uint8)))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def foreground_area(self) -> int:
        return int(self.data.sum())

    def is_empty(self) -> bool:
        return not self.data.any()

    @staticmethod
    def zeros(height: int, width: int) -> "Mask":
        return Mask(np.zeros((height, width), dtype=np.uint8))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel rectangle, half-open: [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        for name in ("x0", "y0", "x1", "y1"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.x0 >= self.x1 or self.y0 >= self.y1:
            raise ValueError(f"degenerate box {self.as_tuple()}: zero or negative area")

    def as_tuple(self):
        return (self.x0, self.y0, self.x1, self.y1)

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def contains(self, other: "BoundingBox") -> bool:
        return (self.x0 <= other.x0 and self.y0 <= other.y0
                and self.x1 >= other.x1 and self.y1 >= other.y1)


def clamp_box(box: BoundingBox, width: int, height: int) -> BoundingBox:
    """Clamp a box to image bounds; a box emptied by clamping becomes the full image."""
    x0 = max(box.x0, 0)
    y0 = max(box.y0, 0)
    x1 = min(box.x1, width)
    y1 = min(box.y1, height)
    if x0 >= x1 or y0 >= y1:
        return BoundingBox(0, 0, width, height)
    return BoundingBox(x0, y0, x1, y1)


class SequenceKind(str, Enum):
    SYNTHETIC = "synthetic"
    PHANTOM = "phantom"


@dataclass
class Sequence:
    """Ordered frames of one acquisition, optionally with aligned ground truth."""

    frames: List[Frame]
    kind: SequenceKind = SequenceKind.SYNTHETIC
    name: str = "sequence"
    ground_truth: Optional[List[Mask]] = None

    def __post_init__(self):
        self.kind = SequenceKind(self.kind)
        if len(self.frames) < 2:
            raise ValueError("a sequence needs at least 2 frames")
        w, h = self.frames[0].width, self.frames[0].height
        for i, f in enumerate(self.frames):
            if (f.width, f.height) != (w, h):
                raise ValueError(f"frame {i} is {f.width}x{f.height}, expected {w}x{h}")
        if self.ground_truth is not None:
            if len(self.ground_truth) != len(self.frames):
                raise ValueError("ground truth length must equal frame count")
            for i, m in enumerate(self.ground_truth):
                if (m.width, m.height) != (w, h):
                    raise ValueError(f"ground-truth mask {i} dimensions mismatch")

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class ThresholdConfig:
    """Flow-magnitude threshold and the area floor used when denoising masks."""

    T: float
    min_component_area: int = 10

    def __post_init__(self):
        if not (self.T > 0):
            raise ValueError(f"threshold T must be positive, got {self.T}")
        if self.min_component_area < 0:
            raise ValueError("min_component_area must be >= 0")
