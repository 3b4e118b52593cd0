"""Flow fields to binary pseudo-labels.

A pixel is labeled foreground when either flow component exceeds the
threshold in magnitude (strict inequality). Small connected components
are treated as noise and erased; frames whose denoised mask is empty are
stationary and carry no bounding box.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy import ndimage

from .core import BoundingBox, FlowField, Mask, Sequence, SequenceKind, ThresholdConfig

# 8-connectivity: diagonal runs of a thin moving structure stay one component
_STRUCTURE_8 = np.ones((3, 3), dtype=int)

DEFAULT_MIN_COMPONENT_AREA = 10


def threshold_flow(flow: FlowField, T: float) -> Mask:
    """Binary mask of pixels moving faster than T on either axis.

    Foreground iff |u| > T or |v| > T, strictly; a component exactly at T
    stays background.
    """
    if not (T > 0):
        raise ValueError(f"threshold T must be positive, got {T}")
    if not (np.all(np.isfinite(flow.u)) and np.all(np.isfinite(flow.v))):
        raise ValueError("flow contains non-finite values")
    fg = (np.abs(flow.u) > T) | (np.abs(flow.v) > T)
    return Mask(fg.astype(np.uint8))


def default_threshold(kind: SequenceKind, override: Optional[float] = None) -> float:
    """Default flow threshold per sequence kind; an explicit override wins."""
    if override is not None:
        if not (override > 0):
            raise ValueError(f"threshold override must be positive, got {override}")
        return float(override)
    kind = SequenceKind(kind)
    return 0.2 if kind is SequenceKind.SYNTHETIC else 1.0


def remove_small_components(mask: Mask, min_area: int) -> Mask:
    """Erase 8-connected foreground components smaller than min_area pixels."""
    if min_area < 0:
        raise ValueError("min_area must be >= 0")
    if min_area == 0 or mask.is_empty():
        return mask
    labels, n = ndimage.label(mask.data, structure=_STRUCTURE_8)
    if n == 0:
        return mask
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_area
    keep[0] = False
    return Mask(keep[labels].astype(np.uint8))


def is_stationary(flow: FlowField, T: float, min_area: int = DEFAULT_MIN_COMPONENT_AREA) -> bool:
    """True when the denoised thresholded flow has no foreground left."""
    return remove_small_components(threshold_flow(flow, T), min_area).is_empty()


def mask_to_bbox(mask: Mask) -> Optional[BoundingBox]:
    """Tight half-open box around all foreground pixels; None when empty."""
    ys, xs = np.nonzero(mask.data)
    if len(ys) == 0:
        return None
    return BoundingBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


@dataclass(frozen=True)
class FrameLabel:
    """Pseudo-label of one frame: mask, optional box, stationary flag."""

    frame_index: int
    mask: Mask
    bbox: Optional[BoundingBox]
    stationary: bool

    def __post_init__(self):
        empty = self.mask.is_empty()
        if self.stationary != empty or (self.bbox is None) != empty:
            raise ValueError(
                f"frame {self.frame_index}: stationary/bbox/mask emptiness disagree"
            )


def label_from_flow(flow: FlowField, cfg: ThresholdConfig, frame_index: int) -> FrameLabel:
    mask = remove_small_components(threshold_flow(flow, cfg.T), cfg.min_component_area)
    bbox = mask_to_bbox(mask)
    return FrameLabel(frame_index=frame_index, mask=mask, bbox=bbox,
                      stationary=bbox is None)


def generate_labels(seq: Sequence, flows: List[FlowField],
                    cfg: ThresholdConfig) -> List[FrameLabel]:
    """Pseudo-label every frame of a sequence from its adjacent-frame flows.

    Frame 0 has no preceding motion evidence and is always stationary;
    frame i >= 1 is labeled from flows[i-1]. Masks depend only on the
    flows and the config, never on the frame pixels.
    """
    if len(flows) != len(seq.frames) - 1:
        raise ValueError(
            f"expected {len(seq.frames) - 1} flows for {len(seq.frames)} frames, "
            f"got {len(flows)}"
        )
    h, w = seq.height, seq.width
    for i, fl in enumerate(flows):
        if (fl.width, fl.height) != (w, h):
            raise ValueError(f"flow {i} dimensions {fl.width}x{fl.height} != frames {w}x{h}")

    labels = [FrameLabel(frame_index=0, mask=Mask.zeros(h, w), bbox=None, stationary=True)]
    for i, fl in enumerate(flows):
        labels.append(label_from_flow(fl, cfg, frame_index=i + 1))
    return labels


def labels_to_records(labels: List[FrameLabel]) -> List[dict]:
    """JSON-friendly per-frame records (index, stationary, bbox)."""
    return [
        {
            "index": lab.frame_index,
            "stationary": lab.stationary,
            "bbox": list(lab.bbox.as_tuple()) if lab.bbox is not None else None,
        }
        for lab in labels
    ]
