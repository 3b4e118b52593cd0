"""Bounding-box-driven inference loop over a pluggable segmenter.

The loop finds the first frame with catheter motion, then walks the
sequence keeping a seed box derived from the previous frame's
prediction. Each frame is segmented inside the current box; an invalid
prediction (foreground not larger than the validity area) triggers a
retry with the box expanded about its center, growing more aggressively
with every attempt. The first valid prediction completes the frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Protocol, Tuple

import numpy as np

from .core import (
    BoundingBox,
    FlowField,
    Frame,
    Mask,
    SegmenterContractError,
    Sequence,
    ThresholdConfig,
    clamp_box,
)
from .flow import estimate_flow, flow_sequence
from .labeling import (
    DEFAULT_MIN_COMPONENT_AREA,
    mask_to_bbox,
    remove_small_components,
    threshold_flow,
)


class Segmenter(Protocol):
    """Anything that can segment one frame inside a region of interest.

    Implementations return a full-frame binary mask (zero outside the box
    is fine) with the same dimensions as the input frame.
    """

    def segment(self, frame: Frame, prev_frame: Optional[Frame],
                box: BoundingBox) -> Mask: ...


@dataclass(frozen=True)
class InferenceConfig:
    s_max: int = 5
    expansion_base: float = 0.25
    validity_area: int = 200
    T: float = 0.2

    def __post_init__(self):
        if self.s_max < 1:
            raise ValueError("s_max must be >= 1")
        if self.expansion_base <= 0:
            raise ValueError("expansion_base must be positive")
        if self.validity_area < 1:
            raise ValueError("validity_area must be >= 1")
        if self.T <= 0:
            raise ValueError("T must be positive")


@dataclass
class InferenceState:
    """Loop counters for one frame: s segmenter calls, k of them valid."""

    s: int
    k: int
    box: BoundingBox
    merged: Mask


@dataclass(frozen=True)
class FrameTrace:
    frame_index: int
    s: int
    k: int
    seed_box: BoundingBox
    final_box: BoundingBox


class FlowThresholdSegmenter:
    """Reference segmenter: thresholded dense flow, denoised, cropped to the box.

    Flow fields are memoized per frame pair, so repeated calls for the
    same frame at different box scales cost one flow estimation. Call
    :meth:`prime` to reuse fields that were already computed elsewhere.
    """

    def __init__(self, backend: str = "farneback", params=None,
                 cfg: Optional[ThresholdConfig] = None):
        self.backend = backend
        self.params = params
        self.cfg = cfg if cfg is not None else ThresholdConfig(T=0.2)
        self._memo = {}

    def prime(self, seq: Sequence, flows: List[FlowField]) -> None:
        for i, fl in enumerate(flows):
            prev, cur = seq.frames[i], seq.frames[i + 1]
            self._memo[(id(prev), id(cur))] = (prev, cur, fl)

    def _flow_for(self, prev: Frame, cur: Frame) -> FlowField:
        key = (id(prev), id(cur))
        hit = self._memo.get(key)
        if hit is None:
            fl = estimate_flow(prev, cur, self.backend, self.params)
            self._memo[key] = (prev, cur, fl)  # keep refs so ids stay valid
            return fl
        return hit[2]

    def segment(self, frame: Frame, prev_frame: Optional[Frame],
                box: BoundingBox) -> Mask:
        if prev_frame is None:
            return Mask.zeros(frame.height, frame.width)
        flow = self._flow_for(prev_frame, frame)
        mask = remove_small_components(threshold_flow(flow, self.cfg.T),
                                       self.cfg.min_component_area)
        box = clamp_box(box, frame.width, frame.height)
        cropped = np.zeros_like(mask.data)
        cropped[box.y0:box.y1, box.x0:box.x1] = mask.data[box.y0:box.y1, box.x0:box.x1]
        return Mask(cropped)


def is_valid(prediction: Mask, validity_area: int) -> bool:
    """A prediction counts only when its foreground is strictly larger
    than validity_area pixels."""
    return prediction.foreground_area() > validity_area


def expand_bbox(box: BoundingBox, s: int, cfg: InferenceConfig,
                width: int, height: int) -> BoundingBox:
    """Scale a box about its center by (1 + expansion_base * s).

    Edges are rounded outward before clamping, so the result contains the
    input; the growth factor is strictly increasing in s and the box
    saturates at the full image.
    """
    if s < 1:
        raise ValueError("iteration s must be >= 1")
    factor = 1.0 + cfg.expansion_base * s
    cx = (box.x0 + box.x1) / 2.0
    cy = (box.y0 + box.y1) / 2.0
    half_w = (box.x1 - box.x0) / 2.0 * factor
    half_h = (box.y1 - box.y0) / 2.0 * factor
    grown = BoundingBox(
        int(np.floor(cx - half_w)),
        int(np.floor(cy - half_h)),
        int(np.ceil(cx + half_w)),
        int(np.ceil(cy + half_h)),
    )
    return clamp_box(grown, width, height)


def find_initial_frame(seq: Sequence, flows: List[FlowField], cfg: InferenceConfig,
                       min_area: int = DEFAULT_MIN_COMPONENT_AREA,
                       ) -> Optional[Tuple[int, BoundingBox]]:
    """First frame with motion evidence, plus the tight box around it.

    Scans flows in order (flows[i-1] labels frame i) and returns None for
    an entirely stationary sequence, meaning no catheter is present.
    """
    for i, flow in enumerate(flows):
        mask = remove_small_components(threshold_flow(flow, cfg.T), min_area)
        bbox = mask_to_bbox(mask)
        if bbox is not None:
            return i + 1, bbox
    return None


def infer_frame(frame: Frame, prev_frame: Optional[Frame], seed_box: BoundingBox,
                seg: Segmenter, cfg: InferenceConfig) -> Tuple[Mask, InferenceState]:
    """Run the retry loop on a single frame.

    Calls the segmenter with the current box; an invalid result expands
    the box and retries. Stops at the first valid prediction, at s_max
    calls, or when the box has saturated to the full image and the last
    call was still invalid. The merged mask is the union of all valid
    predictions for the frame.
    """
    box = clamp_box(seed_box, frame.width, frame.height)
    merged = np.zeros((frame.height, frame.width), dtype=np.uint8)
    s = 0
    k = 0
    while True:
        s += 1
        pred = seg.segment(frame, prev_frame, box)
        if (pred.width, pred.height) != (frame.width, frame.height):
            raise SegmenterContractError(
                f"segmenter returned {pred.width}x{pred.height} for a "
                f"{frame.width}x{frame.height} frame"
            )
        if is_valid(pred, cfg.validity_area):
            merged |= pred.data
            k += 1
            break
        if s >= cfg.s_max:
            break
        grown = expand_bbox(box, s, cfg, frame.width, frame.height)
        if grown == box:
            break
        box = grown
    merged_mask = Mask(merged)
    return merged_mask, InferenceState(s=s, k=k, box=box, merged=merged_mask)


def run_inference_traced(seq: Sequence, seg: Segmenter, cfg: InferenceConfig,
                         flows: Optional[List[FlowField]] = None,
                         min_area: int = DEFAULT_MIN_COMPONENT_AREA,
                         ) -> Tuple[List[Optional[Mask]], List[FrameTrace]]:
    """run_inference plus per-frame loop counters and boxes."""
    if flows is None:
        flows = flow_sequence(seq)
    initial = find_initial_frame(seq, flows, cfg, min_area=min_area)
    masks: List[Optional[Mask]] = [None] * len(seq.frames)
    traces: List[FrameTrace] = []
    if initial is None:
        return masks, traces

    start, tight_seed = initial
    w, h = seq.width, seq.height
    for i in range(start, len(seq.frames)):
        # one expansion step of motion margin on the tight box: a segmenter
        # that crops to the box can never predict past it, so a strictly
        # tight seed would only ever shrink and lose a moving target
        seed_box = expand_bbox(tight_seed, 1, cfg, w, h)
        merged, state = infer_frame(seq.frames[i], seq.frames[i - 1], seed_box, seg, cfg)
        masks[i] = merged
        traces.append(FrameTrace(frame_index=i, s=state.s, k=state.k,
                                 seed_box=seed_box, final_box=state.box))
        tight = mask_to_bbox(merged)
        if tight is not None:
            tight_seed = tight
        # otherwise keep the previous tight box through the dropout
    return masks, traces


def run_inference(seq: Sequence, seg: Segmenter, cfg: InferenceConfig,
                  flows: Optional[List[FlowField]] = None,
                  min_area: int = DEFAULT_MIN_COMPONENT_AREA,
                  ) -> List[Optional[Mask]]:
    """Per-frame merged predictions; None before the first catheter frame.

    From the initial frame on, each frame's seed box is the tight box of
    the previous frame's prediction (or the previous seed when that
    prediction was empty).
    """
    masks, _ = run_inference_traced(seq, seg, cfg, flows=flows, min_area=min_area)
    return masks
