"""Motion-based catheter pseudo-labeling toolkit.

Converts image sequences into binary pseudo-labels by thresholding dense
optical flow, tracks the labeled region with an expanding-bounding-box
inference loop over a pluggable segmenter, and evaluates predictions
with Dice / MAE reports. A procedural generator supplies vessel-like
test sequences with ground truth.
"""

from .core import (
    BoundingBox,
    ConfigError,
    FlowField,
    FlowsegError,
    FormatError,
    Frame,
    Mask,
    SegmenterContractError,
    Sequence,
    SequenceKind,
    ThresholdConfig,
    clamp_box,
)
from .flow import (
    BACKENDS,
    CorrelationParams,
    CostVolume,
    FlowParams,
    block_matching_flow,
    build_cost_volume,
    correlate,
    estimate_flow,
    flow_sequence,
)
from .farneback import farneback_flow
from .io import (
    load_flows,
    load_sequence,
    read_flow,
    read_frame,
    read_mask,
    save_sequence,
    write_flow,
    write_frame,
    write_mask,
)
from .labeling import (
    DEFAULT_MIN_COMPONENT_AREA,
    FrameLabel,
    default_threshold,
    generate_labels,
    is_stationary,
    mask_to_bbox,
    remove_small_components,
    threshold_flow,
)
from .inference import (
    FlowThresholdSegmenter,
    FrameTrace,
    InferenceConfig,
    InferenceState,
    Segmenter,
    expand_bbox,
    find_initial_frame,
    infer_frame,
    is_valid,
    run_inference,
    run_inference_traced,
)
from .metrics import (
    MetricReport,
    dice,
    endpoint_error,
    evaluate_run,
    mae,
    write_report,
)
from .synth import (
    SynthConfig,
    constant_shift_pair,
    generate,
    smooth_texture,
    speckle_texture,
    touching_wall_config,
)

__version__ = "0.1.0"
