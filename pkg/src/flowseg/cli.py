"""Command-line entry point wiring the pipeline stages together.

Subcommands: synth | flow | label | infer | eval | bench | pipeline.
Exit codes: 0 success, 1 validation/usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import io as fio
from .core import ConfigError, FlowsegError, FormatError, Sequence, SequenceKind, ThresholdConfig
from .flow import BACKENDS, CorrelationParams, FlowParams, flow_sequence
from .inference import (
    FlowThresholdSegmenter,
    InferenceConfig,
    run_inference_traced,
)
from .labeling import (
    DEFAULT_MIN_COMPONENT_AREA,
    generate_labels,
    labels_to_records,
    default_threshold,
)
from .metrics import POLICIES, evaluate_run, write_report
from .synth import SynthConfig, generate, touching_wall_config

ENV_OUT_ROOT = "FLOWSEG_OUT_ROOT"


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 on usage errors instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _dataclass_from_dict(cls, data: dict, what: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{what}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from exc


@dataclasses.dataclass
class RunConfig:
    """Everything one pipeline run needs, JSON-loadable with full defaults."""

    synth: SynthConfig = dataclasses.field(default_factory=SynthConfig)
    backend: str = "farneback"
    # tighter support than the estimator-wide defaults: pseudo-label
    # masks want a sharp threshold contour around the moving instrument,
    # and the default scene needs no pyramid at 2 px/frame
    flow_params: FlowParams = dataclasses.field(default_factory=lambda: FlowParams(
        pyramid_levels=1, poly_neighborhood=2, poly_sigma=0.8, averaging_window=2))
    correlation_params: CorrelationParams = dataclasses.field(default_factory=CorrelationParams)
    threshold: Optional[float] = None  # None -> default for the sequence kind
    min_component_area: int = DEFAULT_MIN_COMPONENT_AREA
    inference: InferenceConfig = dataclasses.field(default_factory=InferenceConfig)
    eval_policy: str = "catheter_frames_only"
    with_paper_refs: bool = False

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.eval_policy not in POLICIES:
            raise ConfigError(f"unknown eval policy {self.eval_policy!r}")
        if self.min_component_area < 0:
            raise ConfigError("min_component_area must be >= 0")

    @staticmethod
    def from_file(path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return RunConfig.from_dict(raw, what=str(path))

    @staticmethod
    def from_dict(raw: dict, what: str = "config") -> "RunConfig":
        data = dict(raw)
        if "synth" in data:
            sub = dict(data["synth"])
            if sub.get("path") is not None:
                sub["path"] = tuple(tuple(p) for p in sub["path"])
            data["synth"] = _dataclass_from_dict(SynthConfig, sub, f"{what}.synth")
        if "flow_params" in data:
            data["flow_params"] = _dataclass_from_dict(FlowParams, data["flow_params"],
                                                       f"{what}.flow_params")
        if "correlation_params" in data:
            data["correlation_params"] = _dataclass_from_dict(
                CorrelationParams, data["correlation_params"], f"{what}.correlation_params")
        if "inference" in data:
            data["inference"] = _dataclass_from_dict(InferenceConfig, data["inference"],
                                                     f"{what}.inference")
        return _dataclass_from_dict(RunConfig, data, what)

    def flow_backend_params(self):
        return self.flow_params if self.backend == "farneback" else self.correlation_params


def _default_out(name: str) -> Path:
    root = os.environ.get(ENV_OUT_ROOT, "runs")
    return Path(root) / name


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        if raw.get("path") is not None:
            raw["path"] = tuple(tuple(p) for p in raw["path"])
        cfg = _dataclass_from_dict(SynthConfig, raw, args.config)
    else:
        cfg = SynthConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, rng_seed=args.seed)
    if args.touching_wall:
        cfg = touching_wall_config(**dataclasses.asdict(cfg))
    out = Path(args.out_dir)
    seq = generate(cfg, jobs=args.jobs)
    out.mkdir(parents=True, exist_ok=True)
    manifest = fio.save_sequence(seq, out, threshold=default_threshold(seq.kind))
    print(manifest.parent)
    return 0


def _cmd_flow(args) -> int:
    seq = fio.load_sequence(args.in_dir)
    backend = "block_matching" if args.backend == "block" else args.backend
    if backend == "farneback":
        params = FlowParams(pyramid_levels=args.levels)
    else:
        params = CorrelationParams(k=args.k, d=args.d, subpixel=args.subpixel)
    flows = flow_sequence(seq, backend=backend, params=params, jobs=args.jobs)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, fl in enumerate(flows):
        fio.write_flow(fl, out / f"flow_{i:05d}.flo")
    print(out)
    return 0


def _cmd_label(args) -> int:
    flows = fio.load_flows(args.in_dir)
    kind = SequenceKind(args.kind)
    cfg = ThresholdConfig(T=default_threshold(kind, args.threshold),
                          min_component_area=args.min_area)
    # labeling needs only the flows; synthesize the frame count from them
    h, w = flows[0].height, flows[0].width
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    from .labeling import label_from_flow, FrameLabel
    from .core import Mask
    labels = [FrameLabel(frame_index=0, mask=Mask.zeros(h, w), bbox=None, stationary=True)]
    labels += [label_from_flow(fl, cfg, i + 1) for i, fl in enumerate(flows)]
    for lab in labels:
        fio.write_mask(lab.mask, out / f"mask_{lab.frame_index:05d}.png")
    (out / "labels.json").write_text(
        json.dumps({"threshold": cfg.T, "min_component_area": cfg.min_component_area,
                    "frames": labels_to_records(labels)}, indent=2) + "\n")
    print(out)
    return 0


def _cmd_infer(args) -> int:
    seq = fio.load_sequence(args.in_dir)
    backend = "block_matching" if args.backend == "block" else args.backend
    threshold = default_threshold(seq.kind, args.threshold)
    icfg = InferenceConfig(s_max=args.s_max, expansion_base=args.expansion_base,
                           validity_area=args.validity_area, T=threshold)
    seg = FlowThresholdSegmenter(backend=backend,
                                 cfg=ThresholdConfig(T=threshold,
                                                     min_component_area=args.min_area))
    flows = flow_sequence(seq, backend=backend, jobs=args.jobs)
    seg.prime(seq, flows)
    masks, traces = run_inference_traced(seq, seg, icfg, flows=flows,
                                         min_area=args.min_area)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(masks):
        if m is not None:
            fio.write_mask(m, out / f"pred_{i:05d}.png")
    trace_records = [
        {"index": t.frame_index, "s": t.s, "k": t.k,
         "seed_box": list(t.seed_box.as_tuple()),
         "final_box": list(t.final_box.as_tuple())}
        for t in traces
    ]
    (out / "inference_trace.json").write_text(json.dumps(trace_records, indent=2) + "\n")
    print(out)
    return 0


def _load_mask_dir(path: Path, prefix: str):
    found = {}
    for p in sorted(path.glob(f"{prefix}_*.png")):
        idx = int(p.stem.split("_")[-1])
        found[idx] = fio.read_mask(p)
    return found


def _cmd_eval(args) -> int:
    gt_dir = Path(args.gt_dir)
    pred_dir = Path(args.pred_dir)
    gts = _load_mask_dir(gt_dir, "gt")
    if not gts:
        raise FormatError(f"{gt_dir}: no gt_*.png masks found")
    preds_by_idx = _load_mask_dir(pred_dir, "pred")
    if not preds_by_idx:
        preds_by_idx = _load_mask_dir(pred_dir, "mask")
    n = max(gts) + 1
    gt_list = [gts[i] for i in range(n)]
    preds = [preds_by_idx.get(i) for i in range(n)]
    report = evaluate_run(preds, gt_list, policy=args.policy, method=args.method)
    write_report([report], args.out, include_reference=args.with_paper_refs)
    print(args.out)
    return 0


def _cmd_bench(args) -> int:
    cfg = SynthConfig(width=args.size, height=args.size, n_frames=args.frames,
                      entry_frame=min(10, args.frames - 2),
                      catheter_length=max(16.0, args.size / 8),
                      speed=max(1.0, args.size / 160))
    seq = generate(cfg)
    backend = "block_matching" if args.backend == "block" else args.backend
    start = time.perf_counter()
    flow_sequence(seq, backend=backend, jobs=args.jobs)
    elapsed = time.perf_counter() - start
    fps = (len(seq.frames) - 1) / elapsed
    print(f"{fps:.2f} frames/sec ({args.backend}, {args.size}x{args.size}, "
          f"{len(seq.frames)} frames, jobs={args.jobs}, {elapsed:.2f}s)")
    return 0


def _cmd_pipeline(args) -> int:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, synth=dataclasses.replace(cfg.synth, rng_seed=args.seed))
    out = Path(args.out) if args.out else _default_out(f"pipeline-{cfg.synth.rng_seed}")

    seq = generate(cfg.synth, jobs=args.jobs)
    threshold = default_threshold(seq.kind, cfg.threshold)
    tcfg = ThresholdConfig(T=threshold, min_component_area=cfg.min_component_area)
    icfg = dataclasses.replace(cfg.inference, T=threshold)

    out.mkdir(parents=True, exist_ok=True)
    fio.save_sequence(seq, out, threshold=threshold)

    flows = flow_sequence(seq, backend=cfg.backend, params=cfg.flow_backend_params(),
                          jobs=args.jobs)
    flow_dir = out / "flows"
    flow_dir.mkdir(exist_ok=True)
    for i, fl in enumerate(flows):
        fio.write_flow(fl, flow_dir / f"flow_{i:05d}.flo")

    labels = generate_labels(seq, flows, tcfg)
    label_dir = out / "labels"
    label_dir.mkdir(exist_ok=True)
    for lab in labels:
        fio.write_mask(lab.mask, label_dir / f"mask_{lab.frame_index:05d}.png")
    (label_dir / "labels.json").write_text(
        json.dumps({"threshold": threshold, "min_component_area": cfg.min_component_area,
                    "frames": labels_to_records(labels)}, indent=2) + "\n")

    seg = FlowThresholdSegmenter(backend=cfg.backend, params=cfg.flow_backend_params(),
                                 cfg=tcfg)
    seg.prime(seq, flows)
    preds, traces = run_inference_traced(seq, seg, icfg, flows=flows,
                                         min_area=cfg.min_component_area)
    pred_dir = out / "preds"
    pred_dir.mkdir(exist_ok=True)
    for i, m in enumerate(preds):
        if m is not None:
            fio.write_mask(m, pred_dir / f"pred_{i:05d}.png")
    trace_records = [
        {"index": t.frame_index, "s": t.s, "k": t.k,
         "seed_box": list(t.seed_box.as_tuple()),
         "final_box": list(t.final_box.as_tuple())}
        for t in traces
    ]
    (pred_dir / "inference_trace.json").write_text(json.dumps(trace_records, indent=2) + "\n")

    label_report = evaluate_run([lab.mask for lab in labels], seq.ground_truth,
                                policy=cfg.eval_policy, method="pseudo-labels")
    infer_report = evaluate_run(preds, seq.ground_truth,
                                policy=cfg.eval_policy, method="inference")
    report_path = out / "report.csv"
    write_report([label_report, infer_report], report_path,
                 include_reference=cfg.with_paper_refs)

    for p in (out / fio.MANIFEST_NAME, flow_dir, label_dir, pred_dir, report_path):
        print(p)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowseg",
                     description="Motion-based catheter pseudo-labeling pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic sequence")
    p.add_argument("--config", help="JSON file of generator settings")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--touching-wall", action="store_true",
                   help="stress variant: catheter rides along a wall at wall intensity")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("flow", help="estimate flow for a sequence directory")
    p.add_argument("--in-dir", required=True, help="sequence directory with manifest.json")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--backend", choices=["farneback", "block"], default="farneback")
    p.add_argument("--levels", type=int, default=3, help="pyramid levels (farneback)")
    p.add_argument("--k", type=int, default=2, help="patch radius (block)")
    p.add_argument("--d", type=int, default=3, help="search bound (block)")
    p.add_argument("--subpixel", action="store_true", help="parabolic refinement (block)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_flow)

    p = sub.add_parser("label", help="threshold flows into pseudo-label masks")
    p.add_argument("--in-dir", required=True, help="directory of .flo files")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--kind", choices=[k.value for k in SequenceKind], default="synthetic")
    p.add_argument("--threshold", type=float, default=None,
                   help="override the kind-specific default threshold")
    p.add_argument("--min-area", type=int, default=DEFAULT_MIN_COMPONENT_AREA)
    p.set_defaults(func=_cmd_label)

    p = sub.add_parser("infer", help="run the box-tracking inference loop")
    p.add_argument("--in-dir", required=True, help="sequence directory with manifest.json")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--segmenter", choices=["flow-threshold"], default="flow-threshold")
    p.add_argument("--backend", choices=["farneback", "block"], default="farneback")
    p.add_argument("--s-max", type=int, default=5)
    p.add_argument("--expansion-base", type=float, default=0.25)
    p.add_argument("--validity-area", type=int, default=200)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--min-area", type=int, default=DEFAULT_MIN_COMPONENT_AREA)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--policy", choices=list(POLICIES), default="all_frames")
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--method", default="run", help="method name for the report row")
    p.add_argument("--with-paper-refs", action="store_true",
                   help="append published reference rows for context")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="measure flow throughput")
    p.add_argument("--backend", choices=["farneback", "block"], default="farneback")
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("pipeline", help="synth -> flow -> label -> infer -> eval")
    p.add_argument("--config", help="RunConfig JSON; defaults cover every field")
    p.add_argument("--out", help=f"output directory (default ${ENV_OUT_ROOT}/...)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"flowseg: {exc}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as exc:
        print(f"flowseg: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
