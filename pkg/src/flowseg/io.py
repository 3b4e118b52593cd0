"""File I/O: PGM/PNG images, Middlebury .flo flow files, and run manifests.

Intensities are rescaled to [0, 1] on read by dividing by the format
maximum, so downstream code never sees raw bit depths. Round trips are
bit-exact for values representable at the written depth.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from PIL import Image

from .core import FlowField, FormatError, Frame, Mask, Sequence, SequenceKind

PathLike = Union[str, Path]

FLO_MAGIC = b"PIEH"


# ---------------------------------------------------------------------------
# PGM (P5, binary)
# ---------------------------------------------------------------------------

def _read_pgm(path: Path):
    """Parse a binary PGM into a raw integer array (uint8 or uint16) plus maxval."""
    raw = path.read_bytes()
    if raw[:2] == b"P6":
        raise FormatError(f"{path}: color PPM input is unsupported, expected grayscale P5")
    if raw[:2] != b"P5":
        raise FormatError(f"{path}: bad magic {raw[:2]!r} at byte offset 0, expected 'P5'")

    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(raw):
            raise FormatError(f"{path}: truncated header at byte offset {pos}")
        c = raw[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isdigit():
            start = pos
            while pos < len(raw) and raw[pos:pos + 1].isdigit():
                pos += 1
            fields.append(int(raw[start:pos]))
        else:
            raise FormatError(f"{path}: unexpected byte {c!r} at offset {pos} in header")
    # single whitespace byte separates header from payload
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise FormatError(f"{path}: missing whitespace after maxval at byte offset {pos}")
    pos += 1

    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: non-positive dimensions {width}x{height}")
    if not (0 < maxval < 65536):
        raise FormatError(f"{path}: maxval {maxval} out of range")

    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    if len(raw) - pos < need:
        raise FormatError(
            f"{path}: payload truncated at byte offset {len(raw)}, "
            f"expected {need} bytes from offset {pos}"
        )
    data = np.frombuffer(raw, dtype=dtype, count=width * height, offset=pos)
    arr = data.reshape(height, width).astype(np.uint16 if maxval > 255 else np.uint8)
    if arr.max(initial=0) > maxval:
        raise FormatError(f"{path}: sample exceeds declared maxval {maxval}")
    return arr, maxval


def _write_pgm(path: Path, arr: np.ndarray, maxval: int) -> None:
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode("ascii")
    if maxval > 255:
        payload = arr.astype(">u2").tobytes()
    else:
        payload = arr.astype(np.uint8).tobytes()
    path.write_bytes(header + payload)


# ---------------------------------------------------------------------------
# PNG (grayscale, via Pillow)
# ---------------------------------------------------------------------------

def _read_png(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        mode = img.mode
        if mode == "L":
            return np.asarray(img, dtype=np.uint8), 255
        if mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(img, dtype=np.uint32)
            if arr.max(initial=0) > 65535:
                raise FormatError(f"{path}: integer PNG exceeds 16-bit range")
            return arr.astype(np.uint16), 65535
        raise FormatError(f"{path}: unsupported PNG mode {mode!r}, expected grayscale")


def _write_png(path: Path, arr: np.ndarray, maxval: int) -> None:
    if maxval > 255:
        Image.fromarray(arr.astype(np.uint16), mode="I;16").save(path)
    else:
        Image.fromarray(arr.astype(np.uint8), mode="L").save(path)


# ---------------------------------------------------------------------------
# Frames and masks
# ---------------------------------------------------------------------------

def read_frame(path: PathLike) -> Frame:
    """Read an 8- or 16-bit grayscale PGM/PNG and rescale to [0, 1]."""
    path = Path(path)
    arr, maxval = _dispatch_read(path)
    return Frame(arr.astype(np.float64) / float(maxval))


def write_frame(frame: Frame, path: PathLike, bitdepth: int = 8) -> None:
    """Quantize a frame to the given bit depth and write PGM or PNG by extension."""
    if bitdepth not in (8, 16):
        raise ValueError(f"bitdepth must be 8 or 16, got {bitdepth}")
    path = Path(path)
    maxval = 255 if bitdepth == 8 else 65535
    arr = np.rint(frame.data * maxval).astype(np.uint16 if bitdepth == 16 else np.uint8)
    _dispatch_write(path, arr, maxval)


def read_mask(path: PathLike) -> Mask:
    """Read a mask image; any nonzero sample is foreground."""
    path = Path(path)
    arr, _ = _dispatch_read(path)
    return Mask((arr > 0).astype(np.uint8))


def write_mask(mask: Mask, path: PathLike) -> None:
    """Write a mask with foreground as 255 on black."""
    path = Path(path)
    _dispatch_write(path, mask.data * np.uint8(255), 255)


def _dispatch_read(path: Path):
    if not path.exists():
        raise FileNotFoundError(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        return _read_pgm(path)
    if suffix == ".png":
        return _read_png(path)
    raise FormatError(f"{path}: unsupported image extension {suffix!r} (use .pgm or .png)")


def _dispatch_write(path: Path, arr: np.ndarray, maxval: int):
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        _write_pgm(path, arr, maxval)
    elif suffix == ".png":
        _write_png(path, arr, maxval)
    else:
        raise FormatError(f"{path}: unsupported image extension {suffix!r} (use .pgm or .png)")


# ---------------------------------------------------------------------------
# Middlebury .flo
# ---------------------------------------------------------------------------

def write_flow(flow: FlowField, path: PathLike) -> None:
    """Write a flow field: 'PIEH' magic, little-endian int32 width/height,
    then row-major interleaved float32 (u, v) pairs."""
    path = Path(path)
    h, w = flow.u.shape
    interleaved = np.empty((h, w, 2), dtype="<f4")
    interleaved[:, :, 0] = flow.u
    interleaved[:, :, 1] = flow.v
    with open(path, "wb") as f:
        f.write(FLO_MAGIC)
        f.write(struct.pack("<ii", w, h))
        f.write(interleaved.tobytes())


def read_flow(path: PathLike) -> FlowField:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: only {len(raw)} bytes, shorter than the 12-byte header")
    if raw[:4] != FLO_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at byte offset 0, expected {FLO_MAGIC!r}")
    w, h = struct.unpack("<ii", raw[4:12])
    if w <= 0 or h <= 0:
        raise FormatError(f"{path}: invalid dimensions {w}x{h}")
    need = w * h * 2 * 4
    if len(raw) - 12 != need:
        raise FormatError(f"{path}: payload is {len(raw) - 12} bytes, expected {need}")
    data = np.frombuffer(raw, dtype="<f4", count=w * h * 2, offset=12).reshape(h, w, 2)
    return FlowField(u=data[:, :, 0], v=data[:, :, 1])


# ---------------------------------------------------------------------------
# Sequence directories and manifests
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"


def save_sequence(seq: Sequence, out_dir: PathLike, threshold: Optional[float] = None,
                  bitdepth: int = 8) -> Path:
    """Write frames (and ground truth, if any) plus a manifest into a directory.

    Frame files are named by zero-padded index so lexicographic order is
    temporal order. Returns the manifest path.
    """
    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    frame_paths = []
    for i, frame in enumerate(seq.frames):
        rel = f"frames/frame_{i:05d}.pgm"
        write_frame(frame, out_dir / rel, bitdepth=bitdepth)
        frame_paths.append(rel)

    gt_paths = None
    if seq.ground_truth is not None:
        (out_dir / "gt").mkdir(exist_ok=True)
        gt_paths = []
        for i, mask in enumerate(seq.ground_truth):
            rel = f"gt/gt_{i:05d}.png"
            write_mask(mask, out_dir / rel)
            gt_paths.append(rel)

    manifest = {
        "name": seq.name,
        "kind": seq.kind.value,
        "width": seq.width,
        "height": seq.height,
        "n_frames": len(seq.frames),
        "threshold": threshold,
        "frames": frame_paths,
        "ground_truth": gt_paths,
    }
    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def load_sequence(seq_dir: PathLike) -> Sequence:
    """Load a sequence directory written by save_sequence."""
    seq_dir = Path(seq_dir)
    manifest_path = seq_dir / MANIFEST_NAME
    if not manifest_path.exists():
        raise FormatError(f"{seq_dir}: missing {MANIFEST_NAME}")
    manifest = json.loads(manifest_path.read_text())
    frames = [read_frame(seq_dir / rel) for rel in manifest["frames"]]
    gt = None
    if manifest.get("ground_truth"):
        gt = [read_mask(seq_dir / rel) for rel in manifest["ground_truth"]]
    return Sequence(
        frames=frames,
        kind=SequenceKind(manifest["kind"]),
        name=manifest["name"],
        ground_truth=gt,
    )


def load_flows(flow_dir: PathLike) -> List[FlowField]:
    """Load all .flo files in a directory in lexicographic (temporal) order."""
    flow_dir = Path(flow_dir)
    paths = sorted(flow_dir.glob("*.flo"))
    if not paths:
        raise FormatError(f"{flow_dir}: no .flo files found")
    return [read_flow(p) for p in paths]
