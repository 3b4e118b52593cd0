"""Procedural generator of vessel-like test sequences with ground truth.

Scenes mimic an idealized longitudinal ultrasound rendering: black
tissue, two bright vessel-wall bands following a gently curved
centerline, and a bright capsule-shaped catheter advancing along the
vessel at constant speed. Multiplicative speckle-like noise can be
layered on top. Ground-truth masks are the exact pre-noise catheter
footprints.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence as Seq, Tuple

import numpy as np
from scipy import ndimage

from .core import ConfigError, FlowField, Frame, Mask, Sequence, SequenceKind


@dataclass(frozen=True)
class SynthConfig:
    width: int = 256
    height: int = 256
    n_frames: int = 100
    wall_intensity: float = 0.7
    wall_thickness: float = 3.0
    catheter_intensity: float = 1.0
    catheter_length: float = 60.0
    catheter_thickness: float = 7.0
    speed: float = 2.0
    # the mimicked rendering domain is speckle-free by construction;
    # nonzero values are stress configurations
    speckle_sigma: float = 0.0
    entry_frame: int = 10
    path: Optional[Tuple[Tuple[float, float], ...]] = None
    rng_seed: int = 0
    lumen_radius: float = 16.0
    path_offset: float = 0.0
    # faint static background texture; anchors flow estimators in
    # otherwise featureless regions while keeping tissue near-black
    tissue_texture: float = 0.06
    # intensity modulation riding along with the catheter, like the
    # speckle pattern a real instrument carries; 0 gives a flat capsule
    catheter_texture: float = 0.35

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ConfigError("image must be at least 8x8")
        if self.n_frames < 2:
            raise ConfigError("need at least 2 frames")
        for name in ("wall_intensity", "catheter_intensity"):
            val = getattr(self, name)
            if not (0.0 <= val <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1], got {val}")
        if self.speed <= 0:
            raise ConfigError("speed must be positive")
        if not (0 <= self.entry_frame < self.n_frames):
            raise ConfigError("entry_frame must lie in [0, n_frames)")
        if self.speckle_sigma < 0:
            raise ConfigError("speckle_sigma must be >= 0")
        if not (0.0 <= self.tissue_texture <= 0.2):
            raise ConfigError("tissue_texture must lie in [0, 0.2]")
        if not (0.0 <= self.catheter_texture < 1.0):
            raise ConfigError("catheter_texture must lie in [0, 1)")
        if self.catheter_thickness / 2.0 + abs(self.path_offset) > self.lumen_radius:
            raise ConfigError("catheter does not fit inside the vessel lumen")
        if self.path is not None:
            pts = tuple((float(x), float(y)) for x, y in self.path)
            if len(pts) < 2:
                raise ConfigError("path needs at least 2 control points")
            object.__setattr__(self, "path", pts)


def touching_wall_config(**overrides) -> SynthConfig:
    """Stress configuration: the catheter rides against a wall at the same
    intensity, making the two hard to tell apart."""
    cfg = SynthConfig(**overrides)
    offset = cfg.lumen_radius - cfg.wall_thickness / 2.0 - cfg.catheter_thickness / 2.0
    return replace(cfg, path_offset=offset, catheter_intensity=cfg.wall_intensity)


# ---------------------------------------------------------------------------
# polyline helpers
# ---------------------------------------------------------------------------

def _default_path(width: int, height: int) -> np.ndarray:
    margin = max(12.0, 0.05 * width)
    xs = np.linspace(margin, width - margin, 25)
    amp = 0.14 * height
    phase = 2.0 * np.pi * 1.2 * (xs - margin) / (width - 2 * margin)
    ys = height / 2.0 + amp * np.sin(phase)
    return np.stack([xs, ys], axis=1)


def _arclengths(pts: np.ndarray) -> np.ndarray:
    deltas = np.diff(pts, axis=0)
    return np.concatenate([[0.0], np.cumsum(np.hypot(deltas[:, 0], deltas[:, 1]))])


def _sample_path(pts: np.ndarray, cum: np.ndarray, s0: float, s1: float,
                 step: float = 0.5) -> np.ndarray:
    """Points along the polyline between arc positions s0 and s1."""
    n = max(int(np.ceil((s1 - s0) / step)) + 1, 2)
    ss = np.linspace(s0, s1, n)
    xs = np.interp(ss, cum, pts[:, 0])
    ys = np.interp(ss, cum, pts[:, 1])
    return np.stack([xs, ys], axis=1)


def _offset_path(pts: np.ndarray, offset: float) -> np.ndarray:
    """Shift a polyline along its per-point normals."""
    if offset == 0.0:
        return pts
    tangents = np.gradient(pts, axis=0)
    norms = np.hypot(tangents[:, 0], tangents[:, 1])
    norms[norms == 0] = 1.0
    normals = np.stack([-tangents[:, 1] / norms, tangents[:, 0] / norms], axis=1)
    return pts + offset * normals


def _polyline_coords(points: np.ndarray, polyline: np.ndarray):
    """Distance to the polyline and arc position of the closest point."""
    a = polyline[:-1][np.newaxis]          # (1, S, 2)
    seg = (polyline[1:] - polyline[:-1])[np.newaxis]
    ap = points[:, np.newaxis] - a         # (M, S, 2)
    seg_len2 = np.maximum((seg * seg).sum(-1), 1e-12)
    t = np.clip((ap * seg).sum(-1) / seg_len2, 0.0, 1.0)
    closest = a + t[..., np.newaxis] * seg
    diff = points[:, np.newaxis] - closest
    d2 = (diff * diff).sum(-1)
    best = d2.argmin(axis=1)
    rows = np.arange(len(points))
    seg_cum = np.concatenate([[0.0], np.cumsum(np.sqrt(seg_len2[0]))])
    arc = seg_cum[best] + t[rows, best] * np.sqrt(seg_len2[0][best])
    return np.sqrt(d2[rows, best]), arc


def _min_distance(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """Distance from each query point to the nearest polyline segment."""
    return _polyline_coords(points, polyline)[0]


def _capsule_patch(height: int, width: int, polyline: np.ndarray, radius: float):
    """Footprint of pixels within radius of the polyline, plus their
    (distance, arc-position) coordinates, restricted to a bounding patch.

    Returns (mask, window slices, dist, arc) with dist/arc shaped like
    the window.
    """
    pad = radius + 1.5
    x0 = max(int(np.floor(polyline[:, 0].min() - pad)), 0)
    x1 = min(int(np.ceil(polyline[:, 0].max() + pad)) + 1, width)
    y0 = max(int(np.floor(polyline[:, 1].min() - pad)), 0)
    y1 = min(int(np.ceil(polyline[:, 1].max() + pad)) + 1, height)
    mask = np.zeros((height, width), dtype=np.uint8)
    if x0 >= x1 or y0 >= y1:
        return mask, (slice(0, 0), slice(0, 0)), np.zeros((0, 0)), np.zeros((0, 0))
    ys, xs = np.mgrid[y0:y1, x0:x1]
    pix = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    dist, arc = _polyline_coords(pix, polyline)
    dist = dist.reshape(ys.shape)
    arc = arc.reshape(ys.shape)
    window = (slice(y0, y1), slice(x0, x1))
    mask[window] = dist <= radius
    return mask, window, dist, arc


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _RenderContext:
    cfg: SynthConfig
    base: np.ndarray
    cath_line: np.ndarray
    cum: np.ndarray
    radius: float


_WORKER_CTX: Optional[_RenderContext] = None


def _init_render_worker(ctx: _RenderContext) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _render_frame(ctx: _RenderContext, t: int):
    """Scene and ground-truth footprint of frame t; pure in (ctx, t)."""
    cfg = ctx.cfg
    scene = ctx.base.copy()
    if t < cfg.entry_frame:
        footprint = np.zeros((cfg.height, cfg.width), dtype=np.uint8)
    else:
        tip = cfg.catheter_length + cfg.speed * (t - cfg.entry_frame)
        segment = _sample_path(ctx.cath_line, ctx.cum, tip - cfg.catheter_length, tip)
        footprint, window, dist, arc = _capsule_patch(cfg.height, cfg.width,
                                                      segment, ctx.radius)
        inside = footprint[window].astype(bool)
        # pattern coordinates anchored to the tip so the texture travels
        # rigidly with the instrument
        local = arc - cfg.catheter_length  # 0 at the tail sample, L at the tip
        layer = cfg.catheter_intensity * (
            1.0 - cfg.catheter_texture * _catheter_pattern(local, dist))
        scene_win = scene[window]
        scene_win[inside] = np.clip(scene_win + layer, 0.0, 1.0)[inside]
        scene[window] = scene_win
    if cfg.speckle_sigma > 0:
        rng = np.random.default_rng([cfg.rng_seed, t])
        scene = scene * (1.0 + cfg.speckle_sigma * rng.standard_normal(scene.shape))
        scene = np.clip(scene, 0.0, 1.0)
    return scene, footprint


def _render_frame_worker(t: int):
    return _render_frame(_WORKER_CTX, t)


def generate(cfg: SynthConfig, jobs: int = 1) -> Sequence:
    """Render a sequence per the config, with ground truth populated.

    Deterministic for a fixed rng_seed; per-frame noise streams are
    derived independently, so frames render in any order (and with
    jobs > 1, in worker processes) with identical results.
    """
    path = np.asarray(cfg.path, dtype=np.float64) if cfg.path is not None \
        else _default_path(cfg.width, cfg.height)
    cath_line = _offset_path(path, cfg.path_offset)
    cum = _arclengths(cath_line)
    total = cum[-1]

    travel = cfg.catheter_length + cfg.speed * (cfg.n_frames - 1 - cfg.entry_frame)
    if travel > total:
        raise ConfigError(
            f"catheter path exits the image: needs {travel:.1f}px of arc, "
            f"path has {total:.1f}px"
        )
    r = cfg.catheter_thickness / 2.0
    swept = _sample_path(cath_line, cum, 0.0, travel)
    if (swept[:, 0].min() < r or swept[:, 0].max() > cfg.width - 1 - r
            or swept[:, 1].min() < r or swept[:, 1].max() > cfg.height - 1 - r):
        raise ConfigError("catheter path exits the image")

    ctx = _RenderContext(cfg=cfg, base=_render_base(cfg, path),
                         cath_line=cath_line, cum=cum, radius=r)
    if jobs <= 1 or cfg.n_frames <= 2:
        rendered = [_render_frame(ctx, t) for t in range(cfg.n_frames)]
    else:
        chunk = max(1, cfg.n_frames // (jobs * 4))
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_render_worker,
                                 initargs=(ctx,)) as pool:
            rendered = list(pool.map(_render_frame_worker, range(cfg.n_frames),
                                     chunksize=chunk))

    frames = [Frame(scene) for scene, _ in rendered]
    gt = [Mask(fp) for _, fp in rendered]
    return Sequence(frames=frames, kind=SequenceKind.SYNTHETIC,
                    name=f"synthetic-{cfg.rng_seed}", ground_truth=gt)


def _catheter_pattern(along: np.ndarray, across: np.ndarray) -> np.ndarray:
    """Fixed pseudo-random modulation in [0, 1] in catheter coordinates."""
    return (0.5
            + 0.3 * np.sin(2.0 * np.pi * along / 5.3 + 1.7 * across)
            + 0.2 * np.sin(2.0 * np.pi * along / 11.9 + 0.8))


def _render_base(cfg: SynthConfig, path: np.ndarray) -> np.ndarray:
    """Static scene: near-black textured tissue plus two bright wall bands."""
    # extend the centerline beyond the image so the vessel runs off-screen
    # instead of ending in a rounded cap
    lead = path[0] + (path[0] - path[1]) * 50.0
    tail = path[-1] + (path[-1] - path[-2]) * 50.0
    extended = np.vstack([lead, path, tail])
    ys, xs = np.mgrid[0:cfg.height, 0:cfg.width]
    pix = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    dist = _min_distance(pix, extended).reshape(cfg.height, cfg.width)
    wall = np.abs(dist - cfg.lumen_radius) <= cfg.wall_thickness / 2.0
    base = cfg.wall_intensity * wall
    if cfg.tissue_texture > 0:
        rng = np.random.default_rng([cfg.rng_seed, 0x7e577e5])
        tex = ndimage.gaussian_filter(rng.standard_normal(base.shape), 1.5, mode="reflect")
        tex = (tex - tex.min()) / (tex.max() - tex.min()) * cfg.tissue_texture
        base = np.clip(base + tex, 0.0, 1.0)
    return base


# ---------------------------------------------------------------------------
# shift-pair oracle
# ---------------------------------------------------------------------------

def smooth_texture(seed: int, height: int, width: int, blur: float = 1.5) -> np.ndarray:
    """Band-limited random texture in [0.1, 0.9], useful as flow-oracle input."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((height, width))
    tex = ndimage.gaussian_filter(noise, blur, mode="reflect")
    lo, hi = tex.min(), tex.max()
    return (tex - lo) / (hi - lo) * 0.8 + 0.1


def speckle_texture(seed: int, height: int, width: int, coverage: float = 0.35,
                    blur: float = 1.0) -> np.ndarray:
    """Bright random blobs on a dark background, like speckle on black tissue.

    Raw patch correlation needs this kind of high-contrast, low-mean
    texture: on mid-gray imagery the DC component dominates the product
    sum and the match signal drowns.
    """
    rng = np.random.default_rng(seed)
    noise = ndimage.gaussian_filter(rng.standard_normal((height, width)), 1.2, mode="reflect")
    thresh = np.quantile(noise, 1.0 - coverage)
    dots = np.where(noise > thresh, noise - thresh, 0.0)
    dots = ndimage.gaussian_filter(dots, blur, mode="reflect")
    return np.clip(dots / dots.max() * 0.9, 0.0, 1.0)


def constant_shift_pair(texture_seed: int, width: int, height: int,
                        dx: float, dy: float):
    """A texture, the same texture shifted by (dx, dy), and the exact flow.

    The second frame samples the first at (x - dx, y - dy) with bilinear
    interpolation and reflected boundaries, so the true flow is the
    constant field (dx, dy).
    """
    limit = min(width, height) / 4.0
    if abs(dx) >= limit or abs(dy) >= limit:
        raise ValueError(f"shift ({dx}, {dy}) too large for a {width}x{height} image")
    tex = smooth_texture(texture_seed, height, width)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    shifted = ndimage.map_coordinates(tex, [ys - dy, xs - dx], order=1, mode="reflect")
    gt = FlowField(u=np.full((height, width), float(dx)),
                   v=np.full((height, width), float(dy)))
    return Frame(tex), Frame(shifted), gt
