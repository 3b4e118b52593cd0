"""Dense flow by local polynomial expansion, coarse-to-fine.

Each frame is approximated pixel-wise by a quadratic model over a
Gaussian-weighted neighborhood,

    f(p + o) ~ o^T A o + b^T o + c,

fitted by least squares against the basis {1, x, y, x^2, y^2, xy}. For a
pure translation of the image content by a displacement vector the
quadratic coefficients are unchanged while the linear ones shift, which
ties the two frames' expansions together:

    A2 = A1,  b2 = b1 - 2 A1 d   =>   A d = -(b2 - b1) / 2.

Per-pixel equations are too noisy on their own, so the normal-equation
terms A^T A and A^T db are averaged over a Gaussian window before
solving a 2x2 system per pixel. The estimate is refined iteratively by
warping the second frame's coefficients with the current flow, and is
propagated coarse-to-fine through an image pyramid so displacements
larger than the neighborhood radius remain recoverable.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np
from scipy import ndimage

from .core import ConfigError, FlowField, Frame
from .flow import FlowParams

# Determinant floor when solving the per-pixel 2x2 systems. Typical
# determinants on [0, 1]-range imagery sit around 1e-10..1e-8, so the
# floor must stay far below that or it visibly damps the estimate;
# exactly flat regions have a zero right-hand side and still yield zero.
_DET_EPS = 1e-15


def _gaussian(radius: int, sigma: float) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def poly_expand(img: np.ndarray, n: int, sigma: float) -> np.ndarray:
    """Quadratic expansion coefficients of every pixel neighborhood.

    Returns a (5, H, W) stack: bx, by, axx, ayy, axy. The constant term
    is dropped since displacement estimation never uses it.
    """
    o = np.arange(-n, n + 1, dtype=np.float64)
    g = np.exp(-(o * o) / (2.0 * sigma * sigma))

    # separable projections of the image onto the weighted basis
    kernels_1d = {"g": g, "og": o * g, "oog": o * o * g}

    def proj(ky: str, kx: str) -> np.ndarray:
        tmp = ndimage.correlate1d(img, kernels_1d[ky], axis=0, mode="reflect")
        return ndimage.correlate1d(tmp, kernels_1d[kx], axis=1, mode="reflect")

    v = np.stack([
        proj("g", "g"),      # 1
        proj("g", "og"),     # x
        proj("og", "g"),     # y
        proj("g", "oog"),    # x^2
        proj("oog", "g"),    # y^2
        proj("og", "og"),    # xy
    ])

    # normal matrix of the weighted basis; identical at every pixel
    wy, wx = np.meshgrid(g, g, indexing="ij")
    w2 = wy * wx
    ox = np.broadcast_to(o[np.newaxis, :], w2.shape)
    oy = np.broadcast_to(o[:, np.newaxis], w2.shape)
    basis = np.stack([np.ones_like(w2), ox, oy, ox * ox, oy * oy, ox * oy])
    gram = np.einsum("ihw,jhw,hw->ij", basis, basis, w2)
    inv = np.linalg.inv(gram)

    coeffs = np.einsum("ij,jhw->ihw", inv, v)
    return coeffs[1:]  # bx, by, axx, ayy, axy


def _resize_bilinear(arr: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    h, w = arr.shape
    if (h, w) == (new_h, new_w):
        return arr
    ys = (np.arange(new_h) + 0.5) * (h / new_h) - 0.5
    xs = (np.arange(new_w) + 0.5) * (w / new_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.clip(np.floor(ys).astype(np.intp), 0, h - 2) if h > 1 else np.zeros(new_h, np.intp)
    x0 = np.clip(np.floor(xs).astype(np.intp), 0, w - 2) if w > 1 else np.zeros(new_w, np.intp)
    fy = (ys - y0)[:, np.newaxis]
    fx = (xs - x0)[np.newaxis, :]
    a = arr[np.ix_(y0, x0)]
    b = arr[np.ix_(y0, np.minimum(x0 + 1, w - 1))]
    c = arr[np.ix_(np.minimum(y0 + 1, h - 1), x0)]
    d = arr[np.ix_(np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1))]
    return (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx
            + c * fy * (1 - fx) + d * fy * fx)


def _downscale(img: np.ndarray, new_h: int, new_w: int, scale: float) -> np.ndarray:
    if scale >= 1.0:
        return img
    # anti-alias before decimating; smoothing width grows with shrink factor
    sigma = (1.0 / scale - 1.0) * 0.5
    smoothed = ndimage.gaussian_filter(img, sigma, mode="reflect") if sigma > 0 else img
    return _resize_bilinear(smoothed, new_h, new_w)


def _sample_coeffs(coeffs: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear sample of each coefficient channel at float coordinates.

    Coordinates are clamped to the image, which effectively extends
    border coefficients outward.
    """
    _, h, w = coeffs.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.clip(np.floor(xs).astype(np.intp), 0, w - 2)
    y0 = np.clip(np.floor(ys).astype(np.intp), 0, h - 2)
    fx = xs - x0
    fy = ys - y0
    w00 = (1 - fy) * (1 - fx)
    w01 = (1 - fy) * fx
    w10 = fy * (1 - fx)
    w11 = fy * fx
    return (coeffs[:, y0, x0] * w00 + coeffs[:, y0, x0 + 1] * w01
            + coeffs[:, y0 + 1, x0] * w10 + coeffs[:, y0 + 1, x0 + 1] * w11)


def _refine_level(p1: np.ndarray, p2: np.ndarray, u: np.ndarray, v: np.ndarray,
                  params: FlowParams) -> Tuple[np.ndarray, np.ndarray]:
    h, w = u.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    aw = params.averaging_window
    blur = _gaussian(aw, max(aw / 2.0, 1.0))

    bx1, by1, axx1, ayy1, axy1 = p1
    for _ in range(params.iterations_per_level):
        bx2, by2, axx2, ayy2, axy2 = _sample_coeffs(p2, xs + u, ys + v)

        a11 = 0.5 * (axx1 + axx2)
        a22 = 0.5 * (ayy1 + ayy2)
        a12 = 0.25 * (axy1 + axy2)  # off-diagonal of the quadratic form is axy/2

        db1 = -0.5 * (bx2 - bx1) + a11 * u + a12 * v
        db2 = -0.5 * (by2 - by1) + a12 * u + a22 * v

        # normal-equation terms, then Gaussian averaging over the window
        terms = np.stack([
            a11 * a11 + a12 * a12,
            a12 * (a11 + a22),
            a12 * a12 + a22 * a22,
            a11 * db1 + a12 * db2,
            a12 * db1 + a22 * db2,
        ])
        terms = ndimage.correlate1d(terms, blur, axis=1, mode="reflect")
        terms = ndimage.correlate1d(terms, blur, axis=2, mode="reflect")
        g11, g12, g22, h1, h2 = terms

        det = g11 * g22 - g12 * g12
        inv_det = 1.0 / (det + _DET_EPS)
        u = (g22 * h1 - g12 * h2) * inv_det
        v = (g11 * h2 - g12 * h1) * inv_det
    return u, v


def farneback_flow(prev: Frame, next: Frame, params: FlowParams = None) -> FlowField:
    """Dense flow from prev to next via polynomial expansion.

    Deterministic for fixed inputs and parameters. Raises ConfigError if
    the pyramid shrinks either dimension below the expansion neighborhood.
    """
    if params is None:
        params = FlowParams()
    if (prev.width, prev.height) != (next.width, next.height):
        raise ValueError(
            f"frame dimensions differ: {prev.width}x{prev.height} "
            f"vs {next.width}x{next.height}"
        )
    n = params.poly_neighborhood
    h0, w0 = prev.height, prev.width

    sizes = []
    for lvl in range(params.pyramid_levels):
        s = params.pyramid_scale ** lvl
        sizes.append((max(int(round(h0 * s)), 1), max(int(round(w0 * s)), 1)))
    if min(sizes[-1]) < 2 * n + 1:
        raise ConfigError(
            f"pyramid level {params.pyramid_levels - 1} is {sizes[-1][1]}x{sizes[-1][0]}, "
            f"smaller than the {2 * n + 1}-pixel expansion neighborhood; "
            f"use fewer pyramid levels"
        )

    u = v = None
    prev_size = None
    for lvl in reversed(range(params.pyramid_levels)):
        h, w = sizes[lvl]
        scale = params.pyramid_scale ** lvl
        i1 = _downscale(prev.data, h, w, scale)
        i2 = _downscale(next.data, h, w, scale)
        p1 = poly_expand(i1, n, params.poly_sigma)
        p2 = poly_expand(i2, n, params.poly_sigma)

        if u is None:
            u = np.zeros((h, w))
            v = np.zeros((h, w))
        else:
            ph, pw = prev_size
            u = _resize_bilinear(u, h, w) * (w / pw)
            v = _resize_bilinear(v, h, w) * (h / ph)

        u, v = _refine_level(p1, p2, u, v, params)
        prev_size = (h, w)

    return FlowField(u=u, v=v)
