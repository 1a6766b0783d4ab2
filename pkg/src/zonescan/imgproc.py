"""Slice-level image kernels.

Images are 2-D float arrays indexed ``[v, u]`` (row = y, column = x); masks
are ``uint8`` arrays of 0/1 with the same layout. Every kernel that looks
outside the image replicates the edge pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage
from skimage.filters import threshold_otsu

from .errors import ContainmentError, ParameterError, ShapeError


@dataclass(frozen=True)
class ComponentStats:
    label: int
    area: int
    bbox: tuple[int, int, int, int]  # u_min, v_min, u_max, v_max (inclusive)
    centroid: tuple[float, float]  # (u, v)


@dataclass(frozen=True)
class LabeledMask:
    labels: np.ndarray
    count: int
    stats: tuple[ComponentStats, ...]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]


def _as_image(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ShapeError(f"expected a non-empty 2-D image, got shape {a.shape}")
    return a


def _as_mask(mask) -> np.ndarray:
    a = np.asarray(mask)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D mask, got shape {a.shape}")
    return (a != 0).astype(np.uint8)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian of radius ``ceil(3 sigma)``."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    r = int(math.ceil(3 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _convolve_axis(a: np.ndarray, g: np.ndarray, axis: int) -> np.ndarray:
    r = len(g) // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r, r)
    p = np.pad(a, pad, mode="edge")
    n = a.shape[axis]
    out = np.zeros_like(a)
    for i, w in enumerate(g):
        out += w * np.take(p, np.arange(i, i + n), axis=axis)
    return out


def gaussian_smooth(img, sigma: float) -> np.ndarray:
    g = gaussian_kernel(sigma)
    a = _as_image(img)
    return _convolve_axis(_convolve_axis(a, g, 1), g, 0)


def threshold_global(img, T: float) -> np.ndarray:
    """``1`` where ``I >= T``, else ``0``."""
    return (_as_image(img) >= T).astype(np.uint8)


def local_mean_std(img, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population standard deviation over a ``window x window`` neighbourhood."""
    a = _as_image(img)
    r = window // 2
    p = np.pad(a, r, mode="edge")
    # summed-area tables with a zero row/column in front
    s1 = np.zeros((p.shape[0] + 1, p.shape[1] + 1))
    s2 = np.zeros_like(s1)
    s1[1:, 1:] = p.cumsum(0).cumsum(1)
    s2[1:, 1:] = (p * p).cumsum(0).cumsum(1)
    h, w = a.shape

    def box(s):
        return s[window : window + h, window : window + w] - s[:h, window : window + w] - s[window : window + h, :w] + s[:h, :w]

    n = float(window * window)
    mean = box(s1) / n
    var = np.maximum(box(s2) / n - mean**2, 0.0)
    return mean, np.sqrt(var)


def sauvola_threshold_map(img, window: int = 15, k: float = 0.2, R: float | None = None) -> np.ndarray:
    """Per-pixel threshold ``m * (1 + k * (s / R - 1))``.

    ``R`` defaults to half the image's intensity range.
    """
    if window < 3 or window % 2 == 0:
        raise ParameterError(f"window must be odd and >= 3, got {window}")
    a = _as_image(img)
    if R is None:
        R = (float(a.max()) - float(a.min())) / 2.0 or 1.0
    if not R > 0:
        raise ParameterError(f"R must be positive, got {R}")
    m, s = local_mean_std(a, window)
    return m * (1.0 + k * (s / R - 1.0))


def threshold_sauvola(img, window: int = 15, k: float = 0.2, R: float | None = None) -> np.ndarray:
    """Sauvola binarization; a pixel is foreground iff ``I >= T(u, v)`` and ``I > 0``."""
    a = _as_image(img)
    T = sauvola_threshold_map(a, window, k, R)
    return ((a >= T) & (a > 0)).astype(np.uint8)


def dilate(mask, radius: int = 1) -> np.ndarray:
    """Binary dilation with a ``(2r+1)`` square."""
    if radius < 1:
        raise ParameterError(f"radius must be >= 1, got {radius}")
    m = _as_mask(mask)
    side = 2 * radius + 1
    p = np.pad(m, radius, mode="edge")
    rows = sliding_window_view(p, side, axis=1).max(axis=-1)
    return sliding_window_view(rows, side, axis=0).max(axis=-1).astype(np.uint8)


def _dilate_cross(m: np.ndarray) -> np.ndarray:
    out = m.copy()
    out[1:] |= m[:-1]
    out[:-1] |= m[1:]
    out[:, 1:] |= m[:, :-1]
    out[:, :-1] |= m[:, 1:]
    return out


def reconstruct_by_dilation(seed, mask, connectivity: int = 8) -> np.ndarray:
    """Grow ``seed`` by unit dilations clipped to ``mask`` until nothing changes.

    The unit step is the 3x3 square for 8-connectivity and the plus-shaped
    cross for 4-connectivity.
    """
    s, m = _as_mask(seed), _as_mask(mask)
    if s.shape != m.shape:
        raise ShapeError(f"seed {s.shape} and mask {m.shape} differ in shape")
    if (s & (1 - m)).any():
        raise ContainmentError("seed has pixels outside the mask")
    if connectivity not in (4, 8):
        raise ParameterError(f"connectivity must be 4 or 8, got {connectivity}")
    step = _dilate_cross if connectivity == 4 else dilate
    r = s
    while True:
        nxt = step(r) & m
        if np.array_equal(nxt, r):
            return r
        r = nxt


_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def connected_components(mask, connectivity: int = 8) -> LabeledMask:
    """Label components; labels 1..n follow the raster order of each component's first pixel."""
    if connectivity not in _STRUCTURES:
        raise ParameterError(f"connectivity must be 4 or 8, got {connectivity}")
    m = _as_mask(mask)
    raw, n = ndimage.label(m, structure=_STRUCTURES[connectivity])
    flat = raw.ravel()
    # first raster index per raw label, then rank them
    firsts = np.full(n + 1, flat.size, dtype=np.int64)
    np.minimum.at(firsts, flat, np.arange(flat.size))
    order = np.argsort(firsts[1:], kind="stable") + 1
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[order] = np.arange(1, n + 1)
    labels = remap[raw]
    stats = []
    if n:
        vv, uu = np.nonzero(labels)
        ll = labels[vv, uu]
        area = np.bincount(ll, minlength=n + 1)
        su = np.bincount(ll, weights=uu, minlength=n + 1)
        sv = np.bincount(ll, weights=vv, minlength=n + 1)
        for sl, lab in zip(ndimage.find_objects(labels), range(1, n + 1)):
            vs, us = sl
            stats.append(
                ComponentStats(
                    label=lab,
                    area=int(area[lab]),
                    bbox=(us.start, vs.start, us.stop - 1, vs.stop - 1),
                    centroid=(su[lab] / area[lab], sv[lab] / area[lab]),
                )
            )
    return LabeledMask(labels=labels, count=int(n), stats=tuple(stats))


def remove_small_components(mask, min_area: int = 20, connectivity: int = 8) -> np.ndarray:
    """Keep components of at least ``min_area`` pixels, seeding a reconstruction from them."""
    m = _as_mask(mask)
    lm = connected_components(m, connectivity)
    keep = np.zeros(lm.count + 1, dtype=bool)
    for st in lm.stats:
        keep[st.label] = st.area >= min_area
    seed = keep[lm.labels].astype(np.uint8)
    return reconstruct_by_dilation(seed, m, connectivity)


def mask_multiply(raw, mask) -> np.ndarray:
    r = _as_image(raw)
    m = _as_mask(mask)
    if r.shape != m.shape:
        raise ShapeError(f"raw {r.shape} and mask {m.shape} differ in shape")
    return np.where(m == 1, r, 0.0)


# --- slice and volume pipelines ----------------------------------------------


@dataclass(frozen=True)
class SegmentParams:
    sigma: float = 1.0
    window: int = 15
    k: float = 0.2
    R: float | None = None
    floor: float | None = None
    dilation_radius: int = 1
    min_area: int = 20
    connectivity: int = 8


def _binarize_smoothed(sm: np.ndarray, params: SegmentParams, R, floor) -> np.ndarray:
    fg = threshold_sauvola(sm, params.window, params.k, R)
    if floor is not None:
        fg &= threshold_global(sm, floor)
    if not fg.any():
        return fg
    fg = dilate(fg, params.dilation_radius)
    return remove_small_components(fg, params.min_area, params.connectivity)


def binarize_slice(img, params: SegmentParams = SegmentParams(), R: float | None = None, floor: float | None = None) -> np.ndarray:
    """Smooth, threshold, dilate and drop small components for one slice.

    ``floor`` is a global threshold applied together with the local one; it
    keeps the noise-only background from passing the local test.
    """
    R = params.R if params.R is not None else R
    floor = params.floor if params.floor is not None else floor
    return _binarize_smoothed(gaussian_smooth(img, params.sigma), params, R, floor)


def binarize_volume(voxels: np.ndarray, params: SegmentParams = SegmentParams()) -> np.ndarray:
    """Binary foreground for every z slice of a ``(nz, ny, nx)`` volume.

    The local-threshold dynamic range ``R`` and the global floor are fixed per
    volume (half the intensity range and Otsu's threshold of the smoothed
    volume, unless given) so that slices are treated alike.
    """
    voxels = np.asarray(voxels)
    smoothed = np.stack([gaussian_smooth(s, params.sigma) for s in voxels])
    lo, hi = float(voxels.min()), float(voxels.max())
    R = params.R if params.R is not None else ((hi - lo) / 2.0 or 1.0)
    floor = params.floor if params.floor is not None else (float(threshold_otsu(smoothed)) if hi > lo else None)
    out = np.zeros(voxels.shape, dtype=np.uint8)
    for z, sm in enumerate(smoothed):
        out[z] = _binarize_smoothed(sm, params, R, floor)
    return out


def to_png_gray(img) -> np.ndarray:
    """Min-max scale to 8-bit; constant images become all zeros."""
    a = _as_image(img)
    lo, hi = a.min(), a.max()
    if hi <= lo:
        return np.zeros(a.shape, dtype=np.uint8)
    return np.rint((a - lo) * (255.0 / (hi - lo))).astype(np.uint8)


def save_debug_png(img, path) -> None:
    from PIL import Image

    Image.fromarray(to_png_gray(img)).save(path)
