"""Pixel-space primitives: grayscale, SSIM maps, block-matching flow, augmentations.

Frames are float arrays of shape (H, W, 3) with values in [0, 1]; scalar
fields are (H, W). Everything here is a pure function, safe to run
concurrently across frames.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from math import ceil, exp, log

import numpy as np

LUMA_R, LUMA_G, LUMA_B = 0.299, 0.587, 0.114

FLOW_MAGIC = b"PRLF"
FLOW_VERSION = 1


class ImagingError(ValueError):
    pass


class FlowFormatError(ImagingError):
    pass


def validate_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ImagingError(f"frame must be (H, W, 3), got {frame.shape}")
    if frame.shape[0] < 8 or frame.shape[1] < 8:
        raise ImagingError(f"frame too small: {frame.shape[:2]} (min 8x8)")
    return frame


def to_grayscale(frame: np.ndarray) -> np.ndarray:
    """Luma 0.299 R + 0.587 G + 0.114 B, per pixel."""
    frame = validate_frame(frame)
    f = frame.astype(np.float64, copy=False)
    return LUMA_R * f[:, :, 0] + LUMA_G * f[:, :, 1] + LUMA_B * f[:, :, 2]


def _box_mean(field: np.ndarray, window: int) -> np.ndarray:
    """Mean of every full window x window box, via a summed-area table."""
    h, w = field.shape
    sat = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(np.cumsum(field, axis=0), axis=1, out=sat[1:, 1:])
    sums = (
        sat[window:, window:]
        - sat[:-window, window:]
        - sat[window:, :-window]
        + sat[:-window, :-window]
    )
    return sums / float(window * window)


def ssim_map(
    a: np.ndarray,
    b: np.ndarray,
    window: int = 7,
    c1: float | None = None,
    c2: float | None = None,
    value_range: float = 1.0,
) -> np.ndarray:
    """Structural similarity per sliding window, uniform weights.

    Returns one value per fully-covered window position, i.e. an array of
    shape (H - window + 1, W - window + 1). Values lie in [-1, 1];
    identical inputs give exactly 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ImagingError(f"field shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ImagingError(f"fields must be 2-D, got shape {a.shape}")
    if window % 2 == 0 or window < 1:
        raise ImagingError(f"window must be odd and positive, got {window}")
    if window > min(a.shape):
        raise ImagingError(f"window {window} exceeds field size {a.shape}")
    if c1 is None:
        c1 = (0.01 * value_range) ** 2
    if c2 is None:
        c2 = (0.03 * value_range) ** 2

    mu_a = _box_mean(a, window)
    mu_b = _box_mean(b, window)
    var_a = _box_mean(a * a, window) - mu_a * mu_a
    var_b = _box_mean(b * b, window) - mu_b * mu_b
    cov = _box_mean(a * b, window) - mu_a * mu_b
    return ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )


@dataclass(frozen=True)
class FlowField:
    """Per-block displacement vectors (dx, dy), in pixels."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        if self.dx.shape != self.dy.shape or self.dx.ndim != 2:
            raise ImagingError(f"flow components must share a 2-D grid: {self.dx.shape} vs {self.dy.shape}")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.dx.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.dx, self.dy)


def block_match_flow(a: np.ndarray, b: np.ndarray, block: int = 8, radius: int = 4) -> FlowField:
    """Per-block displacement minimizing sum of absolute differences.

    For each block of ``a``, searches ``b`` within +/- radius for the best
    match. Ties break to the smallest |dx|+|dy|, then row-major (dy, dx)
    order, so a static scene reports exactly zero flow.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ImagingError(f"fields must be same-shape 2-D: {a.shape} vs {b.shape}")
    h, w = a.shape
    if h % block or w % block:
        raise ImagingError(f"dimensions {a.shape} not divisible by block {block}")
    gh, gw = h // block, w // block

    best_sad = np.full((gh, gw), np.inf)
    best_dx = np.zeros((gh, gw))
    best_dy = np.zeros((gh, gw))

    displacements = sorted(
        ((dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)),
        key=lambda d: (abs(d[0]) + abs(d[1]), d[0], d[1]),
    )
    for dy, dx in displacements:
        i0 = max(0, ceil(-dy / block))
        i1 = min(gh - 1, (h - block - dy) // block)
        j0 = max(0, ceil(-dx / block))
        j1 = min(gw - 1, (w - block - dx) // block)
        if i0 > i1 or j0 > j1:
            continue
        ref = a[i0 * block : (i1 + 1) * block, j0 * block : (j1 + 1) * block]
        cand = b[i0 * block + dy : (i1 + 1) * block + dy, j0 * block + dx : (j1 + 1) * block + dx]
        diff = np.abs(ref - cand)
        sad = diff.reshape(i1 - i0 + 1, block, j1 - j0 + 1, block).sum(axis=(1, 3))
        region = (slice(i0, i1 + 1), slice(j0, j1 + 1))
        better = sad < best_sad[region]
        best_sad[region] = np.where(better, sad, best_sad[region])
        best_dx[region] = np.where(better, dx, best_dx[region])
        best_dy[region] = np.where(better, dy, best_dy[region])
    return FlowField(dx=best_dx, dy=best_dy)


def write_flow(path, flow: FlowField) -> None:
    """Binary flow file: magic PRLF, version u16, grid w u32, grid h u32, f32 (dx,dy) pairs."""
    gh, gw = flow.grid_shape
    pairs = np.empty((gh, gw, 2), dtype="<f4")
    pairs[:, :, 0] = flow.dx
    pairs[:, :, 1] = flow.dy
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC)
        fh.write(struct.pack("<HII", FLOW_VERSION, gw, gh))
        fh.write(pairs.tobytes())


def read_flow(path) -> FlowField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 14 or raw[:4] != FLOW_MAGIC:
        raise FlowFormatError(f"{path}: not a flow file (bad magic)")
    version, gw, gh = struct.unpack("<HII", raw[4:14])
    if version != FLOW_VERSION:
        raise FlowFormatError(f"{path}: unsupported flow version {version} (expected {FLOW_VERSION})")
    expected = 14 + gh * gw * 8
    if len(raw) != expected:
        raise FlowFormatError(f"{path}: expected {expected} bytes for {gw}x{gh} grid, found {len(raw)}")
    pairs = np.frombuffer(raw[14:], dtype="<f4").reshape(gh, gw, 2)
    return FlowField(dx=pairs[:, :, 0].astype(np.float64), dy=pairs[:, :, 1].astype(np.float64))


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian, radius ceil(3 sigma)."""
    if sigma <= 0:
        raise ImagingError(f"sigma must be positive, got {sigma}")
    radius = int(ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def _convolve_axis(img: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = (len(kernel) - 1) // 2
    pad = [(0, 0)] * img.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(img, pad, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, len(kernel), axis=axis)
    return windows @ kernel


def gaussian_blur(frame: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge-clamped borders."""
    frame = validate_frame(frame)
    kernel = gaussian_kernel(sigma)
    out = frame.astype(np.float64, copy=False)
    out = _convolve_axis(out, kernel, axis=0)
    out = _convolve_axis(out, kernel, axis=1)
    return np.clip(out, 0.0, 1.0)


def color_jitter(
    frame: np.ndarray,
    seed: int,
    brightness: float | None = None,
    contrast: float | None = None,
    saturation: float | None = None,
    low: float = 0.6,
    high: float = 1.4,
) -> np.ndarray:
    """Brightness, then contrast, then saturation, factors from U[low, high].

    Explicit factor arguments pin that factor instead of sampling it; three
    uniforms are always drawn so pinning does not shift the other draws.
    """
    frame = validate_frame(frame).astype(np.float64, copy=True)
    rng = np.random.default_rng(seed)
    fb, fc, fs = rng.uniform(low, high, size=3)
    if brightness is not None:
        fb = brightness
    if contrast is not None:
        fc = contrast
    if saturation is not None:
        fs = saturation

    if fb != 1.0:
        frame = frame * fb
    if fc != 1.0:
        mu = to_grayscale(np.clip(frame, 0.0, 1.0)).mean()
        frame = mu + (frame - mu) * fc
    if fs != 1.0:
        gray = to_grayscale(np.clip(frame, 0.0, 1.0))[:, :, None]
        frame = gray + (frame - gray) * fs
    return np.clip(frame, 0.0, 1.0)


def sample_crop_rect(
    height: int,
    width: int,
    min_scale: float,
    aspect_range: tuple[float, float],
    rng: np.random.Generator,
    attempts: int = 10,
) -> tuple[int, int, int, int]:
    """Sample (y, x, crop_h, crop_w) with area fraction in [min_scale, 1]
    and aspect ratio (w/h) in aspect_range, fully inside the frame.

    Aspect is drawn log-uniformly. Rounds that push a candidate outside the
    requested ranges are rejected; after ``attempts`` tries the whole frame
    is returned.
    """
    if not (0.0 < min_scale <= 1.0):
        raise ImagingError(f"min_scale must be in (0, 1], got {min_scale}")
    lo, hi = aspect_range
    for _ in range(attempts):
        area = rng.uniform(min_scale, 1.0) * height * width
        aspect = exp(rng.uniform(log(lo), log(hi)))
        cw = int(round((area * aspect) ** 0.5))
        ch = int(round((area / aspect) ** 0.5))
        if not (1 <= cw <= width and 1 <= ch <= height):
            continue
        frac = (cw * ch) / (height * width)
        if not (min_scale <= frac <= 1.0 and lo <= cw / ch <= hi):
            continue
        y = int(rng.integers(0, height - ch + 1))
        x = int(rng.integers(0, width - cw + 1))
        return y, x, ch, cw
    return 0, 0, height, width


def random_crop_resize(
    frame: np.ndarray,
    min_scale: float,
    seed: int,
    aspect_range: tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0),
) -> np.ndarray:
    """Random crop (area >= min_scale of the frame) resized back bilinearly."""
    frame = validate_frame(frame)
    h, w = frame.shape[:2]
    rng = np.random.default_rng(seed)
    y, x, ch, cw = sample_crop_rect(h, w, min_scale, aspect_range, rng)
    crop = frame[y : y + ch, x : x + cw]
    return resize_bilinear(crop, h, w)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers; identity when sizes match."""
    img = np.asarray(img, dtype=np.float64)
    in_h, in_w = img.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    sy = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0.0, in_h - 1.0)
    sx = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0.0, in_w - 1.0)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    if img.ndim == 3:
        fy = fy[:, :, None]
        fx = fx[:, :, None]
    top = img[np.ix_(y0, x0)] * (1.0 - fx) + img[np.ix_(y0, x1)] * fx
    bottom = img[np.ix_(y1, x0)] * (1.0 - fx) + img[np.ix_(y1, x1)] * fx
    return top * (1.0 - fy) + bottom * fy
