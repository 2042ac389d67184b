"""Raster I/O and region-of-interest extraction for thermal frames.

Images are 8-bit, 1 or 3 channels, held as ``(height, width, channels)``
uint8 arrays, which is the same byte order as a binary PGM/PPM payload.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

TARGET_SIZE = (300, 300)

_HEADER = re.compile(rb"(P[56])(\s+)(\d+)(\s+)(\d+)(\s+)(\d+)(\s)")


class ImageFormatError(ValueError):
    """Base class for codec errors; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class MalformedHeaderError(ImageFormatError):
    pass


class UnsupportedDepthError(ImageFormatError):
    pass


class TruncatedPayloadError(ImageFormatError):
    pass


class EmptyMaskError(ValueError):
    pass


@dataclass(eq=False)
class Image:
    pixels: np.ndarray  # (H, W, C) uint8

    def __post_init__(self) -> None:
        px = self.pixels
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3) or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image array must be (H, W, 1|3), got shape {self.pixels.shape}")
        if px.dtype != np.uint8:
            raise ValueError(f"image pixels must be uint8, got {px.dtype}")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels)

    def __repr__(self) -> str:
        return f"Image({self.width}x{self.height}x{self.channels})"


@dataclass(eq=False)
class Mask:
    bits: np.ndarray  # (H, W) bool

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Mask) and np.array_equal(self.bits, other.bits)


# --------------------------------------------------------------------------
# codec


def decode_image(data: bytes) -> Image:
    """Parse a binary PGM (P5) or PPM (P6) with maxval 255."""
    if data[:2] not in (b"P5", b"P6"):
        raise MalformedHeaderError(f"unknown magic {data[:2]!r}, expected P5 or P6", 0)
    match = _HEADER.match(data)
    if match is None:
        # find how far the header parsed to report a useful offset
        offset = 2
        while offset < len(data) and (data[offset:offset + 1].isspace() or data[offset:offset + 1].isdigit()):
            offset += 1
        raise MalformedHeaderError("malformed header", offset)
    width, height, maxval = int(match.group(3)), int(match.group(5)), int(match.group(7))
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"non-positive dimensions {width}x{height}", match.start(3))
    if maxval != 255:
        raise UnsupportedDepthError(f"unsupported maxval {maxval}, only 255 is accepted", match.start(7))
    channels = 1 if match.group(1) == b"P5" else 3
    start = match.end()
    size = width * height * channels
    payload = data[start:start + size]
    if len(payload) < size:
        raise TruncatedPayloadError(f"payload has {len(payload)} of {size} bytes", start + len(payload))
    if len(data) > start + size:
        raise MalformedHeaderError(f"{len(data) - start - size} trailing bytes after payload", start + size)
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels).copy()
    return Image(pixels)


def encode_image(img: Image) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (img.width, img.height)
    return header + np.ascontiguousarray(img.pixels).tobytes()


def read_image(path: str | Path) -> Image:
    return decode_image(Path(path).read_bytes())


def write_image(path: str | Path, img: Image) -> None:
    Path(path).write_bytes(encode_image(img))


# --------------------------------------------------------------------------
# pixel operations


def to_grayscale(img: Image) -> Image:
    """BT.601 luminance, rounded half-up, computed in exact integer arithmetic."""
    if img.channels != 3:
        raise ValueError(f"grayscale conversion needs a 3-channel image, got {img.channels}")
    px = img.pixels.astype(np.int64)
    weighted = 299 * px[:, :, 0] + 587 * px[:, :, 1] + 114 * px[:, :, 2]
    gray = (weighted + 500) // 1000
    return Image(np.clip(gray, 0, 255).astype(np.uint8))


def detect_edges(img: Image) -> Image:
    """Sobel gradient magnitude on a replicate-padded grayscale image."""
    if img.channels != 1:
        raise ValueError("edge detection needs a 1-channel image")
    if img.width < 3 or img.height < 3:
        raise ValueError(f"edge detection needs at least 3x3 pixels, got {img.width}x{img.height}")
    p = np.pad(img.pixels[:, :, 0].astype(np.int64), 1, mode="edge")
    h, w = img.height, img.width

    def at(dy: int, dx: int) -> np.ndarray:
        return p[dy:dy + h, dx:dx + w]

    gx = (at(0, 2) + 2 * at(1, 2) + at(2, 2)) - (at(0, 0) + 2 * at(1, 0) + at(2, 0))
    gy = (at(2, 0) + 2 * at(2, 1) + at(2, 2)) - (at(0, 0) + 2 * at(0, 1) + at(0, 2))
    # sqrt of an integer is never exactly k + 0.5, so floor(x + 0.5) has no ties
    magnitude = np.floor(np.sqrt((gx * gx + gy * gy).astype(np.float64)) + 0.5)
    return Image(np.minimum(magnitude, 255).astype(np.uint8))


def otsu_threshold(values: np.ndarray) -> int:
    """Threshold t maximizing between-class variance of {v <= t} vs {v > t}."""
    hist = np.bincount(values.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    levels = np.arange(256, dtype=np.float64)
    weight0 = np.cumsum(hist)
    weight1 = total - weight0
    sum0 = np.cumsum(hist * levels)
    mean0 = np.divide(sum0, weight0, out=np.zeros(256), where=weight0 > 0)
    mean1 = np.divide(sum0[-1] - sum0, weight1, out=np.zeros(256), where=weight1 > 0)
    between = weight0 * weight1 * (mean0 - mean1) ** 2
    return int(np.argmax(between))


def _shifted_reduce(bits: np.ndarray, pad_value: bool, op) -> np.ndarray:
    h, w = bits.shape
    p = np.pad(bits, 1, constant_values=pad_value)
    out = p[1:h + 1, 1:w + 1].copy()
    for dy in range(3):
        for dx in range(3):
            op(out, p[dy:dy + h, dx:dx + w], out=out)
    return out


def binary_close(bits: np.ndarray) -> np.ndarray:
    """3x3 dilation then erosion; the border counts as foreground for erosion so the result contains ``bits``."""
    dilated = _shifted_reduce(bits, False, np.logical_or)
    return _shifted_reduce(dilated, True, np.logical_and)


def build_roi_mask(edges: Image) -> Mask:
    """Otsu, closing, largest 8-connected component, hole filling."""
    if edges.channels != 1:
        raise ValueError("ROI mask needs a 1-channel edge image")
    mag = edges.pixels[:, :, 0]
    if not mag.any():
        raise EmptyMaskError("edge image is all zero; no region of interest found")
    binary = mag > otsu_threshold(mag)
    if not binary.any():
        raise EmptyMaskError("no pixel above the Otsu threshold; no region of interest found")
    closed = binary_close(binary)
    labels, count = ndimage.label(closed, structure=np.ones((3, 3), dtype=bool))
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    # argmax picks the lowest label (first in raster order) among equal sizes
    largest = labels == int(np.argmax(sizes))
    return Mask(ndimage.binary_fill_holes(largest))


def apply_mask(img: Image, mask: Mask) -> Image:
    if (img.height, img.width) != mask.bits.shape:
        raise ValueError(f"mask {mask.width}x{mask.height} does not match image {img.width}x{img.height}")
    return Image(np.where(mask.bits[:, :, None], img.pixels, 0).astype(np.uint8))


def _sample_positions(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Source taps for half-pixel-centered sampling as exact rationals.

    Position x maps to ((2x + 1) * n_in - n_out) / (2 * n_out); returns
    (lo, hi, weight numerator of hi, common denominator).
    """
    den = 2 * n_out
    num = (2 * np.arange(n_out, dtype=np.int64) + 1) * n_in - n_out
    num = np.clip(num, 0, (n_in - 1) * den)
    lo = num // den
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, num - lo * den, den


def resize(img: Image, width: int, height: int) -> Image:
    """Bilinear resize with half-pixel-centered sampling, rounded half-up.

    Weights are exact rationals and the sum is accumulated in integers, so
    half-way results always round up.
    """
    if width < 1 or height < 1:
        raise ValueError(f"target size must be positive, got {width}x{height}")
    if (width, height) == (img.width, img.height):
        return Image(img.pixels.copy())
    px = img.pixels.astype(np.int64)
    y0, y1, fy, dy = _sample_positions(img.height, height)
    x0, x1, fx, dx = _sample_positions(img.width, width)
    rows = px[y0] * (dy - fy)[:, None, None] + px[y1] * fy[:, None, None]
    total = rows[:, x0] * (dx - fx)[None, :, None] + rows[:, x1] * fx[None, :, None]
    den = dy * dx
    return Image(((2 * total + den) // (2 * den)).astype(np.uint8))


def preprocess(img: Image, size: tuple[int, int] = TARGET_SIZE) -> Image:
    """Grayscale -> edges -> ROI mask -> mask the color frame -> resize."""
    if img.channels != 3:
        raise ValueError("preprocess expects a 3-channel image")
    mask = build_roi_mask(detect_edges(to_grayscale(img)))
    return resize(apply_mask(img, mask), *size)
