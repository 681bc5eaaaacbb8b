"""Raster types, lossless image I/O and bilinear sampling.

Images are stored row-major as ``(height, width)`` float64 arrays. Depth is a
scalar in ``[0, 1]`` with 0 nearest to the imaging sensor.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass

import numpy as np


class FormatError(ValueError):
    """Raised for malformed or unsupported image files."""


class DomainError(ValueError):
    """Raised when a sample coordinate lies outside the image."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Image2D:
    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError(f"Image2D needs a 2-D array, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("Image2D values must be finite")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.bits)
        if a.ndim != 2:
            raise ValueError(f"BinaryMask needs a 2-D array, got shape {a.shape}")
        if a.dtype == bool:
            a = a.astype(np.uint8)
        if not np.all((a == 0) | (a == 1)):
            raise ValueError("BinaryMask values must be exactly 0 or 1")
        object.__setattr__(self, "bits", _frozen(a.astype(np.uint8)))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @classmethod
    def from_image(cls, img: Image2D, threshold: float = 0.5) -> "BinaryMask":
        return cls((img.data >= threshold).astype(np.uint8))


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Depth image in [0, 1] (0 = nearest) plus a validity mask."""

    image: Image2D
    valid: BinaryMask

    def __post_init__(self):
        if not isinstance(self.image, Image2D):
            object.__setattr__(self, "image", Image2D(self.image))
        if not isinstance(self.valid, BinaryMask):
            object.__setattr__(self, "valid", BinaryMask(self.valid))
        if self.image.shape != self.valid.shape:
            raise ValueError("depth image and validity mask differ in size")
        v = self.image.data[self.valid.bits == 1]
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("valid depth values must lie in [0, 1]")

    @classmethod
    def full(cls, data) -> "DepthMap":
        data = np.asarray(data, dtype=np.float64)
        return cls(Image2D(data), BinaryMask(np.ones(data.shape, np.uint8)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------


def _read_header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated tokens, skipping '#' comments.

    Returns the tokens and the offset just past the single whitespace byte
    that terminates the last token.
    """
    tokens = []
    i, n = 0, len(buf)
    while len(tokens) < count:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if i < n and buf[i : i + 1] == b"#":
            while i < n and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        if i >= n:
            raise FormatError("truncated header")
        j = i
        while j < n and not buf[j : j + 1].isspace():
            j += 1
        tokens.append(buf[i:j])
        i = j
    if i >= n:
        raise FormatError("header not terminated")
    return tokens, i + 1


def load_pgm(path) -> Image2D:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:2] != b"P5":
        raise FormatError(f"not a binary PGM (magic {buf[:2]!r})")
    try:
        (_, w, h, maxval), off = _read_header_tokens(buf, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"malformed PGM header: {exc}") from None
    if w <= 0 or h <= 0:
        raise FormatError("PGM dimensions must be positive")
    if maxval == 255:
        dtype = np.dtype(np.uint8)
    elif maxval == 65535:
        dtype = np.dtype(">u2")
    else:
        raise FormatError(f"unsupported PGM max value {maxval}")
    need = w * h * dtype.itemsize
    payload = buf[off : off + need]
    if len(payload) < need:
        raise OSError(f"truncated PGM payload: {len(payload)} of {need} bytes")
    a = np.frombuffer(payload, dtype=dtype).reshape(h, w)
    return Image2D(a.astype(np.float64) / maxval)


def encode_pgm(img: Image2D) -> bytes:
    """8-bit binary PGM bytes for ``img`` (values clipped to [0, 1])."""
    a = np.clip(np.asarray(img.data if isinstance(img, Image2D) else img, float), 0.0, 1.0)
    q = np.rint(a * 255.0).astype(np.uint8)
    h, w = q.shape
    return b"P5\n%d %d\n255\n" % (w, h) + q.tobytes()


def save_pgm(img: Image2D, path) -> None:
    _write_bytes(path, encode_pgm(img))


def save_mask_pgm(mask: BinaryMask, path) -> None:
    save_pgm(Image2D(mask.bits.astype(np.float64)), path)


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------


def load_pfm(path) -> Image2D:
    with open(path, "rb") as f:
        buf = f.read()
    magic = buf[:2]
    if magic == b"PF":
        raise FormatError("3-channel PFM is not supported")
    if magic != b"Pf":
        raise FormatError(f"not a grayscale PFM (magic {magic!r})")
    try:
        (_, w, h, scale), off = _read_header_tokens(buf, 4)
        w, h, scale = int(w), int(h), float(scale)
    except ValueError as exc:
        raise FormatError(f"malformed PFM header: {exc}") from None
    if scale >= 0:
        raise FormatError("big-endian PFM is not supported")
    need = 4 * w * h
    payload = buf[off : off + need]
    if len(payload) < need:
        raise OSError(f"truncated PFM payload: {len(payload)} of {need} bytes")
    a = np.frombuffer(payload, dtype="<f4").reshape(h, w)[::-1]
    return Image2D(a.astype(np.float64))


def encode_pfm(img: Image2D) -> bytes:
    a = np.asarray(img.data if isinstance(img, Image2D) else img)
    h, w = a.shape
    header = b"Pf\n%d %d\n-1.0\n" % (w, h)
    return header + np.ascontiguousarray(a[::-1], dtype="<f4").tobytes()


def save_pfm(img: Image2D, path) -> None:
    _write_bytes(path, encode_pfm(img))


def _write_bytes(path, data: bytes) -> None:
    d = os.path.dirname(os.fspath(path))
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "wb") as f:
        f.write(data)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def bilinear_sample(img: Image2D, x: float, y: float) -> float:
    """Bilinear blend of the four pixels around ``(x, y)``.

    Integer coordinates return the stored pixel exactly. Coordinates outside
    ``[0, width-1] x [0, height-1]`` raise :class:`DomainError`.
    """
    return float(bilinear_sample_many(img, np.array([x]), np.array([y]))[0])


def bilinear_sample_many(img: Image2D, xs, ys) -> np.ndarray:
    a = img.data if isinstance(img, Image2D) else np.asarray(img, float)
    h, w = a.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    bad = ~((xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DomainError(f"sample ({xs.flat[i]}, {ys.flat[i]}) outside {w}x{h} image")
    x0 = np.minimum(np.floor(xs).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(ys).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    return ((1 - fx) * (1 - fy) * a[y0, x0] + fx * (1 - fy) * a[y0, x1]
            + (1 - fx) * fy * a[y1, x0] + fx * fy * a[y1, x1])


# ---------------------------------------------------------------------------
# Depth colormap: red (near) -> green -> blue (far), piecewise linear
# ---------------------------------------------------------------------------


def depth_palette(d) -> np.ndarray:
    """Continuous RGB in [0, 1] for depth ``d``; d=0 red, 0.5 green, 1 blue."""
    d = np.clip(np.asarray(d, dtype=np.float64), 0.0, 1.0)
    lo = d <= 0.5
    r = np.where(lo, 1.0 - 2.0 * d, 0.0)
    g = np.where(lo, 2.0 * d, 2.0 - 2.0 * d)
    b = np.where(lo, 0.0, 2.0 * d - 1.0)
    return np.stack([r, g, b], axis=-1)


def depth_colormap_encode(d: DepthMap) -> np.ndarray:
    """(H, W, 3) uint8 raster; invalid pixels are black."""
    rgb = np.rint(depth_palette(d.image.data) * 255.0).astype(np.uint8)
    rgb[d.valid.bits == 0] = 0
    return rgb


def depth_colormap_decode(rgb: np.ndarray) -> DepthMap:
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    near = (g + 255.0 - r) / (4 * 255.0)
    far = 0.5 + (b + 255.0 - g) / (4 * 255.0)
    d = np.clip(np.where(r >= b, near, far), 0.0, 1.0)
    valid = (rgb.sum(axis=-1) > 0).astype(np.uint8)
    d[valid == 0] = 0.0
    return DepthMap(Image2D(d), BinaryMask(valid))


def encode_ppm(rgb: np.ndarray) -> bytes:
    h, w, _ = rgb.shape
    out = io.BytesIO()
    out.write(b"P6\n%d %d\n255\n" % (w, h))
    out.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())
    return out.getvalue()
