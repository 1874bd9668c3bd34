"""Grayscale images, binary masks, PGM I/O, downsampling and synthetic phantoms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class PgmFormatError(ValueError):
    """Raised for malformed or truncated PGM data."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UnsupportedOperation(ValueError):
    pass


class PhantomSpecError(ValueError):
    pass


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Row-major intensities in [0, 1], stored as a (height, width) array."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"image data must be 2-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("image intensities must be finite")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ValueError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def from_flat(cls, width: int, height: int, values: Sequence[float]) -> "GrayImage":
        values = np.asarray(values, dtype=np.float64)
        if values.size != width * height:
            raise ValueError(f"expected {width * height} values, got {values.size}")
        return cls(values.reshape(height, width))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Per-pixel class labels in {0, 1}, stored as a (height, width) uint8 array."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ValueError(f"mask bits must be 2-D, got shape {bits.shape}")
        if bits.size and not np.all((bits == 0) | (bits == 1)):
            raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "bits", _frozen(bits.astype(np.uint8)))

    @classmethod
    def from_flat(cls, width: int, height: int, values: Sequence[int]) -> "BinaryMask":
        values = np.asarray(values)
        if values.size != width * height:
            raise ValueError(f"expected {width * height} values, got {values.size}")
        return cls(values.reshape(height, width))

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def flat(self) -> np.ndarray:
        return self.bits.reshape(-1)

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def to_image(self) -> GrayImage:
        return GrayImage(self.bits.astype(np.float64))

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    __hash__ = None


@dataclass(frozen=True)
class Lesion:
    cx: int
    cy: int
    radius: float
    intensity: float


@dataclass(frozen=True)
class PhantomSpec:
    width: int
    height: int
    lesions: tuple[Lesion, ...] = ()
    background: float = 0.1
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lesions", tuple(self.lesions))
        if self.width < 1 or self.height < 1:
            raise PhantomSpecError("phantom dimensions must be positive")
        if not 0.0 <= self.background <= 1.0:
            raise PhantomSpecError(f"background intensity {self.background} outside [0, 1]")
        if self.noise < 0:
            raise PhantomSpecError("noise amplitude must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise PhantomSpecError("seed must be a 64-bit unsigned integer")
        for lesion in self.lesions:
            if lesion.radius <= 0:
                raise PhantomSpecError(f"lesion radius must be positive: {lesion}")
            if not 0.0 <= lesion.intensity <= 1.0:
                raise PhantomSpecError(f"lesion intensity outside [0, 1]: {lesion}")
            if (
                lesion.cx - lesion.radius < 0
                or lesion.cy - lesion.radius < 0
                or lesion.cx + lesion.radius > self.width - 1
                or lesion.cy + lesion.radius > self.height - 1
            ):
                raise PhantomSpecError(f"lesion does not fit inside the {self.width}x{self.height} frame: {lesion}")


# --------------------------------------------------------------------------- PGM


_WHITESPACE = b" \t\n\r\v\f"


def _header_tokens(data: bytes, count: int, start: int) -> tuple[list[tuple[bytes, int]], int]:
    """Read `count` whitespace-separated header tokens, skipping `#` comments.

    Returns the tokens with their offsets and the offset just past the last token.
    """
    tokens = []
    pos = start
    n = len(data)
    while len(tokens) < count:
        while pos < n and (data[pos] in _WHITESPACE or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                while pos < n and data[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        if pos >= n:
            raise PgmFormatError("malformed header: unexpected end of data", pos)
        begin = pos
        while pos < n and data[pos] not in _WHITESPACE and data[pos] != ord("#"):
            pos += 1
        tokens.append((data[begin:pos], begin))
    return tokens, pos


def _parse_int(token: bytes, offset: int, what: str) -> int:
    if not token.isdigit():
        raise PgmFormatError(f"malformed header: {what} {token!r} is not a non-negative integer", offset)
    return int(token)


def load_pgm(data: bytes) -> GrayImage:
    """Decode a P2 (ASCII) or P5 (binary) PGM into normalized intensities."""
    data = bytes(data)
    if len(data) < 2 or data[:2] not in (b"P2", b"P5"):
        raise PgmFormatError("malformed header: expected magic number P2 or P5", 0)
    magic = data[:2]
    (w_tok, h_tok, m_tok), pos = _header_tokens(data, 3, 2)
    width = _parse_int(*w_tok, "width")
    height = _parse_int(*h_tok, "height")
    maxval = _parse_int(*m_tok, "maxval")
    if maxval == 0:
        raise PgmFormatError("maxval 0", m_tok[1])
    if maxval > 65535:
        raise PgmFormatError(f"maxval {maxval} exceeds 65535", m_tok[1])
    count = width * height

    if magic == b"P5":
        if pos >= len(data) or data[pos] not in _WHITESPACE:
            raise PgmFormatError("malformed header: missing whitespace before raster", pos)
        pos += 1
        itemsize = 1 if maxval < 256 else 2
        needed = count * itemsize
        if len(data) - pos < needed:
            raise PgmFormatError(
                f"truncated payload: expected {needed} bytes, found {len(data) - pos}", len(data)
            )
        dtype = np.uint8 if itemsize == 1 else np.dtype(">u2")
        raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.int64)
    else:
        try:
            tokens, _ = _header_tokens(data, count, pos)
        except PgmFormatError as exc:
            raise PgmFormatError("truncated payload: too few samples", exc.offset) from None
        raw = np.array([_parse_int(tok, off, "sample") for tok, off in tokens], dtype=np.int64)

    too_big = np.flatnonzero(raw > maxval)
    if too_big.size:
        raise PgmFormatError(f"sample {raw[too_big[0]]} exceeds maxval {maxval}", pos)
    return GrayImage((raw / maxval).reshape(height, width))



def save_pgm(img: GrayImage, maxval: int = 255) -> bytes:
    """Encode as binary P5; samples are round-half-up of intensity * maxval."""
    if maxval not in (255, 65535):
        raise ValueError(f"maxval must be 255 or 65535, got {maxval}")
    raw = np.floor(img.data * maxval + 0.5).astype(np.int64)
    dtype = np.uint8 if maxval == 255 else np.dtype(">u2")
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    return header + raw.astype(dtype).tobytes()


def load_mask_pgm(data: bytes) -> BinaryMask:
    """Read a mask stored as PGM; any nonzero sample is foreground."""
    img = load_pgm(data)
    return BinaryMask((img.data > 0).astype(np.uint8))


def save_mask_pgm(mask: BinaryMask, maxval: int = 255) -> bytes:
    return save_pgm(mask.to_image(), maxval)


# ---------------------------------------------------------------------- resizing


def _overlap_counts(n_in: int, n_out: int) -> np.ndarray:
    """Integer overlap lengths, in units of 1/n_out source pixels, of each output cell with each source pixel.

    Rows sum to n_in.
    """
    weights = np.zeros((n_out, n_in), dtype=np.int64)
    for o in range(n_out):
        lo, hi = o * n_in, (o + 1) * n_in
        for s in range(lo // n_out, min(n_in, -(-hi // n_out))):
            weights[o, s] = max(0, min(hi, (s + 1) * n_out) - max(lo, s * n_out))
    return weights


def _check_downsample(width: int, height: int, out_w: int, out_h: int):
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be positive")
    if out_w > width or out_h > height:
        raise UnsupportedOperation(f"upsampling {width}x{height} -> {out_w}x{out_h} is not supported")


def resize_area(img: GrayImage, out_w: int, out_h: int) -> GrayImage:
    """Area-weighted downsampling; constant images stay exactly constant."""
    _check_downsample(img.width, img.height, out_w, out_h)
    rows = _overlap_counts(img.height, out_h).astype(np.float64) / img.height
    cols = _overlap_counts(img.width, out_w).astype(np.float64) / img.width
    # Averaging deviations from a reference keeps constant inputs bit-exact.
    ref = img.data.min() if img.data.size else 0.0
    out = ref + rows @ (img.data - ref) @ cols.T
    return GrayImage(np.clip(out, 0.0, 1.0))


def resize_mask_majority(mask: BinaryMask, out_w: int, out_h: int) -> BinaryMask:
    """Majority-vote downsampling: 1 iff more than half of the covered area is foreground."""
    _check_downsample(mask.width, mask.height, out_w, out_h)
    rows = _overlap_counts(mask.height, out_h)
    cols = _overlap_counts(mask.width, out_w)
    votes = rows @ mask.bits.astype(np.int64) @ cols.T
    total = mask.height * mask.width
    return BinaryMask((2 * votes > total).astype(np.uint8))


# ---------------------------------------------------------------------- phantoms


def disc_mask(width: int, height: int, cx: float, cy: float, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2


def generate_phantom(spec: PhantomSpec) -> tuple[GrayImage, BinaryMask]:
    """Render lesion discs over a flat background, add clamped uniform noise."""
    image = np.full((spec.height, spec.width), spec.background, dtype=np.float64)
    mask = np.zeros((spec.height, spec.width), dtype=bool)
    for lesion in spec.lesions:
        disc = disc_mask(spec.width, spec.height, lesion.cx, lesion.cy, lesion.radius)
        image[disc] = lesion.intensity
        mask |= disc
    if spec.noise > 0:
        rng = np.random.default_rng(spec.seed)
        image = np.clip(image + rng.uniform(-spec.noise, spec.noise, image.shape), 0.0, 1.0)
    return GrayImage(image), BinaryMask(mask.astype(np.uint8))
