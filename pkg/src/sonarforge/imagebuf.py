"""Image buffer shared by the renderer and the post-processing stages.

An :class:`ImageBuffer` is a height x width x channels array of normalized
intensities in [0, 1], channels being 1 (grayscale) or 3 (RGB).  All pipeline
stages exchange images in this form; 8-bit quantization happens only at file
boundaries (PNG/PGM), and a lossless float32 raw format is available for
hand-off between the renderer and the post-processor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image


class ImageError(ValueError):
    """Malformed image data or unsupported channel layout."""


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Normalized intensity image: (height, width, channels) in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ImageError(f"expected (h, w, 1|3) array, got shape {np.shape(self.data)}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ImageError(f"empty image: shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ImageError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ImageError(
                f"intensities outside [0, 1]: min {arr.min():g}, max {arr.max():g}"
            )
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def plane(self) -> np.ndarray:
        """Single-channel view as a (h, w) array; error on RGB."""
        if self.channels != 1:
            raise ImageError(f"expected 1 channel, got {self.channels}")
        return self.data[:, :, 0]


def to_bytes(img: ImageBuffer) -> np.ndarray:
    """Quantize to 8 bits: value = round(255 * v)."""
    return np.rint(img.data * 255.0).astype(np.uint8)


def from_bytes(arr: np.ndarray) -> ImageBuffer:
    return ImageBuffer(arr.astype(np.float64) / 255.0)


def write_png(img: ImageBuffer, path) -> None:
    q = to_bytes(img)
    if img.channels == 1:
        Image.fromarray(q[:, :, 0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(q, mode="RGB").save(path, format="PNG")


def read_png(path) -> ImageBuffer:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        arr = np.asarray(im, dtype=np.uint8)
    return from_bytes(arr)


def write_pgm(img: ImageBuffer, path) -> None:
    """Binary (P5) PGM, 8-bit, grayscale only."""
    if img.channels != 1:
        raise ImageError("PGM supports grayscale images only")
    q = to_bytes(img)[:, :, 0]
    with open(path, "wb") as f:
        f.write(f"P5\n{img.width} {img.height}\n255\n".encode("ascii"))
        f.write(q.tobytes())


def read_pgm(path) -> ImageBuffer:
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.startswith(b"P5"):
        raise ImageError(f"{path}: not a binary PGM file")
    # header: magic, width, height, maxval, single whitespace, then pixels
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise ImageError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return from_bytes(pixels.reshape(h, w))


_RAW_MAGIC_LEN = 12  # three little-endian uint32: width, height, channels


def write_raw(img: ImageBuffer, path) -> None:
    """Lossless float32 dump: uint32-LE width/height/channels header, row-major data."""
    with open(path, "wb") as f:
        f.write(struct.pack("<III", img.width, img.height, img.channels))
        f.write(np.ascontiguousarray(img.data, dtype="<f4").tobytes())


def read_raw(path) -> ImageBuffer:
    with open(path, "rb") as f:
        header = f.read(_RAW_MAGIC_LEN)
        if len(header) != _RAW_MAGIC_LEN:
            raise ImageError(f"{path}: truncated raw image header")
        w, h, c = struct.unpack("<III", header)
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != w * h * c:
        raise ImageError(f"{path}: expected {w * h * c} floats, found {data.size}")
    return ImageBuffer(data.reshape(h, w, c).astype(np.float64))


def load_image(path) -> ImageBuffer:
    """Dispatch on extension: .png, .pgm, or .raw."""
    p = str(path).lower()
    if p.endswith(".png"):
        return read_png(path)
    if p.endswith(".pgm"):
        return read_pgm(path)
    if p.endswith(".raw"):
        return read_raw(path)
    raise ImageError(f"unsupported image format: {path}")


def save_image(img: ImageBuffer, path) -> None:
    p = str(path).lower()
    if p.endswith(".png"):
        write_png(img, path)
    elif p.endswith(".pgm"):
        write_pgm(img, path)
    elif p.endswith(".raw"):
        write_raw(img, path)
    else:
        raise ImageError(f"unsupported image format: {path}")
