"""Reading and writing grayscale images.

Supported formats, chosen by file suffix:

* ``.pgm`` binary P5, 8-bit or 16-bit big-endian
* ``.png`` grayscale (colour PNGs are averaged to gray on read)
* ``.npy`` raw float64 arrays, lossless and unclipped

Integer pixel ``v`` with maximum ``M`` maps to ``v / M``.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import ImageFormatError
from .image_core import as_image

IMAGE_SUFFIXES = (".pgm", ".png", ".npy")

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*([0-9]+|P[0-9])")


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise ImageFormatError(f"{path}: malformed PGM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise ImageFormatError(f"{path}: only binary P5 PGM is supported")
    width, height, maxval = (int(f) for f in fields[1:])
    if not 0 < maxval < 65536 or width < 1 or height < 1:
        raise ImageFormatError(f"{path}: invalid PGM header values")
    if not data[pos:pos + 1].isspace():
        raise ImageFormatError(f"{path}: missing whitespace after PGM header")
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    need = count * dtype.itemsize
    if len(data) - pos < need:
        raise ImageFormatError(f"{path}: truncated PGM pixel data")
    pixels = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return pixels.reshape(height, width).astype(np.float64) / maxval


def _quantize(img: np.ndarray, maxval: int, clip: bool) -> np.ndarray:
    if clip:
        img = np.clip(img, 0.0, 1.0)
    elif img.min() < 0.0 or img.max() > 1.0:
        raise ImageFormatError(
            "values outside [0, 1] cannot be stored in an integer format; "
            "pass clip=True or write .npy"
        )
    return np.rint(img * maxval)


def write_pgm(path, img, bits: int = 8, clip: bool = False) -> None:
    if bits not in (8, 16):
        raise ImageFormatError(f"PGM bit depth must be 8 or 16, got {bits}")
    img = as_image(img)
    maxval = (1 << bits) - 1
    q = _quantize(img, maxval, clip).astype(">u2" if bits == 16 else "u1")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        fh.write(q.tobytes())


def read_png(path) -> np.ndarray:
    with PILImage.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L"):
            arr = np.asarray(im, dtype=np.uint16).astype(np.float64) / 65535.0
        elif im.mode in ("L", "RGB", "RGBA", "LA", "P", "1"):
            if im.mode == "P":
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64)
            if im.mode in ("RGBA", "LA"):
                arr = arr[..., :-1]
            arr = arr / (1.0 if im.mode == "1" else 255.0)
        elif im.mode == "I":
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            raise ImageFormatError(f"{path}: unsupported PNG mode {im.mode}")
    return as_image(arr)


def write_png(path, img, bits: int = 8, clip: bool = False) -> None:
    img = as_image(img)
    if bits == 8:
        q = _quantize(img, 255, clip).astype(np.uint8)
        PILImage.fromarray(q, mode="L").save(path)
    elif bits == 16:
        q = _quantize(img, 65535, clip).astype(np.uint16)
        PILImage.fromarray(q).save(path)
    else:
        raise ImageFormatError(f"PNG bit depth must be 8 or 16, got {bits}")


def read_image(path) -> np.ndarray:
    path = Path(path)
    suffix = path.suffix.lower()
    try:
        if suffix == ".pgm":
            return as_image(read_pgm(path))
        if suffix == ".png":
            return read_png(path)
        if suffix == ".npy":
            return as_image(np.load(path, allow_pickle=False))
    except ImageFormatError:
        raise
    except (OSError, ValueError) as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    raise ImageFormatError(f"{path}: unsupported image suffix {suffix!r}")


def write_image(path, img, bits: int = 8, clip: bool = False) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        write_pgm(path, img, bits=bits, clip=clip)
    elif suffix == ".png":
        write_png(path, img, bits=bits, clip=clip)
    elif suffix == ".npy":
        img = as_image(img)
        np.save(path, np.clip(img, 0.0, 1.0) if clip else img, allow_pickle=False)
    else:
        raise ImageFormatError(f"{path}: unsupported image suffix {suffix!r}")
