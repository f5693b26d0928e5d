"""Minimal 8-bit PGM (P2/P5) reading, writing, and standardization.

PGM keeps the image pipeline codec-free and bit-exact: the header is four
whitespace-separated tokens (magic, width, height, maxval) with optional
'#' comments, followed by the raster (binary bytes for P5, ASCII integers
for P2).
"""

from __future__ import annotations

import numpy as np

from .errors import (
    CorruptHeaderError,
    NormalizationDegenerateError,
    UnsupportedFormatError,
)


def _tokens(data: bytes):
    """Yield header tokens, skipping whitespace and '#' comments."""
    i = 0
    n = len(data)
    while i < n:
        c = data[i:i + 1]
        if c.isspace():
            i += 1
        elif c == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        else:
            j = i
            while j < n and not data[j:j + 1].isspace():
                j += 1
            yield data[i:j], j
            i = j


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit grayscale PGM into a (height, width) float64 array."""
    with open(path, "rb") as fh:
        data = fh.read()

    toks = _tokens(data)
    try:
        magic, _ = next(toks)
    except StopIteration:
        raise CorruptHeaderError("empty file") from None
    if magic not in (b"P2", b"P5"):
        raise UnsupportedFormatError(
            f"expected P2/P5 PGM, got magic {magic!r}")
    try:
        (w_tok, _), (h_tok, _), (max_tok, end) = (next(toks), next(toks),
                                                  next(toks))
        width, height, maxval = int(w_tok), int(h_tok), int(max_tok)
    except (StopIteration, ValueError):
        raise CorruptHeaderError("header does not parse") from None
    if width < 1 or height < 1:
        raise CorruptHeaderError(f"bad dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise UnsupportedFormatError(f"only 8-bit supported, maxval={maxval}")

    count = width * height
    if magic == b"P5":
        # Exactly one whitespace byte separates the header from the raster.
        raster = data[end + 1:]
        if len(raster) < count:
            raise CorruptHeaderError(
                f"raster holds {len(raster)} bytes, expected {count}")
        img = np.frombuffer(raster[:count], dtype=np.uint8)
    else:
        fields = data[end:].split()
        if len(fields) < count:
            raise CorruptHeaderError(
                f"raster holds {len(fields)} values, expected {count}")
        try:
            img = np.array([int(f) for f in fields[:count]], dtype=np.int64)
        except ValueError:
            raise CorruptHeaderError("non-integer raster value") from None
    if img.max(initial=0) > maxval:
        raise CorruptHeaderError("raster value exceeds declared maxval")
    return img.reshape(height, width).astype(np.float64)


def write_pgm(path, img: np.ndarray, binary: bool = True) -> None:
    """Write a uint8-valued array as P5 (binary) or P2 (plain) PGM."""
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError("image must be 2-D")
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError("pixel values must lie in [0, 255]")
    arr = arr.astype(np.uint8)
    height, width = arr.shape
    with open(path, "wb") as fh:
        if binary:
            fh.write(f"P5\n{width} {height}\n255\n".encode())
            fh.write(arr.tobytes())
        else:
            fh.write(f"P2\n{width} {height}\n255\n".encode())
            lines = (" ".join(str(p) for p in row) for row in arr)
            fh.write(("\n".join(lines) + "\n").encode())


def standardize(img: np.ndarray) -> np.ndarray:
    """Shift/scale the whole image to zero mean and unit variance.

    One global mean and one global variance (population convention), per
    the observation model; per-column standardization is a separate
    harness option.  A second centering pass removes the rounding residue
    so |mean| <= 1e-12 and |var - 1| <= 1e-12 hold strictly.
    """
    flat = img.astype(np.float64)
    std = flat.std()  # population (ddof=0)
    if std == 0.0 or not np.isfinite(std):
        raise NormalizationDegenerateError("image has zero variance")
    out = (flat - flat.mean()) / std
    out = (out - out.mean()) / out.std()
    return out
