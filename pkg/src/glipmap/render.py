"""8-bit grayscale rendering to plain (P2) portable graymaps."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .grid import ExposureGrid

MAXVAL = 255


def to_pixels(grid: ExposureGrid, scale: float | None = None) -> np.ndarray:
    """Linear map v -> round(255 * v / scale), clamped to 0..255.

    ``scale`` defaults to the grid maximum; an all-zero grid renders black.
    """
    v = grid.values
    if scale is None:
        scale = float(v.max())
        if scale == 0.0:
            return np.zeros(v.shape, dtype=np.uint8)
    if not (np.isfinite(scale) and scale > 0):
        raise ValidationError(f"render scale must be > 0, got {scale}")
    px = np.rint(MAXVAL * (v / scale))
    return np.clip(px, 0, MAXVAL).astype(np.uint8)


def format_pgm(pixels: np.ndarray, comment: str | None = None) -> str:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValidationError("graymap needs a 2-D pixel array")
    rows, cols = pixels.shape
    head = ["P2"]
    if comment:
        head.append(f"# {comment}")
    head += [f"{cols} {rows}", str(MAXVAL)]
    body = [" ".join(str(int(p)) for p in row) for row in pixels]
    return "\n".join(head + body) + "\n"


def write_pgm(pixels: np.ndarray, path, comment: str | None = None) -> None:
    Path(path).write_text(format_pgm(pixels, comment))


def read_pgm(path) -> np.ndarray:
    """Parse a plain graymap; comments may appear anywhere in the header."""
    tokens = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0]
        tokens += [(t, lineno) for t in line.split()]
    if not tokens or tokens[0][0] != "P2":
        raise FormatError("expected P2 magic", line=1, path=str(path))
    if len(tokens) < 4:
        raise FormatError("truncated header", line=tokens[-1][1], path=str(path))
    try:
        cols, rows, maxval = (int(t) for t, _ in tokens[1:4])
    except ValueError:
        raise FormatError("bad header", line=tokens[1][1], path=str(path)) from None
    data = tokens[4:]
    if len(data) != rows * cols:
        line = data[-1][1] if data else tokens[3][1]
        raise FormatError(f"expected {rows * cols} pixels, got {len(data)}", line=line, path=str(path))
    px = np.array([int(t) for t, _ in data], dtype=np.int64)
    if px.min(initial=0) < 0 or px.max(initial=0) > maxval:
        raise FormatError(f"pixel outside 0..{maxval}", path=str(path))
    return px.reshape(rows, cols).astype(np.uint8 if maxval <= 255 else np.uint16)


def render_grid(grid: ExposureGrid, path, scale: float | None = None) -> np.ndarray:
    px = to_pixels(grid, scale)
    used = scale if scale is not None else float(grid.values.max())
    write_pgm(px, path, comment=f"scale {used!r} V/m")
    return px
