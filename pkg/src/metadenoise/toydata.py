"""Procedural tiled-texture images: a recurrence-rich toy corpus.

Each image tiles one smooth random motif across the frame with small
per-tile brightness jitter, giving the strong patch recurrence that
man-made scenes (brick, windows, grilles) provide in real benchmarks.
Every image gets its own motif, so a corpus covers a distribution of
textures while each single image stays highly self-similar.
"""

from __future__ import annotations

import numpy as np

from .imaging import ImageBuffer
from .rng import Rng


def _smooth_field(height, width, cells, stream):
    """Bilinear interpolation of a coarse uniform grid up to (height, width)."""
    grid = stream.uniform(0.0, 1.0, (cells + 1, cells + 1))
    ys = np.linspace(0.0, cells, height)
    xs = np.linspace(0.0, cells, width)
    y0 = np.minimum(ys.astype(np.int64), cells - 1)
    x0 = np.minimum(xs.astype(np.int64), cells - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    g00 = grid[y0][:, x0]
    g01 = grid[y0][:, x0 + 1]
    g10 = grid[y0 + 1][:, x0]
    g11 = grid[y0 + 1][:, x0 + 1]
    return (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx
            + g10 * fy * (1 - fx) + g11 * fy * fx)


def tiled_texture(height, width, stream, motif=16, channels=1,
                  jitter=0.04, contrast=(0.12, 0.88)) -> ImageBuffer:
    """One tiled-texture image built from a single random motif."""
    tiles_y = -(-height // motif)
    tiles_x = -(-width // motif)
    planes = []
    for _ in range(channels):
        m = _smooth_field(motif, motif, 4, stream)
        m = contrast[0] + (contrast[1] - contrast[0]) * m
        plane = np.tile(m, (tiles_y, tiles_x))[:height, :width]
        offsets = stream.uniform(-jitter, jitter, (tiles_y, tiles_x))
        plane = plane + np.kron(offsets, np.ones((motif, motif)))[:height, :width]
        planes.append(plane)
    img = np.clip(np.stack(planes, axis=-1), 0.0, 1.0).astype(np.float32)
    return ImageBuffer(img)


def toy_corpus(count, height, width, seed, motif=16, channels=1,
               jitter=0.04):
    """Deterministic list of tiled-texture images, one motif per image."""
    rng = Rng(seed)
    return [tiled_texture(height, width, rng.stream(f"toy/{i}"), motif,
                          channels, jitter) for i in range(count)]
