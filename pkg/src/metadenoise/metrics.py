"""Metrics CSV with a fixed schema.

One header, fixed column order, deterministic float formatting.  Wall-clock
columns are written as 0 unless the writer is constructed with
timing=True, so fixed-seed runs produce byte-identical files.
"""

from __future__ import annotations

import csv

HEADER = ["phase", "iter", "image_id", "sigma_n", "sigma_r", "scale",
          "loss", "psnr_db", "wall_ms"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".6g")
    return str(v)


class MetricsWriter:
    """Append-only CSV writer emitting the fixed header exactly once."""

    def __init__(self, path, timing=False):
        self.timing = timing
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(HEADER)

    def add(self, phase, iter=0, image_id="", sigma_n=None, sigma_r=None,
            scale=None, loss=None, psnr_db=None, wall_ms=None):
        if not self.timing:
            wall_ms = 0.0
        self._writer.writerow([phase, iter, image_id, _fmt(sigma_n),
                               _fmt(sigma_r), _fmt(scale), _fmt(loss),
                               _fmt(psnr_db), _fmt(wall_ms)])

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
