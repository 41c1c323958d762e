"""Image values, AWGN corruption, PSNR, rescaling, patches and file I/O.

Pixel values live in [0, 1] float32 internally; every noise level is quoted
on the 0-255 scale and divided by 255 at the boundary.  Noisy intermediates
are deliberately NOT clipped (clipping would break the zero-mean noise
assumption the self-supervised losses rest on); buffers carry an
``unclipped`` marker until clip01 runs, and PSNR refuses unclipped inputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DataError, ShapeError

PSNR_CAP_DB = 99.0


@dataclass
class ImageBuffer:
    """H x W x C float32 image; `unclipped` marks values that may leave [0,1]."""

    data: np.ndarray
    unclipped: bool = False

    def __post_init__(self):
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3 or self.data.shape[2] not in (1, 3):
            raise ShapeError(f"image must be (H, W, C) with C in (1, 3), "
                             f"got {self.data.shape}")
        if self.data.dtype != np.float32:
            self.data = self.data.astype(np.float32)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    def copy(self) -> "ImageBuffer":
        return ImageBuffer(self.data.copy(), self.unclipped)


def to_tensor(img: ImageBuffer):
    """(H, W, C) image -> (1, C, H, W) network tensor."""
    return np.ascontiguousarray(img.data.transpose(2, 0, 1)[None])


def from_tensor(t, unclipped=True) -> ImageBuffer:
    """(1, C, H, W) tensor -> image; network outputs default to unclipped."""
    if t.ndim != 4 or t.shape[0] != 1:
        raise ShapeError(f"expected a single-image tensor, got {t.shape}")
    return ImageBuffer(np.ascontiguousarray(t[0].transpose(1, 2, 0),
                                            dtype=np.float32), unclipped)


@dataclass(frozen=True)
class NoiseSpec:
    """AWGN level rule: a fixed sigma or sigma ~ uniform(0, sigma_max)."""

    mode: str = "fixed"          # "fixed" | "uniform"
    sigma255: float = 0.0
    sigma_max255: float = 50.0

    def __post_init__(self):
        if self.mode not in ("fixed", "uniform"):
            raise DataError(f"unknown noise mode {self.mode!r}")
        if self.sigma255 < 0:
            raise DataError("sigma255 must be >= 0")
        if self.sigma_max255 <= 0:
            raise DataError("sigma_max255 must be > 0")

    @classmethod
    def fixed(cls, sigma255) -> "NoiseSpec":
        return cls("fixed", float(sigma255))

    @classmethod
    def uniform(cls, sigma_max255) -> "NoiseSpec":
        return cls("uniform", 0.0, float(sigma_max255))

    def draw_sigma(self, stream) -> float:
        if self.mode == "fixed":
            return self.sigma255
        return float(stream.uniform(0.0, self.sigma_max255))


@dataclass(frozen=True)
class ScalePolicy:
    """Resize-scale sampling: fixed s, or a clipped normal around mu."""

    kind: str = "fixed"          # "fixed" | "gaussian"
    s: float = 1.0
    mu: float = 0.8
    sd: float = 0.1
    lo: float = 0.6
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fixed", "gaussian"):
            raise DataError(f"unknown scale policy {self.kind!r}")
        if not (0.0 < self.lo <= self.hi <= 1.25):
            raise DataError("scale bounds must satisfy 0 < lo <= hi <= 1.25")

    @classmethod
    def fixed(cls, s) -> "ScalePolicy":
        return cls("fixed", s=float(s))

    @classmethod
    def gaussian_clipped(cls, mu=0.8, sd=0.1, lo=0.6, hi=1.0) -> "ScalePolicy":
        return cls("gaussian", mu=float(mu), sd=float(sd), lo=float(lo),
                   hi=float(hi))

    def draw(self, stream) -> float:
        if self.kind == "fixed":
            return self.s
        s = self.mu + stream.normal(sigma=self.sd)
        return float(min(max(s, self.lo), self.hi))


def add_gaussian_noise(x: ImageBuffer, spec: NoiseSpec, stream):
    """y = x + n with n ~ N(0, (sigma/255)^2) i.i.d. per pixel, unclipped.

    Returns (y, sigma_drawn); the drawn sigma is needed for non-blind use.
    """
    sigma = spec.draw_sigma(stream)
    noise = stream.normal(x.data.shape, sigma / 255.0).astype(np.float32)
    return ImageBuffer(x.data + noise, unclipped=True), sigma


def psnr(ref: ImageBuffer, test: ImageBuffer) -> float:
    """10*log10(1/MSE) in dB, capped at 99 for (near-)identical images."""
    if ref.data.shape != test.data.shape:
        raise ShapeError(f"psnr shape mismatch: {ref.data.shape} vs "
                         f"{test.data.shape}")
    for name, img in (("ref", ref), ("test", test)):
        if img.unclipped:
            raise DataError(f"psnr {name} image is unclipped; run clip01 first")
    mse = float(np.mean((ref.data.astype(np.float64)
                         - test.data.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def resize_bilinear(x: ImageBuffer, s: float) -> ImageBuffer:
    """Bilinear resize with half-pixel-centered sampling; s == 1 is identity."""
    if not (0.1 <= s <= 2.0):
        raise DataError(f"scale factor {s} outside [0.1, 2]")
    if s == 1.0:
        return x.copy()
    out_h = int(round(x.height * s))
    out_w = int(round(x.width * s))
    if out_h < 8 or out_w < 8:
        raise DataError(f"resize output {out_h}x{out_w} smaller than 8x8")

    def axis_coords(n_out, n_in):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) / s - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = axis_coords(out_h, x.height)
    x0, x1, fx = axis_coords(out_w, x.width)
    img = x.data.astype(np.float64)
    top = img[y0][:, x0] * (1 - fx)[None, :, None] + img[y0][:, x1] * fx[None, :, None]
    bot = img[y1][:, x0] * (1 - fx)[None, :, None] + img[y1][:, x1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return ImageBuffer(out.astype(np.float32), x.unclipped)


def extract_patches(x: ImageBuffer, size: int, stride: int | None = None, *,
                    count: int | None = None, stream=None):
    """Patches fully inside the image: grid mode (stride) or random mode.

    Grid mode walks top-left corners at the given stride; random mode draws
    `count` uniform top-left corners from `stream`.
    """
    if size > min(x.height, x.width):
        raise DataError(f"patch size {size} exceeds image "
                        f"{x.height}x{x.width}")
    if (stride is None) == (count is None):
        raise DataError("pass exactly one of stride (grid) or count (random)")
    corners = []
    if stride is not None:
        if stride < 1:
            raise DataError("stride must be >= 1")
        for top in range(0, x.height - size + 1, stride):
            for left in range(0, x.width - size + 1, stride):
                corners.append((top, left))
    else:
        if stream is None:
            raise DataError("random patch mode needs a sample stream")
        tops = stream.integers(0, x.height - size + 1, size=count)
        lefts = stream.integers(0, x.width - size + 1, size=count)
        corners = list(zip(tops.tolist(), lefts.tolist()))
    return [ImageBuffer(x.data[t:t + size, l:l + size].copy(), x.unclipped)
            for t, l in corners]


def central_crop(x: ImageBuffer, size: int) -> ImageBuffer:
    """The centered size x size window."""
    if size > min(x.height, x.width):
        raise DataError(f"crop size {size} exceeds image")
    top = (x.height - size) // 2
    left = (x.width - size) // 2
    return ImageBuffer(x.data[top:top + size, left:left + size].copy(),
                       x.unclipped)


def clip01(x: ImageBuffer) -> ImageBuffer:
    """Clamp to [0, 1] and drop the unclipped marker. Idempotent."""
    return ImageBuffer(np.clip(x.data, 0.0, 1.0), unclipped=False)


# ---------------------------------------------------------------------------
# file I/O: 8-bit PNG and binary PGM/PPM


def _quantize(img: ImageBuffer):
    # import is value/255; export rounds half-away-from-zero after clipping
    v = clip01(img).data
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def save_image(path, img: ImageBuffer):
    """Write 8-bit PNG (.png), binary PGM (.pgm, gray) or PPM (.ppm, RGB)."""
    path = str(path)
    u8 = _quantize(img)
    if path.endswith(".png"):
        pil = Image.fromarray(u8[:, :, 0] if img.channels == 1 else u8,
                              mode="L" if img.channels == 1 else "RGB")
        pil.save(path, format="PNG")
    elif path.endswith(".pgm"):
        if img.channels != 1:
            raise DataError("PGM holds single-channel images only")
        with open(path, "wb") as fh:
            fh.write(b"P5\n%d %d\n255\n" % (img.width, img.height))
            fh.write(u8.tobytes())
    elif path.endswith(".ppm"):
        if img.channels != 3:
            raise DataError("PPM holds three-channel images only")
        with open(path, "wb") as fh:
            fh.write(b"P6\n%d %d\n255\n" % (img.width, img.height))
            fh.write(u8.tobytes())
    else:
        raise DataError(f"unsupported image format: {path}")


def load_image(path) -> ImageBuffer:
    """Read PNG/PGM/PPM; 8-bit values map to [0, 1] by division."""
    try:
        with Image.open(str(path)) as pil:
            pil.load()
            if pil.mode not in ("L", "RGB"):
                pil = pil.convert("RGB" if len(pil.getbands()) > 2 else "L")
            arr = np.asarray(pil, dtype=np.float32) / 255.0
    except (OSError, SyntaxError, ValueError, struct.error) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return ImageBuffer(arr if arr.ndim == 3 else arr[:, :, None])
