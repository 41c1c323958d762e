"""The named desk-scale experiments behind the paper-style tables/figures.

Each experiment writes one CSV.  Eval images come from a user directory
when configured, otherwise from the procedural tiled-texture corpus whose
heavy patch recurrence stands in for man-made urban structure.
"""

from __future__ import annotations

import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .adaptation import (AdaptConfig, adapt_denoise, blindspot_adapt,
                         denoise_frozen, finetune_baseline)
from .errors import DataError
from .estimator import (box_filter3, inner_average_error,
                        measure_residual_noise, variance_reduction_check)
from .imaging import (ImageBuffer, NoiseSpec, ScalePolicy, add_gaussian_noise,
                      central_crop, clip01, extract_patches, from_tensor,
                      load_image, psnr, to_tensor)
from .metrics import MetricsWriter
from .nn import network_infer
from .rng import Rng
from .toydata import toy_corpus

EXPERIMENT_NAMES = ("scale-ablation", "patch-size", "meta-vs-finetune",
                    "table1-blindspot", "estimator-lab")

_IMAGE_SUFFIXES = (".png", ".pgm", ".ppm")


def worker_count() -> int:
    """Worker cap from MDN_THREADS (default 1 = serial)."""
    raw = os.environ.get("MDN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise DataError(f"MDN_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def map_images(fn, items):
    """Order-stable map over per-image jobs, parallel if MDN_THREADS > 1.

    Jobs must be independent (own Rng streams), so scheduling cannot
    change results.
    """
    n = worker_count()
    if n == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def load_corpus(directory):
    """All readable images in a directory; unreadable files warn on stderr."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory not found: {directory}")
    images = []
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() not in _IMAGE_SUFFIXES:
            continue
        try:
            images.append((path.name, load_image(path)))
        except DataError as exc:
            print(f"warning: skipping {path}: {exc}", file=sys.stderr)
    if not images:
        raise DataError(f"no readable images in {directory}")
    return images


def _eval_images(cfg, min_side=96):
    """(name, clean image) pairs: user eval dir, or generated toys."""
    if cfg.eval_dir is not None:
        images = [(n, img) for n, img in load_corpus(cfg.eval_dir)
                  if min(img.height, img.width) >= min_side]
        if not images:
            raise DataError(f"no eval image is at least {min_side} px")
        return images
    side = max(96, min_side)
    toys = toy_corpus(cfg.experiment.images, side, side,
                      seed=cfg.seed + 7001)
    return [(f"toy{i:02d}", img) for i, img in enumerate(toys)]


def _noisy(clean, sigma255, rng, name):
    y, _ = add_gaussian_noise(clean, NoiseSpec.fixed(sigma255),
                              rng.stream(f"noise/{name}"))
    return y


def _feedforward_psnr(params, y, clean):
    out = clip01(from_tensor(network_infer(params, to_tensor(y))))
    return psnr(clean, out)


def run_scale_ablation(theta0, cfg, out_csv, timing=False):
    """Adaptation curves at fixed resize scales plus the random-scale policy."""
    images = _eval_images(cfg)
    rng = Rng(cfg.seed)
    ex = cfg.experiment
    labels = [(f"s={s:g}", ScalePolicy.fixed(s)) for s in ex.scales]
    labels.append(("s=multi", ScalePolicy.gaussian_clipped()))
    with MetricsWriter(out_csv, timing=timing) as writer:
        for label, policy in labels:
            adapt_cfg = replace(cfg.adapt, rounds=ex.rounds, mode="nonblind",
                                sigma255=ex.sigma255, scale_policy=policy)
            phase = f"scale_ablation/{label}"

            def job(item, adapt_cfg=adapt_cfg, label=label):
                name, clean = item
                y = _noisy(clean, ex.sigma255, rng, name)
                base = _feedforward_psnr(theta0, y, clean)
                _, _, rep = finetune_baseline(y, theta0, adapt_cfg, rng,
                                              ground_truth=clean,
                                              stream_name=f"adapt/{label}/{name}")
                return name, base, rep

            for name, base, rep in map_images(job, images):
                writer.add(phase, 0, name, sigma_n=ex.sigma255, psnr_db=base)
                for i in range(len(rep.losses)):
                    writer.add(phase, i + 1, name, sigma_n=ex.sigma255,
                               sigma_r=rep.sigmas[i], scale=rep.scales[i],
                               loss=rep.losses[i], psnr_db=rep.psnrs[i],
                               wall_ms=rep.wall_ms[i])


def run_patch_size(theta0, cfg, out_csv, timing=False):
    """Large vs small adaptation patches, scored on the shared 64-center."""
    ex = cfg.experiment
    images = _eval_images(cfg, min_side=ex.patch_large)
    rng = Rng(cfg.seed)
    with MetricsWriter(out_csv, timing=timing) as writer:

        def job(item):
            name, clean = item
            y = _noisy(clean, ex.sigma255, rng, name)
            corner = rng.stream(f"corner/{name}")
            top = int(corner.integers(0, clean.height - ex.patch_large + 1))
            left = int(corner.integers(0, clean.width - ex.patch_large + 1))
            big_clean = ImageBuffer(
                clean.data[top:top + ex.patch_large,
                           left:left + ex.patch_large].copy())
            big_noisy = ImageBuffer(
                y.data[top:top + ex.patch_large,
                       left:left + ex.patch_large].copy(), unclipped=True)
            small_clean = central_crop(big_clean, ex.patch_small)
            small_noisy = central_crop(big_noisy, ex.patch_small)
            adapt_cfg = replace(cfg.adapt, rounds=ex.rounds, mode="nonblind",
                                sigma255=ex.sigma255)
            results = []
            for tag, noisy_p in (("large", big_noisy), ("small", small_noisy)):
                out, _, _ = finetune_baseline(noisy_p, theta0, adapt_cfg, rng,
                                              stream_name=f"adapt/{tag}/{name}")
                scored = central_crop(out, ex.patch_small) \
                    if tag == "large" else out
                results.append((tag, psnr(small_clean, scored)))
            return name, results

        for name, results in map_images(job, images):
            for tag, value in results:
                writer.add(f"patch_size/{tag}", ex.rounds, name,
                           sigma_n=ex.sigma255, psnr_db=value)


def run_meta_vs_finetune(theta0, theta_t, cfg, out_csv, timing=False):
    """Paired adaptation from the meta-trained vs plainly pre-trained init."""
    images = _eval_images(cfg)
    rng = Rng(cfg.seed)
    ex = cfg.experiment
    adapt_cfg = replace(cfg.adapt, rounds=ex.rounds)
    with MetricsWriter(out_csv, timing=timing) as writer:

        def job(item):
            name, clean = item
            y = _noisy(clean, ex.sigma255, rng, name)
            rows = []
            for phase, init in (("meta", theta_t), ("finetune", theta0)):
                # same stream name -> identical noise/scale draws, paired runs
                run_rng = Rng(cfg.seed + 13)
                _, _, rep = adapt_denoise(y, init, theta0, adapt_cfg, run_rng,
                                          ground_truth=clean,
                                          stream_name=f"adapt/{name}")
                rows.append((phase, _feedforward_psnr(init, y, clean), rep))
            return name, rows

        for name, rows in map_images(job, images):
            for phase, base, rep in rows:
                writer.add(phase, 0, name, sigma_n=ex.sigma255, psnr_db=base)
                for i in range(len(rep.losses)):
                    writer.add(phase, i + 1, name, sigma_n=ex.sigma255,
                               sigma_r=rep.sigmas[i], scale=rep.scales[i],
                               loss=rep.losses[i], psnr_db=rep.psnrs[i],
                               wall_ms=rep.wall_ms[i])


def run_table1_blindspot(theta0, cfg, out_csv, timing=False):
    """Blind-spot vs two-phase adaptation against the unadapted baseline."""
    images = _eval_images(cfg)
    rng = Rng(cfg.seed)
    ex = cfg.experiment
    with MetricsWriter(out_csv, timing=timing) as writer:

        def job(item):
            name, clean = item
            y = _noisy(clean, ex.sigma255, rng, name)
            base = _feedforward_psnr(theta0, y, clean)
            bs_out, bs_rep = blindspot_adapt(y, theta0, ex.rounds, rng,
                                             stream_name=f"blindspot/{name}")
            bs = psnr(clean, bs_out)
            tp_out, _, _ = finetune_baseline(y, theta0, cfg.adapt, rng,
                                             stream_name=f"twophase/{name}")
            tp = psnr(clean, tp_out)
            return name, base, bs, bs_rep, tp

        for name, base, bs, bs_rep, tp in map_images(job, images):
            writer.add("pretrained", 0, name, sigma_n=ex.sigma255,
                       psnr_db=base)
            for i, value in enumerate(bs_rep.losses):
                writer.add("blindspot", i + 1, name, sigma_n=ex.sigma255,
                           loss=value, wall_ms=bs_rep.wall_ms[i])
            writer.add("blindspot", ex.rounds, name, sigma_n=ex.sigma255,
                       psnr_db=bs)
            writer.add("twophase", cfg.adapt.rounds, name,
                       sigma_n=ex.sigma255, psnr_db=tp)


ESTIMATOR_HEADER = ["M", "N", "sigma_n", "sigma_r", "var_empirical",
                    "var_predicted"]


def run_estimator_lab(cfg, out_csv):
    """Variance table: factor-M law rows plus inner-average decay rows."""
    ex = cfg.experiment
    rng = Rng(cfg.seed)
    patch = toy_corpus(1, 32, 32, cfg.seed + 31)[0].data[:, :, 0]
    sigma_res = measure_residual_noise(box_filter3, patch, ex.sigma255,
                                       trials=200, stream=rng.stream("resid"))
    rows = []
    for r in variance_reduction_check(ex.sigma255, sigma_res, (1, 4, 16),
                                      ex.trials, rng.stream("facM")):
        rows.append([r.m, "inf", r.sigma_n255, r.sigma_r255,
                     r.var_empirical, r.var_predicted])
    for n, err in inner_average_error(ex.sigma255, (1, 10, 100, 1000),
                                      trials=256,
                                      stream=rng.stream("inner")):
        pred = (ex.sigma255 / 255.0) ** 2 / n
        rows.append([1, n, ex.sigma255, ex.sigma255, err, pred])
    with open(out_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ESTIMATOR_HEADER)
        for row in rows:
            writer.writerow([row[0], row[1]]
                            + [format(float(v), ".6g") for v in row[2:]])
