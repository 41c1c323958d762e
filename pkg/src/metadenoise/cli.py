"""Command-line harness: pretrain, meta-train, denoise, experiment.

Progress goes to stderr; machine-readable output goes to files only.
Exit codes: 0 ok, 1 usage, 2 data, 3 numeric failure.  All commands honor
--seed: identical seeds reproduce artifacts byte-for-byte (wall-clock CSV
columns stay 0 unless --timing asks for real measurements).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .adaptation import (AdaptConfig, adapt_denoise, meta_train_reptile,
                         pretrain_noise2truth)
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import DataError, NumericError
from .experiments import (EXPERIMENT_NAMES, load_corpus, run_estimator_lab,
                          run_meta_vs_finetune, run_patch_size,
                          run_scale_ablation, run_table1_blindspot)
from .expconfig import load_config
from .imaging import (NoiseSpec, add_gaussian_noise, clip01, from_tensor,
                      load_image, psnr, save_image, to_tensor)
from .metrics import MetricsWriter
from .nn import network_infer
from .rng import Rng


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _log(msg):
    print(msg, file=sys.stderr)


def _load_cfg(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _require_checkpoint(path, what):
    if path is None or not Path(path).is_file():
        raise DataError(f"missing {what} checkpoint: {path}")
    return load_checkpoint(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_pretrain(args):
    cfg = _load_cfg(args)
    if cfg.train_dir is None:
        raise DataError("config needs data.train_dir for pre-training")
    corpus = [img for _, img in load_corpus(cfg.train_dir)]
    rng = Rng(cfg.seed)
    _log(f"pre-training {cfg.arch.describe()} for {cfg.pretrain.steps} steps "
         f"on {len(corpus)} images")
    params, curve = pretrain_noise2truth(corpus, cfg.pretrain, rng, cfg.arch)
    save_checkpoint(args.out, params)
    if args.metrics:
        with MetricsWriter(args.metrics, timing=args.timing) as writer:
            for step, value in enumerate(curve):
                writer.add("pretrain", step + 1, loss=value)
    _log(f"wrote {args.out}")
    return 0


def cmd_meta_train(args):
    cfg = _load_cfg(args)
    theta0 = _require_checkpoint(args.init, "initial")
    if cfg.train_dir is None:
        raise DataError("config needs data.train_dir for meta-training")
    corpus = [img for _, img in load_corpus(cfg.train_dir)]
    rng = Rng(cfg.seed)
    writer = MetricsWriter(args.metrics, timing=args.timing) \
        if args.metrics else None

    eval_set = []
    if writer is not None and cfg.meta_eval_every > 0:
        if cfg.eval_dir is not None:
            pairs = load_corpus(cfg.eval_dir)
        else:
            pairs = [(f"train{i:02d}", img)
                     for i, img in enumerate(corpus[:3])]
        for name, clean in pairs:
            noisy, _ = add_gaussian_noise(
                clean, NoiseSpec.fixed(cfg.meta_eval_sigma255),
                rng.stream(f"metaeval/{name}"))
            eval_set.append((name, clean, noisy))

    def hook(t, params):
        if writer is None:
            return
        due = cfg.meta_eval_every > 0 and (
            t % cfg.meta_eval_every == 0 or t == cfg.meta.outer_iters)
        if not due:
            return
        for name, clean, noisy in eval_set:
            out = clip01(from_tensor(network_infer(params, to_tensor(noisy))))
            writer.add("meta_eval", t, name,
                       sigma_n=cfg.meta_eval_sigma255,
                       psnr_db=psnr(clean, out))

    _log(f"meta-training: T={cfg.meta.outer_iters} K={cfg.meta.inner_steps} "
         f"epsilon={cfg.meta.epsilon:g}")
    theta_t, losses = meta_train_reptile(theta0, corpus, cfg.meta, rng,
                                         eval_hook=hook)
    save_checkpoint(args.out, theta_t)
    if writer is not None:
        for t, value in enumerate(losses):
            writer.add("meta_train", t + 1, loss=value)
        writer.close()
    _log(f"wrote {args.out}")
    return 0


def cmd_denoise(args):
    if args.blind and args.sigma is not None:
        raise UsageError("--sigma cannot be combined with --blind")
    cfg = _load_cfg(args) if args.config else None
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
    adapt = cfg.adapt if cfg else AdaptConfig()
    if args.sigma is not None:
        adapt.mode = "nonblind"
        adapt.sigma255 = args.sigma
    else:
        adapt.mode = "blind"
        adapt.sigma255 = None
    adapt.rounds = args.iters
    adapt.__post_init__()

    theta = _require_checkpoint(args.theta, "network")
    g = _require_checkpoint(args.g, "denoiser g") if args.g else theta
    y = load_image(args.input)
    truth = load_image(args.truth) if args.truth else None
    rng = Rng(seed)
    name = Path(args.input).name
    x_tilde, _, report = adapt_denoise(y, theta, g, adapt, rng,
                                       ground_truth=truth,
                                       stream_name=f"adapt/{name}")
    save_image(args.output, x_tilde)
    if args.report:
        with MetricsWriter(args.report, timing=args.timing) as writer:
            for i in range(len(report.losses)):
                writer.add("adapt", i + 1, name, sigma_r=report.sigmas[i],
                           scale=report.scales[i], loss=report.losses[i],
                           psnr_db=report.psnrs[i],
                           wall_ms=report.wall_ms[i])
    _log(f"wrote {args.output}")
    return 0


def cmd_experiment(args):
    cfg = _load_cfg(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_csv = out_dir / f"{args.name}.csv"
    if args.name == "estimator-lab":
        run_estimator_lab(cfg, out_csv)
    else:
        theta0 = _require_checkpoint(args.theta0, "pre-trained")
        if args.name == "scale-ablation":
            run_scale_ablation(theta0, cfg, out_csv, timing=args.timing)
        elif args.name == "patch-size":
            run_patch_size(theta0, cfg, out_csv, timing=args.timing)
        elif args.name == "meta-vs-finetune":
            theta_t = _require_checkpoint(args.thetaT, "meta-trained")
            run_meta_vs_finetune(theta0, theta_t, cfg, out_csv,
                                 timing=args.timing)
        elif args.name == "table1-blindspot":
            run_table1_blindspot(theta0, cfg, out_csv, timing=args.timing)
    _log(f"wrote {out_csv}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="metadenoise",
                     description="Two-phase self-supervised denoising with "
                                 "meta-trained fast adaptation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--timing", action="store_true",
                       help="record real wall-clock in CSVs (breaks "
                            "byte-reproducibility)")

    p = sub.add_parser("pretrain", help="supervised Noise2Truth pre-training")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint to write")
    p.add_argument("--metrics", default=None, help="training-curve CSV")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("meta-train", help="Reptile meta-training")
    p.add_argument("--config", required=True)
    p.add_argument("--init", required=True, help="pre-trained checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default=None)
    common(p)
    p.set_defaults(func=cmd_meta_train)

    p = sub.add_parser("denoise", help="adapt to one image and denoise it")
    p.add_argument("--theta", required=True, help="initial parameters")
    p.add_argument("--g", default=None,
                   help="frozen denoiser checkpoint (default: --theta)")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--blind", action="store_true",
                   help="draw sigma_r per round (default)")
    p.add_argument("--sigma", type=float, default=None,
                   help="known noise level (non-blind)")
    p.add_argument("--iters", type=int, default=20,
                   help="adaptation rounds N")
    p.add_argument("--report", default=None, help="per-round CSV")
    p.add_argument("--truth", default=None,
                   help="clean reference for per-round PSNR")
    p.add_argument("--config", default=None,
                   help="optional config for adaptation knobs")
    common(p)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("experiment", help="run a named experiment bundle")
    p.add_argument("name", choices=EXPERIMENT_NAMES)
    p.add_argument("--config", required=True)
    p.add_argument("--theta0", default=None, help="pre-trained checkpoint")
    p.add_argument("--thetaT", default=None, help="meta-trained checkpoint")
    p.add_argument("--out", required=True, help="output directory")
    common(p)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
