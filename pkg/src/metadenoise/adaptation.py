"""Two-phase self-supervised denoising pipeline.

Stage 0 pre-trains a residual denoiser on (noisy, clean) pairs, then
meta-trains it with Reptile so its parameters sit where a handful of
self-supervised updates go a long way.  At test time the frozen pre-trained
copy g denoises the input once (ybar = g(y)); each adaptation round
re-noises a rescaled ybar into z and fine-tunes the live network f to map
z back to ybar, exploiting the patch recurrence of the single test image.
A Noise2Void-style blind-spot adapter is included as the baseline that
naive self-supervision degrades a pre-trained net.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError
from .imaging import (ImageBuffer, NoiseSpec, ScalePolicy, clip01,
                      from_tensor, psnr, resize_bilinear, to_tensor)
from .nn import (AdamState, Arch, LOSSES, NetworkParams, adam_step,
                 init_params, interp_params, mse_loss, network_backward,
                 network_forward, network_infer)

DIHEDRAL_OPS = 8  # flips x rotations


@dataclass
class PretrainConfig:
    """Supervised (noisy, clean) pre-training knobs."""

    steps: int = 2000
    sigma_max255: float = 50.0
    patch_size: int = 64
    batch_size: int = 16
    augment: bool = True
    lr: float = 1e-4

    def __post_init__(self):
        if not (0.0 < self.sigma_max255 <= 100.0):
            raise DataError("sigma_max255 must lie in (0, 100]")
        if self.steps < 0 or self.patch_size < 1 or self.batch_size < 1:
            raise DataError("steps/patch_size/batch_size out of range")


@dataclass
class MetaConfig:
    """Reptile meta-training knobs (outer iterations T, inner steps K)."""

    outer_iters: int = 2000
    inner_steps: int = 256
    epsilon: float = 1e-5
    sigma_max255: float = 50.0
    patch_size: int = 64
    batch_size: int = 16
    lr: float = 1e-4

    def __post_init__(self):
        if self.outer_iters < 0:
            raise DataError("outer_iters must be >= 0")
        if self.inner_steps < 1:
            raise DataError("inner_steps must be >= 1")
        if not (0.0 < self.epsilon <= 1.0):
            raise DataError("epsilon must lie in (0, 1]")


@dataclass
class AdaptConfig:
    """Test-time adaptation knobs (rounds N, inner steps J per round).

    epsilon_test defaults to 1.0: each round keeps the fully fine-tuned
    parameters, which is what a handful of rounds needs to move at all.
    """

    rounds: int = 20
    mode: str = "blind"                 # "blind" | "nonblind"
    sigma255: float | None = None       # required for nonblind
    sigma_max255: float = 50.0
    inner_steps: int = 8
    epsilon_test: float = 1.0
    scale_policy: ScalePolicy = field(
        default_factory=ScalePolicy.gaussian_clipped)
    loss: str = "mse"
    lr: float = 1e-4

    def __post_init__(self):
        if self.rounds < 0:
            raise DataError("rounds must be >= 0")
        if self.inner_steps < 1:
            raise DataError("inner_steps must be >= 1")
        if not (0.0 < self.epsilon_test <= 1.0):
            raise DataError("epsilon_test must lie in (0, 1]")
        if self.mode not in ("blind", "nonblind"):
            raise DataError(f"unknown adaptation mode {self.mode!r}")
        if self.mode == "nonblind" and self.sigma255 is None:
            raise DataError("nonblind adaptation needs sigma255")
        if self.loss not in LOSSES:
            raise DataError(f"unknown loss {self.loss!r}")


@dataclass
class AdaptReport:
    """Per-round trace of one adaptation session (lengths == rounds)."""

    losses: list = field(default_factory=list)
    psnrs: list = field(default_factory=list)    # None entries without truth
    sigmas: list = field(default_factory=list)
    scales: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# patch batching shared by pre-training and meta-training


def _usable(corpus, patch):
    good = [img for img in corpus if min(img.height, img.width) >= patch]
    if not good:
        raise DataError(f"no corpus image is at least {patch}x{patch}")
    return good


def _augment(patch, op):
    if op >= 4:
        patch = patch[:, ::-1]
    return np.rot90(patch, op % 4, axes=(0, 1))


def _sample_clean_batch(corpus, patch, batch, stream, augment):
    """(B, C, patch, patch) tensor of random (optionally dihedral) crops."""
    chans = corpus[0].channels
    out = np.empty((batch, chans, patch, patch), dtype=np.float32)
    idxs = stream.integers(0, len(corpus), size=batch)
    for b, idx in enumerate(idxs):
        img = corpus[int(idx)]
        top = int(stream.integers(0, img.height - patch + 1))
        left = int(stream.integers(0, img.width - patch + 1))
        crop = img.data[top:top + patch, left:left + patch]
        if augment:
            crop = _augment(crop, int(stream.integers(0, DIHEDRAL_OPS)))
        out[b] = np.ascontiguousarray(crop.transpose(2, 0, 1))
    return out


# ---------------------------------------------------------------------------
# stage 0a: supervised pre-training (Noise2Truth)


def pretrain_noise2truth(corpus, cfg: PretrainConfig, rng, arch: Arch):
    """Train a fresh residual net on (clean + noise, clean) patch pairs.

    Noise sigma is drawn per patch from uniform(0, sigma_max).  Returns the
    trained parameters and the per-step loss curve.
    """
    if not corpus:
        raise DataError("pre-training corpus is empty")
    corpus = _usable(corpus, cfg.patch_size)
    params = init_params(arch, rng.stream("pretrain/init"))
    data = rng.stream("pretrain/data")
    state = AdamState.init(params, lr=cfg.lr)
    curve = []
    for step in range(cfg.steps):
        clean = _sample_clean_batch(corpus, cfg.patch_size, cfg.batch_size,
                                    data, cfg.augment)
        sigmas = data.uniform(0.0, cfg.sigma_max255, size=cfg.batch_size)
        noise = data.normal(clean.shape).astype(np.float32)
        noise *= (sigmas[:, None, None, None] / 255.0).astype(np.float32)
        noisy = clean + noise
        xhat, tape = network_forward(params, noisy)
        value, grad = mse_loss(xhat, clean)
        if not np.isfinite(value):
            raise NumericError(f"pre-training diverged at step {step}")
        grads = network_backward(tape, grad)
        params, state = adam_step(params, grads, state)
        curve.append(value)
    return params, curve


# ---------------------------------------------------------------------------
# the frozen denoiser g


def denoise_frozen(g_params: NetworkParams, y: ImageBuffer) -> ImageBuffer:
    """ybar = g(y). g never receives gradients; output stays unclipped."""
    return from_tensor(network_infer(g_params, to_tensor(y)), unclipped=True)


def _is_identity_net(params: NetworkParams) -> bool:
    last = params.layers[-1]
    return not (last.weights.any() or last.bias.any())


# ---------------------------------------------------------------------------
# stage 0b: Reptile meta-training


def meta_train_reptile(theta0: NetworkParams, corpus, cfg: MetaConfig, rng,
                       eval_hook=None):
    """Reptile over the self-supervised task built from the frozen g.

    Every outer iteration t clones the running parameters, takes K Adam
    steps on freshly sampled (z, ybar) pairs -- z = g(clean + n) + r with
    both sigma levels drawn uniform(0, sigma_max) per step -- and then
    interpolates: theta_t = theta_{t-1} + epsilon*(theta^K - theta_{t-1}).
    Meta-training always runs at scale 1; multi-scale enters only at test
    time.  Returns (theta_T, mean inner loss per outer iteration).
    """
    if not corpus:
        raise DataError("meta-training corpus is empty")
    if _is_identity_net(theta0):
        raise DataError("g is an uninitialized identity denoiser; "
                        "pre-train before meta-training")
    corpus = _usable(corpus, cfg.patch_size)
    g = theta0.copy()
    theta = theta0.copy()
    data = rng.stream("meta/data")
    losses = []
    if eval_hook is not None:
        eval_hook(0, theta)
    for t in range(1, cfg.outer_iters + 1):
        inner = theta.copy()
        state = AdamState.init(inner, lr=cfg.lr)
        step_losses = []
        for _ in range(cfg.inner_steps):
            clean = _sample_clean_batch(corpus, cfg.patch_size,
                                        cfg.batch_size, data, augment=True)
            sigma_n = float(data.uniform(0.0, cfg.sigma_max255))
            noisy = clean + data.normal(clean.shape,
                                        sigma_n / 255.0).astype(np.float32)
            ybar = network_infer(g, noisy)
            sigma_r = float(data.uniform(0.0, cfg.sigma_max255))
            z = ybar + data.normal(ybar.shape,
                                   sigma_r / 255.0).astype(np.float32)
            xhat, tape = network_forward(inner, z)
            value, grad = mse_loss(xhat, ybar)
            if not np.isfinite(value):
                raise NumericError(f"meta-training diverged at outer "
                                   f"iteration {t}")
            grads = network_backward(tape, grad)
            inner, state = adam_step(inner, grads, state)
            step_losses.append(value)
        theta = interp_params(theta, inner, cfg.epsilon)
        losses.append(float(np.mean(step_losses)))
        if eval_hook is not None:
            eval_hook(t, theta)
    return theta, losses


# ---------------------------------------------------------------------------
# stage 1+2: inference through adaptation


def adapt_denoise(y: ImageBuffer, theta_init: NetworkParams,
                  g_params: NetworkParams, cfg: AdaptConfig, rng,
                  ground_truth: ImageBuffer | None = None,
                  stream_name: str = "adapt", round_hook=None):
    """Adapt f to one noisy image, then denoise it.

    Per round: draw a scale s, resize ybar, re-noise it with sigma_r (drawn
    blind or fixed non-blind), take J Adam steps pulling f(z) toward the
    resized ybar, and interpolate the round's result into the running
    parameters with epsilon_test.  The final output is f applied to the
    original full-resolution y, clipped.

    Returns (x_tilde, theta_final, AdaptReport).
    """
    loss_fn = LOSSES[cfg.loss]
    theta = theta_init.copy()
    report = AdaptReport()
    ybar = denoise_frozen(g_params, y)
    stream = rng.stream(stream_name)
    y_t = to_tensor(y)
    for n in range(1, cfg.rounds + 1):
        t_start = time.perf_counter()
        s = cfg.scale_policy.draw(stream)
        ybar_s = resize_bilinear(ybar, s)
        if cfg.mode == "nonblind":
            sigma_r = float(cfg.sigma255)
        else:
            sigma_r = float(stream.uniform(0.0, cfg.sigma_max255))
        target = to_tensor(ybar_s)
        z = target + stream.normal(target.shape,
                                   sigma_r / 255.0).astype(np.float32)
        inner = theta
        state = AdamState.init(inner, lr=cfg.lr)
        value = 0.0
        for _ in range(cfg.inner_steps):
            xhat, tape = network_forward(inner, z)
            value, grad = loss_fn(xhat, target)
            if not np.isfinite(value):
                raise NumericError(f"adaptation diverged at round {n}")
            grads = network_backward(tape, grad)
            inner, state = adam_step(inner, grads, state)
        theta = interp_params(theta, inner, cfg.epsilon_test)
        report.losses.append(value)
        report.sigmas.append(sigma_r)
        report.scales.append(s)
        if ground_truth is not None:
            current = clip01(from_tensor(network_infer(theta, y_t)))
            report.psnrs.append(psnr(ground_truth, current))
        else:
            report.psnrs.append(None)
        report.wall_ms.append((time.perf_counter() - t_start) * 1e3)
        if round_hook is not None:
            round_hook(n, ybar_s, sigma_r, s)
    x_tilde = clip01(from_tensor(network_infer(theta, y_t)))
    return x_tilde, theta, report


def finetune_baseline(y: ImageBuffer, theta0: NetworkParams,
                      cfg: AdaptConfig, rng,
                      ground_truth: ImageBuffer | None = None,
                      stream_name: str = "adapt"):
    """adapt_denoise started from the plainly pre-trained theta0.

    Same procedure, same g (= theta0); only the initial parameters differ
    from the meta-trained pipeline.
    """
    return adapt_denoise(y, theta0, theta0, cfg, rng, ground_truth,
                         stream_name)


# ---------------------------------------------------------------------------
# blind-spot baseline (Noise2Void-style)


NEIGHBORHOOD = 5  # center pixel's candidate ring is 5x5 minus the center


def blindspot_adapt(y: ImageBuffer, theta_init: NetworkParams, n_rounds: int,
                    rng, *, patch_size: int = 32, batch_size: int = 16,
                    lr: float = 1e-4, ground_truth: ImageBuffer | None = None,
                    stream_name: str = "blindspot"):
    """Center-pixel self-supervision on the noisy input itself.

    Each round samples patches, replaces every patch's center pixel with a
    uniformly drawn pixel from the center's 5x5 neighborhood (excluding the
    center, the blind-spot mask), and takes one Adam step pulling the
    prediction's center pixel toward the patch's original center value.
    Single noisy pixels make a high-variance target, which is why this
    naive integration degrades a pre-trained denoiser.
    """
    if n_rounds < 0:
        raise DataError("n_rounds must be >= 0")
    half = NEIGHBORHOOD // 2
    if patch_size < NEIGHBORHOOD:
        raise DataError(f"patch size {patch_size} smaller than the "
                        f"{NEIGHBORHOOD}x{NEIGHBORHOOD} neighborhood")
    if min(y.height, y.width) < patch_size:
        raise DataError("image smaller than the sampling patch")
    offsets = [(dy, dx)
               for dy in range(-half, half + 1)
               for dx in range(-half, half + 1)
               if (dy, dx) != (0, 0)]
    stream = rng.stream(stream_name)
    theta = theta_init.copy()
    state = AdamState.init(theta, lr=lr)
    report = AdaptReport()
    y_t = to_tensor(y)
    chans = y.channels
    center = patch_size // 2
    for n in range(1, n_rounds + 1):
        t_start = time.perf_counter()
        tops = stream.integers(0, y.height - patch_size + 1, size=batch_size)
        lefts = stream.integers(0, y.width - patch_size + 1, size=batch_size)
        picks = stream.integers(0, len(offsets), size=batch_size)
        batch = np.empty((batch_size, chans, patch_size, patch_size),
                         dtype=np.float32)
        targets = np.empty((batch_size, chans), dtype=np.float32)
        for b in range(batch_size):
            crop = y.data[tops[b]:tops[b] + patch_size,
                          lefts[b]:lefts[b] + patch_size]
            dy, dx = offsets[int(picks[b])]
            patch = np.ascontiguousarray(crop.transpose(2, 0, 1))
            targets[b] = crop[center, center]
            patch[:, center, center] = crop[center + dy, center + dx]
            batch[b] = patch
        xhat, tape = network_forward(theta, batch)
        pred = xhat[:, :, center, center]
        diff = pred - targets
        value = float(np.mean(diff.astype(np.float64) ** 2))
        if not np.isfinite(value):
            raise NumericError(f"blind-spot adaptation diverged at round {n}")
        grad = np.zeros_like(xhat)
        grad[:, :, center, center] = diff * (2.0 / diff.size)
        grads = network_backward(tape, grad)
        theta, state = adam_step(theta, grads, state)
        report.losses.append(value)
        report.sigmas.append(0.0)
        report.scales.append(1.0)
        if ground_truth is not None:
            current = clip01(from_tensor(network_infer(theta, y_t)))
            report.psnrs.append(psnr(ground_truth, current))
        else:
            report.psnrs.append(None)
        report.wall_ms.append((time.perf_counter() - t_start) * 1e3)
    x_tilde = clip01(from_tensor(network_infer(theta, y_t)))
    return x_tilde, report
