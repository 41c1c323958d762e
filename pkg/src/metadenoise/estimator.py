"""Monte-Carlo lab for the statistical claims behind the two-phase loss.

Three claims get measured rather than assumed:

* the Noise2Noise decomposition
  E||f(Y_i) - Y_j||^2 = E||f(Y_i) - X||^2 + E||Y_j - X||^2
  for independently corrupted copies of the same clean patch;
* averaging N re-noised copies of a denoised patch converges to the
  denoised patch at rate sigma_r^2 / N, and averaging M recurring patches
  divides the estimator variance by M;
* the blind-spot target (a noisy neighbor pixel) is a higher-variance
  regression target than the two-phase target (the denoised center).

Residual noise of a denoiser g is measured empirically (g(Y) - X), never
assumed i.i.d.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

_CHUNK = 4096


@dataclass
class PatchEnsemble:
    """M noisy instances of one recurring clean patch.

    With delta255 == 0 every instance shares identical clean content (exact
    recurrence); delta255 > 0 perturbs each instance's clean patch to expose
    the bias that approximate recurrence introduces.
    """

    clean: np.ndarray            # (H, W) float
    m: int
    sigma_n255: float
    sigma_r255: float
    delta255: float = 0.0

    def __post_init__(self):
        if self.m < 1:
            raise DataError("recurrence count M must be >= 1")
        self.clean = np.asarray(self.clean, dtype=np.float64)


@dataclass
class EstimatorStats:
    """Empirical mean/variance of the two-phase estimator's samples."""

    mean_patch: np.ndarray
    pixel_variance: np.ndarray
    m: int
    n: int


@dataclass
class VarianceRow:
    m: int
    n: float                    # inf marks the N -> infinity law
    sigma_n255: float
    sigma_r255: float
    var_empirical: float
    var_predicted: float


def box_filter3(y):
    """3x3 box mean with edge replication; the lab's stand-in denoiser."""
    yp = np.pad(y, [(1, 1), (1, 1)] + [(0, 0)] * (y.ndim - 2), mode="edge")
    out = np.zeros_like(y, dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            out += yp[dy:dy + y.shape[0], dx:dx + y.shape[1]]
    return out / 9.0


def mc_loss_decomposition(f, sigma255, trials, stream, clean):
    """Monte-Carlo estimate of both sides of the Noise2Noise identity.

    f must map a (..., H, W) stack to the same shape (applied per trial).
    Returns per-pixel means (lhs, term1, term2) so that for zero-mean
    independent noise lhs ~= term1 + term2.
    """
    if trials < 100:
        raise DataError("decomposition needs at least 100 trials")
    x = np.asarray(clean, dtype=np.float64)
    sigma = sigma255 / 255.0
    lhs = t1 = t2 = 0.0
    done = 0
    npix = x.size
    while done < trials:
        chunk = min(_CHUNK, trials - done)
        ni = stream.normal((chunk,) + x.shape, sigma)
        nj = stream.normal((chunk,) + x.shape, sigma)
        yi = x[None] + ni
        yj = x[None] + nj
        fi = f(yi)
        lhs += float(np.sum((fi - yj) ** 2))
        t1 += float(np.sum((fi - x[None]) ** 2))
        t2 += float(np.sum((yj - x[None]) ** 2))
        done += chunk
    norm = trials * npix
    return lhs / norm, t1 / norm, t2 / norm


def estimate_xtilde(ensemble: PatchEnsemble, g, n_draws, stream):
    """The two-phase estimator: mean over M instances of N re-noised copies.

    Per instance i: Y_i = X_i + n, ybar_i = g(Y_i), Z_i^n = ybar_i + r.
    The estimate is the grand mean of all M*N Z samples; as N grows the
    inner mean converges to ybar_i.
    """
    if n_draws < 1:
        raise DataError("need at least one re-noise draw")
    x = ensemble.clean
    sig_n = ensemble.sigma_n255 / 255.0
    sig_r = ensemble.sigma_r255 / 255.0
    sig_d = ensemble.delta255 / 255.0
    samples = np.empty((ensemble.m, n_draws) + x.shape)
    for i in range(ensemble.m):
        clean_i = x + stream.normal(x.shape, sig_d) if sig_d else x
        y_i = clean_i + stream.normal(x.shape, sig_n)
        ybar_i = g(y_i)
        samples[i] = ybar_i[None] + stream.normal((n_draws,) + x.shape, sig_r)
    flat = samples.reshape(ensemble.m * n_draws, *x.shape)
    return EstimatorStats(mean_patch=flat.mean(axis=0),
                          pixel_variance=flat.var(axis=0),
                          m=ensemble.m, n=n_draws)


def inner_average_error(sigma_r255, n_values, trials, stream,
                        patch_shape=(8, 8)):
    """Mean per-pixel squared error of the inner mean vs its target.

    Directly measures ||mean_n(ybar + r^n) - ybar||^2 averaged over pixels
    and trials; the law is sigma_r^2 / N.
    """
    sigma = sigma_r255 / 255.0
    rows = []
    for n in n_values:
        errs = np.empty(trials)
        for t in range(trials):
            r = stream.normal((n,) + tuple(patch_shape), sigma)
            errs[t] = float(np.mean(r.mean(axis=0) ** 2))
        rows.append((int(n), float(errs.mean())))
    return rows


def loglog_slope(pairs):
    """Least-squares slope of log(err) vs log(n)."""
    xs = np.log([p[0] for p in pairs])
    ys = np.log([p[1] for p in pairs])
    return float(np.polyfit(xs, ys, 1)[0])


def variance_reduction_check(sigma_n255, sigma_residual255, m_values, trials,
                             stream):
    """Empirical vs predicted Var(x_tilde) = Var(n')/M in the N->inf limit.

    Simulates the limit directly: x_tilde - X = mean of M independent
    residual-noise draws.  sigma_residual == 0 returns exact zero rows.
    """
    if trials < 100:
        raise DataError("variance check needs at least 100 trials")
    sig = sigma_residual255 / 255.0
    rows = []
    for m in m_values:
        if m < 1:
            raise DataError("M values must be >= 1")
        if sig == 0.0:
            rows.append(VarianceRow(int(m), float("inf"), sigma_n255,
                                    sigma_residual255, 0.0, 0.0))
            continue
        draws = stream.normal((trials, int(m)), sig)
        est = draws.mean(axis=1)
        rows.append(VarianceRow(int(m), float("inf"), sigma_n255,
                                sigma_residual255,
                                float(est.var()), sig * sig / m))
    return rows


def blindspot_sample_ceiling(patch, sigma255, trials, stream, g=box_filter3):
    """Variance of the blind-spot target vs the two-phase target.

    The blind-spot regression target is a noisy pixel drawn from the
    center's 5x5 ring: its variance stacks the full noise power on top of
    the clean signal variation across the ring.  The two-phase target is
    the denoised center g(Y)[center], whose variance is the (measured)
    residual noise of g.  The patch is quantized to 8-bit levels first,
    matching the discrete sample budget the blind-spot scheme draws from.
    """
    x = np.round(np.asarray(patch, dtype=np.float64) * 255.0) / 255.0
    if x.ndim != 2 or min(x.shape) < 5:
        raise DataError("need a 2-d patch of at least 5x5")
    sigma = sigma255 / 255.0
    cy, cx = x.shape[0] // 2, x.shape[1] // 2
    ring = [(cy + dy, cx + dx)
            for dy in range(-2, 3) for dx in range(-2, 3)
            if (dy, dx) != (0, 0)]
    neighbor_samples = np.empty(trials)
    twophase_samples = np.empty(trials)
    picks = stream.integers(0, len(ring), size=trials)
    for t in range(trials):
        y = x + stream.normal(x.shape, sigma) if sigma else x
        ny, nx = ring[int(picks[t])]
        neighbor_samples[t] = y[ny, nx]
        twophase_samples[t] = g(y)[cy, cx]
    return float(neighbor_samples.var()), float(twophase_samples.var())


def measure_residual_noise(g, clean, sigma255, trials, stream):
    """Empirical std (0-255 scale) of g's residual n' = g(X + n) - X."""
    x = np.asarray(clean, dtype=np.float64)
    sigma = sigma255 / 255.0
    acc = 0.0
    for _ in range(trials):
        y = x + stream.normal(x.shape, sigma)
        acc += float(np.mean((g(y) - x) ** 2))
    return float(np.sqrt(acc / trials) * 255.0)
