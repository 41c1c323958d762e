"""Two-phase self-supervised denoising with meta-trained fast adaptation.

A pre-trained residual conv-net g denoises the noisy input once; the live
network f is then fine-tuned on re-noised copies of that output, exploiting
the input's own patch recurrence.  Reptile meta-training places f's initial
parameters where a handful of such updates suffices.  Everything runs on a
self-contained numpy autodiff core.
"""

from .adaptation import (AdaptConfig, AdaptReport, MetaConfig, PretrainConfig,
                         adapt_denoise, blindspot_adapt, denoise_frozen,
                         finetune_baseline, meta_train_reptile,
                         pretrain_noise2truth)
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import DataError, NumericError, ShapeError
from .estimator import (EstimatorStats, PatchEnsemble, blindspot_sample_ceiling,
                        estimate_xtilde, inner_average_error,
                        mc_loss_decomposition, variance_reduction_check)
from .imaging import (ImageBuffer, NoiseSpec, ScalePolicy, add_gaussian_noise,
                      central_crop, clip01, extract_patches, from_tensor,
                      load_image, psnr, resize_bilinear, save_image, to_tensor)
from .nn import (AdamState, Arch, ConvLayer, NetworkParams, ParamGrads,
                 adam_step, conv2d_forward, init_params, interp_params,
                 l1_loss, mse_loss, network_backward, network_forward,
                 network_infer, params_equal)
from .rng import Rng
from .toydata import tiled_texture, toy_corpus

__version__ = "0.1.0"
