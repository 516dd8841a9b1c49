"""Alias-free pooling by frequency-domain cropping, with the training,
attack, and analysis machinery needed to study it end to end on CPU.

The public surface is re-exported here; submodules stay importable for
the long tail (``flcpool.spectral.dft2`` and friends).
"""

from .tensor import DOUBLE, SINGLE, Rng, argmax_channel, circular_shift
from .spectral import (CutoffSpec, Layout, Spectrum, above_nyquist_energy,
                       centered_window, crop_center, fft2, ideal_lowpass,
                       ideal_lowpass_mask, ifft2, sinc_kernel,
                       zero_pad_center)
from .pooling import (PoolingKind, avg_pool2, bandlimited_upsample2,
                      blur_pool, dense_map, flc_pool, flc_pool_backward,
                      flc_plus_pool, highpass_pool, max_pool2, pool_backward,
                      pool_forward, strided_identity)
from .nn import (BatchNorm2d, Conv3x3, GlobalAvgPool, Linear, Mode, Network,
                 Pool, ReLU, SgdMomentum, accuracy, build_minicnn,
                 cross_entropy, cyclic_lr, parse_minicnn_descriptor)
from .attacks import (AttackConfig, Norm, confidence_stats, fast_fgsm, fgsm,
                      input_gradient, pgd, per_example_loss, softmax,
                      transfer_eval)
from .data import (DESK_TEST, DESK_TOTAL, DESK_TRAIN, DESK_VAL, Dataset,
                   FormatError, class_tones, load_cifar_binary, load_idx,
                   save_cifar_binary, synth_dataset)
from .training import (CoVerdict, EpochRecord, RunHistory, TrainConfig,
                       detect_catastrophic_overfitting, early_stop_monitor,
                       evaluate, load_checkpoint, save_checkpoint,
                       train_clean, train_fgsm_at)
from .analysis import (AliasingReport, PerturbationSpectrumReport,
                       ShiftConsistencyReport, emit_report,
                       layer_aliasing_trace, perturbation_spectrum_diff,
                       shift_consistency)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
