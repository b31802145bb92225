"""Training objectives as pure evaluation functions over supplied signals,
logits and feature maps. No gradients are computed anywhere; discriminator
outputs are inputs here, never produced here.

Reduction convention: each logit/feature array is reduced by its elementwise
mean before the per-discriminator average, so values are scale-free across
discriminator resolutions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsp
from .errors import ShapeError

__all__ = [
    "LossWeights",
    "disc_hinge_loss",
    "adv_hinge_loss",
    "feature_matching_loss",
    "mel_loss",
    "generator_total_loss",
]


@dataclass(frozen=True)
class LossWeights:
    quantizer: float = 1.0
    mel: float = 45.0
    adversarial: float = 1.0
    feature: float = 2.0

    def __post_init__(self):
        vals = (self.quantizer, self.mel, self.adversarial, self.feature)
        if any(v < 0 or not np.isfinite(v) for v in vals):
            raise ShapeError("loss weights must be finite and non-negative")


def _as_arrays(logits):
    return [np.asarray(a, dtype=np.float64) for a in logits]


def disc_hinge_loss(real, fake) -> float:
    """Mean over discriminators of hinge(1 - real) + hinge(1 + fake)."""
    real, fake = _as_arrays(real), _as_arrays(fake)
    if len(real) != len(fake) or not real:
        raise ShapeError(
            f"need matching non-empty logit sets, got {len(real)} vs {len(fake)}"
        )
    total = 0.0
    for r, f in zip(real, fake):
        total += np.mean(np.maximum(0.0, 1.0 - r)) + np.mean(np.maximum(0.0, 1.0 + f))
    return total / len(real)


def adv_hinge_loss(fake) -> float:
    """Mean over discriminators of hinge(1 - fake)."""
    fake = _as_arrays(fake)
    if not fake:
        raise ShapeError("need at least one discriminator's logits")
    return float(np.mean([np.mean(np.maximum(0.0, 1.0 - f)) for f in fake]))


def feature_matching_loss(real, fake) -> float:
    """Mean L1 distance between real/fake feature maps, averaged over the
    K discriminators and their L maps."""
    if len(real) != len(fake) or not real:
        raise ShapeError("feature map sets must be congruent and non-empty")
    total = 0.0
    n_maps = 0
    for r_maps, f_maps in zip(real, fake):
        if len(r_maps) != len(f_maps):
            raise ShapeError("feature map lists differ in length")
        for r, f in zip(r_maps, f_maps):
            r, f = np.asarray(r, dtype=np.float64), np.asarray(f, dtype=np.float64)
            if r.shape != f.shape:
                raise ShapeError(f"feature map shapes differ: {r.shape} vs {f.shape}")
            total += np.mean(np.abs(r - f))
            n_maps += 1
    if n_maps == 0:
        raise ShapeError("feature map sets are empty")
    return total / n_maps


def mel_loss(
    x: dsp.AudioBuffer,
    x_hat: dsp.AudioBuffer,
    stft_cfg: dsp.StftConfig = None,
    mel_cfg: dsp.MelConfig = dsp.MelConfig(),
) -> float:
    """Mean absolute difference between log-mel spectrograms."""
    if len(x) != len(x_hat):
        raise ShapeError(f"signal lengths differ: {len(x)} vs {len(x_hat)}")
    if x.sample_rate != x_hat.sample_rate:
        raise ShapeError("sample rates differ")
    if stft_cfg is None:
        stft_cfg = dsp.StftConfig()
    a = dsp.mel_spectrogram(x, stft_cfg, mel_cfg)
    b = dsp.mel_spectrogram(x_hat, stft_cfg, mel_cfg)
    return float(np.mean(np.abs(a - b)))


def generator_total_loss(
    quantizer: float,
    mel: float,
    adversarial: float,
    feature: float,
    weights: LossWeights = LossWeights(),
) -> float:
    return (
        weights.quantizer * quantizer
        + weights.mel * mel
        + weights.adversarial * adversarial
        + weights.feature * feature
    )
