"""Spectrogram augmentations: circular time shift, batch mixing, block masking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .audio import MelSpectrogram

MASK_FILLS = ("mean", "zero")


@dataclass(frozen=True)
class AugmentConfig:
    mix_coeff_min: float = 0.6
    mix_coeff_max: float = 1.0
    sa_blocks: int = 3
    sa_freq_width: int = 30
    sa_time_width: int = 10
    time_shift: bool = True
    mix: bool = True
    spec_augment: bool = True
    mask_fill: str = "mean"

    def __post_init__(self):
        if not 0 <= self.mix_coeff_min <= self.mix_coeff_max <= 1:
            raise ValueError("need 0 <= mix_coeff_min <= mix_coeff_max <= 1")
        if self.sa_blocks < 0 or self.sa_freq_width < 0 or self.sa_time_width < 0:
            raise ValueError("SpecAugment block count and widths must be non-negative")
        if self.mask_fill not in MASK_FILLS:
            raise ValueError(f"mask_fill must be one of {MASK_FILLS}")


def time_shift(spec: MelSpectrogram, shift: int) -> MelSpectrogram:
    """out[:, t] = in[:, (t - shift) mod T]."""
    return MelSpectrogram(np.roll(spec.values, int(shift), axis=1), spec.hop_s)


def mix(spec_a: MelSpectrogram, spec_b: MelSpectrogram, coeff: float) -> MelSpectrogram:
    if spec_a.shape != spec_b.shape:
        raise ValueError(f"cannot mix spectrograms of shapes {spec_a.shape} and {spec_b.shape}")
    if not 0 <= coeff <= 1:
        raise ValueError("mixing coefficient must lie in [0, 1]")
    a, b = spec_a.values, spec_b.values
    # where a == b the affine combination is a itself; keep it exact
    return MelSpectrogram(np.where(a == b, a, coeff * a + (1.0 - coeff) * b), spec_a.hop_s)


def mask_blocks(spec: MelSpectrogram, cfg: AugmentConfig, rng: np.random.Generator):
    """Sample SpecAugment blocks; returns (freq_starts, time_starts)."""
    n_mels, n_frames = spec.shape
    if cfg.sa_freq_width > n_mels or cfg.sa_time_width > n_frames:
        raise ValueError(
            f"mask widths ({cfg.sa_freq_width}, {cfg.sa_time_width}) exceed spectrogram {spec.shape}"
        )
    freq = rng.integers(0, n_mels - cfg.sa_freq_width + 1, size=cfg.sa_blocks)
    time = rng.integers(0, n_frames - cfg.sa_time_width + 1, size=cfg.sa_blocks)
    return freq, time


def spec_augment(spec: MelSpectrogram, cfg: AugmentConfig,
                 rng: np.random.Generator) -> MelSpectrogram:
    """Overwrite ``sa_blocks`` frequency bands and time blocks with the fill value."""
    if cfg.sa_blocks == 0:
        return spec
    freq, time = mask_blocks(spec, cfg, rng)
    fill = spec.values.mean() if cfg.mask_fill == "mean" else 0.0
    out = spec.values.copy()
    for f0 in freq:
        out[f0:f0 + cfg.sa_freq_width, :] = fill
    for t0 in time:
        out[:, t0:t0 + cfg.sa_time_width] = fill
    return MelSpectrogram(out, spec.hop_s)


def augment_view(spec: MelSpectrogram, batch_pool: Sequence[MelSpectrogram],
                 cfg: AugmentConfig, rng: np.random.Generator) -> MelSpectrogram:
    if cfg.time_shift:
        spec = time_shift(spec, int(rng.integers(0, spec.n_frames)))
    if cfg.mix:
        if len(batch_pool) == 0:
            raise ValueError("mixing is enabled but the batch pool is empty")
        partner = batch_pool[int(rng.integers(0, len(batch_pool)))]
        spec = mix(spec, partner, float(rng.uniform(cfg.mix_coeff_min, cfg.mix_coeff_max)))
    if cfg.spec_augment:
        spec = spec_augment(spec, cfg, rng)
    return spec


def make_views(spec1: MelSpectrogram, spec2: MelSpectrogram,
               batch_pool: Sequence[MelSpectrogram], cfg: AugmentConfig,
               rng: np.random.Generator) -> tuple[MelSpectrogram, MelSpectrogram]:
    """Two independently augmented views: shift, then mix, then mask."""
    return (augment_view(spec1, batch_pool, cfg, rng),
            augment_view(spec2, batch_pool, cfg, rng))
