"""Training and evaluation windows: temporal proximity pairs, fixed chunks, activation scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import AudioClip, MelSpectrogram, pad_circular


class ScoreFileError(ValueError):
    pass


@dataclass(frozen=True)
class Window:
    start_sample: int
    length_samples: int
    source: AudioClip

    def __post_init__(self):
        if self.start_sample < 0 or self.length_samples <= 0:
            raise ValueError("window needs start >= 0 and positive length")
        if self.start_sample >= len(self.source):
            raise ValueError("window starts past the end of its clip")

    @property
    def end_sample(self) -> int:
        return self.start_sample + self.length_samples

    def unpadded(self) -> np.ndarray:
        return self.source.samples[self.start_sample:self.end_sample]

    def extract(self) -> AudioClip:
        """Window content; a tail shorter than the window is wrapped circularly."""
        piece = AudioClip(self.unpadded(), self.source.sample_rate_hz)
        return pad_circular(piece, self.length_samples / self.source.sample_rate_hz)


@dataclass(frozen=True)
class ActivationScore:
    window_index: int
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"score for window {self.window_index} is not finite")


def overlap_fraction(a: Window, b: Window) -> float:
    shared = min(a.end_sample, b.end_sample) - max(a.start_sample, b.start_sample)
    return max(0, shared) / a.length_samples


def temporal_proximity_pair(clip: AudioClip, window_s: float, min_overlap: float,
                            rng: np.random.Generator) -> tuple[Window, Window]:
    """Two equal-length windows overlapping by at least ``min_overlap`` of their length.

    The first start is uniform over the clip; the second is uniform over the
    starts that satisfy the overlap constraint around it.
    """
    if not 0 <= min_overlap < 1:
        raise ValueError("min_overlap must lie in [0, 1)")
    length = int(round(window_s * clip.sample_rate_hz))
    if len(clip) < length:
        raise ValueError(
            f"clip of {len(clip)} samples is shorter than the {length}-sample window; pad it first"
        )
    last = len(clip) - length
    start1 = int(rng.integers(0, last + 1))
    if min_overlap == 0:
        lo, hi = 0, last
    else:
        reach = int(math.floor((1.0 - min_overlap) * length))
        lo, hi = max(0, start1 - reach), min(last, start1 + reach)
    start2 = int(rng.integers(lo, hi + 1))
    return Window(start1, length, clip), Window(start2, length, clip)


def chunk(clip: AudioClip, window_s: float) -> list[Window]:
    """Consecutive non-overlapping windows covering the clip; the last may be partial."""
    length = int(round(window_s * clip.sample_rate_hz))
    count = max(1, math.ceil(len(clip) / length))
    return [Window(i * length, length, clip) for i in range(count)]


def energy_scorer(spec: MelSpectrogram, window_index: int = 0) -> ActivationScore:
    return ActivationScore(window_index, float(np.mean(spec.values)))


def load_external_scores(path, expected_count: int) -> list[ActivationScore]:
    """Read one decimal per line, order-aligned with :func:`chunk` output."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if len(lines) != expected_count:
        raise ScoreFileError(
            f"{path}: expected {expected_count} scores, found {len(lines)}"
        )
    scores = []
    for lineno, line in enumerate(lines, start=1):
        try:
            value = float(line.strip())
        except ValueError:
            raise ScoreFileError(f"{path}: line {lineno} is not a number: {line!r}") from None
        if not math.isfinite(value):
            raise ScoreFileError(f"{path}: line {lineno} is not finite")
        scores.append(ActivationScore(lineno - 1, value))
    return scores


def select_by_activation(scores: Sequence[ActivationScore | float]) -> int:
    """Index of the highest score, lowest index on ties."""
    if len(scores) == 0:
        raise ValueError("cannot select from an empty score list")
    values = [s.score if isinstance(s, ActivationScore) else float(s) for s in scores]
    return int(np.argmax(values))
