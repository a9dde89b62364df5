"""Dataset manifests and the synthetic chirp-in-noise corpus."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioClip, write_wav

SPLITS = ("train", "val", "test")
MANIFEST_HEADER = ("path", "label", "split")
SCORES_SUFFIX = ".scores"


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    split: str


@dataclass
class DatasetManifest:
    entries: list
    root: Path = Path(".")

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.split not in SPLITS:
                raise ManifestError(f"{e.path}: unknown split {e.split!r}")
            if e.path in seen:
                raise ManifestError(f"duplicate manifest path {e.path}")
            seen.add(e.path)

    def split(self, name: str) -> list:
        return [e for e in self.entries if e.split == name]

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(c.strip() for c in rows[0]) != MANIFEST_HEADER:
        raise ManifestError(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ManifestError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        entries.append(ManifestEntry(*(c.strip() for c in row)))
    return DatasetManifest(entries, path.parent)


def write_manifest(path, manifest: DatasetManifest):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for e in manifest.entries:
            writer.writerow((e.path, e.label, e.split))


def group_by_label(entries) -> dict:
    """label -> entries, labels in sorted order."""
    groups = {}
    for e in entries:
        groups.setdefault(e.label, []).append(e)
    return {k: groups[k] for k in sorted(groups)}


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

PATTERNS = ("up", "down", "trill", "syllables")
HARMONICS = (1, 2, 3)
HARMONIC_AMPS = (1.0, 0.5, 0.25)
CALL_DURATION_S = (3.0, 4.5)


@dataclass(frozen=True)
class ChirpClass:
    name: str
    base_hz: float
    pattern: str
    span: float  # relative frequency excursion
    rate_hz: float  # trill / syllable repetition rate
    duration_s: float


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS noise with a 1/f power spectrum."""
    spectrum = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spectrum.size, dtype=np.float64)
    f[0] = np.inf
    noise = np.fft.irfft(spectrum / np.sqrt(f), n)
    return noise / np.sqrt(np.mean(noise ** 2))


def chirp_frequency(cls: ChirpClass, t: np.ndarray, base_hz: float) -> np.ndarray:
    u = t / cls.duration_s
    if cls.pattern == "up":
        return base_hz * (1 + cls.span * u)
    if cls.pattern == "down":
        return base_hz * (1 + cls.span * (1 - u))
    if cls.pattern == "trill":
        return base_hz * (1 + 0.5 * cls.span * (1 + np.sin(2 * np.pi * cls.rate_hz * t)))
    # syllables: short rising notes repeated at rate_hz
    phase = (t * cls.rate_hz) % 1.0
    return base_hz * (1 + cls.span * phase)


def chirp_envelope(cls: ChirpClass, t: np.ndarray) -> np.ndarray:
    ramp = np.clip(np.minimum(t, cls.duration_s - t) / 0.02, 0, 1)
    if cls.pattern == "syllables":
        phase = (t * cls.rate_hz) % 1.0
        ramp = ramp * (phase < 0.6) * np.sin(np.pi * np.clip(phase / 0.6, 0, 1))
    return ramp


def render_chirp(cls: ChirpClass, rate: int, base_hz: float) -> np.ndarray:
    t = np.arange(int(round(cls.duration_s * rate))) / rate
    freq = np.minimum(chirp_frequency(cls, t, base_hz), 0.45 * rate)
    phase = 2 * np.pi * np.cumsum(freq) / rate
    tone = sum(a * np.sin(h * phase) * (h * freq < 0.45 * rate)
               for h, a in zip(HARMONICS, HARMONIC_AMPS))
    return chirp_envelope(cls, t) * tone


def make_classes(n_classes: int, rng: np.random.Generator) -> list:
    """Classes with geometrically spaced base frequencies in 500-6000 Hz."""
    bases = np.geomspace(500.0, 6000.0, n_classes) if n_classes > 1 else np.array([1500.0])
    classes = []
    for i, base in enumerate(bases):
        pattern = PATTERNS[i % len(PATTERNS)]
        classes.append(ChirpClass(
            name=f"class{i:02d}",
            base_hz=float(base),
            pattern=pattern,
            span=float(rng.uniform(0.3, 0.8)),
            rate_hz=float(rng.uniform(3.0, 9.0)),
            duration_s=float(rng.uniform(*CALL_DURATION_S)),
        ))
    return classes


def synth_clip(cls: ChirpClass, rng: np.random.Generator, rate: int = 16000,
               chunk_s: float = 5.0, duration_range=(8.0, 15.0), snr_db_range=(0.0, 10.0)):
    """One recording: a chirp placed inside a single chunk of pink noise.

    Returns the clip and the per-chunk chirp-presence scores.
    """
    n = int(round(rng.uniform(*duration_range) * rate))
    noise_rms = rng.uniform(0.01, 0.05)
    audio = noise_rms * pink_noise(n, rng)
    chirp = render_chirp(cls, rate, cls.base_hz * rng.uniform(0.97, 1.03))
    chunk_len = int(round(chunk_s * rate))
    n_chunks = math.ceil(n / chunk_len)
    fits = [i for i in range(n_chunks) if min(n, (i + 1) * chunk_len) - i * chunk_len >= chirp.size]
    which = int(rng.choice(fits))
    room = min(n, (which + 1) * chunk_len) - which * chunk_len - chirp.size
    start = which * chunk_len + int(rng.integers(0, room + 1))
    snr_db = rng.uniform(*snr_db_range)
    active = chirp[np.abs(chirp) > 0]
    gain = noise_rms * 10 ** (snr_db / 20) / np.sqrt(np.mean(active ** 2))
    audio[start:start + chirp.size] += gain * chirp
    peak = np.max(np.abs(audio))
    if peak > 0.99:
        audio *= 0.99 / peak
    scores = np.zeros(n_chunks)
    scores[which] = 1.0
    return AudioClip(audio, rate), scores


def synth_dataset(out_dir, n_train_classes: int = 12, n_test_classes: int = 6,
                  files_per_class: int = 20, seed: int = 0, rate: int = 16000) -> DatasetManifest:
    """Write WAVs, per-chunk score files and ``manifest.csv``; train/test classes are disjoint."""
    if min(n_train_classes, n_test_classes, files_per_class) < 0:
        raise ValueError("class and file counts must be non-negative")
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_classes = n_train_classes + n_test_classes
    classes = make_classes(n_classes, rng)
    order = rng.permutation(n_classes)
    split_of = {int(c): ("train" if rank < n_train_classes else "test") for rank, c in enumerate(order)}
    entries = []
    for ci, cls in enumerate(classes):
        for fi in range(files_per_class):
            clip, scores = synth_clip(cls, rng, rate)
            rel = f"audio/{cls.name}_{fi:03d}.wav"
            write_wav(out_dir / rel, clip)
            (out_dir / (rel + SCORES_SUFFIX)).write_text(
                "".join(f"{s:.6f}\n" for s in scores), encoding="utf-8")
            entries.append(ManifestEntry(rel, cls.name, split_of[ci]))
    manifest = DatasetManifest(entries, out_dir)
    write_manifest(out_dir / "manifest.csv", manifest)
    return manifest
