"""Audio front-end: WAV I/O, resampling, circular padding and log-mel features."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE
MELS_MAGIC = b"MELS"


class WavError(ValueError):
    """Base class for WAV decoding failures."""


class MalformedHeaderError(WavError):
    pass


class UnsupportedEncodingError(WavError):
    pass


class FrameTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("AudioClip needs a non-empty 1-D sample array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate_hz: int = 16000
    n_fft: int = 1024
    hop: int = 320
    n_mels: int = 128
    window_s: float = 5.0
    log_epsilon: float = 1e-5
    fmin_hz: float = 50.0
    fmax_hz: float = 8000.0

    def __post_init__(self):
        if not self.n_fft > self.hop > 0:
            raise ValueError("need n_fft > hop > 0")
        if not 0 < self.n_mels <= self.n_fft // 2 + 1:
            raise ValueError("need 0 < n_mels <= n_fft/2 + 1")
        if self.window_s <= 0 or self.log_epsilon <= 0:
            raise ValueError("window_s and log_epsilon must be positive")
        if not 0 <= self.fmin_hz < self.fmax_hz <= self.sample_rate_hz / 2:
            raise ValueError("need 0 <= fmin < fmax <= Nyquist")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_s * self.sample_rate_hz))


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray  # (n_mels, n_frames), log power
    hop_s: float

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[1] < 1:
            raise ValueError("mel spectrogram must be a 2-D matrix with at least one frame")
        object.__setattr__(self, "values", values)

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape


# ---------------------------------------------------------------------------
# WAV I/O
# ---------------------------------------------------------------------------


def _parse_fmt(chunk: bytes):
    if len(chunk) < 16:
        raise MalformedHeaderError("fmt chunk shorter than 16 bytes")
    fmt_tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", chunk[:16])
    if fmt_tag == _EXTENSIBLE:
        if len(chunk) < 40:
            raise MalformedHeaderError("truncated WAVE_FORMAT_EXTENSIBLE header")
        fmt_tag = struct.unpack("<H", chunk[24:26])[0]
    if channels < 1 or rate < 1 or block_align < 1:
        raise MalformedHeaderError("fmt chunk has zero channels, rate or block size")
    return fmt_tag, channels, rate, bits


def load_wav(path) -> AudioClip:
    """Decode a RIFF/WAVE file (PCM16 or float32) into a mono clip.

    Channels are averaged. Integer samples are scaled by 1/32768.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such audio file: {path}")
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedHeaderError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        size = struct.unpack("<I", raw[pos + 4:pos + 8])[0]
        body = raw[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < size:
                raise MalformedHeaderError(f"{path}: truncated fmt chunk")
            fmt = _parse_fmt(body)
        elif cid == b"data":
            data = body
            break
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise MalformedHeaderError(f"{path}: missing fmt chunk")
    if data is None:
        raise MalformedHeaderError(f"{path}: missing data chunk")

    fmt_tag, channels, rate, bits = fmt
    if fmt_tag == _PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif fmt_tag == _IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedEncodingError(
            f"{path}: unsupported encoding (format tag {fmt_tag}, {bits} bits)"
        )
    frame = dtype.itemsize * channels
    n_frames = len(data) // frame
    if n_frames == 0:
        raise MalformedHeaderError(f"{path}: empty data chunk")
    pcm = np.frombuffer(data[:n_frames * frame], dtype=dtype).reshape(n_frames, channels)
    samples = pcm.astype(np.float64).mean(axis=1) * scale
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip, encoding: str = "pcm16"):
    """Write a mono clip as PCM16 (clipped to [-1, 1)) or float32."""
    if encoding == "pcm16":
        pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
        fmt_tag, bits = _PCM, 16
    elif encoding == "float32":
        pcm = clip.samples.astype("<f4")
        fmt_tag, bits = _IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    data = pcm.tobytes()
    block = bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, 1, clip.sample_rate_hz,
                      clip.sample_rate_hz * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(data)) + data
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


# ---------------------------------------------------------------------------
# Signal conditioning
# ---------------------------------------------------------------------------


def resample(clip: AudioClip, target_hz: int) -> AudioClip:
    """Linear-interpolation resampler.

    Output length is ``round(len * target_hz / source_hz)``. Equal rates
    return the input clip unchanged.
    """
    if target_hz <= 0:
        raise ValueError("target_hz must be positive")
    if target_hz == clip.sample_rate_hz:
        return clip
    n_out = max(1, int(round(len(clip) * target_hz / clip.sample_rate_hz)))
    positions = np.arange(n_out) * (clip.sample_rate_hz / target_hz)
    out = np.interp(positions, np.arange(len(clip)), clip.samples)
    return AudioClip(out, target_hz)


def pad_circular(clip: AudioClip, duration_s: float) -> AudioClip:
    """Wrap a short clip around itself up to ``duration_s``; longer clips pass through."""
    target = int(round(duration_s * clip.sample_rate_hz))
    if len(clip) >= target:
        return clip
    return AudioClip(np.resize(clip.samples, target), clip.sample_rate_hz)


# ---------------------------------------------------------------------------
# Mel features
# ---------------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: FrontendConfig) -> np.ndarray:
    """The n_mels + 2 HTK-mel-spaced edge frequencies; band i peaks at edges[i + 1]."""
    mels = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2)
    return mel_to_hz(mels)


@lru_cache(maxsize=8)
def mel_filterbank(cfg: FrontendConfig) -> np.ndarray:
    """Triangular HTK filterbank of shape (n_mels, n_fft // 2 + 1).

    Each triangle is scaled by 2 / (upper - lower) so its continuous area
    is one.
    """
    edges = mel_band_edges(cfg)
    freqs = np.fft.rfftfreq(cfg.n_fft, d=1.0 / cfg.sample_rate_hz)
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (center - lo)
    falling = (hi - freqs) / (hi - center)
    tri = np.maximum(0.0, np.minimum(rising, falling))
    fb = tri * (2.0 / (hi - lo))
    fb.setflags(write=False)
    return fb


def num_frames(n_samples: int, cfg: FrontendConfig) -> int:
    return 1 + (n_samples - cfg.n_fft) // cfg.hop


def mel_spectrogram(clip: AudioClip, cfg: FrontendConfig = FrontendConfig()) -> MelSpectrogram:
    """Log-mel spectrogram from a Hann-windowed STFT with no centre padding."""
    if clip.sample_rate_hz != cfg.sample_rate_hz:
        raise ValueError(
            f"clip is at {clip.sample_rate_hz} Hz, front-end expects {cfg.sample_rate_hz} Hz"
        )
    if len(clip) < cfg.n_fft:
        raise FrameTooShortError(
            f"clip has {len(clip)} samples, fewer than one {cfg.n_fft}-sample frame"
        )
    frames = np.lib.stride_tricks.sliding_window_view(clip.samples, cfg.n_fft)[::cfg.hop]
    spectrum = np.fft.rfft(frames * np.hanning(cfg.n_fft + 1)[:-1], axis=1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    mel = mel_filterbank(cfg) @ power.T
    return MelSpectrogram(np.log(mel + cfg.log_epsilon), cfg.hop / cfg.sample_rate_hz)


def prepare_clip(clip: AudioClip, cfg: FrontendConfig) -> AudioClip:
    """Resample to the front-end rate and circularly pad to one window."""
    return pad_circular(resample(clip, cfg.sample_rate_hz), cfg.window_s)


# ---------------------------------------------------------------------------
# MELS dump format
# ---------------------------------------------------------------------------


def write_mels(path, spec: MelSpectrogram):
    values = np.ascontiguousarray(spec.values, dtype="<f4")
    f, t = values.shape
    Path(path).write_bytes(MELS_MAGIC + struct.pack("<II", f, t) + values.tobytes())


def read_mels(path, hop_s: float = 0.02) -> MelSpectrogram:
    raw = Path(path).read_bytes()
    if raw[:4] != MELS_MAGIC or len(raw) < 12:
        raise ValueError(f"{path}: not a MELS dump")
    f, t = struct.unpack("<II", raw[4:12])
    if len(raw) != 12 + 4 * f * t:
        raise ValueError(f"{path}: expected {f}x{t} floats, file size disagrees")
    values = np.frombuffer(raw[12:], dtype="<f4").reshape(f, t).astype(np.float32)
    return MelSpectrogram(values, hop_s)
