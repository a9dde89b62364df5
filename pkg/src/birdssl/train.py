"""Self-supervised / SupCon training loop for the conv encoder."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import FrontendConfig, load_wav, mel_spectrogram, prepare_clip
from .augment import AugmentConfig, make_views
from .dataset import SCORES_SUFFIX, DatasetManifest
from .encoder import Encoder, EncoderConfig
from .objectives import OBJECTIVES, ObjectiveConfig, paired_objective, supcon_loss
from .optim import ParameterState, adamw_step
from .windows import chunk, energy_scorer, load_external_scores, select_by_activation, temporal_proximity_pair

logger = logging.getLogger(__name__)

SELECTIONS = ("temporal_proximity", "activation")
SCORERS = ("energy", "file")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    epochs: int = 20
    objective: str = "bt"
    objective_cfg: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    seed: int = 0
    selection: str = "temporal_proximity"
    min_overlap: float = 0.6
    scorer: str = "energy"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}")
        if self.scorer not in SCORERS:
            raise ValueError(f"scorer must be one of {SCORERS}")
        if not 0 <= self.min_overlap < 1:
            raise ValueError("min_overlap must lie in [0, 1)")


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    mean_loss: float
    seconds: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.mean_loss:.9g}\t{self.seconds:.3f}"


def load_scores_for(path: Path, n_chunks: int):
    return load_external_scores(Path(str(path) + SCORES_SUFFIX), n_chunks)


class TrainingData:
    """Decoded training clips plus the per-file selected window for activation selection."""

    def __init__(self, manifest: DatasetManifest, cfg: TrainConfig, frontend: FrontendConfig):
        self.cfg = cfg
        self.frontend = frontend
        self.entries = manifest.split("train")
        if len(self.entries) < cfg.batch_size:
            raise TrainingError(
                f"{len(self.entries)} training files, fewer than batch_size={cfg.batch_size}"
            )
        labels = sorted({e.label for e in self.entries})
        self.label_index = {lab: i for i, lab in enumerate(labels)}
        self.clips = []
        self.selected = []
        for e in self.entries:
            path = manifest.resolve(e)
            try:
                clip = prepare_clip(load_wav(path), frontend)
            except (OSError, ValueError) as exc:
                raise TrainingError(f"cannot read training audio {path}: {exc}") from exc
            self.clips.append(clip)
            self.selected.append(self._select(clip, path) if cfg.selection == "activation" else None)

    def _select(self, clip, path):
        windows = chunk(clip, self.frontend.window_s)
        mels = [mel_spectrogram(w.extract(), self.frontend) for w in windows]
        if self.cfg.scorer == "file":
            scores = load_scores_for(path, len(windows))
        else:
            scores = [energy_scorer(m, i) for i, m in enumerate(mels)]
        return mels[select_by_activation(scores)]

    def __len__(self):
        return len(self.entries)

    def label(self, i: int) -> int:
        return self.label_index[self.entries[i].label]

    def window_pair(self, i: int, rng: np.random.Generator):
        if self.selected[i] is not None:
            return self.selected[i], self.selected[i]
        w1, w2 = temporal_proximity_pair(self.clips[i], self.frontend.window_s,
                                         self.cfg.min_overlap, rng)
        return (mel_spectrogram(w1.extract(), self.frontend),
                mel_spectrogram(w2.extract(), self.frontend))


def train_step(encoder: Encoder, state: ParameterState, x1: np.ndarray, x2: np.ndarray,
               cfg: TrainConfig, labels=None):
    """Forward both view batches, apply the objective, backprop and update.

    Returns ``(loss, new_state)``; the encoder is updated in place.
    """
    n = x1.shape[0]
    _, z, cache = encoder.forward(np.concatenate([x1, x2]), training=True)
    z = z.astype(np.float64)
    if cfg.objective == "supcon":
        out = supcon_loss(z, np.concatenate([labels, labels]), cfg.objective_cfg)
        grad = out.grad_z1
    else:
        out = paired_objective(cfg.objective)(z[:n], z[n:], cfg.objective_cfg)
        grad = np.concatenate([out.grad_z1, out.grad_z2])
    grads = encoder.backward(cache, grad_projection=grad)
    state = adamw_step(state, grads, cfg.learning_rate, cfg.weight_decay)
    encoder.commit_batch_stats(cache)
    encoder.set_params(state.values)
    return out.value, state


def train(manifest: DatasetManifest, cfg: TrainConfig, enc_cfg: EncoderConfig = EncoderConfig(),
          frontend: FrontendConfig = FrontendConfig(), augment: AugmentConfig = AugmentConfig(),
          encoder: Encoder | None = None, data: TrainingData | None = None):
    """Train an encoder; returns ``(encoder, [EpochLog, ...])``.

    Fully determined by ``cfg.seed``: initialisation uses the seed itself,
    epoch ``e`` draws its shuffle and augmentations from ``[seed, e]``.
    The trailing incomplete batch of each epoch is dropped.
    """
    if cfg.objective == "supcon":
        unlabeled = [e.path for e in manifest.split("train") if not e.label]
        if unlabeled:
            raise TrainingError(f"supcon needs labels; {len(unlabeled)} train entries have none "
                                f"(first: {unlabeled[0]})")
    data = data or TrainingData(manifest, cfg, frontend)
    encoder = encoder or Encoder.init(enc_cfg, cfg.seed)
    state = ParameterState.create(encoder.params)
    log = []
    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(data))
        losses = []
        for b in range(len(data) // cfg.batch_size):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            pairs = [data.window_pair(int(i), rng) for i in idx]
            pool = [p[0] for p in pairs]
            views = [make_views(s1, s2, pool, augment, rng) for s1, s2 in pairs]
            x1 = np.stack([v[0].values for v in views]).astype(np.float32)
            x2 = np.stack([v[1].values for v in views]).astype(np.float32)
            labels = np.array([data.label(int(i)) for i in idx])
            loss, state = train_step(encoder, state, x1, x2, cfg, labels)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            losses.append(loss)
        entry = EpochLog(epoch, float(np.mean(losses)), time.perf_counter() - tic)
        logger.info("epoch %d loss %.5f (%.1fs)", entry.epoch, entry.mean_loss, entry.seconds)
        log.append(entry)
    return encoder, log


def write_log(path, log):
    Path(path).write_text("".join(e.line() + "\n" for e in log), encoding="utf-8")
