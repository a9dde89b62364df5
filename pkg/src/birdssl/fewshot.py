"""Episodic n-way k-shot evaluation with a nearest-prototype classifier."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Hashable, Mapping, Optional, Sequence

import numpy as np

from .audio import AudioClip, FrontendConfig, load_wav, mel_spectrogram, prepare_clip
from .dataset import SCORES_SUFFIX, DatasetManifest, group_by_label
from .windows import (ActivationScore, chunk, energy_scorer, load_external_scores,
                      select_by_activation)

STRATEGIES = ("chunk_average", "activation_select")
SCORERS = ("energy", "file")
EMBD_MAGIC = b"EMBD"
CI_Z = 1.96


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    n_way: int = 5
    k_shot: int = 1
    n_query: int = 5
    n_tasks: int = 500
    seed: int = 0
    embedding_strategy: str = "chunk_average"
    scorer: str = "energy"

    def __post_init__(self):
        if self.n_way < 2 or self.k_shot < 1 or self.n_query < 1 or self.n_tasks < 1:
            raise ValueError("need n_way >= 2, k_shot >= 1, n_query >= 1, n_tasks >= 1")
        if self.embedding_strategy not in STRATEGIES:
            raise ValueError(f"embedding_strategy must be one of {STRATEGIES}")
        if self.scorer not in SCORERS:
            raise ValueError(f"scorer must be one of {SCORERS}")


@dataclass
class Episode:
    """Support and query items as ``(item, class_id)`` pairs.

    Items are whatever the sampler was given (file entries), or embedding
    vectors once the episode has been embedded.
    """
    support: list
    query: list

    @property
    def class_ids(self) -> list:
        return sorted({c for _, c in self.support})


@dataclass(frozen=True)
class Prototype:
    class_id: int
    vector: np.ndarray


def clip_embedding(clip: AudioClip, encoder, strategy: str = "chunk_average",
                   frontend: FrontendConfig = FrontendConfig(),
                   scores: Optional[Sequence[ActivationScore | float]] = None) -> np.ndarray:
    """One D-vector per recording from its 5 s chunks.

    ``chunk_average`` averages chunk embeddings; ``activation_select`` keeps
    the highest-scoring chunk, using ``scores`` if given and the energy
    scorer otherwise.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown embedding strategy {strategy!r}")
    clip = prepare_clip(clip, frontend)
    mels = [mel_spectrogram(w.extract(), frontend) for w in chunk(clip, frontend.window_s)]
    if strategy == "activation_select":
        if scores is None:
            scores = [energy_scorer(m, i) for i, m in enumerate(mels)]
        elif len(scores) != len(mels):
            raise ValueError(f"got {len(scores)} scores for {len(mels)} chunks")
        mels = [mels[select_by_activation(scores)]]
    emb = encoder.embed(np.stack([m.values for m in mels]))
    return np.asarray(emb, dtype=np.float64).mean(axis=0)


def sample_episode(groups: Mapping[Hashable, Sequence], cfg: EvalConfig,
                   rng: np.random.Generator) -> Episode:
    """Draw ``n_way`` classes, then ``k_shot + n_query`` distinct items per class.

    ``groups`` maps class ids to their items; the first ``k_shot`` draws of
    each class are support.
    """
    need = cfg.k_shot + cfg.n_query
    eligible = [c for c in groups if len(groups[c]) >= need]
    if len(eligible) < cfg.n_way:
        raise InsufficientDataError(
            f"{cfg.n_way}-way {cfg.k_shot}-shot with {cfg.n_query} queries needs "
            f"{cfg.n_way} classes with >= {need} files; {len(eligible)} available"
        )
    chosen = rng.choice(len(eligible), size=cfg.n_way, replace=False)
    support, query = [], []
    for ci in sorted(chosen):
        cls = eligible[ci]
        items = groups[cls]
        picks = rng.choice(len(items), size=need, replace=False)
        support += [(items[i], cls) for i in picks[:cfg.k_shot]]
        query += [(items[i], cls) for i in picks[cfg.k_shot:]]
    return Episode(support, query)


def compute_prototypes(support) -> list:
    by_class = {}
    for vec, cls in support:
        by_class.setdefault(cls, []).append(np.asarray(vec, dtype=np.float64))
    return [Prototype(c, np.mean(by_class[c], axis=0)) for c in sorted(by_class)]


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    # exact zero vectors stay zero
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


def center_and_normalize(prototypes, queries):
    """Subtract the mean prototype from everything, then l2-normalise each vector."""
    if len(prototypes) == 0:
        raise ValueError("need at least one prototype")
    protos = np.stack([p.vector for p in prototypes])
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    mu = protos.mean(axis=0)
    centered = _unit_rows(protos - mu)
    return ([Prototype(p.class_id, v) for p, v in zip(prototypes, centered)],
            _unit_rows(q - mu))


def classify(query, prototypes) -> Hashable:
    """Class of the Euclidean-nearest prototype; ties go to the lowest class id."""
    return classify_batch(np.atleast_2d(query), prototypes)[0]


def classify_batch(queries: np.ndarray, prototypes) -> list:
    ordered = sorted(prototypes, key=lambda p: p.class_id)
    protos = np.stack([p.vector for p in ordered])
    d2 = ((queries[:, None, :] - protos[None, :, :]) ** 2).sum(axis=2)
    return [ordered[i].class_id for i in np.argmin(d2, axis=1)]


def ci95(task_accuracies) -> float:
    """Normal-approximation 95% half-width with the sample (n - 1) standard deviation."""
    acc = np.asarray(task_accuracies, dtype=np.float64)
    if acc.size < 2:
        return 0.0
    return float(CI_Z * acc.std(ddof=1) / np.sqrt(acc.size))


def run_episode(episode: Episode, embed: Callable) -> float:
    support = [(embed(item), cls) for item, cls in episode.support]
    protos = compute_prototypes(support)
    queries = np.stack([embed(item) for item, _ in episode.query])
    protos, queries = center_and_normalize(protos, queries)
    pred = classify_batch(queries, protos)
    truth = [cls for _, cls in episode.query]
    return float(np.mean([p == t for p, t in zip(pred, truth)]))


def run_eval(embed: Callable, groups: Mapping[Hashable, Sequence], cfg: EvalConfig):
    """Mean task accuracy and its 95% CI half-width over ``cfg.n_tasks`` episodes.

    ``embed`` maps an item to a D-vector; results are memoised per item so
    each file is encoded once.
    """
    cache = {}

    def cached(item):
        if item not in cache:
            cache[item] = np.asarray(embed(item), dtype=np.float64)
        return cache[item]

    rng = np.random.default_rng(cfg.seed)
    accs = [run_episode(sample_episode(groups, cfg, rng), cached) for _ in range(cfg.n_tasks)]
    return float(np.mean(accs)), ci95(accs)


def manifest_embedder(manifest: DatasetManifest, encoder, cfg: EvalConfig,
                      frontend: FrontendConfig = FrontendConfig()) -> Callable:
    """Map a manifest entry to its clip embedding under ``cfg``'s strategy and scorer.

    With ``scorer="file"`` the per-chunk scores are read from the ``.scores``
    file next to the audio.
    """
    def embed(entry):
        path = manifest.resolve(entry)
        clip = load_wav(path)
        scores = None
        if cfg.embedding_strategy == "activation_select" and cfg.scorer == "file":
            n_chunks = len(chunk(prepare_clip(clip, frontend), frontend.window_s))
            scores = load_external_scores(str(path) + SCORES_SUFFIX, n_chunks)
        return clip_embedding(clip, encoder, cfg.embedding_strategy, frontend, scores)
    return embed


def evaluate_split(manifest: DatasetManifest, encoder, cfg: EvalConfig,
                   frontend: FrontendConfig = FrontendConfig(), split: str = "test"):
    """Few-shot accuracy on one manifest split; returns ``(mean, ci95, groups, embed)``.

    ``embed`` is the memoising embedder used, so callers can dump the vectors
    without re-encoding.
    """
    groups = group_by_label(manifest.split(split))
    raw = manifest_embedder(manifest, encoder, cfg, frontend)
    cache = {}

    def embed(entry):
        if entry not in cache:
            cache[entry] = np.asarray(raw(entry), dtype=np.float64)
        return cache[entry]

    mean, ci = run_eval(embed, groups, cfg)
    return mean, ci, groups, embed


def write_embeddings(path, embeddings: np.ndarray, class_ids: Sequence[int]):
    emb = np.ascontiguousarray(embeddings, dtype="<f4")
    n, d = emb.shape
    if len(class_ids) != n:
        raise ValueError("need one class id per embedding")
    ids = np.asarray(class_ids, dtype="<u4")
    Path(path).write_bytes(EMBD_MAGIC + struct.pack("<II", n, d) + emb.tobytes() + ids.tobytes())


def read_embeddings(path):
    raw = Path(path).read_bytes()
    if raw[:4] != EMBD_MAGIC or len(raw) < 12:
        raise ValueError(f"{path}: not an EMBD dump")
    n, d = struct.unpack("<II", raw[4:12])
    if len(raw) != 12 + 4 * n * d + 4 * n:
        raise ValueError(f"{path}: size does not match {n}x{d} header")
    emb = np.frombuffer(raw, dtype="<f4", count=n * d, offset=12).reshape(n, d)
    ids = np.frombuffer(raw, dtype="<u4", count=n, offset=12 + 4 * n * d)
    return emb.astype(np.float32), ids.astype(np.int64)
