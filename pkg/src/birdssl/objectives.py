"""Self-supervised and supervised contrastive objectives with analytic gradients.

Every loss takes embedding batches as ``(N, D)`` arrays and returns a
:class:`LossOutput` holding the scalar value and the gradient with respect
to each raw (pre-normalisation) input. All arithmetic is float64.

Aggregation convention: SimCLR and SupCon are averaged over anchors, so
the value does not grow with batch size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

OBJECTIVES = ("simclr", "bt", "frossl", "supcon")
ROBUST_EPS = 1e-12


class DegenerateInputError(ValueError):
    """Raised for zero-norm rows, zero-variance dimensions or empty positive sets."""


@dataclass(frozen=True)
class ObjectiveConfig:
    temperature: float = 1.0
    lam: float = 1e-2
    robust_norm: bool = False

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


@dataclass
class LossOutput:
    value: float
    grad_z1: np.ndarray
    grad_z2: Optional[np.ndarray] = None


def _as_batch(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError(f"embedding batch must be 2-D, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("embedding batch contains non-finite values")
    return z


def _pair(z1, z2):
    z1, z2 = _as_batch(z1), _as_batch(z2)
    if z1.shape != z2.shape:
        raise ValueError(f"view batches differ in shape: {z1.shape} vs {z2.shape}")
    return z1, z2


def l2_normalize_rows(z) -> np.ndarray:
    return _normalize_rows(_as_batch(z))[0]


def _normalize_rows(z):
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateInputError("cannot l2-normalise an all-zero row")
    return z / norms, norms


def _normalize_rows_backward(grad_u, u, norms):
    # u = z / |z|:  dz = (du - u <u, du>) / |z|
    return (grad_u - u * np.sum(u * grad_u, axis=1, keepdims=True)) / norms


def _masked_log_softmax(sim: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax over every column except the diagonal."""
    logits = sim.copy()
    np.fill_diagonal(logits, -np.inf)
    top = logits.max(axis=1, keepdims=True)
    lse = top + np.log(np.exp(logits - top).sum(axis=1, keepdims=True))
    out = sim - lse
    np.fill_diagonal(out, -np.inf)
    return out


def _contrastive(z: np.ndarray, positives: np.ndarray, temperature: float):
    """Mean over anchors of -mean_{j in P(i)} log softmax_{k != i}(z_i . z_k / t)_j.

    ``positives`` is a boolean (M, M) matrix with a False diagonal.
    Returns (value, grad wrt raw z).
    """
    m = z.shape[0]
    u, norms = _normalize_rows(z)
    sim = (u @ u.T) / temperature
    counts = positives.sum(axis=1)
    if np.any(counts == 0):
        bad = int(np.flatnonzero(counts == 0)[0])
        raise DegenerateInputError(f"anchor {bad} has no positive partner")
    if m == 1:
        return 0.0, np.zeros_like(z)
    log_prob = _masked_log_softmax(sim)
    target = positives / counts[:, None]
    value = -np.sum(np.where(positives, log_prob, 0.0) * target) / m

    prob = np.exp(log_prob)  # diagonal is exp(-inf) = 0
    grad_sim = (prob - target) / m
    grad_u = (grad_sim + grad_sim.T) @ u / temperature
    return float(value), _normalize_rows_backward(grad_u, u, norms)


def simclr_loss(z1, z2, cfg: ObjectiveConfig = ObjectiveConfig()) -> LossOutput:
    """NT-Xent over ``concat([z1, z2])``; each row's positive is its other view."""
    z1, z2 = _pair(z1, z2)
    n = z1.shape[0]
    if n == 1:
        # the lone positive is the whole denominator
        _normalize_rows(np.vstack([z1, z2]))
        return LossOutput(0.0, np.zeros_like(z1), np.zeros_like(z2))
    idx = np.arange(2 * n)
    positives = np.zeros((2 * n, 2 * n), dtype=bool)
    positives[idx, (idx + n) % (2 * n)] = True
    # averaging both concatenation orders makes the value exactly symmetric
    v12, g12 = _contrastive(np.vstack([z1, z2]), positives, cfg.temperature)
    v21, g21 = _contrastive(np.vstack([z2, z1]), positives, cfg.temperature)
    return LossOutput(0.5 * (v12 + v21), 0.5 * (g12[:n] + g21[n:]), 0.5 * (g12[n:] + g21[:n]))


def supcon_loss(z, labels, cfg: ObjectiveConfig = ObjectiveConfig()) -> LossOutput:
    """Supervised contrastive loss over one labelled batch (views already concatenated).

    Positives of anchor i are all other rows sharing its label.
    """
    z = _as_batch(z)
    labels = np.asarray(labels)
    if labels.shape != (z.shape[0],):
        raise ValueError("need one label per embedding row")
    positives = labels[:, None] == labels[None, :]
    np.fill_diagonal(positives, False)
    value, grad = _contrastive(z, positives, cfg.temperature)
    return LossOutput(value, grad)


def _standardize(z, robust: bool):
    mean = z.mean(axis=0)
    centered = z - mean
    var = np.mean(centered ** 2, axis=0)
    if robust:
        std = np.sqrt(var + ROBUST_EPS)
    else:
        if np.any(var == 0):
            dim = int(np.flatnonzero(var == 0)[0])
            raise DegenerateInputError(f"dimension {dim} has zero variance across the batch")
        std = np.sqrt(var)
    return centered / std, std


def _standardize_backward(grad_hat, z_hat, std):
    return (grad_hat - grad_hat.mean(axis=0)
            - z_hat * np.mean(grad_hat * z_hat, axis=0)) / std


def cross_correlation(z1, z2, robust: bool = False) -> np.ndarray:
    """D x D correlation between per-dimension standardised view batches."""
    z1, z2 = _pair(z1, z2)
    a, _ = _standardize(z1, robust)
    b, _ = _standardize(z2, robust)
    return a.T @ b / z1.shape[0]


def barlow_twins_loss(z1, z2, cfg: ObjectiveConfig = ObjectiveConfig()) -> LossOutput:
    """sum_i (1 - C_ii)^2 + lam * sum_{i != j} C_ij^2 on the cross-correlation C."""
    z1, z2 = _pair(z1, z2)
    n = z1.shape[0]
    if n < 2:
        raise ValueError("Barlow Twins needs at least two examples")
    a, std1 = _standardize(z1, cfg.robust_norm)
    b, std2 = _standardize(z2, cfg.robust_norm)
    c = a.T @ b / n
    diag = np.diag(c)
    off = c - np.diag(diag)
    value = np.sum((1.0 - diag) ** 2) + cfg.lam * np.sum(off ** 2)

    grad_c = 2.0 * cfg.lam * off
    grad_c[np.diag_indices_from(grad_c)] = -2.0 * (1.0 - diag)
    grad_a = b @ grad_c.T / n
    grad_b = a @ grad_c / n
    return LossOutput(float(value),
                      _standardize_backward(grad_a, a, std1),
                      _standardize_backward(grad_b, b, std2))


def frobenius_sq(m) -> float:
    return float(np.sum(np.asarray(m) ** 2))


def _center_and_scale(z):
    centered = z - z.mean(axis=0) if z.shape[0] > 1 else z
    norm = np.sqrt(np.sum(centered ** 2))
    if norm == 0:
        raise DegenerateInputError("batch has zero Frobenius norm after centering")
    return centered / norm, norm


def _center_and_scale_backward(grad_a, a, norm, n):
    grad_c = (grad_a - a * np.sum(a * grad_a)) / norm
    return grad_c - grad_c.mean(axis=0) if n > 1 else grad_c


def frossl_loss(z1, z2, cfg: ObjectiveConfig = ObjectiveConfig()) -> LossOutput:
    """MSE between views plus lam * (log |A1'A1|_F^2 + log |A2'A2|_F^2).

    Each view is mean-centred along the batch (skipped when N = 1) and
    divided by its Frobenius norm before either term is computed.
    """
    z1, z2 = _pair(z1, z2)
    n = z1.shape[0]
    a1, norm1 = _center_and_scale(z1)
    a2, norm2 = _center_and_scale(z2)
    diff = a1 - a2
    mse = np.sum(diff ** 2) / n
    g1, g2 = a1.T @ a1, a2.T @ a2
    f1, f2 = frobenius_sq(g1), frobenius_sq(g2)
    value = mse + cfg.lam * (np.log(f1) + np.log(f2))

    grad_a1 = 2.0 * diff / n + cfg.lam * 4.0 * (a1 @ g1) / f1
    grad_a2 = -2.0 * diff / n + cfg.lam * 4.0 * (a2 @ g2) / f2
    return LossOutput(float(value),
                      _center_and_scale_backward(grad_a1, a1, norm1, n),
                      _center_and_scale_backward(grad_a2, a2, norm2, n))


def paired_objective(name: str, labels=None) -> Callable[[np.ndarray, np.ndarray, ObjectiveConfig], LossOutput]:
    """Uniform ``(z1, z2, cfg) -> LossOutput`` view of any objective.

    SupCon concatenates the two views, duplicates ``labels`` (default: one
    class per example) and splits the gradient back into two halves.
    """
    if name == "simclr":
        return simclr_loss
    if name == "bt":
        return barlow_twins_loss
    if name == "frossl":
        return frossl_loss
    if name == "supcon":
        def supcon_pair(z1, z2, cfg=ObjectiveConfig()):
            z1, z2 = _pair(z1, z2)
            n = z1.shape[0]
            lab = np.arange(n) if labels is None else np.asarray(labels)
            out = supcon_loss(np.vstack([z1, z2]), np.concatenate([lab, lab]), cfg)
            return LossOutput(out.value, out.grad_z1[:n], out.grad_z1[n:])
        return supcon_pair
    raise ValueError(f"unknown objective {name!r}; choose from {OBJECTIVES}")


def finite_difference_check(objective, z1, z2, cfg: ObjectiveConfig = ObjectiveConfig(),
                            h: float = 1e-5, labels=None, analytic: Optional[LossOutput] = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``objective`` is a name from :data:`OBJECTIVES` or a paired callable.
    ``analytic`` overrides the gradients under test (used to check the checker).
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    fn = paired_objective(objective, labels) if isinstance(objective, str) else objective
    z1, z2 = _pair(z1, z2)
    out = analytic if analytic is not None else fn(z1, z2, cfg)
    grads = (out.grad_z1, out.grad_z2)
    inputs = [z1.copy(), z2.copy()]
    worst = 0.0
    for which in range(2):
        z = inputs[which]
        for idx in np.ndindex(z.shape):
            orig = z[idx]
            z[idx] = orig + h
            plus = fn(inputs[0], inputs[1], cfg).value
            z[idx] = orig - h
            minus = fn(inputs[0], inputs[1], cfg).value
            z[idx] = orig
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise FloatingPointError(f"non-finite loss when perturbing input {which} at {idx}")
            numeric = (plus - minus) / (2.0 * h)
            exact = grads[which][idx]
            err = abs(exact - numeric) / max(1e-12, abs(exact) + abs(numeric))
            worst = max(worst, err)
    return worst
