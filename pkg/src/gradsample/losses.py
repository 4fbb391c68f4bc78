"""Softmax classification losses with analytic logit gradients.

Class indices are zero-based: foreground classes ``0..n-1`` and the background
class ``n`` (the last logit column).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

KINDS = ("softmax-cross-entropy", "softmax-focal")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "softmax-focal"
    gamma_focal: float = 2.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        if not self.gamma_focal >= 0:
            raise InputError(f"gamma_focal must be >= 0, got {self.gamma_focal}")

    @property
    def gamma(self) -> float:
        # cross-entropy is focal with a zero exponent
        return self.gamma_focal if self.kind == "softmax-focal" else 0.0


CROSS_ENTROPY = LossSpec("softmax-cross-entropy", 0.0)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def _check(logits: np.ndarray, labels: np.ndarray) -> None:
    if logits.ndim != 2:
        raise InputError(f"logits must be 2-D (proposals x classes), got shape {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise InputError(f"labels shape {labels.shape} does not match {logits.shape[0]} proposals")
    if not np.all(np.isfinite(logits)):
        raise InputError("logits contain non-finite values")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise InputError(f"label index outside [0, {logits.shape[1] - 1}]")


def loss_and_grad_batch(logits, labels, spec: LossSpec = CROSS_ENTROPY):
    """Per-proposal loss and d(loss)/d(logits) for a batch.

    Returns ``(loss, grad)`` with shapes ``(N,)`` and ``(N, n+1)``. The focal
    loss is ``-(1 - p_c)**gamma * log(p_c)``; its gradient w.r.t. logit ``i`` is
    ``[gamma (1-p_c)^(gamma-1) p_c log p_c - (1-p_c)^gamma] * (delta_ic - p_i)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    _check(logits, labels)
    n_rows = logits.shape[0]
    rows = np.arange(n_rows)

    logp = log_softmax(logits)
    p = np.exp(logp)
    logp_c = logp[rows, labels]
    p_c = p[rows, labels]
    onehot = np.zeros_like(p)
    onehot[rows, labels] = 1.0

    gamma = spec.gamma
    if gamma == 0.0:
        return -logp_c, p - onehot

    # 1 - p_c as the mass of the other classes avoids cancellation near p_c = 1
    q = p.sum(axis=1) - p_c
    q = np.clip(q, 0.0, None)
    mod = q**gamma
    loss = -mod * logp_c
    with np.errstate(divide="ignore", invalid="ignore"):
        # q**(gamma-1) * p_c * log p_c -> 0 as q -> 0 for every gamma > 0
        tail = np.where(q > 0, gamma * q ** (gamma - 1.0) * p_c * logp_c, 0.0)
    coef = tail - mod
    grad = coef[:, None] * (onehot - p)
    return loss, grad


def loss_and_grad(logits, label: int, spec: LossSpec = CROSS_ENTROPY):
    """Single-proposal form of :func:`loss_and_grad_batch`."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise InputError("logits must be a 1-D vector")
    loss, grad = loss_and_grad_batch(logits[None, :], np.array([label]), spec)
    return float(loss[0]), grad[0]
