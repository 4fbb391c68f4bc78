"""Class-wise gradient matrix and its exponential moving average.

Entry ``G[i, k]`` sums ``d f / d x^i`` over proposals labeled ``k``: the diagonal
holds each class's positive gradients, row ``i`` off the diagonal its negative
gradients from the other classes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, NumericError

LABELED, UNLABELED = 0, 1


@dataclass
class ProposalBatch:
    """Logits of one training batch, labels zero-based with background last."""

    logits: np.ndarray
    labels: np.ndarray
    source: np.ndarray = None  # LABELED / UNLABELED per proposal

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2:
            raise InputError(f"logits must be 2-D, got shape {self.logits.shape}")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.source is None:
            self.source = np.full(self.labels.shape, LABELED, dtype=np.int8)
        self.source = np.asarray(self.source, dtype=np.int8)
        n_rows, n_cols = self.logits.shape
        if self.labels.shape != (n_rows,) or self.source.shape != (n_rows,):
            raise InputError("logits, labels and source disagree on the number of proposals")
        if n_rows and (self.labels.min() < 0 or self.labels.max() >= n_cols):
            raise InputError(f"label index outside [0, {n_cols - 1}]")
        if not np.all(np.isfinite(self.logits)):
            raise InputError("logits contain non-finite values")

    def __len__(self):
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return self.logits.shape[1]


@dataclass
class GradientLedger:
    n_classes: int  # n + 1, background included
    eta_g: float = 0.9995
    raw: np.ndarray = field(default=None, repr=False)
    ema: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.eta_g <= 1.0:
            raise InputError(f"eta_g must lie in [0, 1], got {self.eta_g}")
        shape = (self.n_classes, self.n_classes)
        if self.raw is None:
            self.raw = np.zeros(shape)
        if self.ema is None:
            self.ema = np.zeros(shape)
        if self.raw.shape != shape or self.ema.shape != shape:
            raise InputError(f"ledger matrices must be {shape}")

    def accumulate(self, labels, grads) -> "GradientLedger":
        """Add per-proposal gradients into the columns of their labels.

        Summation follows proposal order, so repeated runs are bit-identical.
        """
        labels = np.asarray(labels, dtype=np.int64)
        grads = np.asarray(grads, dtype=np.float64)
        if grads.ndim != 2 or grads.shape[1] != self.n_classes or grads.shape[0] != labels.shape[0]:
            raise InputError(
                f"grads shape {grads.shape} incompatible with {labels.shape[0]} labels "
                f"and {self.n_classes} classes"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise InputError("label index outside the ledger's class range")
        # raw.T[k] is column k; add.at is unbuffered and applies rows in order
        np.add.at(self.raw.T, labels, grads)
        return self

    def ema_update(self) -> "GradientLedger":
        self.ema = self.eta_g * self.ema + (1.0 - self.eta_g) * self.raw
        if not np.all(np.isfinite(self.ema)):
            raise NumericError("gradient EMA became non-finite")
        self.raw = np.zeros_like(self.raw)
        return self


def accumulate_batch(ledger: GradientLedger, batch: ProposalBatch, grads) -> GradientLedger:
    if batch.n_classes != ledger.n_classes:
        raise InputError(f"batch has {batch.n_classes} classes, ledger {ledger.n_classes}")
    return ledger.accumulate(batch.labels, grads)


def ema_update(ledger: GradientLedger) -> GradientLedger:
    return ledger.ema_update()


def save_matrix(matrix, path) -> None:
    """Write a square matrix as space-separated rows at full double precision."""
    np.savetxt(path, np.asarray(matrix, dtype=np.float64), fmt="%.17g", delimiter=" ")


def load_matrix(path) -> np.ndarray:
    path = Path(path)
    try:
        matrix = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise InputError(f"{path}: cannot parse matrix dump: {exc}") from exc
    if matrix.shape[0] != matrix.shape[1]:
        raise InputError(f"{path}: expected a square matrix, got {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise NumericError(f"{path}: matrix contains non-finite entries")
    return matrix
