"""Per-class pseudo-label thresholds and the filter that applies them."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

THETA_BASE = 0.9
THETA_MIN = 0.05
MODES = ("fixed", "gbt", "score", "combined")


@dataclass(frozen=True)
class ThresholdTable:
    """Immutable snapshot of the thresholds for the ``n`` foreground classes."""

    theta_base: float
    theta_p: np.ndarray
    theta_c: np.ndarray | None = None
    theta: np.ndarray = field(default=None)

    def __post_init__(self):
        theta_p = np.asarray(self.theta_p, dtype=np.float64)
        object.__setattr__(self, "theta_p", theta_p)
        if self.theta_c is not None:
            object.__setattr__(self, "theta_c", np.asarray(self.theta_c, dtype=np.float64))
        if self.theta is None:
            object.__setattr__(self, "theta", combine(theta_p, self.theta_c))
        for arr in (self.theta_p, self.theta):
            arr.setflags(write=False)

    @classmethod
    def fixed(cls, n: int, theta_base: float = THETA_BASE) -> "ThresholdTable":
        return cls(theta_base, np.full(n, float(theta_base)))

    def __len__(self):
        return len(self.theta)


def gbt_thresholds(w, theta_base: float = THETA_BASE, theta_min: float = THETA_MIN) -> np.ndarray:
    """``min(theta, theta / w_i)`` floored at ``theta_min``; ``w`` are foreground weights."""
    w = np.asarray(w, dtype=np.float64)
    if np.any(w <= 0):
        raise InputError("class weights must be positive")
    if not 0.0 < theta_base < 1.0:
        raise InputError(f"theta_base must lie in (0, 1), got {theta_base}")
    return np.maximum(np.minimum(theta_base, theta_base / w), theta_min)


def combine(theta_p, theta_c=None) -> np.ndarray:
    theta_p = np.asarray(theta_p, dtype=np.float64)
    if theta_c is None:
        return theta_p.copy()
    theta_c = np.asarray(theta_c, dtype=np.float64)
    if theta_p.shape != theta_c.shape:
        raise InputError(f"threshold lengths differ: {theta_p.shape} vs {theta_c.shape}")
    return np.minimum(theta_p, theta_c)


class QuantileScoreThreshold:
    """Score-statistics thresholds: a rolling per-class quantile of teacher scores.

    Stands in for any distribution-based threshold; subclasses only need
    ``observe`` and ``thresholds``.
    """

    def __init__(
        self,
        n_classes: int,
        quantile: float = 0.95,
        window: int = 10_000,
        min_samples: int = 20,
        theta_base: float = THETA_BASE,
        theta_min: float = THETA_MIN,
    ):
        self.n_classes = n_classes
        self.quantile = quantile
        self.min_samples = min_samples
        self.theta_base = theta_base
        self.theta_min = theta_min
        self.history = [deque(maxlen=window) for _ in range(n_classes)]

    def observe(self, classes, scores) -> None:
        classes = np.asarray(classes, dtype=np.int64)
        scores = np.asarray(scores, dtype=np.float64)
        for c, s in zip(classes.tolist(), scores.tolist()):
            if 0 <= c < self.n_classes:
                self.history[c].append(s)

    def thresholds(self) -> np.ndarray:
        return score_thresholds(
            self.history, self.quantile, self.min_samples, self.theta_base, self.theta_min
        )


def score_thresholds(
    history,
    quantile: float = 0.95,
    min_samples: int = 20,
    theta_base: float = THETA_BASE,
    theta_min: float = THETA_MIN,
) -> np.ndarray:
    out = np.full(len(history), float(theta_base))
    for i, scores in enumerate(history):
        if len(scores) >= max(min_samples, 1):
            out[i] = np.quantile(np.fromiter(scores, dtype=np.float64), quantile)
    return np.clip(out, theta_min, theta_base)


def build_table(
    mode: str,
    n: int,
    w=None,
    score_source: QuantileScoreThreshold | None = None,
    theta_base: float = THETA_BASE,
    theta_min: float = THETA_MIN,
) -> ThresholdTable:
    """Threshold table for one of ``fixed``, ``gbt``, ``score`` or ``combined``.

    ``w`` is the foreground weight vector (length ``n``).
    """
    if mode not in MODES:
        raise InputError(f"unknown threshold mode {mode!r}; expected one of {MODES}")
    if mode == "fixed":
        return ThresholdTable.fixed(n, theta_base)
    theta_c = score_source.thresholds() if mode in ("score", "combined") else None
    if mode == "score":
        # the score path alone: theta_p stays at the base so min() picks theta_c
        return ThresholdTable(theta_base, np.full(n, float(theta_base)), theta_c)
    theta_p = gbt_thresholds(w, theta_base, theta_min)
    return ThresholdTable(theta_base, theta_p, theta_c)


@dataclass
class PseudoLabelSet:
    """Flat per-proposal pseudo labels; ``image`` ties each row to its image."""

    image: np.ndarray
    proposal: np.ndarray
    cls: np.ndarray
    score: np.ndarray
    box: np.ndarray = None

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.int64)
        self.proposal = np.asarray(self.proposal, dtype=np.int64)
        self.cls = np.asarray(self.cls, dtype=np.int64)
        self.score = np.asarray(self.score, dtype=np.float64)
        if self.box is None:
            self.box = np.zeros((len(self.cls), 4))
        self.box = np.asarray(self.box, dtype=np.float64).reshape(len(self.cls), 4)

    def __len__(self):
        return len(self.cls)

    @classmethod
    def empty(cls) -> "PseudoLabelSet":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))

    def per_image(self, n_images: int) -> list[list[tuple[int, float, tuple]]]:
        out = [[] for _ in range(n_images)]
        for img, c, s, b in zip(self.image.tolist(), self.cls.tolist(), self.score.tolist(), self.box.tolist()):
            out[img].append((c, s, tuple(b)))
        return out

    def select(self, mask) -> "PseudoLabelSet":
        return PseudoLabelSet(self.image[mask], self.proposal[mask], self.cls[mask], self.score[mask], self.box[mask])


def filter_pseudo_labels(predictions: PseudoLabelSet, table: ThresholdTable, background: int | None = None) -> PseudoLabelSet:
    """Keep predictions whose score reaches their class threshold (inclusive).

    ``background`` defaults to ``len(table)``; predictions of that class are
    always dropped.
    """
    n = len(table)
    if background is None:
        background = n
    cls = predictions.cls
    if np.any(cls < 0) or np.any((cls >= n) & (cls != background)):
        raise InputError("prediction class index outside the threshold table")
    fg = cls != background
    keep = np.zeros(len(cls), dtype=bool)
    keep[fg] = predictions.score[fg] >= table.theta[cls[fg]]
    return predictions.select(keep)
