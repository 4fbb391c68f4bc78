"""Image-level resampling: confidence-aware class rebalancing and plain RFS."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, InputError
from .thresholds import PseudoLabelSet

S_CAP = 20.0
RFS_TAU = 0.001


@dataclass(frozen=True)
class RepeatFactorTable:
    m: np.ndarray
    S: np.ndarray
    epsilon: float
    gamma: float
    t: int
    n_generations: int
    n_total: int

    def rows(self):
        for i, (m_i, s_i) in enumerate(zip(self.m.tolist(), self.S.tolist())):
            yield {"class": i, "m": m_i, "S": s_i, "epsilon": self.epsilon}


def count_class_images(labeled, pseudo: PseudoLabelSet | None, n: int) -> np.ndarray:
    """Number of images holding at least one box of each class.

    ``labeled`` is a sequence of per-image class-id collections; ``pseudo``
    adds the pseudo-labeled unlabeled images. Ids ``>= n`` are ignored.
    """
    m = np.zeros(n, dtype=np.int64)
    for classes in labeled:
        present = np.unique(np.asarray(classes, dtype=np.int64))
        present = present[(present >= 0) & (present < n)]
        m[present] += 1
    if pseudo is not None and len(pseudo):
        pairs = np.unique(np.stack([pseudo.image, pseudo.cls], axis=1), axis=0)
        pairs = pairs[pairs[:, 1] < n]
        np.add.at(m, pairs[:, 1], 1)
    return m


def epsilon_schedule(gamma: float, t: int, n_generations: int) -> float:
    if n_generations <= 0:
        raise InputError("number of generations must be positive")
    if not 0 <= t <= n_generations:
        raise InputError(f"generation {t} outside [0, {n_generations}]")
    return gamma * t / n_generations


def class_repeat_rates(m, epsilon: float, n_total: int, s_cap: float = S_CAP) -> np.ndarray:
    """``max(1, sqrt(eps * N / m_i))``; classes never seen get ``s_cap``.

    At ``eps == 0`` every rate is 1, unseen classes included.
    """
    if n_total <= 0:
        raise InputError("total image count must be positive")
    m = np.asarray(m, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.sqrt(epsilon * n_total / m)
    S = np.maximum(1.0, raw)
    S[m == 0] = s_cap
    if epsilon == 0:
        S[:] = 1.0
    return S


def image_repeat_rate(classes, scores, S, theta) -> float:
    """Largest ``S_c * (p - theta_c)`` over an image's pseudo labels, 0 if none."""
    classes = np.asarray(classes, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if classes.size == 0:
        return 0.0
    margin = scores - np.asarray(theta)[classes]
    if np.any(margin < 0):
        raise ContractError("pseudo label below its class threshold; filter before sampling")
    return float(np.max(np.asarray(S)[classes] * margin))


def image_repeat_rates(pseudo: PseudoLabelSet, n_images: int, S, theta) -> np.ndarray:
    """Vectorised :func:`image_repeat_rate` for every image of the pool."""
    rates = np.zeros(n_images)
    if len(pseudo) == 0:
        return rates
    margin = pseudo.score - np.asarray(theta)[pseudo.cls]
    if np.any(margin < 0):
        raise ContractError("pseudo label below its class threshold; filter before sampling")
    np.maximum.at(rates, pseudo.image, np.asarray(S)[pseudo.cls] * margin)
    return rates


def frequency_repeat_rates(pseudo: PseudoLabelSet, n_images: int, S) -> np.ndarray:
    """Score-blind variant: an image's rate is the largest ``S_c`` among its labels."""
    rates = np.zeros(n_images)
    if len(pseudo):
        np.maximum.at(rates, pseudo.image, np.asarray(S)[pseudo.cls])
    return rates


def realize_repeats(rate, rng: np.random.Generator):
    """Stochastic rounding of ``max(1, rate)``: floor plus a Bernoulli on the fraction."""
    rate = np.asarray(rate, dtype=np.float64)
    if np.any(rate < 0):
        raise InputError("repeat rate must be nonnegative")
    effective = np.maximum(1.0, rate)
    whole = np.floor(effective)
    counts = whole + (rng.random(effective.shape) < effective - whole)
    counts = counts.astype(np.int64)
    return int(counts) if counts.ndim == 0 else counts


def rfs_class_rates(freq, tau: float = RFS_TAU) -> np.ndarray:
    freq = np.asarray(freq, dtype=np.float64)
    if np.any(freq <= 0):
        raise InputError("class frequencies must be positive")
    return np.maximum(1.0, np.sqrt(tau / freq))


def labeled_rfs(image_classes, n: int, tau: float = RFS_TAU) -> np.ndarray:
    """Per-image repeat factors for a labeled set.

    Class frequency is the fraction of images containing the class; an image's
    factor is the largest rate among its classes (1 for images without
    foreground boxes).
    """
    n_images = len(image_classes)
    if n_images == 0:
        return np.zeros(0)
    m = count_class_images(image_classes, None, n)
    present = m > 0
    rates = np.ones(n)
    rates[present] = rfs_class_rates(m[present] / n_images, tau)
    factors = np.ones(n_images)
    for j, classes in enumerate(image_classes):
        classes = np.asarray(classes, dtype=np.int64)
        classes = classes[(classes >= 0) & (classes < n)]
        if classes.size:
            factors[j] = rates[classes].max()
    return factors


def write_sampling_report(path, table: RepeatFactorTable) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["class", "m", "S", "epsilon"], lineterminator="\n")
        writer.writeheader()
        for row in table.rows():
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def expected_epoch_size(rates) -> float:
    return float(np.sum(np.maximum(1.0, np.asarray(rates, dtype=np.float64))))

