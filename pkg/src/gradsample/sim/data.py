"""Synthetic long-tailed proposal data.

Every image holds a fixed number of proposals. A few are objects drawn from
class-conditional Gaussian clusters, the rest background drawn around the
origin. Boxes are random and carried along unused.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from .config import TaskConfig


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose under one root seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),)))


@dataclass
class ImageSet:
    features: np.ndarray  # (images, proposals, dim)
    labels: np.ndarray  # (images, proposals); background = n
    boxes: np.ndarray  # (images, proposals, 4)

    def __len__(self):
        return self.features.shape[0]

    def image_classes(self, n: int) -> list[np.ndarray]:
        return [np.unique(row[row < n]) for row in self.labels]


@dataclass
class SyntheticTask:
    n_majority: int
    n_minority: int
    centers: np.ndarray  # (n, dim)
    labeled: ImageSet
    unlabeled: ImageSet  # labels are hidden truth, used only for metrics
    eval_features: np.ndarray
    eval_labels: np.ndarray

    @property
    def n(self) -> int:
        return self.n_majority + self.n_minority

    @property
    def n_classes(self) -> int:
        return self.n + 1

    @property
    def majority(self) -> np.ndarray:
        return np.arange(self.n_majority)

    @property
    def minority(self) -> np.ndarray:
        return np.arange(self.n_majority, self.n)


def _draw(centers, labels, n, spec: TaskConfig, rng):
    flat = labels.reshape(-1)
    noise = rng.standard_normal((flat.size, spec.dim))
    scale = np.where(flat == n, spec.background_noise, spec.noise)[:, None]
    mean = np.zeros((flat.size, spec.dim))
    fg = flat < n
    mean[fg] = centers[flat[fg]]
    return (mean + scale * noise).reshape(labels.shape + (spec.dim,))


def _boxes(shape, rng):
    xy = rng.uniform(0, 400, shape + (2,))
    wh = rng.uniform(8, 120, shape + (2,))
    return np.concatenate([xy, xy + wh], axis=-1)


def _pack(objects: np.ndarray, spec: TaskConfig, n: int, rng) -> np.ndarray:
    """Place object labels into images of ``1..max_objects`` objects each."""
    rows = []
    pos = 0
    while pos < len(objects):
        k = int(rng.integers(1, spec.max_objects_per_image + 1))
        row = np.full(spec.proposals_per_image, n, dtype=np.int64)
        chunk = objects[pos:pos + k]
        row[: len(chunk)] = chunk
        rows.append(rng.permutation(row))
        pos += k
    return np.array(rows, dtype=np.int64).reshape(-1, spec.proposals_per_image)


def generate_task(spec: TaskConfig, rng: np.random.Generator) -> SyntheticTask:
    n = spec.n_majority + spec.n_minority
    if n <= 0 or spec.n_majority < 0 or spec.n_minority < 0:
        raise InputError("task needs a positive number of classes")
    directions = rng.standard_normal((n, spec.dim))
    centers = spec.separation * directions / np.linalg.norm(directions, axis=1, keepdims=True)
    if spec.minority_lookalike > 0 and spec.n_majority and spec.n_minority:
        twins = rng.choice(spec.n_majority, size=spec.n_minority, replace=spec.n_minority > spec.n_majority)
        offsets = rng.standard_normal((spec.n_minority, spec.dim))
        offsets *= spec.minority_lookalike / np.linalg.norm(offsets, axis=1, keepdims=True)
        centers[spec.n_majority:] = centers[twins] + offsets

    quotas = np.array([spec.labeled_per_majority] * spec.n_majority + [spec.labeled_per_minority] * spec.n_minority)
    objects = rng.permutation(np.repeat(np.arange(n), quotas))
    lab_labels = _pack(objects, spec, n, rng)
    labeled = ImageSet(_draw(centers, lab_labels, n, spec, rng), lab_labels, _boxes(lab_labels.shape, rng))

    if spec.scenario == "abundant":
        minority_ratio = spec.abundant_minority_ratio
    else:
        minority_ratio = spec.labeled_per_minority / spec.labeled_per_majority
    freq = np.array([1.0] * spec.n_majority + [minority_ratio] * spec.n_minority)
    freq /= freq.sum()
    counts = rng.integers(1, spec.max_objects_per_image + 1, spec.n_unlabeled_images)
    unl_labels = np.full((spec.n_unlabeled_images, spec.proposals_per_image), n, dtype=np.int64)
    for i, k in enumerate(counts):
        drawn = rng.choice(n, size=k, p=freq)
        repeat = rng.random(k) < spec.instance_repeat
        repeat[0] = False
        drawn[repeat] = drawn[0]
        unl_labels[i, :k] = drawn
        unl_labels[i] = rng.permutation(unl_labels[i])
    unlabeled = ImageSet(_draw(centers, unl_labels, n, spec, rng), unl_labels, _boxes(unl_labels.shape, rng))

    eval_labels = np.repeat(np.arange(n + 1), spec.eval_per_class)
    eval_features = _draw(centers, eval_labels, n, spec, rng)
    return SyntheticTask(spec.n_majority, spec.n_minority, centers, labeled, unlabeled, eval_features, eval_labels)
