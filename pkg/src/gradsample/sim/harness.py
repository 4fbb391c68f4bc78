"""Generation-based teacher/student self-training over synthetic proposals.

Each generation regenerates pseudo labels with the EMA teacher, recomputes
image repeat counts, then runs a fixed number of student steps. Class weights
come from the gradient ledger, thresholds from the weights, repeat counts from
class rarity and pseudo-label margins; each piece can be switched off.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import sampler as rs
from ..ledger import LABELED, UNLABELED, GradientLedger
from ..losses import CROSS_ENTROPY, LossSpec
from ..solver import ClassWeights, align_step, jacobi_target
from ..thresholds import (
    PseudoLabelSet,
    QuantileScoreThreshold,
    ThresholdTable,
    build_table,
    filter_pseudo_labels,
)
from .config import RunConfig
from .data import ImageSet, SyntheticTask, generate_task, substream
from .metrics import eval_balanced_accuracy, nanmean, pseudo_label_pr
from .model import LinearClassifier, TeacherState, student_step, teacher_ema_update

log = logging.getLogger(__name__)


class HarnessError(RuntimeError):
    pass


def teacher_predictions(teacher, images: ImageSet) -> PseudoLabelSet:
    """Argmax class and score for every proposal whose argmax is a foreground class."""
    n_img, n_prop, dim = images.features.shape
    probs = teacher.probs(images.features.reshape(-1, dim))
    cls = np.argmax(probs, axis=1)
    score = probs[np.arange(len(cls)), cls]
    image, proposal = np.divmod(np.arange(len(cls)), n_prop)
    preds = PseudoLabelSet(image, proposal, cls, score, images.boxes.reshape(-1, 4))
    return preds.select(cls < probs.shape[1] - 1)


def generate_pseudo_labels(teacher, images: ImageSet, table: ThresholdTable) -> PseudoLabelSet:
    return filter_pseudo_labels(teacher_predictions(teacher, images), table)


IGNORE = -1


def pseudo_targets(pseudo: PseudoLabelSet, shape, n: int, uncertain: PseudoLabelSet | None = None) -> np.ndarray:
    """Training labels for unlabeled proposals: pseudo class where kept, else background.

    Proposals listed in ``uncertain`` (foreground predictions that missed their
    threshold) get ``IGNORE`` instead of background.
    """
    targets = np.full(shape, n, dtype=np.int64)
    if uncertain is not None:
        targets[uncertain.image, uncertain.proposal] = IGNORE
    targets[pseudo.image, pseudo.proposal] = pseudo.cls
    return targets


class ImageStream:
    """Cycles through a shuffled repeat list, reshuffling on exhaustion."""

    def __init__(self, counts, rng: np.random.Generator):
        self.pool = np.repeat(np.arange(len(counts)), counts)
        self.rng = rng
        self._order = self.rng.permutation(self.pool)
        self._pos = 0

    def __len__(self):
        return len(self.pool)

    def take(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            if self._pos >= len(self._order):
                self._order = self.rng.permutation(self.pool)
                self._pos = 0
            chunk = self._order[self._pos:self._pos + k]
            out.append(chunk)
            self._pos += len(chunk)
            k -= len(chunk)
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def assemble_batch(task: SyntheticTask, lab_idx, unl_idx, unl_targets):
    """Stack labeled then unlabeled proposals of the chosen images."""
    dim = task.labeled.features.shape[-1]
    X = np.concatenate([
        task.labeled.features[lab_idx].reshape(-1, dim),
        task.unlabeled.features[unl_idx].reshape(-1, dim),
    ])
    labels = np.concatenate([task.labeled.labels[lab_idx].reshape(-1), unl_targets[unl_idx].reshape(-1)])
    n_lab = len(lab_idx) * task.labeled.labels.shape[1]
    source = np.full(len(labels), UNLABELED, dtype=np.int8)
    source[:n_lab] = LABELED
    keep = labels != IGNORE
    return X[keep], labels[keep], source[keep]


@dataclass
class Timeline:
    records: list = field(default_factory=list)
    sampling: list = field(default_factory=list)  # RepeatFactorTable per generation (CrS runs)


def _clean(values):
    return [None if (v is None or (isinstance(v, float) and np.isnan(v))) else v for v in np.asarray(values, dtype=np.float64).tolist()]


class Trainer:
    """Mutable training state for one run; :func:`run_generations` drives it."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg.validate()
        self.task = generate_task(cfg.task, substream(cfg.seed, "data"))
        self.rng_sampler = substream(cfg.seed, "sampler")
        n = self.task.n
        self.n = n
        tr = cfg.train
        self.student = LinearClassifier(
            n + 1, cfg.task.dim, substream(cfg.seed, "init"),
            lr=tr.lr, momentum=tr.momentum, weight_decay=tr.weight_decay, init_scale=tr.init_scale,
        )
        self.loss_spec = LossSpec("softmax-focal", cfg.loss.gamma_focal) if cfg.modules.focal else CROSS_ENTROPY
        rw = cfg.reweight
        self.ledger = GradientLedger(n + 1, rw.eta_g)
        self.weights = ClassWeights(n + 1, beta=rw.beta, lr_align=rw.lr_align)
        # weights are estimated whenever reweighting or weight-derived thresholds need them
        self.track_weights = cfg.modules.gbr or cfg.threshold_mode in ("gbt", "combined")
        self.score_source = QuantileScoreThreshold(
            n, cfg.thresholds.score_quantile, cfg.thresholds.score_window,
            cfg.thresholds.score_min_samples, cfg.thresholds.theta_base, cfg.thresholds.theta_min,
        )
        self.table = ThresholdTable.fixed(n, cfg.thresholds.theta_base)
        self.teacher = None
        self.global_step = 0
        self.lab_classes = self.task.labeled.image_classes(n)
        self.unl_targets = np.full(self.task.unlabeled.labels.shape, n, dtype=np.int64)

    # --- pieces of one step -------------------------------------------------

    def loss_weights(self):
        if self.cfg.modules.gbr:
            return self.weights.w, self.weights.w_labeled
        ones = np.ones(self.n + 1)
        return ones, ones

    def refresh_table(self) -> ThresholdTable:
        th = self.cfg.thresholds
        self.table = build_table(
            self.cfg.threshold_mode, self.n, self.weights.w[: self.n], self.score_source,
            th.theta_base, th.theta_min,
        )
        return self.table

    def targets_for(self, preds: PseudoLabelSet, shape):
        pseudo = filter_pseudo_labels(preds, self.table)
        uncertain = None
        if self.cfg.train.uncertain_unlabeled == "ignore":
            uncertain = preds.select(preds.score < self.table.theta[preds.cls])
        return pseudo_targets(pseudo, shape, self.n, uncertain), pseudo

    def train_step(self, lab_idx, unl_idx):
        if self.cfg.train.pseudo_refresh == "step" and len(unl_idx) and self.teacher is not None:
            sub = ImageSet(*(arr[unl_idx] for arr in (self.task.unlabeled.features,
                                                      self.task.unlabeled.labels,
                                                      self.task.unlabeled.boxes)))
            self.unl_targets[unl_idx] = self.targets_for(teacher_predictions(self.teacher, sub), sub.labels.shape)[0]
        X, labels, source = assemble_batch(self.task, lab_idx, unl_idx, self.unl_targets)
        w, w_lab = self.loss_weights()
        try:
            # per-image normalisation keeps the step size independent of proposals per image
            scale = 1.0 / max(len(lab_idx) + len(unl_idx), 1)
            result = student_step(self.student, X, labels, source, w, w_lab, self.loss_spec, scale)
        except Exception as exc:
            raise HarnessError(f"step {self.global_step}: {exc}") from exc
        if self.track_weights:
            rw = self.cfg.reweight
            self.ledger.accumulate(labels, result.grads)
            self.ledger.ema_update()
            target = jacobi_target(
                self.ledger.ema, self.weights.w, rw.diag_floor, rw.w_min, rw.w_max_fraction * (self.n + 1)
            )
            align_step(self.weights, target)
        self.global_step += 1
        if self.cfg.threshold_mode != "fixed" and self.global_step % self.cfg.thresholds.refresh_every == 0:
            self.refresh_table()
        if self.teacher is not None:
            teacher_ema_update(self.teacher, self.student)
        return result

    # --- phases ---------------------------------------------------------------

    def labeled_counts(self):
        n_img = len(self.task.labeled)
        if self.cfg.modules.crs and self.cfg.sampler.labeled_rfs:
            factors = rs.labeled_rfs(self.lab_classes, self.n, self.cfg.sampler.tau)
            return rs.realize_repeats(factors, self.rng_sampler)
        return np.ones(n_img, dtype=np.int64)

    def burn_in(self):
        stream = ImageStream(self.labeled_counts(), self.rng_sampler)
        empty = np.zeros(0, dtype=np.int64)
        for _ in range(self.cfg.train.burn_in_steps):
            try:
                self.train_step(stream.take(self.cfg.train.labeled_images_per_step), empty)
            except HarnessError as exc:
                raise HarnessError(f"burn-in, {exc}") from exc
        self.teacher = TeacherState.from_student(self.student, self.cfg.train.eta_p)

    def generation(self, t: int, timeline: Timeline) -> dict:
        cfg = self.cfg
        n = self.n
        preds = teacher_predictions(self.teacher, self.task.unlabeled)
        if cfg.threshold_mode in ("score", "combined"):
            self.score_source.observe(preds.cls, preds.score)
        if cfg.threshold_mode != "fixed":
            self.refresh_table()
        table = self.table
        self.unl_targets, pseudo = self.targets_for(preds, self.task.unlabeled.labels.shape)
        precision, recall, n_pseudo, _, _ = pseudo_label_pr(pseudo, self.task.unlabeled.labels, n)

        n_unl = len(self.task.unlabeled)
        sampling = None
        if cfg.modules.crs:
            sc = cfg.sampler
            m = rs.count_class_images(self.lab_classes, pseudo, n)
            eps = rs.epsilon_schedule(sc.gamma, t, cfg.train.generations)
            n_total = len(self.task.labeled) + n_unl
            S = rs.class_repeat_rates(m, eps, n_total, sc.s_cap)
            sampling = rs.RepeatFactorTable(m, S, eps, sc.gamma, t, cfg.train.generations, n_total)
            timeline.sampling.append(sampling)
            if sc.unlabeled_rule == "crs":
                rates = rs.image_repeat_rates(pseudo, n_unl, S, table.theta)
            else:
                rates = rs.frequency_repeat_rates(pseudo, n_unl, S)
            unl_counts = rs.realize_repeats(rates, self.rng_sampler)
        else:
            unl_counts = np.ones(n_unl, dtype=np.int64)
        lab_stream = ImageStream(self.labeled_counts(), self.rng_sampler)
        unl_stream = ImageStream(unl_counts, self.rng_sampler)

        losses = []
        for _ in range(cfg.train.steps_per_generation):
            lab_idx = lab_stream.take(cfg.train.labeled_images_per_step)
            unl_idx = unl_stream.take(cfg.train.unlabeled_images_per_step)
            try:
                losses.append(self.train_step(lab_idx, unl_idx).total)
            except HarnessError as exc:
                raise HarnessError(f"generation {t}, {exc}") from exc

        maj, mino = self.task.majority, self.task.minority
        acc = eval_balanced_accuracy(
            self.teacher.logits, self.task.eval_features, self.task.eval_labels,
            self.task.majority, self.task.minority,
        )
        return {
            "generation": t,
            "step": self.global_step,
            "minority_classes": mino.tolist(),
            "loss": float(np.mean(losses)) if losses else None,
            "eval": {
                "overall": acc["overall"],
                "balanced": acc["balanced"],
                "majority": acc["majority"],
                "minority": acc["minority"],
                "per_class": acc["per_class"].tolist(),
            },
            "pseudo": {
                "count": n_pseudo.tolist(),
                "precision": _clean(precision),
                "recall": _clean(recall),
                "majority_precision": nanmean(precision[maj]),
                "majority_recall": nanmean(recall[maj]),
                "minority_precision": nanmean(precision[mino]),
                "minority_recall": nanmean(recall[mino]),
            },
            "weights": self.weights.w.tolist() if self.track_weights else [1.0] * (n + 1),
            "thresholds": table.theta.tolist(),
            "epsilon": sampling.epsilon if sampling else 0.0,
            "epoch_size": int(np.sum(unl_counts)),
        }


def run_generations(cfg: RunConfig, on_record=None) -> Timeline:
    trainer = Trainer(cfg)
    timeline = Timeline()
    trainer.burn_in()
    for t in range(1, cfg.train.generations + 1):
        record = trainer.generation(t, timeline)
        timeline.records.append(record)
        log.info("generation %d: balanced acc %.4f, minority acc %.4f, minority recall %.4f",
                 t, record["eval"]["balanced"], record["eval"]["minority"], record["pseudo"]["minority_recall"])
        if on_record is not None:
            on_record(record)
    return timeline
