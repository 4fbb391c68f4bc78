"""Linear softmax classifier standing in for a detection head, plus its EMA teacher."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, NumericError
from ..losses import LossSpec, loss_and_grad_batch, softmax


class LinearClassifier:
    def __init__(self, n_classes, dim, rng=None, lr=0.01, momentum=0.9, weight_decay=1e-4, init_scale=0.01):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = init_scale * rng.standard_normal((n_classes, dim))
        self.b = np.zeros(n_classes)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._vW = np.zeros_like(self.W)
        self._vb = np.zeros_like(self.b)

    def logits(self, X) -> np.ndarray:
        return X @ self.W.T + self.b

    def step(self, gW, gb) -> None:
        """Momentum SGD with coupled weight decay (applied to weights and bias)."""
        gW = gW + self.weight_decay * self.W
        gb = gb + self.weight_decay * self.b
        self._vW = self.momentum * self._vW + gW
        self._vb = self.momentum * self._vb + gb
        self.W = self.W - self.lr * self._vW
        self.b = self.b - self.lr * self._vb


@dataclass
class TeacherState:
    W: np.ndarray
    b: np.ndarray
    eta_p: float = 0.9995

    @classmethod
    def from_student(cls, student: LinearClassifier, eta_p: float = 0.9995) -> "TeacherState":
        return cls(student.W.copy(), student.b.copy(), eta_p)

    def logits(self, X) -> np.ndarray:
        return X @ self.W.T + self.b

    def probs(self, X) -> np.ndarray:
        return softmax(self.logits(X))


def teacher_ema_update(teacher: TeacherState, student: LinearClassifier) -> TeacherState:
    if teacher.W.shape != student.W.shape or teacher.b.shape != student.b.shape:
        raise ContractError("teacher and student parameter shapes differ")
    eta = teacher.eta_p
    teacher.W = eta * teacher.W + (1.0 - eta) * student.W
    teacher.b = eta * teacher.b + (1.0 - eta) * student.b
    return teacher


@dataclass
class StepResult:
    total: float
    labeled: float
    unlabeled: float
    grads: np.ndarray  # unweighted d loss / d logits, one row per proposal


def proposal_weights(labels, source, w, w_labeled) -> np.ndarray:
    """Per-proposal loss multiplier: smoothed weights on labeled rows, raw on pseudo rows."""
    return np.where(source == 0, w_labeled[labels], w[labels])


def weighted_loss(W, b, X, labels, weights, spec: LossSpec, scale: float | None = None):
    """Weighted classification loss times ``scale`` and its parameter gradients.

    ``scale`` defaults to one over the number of proposals. Returns ``(loss, per_proposal_loss, logit_grads, gW, gb)``; ``logit_grads``
    are the unweighted per-proposal derivatives fed to the gradient ledger.
    """
    logits = X @ W.T + b
    per, grads = loss_and_grad_batch(logits, labels, spec)
    if scale is None:
        scale = 1.0 / max(len(labels), 1)
    loss = float(np.sum(weights * per) * scale)
    dlogits = (weights * scale)[:, None] * grads
    return loss, per, grads, dlogits.T @ X, dlogits.sum(axis=0)


def student_step(model: LinearClassifier, X, labels, source, w, w_labeled, spec: LossSpec,
                 scale: float | None = None) -> StepResult:
    """One momentum-SGD step on the weighted loss; ``scale`` as in :func:`weighted_loss`."""
    if scale is None:
        scale = 1.0 / max(len(labels), 1)
    weights = proposal_weights(labels, source, w, w_labeled)
    total, per, grads, gW, gb = weighted_loss(model.W, model.b, X, labels, weights, spec, scale)
    if not np.isfinite(total):
        raise NumericError(f"non-finite classification loss ({total}); max |logit| "
                           f"{np.abs(model.logits(X)).max():.3g}")
    model.step(gW, gb)
    lab = source == 0
    return StepResult(
        total,
        float(np.sum(weights[lab] * per[lab]) * scale),
        float(np.sum(weights[~lab] * per[~lab]) * scale),
        grads,
    )
