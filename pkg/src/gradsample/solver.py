"""Learnable class weights driven toward the gradient-balance solution.

For every foreground class ``i`` the balanced weights satisfy
``w_i * G_ii = -sum_{k != i} w_k * G_ik``; the background row is replaced by
``sum(w) = n + 1``. Rather than solving directly, weights are parameterised as
``w = (n+1) * softmax(a)`` and each step pulls ``a`` toward the log of a Jacobi
sweep target, which keeps every weight positive even when the direct solution
does not exist.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InputError, NumericError, SolverError

DIAG_FLOOR = 1e-8
W_MIN = 1e-3
W_MAX_FRACTION = 0.999


def weights_from_logits(a) -> np.ndarray:
    """``(n+1) * softmax(a)`` over the last axis."""
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise InputError("weight logits must be finite")
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return a.shape[-1] * e / e.sum(axis=-1, keepdims=True)


def smooth_labeled_weights(w, beta: float = 0.5) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if np.any(w <= 0):
        raise InputError("weights must be positive to smooth")
    if not 0.0 < beta <= 1.0:
        raise InputError(f"beta must lie in (0, 1], got {beta}")
    return w**beta


@dataclass
class ClassWeights:
    n_classes: int  # n + 1
    beta: float = 0.5
    lr_align: float = 0.01
    a: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.a is None:
            self.a = np.zeros(self.n_classes)
        self.a = np.asarray(self.a, dtype=np.float64)
        if self.a.shape != (self.n_classes,):
            raise InputError(f"logits must have length {self.n_classes}")

    @property
    def w(self) -> np.ndarray:
        return weights_from_logits(self.a)

    @property
    def w_labeled(self) -> np.ndarray:
        return smooth_labeled_weights(self.w, self.beta)


def jacobi_target(
    Gt,
    w,
    diag_floor: float = DIAG_FLOOR,
    w_min: float = W_MIN,
    w_max: float | None = None,
) -> np.ndarray:
    """One Jacobi sweep over the foreground rows, background from the sum constraint.

    Foreground classes whose diagonal magnitude is at most ``diag_floor`` keep
    their current weight. The result is clamped to ``[w_min, w_max]`` with
    ``w_max`` defaulting to ``0.999 (n+1)``. Leading axes broadcast, so a stack
    of systems is swept at once.
    """
    Gt = np.asarray(Gt, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    size = w.shape[-1]
    if Gt.shape[-2:] != (size, size):
        raise InputError(f"gradient matrix shape {Gt.shape} does not match {size} weights")
    if not np.all(np.isfinite(Gt)):
        raise NumericError("gradient matrix has non-finite entries")
    if w_max is None:
        w_max = W_MAX_FRACTION * size

    diag = np.diagonal(Gt, axis1=-2, axis2=-1)[..., :-1]
    w_fg = w[..., :-1]
    off = np.einsum("...ik,...k->...i", Gt[..., :-1, :], w) - diag * w_fg
    informed = np.abs(diag) > diag_floor
    fg_target = np.where(informed, -off / np.where(informed, diag, 1.0), w_fg)
    bg_target = size - fg_target.sum(axis=-1, keepdims=True)
    return np.clip(np.concatenate([fg_target, bg_target], axis=-1), w_min, w_max)


def align_loss(a, target):
    a = np.asarray(a, dtype=np.float64)
    return np.mean((np.log(target) - a) ** 2, axis=-1)


def align_step(cw: ClassWeights, target) -> ClassWeights:
    """One gradient-descent step on the mean squared log-space alignment loss."""
    target = np.asarray(target, dtype=np.float64)
    if np.any(target <= 0) or not np.all(np.isfinite(target)):
        raise ContractError("alignment target must be positive and finite after clamping")
    cw.a = align_update(cw.a, target, cw.lr_align)
    return cw


def align_update(a, target, lr_align: float) -> np.ndarray:
    """New logits after one step; ``a`` may carry leading batch axes."""
    grad = (2.0 / a.shape[-1]) * (a - np.log(target))
    return a - lr_align * grad


def balance_residuals(Gt, w) -> np.ndarray:
    """``|w_i G_ii + sum_{k != i} w_k G_ik|`` per foreground row."""
    Gt = np.asarray(Gt, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    return np.abs(np.einsum("...ik,...k->...i", Gt[..., :-1, :], w))


def system_matrix(Gt):
    Gt = np.asarray(Gt, dtype=np.float64)
    size = Gt.shape[0]
    A = Gt.copy()
    A[-1] = 1.0
    b = np.zeros(size)
    b[-1] = size
    return A, b


def solve_direct(Gt, rcond: float = 1e-12) -> np.ndarray:
    """Exact solution of the balance system, used to check the iterative path."""
    A, b = system_matrix(Gt)
    if not np.all(np.isfinite(A)):
        raise NumericError("gradient matrix has non-finite entries")
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0 or s[-1] / s[0] < rcond:
        raise SolverError(f"balance system is singular (condition ratio {s[-1] / max(s[0], 1e-300):.3g})")
    return np.linalg.solve(A, b)


def solve_iterative(
    Gt,
    lr_align: float = 0.01,
    max_steps: int = 10_000,
    tol: float = 1e-10,
    diag_floor: float = DIAG_FLOOR,
    w_min: float = W_MIN,
    w_max: float | None = None,
    a0=None,
):
    """Run align steps against a fixed matrix until the logits stop moving.

    ``Gt`` may be a stack ``(..., K, K)``; iteration stops once every system
    has converged. Returns ``(w, steps)``.
    """
    Gt = np.asarray(Gt, dtype=np.float64)
    a = np.zeros(Gt.shape[:-1]) if a0 is None else np.array(a0, dtype=np.float64)
    steps = 0
    for steps in range(1, max_steps + 1):
        target = jacobi_target(Gt, weights_from_logits(a), diag_floor, w_min, w_max)
        new_a = align_update(a, target, lr_align)
        moved = np.max(np.abs(new_a - a))
        a = new_a
        if moved < tol:
            break
    return weights_from_logits(a), steps
