"""Classification and distillation losses over temperature-scaled softmax.

All three losses reduce with the batch mean so learning rates transfer
across batch sizes. Probabilities are clamped to [1e-12, 1] before any
log to keep the KL terms defined under underflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericError, ShapeError

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TemperatureConfig:
    """Temperatures for the three loss terms.

    ``stage2_ce_tau`` overrides the temperature of the hard-label term
    inside the combined objective; by default that term runs at
    ``tau_kd``.
    """

    tau_c: float = 1.0
    tau_kd: float = 16.0
    tau_kd_u: float = 6.0
    stage2_ce_tau: Optional[float] = None

    def __post_init__(self):
        for name in ("tau_c", "tau_kd", "tau_kd_u"):
            v = getattr(self, name)
            if not (v > 0 and np.isfinite(v)):
                raise ValueError(f"{name} must be strictly positive, got {v!r}")
        if self.stage2_ce_tau is not None and not (self.stage2_ce_tau > 0):
            raise ValueError("stage2_ce_tau must be strictly positive when set")

    @property
    def effective_stage2_ce_tau(self) -> float:
        return self.tau_kd if self.stage2_ce_tau is None else self.stage2_ce_tau


def _as_logit_rows(t: Tensor, what: str) -> Tensor:
    if t.data.ndim == 1:
        return t  # softmax_T handles 1-d rows; losses promote via indexing below
    if t.data.ndim != 2:
        raise ShapeError(f"{what} must be 1-d or 2-d, got shape {t.data.shape}")
    return t


def cross_entropy(logits: Tensor, labels, tau: float) -> Tensor:
    """Mean over the batch of -log softmax_T(logits_i, tau)[y_i]."""
    logits = ad.as_tensor(logits)
    _as_logit_rows(logits, "logits")
    rows = logits.data if logits.data.ndim == 2 else logits.data[None, :]
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, k = rows.shape
    if labels.shape[0] != b:
        raise ShapeError(f"expected {b} labels, got {labels.shape[0]}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    probs = ad.softmax_T(logits, tau)
    logp = ad.log(ad.clamp(probs, PROB_FLOOR, 1.0))
    onehot = np.zeros((b, k))
    onehot[np.arange(b), labels] = 1.0
    if logits.data.ndim == 1:
        onehot = onehot[0]
    picked = ad.tsum(ad.mul(logp, Tensor(onehot)))
    return ad.scale(picked, -1.0 / b)


def kd_loss(teacher_logits: Tensor, student_logits: Tensor, tau: float,
            *, temperature_rescale: bool = False) -> Tensor:
    """Batch-mean KL(p_teacher || p_student), both at temperature tau.

    The teacher side is detached: no gradient ever reaches it.
    ``temperature_rescale`` multiplies by tau^2 (the classic gradient
    compensation); off by default.
    """
    if not (isinstance(tau, (int, float)) and np.isfinite(tau) and tau > 0):
        raise ValueError(f"tau must be a positive finite real, got {tau!r}")
    teacher_logits = ad.as_tensor(teacher_logits)
    student_logits = ad.as_tensor(student_logits)
    if teacher_logits.data.shape != student_logits.data.shape:
        raise ShapeError(
            f"teacher/student logit shapes differ: {teacher_logits.data.shape} "
            f"vs {student_logits.data.shape}")
    _as_logit_rows(student_logits, "student logits")
    b = student_logits.data.shape[0] if student_logits.data.ndim == 2 else 1

    # Teacher probabilities are constants; compute them outside the tape.
    if not np.all(np.isfinite(teacher_logits.data)):
        raise NumericError("kd_loss received non-finite teacher logits")
    z = teacher_logits.data / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p_t = e / e.sum(axis=-1, keepdims=True)
    p_t_safe = np.clip(p_t, PROB_FLOOR, 1.0)
    entropy_term = float(np.sum(p_t * np.log(p_t_safe)))  # sum_i sum_j p_t log p_t

    p_s = ad.clamp(ad.softmax_T(student_logits, tau), PROB_FLOOR, 1.0)
    cross_term = ad.tsum(ad.mul(Tensor(p_t), ad.log(p_s)))
    kl = ad.scale(ad.sub(Tensor(entropy_term), cross_term), 1.0 / b)
    if temperature_rescale:
        kl = ad.scale(kl, tau * tau)
    return kl


def kd_loss_unlabeled(teacher_logits: Tensor, student_aux_logits: Tensor,
                      tau_u: float, *, temperature_rescale: bool = False) -> Tensor:
    """KL between the teacher's pseudo soft labels and the aux head's output.

    Same formula as :func:`kd_loss`, evaluated at the unlabeled-data
    temperature; the aux head width must equal the teacher head width.
    """
    teacher_logits = ad.as_tensor(teacher_logits)
    student_aux_logits = ad.as_tensor(student_aux_logits)
    tk = teacher_logits.data.shape[-1]
    sk = student_aux_logits.data.shape[-1]
    if tk != sk:
        raise ShapeError(f"aux head width {sk} must equal teacher head width {tk}")
    return kd_loss(teacher_logits, student_aux_logits, tau_u,
                   temperature_rescale=temperature_rescale)
