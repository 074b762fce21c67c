"""Two-stage teacher-student training.

Stage 1 trains the student and teacher independently on labeled data
with the hard-label loss. Stage 2 freezes the teacher and minimizes the
combined objective: hard-label term plus labeled-data KL plus, when an
unlabeled pool is supplied, the auxiliary-head KL against the teacher's
pseudo soft labels. Every step consumes one identity-balanced labeled
batch and one uniform unlabeled batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ConfigError, UsageError
from .losses import TemperatureConfig, cross_entropy, kd_loss, kd_loss_unlabeled
from .models import Model, forward, freeze
from .optim import ScheduleConfig, lr_at, make_optimizer, zero_grads
from .sampling import group_by_identity, pk_sample_indices, uniform_sample_indices


@dataclass(frozen=True)
class BatchPlan:
    p_identities: int = 64
    k_per_identity: int = 4
    unlabeled_per_step: int = 48

    def __post_init__(self):
        if self.p_identities < 1 or self.k_per_identity < 1:
            raise ConfigError("p_identities and k_per_identity must be positive")
        if self.unlabeled_per_step < 0:
            raise ConfigError("unlabeled_per_step must be non-negative")

    @property
    def labeled_batch_size(self) -> int:
        return self.p_identities * self.k_per_identity


@dataclass
class TrainState:
    student: Model
    teacher: Optional[Model]
    optimizer: object = None
    step: int = 0
    seed: int = 0
    last_losses: dict = field(default_factory=dict)


def _labeled_arrays(records: Sequence) -> tuple[np.ndarray, np.ndarray, list]:
    """Feature matrix, contiguous class labels, and PK groups for a labeled set."""
    if not records:
        raise ValueError("labeled dataset is empty")
    x = np.stack([np.asarray(r.features, dtype=np.float64) for r in records])
    identities = [r.identity for r in records]
    if any(i is None for i in identities):
        raise ValueError("labeled dataset contains unlabeled records")
    classes = {ident: j for j, ident in enumerate(sorted(set(identities)))}
    y = np.asarray([classes[i] for i in identities], dtype=np.int64)
    groups = group_by_identity(records)
    return x, y, groups


def num_classes(records: Sequence) -> int:
    return len({r.identity for r in records})


def sskd_components(labeled_batch, unlabeled_batch, state: TrainState,
                    temps: TemperatureConfig,
                    teacher_logits: Optional[np.ndarray] = None,
                    teacher_logits_unlabeled: Optional[np.ndarray] = None) -> dict:
    """The objective's terms as scalar tensors, keyed ce / kd / kd_u.

    ``kd_u`` is present only when the unlabeled batch is non-empty, so
    an empty pool degenerates the objective to ce + kd exactly. Because
    the teacher is frozen its logits are constants; callers in a hot
    loop may precompute and pass them.
    """
    if state.teacher is None or not state.teacher.frozen:
        raise UsageError("combined objective requires a frozen teacher")
    x, y = labeled_batch
    xt = Tensor(x)
    _, s_logits, _ = forward(state.student, xt)
    if teacher_logits is None:
        _, t_out, _ = forward(state.teacher, xt)
        teacher_logits = t_out.data
    parts = {
        "ce": cross_entropy(s_logits, y, temps.effective_stage2_ce_tau),
        "kd": kd_loss(Tensor(teacher_logits), s_logits, temps.tau_kd),
    }
    xu = np.asarray(unlabeled_batch, dtype=np.float64)
    if xu.size:
        if not state.student.has_aux:
            raise UsageError("unlabeled distillation requires the auxiliary head")
        xut = Tensor(xu)
        if teacher_logits_unlabeled is None:
            _, tu_out, _ = forward(state.teacher, xut)
            teacher_logits_unlabeled = tu_out.data
        _, _, su_aux = forward(state.student, xut)
        parts["kd_u"] = kd_loss_unlabeled(Tensor(teacher_logits_unlabeled), su_aux,
                                          temps.tau_kd_u)
    return parts


def sskd_total(labeled_batch, unlabeled_batch, state: TrainState,
               temps: TemperatureConfig) -> Tensor:
    """Sum of the combined objective's terms."""
    parts = sskd_components(labeled_batch, unlabeled_batch, state, temps)
    total = parts["ce"]
    total = ad.add(total, parts["kd"])
    if "kd_u" in parts:
        total = ad.add(total, parts["kd_u"])
    return total


def _steps_per_epoch(n_records: int, plan: BatchPlan) -> int:
    return max(1, n_records // plan.labeled_batch_size)


def _append_log(log_path: Optional[str], entry: dict) -> None:
    if log_path is None:
        return
    with open(log_path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")


def train_stage1(student: Model, teacher: Optional[Model], labeled: Sequence,
                 schedule: ScheduleConfig, temps: TemperatureConfig,
                 epochs: Optional[int] = None, seed: int = 0,
                 plan: BatchPlan = BatchPlan(), optimizer: str = "adam",
                 log_path: Optional[str] = None) -> TrainState:
    """Stage 1: hard-label training of student (and teacher, if given).

    Both models see the same identity-balanced batch stream; they never
    interact. Deterministic given the seed.
    """
    x, y, groups = _labeled_arrays(labeled)
    epochs = schedule.total_epochs if epochs is None else epochs
    steps_per_epoch = _steps_per_epoch(len(labeled), plan)
    total_steps = epochs * steps_per_epoch
    rng = np.random.default_rng([1, seed])
    models = [m for m in (student, teacher) if m is not None]
    opts = [make_optimizer(optimizer, m.parameters()) for m in models]
    state = TrainState(student=student, teacher=teacher, seed=seed)
    step = 0
    for epoch in range(epochs):
        epoch_losses = np.zeros(len(models))
        for _ in range(steps_per_epoch):
            idx = pk_sample_indices(groups, plan.p_identities, plan.k_per_identity, rng)
            xb, yb = Tensor(x[idx]), y[idx]
            lr = lr_at(schedule, step / total_steps)
            for mi, (model, opt) in enumerate(zip(models, opts)):
                with Tape():
                    _, logits, _ = forward(model, xb)
                    loss = cross_entropy(logits, yb, temps.tau_c)
                    ad.backward(loss)
                opt.step(lr)
                zero_grads(model.parameters())
                epoch_losses[mi] += loss.item()
            step += 1
        means = epoch_losses / steps_per_epoch
        entry = {"stage": 1, "epoch": epoch, "ce_student": means[0]}
        if teacher is not None:
            entry["ce_teacher"] = means[1]
        state.last_losses = {k: v for k, v in entry.items() if k.startswith("ce")}
        _append_log(log_path, entry)
    state.optimizer = opts[0] if opts else None
    state.step = step
    return state


def train_stage2_sskd(state: TrainState, labeled: Sequence,
                      unlabeled: Optional[Sequence], schedule: ScheduleConfig,
                      temps: TemperatureConfig, epochs: Optional[int] = None,
                      seed: int = 0, plan: BatchPlan = BatchPlan(),
                      optimizer: str = "adam",
                      log_path: Optional[str] = None) -> TrainState:
    """Stage 2: freeze the teacher, train the student on the combined objective.

    ``unlabeled=None`` with a positive unlabeled batch size is a config
    error (run plain distillation with ``unlabeled_per_step=0`` instead);
    an empty pool is allowed and yields empty unlabeled batches.
    """
    if state.teacher is None:
        raise ConfigError("stage 2 requires a teacher model")
    if unlabeled is None and plan.unlabeled_per_step > 0:
        raise ConfigError("no unlabeled pool given; set unlabeled_per_step=0 for plain distillation")
    use_pool = unlabeled is not None and plan.unlabeled_per_step > 0
    if use_pool and len(unlabeled) > 0 and not state.student.has_aux:
        raise ConfigError("student needs an auxiliary head sized to the teacher for unlabeled distillation")
    freeze(state.teacher)
    student = state.student
    if (student.has_aux and student.aux_w.shape == student.main_w.shape):
        # Warm-start the stage-1-untouched aux head from the trained main
        # head so its gradients point somewhere useful from step one.
        student.aux_w.data = student.main_w.data.copy()
        student.aux_b.data = student.main_b.data.copy()

    x, y, groups = _labeled_arrays(labeled)
    pool = (np.stack([np.asarray(r.features, dtype=np.float64) for r in unlabeled])
            if use_pool and len(unlabeled) > 0
            else np.empty((0, x.shape[1])))
    epochs = schedule.total_epochs if epochs is None else epochs
    steps_per_epoch = _steps_per_epoch(len(labeled), plan)
    total_steps = epochs * steps_per_epoch
    # Separate streams keep the labeled batch sequence identical whether
    # or not a pool is consumed, so distillation-only and semi-supervised
    # runs are directly comparable.
    rng = np.random.default_rng([2, seed])
    rng_pool = np.random.default_rng([3, seed])
    opt = make_optimizer(optimizer, state.student.parameters())
    empty_batch = np.empty((0, x.shape[1]))

    # The frozen teacher's logits never change; compute them once.
    _, t_all, _ = forward(state.teacher, Tensor(x))
    t_logits_all = t_all.data
    t_logits_pool = None
    if len(pool):
        _, t_pool, _ = forward(state.teacher, Tensor(pool))
        t_logits_pool = t_pool.data

    step = 0
    for epoch in range(epochs):
        sums: dict[str, float] = {}
        for _ in range(steps_per_epoch):
            idx = pk_sample_indices(groups, plan.p_identities, plan.k_per_identity, rng)
            u_idx = uniform_sample_indices(len(pool), plan.unlabeled_per_step, rng_pool)
            xu = pool[u_idx] if u_idx.size else empty_batch
            tu = t_logits_pool[u_idx] if u_idx.size else None
            lr = lr_at(schedule, step / total_steps)
            with Tape():
                parts = sskd_components((x[idx], y[idx]), xu, state, temps,
                                        teacher_logits=t_logits_all[idx],
                                        teacher_logits_unlabeled=tu)
                total = parts["ce"]
                for key in ("kd", "kd_u"):
                    if key in parts:
                        total = ad.add(total, parts[key])
                ad.backward(total)
            opt.step(lr)
            zero_grads(state.student.parameters())
            for key, t in parts.items():
                sums[key] = sums.get(key, 0.0) + t.item()
            step += 1
        means = {k: v / steps_per_epoch for k, v in sums.items()}
        state.last_losses = means
        _append_log(log_path, {"stage": 2, "epoch": epoch, **means})
    state.optimizer = opt
    state.step += step
    return state
