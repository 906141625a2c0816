"""Lifelong training: replay-mixed batches, pseudo-labels from a frozen Student,
Teacher snapshots at task boundaries, and the per-epoch metrics log.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import diffcore as dc
from .data import TaskDataset, split_semi
from .eval.metrics import accuracy_eval, nll_eval
from .student import (
    StudentConfig,
    StudentModel,
    classify,
    loss_semi,
    loss_supervised,
    loss_unsupervised,
)
from .teacher import TeacherConfig, TeacherModel, TeacherSnapshot, task_switch, teacher_train_step


class MissingSnapshotError(RuntimeError):
    pass


@dataclass
class TaskSequence:
    tasks: list[TaskDataset]
    r: float = 0.5
    k: int = 0

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("task sequence is empty")
        if not 0.0 < self.r <= 1.0:
            raise ValueError("replay ratio r must lie in (0, 1]")
        shapes = {t.input_shape for t in self.tasks}
        if len(shapes) != 1:
            raise ValueError(f"all tasks must share one input shape, got {sorted(shapes)}")
        if not 0 <= self.k <= len(self.tasks):
            raise ValueError("current index out of range")

    def __len__(self) -> int:
        return len(self.tasks)

    @property
    def input_shape(self) -> tuple:
        return self.tasks[0].input_shape

    @property
    def n_classes(self) -> int:
        return max(t.n_classes for t in self.tasks)


@dataclass
class ReplayBatch:
    x: np.ndarray
    y: np.ndarray  # -1 marks an unlabeled slot
    d: np.ndarray
    generated: np.ndarray

    def __len__(self) -> int:
        return len(self.x)

    def select(self, mask: np.ndarray) -> "ReplayBatch":
        return ReplayBatch(self.x[mask], self.y[mask], self.d[mask], self.generated[mask])


def pseudo_label_batch(student: StudentModel, generated: np.ndarray) -> np.ndarray:
    """The Student's predicted class for every generated sample (no confidence filter)."""
    with dc.no_grad():
        return classify(student, generated)


def mix_batch(snapshot: TeacherSnapshot | None, student: StudentModel | None, fresh: ReplayBatch, r: float,
              rng: np.random.Generator, k: int, label: bool = True) -> ReplayBatch:
    """Replace each fresh slot by a Teacher sample with probability ``1 - r``.

    ``k`` is the 1-based index of the task being learned; generated samples get
    a domain drawn uniformly over tasks 1..k-1 and, when ``label`` is set, the
    frozen ``student``'s prediction as their class.
    """
    if k <= 1 or r >= 1.0:
        return fresh
    if snapshot is None:
        raise MissingSnapshotError(f"task {k} needs a Teacher snapshot for replay")
    keep = rng.uniform(size=len(fresh)) < r
    m = int(np.sum(~keep))
    if m == 0:
        return fresh
    cfg = snapshot.config
    d_gen = rng.integers(0, k - 1, size=m)
    z = rng.standard_normal((m, cfg.z_dim))
    x_gen = snapshot.generate(z, np.eye(cfg.k_max)[d_gen]).reshape((m,) + fresh.x.shape[1:])
    if label:
        if student is None:
            raise ValueError("labeling generated samples needs a student")
        y_gen = pseudo_label_batch(student, x_gen)
    else:
        y_gen = np.full(m, -1)
    x = fresh.x.copy()
    y = fresh.y.copy()
    d = fresh.d.copy()
    x[~keep], y[~keep], d[~keep] = x_gen, y_gen, d_gen
    return ReplayBatch(x, y, d, ~keep)


# ------------------------------------------------------------------ metrics log

LOG_COLUMNS = (
    "kind", "task_index", "epoch", "step", "loss_total", "loss_recon", "kl_z", "kl_delta", "kl_s",
    "teacher_critic_loss", "teacher_gen_loss", "eval_task", "accuracy", "nll",
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class MetricsLog:
    rows: list[dict] = field(default_factory=list)

    def append(self, **row) -> None:
        unknown = set(row) - set(LOG_COLUMNS)
        if unknown:
            raise KeyError(f"unknown metrics columns {sorted(unknown)}")
        self.rows.append({c: row.get(c) for c in LOG_COLUMNS})

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for row in self.rows:
                w.writerow([_fmt(row[c]) for c in LOG_COLUMNS])

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for row in self.rows:
                fh.write(json.dumps({k: v for k, v in row.items() if v is not None}, sort_keys=True) + "\n")

    @staticmethod
    def read_csv(path) -> list[dict]:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))

    def final_accuracy(self, eval_task: int) -> float:
        vals = [r["accuracy"] for r in self.rows if r["kind"] == "eval" and r["eval_task"] == eval_task]
        if not vals:
            raise KeyError(f"no accuracy rows for task {eval_task}")
        return vals[-1]

    def accuracy_after(self, task_index: int, eval_task: int) -> float:
        """Accuracy on ``eval_task`` at the last epoch of ``task_index`` (both 1-based)."""
        vals = [r["accuracy"] for r in self.rows
                if r["kind"] == "eval" and r["task_index"] == task_index and r["eval_task"] == eval_task]
        if not vals:
            raise KeyError(f"no accuracy rows for task {eval_task} after task {task_index}")
        return vals[-1]


# ------------------------------------------------------------------ orchestration

@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    teacher_lr: float = 1e-3
    r: float = 0.5
    independence: bool = False
    labeled_per_class: int = 0
    nll_samples: int = 0
    teacher_steps: int = 1
    train_teacher: bool | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr <= 0 or self.teacher_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 < self.r <= 1.0:
            raise ValueError("replay ratio r must lie in (0, 1]")
        if self.teacher_steps < 1:
            raise ValueError("teacher_steps must be >= 1")
        if self.labeled_per_class < 0 or self.nll_samples < 0:
            raise ValueError("labeled_per_class and nll_samples must be nonnegative")


class LifelongResult(NamedTuple):
    student: StudentModel
    teacher: TeacherModel
    log: MetricsLog
    snapshots: list


class _Streams:
    """Independent random streams, so e.g. Teacher training never perturbs the Student's draws."""

    NAMES = ("student_init", "teacher_init", "order", "teacher_order", "mix", "teacher_mix",
             "student_noise", "teacher_noise", "eval", "split")

    def __init__(self, seed: int):
        children = np.random.SeedSequence(int(seed)).spawn(len(self.NAMES))
        for name, child in zip(self.NAMES, children):
            setattr(self, name, np.random.default_rng(child))


def _fresh(ds: TaskDataset, idx: np.ndarray, k: int, labeled: bool = True) -> ReplayBatch:
    y = ds.train_y[idx] if labeled else np.full(len(idx), -1)
    return ReplayBatch(ds.train_x[idx], y.copy(), np.full(len(idx), k - 1), np.zeros(len(idx), dtype=bool))


def _student_step(student: StudentModel, mode: str, batch: ReplayBatch, cfg: TrainConfig,
                  rng: np.random.Generator, labeled: ReplayBatch | None = None):
    student.store.zero_grad()
    if mode == "supervised":
        terms = loss_supervised(student, batch.x, batch.y, batch.d, rng, with_independence=cfg.independence)
    elif mode == "unsupervised":
        terms = loss_unsupervised(student, batch.x, batch.d, rng)
    else:
        has = batch.y >= 0
        lab = batch.select(has)
        if labeled is not None:
            lab = ReplayBatch(np.concatenate([labeled.x, lab.x]), np.concatenate([labeled.y, lab.y]),
                              np.concatenate([labeled.d, lab.d]), np.concatenate([labeled.generated, lab.generated]))
        unl = batch.select(~has)
        terms = loss_semi(student, (lab.x, lab.y, lab.d), (unl.x, unl.d), rng, with_independence=cfg.independence)
    terms.total.backward()
    names = [n for n in student.trainable_names() if cfg.independence or not n.startswith("zeta.")]
    dc.adam_step(student.store, cfg.lr, names=names)
    student.store.zero_grad()
    return terms.as_dict()


def _evaluate(student, tasks, k, epoch, step, mode, cfg, streams, log):
    for j in range(k):
        ds = tasks[j]
        acc = accuracy_eval(student, ds.test_x, ds.test_y) if mode != "unsupervised" else None
        nll = None
        if cfg.nll_samples > 0:
            nll = nll_eval(student, ds.test_x, j, cfg.nll_samples, streams.eval)
        log.append(kind="eval", task_index=k, epoch=epoch, step=step, eval_task=j + 1, accuracy=acc, nll=nll)


def lifelong_train(seq: TaskSequence, mode: str, student_cfg: StudentConfig, teacher_cfg: TeacherConfig,
                   train_cfg: TrainConfig, seed: int = 0,
                   student: StudentModel | None = None) -> LifelongResult:
    """Learn ``seq`` task by task with generative replay.

    For every task: train Teacher and Student on replay-mixed streams drawn
    independently from the same mixture, log per-epoch losses and per-task
    test metrics, then freeze the Teacher (and a labeling copy of the
    Student) at the boundary.
    """
    if mode != student_cfg.mode:
        raise ValueError(f"training mode {mode!r} differs from the student's mode {student_cfg.mode!r}")
    if student_cfg.input_shape != seq.input_shape or tuple(teacher_cfg.data_shape) != seq.input_shape:
        raise ValueError("student/teacher shapes must match the task input shape")
    if student_cfg.k_max < len(seq) or teacher_cfg.k_max < len(seq):
        raise ValueError(f"k_max must cover all {len(seq)} tasks")
    if student_cfg.n_classes < seq.n_classes:
        raise ValueError("student has fewer classes than the tasks")
    streams = _Streams(seed)
    student = student or StudentModel(student_cfg, streams.student_init)
    teacher = TeacherModel(teacher_cfg, streams.teacher_init)
    # with r = 1 no replay sample is ever drawn, so by default the Teacher is skipped
    use_teacher = train_cfg.r < 1.0 if train_cfg.train_teacher is None else train_cfg.train_teacher
    log = MetricsLog()
    snapshots: list[TeacherSnapshot] = []
    snapshot = labeler = None
    bs = train_cfg.batch_size
    step = 0
    for k_idx, ds in enumerate(seq.tasks):
        k = k_idx + 1
        seq.k = k
        student.n_seen_domains = k
        n = len(ds.train_x)
        if mode == "semi":
            split = split_semi(ds, train_cfg.labeled_per_class, int(streams.split.integers(2**31)))
            pool, lab_pool = split.unlabeled, split.labeled
            if len(lab_pool) == 0:
                raise ValueError("semi-supervised training needs labeled_per_class > 0")
        else:
            pool, lab_pool = np.arange(n), None
        for epoch in range(1, train_cfg.epochs + 1):
            order = streams.order.permutation(pool)
            t_order = streams.teacher_order.permutation(n)
            lab_order = streams.order.permutation(lab_pool) if lab_pool is not None else None
            sums: dict[str, float] = {}
            count = 0
            for b, start in enumerate(range(0, len(order), bs)):
                idx = order[start:start + bs]
                labeled = mode != "semi"
                fresh = _fresh(ds, idx, k, labeled=labeled)
                batch = mix_batch(snapshot, labeler, fresh, seq.r, streams.mix, k, label=mode != "unsupervised")
                lab_batch = None
                if mode == "semi":
                    lb = min(bs, len(lab_pool))
                    li = np.take(lab_order, np.arange(b * lb, (b + 1) * lb), mode="wrap")
                    lab_batch = mix_batch(snapshot, labeler, _fresh(ds, li, k), seq.r, streams.mix, k)
                row = _student_step(student, mode, batch, train_cfg, streams.student_noise, lab_batch)
                if use_teacher:
                    t_idx = t_order[start:start + bs]
                    t_batch = mix_batch(snapshot, None, _fresh(ds, t_idx, k, labeled=False), seq.r,
                                        streams.teacher_mix, k, label=False)
                    delta = np.eye(teacher_cfg.k_max)[t_batch.d]
                    for _ in range(train_cfg.teacher_steps):
                        c_loss, g_loss = teacher_train_step(teacher, t_batch.x, delta, streams.teacher_noise,
                                                            lr=train_cfg.teacher_lr)
                    row["teacher_critic_loss"], row["teacher_gen_loss"] = c_loss, g_loss
                for key, v in row.items():
                    sums[key] = sums.get(key, 0.0) + v
                count += 1
                step += 1
            mean = {key: v / count for key, v in sums.items()}
            log.append(kind="epoch", task_index=k, epoch=epoch, step=step, loss_total=mean["total"],
                       loss_recon=mean["recon"], kl_z=mean["kl_z"], kl_delta=mean["kl_delta"],
                       kl_s=mean["kl_s"], teacher_critic_loss=mean.get("teacher_critic_loss"),
                       teacher_gen_loss=mean.get("teacher_gen_loss"))
            _evaluate(student, seq.tasks, k, epoch, step, mode, train_cfg, streams, log)
        if use_teacher:
            snapshot = task_switch(teacher, k)
            snapshots.append(snapshot)
        if mode != "unsupervised":
            labeler = student.copy()
    return LifelongResult(student, teacher, log, snapshots)


def config_dict(student_cfg: StudentConfig, teacher_cfg: TeacherConfig, train_cfg: TrainConfig) -> dict:
    return {"student": student_cfg.to_dict(), "teacher": teacher_cfg.to_dict(), "train": asdict(train_cfg)}
