"""Class-incremental benchmark harness.

A task stream follows the "B-m Inc-n" protocol: the first task carries m
classes, every later task n new classes, with the class order permuted by
a seeded generator.  Training walks the tasks in order over the union of
the current task's data and a small replay buffer (first-e exemplars per
seen class, kept in stream order).

Batch order is derived from (seed, task, epoch) only, never from the
optimizer mode, so different modes consume identical batch sequences and
trajectory-equality checks are meaningful.

Reported metrics follow the usual class-incremental convention: the
stage accuracy after task t is the pooled accuracy over the test data of
all classes seen so far (argmax restricted to seen classes); ``avg_acc``
is the mean of the stage accuracies and ``last_acc`` the final one.
"""

from __future__ import annotations

import csv
import hashlib
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from . import optim
from .diagnostics import TraceBuffer, record_step
from .objectives import Batch, Objective, init_params
from .optim import OptimizerConfig, TurboState, scheduled_k
from .rng import Rng
from .vectors import NORM_FLOOR

# salts for deriving independent sub-streams from the experiment seed
_INIT_SALT = 0x1A17
_SHUFFLE_SALT = 0x5AFF


@dataclass(frozen=True)
class Task:
    train: Batch
    test: Batch
    class_ids: tuple[int, ...]


@dataclass(frozen=True)
class TaskStream:
    tasks: tuple[Task, ...]
    total_classes: int
    split: str  # e.g. "B-2 Inc-2"

    @property
    def feature_dim(self) -> int:
        return self.tasks[0].train.inputs.shape[1]


class ReplayBuffer:
    """At most ``per_class`` exemplars per seen class, first-come order."""

    def __init__(self, per_class: int):
        if per_class < 0:
            raise ValueError("replay size must be >= 0")
        self.per_class = per_class
        self._store: dict[int, list[np.ndarray]] = {}

    def add_task(self, train: Batch, class_ids) -> None:
        if self.per_class == 0:
            return
        for cid in class_ids:
            slot = self._store.setdefault(int(cid), [])
            for row in train.inputs[train.labels == cid]:
                if len(slot) >= self.per_class:
                    break
                slot.append(row)

    def __len__(self) -> int:
        return sum(len(v) for v in self._store.values())

    def as_arrays(self):
        if not self._store:
            return None
        xs, ys = [], []
        for cid in sorted(self._store):
            for row in self._store[cid]:
                xs.append(row)
                ys.append(cid)
        return np.array(xs), np.array(ys, dtype=np.int64)


StepEvent = namedtuple(
    "StepEvent",
    "task step sharp_triggered flat_triggered sharp_cached flat_cached evals",
)


@dataclass
class RunMetrics:
    acc_matrix: list            # acc_matrix[stage][task] or None when unseen
    stage_accs: list
    avg_acc: float | None
    last_acc: float | None
    eval_count: int
    total_steps: int
    events: list = field(default_factory=list)
    batch_digest: str = ""
    trace: TraceBuffer | None = None
    theta_trace: list | None = None
    final_theta: np.ndarray | None = None


def make_gaussian_stream(
    dim: int,
    classes: int,
    base_classes: int,
    increment: int,
    samples_per_class: int,
    seed: int,
    mean_scale: float = 6.0,
    noise_scale: float = 1.0,
    test_per_class: int | None = None,
) -> TaskStream:
    """Synthetic stream: unit-noise Gaussian blobs on a sphere of radius
    ``mean_scale``, split B-m Inc-n after a seeded class permutation.

    Draw order is frozen: class means first, then per class the train
    rows followed by the test rows, then the class permutation.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if base_classes < 1 or increment < 1 or samples_per_class < 1:
        raise ValueError("base_classes, increment, samples_per_class must be >= 1")
    if (classes - base_classes) % increment != 0 or classes < base_classes:
        raise ValueError(
            f"classes={classes} is not base_classes={base_classes} plus a whole "
            f"number of increments of {increment}"
        )
    test_n = samples_per_class if test_per_class is None else test_per_class
    rng = Rng(seed)

    means = []
    for _ in range(classes):
        u = rng.normals(dim)
        norm = float(np.sqrt(np.sum(u * u)))
        while norm < NORM_FLOOR:  # never happens in practice, kept for safety
            u = rng.normals(dim)
            norm = float(np.sqrt(np.sum(u * u)))
        means.append(mean_scale * u / norm)

    train_rows, test_rows = [], []
    for c in range(classes):
        train_rows.append(
            means[c] + noise_scale * rng.normal_matrix(samples_per_class, dim)
        )
        test_rows.append(means[c] + noise_scale * rng.normal_matrix(test_n, dim))

    order = rng.permutation(classes)
    n_tasks = 1 + (classes - base_classes) // increment
    tasks = []
    cursor = 0
    for t in range(n_tasks):
        width = base_classes if t == 0 else increment
        ids = tuple(sorted(order[cursor : cursor + width]))
        cursor += width
        tr_x = np.concatenate([train_rows[c] for c in ids])
        tr_y = np.concatenate(
            [np.full(samples_per_class, c, dtype=np.int64) for c in ids]
        )
        te_x = np.concatenate([test_rows[c] for c in ids])
        te_y = np.concatenate([np.full(test_n, c, dtype=np.int64) for c in ids])
        tasks.append(Task(Batch(tr_x, tr_y), Batch(te_x, te_y), ids))
    return TaskStream(
        tuple(tasks), classes, f"B-{base_classes} Inc-{increment}"
    )


def load_csv_stream(path, base_classes: int, increment: int, seed: int) -> TaskStream:
    """Stream from a CSV of ``f0,...,f{d-1},label`` rows.

    Rows are grouped by label; each class is split 80/20 train/test by
    row order.  Malformed input raises ValueError naming the line.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if len(header) < 2 or header[-1] != "label":
            raise ValueError(f"{path}: line 1: header must be f0,...,f{{d-1}},label")
        dim = len(header) - 1
        expected = [f"f{i}" for i in range(dim)] + ["label"]
        if header != expected:
            raise ValueError(f"{path}: line 1: header must be {','.join(expected)}")

        by_class: dict[int, list[list[float]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise ValueError(
                    f"{path}: line {lineno}: expected {dim + 1} fields, got {len(row)}"
                )
            try:
                feats = [float(v) for v in row[:-1]]
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: non-numeric feature value"
                ) from None
            try:
                label = int(row[-1])
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: non-integer label {row[-1]!r}"
                ) from None
            if label < 0:
                raise ValueError(f"{path}: line {lineno}: unknown label {label}")
            by_class.setdefault(label, []).append(feats)

    if not by_class:
        raise ValueError(f"{path}: no data rows")
    classes = max(by_class) + 1
    for c in range(classes):
        if c not in by_class:
            raise ValueError(f"{path}: unknown label layout, class {c} has no rows")
        if len(by_class[c]) < 2:
            raise ValueError(f"{path}: class {c} needs at least 2 rows for the split")
    if (classes - base_classes) % increment != 0 or classes < base_classes:
        raise ValueError(
            f"{path}: class count mismatch: {classes} classes cannot be split as "
            f"B-{base_classes} Inc-{increment}"
        )

    order = Rng(seed).permutation(classes)
    n_tasks = 1 + (classes - base_classes) // increment
    tasks = []
    cursor = 0
    for t in range(n_tasks):
        width = base_classes if t == 0 else increment
        ids = tuple(sorted(order[cursor : cursor + width]))
        cursor += width
        tr_x, tr_y, te_x, te_y = [], [], [], []
        for c in ids:
            rows = np.array(by_class[c], dtype=np.float64)
            n_train = int(np.floor(0.8 * len(rows)))
            n_train = max(1, min(n_train, len(rows) - 1))
            tr_x.append(rows[:n_train])
            tr_y.append(np.full(n_train, c, dtype=np.int64))
            te_x.append(rows[n_train:])
            te_y.append(np.full(len(rows) - n_train, c, dtype=np.int64))
        tasks.append(
            Task(
                Batch(np.concatenate(tr_x), np.concatenate(tr_y)),
                Batch(np.concatenate(te_x), np.concatenate(te_y)),
                ids,
            )
        )
    return TaskStream(tuple(tasks), classes, f"B-{base_classes} Inc-{increment}")


def evaluate(obj: Objective, theta: np.ndarray, tasks_seen) -> tuple[list[float], float]:
    """Per-task accuracies plus pooled accuracy, argmax over seen classes."""
    seen: set[int] = set()
    for task in tasks_seen:
        seen.update(task.class_ids)
    mask = np.full(obj.classes, -np.inf)
    mask[sorted(seen)] = 0.0
    per_task = []
    correct = 0
    total = 0
    for task in tasks_seen:
        logits = obj.predict_logits(theta, task.test.inputs) + mask
        preds = np.argmax(logits, axis=1)
        hits = int(np.sum(preds == task.test.labels))
        per_task.append(hits / task.test.size)
        correct += hits
        total += task.test.size
    return per_task, correct / total if total else 0.0


def train_task(
    obj: Objective,
    theta: np.ndarray,
    task: Task,
    replay: ReplayBuffer,
    cfg: OptimizerConfig,
    state: TurboState,
    epochs: int,
    batch_size: int,
    rng: Rng,
    trace: TraceBuffer | None = None,
    events: list | None = None,
    digest=None,
    theta_trace: list | None = None,
):
    """Minibatch-train one task over its data plus the replay exemplars.

    Shuffle order comes from ``rng.derive(task_index, epoch)`` so it
    depends only on (seed, task, epoch).  The replay buffer is updated by
    the caller after the task finishes.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    stored = replay.as_arrays()
    if stored is None:
        xs, ys = task.train.inputs, task.train.labels
    else:
        xs = np.concatenate([task.train.inputs, stored[0]])
        ys = np.concatenate([task.train.labels, stored[1]])
    n = len(ys)
    t = state.task_index
    for epoch in range(epochs):
        order = np.array(
            rng.derive(_SHUFFLE_SALT, t, epoch).permutation(n), dtype=np.int64
        )
        if digest is not None:
            digest.update(np.int64(t).tobytes())
            digest.update(np.int64(epoch).tobytes())
            digest.update(order.tobytes())
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            batch = Batch(xs[idx], ys[idx])
            theta, bundle, state = optim.step(obj, theta, batch, cfg, state)
            if trace is not None:
                record_step(bundle, trace)
            if events is not None:
                events.append(
                    StepEvent(
                        t,
                        state.step_in_task - 1,
                        bundle.sharp_triggered,
                        bundle.flat_triggered,
                        bundle.sharp_cached,
                        bundle.flat_cached,
                        bundle.evals,
                    )
                )
            if theta_trace is not None:
                theta_trace.append(theta.copy())
    return theta, state


def run_experiment(
    obj: Objective,
    stream: TaskStream,
    cfg: OptimizerConfig,
    epochs: int,
    batch_size: int,
    seed: int,
    replay_per_class: int = 0,
    diagnostics: bool = False,
    trace_window: int = 5,
    keep_trace_vectors: bool = False,
    record_theta: bool = False,
    init_scale: float = 0.1,
) -> RunMetrics:
    """Sequential training over the whole stream; deterministic per seed.

    The initial parameters and all batch orders derive from ``seed``
    alone, so two modes given the same seed see the same data in the same
    order starting from the same point.
    """
    rng = Rng(seed)
    theta = init_params(obj, rng.derive(_INIT_SALT), scale=init_scale)
    state = optim.make_state(cfg)
    replay = ReplayBuffer(replay_per_class)
    trace = (
        TraceBuffer(window=trace_window, keep_vectors=keep_trace_vectors)
        if diagnostics
        else None
    )
    events: list = []
    theta_trace: list | None = [] if record_theta else None
    digest = hashlib.sha256()

    classifier = hasattr(obj, "predict_logits")
    acc_matrix: list = []
    stage_accs: list = []
    for t, task in enumerate(stream.tasks):
        state.reset_task(t)
        state.current_k = (
            scheduled_k(cfg.k0, cfg.sched_slope, t, cfg.total_tasks)
            if cfg.use_scheduler
            else cfg.k0
        )
        theta, state = train_task(
            obj,
            theta,
            task,
            replay,
            cfg,
            state,
            epochs,
            batch_size,
            rng,
            trace=trace,
            events=events,
            digest=digest,
            theta_trace=theta_trace,
        )
        replay.add_task(task.train, task.class_ids)
        if classifier:
            per_task, pooled = evaluate(obj, theta, stream.tasks[: t + 1])
            acc_matrix.append(per_task + [None] * (len(stream.tasks) - t - 1))
            stage_accs.append(pooled)

    avg = sum(stage_accs) / len(stage_accs) if stage_accs else None
    last = stage_accs[-1] if stage_accs else None
    return RunMetrics(
        acc_matrix=acc_matrix,
        stage_accs=stage_accs,
        avg_acc=avg,
        last_acc=last,
        eval_count=state.eval_count,
        total_steps=len(events),
        events=events,
        batch_digest=digest.hexdigest(),
        trace=trace,
        theta_trace=theta_trace,
        final_theta=theta,
    )
