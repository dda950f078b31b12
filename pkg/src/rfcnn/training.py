"""Optimizer, learning-rate schedule, loss, training loop, and the
last-K-epochs evaluation protocol.

The canonical recipe: Adam at 1e-4 for the first 50 epochs, linear decay
to 5e-6 between epochs 50 and 250, then 100 more epochs at the minimum
rate (350 total).  Reported numbers are the mean/std of test accuracy over
the last K epochs across runs; no model selection ever looks at the test
set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import mixup_batch, roll_time_batch


@dataclass(frozen=True)
class Schedule:
    """Piecewise-linear learning-rate schedule over 1-based epochs."""

    lr_start: float = 1e-4
    lr_end: float = 5e-6
    decay_start: int = 50
    decay_end: int = 250
    total_epochs: int = 350

    @classmethod
    def scaled(cls, total_epochs: int, lr_start: float = 1e-4,
               lr_end: float = 5e-6) -> "Schedule":
        """Scale the canonical 50/250/350 breakpoints proportionally to a
        reduced epoch budget (desk-scale runs)."""
        return cls(
            lr_start=lr_start,
            lr_end=lr_end,
            decay_start=max(1, round(total_epochs * 50 / 350)),
            decay_end=max(2, round(total_epochs * 250 / 350)),
            total_epochs=total_epochs,
        )


def lr_at(schedule: Schedule, epoch: int) -> float:
    """Learning rate for a 1-based epoch: constant at ``lr_start`` through
    ``decay_start``, linear to ``lr_end`` at ``decay_end``, constant after."""
    if not 1 <= epoch <= schedule.total_epochs:
        raise ValueError(
            f"epoch must be in [1, {schedule.total_epochs}], got {epoch}"
        )
    if epoch <= schedule.decay_start:
        return schedule.lr_start
    if epoch >= schedule.decay_end:
        return schedule.lr_end
    frac = (epoch - schedule.decay_start) / (schedule.decay_end - schedule.decay_start)
    return schedule.lr_start + frac * (schedule.lr_end - schedule.lr_start)


class Adam:
    """Bias-corrected Adam over a named parameter dict (in-place updates)."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray], lr: float) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name!r}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Soft-target cross entropy, averaged over the batch.

    Returns ``(loss, dlogits)`` with ``dlogits = (softmax(z) - y) / B``.
    """
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("non-finite logits")
    p = softmax(logits)
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-(targets * log_p).sum(axis=1).mean())
    dlogits = (p - targets) / logits.shape[0]
    return loss, dlogits


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(
            f"label outside [0, {num_classes}): {labels.min()}..{labels.max()}"
        )
    out = np.zeros((labels.shape[0], num_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def average_predictions(probabilities: list[np.ndarray]) -> np.ndarray:
    """Arithmetic mean of probability tensors from several models or
    checkpoints; rows remain probability vectors."""
    if len(probabilities) == 0:
        raise ValueError("no predictions to average")
    first = probabilities[0].shape
    for p in probabilities[1:]:
        if p.shape != first:
            raise ValueError(f"prediction shapes differ: {first} vs {p.shape}")
    return np.mean(np.stack(probabilities), axis=0)


def predicted_labels(probabilities: np.ndarray) -> np.ndarray:
    return probabilities.argmax(axis=1)


@dataclass
class TrainReport:
    """Per-epoch metrics for one training run."""

    epochs: list[int] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)

    def record(self, epoch, lr, train_loss, train_acc, test_loss, test_acc):
        self.epochs.append(epoch)
        self.lr.append(lr)
        self.train_loss.append(train_loss)
        self.train_accuracy.append(train_acc)
        self.test_loss.append(test_loss)
        self.test_accuracy.append(test_acc)

    def last_k_accuracy(self, k: int) -> list[float]:
        if k > len(self.test_accuracy):
            raise ValueError(
                f"asked for last {k} epochs but only "
                f"{len(self.test_accuracy)} recorded"
            )
        return self.test_accuracy[-k:]

    def to_lines(self) -> list[str]:
        lines = []
        for i in range(len(self.epochs)):
            lines.append(
                f"epoch={self.epochs[i]} lr={self.lr[i]:.8g} "
                f"train_loss={self.train_loss[i]:.6f} "
                f"train_acc={self.train_accuracy[i]:.4f} "
                f"test_loss={self.test_loss[i]:.6f} "
                f"test_acc={self.test_accuracy[i]:.4f}"
            )
        return lines


def summarize_runs(reports: list[TrainReport], last_k: int = 25):
    """Mean/std of test accuracy over the last ``last_k`` epochs of every
    run, pooled (K epochs x R runs values)."""
    values = []
    for report in reports:
        values.extend(report.last_k_accuracy(last_k))
    arr = np.asarray(values)
    return float(arr.mean()), float(arr.std()), len(values)


@dataclass
class TrainSettings:
    """Knobs for :func:`train_loop` (augmentation, batching, schedule)."""

    schedule: Schedule = field(default_factory=Schedule)
    batch_size: int = 32
    eval_batch_size: int = 256
    mixup_enabled: bool = False
    mixup_alpha: float = 0.3
    roll_enabled: bool = False
    seed: int = 0


def evaluate(net, x, y, batch_size: int = 256):
    """Eval-mode loss and accuracy over a dataset."""
    previous = net.mode
    net.set_mode("eval")
    try:
        losses = []
        correct = 0
        n = x.shape[0]
        targets = one_hot(y, net.spec.num_classes)
        for start in range(0, n, batch_size):
            xb = x[start : start + batch_size]
            yb = targets[start : start + batch_size]
            logits = net.forward(xb)
            loss, _ = cross_entropy(logits, yb)
            losses.append(loss * xb.shape[0])
            correct += int((logits.argmax(axis=1) == y[start : start + batch_size]).sum())
    finally:
        net.set_mode(previous)
    return sum(losses) / n, correct / n


def train_loop(net, train_data, test_data, settings: TrainSettings,
               snapshot_sink=None) -> TrainReport:
    """Run the full training recipe and record per-epoch metrics.

    ``train_data`` and ``test_data`` are ``(x, y)`` pairs with
    ``x [n, C, F, T]`` and integer labels.  Each epoch shuffles, assembles
    batches, applies the enabled augmentations, takes Adam steps at the
    scheduled rate, then evaluates on the test set in eval mode.  Test
    metrics are only ever recorded, never used for any training decision.
    ``snapshot_sink(epoch, net)`` is called after each epoch when given
    (checkpoint-ring retention for prediction averaging).
    """
    x_train, y_train = train_data
    x_test, y_test = test_data
    n = x_train.shape[0]
    if n == 0 or x_test.shape[0] == 0:
        raise ValueError("empty dataset")
    num_classes = net.spec.num_classes
    y_train = np.asarray(y_train)
    y_test = np.asarray(y_test)
    targets = one_hot(y_train, num_classes, dtype=net.dtype)
    x_train = np.asarray(x_train, dtype=net.dtype)
    x_test = np.asarray(x_test, dtype=net.dtype)

    seeds = np.random.SeedSequence(settings.seed).spawn(3)
    shuffle_rng, mix_rng, roll_rng = (np.random.default_rng(s) for s in seeds)

    optimizer = Adam()
    report = TrainReport()
    schedule = settings.schedule
    for epoch in range(1, schedule.total_epochs + 1):
        lr = lr_at(schedule, epoch)
        net.set_mode("train")
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        epoch_correct = 0
        epoch_seen = 0
        for start in range(0, n, settings.batch_size):
            idx = order[start : start + settings.batch_size]
            if idx.shape[0] < 2:
                continue  # train-mode batchnorm needs >= 2 rows
            xb = x_train[idx]
            yb = targets[idx]
            raw_labels = y_train[idx]
            if settings.roll_enabled:
                xb = roll_time_batch(xb, roll_rng)
            if settings.mixup_enabled:
                xb, yb, _ = mixup_batch(xb, yb, settings.mixup_alpha, mix_rng)
            logits = net.forward(xb)
            loss, dlogits = cross_entropy(logits, yb)
            grads = net.backward(dlogits)
            optimizer.step(net.parameters(), grads, lr)
            epoch_loss += loss * idx.shape[0]
            epoch_correct += int((logits.argmax(axis=1) == raw_labels).sum())
            epoch_seen += idx.shape[0]
        test_loss, test_acc = evaluate(
            net, x_test, y_test, settings.eval_batch_size
        )
        report.record(
            epoch, lr, epoch_loss / max(1, epoch_seen),
            epoch_correct / max(1, epoch_seen), test_loss, test_acc,
        )
        if snapshot_sink is not None:
            snapshot_sink(epoch, net)
    return report
