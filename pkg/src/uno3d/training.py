"""Supervised training of the operator: MAE loss, Adam, plateau learning-rate decay."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensorcore as tc
from .normalize import TARGET_STD, NormStats, normalize_inputs
from .operator import UnoModel, network
from .tensorcore import DiffTensor

__all__ = [
    "TrainingConfig",
    "TrainingData",
    "NormStats",
    "normalize_inputs",
    "mae_loss",
    "mae_value",
    "AdamState",
    "adam_step",
    "PlateauScheduler",
    "lr_on_plateau",
    "split_indices",
    "TrainingHistory",
    "TrainingDiverged",
    "train",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    split_fraction: float = 0.9
    lr_initial: float = 1e-3
    lr_factor: float = 0.5
    plateau_patience_epochs: int = 20
    epochs: int = 110
    batch_size: int = 8
    micro_batch: int | None = None
    betas: tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    input_norm_std_target: float = TARGET_STD
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        self.validate()

    def validate(self):
        if not 0 < self.split_fraction < 1:
            raise ValueError(f"split_fraction must lie in (0, 1), got {self.split_fraction}")
        if not 0 < self.lr_factor < 1:
            raise ValueError(f"lr_factor must lie in (0, 1), got {self.lr_factor}")
        if self.plateau_patience_epochs < 1:
            raise ValueError("plateau_patience_epochs must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.micro_batch is not None and self.micro_batch < 1:
            raise ValueError("micro_batch must be >= 1")
        if self.lr_initial <= 0 or self.epsilon <= 0 or self.input_norm_std_target <= 0:
            raise ValueError("lr_initial, epsilon and input_norm_std_target must be positive")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ValueError(f"adam betas must lie in [0, 1), got {self.betas}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingData:
    """Raw inputs ``a = V_S**2`` of shape ``(N, X, Y, Z)`` and targets ``(N, 3, X, Y, T)``."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.inputs.ndim != 4 or self.targets.ndim != 5:
            raise ValueError(f"expected (N, X, Y, Z) inputs and (N, 3, X, Y, T) targets, "
                             f"got {self.inputs.shape} and {self.targets.shape}")
        if len(self.inputs) != len(self.targets) or len(self.inputs) == 0:
            raise ValueError("inputs and targets must hold the same, non-zero number of samples")
        if self.targets.shape[1] != 3 or self.targets.shape[2:4] != self.inputs.shape[1:3]:
            raise ValueError(f"targets {self.targets.shape} do not match inputs {self.inputs.shape}")

    def __len__(self):
        return len(self.inputs)

    def subset(self, idx) -> "TrainingData":
        idx = np.asarray(idx, dtype=np.int64)
        return TrainingData(self.inputs[idx], self.targets[idx])


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss or gradient; ``model`` holds the last good checkpoint."""

    def __init__(self, message: str, model: UnoModel | None = None, epoch: int | None = None):
        super().__init__(message)
        self.model = model
        self.epoch = epoch


def mae_loss(pred: DiffTensor, target: np.ndarray) -> DiffTensor:
    """Per-component mean absolute error, summed over the components.

    The component axis is axis 1 of a ``(B, 3, X, Y, T)`` batch or axis 0 of a
    single ``(3, X, Y, T)`` prediction.
    """
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.value.ndim not in (4, 5):
        raise ValueError(f"expected (3, X, Y, T) or (B, 3, X, Y, T), got {pred.shape}")
    n_comp = pred.shape[pred.value.ndim - 4]
    diff = tc.add(pred, tc.constant(-target))
    return tc.mul(tc.sum_all(tc.absolute(diff)), n_comp / diff.value.size)


def mae_value(pred: np.ndarray, target: np.ndarray) -> float:
    """Plain-array version of :func:`mae_loss`."""
    return float(mae_loss(tc.constant(pred), target).value)


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def _real_view(a: np.ndarray) -> np.ndarray:
    # complex weights are optimized as independent real and imaginary parts
    return a.view(np.float64) if np.iscomplexobj(a) else a


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update; returns new parameters and the updated state.

    Complex gradients follow the ``dL/dRe + 1j dL/dIm`` convention, so their
    real view is the gradient of the real and imaginary parts.
    """
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise FloatingPointError(f"non-finite gradient in {', '.join(sorted(bad))}")
    b1, b2 = betas
    t = state.step + 1
    out = {}
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            out[k] = p
            continue
        g = _real_view(np.asarray(g, dtype=p.dtype))
        m = state.m.get(k, np.zeros_like(g))
        v = state.v.get(k, np.zeros_like(g))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        new = _real_view(p) - lr * mhat / (np.sqrt(vhat) + eps)
        out[k] = new.view(p.dtype) if np.iscomplexobj(p) else new
        state.m[k], state.v[k] = m, v
    state.step = t
    return out, state


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without strict improvement."""

    def __init__(self, lr: float = 1e-3, factor: float = 0.5, patience: int = 20):
        if not 0 < factor < 1:
            raise ValueError("factor must lie in (0, 1)")
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.lr = float(lr)
        self.factor = factor
        self.patience = patience
        self.best = math.inf
        self.bad_epochs = 0

    def observe(self, val_loss: float) -> float:
        """Record one epoch's validation loss and return the rate for the next epoch."""
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr

    def state_dict(self) -> dict:
        return {"lr": self.lr, "best": self.best, "bad_epochs": self.bad_epochs}


def lr_on_plateau(history, lr_initial: float = 1e-3, factor: float = 0.5, patience: int = 20) -> list[float]:
    """Learning rate in effect after each epoch of a validation-loss history."""
    if len(history) == 0:
        raise ValueError("at least one epoch is required")
    sched = PlateauScheduler(lr_initial, factor, patience)
    return [sched.observe(float(v)) for v in history]


def split_indices(n: int, split_fraction: float = 0.9, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle; the last ``ceil((1 - split_fraction) n)`` indices are held out."""
    if n < 2:
        raise ValueError("at least two samples are needed for a train/validation split")
    perm = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0]).permutation(n)
    # round away float noise such as (1 - 0.9) * 10 = 0.9999999999999998
    n_val = min(n - 1, max(1, math.ceil(round((1.0 - split_fraction) * n, 9))))
    return np.sort(perm[: n - n_val]), np.sort(perm[n - n_val:])


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainingHistory:
    epochs: list[int] = field(default_factory=list)
    train_mae: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    train_indices: list[int] = field(default_factory=list)
    val_indices: list[int] = field(default_factory=list)

    def append(self, epoch, train_mae, val_mae, lr):
        self.epochs.append(epoch)
        self.train_mae.append(float(train_mae))
        self.val_mae.append(float(val_mae))
        self.lr.append(float(lr))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mae", "val_mae", "lr"])
            for row in zip(self.epochs, self.train_mae, self.val_mae, self.lr):
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
        return path


def _prepare(model: UnoModel, data: TrainingData, norm: NormStats) -> np.ndarray:
    entry = model.schedule.entry
    if tuple(data.inputs.shape[1:]) != entry:
        raise ValueError(f"data grid {data.inputs.shape[1:]} does not match the entry grid {entry}")
    expected = model.output_shape(entry)
    if tuple(data.targets.shape[1:]) != expected:
        raise ValueError(f"targets {data.targets.shape[1:]} do not match the model output {expected}")
    return normalize_inputs(data.inputs, norm)


def _batch_grad(model: UnoModel, x: np.ndarray, y: np.ndarray, micro: int):
    """Loss and gradients of the batch-mean MAE, accumulated over fixed-order chunks."""
    n = len(x)
    grads: dict[str, np.ndarray] = {}
    loss = 0.0
    for s in range(0, n, micro):
        xs, ys = x[s:s + micro], y[s:s + micro]
        nodes = model.nodes(requires_grad=True)
        out = mae_loss(network(tc.constant(xs), nodes, model.schedule), ys)
        w = len(xs) / n
        out = tc.mul(out, w)
        tc.backward(out)
        loss += float(out.value)
        for k, node in nodes.items():
            if node.grad is None:
                continue
            grads[k] = node.grad.copy() if k not in grads else grads[k] + node.grad
    return loss, grads


def _evaluate(model: UnoModel, x: np.ndarray, y: np.ndarray, micro: int) -> float:
    if len(x) == 0:
        return float("nan")
    total = 0.0
    nodes = model.nodes()
    for s in range(0, len(x), micro):
        pred = network(tc.constant(x[s:s + micro]), nodes, model.schedule)
        total += mae_value(pred.value, y[s:s + micro]) * len(pred.value)
    return total / len(x)


def _snapshot(model: UnoModel) -> UnoModel:
    return UnoModel(schedule=model.schedule, params={k: v.copy() for k, v in model.params.items()},
                    norm=model.norm, seed=model.seed, meta=dict(model.meta))


def train(model: UnoModel, data: TrainingData, config: TrainingConfig = TrainingConfig(),
          val_data: TrainingData | None = None,
          on_epoch: Callable[[int, TrainingHistory, UnoModel], None] | None = None,
          ) -> tuple[UnoModel, TrainingHistory]:
    """Mini-batch Adam on the MAE loss with plateau decay of the learning rate.

    Without ``val_data`` the samples are split by :func:`split_indices`; with
    it every sample of ``data`` is used for training.  Normalization
    statistics come from the training samples only.  Returns the
    best-validation checkpoint (the last epoch when there is no validation
    set) and the loss curves.
    """
    if val_data is None:
        tr_idx, va_idx = split_indices(len(data), config.split_fraction, config.seed)
        train_set, val_set = data.subset(tr_idx), data.subset(va_idx)
    else:
        tr_idx, va_idx = np.arange(len(data)), np.arange(0)
        train_set, val_set = data, val_data
    norm = NormStats.from_inputs(train_set.inputs, config.input_norm_std_target)
    model = _snapshot(model)
    model.norm = norm
    x_tr, y_tr = _prepare(model, train_set, norm), train_set.targets
    x_va, y_va = _prepare(model, val_set, norm), val_set.targets

    micro = config.micro_batch or config.batch_size
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])
    sched = PlateauScheduler(config.lr_initial, config.lr_factor, config.plateau_patience_epochs)
    state = AdamState()
    hist = TrainingHistory(train_indices=[int(i) for i in tr_idx], val_indices=[int(i) for i in va_idx])
    best, best_score = _snapshot(model), math.inf
    lr = config.lr_initial

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(x_tr))
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            loss, grads = _batch_grad(model, x_tr[idx], y_tr[idx], micro)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}", best, epoch)
            try:
                model.params, state = adam_step(model.params, grads, state, lr, config.betas, config.epsilon)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", best, epoch) from exc
            total += loss * len(idx)
        train_mae = total / len(x_tr)
        val_mae = _evaluate(model, x_va, y_va, micro)
        hist.append(epoch, train_mae, val_mae, lr)
        log.info("epoch %d train_mae %.6g val_mae %.6g lr %.3g", epoch, train_mae, val_mae, lr)
        score = val_mae if len(x_va) else train_mae
        if not math.isfinite(score):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}", best, epoch)
        if score < best_score:
            best_score = score
            best = _snapshot(model)
            hist.best_epoch = epoch
        lr = sched.observe(score)
        if on_epoch is not None:
            on_epoch(epoch, hist, best)

    if len(x_va) == 0:
        best = _snapshot(model)
        hist.best_epoch = config.epochs
    best.meta.update({"best_epoch": hist.best_epoch, "training": config.to_dict()})
    return best, hist
