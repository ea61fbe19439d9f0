"""Combined Euclidean + angular loss and the mini-batch Adam training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .models import spectrogram_features
from .nn import Adam

log = logging.getLogger(__name__)

DOT_CLAMP = 1e-7
RAD2DEG = 180.0 / math.pi


@dataclass
class LossBreakdown:
    euclidean: float
    angular: float
    total: float
    n: int
    grad: np.ndarray | None = field(default=None, repr=False)


def _unit(v):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(norm > 1e-12, norm, 1.0)
    return v / safe, norm[..., 0]


def angular_errors(pred, target) -> np.ndarray:
    """Per-instance angle in degrees between ``pred`` and ``target`` directions.

    The cosine is clamped to ``[-1 + 1e-7, 1 - 1e-7]``; a zero-length
    prediction counts as orthogonal (90 degrees).
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    pu, _ = _unit(pred)
    tu, _ = _unit(target)
    cos = np.clip(np.sum(pu * tu, axis=-1), -1 + DOT_CLAMP, 1 - DOT_CLAMP)
    return RAD2DEG * np.arccos(cos)


def euclidean_errors(pred, target) -> np.ndarray:
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    return np.linalg.norm(pred - target, axis=-1)


def combined_loss(pred, target, with_grad: bool = True) -> LossBreakdown:
    """Mean Euclidean distance (m) plus mean angular error (deg) over the batch.

    The gradient with respect to ``pred`` is exact away from the cosine
    clamp; inside the clamp (near-parallel or antipodal) the angular part
    contributes zero gradient, as does a zero-length prediction.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if pred.shape != target.shape or pred.shape[-1] != 3:
        raise ValueError(f"pred {pred.shape} and target {target.shape} must both be (n, 3)")
    n = pred.shape[0]
    if n < 1:
        raise ValueError("combined_loss needs at least one instance")
    if np.any(np.linalg.norm(target, axis=-1) == 0):
        raise ValueError("targets must be non-zero positions")
    if not np.all(np.isfinite(pred)):
        raise FloatingPointError("non-finite prediction in combined_loss")

    diff = pred - target
    dist = np.linalg.norm(diff, axis=-1)
    pu, pnorm = _unit(pred)
    tu, _ = _unit(target)
    raw_cos = np.sum(pu * tu, axis=-1)
    cos = np.clip(raw_cos, -1 + DOT_CLAMP, 1 - DOT_CLAMP)
    ang = RAD2DEG * np.arccos(cos)
    out = LossBreakdown(float(dist.mean()), float(ang.mean()), float(dist.mean() + ang.mean()), n)
    if not with_grad:
        return out

    g_euc = np.where(dist[:, None] > 0, diff / np.where(dist > 0, dist, 1.0)[:, None], 0.0)
    active = (np.abs(raw_cos) < 1 - DOT_CLAMP) & (pnorm > 1e-12)
    dang_dcos = np.where(active, -RAD2DEG / np.sqrt(np.where(active, 1 - cos * cos, 1.0)), 0.0)
    dcos_dpred = (tu - raw_cos[:, None] * pu) / np.where(pnorm > 1e-12, pnorm, 1.0)[:, None]
    out.grad = (g_euc + dang_dcos[:, None] * dcos_dpred) / n
    return out


def rmse_loss(probs, onehot):
    """Root-mean-square error over all batch entries and its gradient."""
    probs = np.asarray(probs, dtype=np.float64)
    err = probs - onehot
    value = float(np.sqrt(np.mean(err * err)))
    grad = err / (err.size * max(value, 1e-12))
    return value, grad


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 100
    lr_factor: float = 0.5
    lr_patience: int = 5
    lr_floor: float = 1e-5
    seed: int = 0
    early_stop_patience: int | None = None
    micro_batch: int = 32

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"train.lr must be positive, got {self.lr}")
        if self.batch_size < 1 or self.micro_batch < 1:
            raise ValueError("train.batch_size and train.micro_batch must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("train.max_epochs must be >= 1")


class ReduceOnPlateau:
    """Multiply the rate by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, lr, factor=0.5, patience=5, floor=1e-5):
        self.lr, self.factor, self.patience, self.floor = lr, factor, patience, floor
        self.best = math.inf
        self.stale = 0

    def step(self, metric: float) -> float:
        if metric < self.best:
            self.best = metric
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr = max(self.lr * self.factor, self.floor)
                self.stale = 0
        return self.lr


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class TrainResult:
    model: object
    history: list
    best_epoch: int
    optimizer: Adam


def _inputs(model, waves):
    spec = spectrogram_features(waves) if model.needs_spectrogram else None
    return waves, spec


def _objective(model, out, targets, speakers):
    """Per-chunk training objective; returns (breakdown, objective, grad)."""
    if model.kind == "hybrid":
        lb = combined_loss(out, targets)
        return lb, lb.total, lb.grad
    onehot = np.eye(out.shape[1])[speakers - 1]
    value, grad = rmse_loss(out, onehot)
    positions = model.positions[np.argmax(out, axis=1)]
    lb = combined_loss(positions, targets, with_grad=False)
    return lb, value, grad


def _accumulate(acc, lb, objective, n):
    acc["euclidean"] += lb.euclidean * n
    acc["angular"] += lb.angular * n
    acc["objective"] += objective * n
    acc["n"] += n


def _summary(acc, prefix):
    n = max(acc["n"], 1)
    e, a = acc["euclidean"] / n, acc["angular"] / n
    return {f"{prefix}_euclidean": e, f"{prefix}_angular": a, f"{prefix}_total": e + a,
            f"{prefix}_objective": acc["objective"] / n}


def evaluate_objective(model, waves, targets, speakers, chunk: int = 32) -> dict:
    acc = dict(euclidean=0.0, angular=0.0, objective=0.0, n=0)
    for s in range(0, len(waves), chunk):
        sl = slice(s, s + chunk)
        out = model.forward(*_inputs(model, waves[sl]))
        lb, obj, _ = _objective(model, out, targets[sl], speakers[sl])
        if model.kind == "benchmark":
            # batch RMSE is not additive; accumulate squared error instead
            obj = obj * obj
        _accumulate(acc, lb, obj, out.shape[0])
    res = _summary(acc, "val")
    if model.kind == "benchmark":
        res["val_objective"] = math.sqrt(res["val_objective"])
    return res


def train(model, train_set, val_set, cfg: TrainConfig | None = None,
          on_epoch=None) -> TrainResult:
    """Mini-batch Adam with reduce-on-plateau on the validation objective.

    The objective is :func:`combined_loss` for the hybrid model and RMSE
    against one-hot speaker labels for the benchmark. Each batch is
    processed in ``micro_batch`` chunks whose gradients are summed in a
    fixed order. The parameters from the epoch with the lowest validation
    objective are restored before returning.
    """
    cfg = cfg or TrainConfig()
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation sets must be non-empty")
    waves, targets, speakers = train_set.arrays()
    v_waves, v_targets, v_speakers = val_set.arrays()
    if waves.shape[-1] != model.segment_len:
        raise ValueError(f"dataset segment_len {waves.shape[-1]} != model {model.segment_len}")

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr)
    sched = ReduceOnPlateau(cfg.lr, cfg.lr_factor, cfg.lr_patience, cfg.lr_floor)
    history, best, best_epoch, best_params = [], math.inf, 0, None
    since_best = 0

    for epoch in range(1, cfg.max_epochs + 1):
        lr = sched.lr
        opt.lr = lr
        acc = dict(euclidean=0.0, angular=0.0, objective=0.0, n=0)
        order = rng.permutation(len(waves))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _train_batch(model, opt, waves, targets, speakers, idx, cfg.micro_batch, acc)
        row = {"epoch": epoch, "lr": lr, **_summary(acc, "train"),
               **evaluate_objective(model, v_waves, v_targets, v_speakers, cfg.micro_batch)}
        history.append(row)
        if not all(math.isfinite(v) for v in row.values()):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}", history)
        log.info("epoch %d lr %.2e train %.4f val %.4f (%.2f deg)", epoch, lr,
                 row["train_objective"], row["val_objective"], row["val_angular"])
        if on_epoch is not None:
            on_epoch(row)
        if row["val_objective"] < best:
            best, best_epoch, since_best = row["val_objective"], epoch, 0
            best_params = [p.value.copy() for p in model.parameters()]
        else:
            since_best += 1
        sched.step(row["val_objective"])
        if cfg.early_stop_patience is not None and since_best >= cfg.early_stop_patience:
            break

    for p, v in zip(model.parameters(), best_params):
        p.value[...] = v
    return TrainResult(model, history, best_epoch, opt)


def _train_batch(model, opt, waves, targets, speakers, idx, micro, acc):
    opt.zero_grad()
    chunks = [idx[s:s + micro] for s in range(0, len(idx), micro)]
    try:
        if model.kind == "benchmark" and len(chunks) > 1:
            # batch-level RMSE: first pass gets the normaliser, second pass backpropagates
            sq = 0.0
            for c in chunks:
                out = model.forward(waves[c])
                onehot = np.eye(out.shape[1])[speakers[c] - 1]
                sq += float(np.sum((out.astype(np.float64) - onehot) ** 2))
            rmse = math.sqrt(sq / (len(idx) * model.config.n_classes))
            for c in chunks:
                out = model.forward(waves[c])
                onehot = np.eye(out.shape[1])[speakers[c] - 1]
                model.backward((out - onehot) / (len(idx) * out.shape[1] * max(rmse, 1e-12)))
                lb = combined_loss(model.positions[np.argmax(out, axis=1)], targets[c],
                                   with_grad=False)
                _accumulate(acc, lb, rmse, len(c))
        else:
            for c in chunks:
                out = model.forward(*_inputs(model, waves[c]))
                lb, obj, grad = _objective(model, out, targets[c], speakers[c])
                model.backward(grad * (len(c) / len(idx)))
                _accumulate(acc, lb, obj, len(c))
        opt.step()
    except FloatingPointError as exc:
        raise TrainingDiverged(str(exc), []) from exc


HISTORY_FIELDS = ("epoch", "lr", "train_euclidean", "train_angular", "train_total",
                  "train_objective", "val_euclidean", "val_angular", "val_total", "val_objective")


def write_history(history, path, header_comment: str | None = None):
    """Training history as CSV; floats are written with ``repr`` precision."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(HISTORY_FIELDS)
        for row in history:
            writer.writerow([repr(row[k]) if isinstance(row[k], float) else row[k]
                             for k in HISTORY_FIELDS])


def read_history(path) -> list[dict]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
