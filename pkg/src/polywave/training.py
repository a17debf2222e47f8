"""Losses, optimizers, the training loop, finite-difference gradient checks and k-fold runs."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import audio
from .network import Network, NetworkSpec

log = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    """Non-finite loss or gradient during training."""


# losses ---------------------------------------------------------------------

class MSE:
    """Mean squared error, averaged over the samples of each signal and then over the batch."""

    name = "mse"

    def eval(self, target, pred) -> float:
        diff = np.asarray(pred) - np.asarray(target)
        return float(np.mean(diff.reshape(diff.shape[0], -1) ** 2, axis=1).mean())

    def difference(self, target, pred_a, pred_b) -> float:
        """``eval(target, pred_a) - eval(target, pred_b)`` without subtracting two rounded losses."""
        a, b, t = (np.asarray(v, dtype=np.float64) for v in (pred_a, pred_b, target))
        terms = (a - b) * ((a - t) + (b - t))
        return math.fsum(terms.ravel()) / terms.size

    def grad(self, target, pred):
        diff = np.asarray(pred) - np.asarray(target)
        per_sample = diff[0].size
        return 2.0 * diff / (per_sample * diff.shape[0])


class CategoricalCrossEntropy:
    """``-sum(y * log(p))`` per sample, averaged over the batch. Predictions are probabilities."""

    name = "categorical_cross_entropy"
    floor = 1e-300

    def eval(self, target, pred) -> float:
        target = np.asarray(target, dtype=np.float64)
        p = np.maximum(np.asarray(pred, dtype=np.float64), self.floor)
        return float(np.mean(-np.sum(target * np.log(p), axis=-1)))

    def difference(self, target, pred_a, pred_b) -> float:
        """``eval(target, pred_a) - eval(target, pred_b)`` via ``log1p`` of the relative change."""
        a = np.maximum(np.asarray(pred_a, dtype=np.float64), self.floor)
        b = np.maximum(np.asarray(pred_b, dtype=np.float64), self.floor)
        terms = -np.asarray(target) * np.log1p((a - b) / b)
        return math.fsum(terms.ravel()) / a.shape[0]

    def logit_difference(self, target, z_a, z_b) -> float:
        """Loss difference of ``softmax(z_a)`` and ``softmax(z_b)`` computed from the logits.

        Uses ``-sum(y * (z_a - z_b)) + logsumexp(z_a) - logsumexp(z_b)`` with the
        second part written as ``log1p`` of an ``expm1``-weighted sum, so every term
        stays accurate relative to ``z_a - z_b``. Targets are assumed to sum to one.
        """
        t, z_a, z_b = (np.asarray(v, dtype=np.float64) for v in (target, z_a, z_b))
        dz = z_a - z_b
        e = np.exp(z_b - z_b.max(axis=-1, keepdims=True))
        lse = np.log1p(np.sum(e * np.expm1(dz), axis=-1) / e.sum(axis=-1))
        terms = np.concatenate([(-t * dz).ravel(), lse.ravel()])
        return math.fsum(terms) / z_a.shape[0]

    def grad(self, target, pred):
        target = np.asarray(target, dtype=np.float64)
        p = np.maximum(np.asarray(pred, dtype=np.float64), self.floor)
        return -target / p / p.shape[0]

    def logit_grad(self, target, pred):
        """Gradient with respect to the softmax input, ``(p - y) / batch``."""
        return (np.asarray(pred) - np.asarray(target)) / np.asarray(pred).shape[0]


LOSSES = {"mse": MSE, "categorical_cross_entropy": CategoricalCrossEntropy, "cce": CategoricalCrossEntropy}


def get_loss(name: str):
    return LOSSES[name]()


# optimizers -----------------------------------------------------------------

def clip_global_norm(grads: list[np.ndarray], max_norm: float | None) -> list[np.ndarray]:
    if not max_norm:
        return grads
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm <= max_norm:
        return grads
    return [g * (max_norm / norm) for g in grads]


class SGD:
    def __init__(self, lr: float = 1e-3):
        if not 0 < lr <= 1:
            raise ValueError("learning rate must lie in (0, 1]")
        self.lr = lr
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        _check_shapes(params, grads)
        self.t += 1
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not 0 < lr <= 1:
            raise ValueError("learning rate must lie in (0, 1]")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: list[np.ndarray] = []
        self.v: list[np.ndarray] = []
        self.t = 0

    def step(self, params, grads):
        _check_shapes(params, grads)
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _check_shapes(params, grads):
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("gradient shapes do not match parameter shapes")


# forward/backward -----------------------------------------------------------

def backward_sweep(net: Network, caches, output, target, loss) -> list[list[np.ndarray]]:
    """Gradient bundle (one list per layer, aligned with ``layer.params``) for a cached batch."""
    fused = isinstance(loss, CategoricalCrossEntropy) and net.output_activation == "softmax"
    g = loss.logit_grad(target, output) if fused else loss.grad(target, output)
    return net.backward(caches, g, preactivation=fused)


def loss_and_grads(net: Network, x, target, loss) -> tuple[float, list[np.ndarray]]:
    output, caches = net.forward(x)
    value = loss.eval(target, output)
    bundle = backward_sweep(net, caches, output, target, loss)
    return value, [g for layer_grads in bundle for g in layer_grads]


def grad_check(net: Network, x, target, loss, h: float = 1e-6) -> float:
    """Worst relative error between analytic and central-difference gradients over every parameter."""
    return grad_check_report(net, x, target, loss, h)["worst"]


def _relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def grad_check_report(net: Network, x, target, loss, h: float = 1e-6, analytic=None,
                      include_input: bool = False) -> dict:
    """Compare every analytic gradient entry with ``(L(t + h) - L(t - h)) / 2h``.

    ``analytic`` overrides the computed parameter gradients (used to check the
    checker). With ``include_input`` the gradient with respect to the network
    input is checked too. The report carries the worst relative error, its
    location ``(param index or 'input', flat index, analytic, numeric)`` and
    the worst absolute error.
    """
    x = np.array(x, dtype=np.float64)
    output, caches = net.forward(x)
    value = loss.eval(target, output)
    if not np.isfinite(value):
        raise NumericError("non-finite loss at the check point")
    fused = isinstance(loss, CategoricalCrossEntropy) and net.output_activation == "softmax"
    g_out = loss.logit_grad(target, output) if fused else loss.grad(target, output)
    bundle, g_in = net.backward(caches, g_out, preactivation=fused, input_grad=True)
    grads = [g for layer_grads in bundle for g in layer_grads] if analytic is None else analytic
    checks = list(enumerate(zip(net.params, grads)))
    if include_input:
        checks.append(("input", (x, g_in.reshape(x.shape))))

    def evaluate():
        out, layer_caches = net.forward(x)
        return layer_caches[-1][1] if fused else out  # logits for the fused softmax head

    worst = worst_abs = 0.0
    where = None
    for name, (p, g) in checks:
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for idx in range(flat.size):
            old = flat[idx]
            flat[idx] = old + h
            up = evaluate()
            flat[idx] = old - h
            down = evaluate()
            flat[idx] = old
            diff = loss.logit_difference(target, up, down) if fused else loss.difference(target, up, down)
            numeric = diff / (2.0 * h)
            if not np.isfinite(numeric):
                raise NumericError(f"non-finite difference quotient at {name}[{idx}]")
            worst_abs = max(worst_abs, abs(gflat[idx] - numeric))
            rel = _relative_error(gflat[idx], numeric)
            if rel > worst:
                worst, where = rel, (name, idx, float(gflat[idx]), numeric)
    return {"worst": worst, "where": where, "worst_abs": worst_abs, "loss": value}


# training loop --------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"
    clip_norm: float | None = None
    seed: int = 0


def make_optimizer(cfg: TrainConfig):
    return Adam(cfg.lr) if cfg.optimizer == "adam" else SGD(cfg.lr)


def train_epoch(net: Network, x, y, loss, optimizer, batch_size: int, rng: np.random.Generator,
                clip_norm: float | None = None) -> float:
    order = rng.permutation(len(x))
    total = 0.0
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        value, grads = loss_and_grads(net, x[idx], y[idx], loss)
        if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads):
            raise NumericError(f"non-finite loss or gradient (loss={value})")
        optimizer.step(net.params, clip_global_norm(grads, clip_norm))
        total += value * len(idx)
    return total / len(order)


def evaluate(net: Network, x, y, task: str, groups=None) -> dict[str, float]:
    """Task metrics on a held-out set.

    ``classification``: per-window accuracy, plus per-signal accuracy (mode of
    window predictions) when ``groups`` maps each window to its source signal.
    ``denoising``: mean per-window SNR in dB and MSE.
    """
    pred = net.predict(x)
    if task == "classification":
        labels = np.argmax(y, axis=-1)
        guess = np.argmax(pred, axis=-1)
        out = {"window_accuracy": float(np.mean(guess == labels))}
        if groups is not None:
            out["signal_accuracy"] = audio.signal_accuracy(guess, labels, groups)
        return out
    clean = np.asarray(y).reshape(len(y), -1)
    est = pred.reshape(len(pred), -1)
    snrs = [audio.snr(c, e, ceiling=audio.SNR_CEILING) for c, e in zip(clean, est)]
    return {"snr_db": float(np.mean(snrs)), "mse": float(np.mean((clean - est) ** 2))}


@dataclass
class TraceRow:
    epoch: int
    fold: int
    split: str
    metric: str
    value: float


def fit(net: Network, train, valid, task: str, cfg: TrainConfig, loss=None, fold: int = 0,
        train_groups=None, valid_groups=None, on_epoch: Callable | None = None) -> list[TraceRow]:
    """Train ``net`` in place; returns the metric trace with one block of rows per epoch.

    ``on_epoch(epoch, rows)`` runs after every epoch; a true return value stops training.
    """
    loss = loss or (CategoricalCrossEntropy() if task == "classification" else MSE())
    optimizer = make_optimizer(cfg)
    rng = np.random.default_rng(cfg.seed)
    rows: list[TraceRow] = []
    x_tr, y_tr = train
    for epoch in range(1, cfg.epochs + 1):
        value = train_epoch(net, x_tr, y_tr, loss, optimizer, cfg.batch_size, rng, cfg.clip_norm)
        rows.append(TraceRow(epoch, fold, "train", "loss", value))
        if valid is not None:
            for name, v in evaluate(net, valid[0], valid[1], task, valid_groups).items():
                rows.append(TraceRow(epoch, fold, "valid", name, v))
        log.info("fold %d epoch %d loss %.6g", fold, epoch, value)
        if on_epoch is not None and on_epoch(epoch, rows):
            break
    return rows


def write_trace(rows: Iterable[TraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "fold", "split", "metric", "value"])
        for r in rows:
            w.writerow([r.epoch, r.fold, r.split, r.metric, repr(float(r.value))])


# cross-validation -----------------------------------------------------------

@dataclass
class FoldPlan:
    k: int = 10
    seed: int = 0

    def split(self, n: int) -> list[np.ndarray]:
        """Shuffled, disjoint validation index sets covering ``range(n)``."""
        if n < self.k:
            raise ValueError(f"cannot make {self.k} folds from {n} items")
        order = np.random.default_rng(self.seed).permutation(n)
        return [np.sort(part) for part in np.array_split(order, self.k)]


@dataclass
class KFoldResult:
    rows: list[TraceRow] = field(default_factory=list)
    final: dict[str, list[float]] = field(default_factory=dict)
    models: list[Network] = field(default_factory=list)

    def summary(self) -> dict[str, dict[str, float]]:
        """min / max / mean of each final-epoch validation metric across folds."""
        return {name: {"min": float(np.min(v)), "max": float(np.max(v)), "mean": float(np.mean(v))}
                for name, v in self.final.items()}


def kfold_train(spec: NetworkSpec, dataset, plan: FoldPlan, cfg: TrainConfig, task: str,
                groups=None) -> KFoldResult:
    """Fresh network per fold, trained on the other ``k - 1`` folds.

    ``groups`` (source-signal id per item) enables per-signal accuracy and keeps
    all windows of one signal inside the same fold.
    """
    x, y = dataset
    n = len(x)
    if groups is not None:
        uniq = np.unique(groups)
        sig_folds = plan.split(len(uniq))
        folds = [np.flatnonzero(np.isin(groups, uniq[f])) for f in sig_folds]
    else:
        folds = plan.split(n)
    result = KFoldResult()
    for fi, val_idx in enumerate(folds):
        if len(val_idx) == 0:
            raise ValueError(f"fold {fi} is empty")
        train_idx = np.setdiff1d(np.arange(n), val_idx)
        net = Network(spec, seed=plan.seed * 1000 + fi)
        fold_cfg = TrainConfig(**{**cfg.__dict__, "seed": cfg.seed * 1000 + fi})
        rows = fit(net, (x[train_idx], y[train_idx]), (x[val_idx], y[val_idx]), task, fold_cfg, fold=fi,
                   valid_groups=None if groups is None else groups[val_idx])
        result.rows.extend(rows)
        result.models.append(net)
        last = max(r.epoch for r in rows)
        for r in rows:
            if r.epoch == last and r.split == "valid":
                result.final.setdefault(r.metric, []).append(r.value)
    return result
