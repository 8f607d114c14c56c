"""Optimizers, losses, and the training loops (mini-batch SGD/Adam + BPTT).

Complex parameters are optimized per real component: Adam's moment buffers
live on a float64 view of the (contiguous) complex arrays, so a complex
scalar counts as two independently-adapted real parameters. Gradient
clipping rescales the whole gradient set so its global magnitude (complex
components contributing |g|^2 = Re^2 + Im^2) does not exceed the configured
value.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import NumericError
from .numcore import RngStream
from .tasks import CopyTaskConfig, TaskBatch, gen_copy_batch, recall_cross_entropy

__all__ = [
    "OptimizerState",
    "TrainConfig",
    "train_recurrent_copy",
    "train_classifier",
    "train_sequential_images",
    "evaluate_copy",
    "global_grad_norm",
    "clip_gradients",
]


def _real_view(arr: np.ndarray) -> np.ndarray:
    """Float64 view of a float/complex array (complex -> interleaved re/im)."""
    if np.iscomplexobj(arr):
        return arr.view(np.float64)
    return arr


class OptimizerState:
    """SGD or Adam over a named parameter dict, with optional global clipping."""

    def __init__(self, params: dict[str, ad.Tensor], kind: str = "adam",
                 lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 adam_eps: float = 1e-8, clip: float | None = None):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.lr = lr
        self.beta1, self.beta2, self.adam_eps = beta1, beta2, adam_eps
        self.clip = clip
        self.step_count = 0
        self.params = params
        for p in params.values():
            p.data = np.ascontiguousarray(p.data)
        if kind == "adam":
            self.m = {k: np.zeros_like(_real_view(p.data))
                      for k, p in params.items()}
            self.v = {k: np.zeros_like(_real_view(p.data))
                      for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        grads = {}
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            grads[k] = np.ascontiguousarray(g)
        if self.clip is not None:
            clip_gradients(grads, self.clip)
        self.step_count += 1
        if self.kind == "sgd":
            for k, p in self.params.items():
                _real_view(p.data)[...] -= self.lr * _real_view(grads[k])
            return
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for k, p in self.params.items():
            g = _real_view(grads[k])
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.adam_eps)
            _real_view(p.data)[...] -= self.lr * update

    def state_dict(self) -> dict:
        out = {"kind": self.kind, "lr": self.lr, "step_count": self.step_count}
        if self.kind == "adam":
            out["m"] = {k: v.copy() for k, v in self.m.items()}
            out["v"] = {k: v.copy() for k, v in self.v.items()}
        return out


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        gr = _real_view(g)
        total += float((gr * gr).sum())
    return math.sqrt(total)


def clip_gradients(grads: dict[str, np.ndarray], clip: float) -> float:
    """Rescale so the global magnitude is <= clip (exactly, post-check)."""
    norm = global_grad_norm(grads)
    if norm <= clip or norm == 0.0:
        return norm
    scale = clip / norm
    for _ in range(4):
        for g in grads.values():
            _real_view(g)[...] *= scale
        post = global_grad_norm(grads)
        if post <= clip:
            break
        scale = clip / post
    return norm


@dataclass
class TrainConfig:
    steps: int = 50_000
    batch_size: int = 128
    lr: float = 1e-3
    optimizer: str = "adam"
    clip: float | None = None
    eval_every: int = 1000
    eval_batch: int = 50
    seed: int = 0
    lr_drop_step: int | None = None
    lr_drop_factor: float = 10.0
    stop_recall_loss: float | None = None
    metrics_path: str | None = None


class _MetricsWriter:
    def __init__(self, path):
        self.path = path
        self.records = []
        self._fh = open(path, "w") if path else None

    def emit(self, **record):
        self.records.append(record)
        if self._fh:
            self._fh.write(json.dumps(record) + "\n")
            self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()


def _sequence_loss(model, batch: TaskBatch):
    """Per-timestep softmax cross-entropy averaged over the full sequence.

    Padded positions carry blank targets and are included, per the task's
    averaging convention. Returns (loss Tensor, (B, T, C) logits data).
    """
    B, T, _ = batch.inputs.shape
    states = model.unroll(batch.inputs)
    logits = model.readout(states)
    n_class = logits.shape[-1]
    loss = ad.softmax_xent(ad.reshape(logits, (B * T, n_class)),
                           batch.targets.reshape(-1))
    return loss, logits.data


def evaluate_copy(model, cfg: CopyTaskConfig, rng: RngStream, batch_size: int):
    """(full-sequence loss, recall loss, recall accuracy) on a fresh batch."""
    batch = gen_copy_batch(cfg, rng, batch_size)
    loss, logits = _sequence_loss(model, batch)
    recall = recall_cross_entropy(logits, batch.targets, batch.mask)
    pred = logits.argmax(axis=-1)
    acc = float((pred[batch.mask] == batch.targets[batch.mask]).mean())
    return float(loss.data), recall, acc


def _apply_frozen(model):
    for name, col in model.frozen_columns():
        self_data = model.params[name].data
        self_data[:, col] = 0.0


def train_recurrent_copy(model, task_cfg: CopyTaskConfig, cfg: TrainConfig):
    """BPTT on the variable-delay copy task with fresh batches every step.

    Evaluation draws fresh test batches at the configured interval. Training
    aborts with a diagnostic if the loss goes non-finite; stops early when
    the recall loss threshold (if any) is reached. Returns the metric
    records (one dict per eval, final entry flagged "final").
    """
    train_rng = RngStream(cfg.seed)
    eval_rng = RngStream(cfg.seed + 7_777_777)
    opt = OptimizerState(model.params, cfg.optimizer, lr=cfg.lr, clip=cfg.clip)
    writer = _MetricsWriter(cfg.metrics_path)
    try:
        for step in range(cfg.steps + 1):
            if cfg.lr_drop_step and step == cfg.lr_drop_step:
                opt.lr /= cfg.lr_drop_factor
            if step % cfg.eval_every == 0:
                loss, recall, acc = evaluate_copy(model, task_cfg, eval_rng,
                                                  cfg.eval_batch)
                writer.emit(step=step, split="test", loss=loss,
                            recall_loss=recall, accuracy=acc)
                if cfg.stop_recall_loss is not None and recall < cfg.stop_recall_loss:
                    break
            if step == cfg.steps:
                break
            batch = gen_copy_batch(task_cfg, train_rng, cfg.batch_size)
            loss, _ = _sequence_loss(model, batch)
            if not math.isfinite(float(loss.data)):
                raise NumericError(
                    f"training diverged at step {step}: loss={float(loss.data)}")
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            _apply_frozen(model)
    finally:
        writer.close()
    writer.records[-1]["final"] = True
    return writer.records


def _classifier_epoch_order(rng: RngStream, n: int, batch: int):
    perm = rng.permutation(n)
    for start in range(0, n - batch + 1, batch):
        yield perm[start:start + batch]


def train_classifier(model, train_x, train_y, test_x, test_y, cfg: TrainConfig,
                     epochs: int = 5):
    """Mini-batch cross-entropy training of a feedforward classifier."""
    rng = RngStream(cfg.seed)
    opt = OptimizerState(model.params, cfg.optimizer, lr=cfg.lr, clip=cfg.clip)
    writer = _MetricsWriter(cfg.metrics_path)
    step = 0
    try:
        for epoch in range(epochs):
            for idx in _classifier_epoch_order(rng, len(train_x), cfg.batch_size):
                logits = model.forward(train_x[idx])
                loss = ad.softmax_xent(logits, train_y[idx])
                if not math.isfinite(float(loss.data)):
                    raise NumericError(f"training diverged at step {step}")
                opt.zero_grad()
                ad.backward(loss)
                opt.step()
                step += 1
            acc, loss = evaluate_classifier(model, test_x, test_y,
                                            cfg.eval_batch or 512)
            writer.emit(step=step, epoch=epoch + 1, split="test",
                        loss=loss, accuracy=acc)
    finally:
        writer.close()
    return writer.records


def evaluate_classifier(model, xs, ys, batch: int = 512):
    correct, total, loss_sum = 0, 0, 0.0
    for start in range(0, len(xs), batch):
        x, y = xs[start:start + batch], ys[start:start + batch]
        logits = model.forward(x)
        loss_sum += float(ad.softmax_xent(logits, y).data) * len(x)
        correct += int((logits.data.argmax(axis=-1) == y).sum())
        total += len(x)
    return correct / total, loss_sum / total


def train_sequential_images(model, sequences, labels, val, cfg: TrainConfig,
                            epochs: int = 1):
    """Pixel-by-pixel sequence classification (readout on the final state)."""
    rng = RngStream(cfg.seed)
    opt = OptimizerState(model.params, cfg.optimizer, lr=cfg.lr, clip=cfg.clip)
    writer = _MetricsWriter(cfg.metrics_path)
    step = 0
    try:
        for epoch in range(epochs):
            if cfg.lr_drop_step and epoch and epoch == cfg.lr_drop_step:
                opt.lr /= cfg.lr_drop_factor
            for idx in _classifier_epoch_order(rng, len(sequences), cfg.batch_size):
                seq = sequences[idx]
                h = _final_state(model, seq)
                logits = model.readout(h)
                loss = ad.softmax_xent(logits, labels[idx])
                if not math.isfinite(float(loss.data)):
                    raise NumericError(f"training diverged at step {step}")
                opt.zero_grad()
                ad.backward(loss)
                opt.step()
                _apply_frozen(model)
                step += 1
            vx, vy = val
            acc, vloss = evaluate_sequential(model, vx, vy, cfg.eval_batch or 256)
            writer.emit(step=step, epoch=epoch + 1, split="val",
                        loss=vloss, accuracy=acc)
    finally:
        writer.close()
    return writer.records


def _final_state(model, sequences: np.ndarray):
    """Run scalar pixel sequences (B, T) through the cell; final state only."""
    ctx = model.precompute(sequences[:, :, None])
    h = model.init_state(sequences.shape[0])
    for t in range(sequences.shape[1]):
        h = model.step_pre(h, ctx, t)
    return h


def evaluate_sequential(model, sequences, labels, batch: int = 256):
    correct, total, loss_sum = 0, 0, 0.0
    for start in range(0, len(sequences), batch):
        seq = sequences[start:start + batch]
        y = labels[start:start + batch]
        h = _final_state(model, seq)
        logits = model.readout(h)
        loss_sum += float(ad.softmax_xent(logits, y).data) * len(seq)
        correct += int((logits.data.argmax(axis=-1) == y).sum())
        total += len(seq)
    return correct / total, loss_sum / total
