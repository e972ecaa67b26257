"""Pretraining and fine-tuning loops."""

from __future__ import annotations

import dataclasses
import json
import math

import numpy as np

from . import numerics as T
from .errors import ConfigError, DivergenceError
from .heads import aggregate_and_classify, inject_lora, make_mask, masked_mse, reconstruct
from .metrics import MetricBundle, compute_metrics, multilabel_auroc
from .numerics import Tensor

MODES = ("pretrain", "FF", "FE", "LoRA")


@dataclasses.dataclass
class TrainConfig:
    mode: str = "FF"
    lr: float | None = None  # 3e-4 for pretraining, 1e-4 otherwise
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    weight_decay: float = 0.01
    patience: int = 5
    mask_ratio: float = 0.5
    warmup_steps: int = 0
    select_metric: str = "balanced_accuracy"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown training mode {self.mode!r}; expected one of {MODES}")
        if self.lr is None:
            self.lr = 3e-4 if self.mode == "pretrain" else 1e-4


@dataclasses.dataclass
class Dataset:
    """Windows ``values[N, C, P, 32]`` sharing one channel layout ``meta``."""

    values: np.ndarray
    labels: np.ndarray | None
    meta: list

    def __len__(self):
        return len(self.values)

    def subset(self, idx):
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.values[idx], labels, self.meta)

    def select_channels(self, keep):
        keep = list(keep)
        return Dataset(self.values[:, keep], self.labels, [self.meta[i] for i in keep])

    def select_modalities(self, modalities):
        return self.select_channels([i for i, m in enumerate(self.meta) if m.modality in modalities])


class JsonlLogger:
    """Writes one JSON object per line: ``{"step", "loss", "lr", "metrics"?}``."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w")

    def write(self, step, loss, lr, metrics=None, **extra):
        rec = {"step": int(step), "loss": float(loss), "lr": float(lr)}
        if metrics is not None:
            rec["metrics"] = metrics
        rec.update(extra)
        self._fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class AdamW:
    """Adam with decoupled weight decay (decay applied to matrices only)."""

    def __init__(self, params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad.astype(p.dtype, copy=False)
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.weight_decay and p.ndim >= 2:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def cosine_lr(base, step, total, warmup=0):
    if warmup and step < warmup:
        return base * (step + 1) / warmup
    if total <= 1:
        return base
    frac = min(1.0, (step - warmup) / max(1, total - warmup))
    return base * 0.5 * (1.0 + math.cos(math.pi * frac))


def set_trainable(model, mode, seed=0):
    """Freeze/unfreeze parameter groups for a training mode; returns the trainable list."""
    if mode not in MODES:
        raise ConfigError(f"unknown training mode {mode!r}")
    if mode == "LoRA" and not any(".lora." in n for n, _ in model.named_parameters()):
        inject_lora(model, np.random.default_rng(seed), model.config.lora_rank, model.config.lora_alpha)
    groups = {
        "pretrain": {"embed", "unifier", "temporal", "norm", "decoder"},
        "FF": {"embed", "unifier", "temporal", "norm", "head", "lora"},
        "FE": {"head"},
        "LoRA": {"head", "lora"},
    }[mode]
    trainable = []
    for name, p in model.named_parameters():
        p.requires_grad = model.group_of(name) in groups
        p.grad = None
        if p.requires_grad:
            trainable.append((name, p))
    return trainable


# -- objectives --------------------------------------------------------------

def cross_entropy(logits, labels):
    labels = np.asarray(labels, dtype=np.int64)
    logp = T.log_softmax(logits, axis=-1)
    picked = logp[np.arange(len(labels)), labels]
    return -T.mean(picked)


def bce_with_logits(logits, targets):
    z = logits.data
    y = np.asarray(targets, dtype=z.dtype)
    loss = np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z))))
    n = z.size

    def bw(g):
        return (g * (1.0 / (1.0 + np.exp(-z)) - y) / n,)

    return Tensor._make(np.asarray(loss, dtype=z.dtype), (logits,), bw)


def classification_loss(logits, labels):
    labels = np.asarray(labels)
    if labels.ndim == 2:
        return bce_with_logits(logits, labels)
    return cross_entropy(logits, labels)


# -- pretraining -----------------------------------------------------------

def batch_masks(n, c, p, ratio, seed, step):
    return np.stack([make_mask(c, p, ratio, (seed, step, i)).mask for i in range(n)])


def pretrain_loss(model, values, meta, ratio, seed, step=0):
    masks = batch_masks(len(values), values.shape[1], values.shape[2], ratio, seed, step)
    state = model.encode(values, meta, masks)
    pred = reconstruct(state, meta, model.decoder)
    return masked_mse(pred, values, masks)


def pretrain_step(model, opt, values, meta, ratio=0.5, seed=0, step=0, lr=None):
    """Mask, encode, reconstruct, masked MSE, backward, optimizer step. Returns the loss."""
    model.train()
    opt.zero_grad()
    loss = pretrain_loss(model, values, meta, ratio, seed, step)
    value = float(loss.item())
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite pretraining loss {value} at step {step}")
    T.backward(loss)
    opt.step(lr)
    return value


def pretrain(model, data, cfg, steps=None, log=None):
    """Run masked-reconstruction pretraining; returns the per-step losses."""
    if cfg.mode != "pretrain":
        raise ConfigError("pretrain needs TrainConfig(mode='pretrain')")
    trainable = set_trainable(model, "pretrain")
    opt = AdamW([p for _, p in trainable], cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total = steps if steps is not None else cfg.epochs * per_epoch
    losses = []
    order = rng.permutation(n)
    for step in range(total):
        k = step % per_epoch
        if k == 0 and step:
            order = rng.permutation(n)
        idx = np.sort(order[k * cfg.batch_size:(k + 1) * cfg.batch_size])
        lr = cosine_lr(cfg.lr, step, total, cfg.warmup_steps)
        loss = pretrain_step(model, opt, data.values[idx], data.meta, cfg.mask_ratio, cfg.seed, step, lr)
        losses.append(loss)
        if log is not None:
            log.write(step, loss, lr)
    return losses


# -- fine-tuning -----------------------------------------------------------

def predict_scores(model, data, batch_size=64):
    """Class probabilities (softmax) or per-label sigmoid scores for multi-label data."""
    model.eval()
    outs = []
    with T.no_grad():
        for i in range(0, len(data), batch_size):
            state = model.encode(data.values[i:i + batch_size], data.meta)
            outs.append(aggregate_and_classify(state, model.head).data.astype(np.float64))
    logits = np.concatenate(outs)
    if data.labels is not None and np.asarray(data.labels).ndim == 2:
        return 1.0 / (1.0 + np.exp(-logits))
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def evaluate(model, data, batch_size=64):
    """MetricBundle for single-label data; multi-label data fills only ``auroc`` (macro)."""
    scores = predict_scores(model, data, batch_size)
    labels = np.asarray(data.labels)
    if labels.ndim == 2:
        auc = multilabel_auroc(labels, scores)
        return MetricBundle(math.nan, math.nan, math.nan, auc, math.nan)
    return compute_metrics(labels, scores)


def _selection_score(bundle, name):
    return getattr(bundle, name)


def fit_classifier(model, train, val, cfg, log=None):
    """Train the currently-trainable parameters on ``train``; keep the best validation epoch.

    Epoch 0 (before any update) is a candidate, so training never returns a
    model that validates worse than its starting point.
    """
    params = [p for p in model.parameters() if p.requires_grad]
    opt = AdamW(params, cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    metric = cfg.select_metric
    if np.asarray(train.labels).ndim == 2:
        metric = "auroc"
    best = evaluate(model, val)
    best_score = _selection_score(best, metric)
    best_state = {k: v.copy() for k, v in model.state_dict().items()}
    history = [best]
    n = len(train)
    per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total = cfg.epochs * per_epoch
    step = 0
    stale = 0
    for epoch in range(cfg.epochs):
        model.train()
        order = rng.permutation(n)
        for k in range(per_epoch):
            idx = np.sort(order[k * cfg.batch_size:(k + 1) * cfg.batch_size])
            opt.zero_grad()
            logits = model.logits(train.values[idx], train.meta)
            loss = classification_loss(logits, train.labels[idx])
            value = float(loss.item())
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss {value} at epoch {epoch}")
            T.backward(loss)
            lr = cosine_lr(cfg.lr, step, total, cfg.warmup_steps)
            opt.step(lr)
            if log is not None:
                log.write(step, value, lr)
            step += 1
        bundle = evaluate(model, val)
        history.append(bundle)
        score = _selection_score(bundle, metric)
        if log is not None:
            log.write(step, value, lr, metrics=bundle.as_dict(), epoch=epoch + 1)
        if score > best_score:
            best, best_score = bundle, score
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    return best, history


def finetune(model, mode, train, val, cfg=None, log=None):
    """Fine-tune in FF, FE or LoRA mode; returns ``(model, validation MetricBundle)``."""
    if mode not in ("FF", "FE", "LoRA"):
        raise ConfigError(f"unknown fine-tuning mode {mode!r}")
    cfg = cfg or TrainConfig(mode=mode)
    set_trainable(model, mode, cfg.seed)
    best, _ = fit_classifier(model, train, val, cfg, log)
    return model, best
