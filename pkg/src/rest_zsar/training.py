"""Training loop and optimisers for the encoder."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .encoder import (ConfigError, EncoderConfig, LossMode, Vocabulary, batch_losses,
                      make_batch, make_masking_plan)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainSettings:
    algorithm: str = "adamw"   # "adamw" or "sgd"
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    epochs: int = 60
    batch_size: int = 16
    schedule: str = "cosine"   # "cosine" or "constant"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    target_top1: float | None = None  # stop once an epoch reaches this train top-1

    def __post_init__(self):
        if self.algorithm not in ("adamw", "sgd"):
            raise ConfigError(f"unknown optimiser {self.algorithm!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs, batch_size and learning_rate must be positive")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)

    to_dict = asdict


def _decays(name, p):
    # decay matrices only; biases, LayerNorm and 1-d vectors are left alone
    return p.data.ndim >= 2 and name not in ("pos_visual", "pos_word", "segment")


class SGD:
    def __init__(self, params, settings: TrainSettings):
        self.params = params
        self.s = settings

    def step(self, lr):
        wd = self.s.weight_decay
        for name, p in self.params.items():
            g = p.grad
            if wd and _decays(name, p):
                g = g + wd * p.data
            p.data -= lr * g


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params, settings: TrainSettings):
        self.params = params
        self.s = settings
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr):
        s = self.s
        self.t += 1
        c1 = 1 - s.beta1 ** self.t
        c2 = 1 - s.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            m, v = self.m[name], self.v[name]
            m *= s.beta1
            m += (1 - s.beta1) * g
            v *= s.beta2
            v += (1 - s.beta2) * g * g
            if s.weight_decay and _decays(name, p):
                p.data -= lr * s.weight_decay * p.data
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + s.eps)


def make_optimizer(params, settings):
    return (AdamW if settings.algorithm == "adamw" else SGD)(params, settings)


def learning_rate(settings, step, total_steps):
    if settings.schedule == "constant" or total_steps <= 1:
        return settings.learning_rate
    return 0.5 * settings.learning_rate * (1 + math.cos(math.pi * step / total_steps))


def zero_grad(params):
    for p in params.values():
        p.zero_grad()


def train(params, config: EncoderConfig, dataset, vocab: Vocabulary,
          settings: TrainSettings, seed=None):
    """Fit ``params`` in place on ``dataset``; returns (params, per-epoch log).

    The shuffle order and masking plans come from one generator seeded with
    ``seed`` (default: ``config.seed``), so identical seeds give identical runs.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    items = dataset.instances
    if not items:
        raise TrainingError("empty dataset")
    for inst in items:
        if not 0 <= inst.class_id < config.num_seen_classes:
            raise TrainingError(f"instance {inst.id}: class {inst.class_id} >= "
                                f"{config.num_seen_classes}")
    words = [vocab.encode(lab) for lab in dataset.labels]
    opt = make_optimizer(params, settings)
    n_batches = math.ceil(len(items) / settings.batch_size)
    total_steps = settings.epochs * n_batches
    step = 0
    history = []
    for epoch in range(1, settings.epochs + 1):
        order = rng.permutation(len(items))
        sums = {"cls": 0.0, "mtl": 0.0, "total": 0.0}
        correct = 0
        for lo in range(0, len(items), settings.batch_size):
            chunk = [items[i] for i in order[lo:lo + settings.batch_size]]
            wl = [words[it.class_id] for it in chunk]
            plans = [make_masking_plan(w, config.mask_prob, rng) for w in wl]
            batch = make_batch([it.frames for it in chunk], wl,
                               [it.class_id for it in chunk], vocab, plans)
            zero_grad(params)
            loss, l_cls, l_mtl, out = batch_losses(params, config, batch)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, step {step}")
            loss.backward()
            opt.step(learning_rate(settings, step, total_steps))
            step += 1
            n = len(chunk)
            sums["cls"] += float(l_cls.data) * n
            sums["mtl"] += (float(l_mtl.data) if l_mtl is not None else 0.0) * n
            sums["total"] += value * n
            correct += int((out.cls_logits.data.argmax(axis=1) == batch.class_ids).sum())
        row = {
            "epoch": epoch,
            "loss_cls": sums["cls"] / len(items),
            "loss_mtl": sums["mtl"] / len(items),
            "loss_total": sums["total"] / len(items),
            "train_top1": correct / len(items),
        }
        history.append(row)
        log.info("epoch %d  L=%.4f  cls=%.4f  mtl=%.4f  top1=%.3f", epoch,
                 row["loss_total"], row["loss_cls"], row["loss_mtl"], row["train_top1"])
        if settings.target_top1 is not None and row["train_top1"] >= settings.target_top1:
            break
    if config.loss_mode is LossMode.MLM_ONLY:
        log.info("MLM-only run: classification head was not trained")
    return params, history


LOG_COLUMNS = ["epoch", "loss_cls", "loss_mtl", "loss_total", "train_top1"]


def write_log(history, path):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=LOG_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow(row)
