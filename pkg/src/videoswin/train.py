"""Desk-scale training loop on synthetic clips.

Full-batch AdamW with linear warmup and cosine decay; the backbone group
runs at ``backbone_lr_ratio`` times the head learning rate.
"""
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import store_from_model
from .errors import ConfigError
from .model import ArchConfig, VideoSwin
from .optim import AdamWState, adamw_step, lr_schedule
from .tensor import PropagationError, Tape, Tensor, cross_entropy
from .windowing import WindowSpec

log = logging.getLogger(__name__)


def micro_arch(**overrides):
    """C=16, depths 2/2/2/2, d=8, 8x32x32 clips, 4x4x4 windows, 2 classes."""
    base = dict(embed_dim=16, depths=(2, 2, 2, 2), window=WindowSpec(4, 4), head_dim=8, num_classes=2, clip=(8, 32, 32))
    base.update(overrides)
    return ArchConfig(**base)


@dataclass
class TrainConfig:
    epochs: int = 200
    warmup_epochs: int = 10
    batch_size: int = 8
    base_lr: float = 1e-3
    backbone_lr_ratio: float = 0.1
    weight_decay: float = 0.05
    stochastic_depth_rate: float = 0.0
    seed: int = 0
    num_samples: int = 8
    arch: ArchConfig = field(default_factory=micro_arch)

    def __post_init__(self):
        if isinstance(self.arch, dict):
            self.arch = ArchConfig.from_dict(self.arch)
        if not 0.0 <= self.backbone_lr_ratio <= 1.0:
            raise ConfigError("backbone_lr_ratio must lie in [0, 1]")
        if self.epochs < 1 or self.batch_size < 1 or self.num_samples < 1:
            raise ConfigError("epochs, batch_size and num_samples must be positive")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError("warmup_epochs must lie in [0, epochs)")

    @property
    def steps_per_epoch(self):
        return -(-self.num_samples // self.batch_size)

    @property
    def total_steps(self):
        return self.epochs * self.steps_per_epoch

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            data = json.load(fh)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        d = asdict(self)
        d["arch"] = self.arch.to_dict()
        return d


def synthetic_clips(n, num_classes, clip, seed=0):
    """Labelled clips: a random template per class plus per-sample noise."""
    rng = np.random.default_rng(seed)
    templates = rng.normal(0.0, 1.0, size=(num_classes,) + tuple(clip) + (3,))
    labels = np.arange(n) % num_classes
    clips = templates[labels] + rng.normal(0.0, 1.0, size=(n,) + tuple(clip) + (3,))
    return clips.astype(np.float32), labels


def _no_decay(names):
    return [k for k in names if k.endswith((".b", ".beta", ".gamma", ".bias", ".relpos"))]


def train_toy(config, dataset=None, checkpoint_path=None):
    """Train a fresh model on ``dataset`` (clips, labels); synthetic by default.

    Returns ``(model, history)`` where ``history`` has per-step ``loss``,
    ``accuracy`` and ``lr`` lists plus ``final_accuracy`` from a clean
    evaluation pass.
    """
    cfg = config.arch
    if config.stochastic_depth_rate:
        from dataclasses import replace

        cfg = replace(cfg, drop_path=config.stochastic_depth_rate)
    if dataset is None:
        dataset = synthetic_clips(config.num_samples, cfg.num_classes, cfg.clip, seed=config.seed + 1)
    clips, labels = dataset
    if len(clips) != config.num_samples:
        raise ConfigError(f"dataset has {len(clips)} samples, config says {config.num_samples}")
    model = VideoSwin(cfg, seed=config.seed)
    rng = np.random.default_rng(config.seed + 2)
    drop_rng = rng if cfg.drop_path > 0 else None

    params = model.params
    head = set(model.head_names())
    arrays = {k: v.data for k, v in params.items()}
    state = AdamWState()
    no_decay = _no_decay(params)
    warmup = config.warmup_epochs * config.steps_per_epoch
    history = {"loss": [], "accuracy": [], "lr": []}

    for step in range(config.total_steps):
        order = rng.permutation(config.num_samples) if config.batch_size < config.num_samples else np.arange(config.num_samples)
        idx = order[(step % config.steps_per_epoch) * config.batch_size:][: config.batch_size]
        for p in params.values():
            p.requires_grad = True
            p.grad = None
        with Tape() as tape:
            logits = model.forward(Tensor(clips[idx], dtype=model.dtype), rng=drop_rng)
            loss = cross_entropy(logits, labels[idx])
        value = loss.data.item()
        if not np.isfinite(value):
            raise PropagationError(f"training diverged at step {step}: loss {value}")
        tape.backward(loss)
        acc = float(np.mean(np.argmax(logits.data, axis=1) == labels[idx]))

        head_lr = lr_schedule(step, config.total_steps, warmup, config.base_lr, "head", config.backbone_lr_ratio)
        bb_lr = lr_schedule(step, config.total_steps, warmup, config.base_lr, "backbone", config.backbone_lr_ratio)
        lrs = {k: (head_lr if k in head else bb_lr) for k in arrays}
        grads = {k: params[k].grad for k in arrays}
        adamw_step(arrays, grads, state, lrs, weight_decay=config.weight_decay, no_decay=no_decay)

        history["loss"].append(value)
        history["accuracy"].append(acc)
        history["lr"].append(head_lr)
        log.debug("step %d loss %.4f acc %.3f lr %.2e", step, value, acc, head_lr)

    for p in params.values():
        p.requires_grad = False
        p.grad = None
    preds = np.argmax(model.forward(Tensor(clips, dtype=model.dtype)).data, axis=1)
    history["final_accuracy"] = float(np.mean(preds == labels))
    if checkpoint_path is not None:
        store = store_from_model(model)
        store.meta["train"] = config.to_dict()
        store.save(checkpoint_path)
    return model, history


def steps_to_full_accuracy(history):
    """First step (1-based) whose batch accuracy is 1.0, or None."""
    for i, a in enumerate(history["accuracy"]):
        if a == 1.0:
            return i + 1
    return None
