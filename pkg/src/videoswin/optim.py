"""AdamW with decoupled weight decay, and the warmup + cosine schedule."""
import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import PropagationError


@dataclass
class AdamWState:
    step: int = 0
    exp_avg: dict = field(default_factory=dict)
    exp_avg_sq: dict = field(default_factory=dict)


def adamw_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0, no_decay=()):
    """Update ``params`` (name -> ndarray) in place from ``grads``.

    ``lr`` is a float or a name -> float mapping (parameter groups). Decay
    shrinks each tensor by ``lr * weight_decay`` before, and independently
    of, the bias-corrected Adam step; names in ``no_decay`` are not decayed.
    Missing gradients count as zero.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise PropagationError(f"non-finite gradient for {name}")
    state.step += 1
    b1, b2 = betas
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    no_decay = set(no_decay)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        step_lr = lr[name] if isinstance(lr, dict) else lr
        m = state.exp_avg.get(name)
        if m is None:
            m = state.exp_avg[name] = np.zeros_like(p)
            state.exp_avg_sq[name] = np.zeros_like(p)
        v = state.exp_avg_sq[name]
        if weight_decay and name not in no_decay:
            p *= p.dtype.type(1.0 - step_lr * weight_decay)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        denom = np.sqrt(v / bc2) + eps
        p -= (step_lr / bc1) * m / denom
    return params, state


def lr_schedule(step, total_steps, warmup_steps, base_lr, group="head", ratio=0.1):
    """Linear warmup from 0 to ``base_lr``, then half-cosine down to 0.

    The ``backbone`` group is scaled by ``ratio``.
    """
    if not 0 <= warmup_steps < total_steps:
        raise ValueError("need 0 <= warmup_steps < total_steps")
    if group not in ("head", "backbone"):
        raise ValueError(f"unknown parameter group {group!r}")
    if step < warmup_steps:
        lr = base_lr * step / warmup_steps
    else:
        frac = min(step - warmup_steps, total_steps - warmup_steps) / (total_steps - warmup_steps)
        lr = base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
    return lr * ratio if group == "backbone" else lr
