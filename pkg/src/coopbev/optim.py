"""AdamW with decoupled weight decay, global-norm clipping, warmup+cosine LR."""

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimState:
    """Per-parameter AdamW moments, keyed by parameter name."""

    lr: float = 1e-3
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def clip_grad_norm(params, max_norm=1.0):
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    ``params`` is a name->Tensor mapping; parameters without a gradient are
    ignored.  Returns the scale factor applied (1.0 when already in budget).
    """
    total = 0.0
    grads = [p.grad for p in params.values() if p.grad is not None]
    for g in grads:
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for g in grads:
        g *= scale
    return scale


def adamw_step(state, params, lr_t=None):
    """One AdamW update over ``params`` (name->Tensor with .grad populated).

    Decoupled decay: the parameter shrinks by lr*wd*p independently of the
    gradient.  Parameters whose grad is None this step are left untouched,
    so policy heads that were not sampled keep their values and moments.
    """
    lr = state.lr if lr_t is None else lr_t
    b1, b2 = state.betas
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p.data -= lr * state.weight_decay * p.data
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class LrSchedule:
    """Linear warmup to ``base_lr`` then cosine decay to zero."""

    base_lr: float
    warmup_steps: int
    total_steps: int


def lr_at(schedule, step):
    if step < 0 or step > schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    if step < schedule.warmup_steps:
        return schedule.base_lr * (step + 1) / schedule.warmup_steps
    span = schedule.total_steps - schedule.warmup_steps
    if span <= 0:
        return schedule.base_lr
    frac = (step - schedule.warmup_steps) / span
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
