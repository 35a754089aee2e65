"""Reverse-mode gradients, a functional Adam step, and learning-rate
schedules with linear warmup and exponential decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch


class NonFiniteError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


@dataclass
class Schedule:
    """Piecewise learning-rate schedule.

    Linear ramp warmup_start_lr -> peak_lr over [0, warmup_iters], then
    geometric decay peak_lr -> decay_end_lr over the remaining iterations.
    base_lr is the nominal rate (equals peak_lr); keeping it explicit lets a
    plain exponential schedule be written with warmup_iters = 0.
    """

    base_lr: float
    warmup_start_lr: float
    warmup_iters: int
    peak_lr: float
    decay_end_lr: float
    total_iters: int

    def __post_init__(self):
        if self.warmup_iters > self.total_iters:
            raise ValueError("warmup cannot outlast the schedule")
        for name in ("base_lr", "warmup_start_lr", "peak_lr", "decay_end_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @staticmethod
    def exponential(base_lr: float, end_lr: float, total_iters: int) -> "Schedule":
        return Schedule(base_lr, base_lr, 0, base_lr, end_lr, total_iters)

    @staticmethod
    def warmup_exponential(start_lr: float, peak_lr: float, warmup_iters: int,
                           end_lr: float, total_iters: int) -> "Schedule":
        return Schedule(peak_lr, start_lr, warmup_iters, peak_lr, end_lr, total_iters)

    @staticmethod
    def constant(lr: float, total_iters: int) -> "Schedule":
        return Schedule(lr, lr, 0, lr, lr, total_iters)


def lr_at(schedule: Schedule, iteration: int) -> float:
    """Learning rate at an iteration; continuous at the warmup boundary."""
    it = min(max(iteration, 0), schedule.total_iters)
    if it < schedule.warmup_iters:
        frac = it / schedule.warmup_iters
        return schedule.warmup_start_lr + frac * (schedule.peak_lr - schedule.warmup_start_lr)
    span = schedule.total_iters - schedule.warmup_iters
    if span == 0:
        return schedule.peak_lr
    frac = (it - schedule.warmup_iters) / span
    return schedule.peak_lr * (schedule.decay_end_lr / schedule.peak_lr) ** frac


def gradient(loss: torch.Tensor, params: dict) -> dict:
    """Reverse-mode gradients of a scalar loss w.r.t. named parameters.

    Parameters the loss does not depend on get zero gradients. Raises
    NonFiniteError naming the offending quantity when the loss or any
    gradient is not finite.
    """
    if not torch.isfinite(loss):
        raise NonFiniteError("loss is not finite")
    names = list(params.keys())
    tensors = [params[n] for n in names]
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    out = {}
    for name, p, g in zip(names, tensors, grads):
        if g is None:
            g = torch.zeros_like(p)
        elif not torch.isfinite(g).all():
            raise NonFiniteError(f"gradient of '{name}' is not finite")
        out[name] = g
    return out


@dataclass
class AdamState:
    """First/second moment estimates and the shared step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, applied to param data in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if not torch.isfinite(g).all():
                raise NonFiniteError(f"gradient of '{name}' is not finite")
            if name not in state.m:
                state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            m = state.m[name]
            v = state.v[name]
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            update = (m / bc1) / ((v / bc2).sqrt() + eps)
            p.data.add_(update, alpha=-lr)
    return params, state


def clip_global_norm(grads: dict, max_norm: float) -> dict:
    """Scale all gradients together so their global L2 norm is <= max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm and total > 0:
        scale = max_norm / total
        grads = {n: g * scale for n, g in grads.items()}
    return grads


def adam_state_arrays(state: AdamState) -> dict:
    """Flatten optimizer state for checkpointing."""
    arrays = {}
    for name, m in state.m.items():
        arrays[f"m.{name}"] = m.detach().cpu().numpy()
        arrays[f"v.{name}"] = state.v[name].detach().cpu().numpy()
    return arrays
