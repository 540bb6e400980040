"""A small, pure ADAM optimizer over named parameter dictionaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

ParamDict = dict[str, np.ndarray]


@dataclass(frozen=True)
class AdamState:
    """First/second moment estimates plus the update step counter."""

    lr: float
    beta1: float
    beta2: float
    eps: float
    step: int
    m: ParamDict
    v: ParamDict


def init_adam(
    params: ParamDict,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ConfigError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
    zeros = {k: np.zeros_like(p) for k, p in params.items()}
    return AdamState(lr, beta1, beta2, eps, 0, zeros, {k: z.copy() for k, z in zeros.items()})


def adam_step(
    params: ParamDict, grads: ParamDict, state: AdamState
) -> tuple[ParamDict, AdamState]:
    """One bias-corrected update; returns fresh params and state.

    update = lr * m_hat / (sqrt(v_hat) + eps), so the very first step moves
    each parameter by about lr in the direction opposing its gradient.
    Non-finite gradients are the caller's bug and raise immediately.
    """
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise ConfigError(
            f"parameter/gradient keys disagree: {sorted(params)} vs {sorted(grads)}"
        )
    t = state.step + 1
    new_params: ParamDict = {}
    new_m: ParamDict = {}
    new_v: ParamDict = {}
    for key, p in params.items():
        g = np.asarray(grads[key])
        if g.shape != p.shape:
            raise ConfigError(f"gradient {key} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {key!r}")
        m = state.beta1 * state.m[key] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[key] + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        new_params[key] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[key] = m
        new_v[key] = v
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, t, new_m, new_v)
    return new_params, new_state
