from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, OptimizerError


@dataclass
class AdamState:
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    step_count: int = 0
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params: dict[str, np.ndarray], names=None, alpha=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8) -> AdamState:
    names = list(params) if names is None else list(names)
    return AdamState(
        {k: np.zeros_like(params[k]) for k in names},
        {k: np.zeros_like(params[k]) for k in names},
        0,
        alpha,
        beta1,
        beta2,
        epsilon,
    )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam update of ``params`` (in place) for the keys in ``state``.

    The gradients are validated before anything is written: a non-finite entry
    raises :class:`OptimizerError` and leaves parameters and moments untouched.
    """
    for k in state.first_moment:
        g = grads[k]
        if g.shape != params[k].shape:
            raise DimensionError(f"gradient for {k} has shape {g.shape}, parameter has {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient for {k}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for k in state.first_moment:
        p = params[k]
        g = grads[k].astype(p.dtype, copy=False)
        m = b1 * state.first_moment[k] + (1.0 - b1) * g
        v = b2 * state.second_moment[k] + (1.0 - b2) * g * g
        state.first_moment[k] = m.astype(p.dtype, copy=False)
        state.second_moment[k] = v.astype(p.dtype, copy=False)
        update = state.alpha * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        params[k] = (p - update).astype(p.dtype, copy=False)
    return params, state
