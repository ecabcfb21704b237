"""MSE objective and the Adam optimiser."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, NumericError


def mse_loss(pred, target):
    """Mean squared error and its gradient ``2 (pred - target) / N``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: shape {pred.shape} vs {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")


def adam_step(model, grads, state):
    """Apply one bias-corrected Adam update to ``model`` in place.

    ``grads`` is the per-layer list returned by ``Model.backward``. Moments
    live in ``state`` keyed by ``(layer_index, name)`` and start at zero.
    The whole update is rejected if any gradient is non-finite.
    """
    for i, g in enumerate(grads):
        for name, arr in g.items():
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite gradient in layer {i} '{name}'")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, name, param in model.parameters():
        g = grads[i][name]
        if g.shape != param.shape:
            raise DimensionError(f"gradient for layer {i} '{name}' has shape {g.shape}, expected {param.shape}")
        key = (i, name)
        m = state.first_moment.get(key)
        v = state.second_moment.get(key)
        if m is None:
            m = np.zeros_like(param)
            v = np.zeros_like(param)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.first_moment[key] = m
        state.second_moment[key] = v
        if state.learning_rate != 0.0:
            param -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return model, state
