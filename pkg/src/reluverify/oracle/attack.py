"""Projected sign-gradient descent on the network output over an l-inf ball."""
from __future__ import annotations

import math

import numpy as np

from ..model import InputRegion, Network, forward_eval

DEFAULT_STEPS = 200
DEFAULT_RESTARTS = 5


def input_gradient(net: Network, x) -> np.ndarray:
    """Gradient of the scalar output at ``x``; ReLU derivative at 0 taken as 0."""
    masks = []
    h = np.asarray(x, dtype=np.float64)
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        z = W @ h + b
        masks.append(z > 0)
        h = np.maximum(z, 0.0)
    g = net.weights[-1][0].copy()
    for W, m in zip(reversed(net.weights[:-1]), reversed(masks)):
        g = (g * m) @ W
    return g


def pgd_attack(net: Network, region: InputRegion, steps: int = DEFAULT_STEPS,
               restarts: int = DEFAULT_RESTARTS, rng=None, step_size: float | None = None):
    """Search for a low output value inside the region.

    The first restart starts at the center, the rest at uniform random points.
    Returns ``(value, x)`` with ``value == forward_eval(net, x)``.
    """
    if not math.isinf(region.p):
        raise ValueError("pgd_attack handles the l-inf ball only")
    rng = np.random.default_rng(0) if rng is None else rng
    lo, hi = region.lower, region.upper
    eps = region.epsilon
    alpha = eps / 10.0 if step_size is None else step_size
    best_x = region.x0.copy()
    best = float(forward_eval(net, best_x))
    if eps == 0.0:
        return best, best_x
    for r in range(max(restarts, 1)):
        x = region.x0.copy() if r == 0 else rng.uniform(lo, hi)
        for _ in range(steps):
            val = float(forward_eval(net, x))
            if val < best:
                best, best_x = val, x.copy()
            x = np.clip(x - alpha * np.sign(input_gradient(net, x)), lo, hi)
        val = float(forward_eval(net, x))
        if val < best:
            best, best_x = val, x.copy()
    return best, best_x
