"""Finite-difference verification of backprop gradients.

Perturbs every parameter element by +/-h, re-evaluates the loss and compares
the central difference against the analytic gradient. Meant to run on small
double-precision networks; reports rather than raises.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .loss import mse_loss
from .network import Network

REL_FLOOR = 1e-6  # gradients below this scale compare absolutely


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: int       # index into network.parameters()
    worst_element: int     # flat index within that parameter tensor
    n_checked: int

    def __str__(self) -> str:
        return (f"gradcheck: max rel error {self.max_rel_error:.3e} at "
                f"param {self.worst_param}[{self.worst_element}] "
                f"({self.n_checked} elements)")


def gradient_check(network: Network, x: np.ndarray, target: np.ndarray,
                   h: float = 1e-5, max_per_param: int | None = None,
                   sample_seed: int = 0) -> GradCheckReport:
    """Compare backprop gradients with central finite differences of the loss.

    By default every parameter element is perturbed. For larger networks
    `max_per_param` caps the elements checked per tensor (a seeded choice,
    so every layer's backward path is still exercised deterministically).
    """
    params = network.parameters()
    if any(p.data.dtype != np.float64 for p in params):
        raise ValueError("gradient_check requires a float64 network")

    pred = network.forward(x)
    _, grad = mse_loss(pred, target)
    network.backward(grad)
    analytic = [p.grad.copy() for p in params]

    worst = (0.0, 0, 0)
    n_checked = 0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        if max_per_param is None or flat.size <= max_per_param:
            elements = range(flat.size)
        else:
            rng = np.random.default_rng([sample_seed, pi])
            elements = np.sort(rng.choice(flat.size, size=max_per_param,
                                          replace=False))
        for ei in elements:
            orig = flat[ei]
            flat[ei] = orig + h
            up, _ = mse_loss(network.forward(x), target)
            flat[ei] = orig - h
            down, _ = mse_loss(network.forward(x), target)
            flat[ei] = orig
            fd = (up - down) / (2.0 * h)
            bp = analytic[pi].reshape(-1)[ei]
            rel = abs(bp - fd) / max(abs(bp), abs(fd), REL_FLOOR)
            n_checked += 1
            if rel > worst[0]:
                worst = (rel, pi, ei)
    network.forward(x)  # restore caches for the unperturbed parameters
    return GradCheckReport(worst[0], worst[1], worst[2], n_checked)
