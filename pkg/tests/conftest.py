"""Shared helpers for the test suite."""

import numpy as np


def off_kink_set(net, x, margin=1e-4):
    """True if the forward pass at x stays clear of ReLU/maxpool kinks.

    Finite differences are only valid where the network is locally smooth:
    no ReLU input within `margin` of zero (exact zeros arise from dead
    windows plus zero-initialized biases) and no pooling window whose top
    two entries tie above zero. Also rejects an all-zero output, where
    every gradient vanishes and the check would be vacuous.
    """
    column_outputs = []
    for col in net.columns:
        a = x
        for layer in col.layers:
            if layer.kind == "relu" and np.abs(a).min() < margin:
                return False
            if layer.kind == "maxpool":
                n, c, h, w = a.shape
                s = layer.stride
                win = (a.reshape(n, c, h // s, s, w // s, s)
                        .transpose(0, 1, 2, 4, 3, 5)
                        .reshape(n, c, h // s, w // s, s * s))
                top = np.sort(win, axis=-1)
                gap = top[..., -1] - top[..., -2]
                if ((gap < margin) & (top[..., -1] > margin)).any():
                    return False
            a = layer.forward(a)
        column_outputs.append(a)
    a = (column_outputs[0] if len(column_outputs) == 1
         else np.concatenate(column_outputs, axis=1))
    for layer in net.head.layers:
        if layer.kind == "relu" and np.abs(a).min() < margin:
            return False
        a = layer.forward(a)
    return np.count_nonzero(a) > 0


def smooth_instances(build, width, n, rng_key, in_hw=16, out_hw=4, max_scan=400):
    """First n seeded (net, x, target) instances that avoid kink sets."""
    found = []
    for seed in range(1, max_scan + 1):
        rng = np.random.default_rng([rng_key, seed])
        net = build(width, in_channels=1, seed=seed, dtype=np.float64)
        x = rng.uniform(0.2, 1.0, size=(1, 1, in_hw, in_hw))
        target = rng.uniform(0.0, 0.1, size=(1, 1, out_hw, out_hw))
        if off_kink_set(net, x):
            found.append((net, x, target))
            if len(found) == n:
                break
    return found
