"""End-to-end gradient verification against central finite differences."""

from __future__ import annotations

import numpy as np

from .network import NetworkConfig, network_backward, network_forward, trainable_names
from .ops import mse_loss

# Relative error uses a floored denominator: central differences on a loss of
# order one carry ~1e-11 of cancellation noise at eps=1e-5, so entries whose
# true gradient is ~0 would otherwise dominate the maximum.
_DENOM_FLOOR = 1e-4


def _loss(config, params, x, labels):
    _, preds = network_forward(config, params, x, mode="train", update_running=False)
    loss, _ = mse_loss(preds, labels)
    return loss


def gradient_check(config: NetworkConfig, params: dict, x: np.ndarray,
                   labels: np.ndarray, eps: float = 1e-5) -> float:
    """Max relative error between analytic and numeric parameter gradients.

    Runs the full forward/backward in train mode (running statistics held
    fixed) and perturbs every trainable parameter element by +/- eps.
    Relative error is |analytic - numeric| / max(|analytic|, |numeric|,
    1e-4). Use float64 parameters and inputs; float32 cannot support the
    advertised tolerances.
    """
    if not eps > 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)

    _, preds, cache = network_forward(
        config, params, x, mode="train", update_running=False, return_cache=True
    )
    _, grad_preds = mse_loss(preds, labels)
    analytic = network_backward(config, cache, grad_preds)

    worst = 0.0
    for name in trainable_names(params):
        p = params[name]
        a = analytic[name]
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = _loss(config, params, x, labels)
            flat[i] = orig - eps
            lo = _loss(config, params, x, labels)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            ana = float(a.reshape(-1)[i])
            denom = max(abs(ana), abs(numeric), _DENOM_FLOOR)
            worst = max(worst, abs(ana - numeric) / denom)
    return worst
