"""Central finite-difference checks for the autodiff core."""
import numpy as np

from pqlat.neuro import backward


def grad_error(loss_fn, params, h=1e-5):
    """Largest normwise relative error between analytic and numeric gradients."""
    for p in params:
        p.grad = None
    backward(loss_fn())
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss_fn().item()
            flat[i] = keep - h
            down = loss_fn().item()
            flat[i] = keep
            numeric.reshape(-1)[i] = (up - down) / (2 * h)
        scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-8)
        worst = max(worst, np.linalg.norm(analytic - numeric) / scale)
    return worst
