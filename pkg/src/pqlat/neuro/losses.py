"""Likelihood heads and the variational free-energy objective."""
from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, as_tensor, put

LOG_2PI = math.log(2 * math.pi)
SERIES_CUTOFF = 1.0
SERIES_TERMS = 20


def _sorted_rates(rates: Tensor) -> Tensor:
    order = np.argsort(rates.data, axis=-1, kind="stable")
    if np.all(order == np.arange(rates.shape[-1])):
        return rates
    lead = np.indices(order.shape)[:-1]
    return rates[tuple(lead) + (order,)]


def hypoexp_logpdf(rates, y, offset=None, softness=None) -> Tensor:
    """Log density of a (shifted) hypoexponential law, elementwise over the batch.

    ``rates`` has shape (..., n) with pairwise distinct entries; ``y`` has
    shape (...). With ``offset`` the law is shifted right. ``softness`` replaces
    ``y - offset`` by ``softness * softplus((y - offset) / softness)``, which
    keeps the value finite when the shift overshoots ``y``.
    """
    rates = _sorted_rates(as_tensor(rates))
    z = as_tensor(y)
    if offset is not None:
        z = z - offset
        if softness is not None:
            z = (z * (1.0 / softness)).softplus() * softness
    n = rates.shape[-1]
    cols = [rates[..., i] for i in range(n)]
    logprod = cols[0].log()
    for c in cols[1:]:
        logprod = logprod + c.log()
    if n == 1:
        return logprod - cols[0] * z
    s = None
    for i in range(n):
        denom = None
        for j in range(n):
            if j != i:
                d = cols[j] - cols[i]
                denom = d if denom is None else denom * d
        term = (-(cols[i] - cols[0]) * z).exp() / denom
        s = term if s is None else s + term
    closed = logprod - cols[0] * z + s.clamp_min(1e-300).log()
    small = z.data * cols[-1].data < SERIES_CUTOFF
    if not np.any(small):
        return closed
    # the partial-fraction sum cancels near z = 0; there use the power series
    # f(z) = prod(r) z^(n-1) sum_m (-z)^m h_m(r) / (m+n-1)!, h_m complete homogeneous
    pad = Tensor(np.zeros(small.shape))
    zs = (z + pad)[small]
    sub = [(c + pad)[small] for c in cols]
    h = [Tensor(np.ones(zs.shape))] + [Tensor(np.zeros(zs.shape))] * SERIES_TERMS
    for c in sub:
        for k in range(1, SERIES_TERMS + 1):
            h[k] = h[k] + c * h[k - 1]
    total, power = h[0] * (1.0 / math.factorial(n - 1)), None
    for k in range(1, SERIES_TERMS + 1):
        power = -zs if k == 1 else power * (-zs)
        total = total + power * h[k] * (1.0 / math.factorial(k + n - 1))
    series = (logprod + pad)[small] + zs.log() * (n - 1) + total.log()
    return put(closed, small, series)


def hypoexp_nll(rates, y, offset=None, softness=None) -> Tensor:
    """Negative log density of a hypoexponential law at ``y`` (elementwise)."""
    yv = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=float)
    if offset is None and np.any(yv <= 0):
        raise ValueError("hypoexponential likelihood needs y > 0")
    return -hypoexp_logpdf(rates, y, offset, softness)


def gaussian_nll(mu, sigma, y) -> Tensor:
    mu, sigma, y = as_tensor(mu), as_tensor(sigma), as_tensor(y)
    if np.any(sigma.data <= 0):
        raise ValueError("sigma must be positive")
    return sigma.log() + 0.5 * LOG_2PI + ((y - mu) / sigma).square() * 0.5


def mse(pred, target) -> Tensor:
    return (as_tensor(pred) - as_tensor(target)).square().mean()


def elbo_loss(model, x, y, n_mc_samples=1, kl_weight=1.0, rng=None) -> Tensor:
    """``kl_weight * KL[q || prior] - mean_MC mean_batch log p(y | x, w)``.

    ``model.log_likelihood(x, y, rng)`` must return per-sample log-likelihoods
    for one weight draw and leave that draw's KL in ``model.kl()``. KL terms
    are averaged over the draws as well (they coincide for closed-form KL).
    """
    if n_mc_samples < 1:
        raise ValueError("n_mc_samples must be >= 1")
    ll = None
    kl = None
    for _ in range(n_mc_samples):
        lk = model.log_likelihood(x, y, rng).mean()
        ll = lk if ll is None else ll + lk
        k = model.kl()
        if k is not None:
            kl = k if kl is None else kl + k
    loss = -ll * (1.0 / n_mc_samples)
    if kl is not None and kl_weight != 0:
        loss = loss + kl * (kl_weight / n_mc_samples)
    return loss
