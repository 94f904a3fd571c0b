"""Layers built on :mod:`pqlat.neuro.tensor`.

Every layer is a :class:`Module`; parameters are leaf tensors discovered in
attribute definition order, which fixes the layout used by optimizers and
checkpoints.
"""
from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, concat, cumsum

RATE_FLOOR = 1e-4


def _softplus_np(x):
    return np.logaddexp(0.0, x)


def _inv_softplus(y):
    return np.log(np.expm1(y))


class Module:
    def named_parameters(self, prefix=""):
        for name, val in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(val, Tensor) and val.requires_grad and val._backward is None:
                yield full, val
            elif isinstance(val, Module):
                yield from val.named_parameters(full + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def kl(self):
        """Sum of KL terms of Bayesian sublayers from their most recent forward pass."""
        total = None
        for val in vars(self).values():
            items = val if isinstance(val, (list, tuple)) else [val]
            for item in items:
                if isinstance(item, Module):
                    k = item.kl()
                    if k is not None:
                        total = k if total is None else total + k
        return total


def _activate(x: Tensor, name):
    if name is None or name == "linear":
        return x
    if name == "tanh":
        return x.tanh()
    if name == "relu":
        return x.relu()
    if name == "sigmoid":
        return x.sigmoid()
    if name == "softplus":
        return x.softplus()
    raise ValueError(f"unknown activation {name!r}")


def _glorot(rng, n_in, n_out):
    lim = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-lim, lim, (n_in, n_out))


class Dense(Module):
    def __init__(self, n_in, n_out, activation=None, rng=None):
        rng = rng or np.random.default_rng(0)
        self.weight = Tensor(_glorot(rng, n_in, n_out), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)
        self.activation = activation

    def __call__(self, x):
        return _activate(x @ self.weight + self.bias, self.activation)


class BayesianDense(Module):
    """Dense layer with a factorized Gaussian posterior over weights and biases.

    Posterior std is ``softplus(rho)``; the prior is N(0, prior_sigma^2).
    The KL of the last forward pass is kept in ``last_kl``.
    """

    def __init__(self, n_in, n_out, activation=None, prior_sigma=1.0, init_sigma=1e-3,
                 mc_kl=False, rng=None):
        rng = rng or np.random.default_rng(0)
        self.weight_mu = Tensor(_glorot(rng, n_in, n_out), requires_grad=True)
        self.weight_rho = Tensor(np.full((n_in, n_out), _inv_softplus(init_sigma)), requires_grad=True)
        self.bias_mu = Tensor(np.zeros(n_out), requires_grad=True)
        self.bias_rho = Tensor(np.full(n_out, _inv_softplus(init_sigma)), requires_grad=True)
        self.activation = activation
        self.prior_sigma = float(prior_sigma)
        self.mc_kl = mc_kl
        self.last_kl = None

    def posterior_sigma(self):
        return _softplus_np(self.weight_rho.data), _softplus_np(self.bias_rho.data)

    def kl_closed_form(self) -> Tensor:
        return (gaussian_kl(self.weight_mu, self.weight_rho.softplus(), self.prior_sigma)
                + gaussian_kl(self.bias_mu, self.bias_rho.softplus(), self.prior_sigma))

    def __call__(self, x, rng=None, eps=None):
        """Forward with one weight sample; ``rng=None`` and ``eps=None`` use the means.

        ``eps`` is an optional ``(eps_weight, eps_bias)`` pair of standard
        normal draws.
        """
        if eps is None and rng is not None:
            eps = (rng.standard_normal(self.weight_mu.shape), rng.standard_normal(self.bias_mu.shape))
        if eps is None:
            w, b = self.weight_mu, self.bias_mu
            self.last_kl = self.kl_closed_form()
        else:
            sw, sb = self.weight_rho.softplus(), self.bias_rho.softplus()
            w = self.weight_mu + sw * Tensor(eps[0])
            b = self.bias_mu + sb * Tensor(eps[1])
            if self.mc_kl:
                self.last_kl = (_mc_kl(w, self.weight_mu, sw, self.prior_sigma)
                                + _mc_kl(b, self.bias_mu, sb, self.prior_sigma))
            else:
                self.last_kl = self.kl_closed_form()
        return _activate(x @ w + b, self.activation)

    def kl(self):
        return self.last_kl


def gaussian_kl(mu: Tensor, sigma: Tensor, prior_sigma: float) -> Tensor:
    """KL( N(mu, sigma^2) || N(0, prior_sigma^2) ) summed over entries."""
    sp2 = prior_sigma**2
    terms = (math.log(prior_sigma) - sigma.log()) + (sigma * sigma + mu * mu) * (0.5 / sp2) - 0.5
    return terms.sum()


def _mc_kl(w, mu, sigma, prior_sigma):
    # single-sample estimate log q(w) - log p(w)
    logq = -sigma.log() - ((w - mu) / sigma).square() * 0.5
    logp = -math.log(prior_sigma) - w.square() * (0.5 / prior_sigma**2)
    return (logq - logp).sum()


def bayes_forward(layer: BayesianDense, x, rng=None, eps=None):
    """Sampled forward pass returning ``(y, kl)``."""
    y = layer(x if isinstance(x, Tensor) else Tensor(x), rng=rng, eps=eps)
    return y, layer.last_kl


class HypoexpHead(Module):
    """Maps ``n_stages`` (or ``n_stages + 1`` when shifted) raw outputs to hypoexponential parameters.

    Rates are ``r1, r1 + d2, r1 + d2 + d3, ...`` with ``r1, d_i = softplus(raw) + 1e-4``,
    so they are strictly increasing. The optional shift is ``softplus(raw_0)``.
    """

    def __init__(self, n_stages=4, shifted=False):
        if not 2 <= n_stages <= 4:
            raise ValueError("n_stages must lie in [2, 4]")
        self.n_stages = n_stages
        self.shifted = shifted

    @property
    def n_inputs(self):
        return self.n_stages + int(self.shifted)

    def __call__(self, raw: Tensor):
        if self.shifted:
            offset = raw[..., 0].softplus()
            raw = raw[..., 1:]
        else:
            offset = None
        rates = cumsum(raw.softplus() + RATE_FLOOR, axis=-1)
        return rates, offset


class GaussianHead(Module):
    """Two raw outputs to ``(mean, sigma)`` with ``sigma = softplus(raw) + 1e-6``."""

    def __call__(self, raw: Tensor):
        return raw[..., 0], raw[..., 1].softplus() + 1e-6


class LSTMCell(Module):
    """Standard LSTM cell; gate order in the fused weights is input, forget, cell, output."""

    def __init__(self, n_in, n_hidden, rng=None):
        rng = rng or np.random.default_rng(0)
        self.n_hidden = n_hidden
        self.w_x = Tensor(_glorot(rng, n_in, 4 * n_hidden), requires_grad=True)
        self.w_h = Tensor(_glorot(rng, n_hidden, 4 * n_hidden), requires_grad=True)
        b = np.zeros(4 * n_hidden)
        b[n_hidden:2 * n_hidden] = 1.0
        self.bias = Tensor(b, requires_grad=True)

    def __call__(self, x, state):
        h, c = state
        z = x @ self.w_x + h @ self.w_h + self.bias
        n = self.n_hidden
        i = z[..., :n].sigmoid()
        f = z[..., n:2 * n].sigmoid()
        g = z[..., 2 * n:3 * n].tanh()
        o = z[..., 3 * n:].sigmoid()
        c = f * c + i * g
        h = o * c.tanh()
        return h, c

    def initial_state(self, batch):
        z = Tensor(np.zeros((batch, self.n_hidden)))
        return z, z


def lstm_forward(cell: LSTMCell, sequence):
    """Run ``cell`` over ``sequence`` (batch, steps, features); return the final hidden state."""
    seq = sequence if isinstance(sequence, Tensor) else Tensor(sequence)
    if seq.ndim != 3 or seq.shape[1] == 0:
        raise ValueError("sequence must be (batch, steps >= 1, features)")
    h, c = cell.initial_state(seq.shape[0])
    for t in range(seq.shape[1]):
        h, c = cell(seq[:, t, :], (h, c))
    return h


def mean_aggregator(adjacency: np.ndarray) -> np.ndarray:
    """Row-normalized adjacency; isolated nodes get an all-zero row."""
    a = np.asarray(adjacency, dtype=float)
    deg = a.sum(axis=1, keepdims=True)
    return np.divide(a, deg, out=np.zeros_like(a), where=deg > 0)


class SageLayer(Module):
    """GraphSAGE layer with mean aggregation: ``act(h W_self + mean_nbr(h) W_nbr + b)``."""

    def __init__(self, n_in, n_out, activation="tanh", rng=None):
        rng = rng or np.random.default_rng(0)
        self.w_self = Tensor(_glorot(rng, n_in, n_out), requires_grad=True)
        self.w_nbr = Tensor(_glorot(rng, n_in, n_out), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)
        self.activation = activation

    def __call__(self, h, agg: np.ndarray):
        """``h`` is (..., nodes, features); ``agg`` the row-normalized adjacency."""
        h = h if isinstance(h, Tensor) else Tensor(h)
        if h.shape[-2] != agg.shape[0]:
            raise ValueError(f"{h.shape[-2]} feature rows for {agg.shape[0]} graph nodes")
        nbr = Tensor(agg) @ h
        return _activate(h @ self.w_self + nbr @ self.w_nbr + self.bias, self.activation)


def sage_forward(layer: SageLayer, node_features, graph):
    adj = graph.adjacency() if hasattr(graph, "adjacency") else np.asarray(graph)
    return layer(node_features, mean_aggregator(adj))


class MLP(Module):
    """Stack of dense layers; ``widths`` includes input and output sizes."""

    def __init__(self, widths, activation="tanh", out_activation=None, rng=None):
        rng = rng or np.random.default_rng(0)
        self.layers = [Dense(a, b, activation if i < len(widths) - 2 else out_activation, rng)
                       for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))]

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class Autoencoder(Module):
    """Symmetric dense autoencoder with a linear output layer."""

    def __init__(self, n_in, hidden=(16,), bottleneck=3, activation="tanh", rng=None):
        if bottleneck >= n_in:
            raise ValueError(f"bottleneck {bottleneck} must be smaller than input dim {n_in}")
        rng = rng or np.random.default_rng(0)
        hidden = tuple(hidden)
        self.encoder = MLP((n_in,) + hidden + (bottleneck,), activation, activation, rng)
        self.decoder = MLP((bottleneck,) + hidden[::-1] + (n_in,), activation, None, rng)

    def __call__(self, x):
        return self.decoder(self.encoder(x))


def join(*tensors):
    return concat(tensors, axis=-1)
