"""Minimal differentiable-model core: autodiff tensors, layers, likelihoods, Adam."""
from .tensor import Tensor, backward, concat, cumsum, no_grad, stack
from .layers import (
    MLP,
    Autoencoder,
    BayesianDense,
    Dense,
    GaussianHead,
    HypoexpHead,
    LSTMCell,
    Module,
    SageLayer,
    bayes_forward,
    gaussian_kl,
    lstm_forward,
    mean_aggregator,
    sage_forward,
)
from .losses import elbo_loss, gaussian_nll, hypoexp_logpdf, hypoexp_nll, mse
from .optim import Adam, AdamState, adam_step
from .checkpoint import load_checkpoint, load_into, save_checkpoint

__all__ = [
    "Tensor", "backward", "concat", "cumsum", "no_grad", "stack",
    "MLP", "Autoencoder", "BayesianDense", "Dense", "GaussianHead", "HypoexpHead", "LSTMCell",
    "Module", "SageLayer", "bayes_forward", "gaussian_kl", "lstm_forward", "mean_aggregator",
    "sage_forward", "elbo_loss", "gaussian_nll", "hypoexp_logpdf", "hypoexp_nll", "mse",
    "Adam", "AdamState", "adam_step", "load_checkpoint", "load_into", "save_checkpoint",
]
