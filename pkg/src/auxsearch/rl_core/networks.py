"""Small dense networks built on the autodiff tensors."""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from ..autodiff import ParameterSet, Tensor


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class MLP:
    """ReLU multilayer perceptron; ``sizes`` lists every layer width."""

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        self.sizes = list(sizes)
        self.params = ParameterSet()
        self.layers: list[tuple[Tensor, Tensor]] = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = self.params.add(f"w{i}", _uniform(rng, n_in, (n_in, n_out)))
            b = self.params.add(f"b{i}", Tensor(np.zeros((1, n_out)), requires_grad=True))
            self.layers.append((w, b))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.mlp(ad.as_tensor(x), self.layers)


class DenseMLPEncoder:
    """One-layer dense encoder: ``concat(x, relu(x W + b))``.

    ``latent_dim`` is the full output width, so the learned part has
    ``latent_dim - obs_dim`` units.
    """

    def __init__(self, obs_dim: int, latent_dim: int, rng: np.random.Generator):
        if latent_dim <= obs_dim:
            raise ValueError(f"latent_dim {latent_dim} must exceed obs_dim {obs_dim}")
        self.obs_dim = obs_dim
        self.latent_dim = latent_dim
        hidden = latent_dim - obs_dim
        self.params = ParameterSet()
        self.w = self.params.add("w", _uniform(rng, obs_dim, (obs_dim, hidden)))
        self.b = self.params.add("b", Tensor(np.zeros((1, hidden)), requires_grad=True))

    def __call__(self, x) -> Tensor:
        x = ad.as_tensor(x)
        return ad.concat([x, ad.relu(ad.linear(x, self.w, self.b))])


class Actor:
    """Tanh-squashed diagonal Gaussian policy head."""

    def __init__(self, feature_dim: int, action_dim: int, hidden: int, rng: np.random.Generator,
                 log_std_min: float = -10.0, log_std_max: float = 2.0):
        self.action_dim = action_dim
        self.log_std_min = log_std_min
        self.log_std_max = log_std_max
        self.trunk = MLP([feature_dim, hidden, hidden, 2 * action_dim], rng)
        self.params = self.trunk.params

    def distribution(self, features: Tensor) -> tuple[Tensor, Tensor]:
        out = self.trunk(features)
        mu = ad.slice_cols(out, 0, self.action_dim)
        raw = ad.tanh(ad.slice_cols(out, self.action_dim, 2 * self.action_dim))
        # smooth squash of log_std into [min, max]
        span = 0.5 * (self.log_std_max - self.log_std_min)
        log_std = raw * span + (self.log_std_min + span)
        return mu, log_std

    def sample(self, features: Tensor, noise: np.ndarray) -> tuple[Tensor, Tensor]:
        """Reparameterized action and its log-density (an (n, 1) column)."""
        mu, log_std = self.distribution(features)
        u = ad.gaussian_reparam(mu, log_std, noise)
        action = ad.tanh(u)
        gauss = ad.sum(log_std, axis=1) * -1.0 + float(
            -0.5 * self.action_dim * math.log(2.0 * math.pi)
        )
        gauss = gauss - 0.5 * (noise * noise).sum(axis=1, keepdims=True)
        # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
        log_det = ad.sum((ad.softplus(u * -2.0) + u) * -2.0 + 2.0 * math.log(2.0), axis=1)
        return action, gauss - log_det

    def mean_action(self, features: Tensor) -> np.ndarray:
        mu, _ = self.distribution(features)
        return np.tanh(mu.data)


class Critic:
    """Twin Q heads on ``concat(features, action)``."""

    def __init__(self, feature_dim: int, action_dim: int, hidden: int, rng: np.random.Generator):
        self.q1 = MLP([feature_dim + action_dim, hidden, hidden, 1], rng)
        self.q2 = MLP([feature_dim + action_dim, hidden, hidden, 1], rng)
        self.params = ParameterSet()
        self.params.update(self.q1.params, "q1.")
        self.params.update(self.q2.params, "q2.")

    def __call__(self, features: Tensor, action) -> tuple[Tensor, Tensor]:
        x = ad.concat([features, ad.as_tensor(action)])
        return self.q1(x), self.q2(x)


def copy_params(dst: ParameterSet, src: ParameterSet) -> None:
    for name, t in src.items():
        dst[name].data = t.data.copy()


def ema_update(target: ParameterSet, online: ParameterSet, tau: float) -> ParameterSet:
    """``target <- tau * online + (1 - tau) * target``, element-wise."""
    for name, t in target.items():
        src = online[name]
        if src.shape != t.shape:
            raise ad.ShapeMismatch(f"{name}: {src.shape} vs {t.shape}")
        t.data = tau * src.data + (1.0 - tau) * t.data
    return target
