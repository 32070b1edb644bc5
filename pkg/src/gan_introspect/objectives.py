"""Least-squares source-and-target adversarial, cycle, and identity losses.

Generators are called as ``g(x, codes) -> Tensor`` and discriminators as
``d(x, first_code, second_code) -> Tensor`` of per-sample scores, so tiny
hand-built stand-ins work as well as the real networks.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class LossWeights:
    lambda_cyc: float = 10.0
    lambda_id: float = 5.0
    id_cutoff_iterations: int = 100

    def __post_init__(self):
        if self.lambda_cyc < 0 or self.lambda_id < 0 or self.id_cutoff_iterations < 0:
            raise ConfigError("loss weights and cutoff must be non-negative")


def _out(g, x, codes) -> Tensor:
    y = g(x, codes)
    return y[0] if isinstance(y, tuple) else y


def _same_shape(a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")


def adv_loss_d(d, x_real, c, x_fake, c_hat) -> Tensor:
    """mean (D(real; c_hat, c) - 1)^2 + mean D(fake; c, c_hat)^2. ``x_fake`` must already be detached."""
    real = d(x_real, c_hat, c)
    fake = d(x_fake, c, c_hat)
    return ad.mean(ad.square(ad.sub(real, 1.0))) + ad.mean(ad.square(fake))


def adv_loss_d_scores(real: Tensor, fake: Tensor) -> Tensor:
    return ad.mean(ad.square(ad.sub(real, 1.0))) + ad.mean(ad.square(fake))


def adv_loss_g(d, x_fake, c, c_hat) -> Tensor:
    return ad.mean(ad.square(ad.sub(d(x_fake, c, c_hat), 1.0)))


def l1_mean(a: Tensor, b) -> Tensor:
    b = ad.as_tensor(b)
    _same_shape(a, b)
    return ad.mean(ad.tabs(ad.sub(a, b)))


def cycle_loss(g, x, c, c_hat) -> Tensor:
    """mean |x - G(G(x, c_hat), c)|."""
    x = ad.as_tensor(x)
    return l1_mean(x, _out(g, _out(g, x, c_hat), c))


def identity_loss(g, x, c) -> Tensor:
    """mean |G(x, c) - x| with the source code fed as target."""
    x = ad.as_tensor(x)
    return l1_mean(_out(g, x, c), x)


def full_g_objective(adv: Tensor, cyc: Tensor, idt: Tensor | None, weights: LossWeights,
                     iteration: int) -> Tensor:
    total = ad.add(adv, ad.mul(cyc, weights.lambda_cyc))
    if idt is not None and iteration < weights.id_cutoff_iterations:
        total = ad.add(total, ad.mul(idt, weights.lambda_id))
    return total


def full_d_objective(adv_d: Tensor) -> Tensor:
    # least-squares form: D minimizes its own loss instead of maximizing the log objective
    return adv_d


def log_adv_loss_d(real: Tensor, fake: Tensor) -> Tensor:
    """Log-loss alternative on raw scores: -mean log sigmoid(real) - mean log(1 - sigmoid(fake))."""
    return ad.mean(ad.softplus(ad.mul(real, -1.0))) + ad.mean(ad.softplus(fake))


def log_adv_loss_g(fake: Tensor) -> Tensor:
    """Non-saturating generator counterpart of :func:`log_adv_loss_d`."""
    return ad.mean(ad.softplus(ad.mul(fake, -1.0)))
