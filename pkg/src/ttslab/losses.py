"""Adversarial, categorical and gradient-penalty losses.

Two adversarial objectives are supported. ``mse`` regresses sigmoid scores
onto real/fake target labels. ``wgan-gp`` uses raw critic scores:

    L_adv = E[D(real)] - E[D(fake)] - lambda_gp * GP

The discriminator minimizes ``-L_adv + lambda_cls * L_cls_real`` and the
generator minimizes ``-E[D(fake)] + lambda_cls * L_cls_fake``.
"""
from __future__ import annotations

from typing import Callable, Optional

import torch
import torch.nn.functional as F

from .errors import UsageError

Critic = Callable[[torch.Tensor], torch.Tensor]


def label_targets(cfg=None) -> tuple[float, float]:
    """Effective (real, fake) regression targets after soft/flip heuristics."""
    if cfg is None:
        return 1.0, 0.0
    real, fake = cfg.real_label, cfg.fake_label
    if getattr(cfg, "soft_labels", False):
        real, fake = 0.9, 0.1
    if getattr(cfg, "flip_labels", False):
        real, fake = fake, real
    return real, fake


def mse_d_loss(d_real: torch.Tensor, d_fake: torch.Tensor, cfg=None) -> torch.Tensor:
    real_t, fake_t = label_targets(cfg)
    if d_real.shape != d_fake.shape:
        raise UsageError(f"score shapes differ: {tuple(d_real.shape)} vs {tuple(d_fake.shape)}")
    return F.mse_loss(d_real, torch.full_like(d_real, real_t)) + F.mse_loss(d_fake, torch.full_like(d_fake, fake_t))


def mse_g_loss(d_fake: torch.Tensor, cfg=None) -> torch.Tensor:
    real_t, _ = label_targets(cfg)
    return F.mse_loss(d_fake, torch.full_like(d_fake, real_t))


def gradient_penalty(
    critic: Critic,
    real: torch.Tensor,
    fake: torch.Tensor,
    generator: Optional[torch.Generator] = None,
    seed: Optional[int] = None,
) -> torch.Tensor:
    """``mean((||grad D(x_hat)||_2 - 1)^2)`` on random interpolates of ``real`` and ``fake``.

    One mixing weight per sample, uniform on [0, 1). The graph is kept so the
    penalty can be backpropagated into the critic's parameters.
    """
    if real.shape != fake.shape:
        raise UsageError(f"real and fake shapes differ: {tuple(real.shape)} vs {tuple(fake.shape)}")
    if generator is None and seed is not None:
        generator = torch.Generator().manual_seed(seed)
    eps_shape = (real.shape[0],) + (1,) * (real.ndim - 1)
    eps = torch.rand(eps_shape, generator=generator).to(real.dtype)
    # the input gradient is needed even when called under no_grad
    with torch.enable_grad():
        x_hat = (eps * real.detach() + (1 - eps) * fake.detach()).requires_grad_(True)
        scores = critic(x_hat)
        if not scores.requires_grad:
            # constant critic: gradient is identically zero
            grad = torch.zeros_like(x_hat)
        else:
            (grad,) = torch.autograd.grad(scores.sum(), x_hat, create_graph=True, allow_unused=True)
            if grad is None:
                grad = torch.zeros_like(x_hat)
        norms = grad.flatten(1).norm(2, dim=1)
        return ((norms - 1) ** 2).mean()


def wasserstein_distance(critic: Critic, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    return critic(real).mean() - critic(fake).mean()


def wgan_adv_losses(
    critic: Critic,
    real: torch.Tensor,
    fake: torch.Tensor,
    lambda_gp: float = 10.0,
    generator: Optional[torch.Generator] = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(L_adv, L_adv_g)``.

    ``L_adv`` is the quantity the critic maximizes (penalty included);
    ``L_adv_g = -mean(D(fake))`` is the generator's adversarial term.
    """
    if lambda_gp < 0:
        raise UsageError("lambda_gp must be >= 0")
    gp = gradient_penalty(critic, real, fake, generator) if lambda_gp else real.new_zeros(())
    l_adv = wasserstein_distance(critic, real, fake) - lambda_gp * gp
    l_adv_g = -critic(fake).mean()
    return l_adv, l_adv_g


def categorical_loss(class_logits: torch.Tensor, labels) -> torch.Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(class_logits)``."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    if class_logits.ndim != 2 or class_logits.shape[0] != labels.shape[0]:
        raise UsageError(f"logits {tuple(class_logits.shape)} do not match {labels.shape[0]} labels")
    k = class_logits.shape[1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= k):
        raise UsageError(f"label out of range [0, {k})")
    return F.cross_entropy(class_logits, labels)
