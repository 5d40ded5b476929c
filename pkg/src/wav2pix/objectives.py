"""Least-squares adversarial losses and the auxiliary identity loss.

Expectations over the data are reduced with the batch mean. The discriminator
is pushed towards 1 on real pairs and 0 on generated ones; the generator is
pushed towards a score of 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F


def _check(scores: torch.Tensor, name: str) -> None:
    if scores.numel() == 0:
        raise ValueError(f"{name} is empty")
    if not torch.isfinite(scores).all():
        raise ValueError(f"{name} contains non-finite values")


def lsgan_d_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    _check(real_scores, "real_scores")
    _check(fake_scores, "fake_scores")
    return 0.5 * ((real_scores - 1.0) ** 2).mean() + 0.5 * (fake_scores ** 2).mean()


def lsgan_g_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    _check(fake_scores, "fake_scores")
    return 0.5 * ((fake_scores - 1.0) ** 2).mean()


def identity_ce_loss(logits: torch.Tensor, labels: torch.Tensor, num_identities: int = None) -> torch.Tensor:
    """Mean softmax cross-entropy (natural log)."""
    if logits.dim() != 2 or logits.shape[0] != labels.shape[0]:
        raise ValueError("logits must be (B, K) with one label per row")
    K = logits.shape[1]
    if num_identities is not None and num_identities != K:
        raise ValueError(f"logits have {K} classes, expected {num_identities}")
    if labels.numel() and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    return F.cross_entropy(logits, labels)


def generator_total_loss(g_adv, g_identity, lam: float = 1.0):
    if lam < 0:
        raise ValueError(f"identity loss weight must be non-negative, got {lam}")
    return g_adv + lam * g_identity


@dataclass
class LossBreakdown:
    d_loss: float
    g_adv: float
    g_identity: float
    g_total: float
    lam: float

    def finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.d_loss, self.g_adv, self.g_identity, self.g_total))
