"""Central-difference check of the analytic gradients of both training losses."""

from __future__ import annotations

import numpy as np
import torch

from .networks import (
    DiscriminatorConfig,
    EncoderConfig,
    GeneratorConfig,
    ModelConfig,
    Wav2Pix,
    trace_kinks,
)
from .objectives import generator_total_loss, identity_ce_loss, lsgan_d_loss, lsgan_g_loss


def tiny_model_config(num_identities: int = 3) -> ModelConfig:
    """A 4096-sample, 16x16 network with the same topology as the full model."""
    return ModelConfig(
        EncoderConfig(channel_plan=[4, 8, 8, 16, 16, 16], fc_plan=[32, 16, 16], input_samples=4096),
        GeneratorConfig(embedding_dim=16, num_upsample=2, base_channels=16),
        DiscriminatorConfig(channel_plan=[8, 16], embedding_dim=16),
        num_identities,
    )


def _losses(model: Wav2Pix, chunks, images, labels, dropout_seed: int, lam: float):
    """Both objectives as pure functions of the parameters (no state updates).

    The discriminator's conditioning embedding is a constant in the generator
    objective (training detaches it), so it is frozen here at its
    unperturbed value rather than recomputed under each perturbation.
    """
    with torch.no_grad():
        e_cond = model.encoder(chunks, update_stats=False)

    def g_total():
        e = model.encoder(chunks, update_stats=False)
        fake = model.generator(e, dropout_seed, update_stats=False)
        g_adv = lsgan_g_loss(model.discriminator(fake, e_cond, update=False))
        return generator_total_loss(g_adv, identity_ce_loss(model.classifier(e), labels), lam)

    def d_loss():
        with torch.no_grad():
            e = model.encoder(chunks, update_stats=False)
            fake = model.generator(e, dropout_seed, update_stats=False)
        scores = model.discriminator(torch.cat([images, fake]), torch.cat([e, e]), update=False)
        n = images.shape[0]
        return lsgan_d_loss(scores[:n], scores[n:])

    return g_total, d_loss


def candidate_indices(params, rng: np.random.Generator):
    """Seeded random order over every scalar entry, as (param_position, flat_index) pairs."""
    sizes = np.array([p.numel() for p in params])
    bounds = np.cumsum(sizes)
    for f in rng.permutation(int(sizes.sum())):
        k = int(np.searchsorted(bounds, f, side="right"))
        yield k, int(f - (bounds[k - 1] if k else 0))


def _traced(loss_fn):
    with trace_kinks() as trace:
        value = loss_fn().item()
    return value, trace


def _same_side(a, b) -> bool:
    return all(torch.equal(x, y) for x, y in zip(a, b))


def _check(loss_fn, params, candidates, n, epsilon):
    """Compare backprop against central differences on ``n`` entries.

    An entry whose +/- perturbation moves any rectifier input across zero is
    replaced by the next candidate: a difference taken across a kink does
    not estimate the derivative.
    """
    for p in params:
        p.grad = None
    loss_fn().backward()
    _, base = _traced(loss_fn)
    rows, skipped = [], 0
    with torch.no_grad():
        for k, i in candidates:
            if len(rows) == n:
                break
            p = params[k].view(-1)
            analytic = params[k].grad.view(-1)[i].item()
            orig = p[i].item()
            p[i] = orig + epsilon
            plus, trace_plus = _traced(loss_fn)
            p[i] = orig - epsilon
            minus, trace_minus = _traced(loss_fn)
            p[i] = orig
            if not (_same_side(base, trace_plus) and _same_side(base, trace_minus)):
                skipped += 1
                continue
            numeric = (plus - minus) / (2 * epsilon)
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            rows.append((k, i, analytic, numeric, err))
    return rows, skipped


def gradcheck_report(seed: int = 0, epsilon: float = 1e-4, n_params: int = 100,
                     batch: int = 4, lam: float = 1.0, config: ModelConfig = None,
                     warmup_iterations: int = 20) -> dict:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    config = config or tiny_model_config()
    torch_gen = torch.Generator().manual_seed(seed)
    model = Wav2Pix(config, seed=seed).double().train()
    with torch.no_grad():
        for conv in model.discriminator.modules():
            if hasattr(conv, "normalized_weight"):
                for _ in range(warmup_iterations):
                    conv.normalized_weight(update=True)
    T, S = config.encoder.input_samples, config.image_size
    chunks = torch.rand(batch, T, generator=torch_gen, dtype=torch.float64) * 2 - 1
    images = torch.tanh(torch.randn(batch, 3, S, S, generator=torch_gen, dtype=torch.float64))
    labels = torch.arange(batch) % config.num_identities
    g_total, d_loss = _losses(model, chunks, images, labels, dropout_seed=seed, lam=lam)

    rng = np.random.default_rng(seed)
    g_params = list(model.g_parameters())
    d_params = list(model.discriminator.parameters())
    g_rows, g_skipped = _check(g_total, g_params, candidate_indices(g_params, rng), n_params, epsilon)
    d_rows, d_skipped = _check(d_loss, d_params, candidate_indices(d_params, rng), n_params, epsilon)
    errors = [r[-1] for r in g_rows + d_rows]
    return {
        "max_rel_error": max(errors),
        "n_checked": len(errors),
        "n_skipped_kinks": g_skipped + d_skipped,
        "g_indices": [r[:2] for r in g_rows],
        "d_indices": [r[:2] for r in d_rows],
        "n_parameters": sum(p.numel() for p in model.parameters()),
    }


def finite_difference_gradcheck(seed: int = 0, epsilon: float = 1e-4, config: ModelConfig = None) -> float:
    """Max relative error between backprop and central differences over 2 x 100 sampled entries."""
    return gradcheck_report(seed, epsilon, config=config)["max_rel_error"]
