"""Adversarial training loop.

Each step runs two sub-steps on the same batch:

* discriminator: the speech embedding and the generated image are computed
  without gradients, so the encoder and generator cannot move; only D's
  optimizer steps.
* generator: embedding and image are recomputed with gradients. D scores the
  image against a detached copy of the embedding, so the embedding's error
  reaches the encoder only through the generator and the identity head. D's
  parameters and spectral-norm state are left untouched.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .audio import padded_length
from .checkpoint import read_container, write_container
from .dataset import Manifest, batch_iterator, batches_per_epoch
from .networks import ModelConfig, Wav2Pix
from .objectives import (
    LossBreakdown,
    generator_total_loss,
    identity_ce_loss,
    lsgan_d_loss,
    lsgan_g_loss,
)

log = logging.getLogger(__name__)

METRICS_HEADER = ["step", "d_loss", "g_adv", "g_identity"]


@dataclass
class TrainConfig:
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    adam_beta1: float = 0.1
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    lambda_: float = 1.0
    image_size: int = 64
    chunk_samples: int = 16384
    max_steps: int = 1000
    seed: int = 0
    checkpoint_every: int = 500
    encoder_batchnorm: bool = True

    def __post_init__(self):
        if min(self.lr_g, self.lr_d) <= 0:
            raise ValueError("learning rates must be positive")
        if self.image_size not in (64, 128):
            raise ValueError(f"image_size must be 64 or 128, got {self.image_size}")
        if self.lambda_ < 0:
            raise ValueError("lambda must be non-negative")
        if self.batch_size < 1 or self.max_steps < 0 or self.checkpoint_every < 1:
            raise ValueError("batch_size and checkpoint_every must be positive, max_steps non-negative")

    # JSON uses the bare name "lambda"
    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lambda_"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @property
    def encoder_samples(self) -> int:
        return padded_length(self.chunk_samples)

    def model_config(self, num_identities: int) -> ModelConfig:
        return ModelConfig.for_size(self.image_size, self.encoder_samples, num_identities,
                                    self.encoder_batchnorm)


@dataclass
class TrainState:
    step: int
    model: Wav2Pix
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: np.random.Generator
    config: TrainConfig
    identities: list


def _adam(params, lr, cfg: TrainConfig):
    return torch.optim.Adam(params, lr=lr, betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)


def init_state(config: TrainConfig, identities, model_config: Optional[ModelConfig] = None) -> TrainState:
    model_config = model_config or config.model_config(len(identities))
    model = Wav2Pix(model_config, seed=config.seed)
    return TrainState(
        step=0,
        model=model,
        opt_g=_adam(list(model.g_parameters()), config.lr_g, config),
        opt_d=_adam(list(model.discriminator.parameters()), config.lr_d, config),
        rng=np.random.default_rng([config.seed, 1]),
        config=config,
        identities=list(identities),
    )


def _as_tensors(batch, dtype):
    chunks, images, labels = batch
    return (torch.as_tensor(chunks, dtype=dtype), torch.as_tensor(images, dtype=dtype),
            torch.as_tensor(labels, dtype=torch.long))


def d_substep(state: TrainState, chunks, images, dropout_seed: int) -> float:
    """One discriminator update. Encoder and generator outputs are constants here."""
    m = state.model
    m.train()
    with torch.no_grad():
        e = m.encoder(chunks, update_stats=False)
        fake = m.generator(e, dropout_seed, update_stats=False)
    # one D evaluation per sub-step, so spectral-norm state advances once
    scores = m.discriminator(torch.cat([images, fake]), torch.cat([e, e]))
    n = images.shape[0]
    loss = lsgan_d_loss(scores[:n], scores[n:])
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite discriminator loss at step {state.step + 1}")
    state.opt_d.zero_grad(set_to_none=True)
    loss.backward()
    state.opt_d.step()
    return loss.item()


def g_substep(state: TrainState, chunks, labels, dropout_seed: int):
    """One update of encoder, generator and identity head. Returns (g_adv, g_identity, g_total)."""
    m = state.model
    m.train()
    d_params = list(m.discriminator.parameters())
    for p in d_params:
        p.requires_grad_(False)
    try:
        e = m.encoder(chunks)
        fake = m.generator(e, dropout_seed)
        g_adv = lsgan_g_loss(m.discriminator(fake, e.detach(), update=False))
        g_id = identity_ce_loss(m.classifier(e), labels)
        total = generator_total_loss(g_adv, g_id, state.config.lambda_)
        if not torch.isfinite(total):
            raise FloatingPointError(
                f"non-finite generator loss at step {state.step + 1} "
                f"(g_adv={g_adv.item()}, g_identity={g_id.item()})"
            )
        state.opt_g.zero_grad(set_to_none=True)
        total.backward()
        state.opt_g.step()
    finally:
        for p in d_params:
            p.requires_grad_(True)
    return g_adv.item(), g_id.item(), total.item()


def train_step(state: TrainState, batch) -> LossBreakdown:
    dtype = next(state.model.parameters()).dtype
    chunks, images, labels = _as_tensors(batch, dtype)
    dropout_seed = int(state.rng.integers(2 ** 31))
    d_loss = d_substep(state, chunks, images, dropout_seed)
    g_adv, g_id, g_total = g_substep(state, chunks, labels, dropout_seed)
    state.step += 1
    return LossBreakdown(d_loss, g_adv, g_id, g_total, state.config.lambda_)


# -- checkpoints ---------------------------------------------------------------

def _optimizer_arrays(prefix, opt, names):
    out = {}
    for p, name in zip(opt.param_groups[0]["params"], names):
        st = opt.state.get(p)
        if not st:
            continue
        for key in ("exp_avg", "exp_avg_sq", "step"):
            out[f"{prefix}/{name}/{key}"] = st[key].detach().cpu().numpy().reshape(st[key].shape)
    return out


def _restore_optimizer(prefix, opt, names, arrays):
    for p, name in zip(opt.param_groups[0]["params"], names):
        key = f"{prefix}/{name}/exp_avg"
        if key not in arrays:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(arrays[f"{prefix}/{name}/step"].reshape(()))),
            "exp_avg": torch.from_numpy(arrays[key]).to(p.dtype),
            "exp_avg_sq": torch.from_numpy(arrays[f"{prefix}/{name}/exp_avg_sq"]).to(p.dtype),
        }


def _param_names(model, params):
    lookup = {id(p): n for n, p in model.named_parameters()}
    return [lookup[id(p)] for p in params]


def save_checkpoint(state: TrainState, path) -> Path:
    m = state.model
    arrays = {f"model/{k}": v.detach().cpu().numpy() for k, v in m.state_dict().items()}
    arrays.update(_optimizer_arrays("opt_g", state.opt_g, _param_names(m, state.opt_g.param_groups[0]["params"])))
    arrays.update(_optimizer_arrays("opt_d", state.opt_d, _param_names(m, state.opt_d.param_groups[0]["params"])))
    meta = {
        "step": state.step,
        "train_config": state.config.to_dict(),
        "model_config": m.config.to_dict(),
        "identities": state.identities,
        "rng_state": state.rng.bit_generator.state,
    }
    return write_container(path, meta, arrays)


def load_checkpoint(path) -> TrainState:
    meta, arrays = read_container(path)
    config = TrainConfig.from_dict(meta["train_config"])
    state = init_state(config, meta["identities"], ModelConfig.from_dict(meta["model_config"]))
    m = state.model
    sd = {k: torch.from_numpy(arrays[f"model/{k}"]) for k in m.state_dict()}
    m.load_state_dict(sd)
    _restore_optimizer("opt_g", state.opt_g, _param_names(m, state.opt_g.param_groups[0]["params"]), arrays)
    _restore_optimizer("opt_d", state.opt_d, _param_names(m, state.opt_d.param_groups[0]["params"]), arrays)
    state.rng.bit_generator.state = meta["rng_state"]
    state.step = int(meta["step"])
    return state


# -- loop ----------------------------------------------------------------------

def _open_metrics(path: Path, keep_until: int):
    rows = []
    if keep_until > 0 and path.exists():
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh)][1:]
        rows = [r for r in rows if int(r[0]) <= keep_until]
    fh = open(path, "w", newline="")
    writer = csv.writer(fh)
    writer.writerow(METRICS_HEADER)
    writer.writerows(rows)
    return fh, writer


def train(config: TrainConfig, manifest: Manifest, out_dir, resume=None) -> Path:
    """Run ``config.max_steps`` steps; returns the path of the last checkpoint written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if manifest.chunk_samples != config.chunk_samples or manifest.image_size != config.image_size:
        manifest = Manifest(manifest.records, manifest.identities, config.image_size,
                            config.chunk_samples, manifest.root)
    state = load_checkpoint(resume) if resume else init_state(config, manifest.identities)
    if resume:
        state.config = config
    with open(out / "config.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=2)

    bpe = batches_per_epoch(manifest, config.batch_size)
    if bpe == 0:
        raise ValueError(f"batch_size {config.batch_size} exceeds the {len(manifest)} records")
    cache = {}
    last = None
    fh, writer = _open_metrics(out / "metrics.csv", state.step)
    try:
        while state.step < config.max_steps:
            epoch, start = divmod(state.step, bpe)
            for batch in batch_iterator(manifest, config.batch_size, config.seed, epoch,
                                        cache=cache, start_batch=start):
                metrics = train_step(state, batch)
                writer.writerow([state.step, repr(metrics.d_loss), repr(metrics.g_adv), repr(metrics.g_identity)])
                if state.step % 50 == 0:
                    log.info("step %d d=%.4f g_adv=%.4f g_id=%.4f", state.step,
                             metrics.d_loss, metrics.g_adv, metrics.g_identity)
                if state.step % config.checkpoint_every == 0 or state.step == config.max_steps:
                    fh.flush()
                    last = save_checkpoint(state, out / f"ckpt_{state.step:06d}.ckpt")
                if state.step >= config.max_steps:
                    break
    finally:
        fh.close()
    if last is None:
        last = save_checkpoint(state, out / f"ckpt_{state.step:06d}.ckpt")
    return last
