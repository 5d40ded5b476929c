"""Speech encoder, image generator, conditional discriminator and identity head."""

from __future__ import annotations

import contextlib
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

SN_EPS = 1e-12


def conv1d_output_length(length: int, kernel: int, stride: int, padding: int) -> int:
    if length <= 0:
        raise ValueError("input length must be positive")
    out = (length + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise ValueError(f"input of length {length} is too short for kernel {kernel}")
    return out


@dataclass
class EncoderConfig:
    num_layers: int = 6
    kernel: int = 15
    stride: int = 4
    padding: int = 7
    channel_plan: list = field(default_factory=lambda: [32, 64, 128, 256, 512, 1024])
    fc_plan: list = field(default_factory=lambda: [1024, 256, 128])
    leaky_slope: float = 0.2
    input_samples: int = 16384
    batchnorm: bool = True

    def __post_init__(self):
        if len(self.channel_plan) != self.num_layers:
            raise ValueError("channel_plan needs one entry per conv layer")
        if self.input_samples % (self.stride ** self.num_layers):
            raise ValueError(
                f"input_samples={self.input_samples} must be a multiple of {self.stride ** self.num_layers}"
            )

    @property
    def conv_out_length(self) -> int:
        n = self.input_samples
        for _ in range(self.num_layers):
            n = conv1d_output_length(n, self.kernel, self.stride, self.padding)
        return n

    @property
    def flat_features(self) -> int:
        return self.channel_plan[-1] * self.conv_out_length

    @property
    def embedding_dim(self) -> int:
        return self.fc_plan[-1]


@dataclass
class GeneratorConfig:
    embedding_dim: int = 128
    num_upsample: int = 4
    base_channels: int = 512
    dropout_p: float = 0.5
    dropout_blocks: int = 2

    def __post_init__(self):
        if self.num_upsample < 1:
            raise ValueError(f"invalid number of upsampling stages: {self.num_upsample}")

    @property
    def image_size(self) -> int:
        return 4 * 2 ** self.num_upsample


@dataclass
class DiscriminatorConfig:
    kernel: int = 4
    stride: int = 2
    channel_plan: list = field(default_factory=lambda: [64, 128, 256, 512])
    leaky_slope: float = 0.2
    embedding_dim: int = 128
    power_iterations: int = 1

    @property
    def image_size(self) -> int:
        return 4 * 2 ** len(self.channel_plan)


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    num_identities: int = 10

    @classmethod
    def for_size(cls, image_size: int = 64, input_samples: int = 16384, num_identities: int = 10,
                 encoder_batchnorm: bool = True):
        if image_size not in (64, 128):
            raise ValueError(f"image_size must be 64 or 128, got {image_size}")
        plan = [64, 128, 256, 512] if image_size == 64 else [32, 64, 128, 256, 512]
        return cls(
            EncoderConfig(input_samples=input_samples, batchnorm=encoder_batchnorm),
            GeneratorConfig(num_upsample=int(math.log2(image_size // 4))),
            DiscriminatorConfig(channel_plan=plan),
            num_identities,
        )

    @property
    def image_size(self) -> int:
        return self.generator.image_size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(EncoderConfig(**d["encoder"]), GeneratorConfig(**d["generator"]),
                   DiscriminatorConfig(**d["discriminator"]), d["num_identities"])


# -- spectral normalization ----------------------------------------------------

def _l2normalize(x: torch.Tensor, eps: float = SN_EPS) -> torch.Tensor:
    return x / (x.norm() + eps)


def spectral_normalize(weight: torch.Tensor, u: torch.Tensor, v: Optional[torch.Tensor] = None,
                       n_iter: int = 1):
    """Divide ``weight`` by a power-iteration estimate of its top singular value.

    ``weight`` is viewed as (out_channels, -1). With ``n_iter > 0`` the state
    vectors are advanced first; with ``n_iter == 0`` the stored ``(u, v)`` pair
    is used as-is, which makes the result a fixed function of ``weight``.
    Returns ``(normalized_weight, u, v)``.
    """
    mat = weight.reshape(weight.shape[0], -1)
    with torch.no_grad():
        if v is None:
            v = _l2normalize(mat.t() @ u)
        for _ in range(n_iter):
            v_new = _l2normalize(mat.t() @ u)
            u_new = _l2normalize(mat @ v_new)
            # a zero weight would collapse the state; keep the previous vectors
            if u_new.norm() > 0:
                u, v = u_new, v_new
    sigma = torch.dot(u, mat @ v).clamp_min(SN_EPS)
    return weight / sigma, u, v


class SNConv2d(nn.Module):
    """Conv2d whose kernel is spectrally normalized on every forward pass."""

    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, power_iterations=1):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.power_iterations = power_iterations
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel) * 0.02)
        self.bias = nn.Parameter(torch.zeros(out_ch))
        u = _l2normalize(torch.randn(out_ch))
        self.register_buffer("u", u)
        self.register_buffer("v", _l2normalize(self.weight.detach().reshape(out_ch, -1).t() @ u))

    def normalized_weight(self, update: bool = True) -> torch.Tensor:
        w, u, v = spectral_normalize(self.weight, self.u, self.v,
                                     self.power_iterations if update else 0)
        if update:
            self.u.copy_(u)
            self.v.copy_(v)
        return w

    def forward(self, x, update: bool = True):
        return F.conv2d(x, self.normalized_weight(update), self.bias, self.stride, self.padding)


# -- building blocks -----------------------------------------------------------

class BatchNorm(nn.Module):
    """Batch norm whose running statistics update only when asked to.

    Lets a no-grad forward pass use batch statistics without touching
    the stored state.
    """

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))

    def forward(self, x, update_stats: bool = True):
        if not self.training:
            return F.batch_norm(x, self.running_mean, self.running_var, self.weight, self.bias,
                                False, 0.0, self.eps)
        rm, rv = (self.running_mean, self.running_var) if update_stats else (None, None)
        return F.batch_norm(x, rm, rv, self.weight, self.bias, True, self.momentum, self.eps)


# Sign patterns of rectifier inputs, recorded only inside ``trace_kinks``.
_kink_trace: Optional[list] = None


@contextlib.contextmanager
def trace_kinks():
    """Record which side of zero every rectifier input falls on."""
    global _kink_trace
    prev, _kink_trace = _kink_trace, []
    try:
        yield _kink_trace
    finally:
        _kink_trace = prev


def _leaky_relu(x, slope):
    if _kink_trace is not None:
        _kink_trace.append((x > 0).detach().clone())
    return F.leaky_relu(x, slope)


def _relu(x):
    if _kink_trace is not None:
        _kink_trace.append((x > 0).detach().clone())
    return F.relu(x)


def seeded_dropout(x: torch.Tensor, p: float, gen: torch.Generator) -> torch.Tensor:
    if p <= 0:
        return x
    keep = torch.rand(x.shape, generator=gen, dtype=x.dtype, device=x.device) >= p
    return x * keep / (1.0 - p)


# -- networks ------------------------------------------------------------------

class SpeechEncoder(nn.Module):
    """Raw waveform (B, T) to a speech embedding (B, embedding_dim)."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.convs = nn.ModuleList()
        self.norms = nn.ModuleList()
        ch = 1
        for out in cfg.channel_plan:
            self.convs.append(nn.Conv1d(ch, out, cfg.kernel, cfg.stride, cfg.padding, bias=not cfg.batchnorm))
            if cfg.batchnorm:
                self.norms.append(BatchNorm(out))
            ch = out
        dims = [cfg.flat_features] + list(cfg.fc_plan)
        self.fcs = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))

    def features(self, chunks: torch.Tensor, update_stats: bool = True) -> torch.Tensor:
        if chunks.dim() != 2 or chunks.shape[1] != self.cfg.input_samples:
            raise ValueError(f"expected (B, {self.cfg.input_samples}) chunks, got {tuple(chunks.shape)}")
        if not torch.isfinite(chunks).all():
            raise ValueError("speech chunks contain non-finite values")
        h = chunks.unsqueeze(1)
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if self.cfg.batchnorm:
                h = self.norms[i](h, update_stats)
            h = _leaky_relu(h, self.cfg.leaky_slope)
        return h

    def forward(self, chunks: torch.Tensor, update_stats: bool = True) -> torch.Tensor:
        h = self.features(chunks, update_stats).flatten(1)
        for i, fc in enumerate(self.fcs):
            h = fc(h)
            if i < len(self.fcs) - 1:
                h = _leaky_relu(h, self.cfg.leaky_slope)
        if not torch.isfinite(h).all():
            raise FloatingPointError("speech encoder produced non-finite activations")
        return h


class Generator(nn.Module):
    """Speech embedding to an image. There is no noise input; variability comes
    from dropout, which stays active at inference and is driven by a seed."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        chans = [cfg.base_channels // 2 ** i for i in range(cfg.num_upsample)] + [3]
        if chans[-2] < 1:
            raise ValueError("base_channels too small for this many upsampling stages")
        self.stem = nn.ConvTranspose2d(cfg.embedding_dim, chans[0], 4, 1, 0, bias=False)
        self.stem_norm = BatchNorm(chans[0])
        self.ups = nn.ModuleList()
        self.norms = nn.ModuleList()
        for i in range(cfg.num_upsample):
            last = i == cfg.num_upsample - 1
            self.ups.append(nn.ConvTranspose2d(chans[i], chans[i + 1], 4, 2, 1, bias=last))
            if not last:
                self.norms.append(BatchNorm(chans[i + 1]))

    def forward(self, embeddings: torch.Tensor, dropout_seed: int = 0, update_stats: bool = True) -> torch.Tensor:
        if not torch.isfinite(embeddings).all():
            raise ValueError("embeddings contain non-finite values")
        gen = torch.Generator(device=embeddings.device).manual_seed(int(dropout_seed))
        h = _relu(self.stem_norm(self.stem(embeddings[:, :, None, None]), update_stats))
        for i, up in enumerate(self.ups):
            h = up(h)
            if i == len(self.ups) - 1:
                break
            h = _relu(self.norms[i](h, update_stats))
            if i < self.cfg.dropout_blocks:
                h = seeded_dropout(h, self.cfg.dropout_p, gen)
        return torch.tanh(h)


class Discriminator(nn.Module):
    """Spectrally normalized strided convs down to 4x4, then the speech embedding
    is tiled over the 4x4 grid, concatenated along depth, and a final stride-1
    conv produces one raw score per image."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        self.convs = nn.ModuleList()
        ch = 3
        for out in cfg.channel_plan:
            self.convs.append(SNConv2d(ch, out, cfg.kernel, cfg.stride, 1, cfg.power_iterations))
            ch = out
        self.head = SNConv2d(ch + cfg.embedding_dim, 1, cfg.kernel, 1, 0, cfg.power_iterations)

    def trunk(self, images: torch.Tensor, update: bool = True) -> torch.Tensor:
        h = images
        for conv in self.convs:
            h = _leaky_relu(conv(h, update), self.cfg.leaky_slope)
        return h

    def forward(self, images: torch.Tensor, embeddings: torch.Tensor, update: bool = True) -> torch.Tensor:
        if images.shape[0] != embeddings.shape[0]:
            raise ValueError(f"batch mismatch: {images.shape[0]} images vs {embeddings.shape[0]} embeddings")
        size = self.cfg.image_size
        if images.shape[1:] != (3, size, size):
            raise ValueError(f"expected (B, 3, {size}, {size}) images, got {tuple(images.shape)}")
        h = self.trunk(images, update)
        tiled = embeddings[:, :, None, None].expand(-1, -1, h.shape[2], h.shape[3])
        return self.head(torch.cat([h, tiled], dim=1), update).reshape(-1)


class IdentityHead(nn.Linear):
    """Affine map from the speech embedding to identity logits."""

    def __init__(self, embedding_dim: int, num_identities: int):
        if num_identities < 2:
            raise ValueError(f"identity classifier needs at least 2 classes, got {num_identities}")
        super().__init__(embedding_dim, num_identities)


class Wav2Pix(nn.Module):
    def __init__(self, config: ModelConfig, seed: Optional[int] = 0):
        super().__init__()
        e = config.encoder.embedding_dim
        if config.generator.embedding_dim != e or config.discriminator.embedding_dim != e:
            raise ValueError("encoder, generator and discriminator must agree on embedding_dim")
        if config.generator.image_size != config.discriminator.image_size:
            raise ValueError("generator and discriminator disagree on image size")
        self.config = config
        self.encoder = SpeechEncoder(config.encoder)
        self.generator = Generator(config.generator)
        self.discriminator = Discriminator(config.discriminator)
        self.classifier = IdentityHead(e, config.num_identities)
        if seed is not None:
            init_parameters(self, seed)

    def g_parameters(self):
        """Parameters trained by the generator objective: encoder, generator, identity head."""
        for m in (self.encoder, self.generator, self.classifier):
            yield from m.parameters()

    def generate(self, chunks: torch.Tensor, dropout_seed: int = 0) -> torch.Tensor:
        return self.generator(self.encoder(chunks), dropout_seed)


def classifier_forward(head: nn.Module, embeddings: torch.Tensor) -> torch.Tensor:
    return head(embeddings)


def init_parameters(model: nn.Module, seed: int) -> nn.Module:
    """Weights ~ N(0, 0.02^2), biases 0, norm scale 1 / shift 0, unit-norm random SN vectors."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, (nn.Conv1d, nn.ConvTranspose2d, nn.Linear, SNConv2d)):
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen, dtype=m.weight.dtype) * 0.02)
                if m.bias is not None:
                    m.bias.zero_()
            if isinstance(m, SNConv2d):
                m.u.copy_(_l2normalize(torch.randn(m.u.shape, generator=gen, dtype=m.u.dtype)))
                m.v.copy_(_l2normalize(m.weight.reshape(m.weight.shape[0], -1).t() @ m.u))
            elif isinstance(m, BatchNorm):
                m.weight.fill_(1.0)
                m.bias.zero_()
                m.running_mean.zero_()
                m.running_var.fill_(1.0)
    return model


def parameter_set(model: nn.Module) -> dict:
    """Name -> array view of every parameter and state buffer."""
    return {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
