"""Transformer generator and discriminator for multichannel time series.

Both networks are stacks of pre-norm transformer encoder blocks. The
discriminator is ViT-like: the ``(C, 1, W)`` input is cut into ``W /
patch_len`` patches along time, projected to ``hidden_dim``, prefixed with a
learned classification token and given learned positional embeddings. The
generator maps a latent vector to ``W / patch_len`` tokens, runs the encoder,
unfolds every token back into ``patch_len`` timesteps and mixes the hidden
axis down to ``C`` channels with a 1x1 convolution.

Conditional models (``num_classes > 0``) inject a learned label embedding
according to ``embed_strategy``:

``concat-both``
    label embedding concatenated to the generator latent and to every
    discriminator patch vector.
``add-both``
    label embedding added to the generator latent (needs
    ``label_embed_dim == latent_dim``) and, through a second table of width
    ``C * W``, to the flattened discriminator input.
``concat-channel``
    label embedding projected to one extra feature channel, appended to the
    generator token features and to the discriminator input channels.
``generator-concat-plus-cls-head``
    label embedding concatenated to the generator latent only; the
    discriminator never sees the label and relies on its class head.

Every conditional discriminator carries the class head.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import torch
from einops import rearrange
from torch import nn

from .errors import ConfigError, UsageError

STRATEGIES = ("concat-both", "add-both", "concat-channel", "generator-concat-plus-cls-head")
DEFAULT_STRATEGY = "generator-concat-plus-cls-head"
_UNIFORM_SCALE = 12 ** 0.5


@dataclass
class ModelSpec:
    channels: int
    seq_len: int
    patch_len: int
    latent_dim: int = 100
    hidden_dim: int = 50
    depth: int = 3
    heads: int = 5
    num_classes: int = 0
    label_embed_dim: int = 10
    dropout: float = 0.0
    embed_strategy: str = DEFAULT_STRATEGY

    def __post_init__(self):
        self.validate()

    @property
    def conditional(self) -> bool:
        return self.num_classes > 0

    @property
    def n_patches(self) -> int:
        return self.seq_len // self.patch_len

    def validate(self) -> None:
        for name in ("channels", "seq_len", "patch_len", "latent_dim", "hidden_dim", "depth", "heads", "label_embed_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.num_classes < 0:
            raise ConfigError("num_classes must be >= 0")
        if self.seq_len % self.patch_len:
            raise ConfigError(f"patch_len={self.patch_len} does not divide seq_len={self.seq_len}")
        if self.hidden_dim % self.heads:
            raise ConfigError(f"heads={self.heads} does not divide hidden_dim={self.hidden_dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.embed_strategy not in STRATEGIES:
            raise ConfigError(f"unknown embed_strategy {self.embed_strategy!r}; choose from {STRATEGIES}")
        if self.conditional and self.embed_strategy == "add-both" and self.label_embed_dim != self.latent_dim:
            raise ConfigError(
                f"add-both needs label_embed_dim == latent_dim, got {self.label_embed_dim} != {self.latent_dim}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


@dataclass
class LatentBatch:
    z: torch.Tensor
    target_labels: Optional[torch.Tensor] = None


@dataclass
class DiscriminatorOutput:
    adv: torch.Tensor
    class_logits: Optional[torch.Tensor] = None


def sample_latent(
    batch_size: int,
    spec: ModelSpec,
    generator: Optional[torch.Generator] = None,
    labels=None,
) -> LatentBatch:
    """Uniform ``(0, 1)`` latent vectors; conditional specs get uniform random
    target labels unless ``labels`` is given."""
    z = torch.rand(batch_size, spec.latent_dim, generator=generator)
    z = z.clamp_min(torch.finfo(z.dtype).tiny)
    target = None
    if spec.conditional:
        if labels is None:
            target = torch.randint(spec.num_classes, (batch_size,), generator=generator)
        else:
            target = torch.as_tensor(labels, dtype=torch.long)
    return LatentBatch(z, target)


def init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Linear, nn.Conv2d)):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Embedding):
        # unit scale so the label is not drowned by the latent at the start
        nn.init.normal_(module.weight)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.attn_drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q, k, v = rearrange(self.qkv(x), "b n (three h d) -> three b h n d", three=3, h=self.heads)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = self.attn_drop(attn.softmax(dim=-1))
        out = rearrange(attn @ v, "b h n d -> b n (h d)")
        return self.proj(out)


class EncoderBlock(nn.Module):
    """Pre-norm self-attention and GELU feed-forward, each residual, dropout after each."""

    def __init__(self, dim: int, heads: int, dropout: float = 0.0, expansion: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * expansion),
            nn.GELU(),
            nn.Linear(dim * expansion, dim),
        )
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.drop(self.attn(self.norm1(x)))
        x = x + self.drop(self.mlp(self.norm2(x)))
        return x


class PatchEmbedding(nn.Module):
    """Split ``(B, C, 1, W)`` along time, project each ``C * patch_len`` patch,
    optionally prepend a classification token, add positional embeddings."""

    def __init__(self, in_channels: int, seq_len: int, patch_len: int, dim: int,
                 cls_token: bool = True, extra_features: int = 0):
        super().__init__()
        if seq_len % patch_len:
            raise ConfigError(f"patch_len={patch_len} does not divide seq_len={seq_len}")
        self.patch_len = patch_len
        self.n_patches = seq_len // patch_len
        self.proj = nn.Linear(in_channels * patch_len + extra_features, dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim)) if cls_token else None
        self.pos = nn.Parameter(torch.zeros(1, self.n_patches + int(cls_token), dim))
        nn.init.trunc_normal_(self.pos, std=0.02)
        if cls_token:
            nn.init.trunc_normal_(self.cls_token, std=0.02)

    @property
    def n_tokens(self) -> int:
        return self.pos.shape[1]

    def forward(self, x: torch.Tensor, extra: Optional[torch.Tensor] = None) -> torch.Tensor:
        patches = rearrange(x, "b c 1 (n p) -> b n (p c)", p=self.patch_len)
        if extra is not None:
            patches = torch.cat([patches, extra[:, None, :].expand(-1, patches.shape[1], -1)], dim=-1)
        tokens = self.proj(patches)
        if self.cls_token is not None:
            tokens = torch.cat([self.cls_token.expand(x.shape[0], -1, -1), tokens], dim=1)
        return tokens + self.pos


class Generator(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        m, t = spec.hidden_dim, spec.n_patches
        strategy = spec.embed_strategy if spec.conditional else None
        self.strategy = strategy
        in_dim = spec.latent_dim
        if strategy is not None:
            self.label_embed = nn.Embedding(spec.num_classes, spec.label_embed_dim)
            if strategy in ("concat-both", "generator-concat-plus-cls-head"):
                in_dim += spec.label_embed_dim
            elif strategy == "concat-channel":
                self.label_channel = nn.Linear(spec.label_embed_dim, t)
                self.merge = nn.Linear(m + 1, m)
        self.to_tokens = nn.Linear(in_dim, t * m)
        self.pos = nn.Parameter(torch.zeros(1, t, m))
        self.blocks = nn.Sequential(*[EncoderBlock(m, spec.heads, spec.dropout) for _ in range(spec.depth)])
        self.unpatch = nn.Linear(m, m * spec.patch_len)
        self.to_channels = nn.Conv2d(m, spec.channels, kernel_size=1)
        self.apply(init_weights)
        nn.init.trunc_normal_(self.pos, std=0.02)

    def embed_label(self, labels: torch.Tensor) -> torch.Tensor:
        return self.label_embed(_check_labels(labels, self.spec.num_classes))

    def forward(self, z: torch.Tensor, labels: Optional[torch.Tensor] = None) -> torch.Tensor:
        spec = self.spec
        if z.ndim != 2 or z.shape[1] != spec.latent_dim:
            raise UsageError(f"latent must have shape (B, {spec.latent_dim}), got {tuple(z.shape)}")
        # U(0, 1) entries standardized to zero mean and unit variance; the
        # raw mean otherwise dominates the tokens and the output ignores z
        z = (z - 0.5) * _UNIFORM_SCALE
        emb = None
        if self.strategy is not None:
            if labels is None:
                raise UsageError("conditional generator needs target labels")
            emb = self.embed_label(labels).to(z.dtype)
            if self.strategy in ("concat-both", "generator-concat-plus-cls-head"):
                z = torch.cat([z, emb], dim=1)
            elif self.strategy == "add-both":
                z = z + emb
        h = self.to_tokens(z).view(z.shape[0], spec.n_patches, spec.hidden_dim)
        if self.strategy == "concat-channel":
            h = self.merge(torch.cat([h, self.label_channel(emb)[..., None]], dim=-1))
        h = self.blocks(h + self.pos)
        h = self.unpatch(h)
        h = rearrange(h, "b n (p m) -> b m 1 (n p)", p=spec.patch_len)
        return self.to_channels(h)

    def generate(self, batch: LatentBatch) -> torch.Tensor:
        return self(batch.z, batch.target_labels)


class Discriminator(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        strategy = spec.embed_strategy if spec.conditional else None
        self.strategy = strategy
        in_channels, extra = spec.channels, 0
        if strategy == "concat-both":
            self.label_embed = nn.Embedding(spec.num_classes, spec.label_embed_dim)
            extra = spec.label_embed_dim
        elif strategy == "add-both":
            self.label_embed = nn.Embedding(spec.num_classes, spec.channels * spec.seq_len)
        elif strategy == "concat-channel":
            self.label_embed = nn.Embedding(spec.num_classes, spec.label_embed_dim)
            self.label_channel = nn.Linear(spec.label_embed_dim, spec.seq_len)
            in_channels += 1
        self.patch_embed = PatchEmbedding(in_channels, spec.seq_len, spec.patch_len, spec.hidden_dim,
                                          cls_token=True, extra_features=extra)
        self.blocks = nn.Sequential(*[EncoderBlock(spec.hidden_dim, spec.heads, spec.dropout)
                                      for _ in range(spec.depth)])
        self.norm = nn.LayerNorm(spec.hidden_dim)
        self.adv_head = nn.Linear(spec.hidden_dim, 1)
        self.cls_head = nn.Linear(spec.hidden_dim, spec.num_classes) if spec.conditional else None
        self.apply(init_weights)
        nn.init.trunc_normal_(self.patch_embed.pos, std=0.02)
        nn.init.trunc_normal_(self.patch_embed.cls_token, std=0.02)

    @property
    def uses_labels(self) -> bool:
        return self.strategy in ("concat-both", "add-both", "concat-channel")

    def embed_label(self, labels: torch.Tensor) -> Optional[torch.Tensor]:
        """Label embedding injected on the discriminator path; ``None`` when the
        strategy leaves the discriminator input untouched."""
        if not self.uses_labels:
            return None
        return self.label_embed(_check_labels(labels, self.spec.num_classes))

    def inject(self, x: torch.Tensor, labels: Optional[torch.Tensor]):
        """Apply the label strategy to the input; returns ``(x, extra_patch_features)``."""
        if not self.uses_labels:
            return x, None
        if labels is None:
            raise UsageError(f"discriminator with strategy {self.strategy!r} needs labels")
        emb = self.embed_label(labels).to(x.dtype)
        if self.strategy == "concat-both":
            return x, emb
        if self.strategy == "add-both":
            return x + emb.view_as(x), None
        channel = self.label_channel(emb)[:, None, None, :]
        return torch.cat([x, channel], dim=1), None

    def tokens(self, x: torch.Tensor, labels: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Embedded input sequence ``(B, W / patch_len + 1, hidden_dim)``."""
        spec = self.spec
        if x.ndim != 4 or tuple(x.shape[1:]) != (spec.channels, 1, spec.seq_len):
            raise UsageError(
                f"discriminator expects (B, {spec.channels}, 1, {spec.seq_len}), got {tuple(x.shape)}"
            )
        x, extra = self.inject(x, labels)
        return self.patch_embed(x, extra)

    def forward(self, x: torch.Tensor, labels: Optional[torch.Tensor] = None) -> DiscriminatorOutput:
        h = self.norm(self.blocks(self.tokens(x, labels)))
        cls = h[:, 0]
        adv = self.adv_head(cls).squeeze(-1)
        logits = self.cls_head(cls) if self.cls_head is not None else None
        return DiscriminatorOutput(adv, logits)


def _check_labels(labels, k: int) -> torch.Tensor:
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.numel() and (labels.min() < 0 or labels.max() >= k):
        raise UsageError(f"label out of range [0, {k})")
    return labels


def embed_patches(x: torch.Tensor, d: Discriminator, labels=None) -> torch.Tensor:
    return d.tokens(x, labels)


def build_models(spec: ModelSpec, seed: Optional[int] = None) -> tuple[Generator, Discriminator]:
    if seed is not None:
        torch.manual_seed(seed)
    return Generator(spec), Discriminator(spec)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def critic(d: Discriminator, labels: Optional[torch.Tensor] = None):
    """The adversarial head of ``d`` as a plain ``x -> (B,)`` callable."""
    return lambda x: d(x, labels).adv


def expected_tokens(spec: ModelSpec, discriminator_path: bool = True) -> int:
    return spec.n_patches + int(discriminator_path)

