"""Shared encoder, per-domain decoders, patch discriminators.

The encoder is a CycleGAN-style resnet trunk (7x7 conv, two stride-2 3x3
convs, residual blocks) ending in a fully-connected bottleneck that is cut
into attribute slots and a rest code.  Decoders mirror it and upsample
bilinearly.  Images are (batch, 1, size, size) tensors in [-1, 1].
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator, List, Optional, Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import ConfigError, DomainError, ShapeError

DOMAINS = ("A", "B")


@dataclass
class NetworkConfig:
    image_size: int = 32
    base_channels: int = 8
    num_residual_blocks: int = 6
    bottleneck_total: int = 128
    attr_dim_k: int = 32
    num_attr_slots: int = 1
    shared_encoder: bool = True
    shared_decoder: bool = False
    discriminator_layers: int = 4
    discriminator_channels: int = 16
    instance_norm: bool = True
    init_std: float = 0.02

    def __post_init__(self):
        if self.num_attr_slots * self.attr_dim_k >= self.bottleneck_total:
            raise ConfigError("attribute slots must leave room for the rest code")
        if self.attr_dim_k < 1 or self.num_attr_slots < 1:
            raise ConfigError("attr_dim_k and num_attr_slots must be >= 1")
        if self.num_residual_blocks < 1:
            raise ConfigError("num_residual_blocks must be >= 1")
        if self.image_size % 4:
            raise ConfigError("image_size must be divisible by 4")
        if self.image_size % (2 ** self.discriminator_layers):
            raise ConfigError("discriminator_layers too deep for image_size")

    @property
    def rest_dim(self) -> int:
        return self.bottleneck_total - self.num_attr_slots * self.attr_dim_k

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Embedding:
    attr: List[torch.Tensor]  # one (batch, k) tensor per attribute slot
    rest: torch.Tensor  # (batch, d_rest)

    def flat(self) -> torch.Tensor:
        return torch.cat([*self.attr, self.rest], dim=1)

    def detach(self) -> "Embedding":
        return Embedding([a.detach() for a in self.attr], self.rest.detach())

    @property
    def width(self) -> int:
        return sum(a.shape[1] for a in self.attr) + self.rest.shape[1]


def mix(ex: Embedding, ey: Embedding, slots: Optional[Sequence[int]] = None) -> Embedding:
    """Attribute slots from ``ex`` (all, or only ``slots``), everything else from ``ey``."""
    if slots is None:
        return Embedding(list(ex.attr), ey.rest)
    attr = [ex.attr[i] if i in slots else ey.attr[i] for i in range(len(ey.attr))]
    return Embedding(attr, ey.rest)


class ResidualBlock(nn.Module):
    def __init__(self, ch: int, norm: bool):
        super().__init__()
        layers = []
        for i in range(2):
            layers += [nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3)]
            if norm:
                layers.append(nn.InstanceNorm2d(ch))
            if i == 0:
                layers.append(nn.ReLU())
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return F.relu(x + self.body(x))


class Trunk(nn.Module):
    """Image -> flat code of ``out_dim``."""

    def __init__(self, cfg: NetworkConfig, out_dim: int):
        super().__init__()
        c = cfg.base_channels
        blocks = [ResidualBlock(4 * c, cfg.instance_norm) for _ in range(cfg.num_residual_blocks)]
        self.features = nn.Sequential(
            nn.ReflectionPad2d(3), nn.Conv2d(1, c, 7), nn.ReLU(),
            nn.Conv2d(c, 2 * c, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(2 * c, 4 * c, 3, stride=2, padding=1), nn.ReLU(),
            *blocks,
        )
        self.fc = nn.Linear(4 * c * (cfg.image_size // 4) ** 2, out_dim)

    def forward(self, x):
        return self.fc(self.features(x).flatten(1))


class Decoder(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        c = cfg.base_channels
        self.side = cfg.image_size // 4
        self.ch = 4 * c
        self.fc = nn.Linear(cfg.bottleneck_total, self.ch * self.side ** 2)
        self.blocks = nn.Sequential(
            *[ResidualBlock(4 * c, cfg.instance_norm) for _ in range(cfg.num_residual_blocks)])
        self.up = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False),
            nn.Conv2d(4 * c, 2 * c, 3, padding=1), nn.ReLU(),
            nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False),
            nn.Conv2d(2 * c, 1, 3, padding=1),
        )

    def forward(self, z):
        h = F.relu(self.fc(z)).view(-1, self.ch, self.side, self.side)
        return torch.tanh(self.up(self.blocks(h)))


class Discriminator(nn.Module):
    """Stride-2 conv stack ending in a raw (un-squashed) patch score map."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        layers: List[nn.Module] = []
        cin, cout = 1, cfg.discriminator_channels
        for i in range(cfg.discriminator_layers):
            layers.append(nn.Conv2d(cin, cout, 4, stride=2, padding=1))
            if i > 0 and cfg.instance_norm:
                layers.append(nn.InstanceNorm2d(cout))
            layers.append(nn.LeakyReLU(0.2))
            cin, cout = cout, min(2 * cout, 8 * cfg.discriminator_channels)
        layers.append(nn.Conv2d(cin, 1, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


def init_weights(module: nn.Module, std: float) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, std)
            nn.init.zeros_(m.bias)


class PuppetNets(nn.Module):
    """All networks of the model.

    ``split=False`` turns the model into the CycleGAN-style baseline: the
    combination operator then decodes the whole code of its first argument.
    """

    def __init__(self, cfg: NetworkConfig, split: bool = True):
        super().__init__()
        self.cfg = cfg
        self.split = split
        attr_total = cfg.num_attr_slots * cfg.attr_dim_k
        if cfg.shared_encoder:
            self.encoder = Trunk(cfg, cfg.bottleneck_total)
        else:
            self.encoder_attr = Trunk(cfg, attr_total)
            self.encoder_rest = Trunk(cfg, cfg.rest_dim)
        self.decoder_a = Decoder(cfg)
        self.decoder_b = self.decoder_a if cfg.shared_decoder else Decoder(cfg)
        self.disc_a = Discriminator(cfg)
        self.disc_b = Discriminator(cfg)
        init_weights(self, cfg.init_std)

    # -- parameter partition
    def generator_parameters(self) -> Iterator[nn.Parameter]:
        for name, p in self.named_parameters():
            if not name.startswith("disc_"):
                yield p

    def discriminator_parameters(self) -> Iterator[nn.Parameter]:
        for name, p in self.named_parameters():
            if name.startswith("disc_"):
                yield p

    def _check(self, x: torch.Tensor) -> torch.Tensor:
        s = self.cfg.image_size
        if x.dim() == 3:
            x = x.unsqueeze(1)
        if x.dim() != 4 or tuple(x.shape[1:]) != (1, s, s):
            raise ShapeError(f"expected images of shape (batch, 1, {s}, {s}), got {tuple(x.shape)}")
        return x

    def encode(self, x: torch.Tensor) -> Embedding:
        x = self._check(x)
        k, n = self.cfg.attr_dim_k, self.cfg.num_attr_slots
        if self.cfg.shared_encoder:
            z = self.encoder(x)
            attr, rest = z[:, : n * k], z[:, n * k:]
        else:
            attr, rest = self.encoder_attr(x), self.encoder_rest(x)
        return Embedding(list(attr.split(k, dim=1)), rest)

    def decode(self, domain: str, e: Embedding) -> torch.Tensor:
        if domain not in DOMAINS:
            raise DomainError(f"unknown domain {domain!r}")
        z = e.flat()
        if z.shape[1] != self.cfg.bottleneck_total:
            raise ShapeError(f"embedding width {z.shape[1]} != {self.cfg.bottleneck_total}")
        return (self.decoder_a if domain == "A" else self.decoder_b)(z)

    def combine(self, domain: str, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        """Decode into ``domain`` the attribute code of x with the rest code of y."""
        return combine_codes(self, domain, self.encode(x), self.encode(y))

    def discriminate(self, domain: str, x: torch.Tensor) -> torch.Tensor:
        if domain not in DOMAINS:
            raise DomainError(f"unknown domain {domain!r}")
        x = self._check(x)
        return (self.disc_a if domain == "A" else self.disc_b)(x)

    def score_shape(self) -> tuple:
        side = self.cfg.image_size // 2 ** self.cfg.discriminator_layers
        return (1, side, side)


def combine_codes(nets, domain: str, ex: Embedding, ey: Embedding,
                  slots: Optional[Sequence[int]] = None) -> torch.Tensor:
    """The combination operator on precomputed codes.

    Works with any object exposing ``decode``; baseline nets (``split``
    false) ignore ``ey`` entirely.
    """
    if getattr(nets, "split", True):
        return nets.decode(domain, mix(ex, ey, slots))
    return nets.decode(domain, ex)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def as_images(x, dtype=torch.float32) -> torch.Tensor:
    """numpy stack / GlyphImage list / tensor -> (batch, 1, H, W) tensor."""
    if isinstance(x, torch.Tensor):
        t = x
    elif isinstance(x, (list, tuple)) and x and hasattr(x[0], "pixels"):
        t = torch.from_numpy(np.stack([g.pixels for g in x]))
    elif hasattr(x, "pixels"):
        t = torch.from_numpy(np.asarray(x.pixels))
    else:
        t = torch.from_numpy(np.asarray(x))
    t = t.to(dtype)
    while t.dim() < 4:
        t = t.unsqueeze(0) if t.dim() == 2 else t.unsqueeze(1)
    return t


TINY = NetworkConfig(image_size=8, base_channels=1, num_residual_blocks=1,
                     bottleneck_total=6, attr_dim_k=2, discriminator_layers=2,
                     discriminator_channels=2)
