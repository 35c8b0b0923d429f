"""Residual generator and PatchGAN discriminator."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 3
    out_channels: int = 3
    base_width: int = 64
    n_residual_blocks: int = 9
    norm: str = "instance"
    image_size: int = 256

    def __post_init__(self):
        if self.n_residual_blocks < 1:
            raise ConfigError("n_residual_blocks must be >= 1")
        if self.base_width < 1:
            raise ConfigError("base_width must be >= 1")
        if self.norm != "instance":
            raise ConfigError(f"unsupported norm {self.norm!r}; only 'instance' is available")
        if self.image_size % 4:
            raise ConfigError(
                f"image_size {self.image_size} is not divisible by 4; "
                "the two stride-2 stages cannot be inverted exactly"
            )


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 3
    widths: tuple[int, ...] = (64, 128, 256, 512)
    kernel: int = 4
    leaky_slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(self.widths))
        if not self.widths:
            raise ConfigError("widths must not be empty")
        if any(b <= a for a, b in zip(self.widths, self.widths[1:])):
            raise ConfigError("discriminator widths must be strictly increasing")
        if not 0 < self.leaky_slope < 1:
            raise ConfigError("leaky_slope must lie in (0, 1)")

    @property
    def layers(self) -> list[tuple[int, int, int]]:
        """(kernel, stride, padding) for every convolution, input to output."""
        k = self.kernel
        strides = [2] * (len(self.widths) - 1) + [1, 1]
        return [(k, s, 1) for s in strides]


class ResidualBlock(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, kernel_size=3),
            nn.InstanceNorm2d(dim),
            nn.ReLU(True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, kernel_size=3),
            nn.InstanceNorm2d(dim),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """Encoder, residual trunk, decoder; preserves spatial size for sides divisible by 4."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(cfg.in_channels, w, kernel_size=7),
            nn.InstanceNorm2d(w),
            nn.ReLU(True),
            nn.Conv2d(w, 2 * w, kernel_size=3, stride=2, padding=1),
            nn.InstanceNorm2d(2 * w),
            nn.ReLU(True),
            nn.Conv2d(2 * w, 4 * w, kernel_size=3, stride=2, padding=1),
            nn.InstanceNorm2d(4 * w),
            nn.ReLU(True),
        ]
        layers += [ResidualBlock(4 * w) for _ in range(cfg.n_residual_blocks)]
        layers += [
            # output_padding=1 turns 2n-1 into 2n so upsampling inverts downsampling
            nn.ConvTranspose2d(4 * w, 2 * w, 3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(2 * w),
            nn.ReLU(True),
            nn.ConvTranspose2d(2 * w, w, 3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(w),
            nn.ReLU(True),
            nn.ReflectionPad2d(3),
            nn.Conv2d(w, cfg.out_channels, kernel_size=7),
            nn.Tanh(),
        ]
        self.model = nn.Sequential(*layers)

    @property
    def encoder(self) -> nn.Sequential:
        return self.model[:10]

    @property
    def residual_blocks(self) -> list[ResidualBlock]:
        return [m for m in self.model if isinstance(m, ResidualBlock)]

    def forward(self, x):
        return self.model(x)


class Discriminator(nn.Module):
    """PatchGAN: emits a raw 1-channel score map, one score per receptive-field patch."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        k, slope = cfg.kernel, cfg.leaky_slope
        layers: list[nn.Module] = []
        in_ch = cfg.in_channels
        for i, width in enumerate(cfg.widths):
            stride = 1 if i == len(cfg.widths) - 1 else 2
            layers.append(nn.Conv2d(in_ch, width, kernel_size=k, stride=stride, padding=1))
            if i > 0:
                layers.append(nn.InstanceNorm2d(width))
            layers.append(nn.LeakyReLU(slope, True))
            in_ch = width
        layers.append(nn.Conv2d(in_ch, 1, kernel_size=k, stride=1, padding=1))
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        side = min(x.shape[-2:])
        if score_map_size(self.cfg, side) < 1:
            raise ValueError(f"discriminator input side {side} yields an empty score map")
        rf = receptive_field(self.cfg)
        if side < rf and not getattr(self, "_warned", False):
            warnings.warn(
                f"discriminator input side {side} is smaller than its {rf}px receptive field",
                stacklevel=2,
            )
            self._warned = True
        return self.model(x)


@dataclass
class ModelBundle:
    G_AB: Generator
    G_BA: Generator
    D_A: Discriminator
    D_B: Discriminator

    def __post_init__(self):
        if self.G_AB.cfg != self.G_BA.cfg:
            raise ConfigError("the two generators must share one config")
        if self.D_A.cfg != self.D_B.cfg:
            raise ConfigError("the two discriminators must share one config")

    def items(self):
        return [("G_AB", self.G_AB), ("G_BA", self.G_BA), ("D_A", self.D_A), ("D_B", self.D_B)]

    def generator_parameters(self):
        return [*self.G_AB.parameters(), *self.G_BA.parameters()]

    def discriminator_parameters(self):
        return [*self.D_A.parameters(), *self.D_B.parameters()]

    def to(self, *args, **kwargs) -> "ModelBundle":
        for _, net in self.items():
            net.to(*args, **kwargs)
        return self

    def train(self, mode: bool = True) -> "ModelBundle":
        for _, net in self.items():
            net.train(mode)
        return self

    def eval(self) -> "ModelBundle":
        return self.train(False)

    def state_dict(self) -> dict:
        return {name: net.state_dict() for name, net in self.items()}

    def load_state_dict(self, state: dict) -> None:
        for name, net in self.items():
            net.load_state_dict(state[name])

    def describe(self) -> dict:
        return {"generator": asdict(self.G_AB.cfg), "discriminator": asdict(self.D_A.cfg)}


def build_generator(cfg: GeneratorConfig) -> Generator:
    return Generator(cfg)


def build_discriminator(cfg: DiscriminatorConfig) -> Discriminator:
    return Discriminator(cfg)


def build_bundle(
    g_cfg: GeneratorConfig,
    d_cfg: DiscriminatorConfig,
    seed: int | None = None,
    init_mean: float = 0.0,
    init_std: float = 0.02,
) -> ModelBundle:
    bundle = ModelBundle(
        build_generator(g_cfg),
        build_generator(g_cfg),
        build_discriminator(d_cfg),
        build_discriminator(d_cfg),
    )
    gen = torch.Generator().manual_seed(seed) if seed is not None else None
    for _, net in bundle.items():
        init_weights(net, init_mean, init_std, generator=gen)
    return bundle


def receptive_field(cfg: DiscriminatorConfig) -> int:
    rf = 1
    for k, s, _ in reversed(cfg.layers):
        rf = (rf - 1) * s + k
    return rf


def score_map_size(cfg: DiscriminatorConfig, side: int) -> int:
    for k, s, p in cfg.layers:
        side = (side + 2 * p - k) // s + 1
    return side


@torch.no_grad()
def init_weights(
    net: nn.Module,
    mean: float = 0.0,
    std: float = 0.02,
    seed: int | None = None,
    generator: torch.Generator | None = None,
) -> nn.Module:
    """Redraw conv kernels from N(mean, std), zero conv biases, reset norm affines to (1, 0)."""
    if std <= 0:
        raise ValueError("std must be positive")
    if generator is None and seed is not None:
        generator = torch.Generator().manual_seed(seed)
    for m in net.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            m.weight.normal_(mean, std, generator=generator)
            if m.bias is not None:
                m.bias.zero_()
        elif isinstance(m, (nn.InstanceNorm2d, nn.BatchNorm2d)) and m.affine:
            m.weight.fill_(1.0)
            m.bias.zero_()
    return net


def conv_weights(net: nn.Module) -> torch.Tensor:
    return torch.cat(
        [m.weight.detach().flatten() for m in net.modules() if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d))]
    )
