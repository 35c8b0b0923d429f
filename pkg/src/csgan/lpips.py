"""Learned perceptual distance over a pluggable deep-feature backend.

A provider is any object with

- ``features(x) -> list[Tensor]``: per-layer activations (N, C_l, H_l, W_l) for
  inputs in [-1, 1];
- ``weights -> list[Tensor]``: one non-negative vector of length C_l per layer.

The distance unit-normalizes every feature vector along channels, takes the
channel-weighted squared difference, averages spatially, and sums over layers.
"""

from __future__ import annotations

import re
from typing import Protocol, Sequence

import torch
import torch.nn as nn


class FeatureProvider(Protocol):
    weights: Sequence[torch.Tensor]

    def features(self, x: torch.Tensor) -> list[torch.Tensor]: ...


def _unit_normalize(f: torch.Tensor, eps: float = 1e-10) -> torch.Tensor:
    norm = torch.sqrt((f * f).sum(dim=1, keepdim=True))
    return f / (norm + eps)


@torch.no_grad()
def perceptual_distance(a: torch.Tensor, b: torch.Tensor, provider: FeatureProvider | None) -> float | None:
    """LPIPS-style distance between two images in model range; None without a provider."""
    if provider is None:
        return None
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() == 3:
        a, b = a[None], b[None]
    total = 0.0
    for fa, fb, w in zip(provider.features(a), provider.features(b), provider.weights):
        diff = (_unit_normalize(fa) - _unit_normalize(fb)) ** 2
        total = total + (diff * w.view(1, -1, 1, 1)).sum(dim=1).mean(dim=(1, 2))
    return float(total.mean())


class _ScalingLayer(nn.Module):
    # ImageNet statistics mapped into [-1, 1] input space
    def __init__(self):
        super().__init__()
        self.register_buffer("shift", torch.tensor([-0.030, -0.088, -0.188]).view(1, 3, 1, 1))
        self.register_buffer("scale", torch.tensor([0.458, 0.448, 0.450]).view(1, 3, 1, 1))

    def forward(self, x):
        return (x - self.shift) / self.scale


_TAPS = {
    # indices of the ReLU outputs tapped in torchvision's ``features`` stacks
    "alexnet": (1, 4, 7, 9, 11),
    "vgg16": (3, 8, 15, 22, 29),
}


class TorchvisionProvider:
    """Backbone from torchvision plus per-layer linear weights.

    ``lin_weights`` is a state dict in the common LPIPS layout
    (``lin{i}.model.1.weight`` with shape (1, C, 1, 1)).
    """

    def __init__(self, backbone: str, lin_weights: dict, backbone_weights: str | None = None):
        import torchvision

        if backbone not in _TAPS:
            raise ValueError(f"unsupported LPIPS backbone {backbone!r}; choose from {', '.join(_TAPS)}")
        net = getattr(torchvision.models, backbone)(weights=None).features
        if backbone_weights:
            state = torch.load(backbone_weights, map_location="cpu")
            state = {k.removeprefix("features."): v for k, v in state.items() if not k.startswith("classifier")}
            net.load_state_dict(state)
        self.net = net.eval()
        self.scaling = _ScalingLayer()
        self.taps = _TAPS[backbone]
        keys = sorted((k for k in lin_weights if re.fullmatch(r"lin\d+\.model\.1\.weight", k)), key=lambda k: int(k[3:].split(".")[0]))
        if len(keys) != len(self.taps):
            raise ValueError(f"expected {len(self.taps)} linear layers in LPIPS weights, found {len(keys)}")
        self.weights = [lin_weights[k].flatten().float() for k in keys]

    @torch.no_grad()
    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        h = self.scaling(x.float())
        out = []
        for i, layer in enumerate(self.net):
            h = layer(h)
            if i in self.taps:
                out.append(h)
            if i >= self.taps[-1]:
                break
        return out


def load_provider(weights_path: str | None, backbone: str = "alexnet", backbone_weights: str | None = None):
    """Build a provider from an LPIPS linear-weights file; None when no path is configured."""
    if not weights_path:
        return None
    lin = torch.load(weights_path, map_location="cpu")
    return TorchvisionProvider(backbone, lin, backbone_weights)
