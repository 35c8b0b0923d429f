"""Losses, the composite generator objective, and per-method presets.

Every reduction is a plain mean: L1 terms average absolute differences over all
elements, and least-squares adversarial terms average over the patch score map
and the minibatch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import torch

from .networks import ModelBundle

METHODS = ("gan", "pix2pix", "cyclegan", "ps2gan", "csgan")


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_A: float = 10.0
    lambda_B: float = 10.0
    mu_A: float = 30.0
    mu_B: float = 30.0

    def __post_init__(self):
        for name in ("lambda_A", "lambda_B", "mu_A", "mu_B"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name} must be finite and non-negative, got {v}")


@dataclass(frozen=True)
class ObjectiveSpec:
    method: str
    weights: LossWeights
    extra_weights: Mapping[str, float] = field(default_factory=dict)
    conditional_D: bool = False
    bidirectional: bool = True
    halve_D: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; valid presets: {', '.join(METHODS)}")
        object.__setattr__(self, "extra_weights", dict(self.extra_weights))

    @property
    def uses_cs(self) -> bool:
        return self.method == "csgan"

    @property
    def uses_cycle(self) -> bool:
        return self.method in ("cyclegan", "ps2gan", "csgan")

    def discriminator_in_channels(self, image_channels: int = 3) -> int:
        return 2 * image_channels if self.conditional_D else image_channels

    def with_weights(self, **changes) -> "ObjectiveSpec":
        return replace(self, weights=replace(self.weights, **changes))


@dataclass
class LossBreakdown:
    adv_A: torch.Tensor | float = 0.0
    adv_B: torch.Tensor | float = 0.0
    cyc_A: torch.Tensor | float = 0.0
    cyc_B: torch.Tensor | float = 0.0
    cs_A: torch.Tensor | float = 0.0
    cs_B: torch.Tensor | float = 0.0
    extra: dict = field(default_factory=dict)
    total_G: torch.Tensor | float = 0.0
    total_D: torch.Tensor | float = 0.0

    def as_floats(self) -> dict[str, float]:
        out = {
            k: float(getattr(self, k))
            for k in ("adv_A", "adv_B", "cyc_A", "cyc_B", "cs_A", "cs_B", "total_G", "total_D")
        }
        out.update({k: float(v) for k, v in self.extra.items()})
        return out


def _check_shapes(x: torch.Tensor, y: torch.Tensor) -> None:
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")


def l1_loss(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    _check_shapes(x, y)
    return (x - y).abs().mean()


def cs_loss(syn: torch.Tensor, cyc: torch.Tensor) -> torch.Tensor:
    """Cyclic-synthesized loss: L1 between the synthesized and cycled image of one domain.

    Both arguments must come from the same generator, e.g. ``Syn_A = G_BA(R_B)``
    and ``Cyc_A = G_BA(G_AB(R_A))``.
    """
    return l1_loss(syn, cyc)


def cycle_loss(real: torch.Tensor, cyc: torch.Tensor) -> torch.Tensor:
    return l1_loss(real, cyc)


def lsgan_d_loss(scores_real: torch.Tensor, scores_fake: torch.Tensor) -> torch.Tensor:
    return ((scores_real - 1) ** 2).mean() + (scores_fake**2).mean()


def lsgan_g_loss(scores_fake: torch.Tensor) -> torch.Tensor:
    return ((scores_fake - 1) ** 2).mean()


def _extra_weight_key(term: str) -> str:
    return term[:-2] if term.endswith(("_A", "_B")) else term


def _finite(name: str, value) -> None:
    v = float(value.detach()) if torch.is_tensor(value) else float(value)
    if not math.isfinite(v):
        raise NumericError(f"loss term {name} is not finite ({v})")


def total_objective(
    parts: LossBreakdown,
    w: LossWeights,
    extra_weights: Mapping[str, float] | None = None,
    d_terms: Mapping[str, torch.Tensor | float] | None = None,
) -> LossBreakdown:
    """Weighted generator objective plus the summed discriminator terms.

    ``total_G = adv_A + adv_B + lambda_A cyc_A + lambda_B cyc_B + mu_A cs_A + mu_B cs_B``
    plus ``extra_weights[key] * extra[term]`` for preset-specific terms, where
    ``key`` is the term name with any ``_A``/``_B`` suffix removed.
    """
    extra_weights = extra_weights or {}
    d_terms = d_terms or {}
    for name in ("adv_A", "adv_B", "cyc_A", "cyc_B", "cs_A", "cs_B"):
        _finite(name, getattr(parts, name))
    for name, v in {**parts.extra, **d_terms}.items():
        _finite(name, v)

    total_g = (
        parts.adv_A
        + parts.adv_B
        + w.lambda_A * parts.cyc_A
        + w.lambda_B * parts.cyc_B
        + w.mu_A * parts.cs_A
        + w.mu_B * parts.cs_B
    )
    for term, v in parts.extra.items():
        total_g = total_g + extra_weights.get(_extra_weight_key(term), 0.0) * v
    total_d = sum(d_terms.values(), 0.0)
    extra = dict(parts.extra)
    extra.update(d_terms)
    return replace(parts, extra=extra, total_G=total_g, total_D=total_d)


def make_preset(method: str, **overrides) -> ObjectiveSpec:
    """Loss configuration reproducing one compared method.

    ``overrides`` may carry any ObjectiveSpec field or ``lambda_A``/``lambda_B``/
    ``mu_A``/``mu_B`` to adjust the weights.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; valid presets: {', '.join(METHODS)}")
    zero = LossWeights(0.0, 0.0, 0.0, 0.0)
    if method == "gan":
        spec = ObjectiveSpec("gan", zero, {}, conditional_D=False, bidirectional=False)
    elif method == "pix2pix":
        spec = ObjectiveSpec("pix2pix", zero, {"l1": 100.0}, conditional_D=True, bidirectional=False)
    elif method == "cyclegan":
        spec = ObjectiveSpec("cyclegan", LossWeights(10.0, 10.0, 0.0, 0.0))
    elif method == "ps2gan":
        spec = ObjectiveSpec("ps2gan", LossWeights(10.0, 10.0, 0.0, 0.0), {"syn": 10.0})
    else:
        spec = ObjectiveSpec("csgan", LossWeights(10.0, 10.0, 30.0, 30.0))

    weight_changes = {k: overrides.pop(k) for k in list(overrides) if k in ("lambda_A", "lambda_B", "mu_A", "mu_B")}
    if weight_changes:
        spec = spec.with_weights(**weight_changes)
    if "extra_weights" in overrides:
        overrides["extra_weights"] = {**spec.extra_weights, **overrides["extra_weights"]}
    return replace(spec, **overrides) if overrides else spec


def forward_cycle(bundle: ModelBundle, real_A: torch.Tensor, real_B: torch.Tensor) -> dict[str, torch.Tensor]:
    syn_B = bundle.G_AB(real_A)
    syn_A = bundle.G_BA(real_B)
    return {
        "syn_A": syn_A,
        "syn_B": syn_B,
        "cyc_A": bundle.G_BA(syn_B),
        "cyc_B": bundle.G_AB(syn_A),
    }


def _d_input(spec: ObjectiveSpec, condition: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
    return torch.cat([condition, image], dim=1) if spec.conditional_D else image


def generator_parts(
    bundle: ModelBundle, real_A: torch.Tensor, real_B: torch.Tensor, spec: ObjectiveSpec
) -> tuple[LossBreakdown, dict[str, torch.Tensor]]:
    """Generator-side loss components for ``spec`` and the images they were computed from."""
    if spec.bidirectional:
        images = forward_cycle(bundle, real_A, real_B)
    else:
        images = {"syn_B": bundle.G_AB(real_A)}

    parts = LossBreakdown()
    parts.adv_B = lsgan_g_loss(bundle.D_B(_d_input(spec, real_A, images["syn_B"])))
    if spec.bidirectional:
        parts.adv_A = lsgan_g_loss(bundle.D_A(_d_input(spec, real_B, images["syn_A"])))
    if spec.uses_cycle:
        parts.cyc_A = cycle_loss(real_A, images["cyc_A"])
        parts.cyc_B = cycle_loss(real_B, images["cyc_B"])
    if spec.uses_cs:
        parts.cs_A = cs_loss(images["syn_A"], images["cyc_A"])
        parts.cs_B = cs_loss(images["syn_B"], images["cyc_B"])
    if spec.method == "ps2gan":
        parts.extra["syn_A"] = l1_loss(real_A, images["syn_A"])
        parts.extra["syn_B"] = l1_loss(real_B, images["syn_B"])
    elif spec.method == "pix2pix":
        parts.extra["l1"] = l1_loss(real_B, images["syn_B"])
    return parts, images


def discriminator_terms(
    bundle: ModelBundle,
    real_A: torch.Tensor,
    real_B: torch.Tensor,
    fake_A: torch.Tensor | None,
    fake_B: torch.Tensor,
    spec: ObjectiveSpec,
) -> dict[str, torch.Tensor]:
    """Least-squares discriminator losses on detached fakes, keyed ``d_A``/``d_B``."""
    scale = 0.5 if spec.halve_D else 1.0
    terms = {
        "d_B": scale
        * lsgan_d_loss(
            bundle.D_B(_d_input(spec, real_A, real_B)),
            bundle.D_B(_d_input(spec, real_A, fake_B.detach())),
        )
    }
    if spec.bidirectional and fake_A is not None:
        terms["d_A"] = scale * lsgan_d_loss(
            bundle.D_A(_d_input(spec, real_B, real_A)),
            bundle.D_A(_d_input(spec, real_B, fake_A.detach())),
        )
    return terms
