"""Training objectives.

Reconstruction and least-squares adversarial terms for both translation
streams, plus the object-centered diversity penalty: the ratio of style
code distance to masked image distance, which punishes the generator for
producing near-identical outputs from different styles of the component
of interest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import Tensor

from .exceptions import NumericError, ShapeMismatchError, ValidationError
from .networks import StyleCodes

#: Added to the image distance in the diversity penalty denominator;
#: mode-collapsed outputs would otherwise divide by zero.
EPS_DIV = 1e-6
#: Ceiling for the diversity penalty.
OCDP_CLAMP_MAX = 1e3


@dataclass
class LossWeights:
    w_image_recon: float = 10.0
    w_content_recon: float = 1.0
    w_style_recon: float = 1.0
    w_adv: float = 1.0
    w_ocdp: float = 1.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValidationError(f"{name} must be nonnegative, got {value}")


@dataclass
class LossReport:
    """Flat record of per-term loss values plus the weighted total."""

    role: str
    terms: dict[str, float] = field(default_factory=dict)
    total: float = 0.0

    def as_record(self) -> dict[str, float]:
        rec = {f"{self.role}/{k}": v for k, v in self.terms.items()}
        rec[f"{self.role}/total"] = self.total
        return rec


def image_recon_loss(recon: Tensor, original: Tensor) -> Tensor:
    """Mean absolute error over all pixels and channels."""
    if recon.shape != original.shape:
        raise ShapeMismatchError(
            f"reconstruction shape {tuple(recon.shape)} != original {tuple(original.shape)}"
        )
    return (recon - original).abs().mean()


def latent_recon_loss(content_rt: Tensor, content: Tensor,
                      styles_rt: StyleCodes, styles_sampled: StyleCodes,
                      mask: Tensor) -> tuple[Tensor, Tensor]:
    """Content and style code reconstruction terms.

    The style term averages over components present in ``mask``; absent
    components are skipped, not counted as zero error.
    """
    if content_rt.shape != content.shape:
        raise ShapeMismatchError(
            f"content shapes differ: {tuple(content_rt.shape)} vs {tuple(content.shape)}"
        )
    if styles_rt.codes.shape != styles_sampled.codes.shape:
        raise ShapeMismatchError("style code sets have different shapes")
    content_term = (content_rt - content).abs().mean()

    present = (mask.sum(dim=(2, 3)) > 0).to(content.dtype)
    per_comp = (styles_rt.codes - styles_sampled.codes).abs().mean(dim=-1)
    n_present = present.sum().clamp(min=1.0)
    style_term = (per_comp * present).sum() / n_present
    return content_term, style_term


def adversarial_losses(logit_maps: list[Tensor], role: str, target_real: bool = True) -> Tensor:
    """Least-squares GAN objective, averaged across scales and patches.

    The discriminator pushes real logits to 1 and fake logits to 0; the
    generator pushes fake logits to 1.
    """
    if not logit_maps:
        raise ValidationError("no logit maps given")
    if role not in ("generator", "discriminator"):
        raise ValidationError(f"unknown role {role!r}")
    target = 1.0 if (role == "generator" or target_real) else 0.0
    terms = [(logits - target).pow(2).mean() for logits in logit_maps]
    return torch.stack(terms).mean()


def ocdp_loss(out1: Tensor, out2: Tensor, mask_component: Tensor,
              s1: StyleCodes, s2: StyleCodes, component: int = 0,
              eps_div: float = EPS_DIV, clamp_max: float = OCDP_CLAMP_MAX) -> Tensor | None:
    """Object-centered diversity penalty.

    ``d_S / (d_I + eps_div)``, where ``d_I`` is the mean absolute image
    difference over the component's pixels and ``d_S`` the mean absolute
    distance between the two style codes of that component.  Returns
    ``None`` when the component mask is empty (absent, not zero).
    """
    if out1.shape != out2.shape:
        raise ShapeMismatchError("outputs must have identical shapes")
    if mask_component.dim() == 3:
        mask_component = mask_component.unsqueeze(1)
    if mask_component.shape[2:] != out1.shape[2:]:
        raise ShapeMismatchError("component mask resolution does not match outputs")
    m = mask_component.to(out1.dtype)
    count = m.sum()
    if count == 0:
        return None
    d_i = ((out1 - out2).abs() * m).sum() / (count * out1.shape[1])
    d_s = (s1.codes[:, component] - s2.codes[:, component]).abs().mean()
    return (d_s / (d_i + eps_div)).clamp(max=clamp_max)


def _weight_of(name: str, weights: LossWeights) -> float:
    term = name.split("/")[-1]
    table = {
        "image_recon": weights.w_image_recon,
        "content_recon": weights.w_content_recon,
        "style_recon": weights.w_style_recon,
        "adv": weights.w_adv,
        "ocdp": weights.w_ocdp,
    }
    if term not in table:
        raise ValidationError(f"no weight defined for loss term {name!r}")
    return table[term]


def total_generator_loss(terms: dict[str, Tensor], weights: LossWeights) -> tuple[Tensor, LossReport]:
    """Weighted sum of generator loss terms across both streams.

    Term names are ``<stream>/<term>``, e.g. ``a2b/adv``.  NaN terms abort
    with the offending term named.
    """
    total = None
    report = LossReport(role="generator")
    for name, value in terms.items():
        if not bool(torch.isfinite(value).all()):
            raise NumericError(f"loss term {name!r} is not finite")
        report.terms[name] = float(value.detach())
        weighted = _weight_of(name, weights) * value
        total = weighted if total is None else total + weighted
    if total is None:
        total = torch.zeros(())
    report.total = float(total.detach())
    return total, report


def discriminator_loss(real_maps: list[Tensor], fake_maps: list[Tensor],
                       weights: LossWeights, stream: str) -> tuple[Tensor, LossReport]:
    """Combined real/fake least-squares discriminator loss for one stream."""
    real = adversarial_losses(real_maps, "discriminator", target_real=True)
    fake = adversarial_losses(fake_maps, "discriminator", target_real=False)
    total = weights.w_adv * (real + fake)
    report = LossReport(role="discriminator",
                        terms={f"{stream}/real": float(real.detach()),
                               f"{stream}/fake": float(fake.detach())},
                        total=float(total.detach()))
    return total, report
