"""Component-aware feature statistics and the CoAdaIN transform.

All operations work on batched tensors: feature maps are ``(B, C, H, W)``
and component masks are ``(B, K, H, W)`` one-hot partitions.  The transform
re-normalizes every component of a feature map independently: pixels of
component ``i`` are standardized with that component's own masked mean and
variance and then rescaled to a target (mean, std) produced by a small MLP
head from that component's style code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import Tensor, nn

from .exceptions import (
    MaskValidationError,
    NumericError,
    ShapeMismatchError,
    ValidationError,
)

#: Variance stabilizer added under the square root.  Components can be
#: near-constant (e.g. sky), which would make the raw std zero.
EPS = 1e-5


def validate_mask(mask: Tensor) -> None:
    """Check that ``mask`` is a binary one-hot partition over its K axis.

    Raises :class:`MaskValidationError` otherwise.
    """
    if mask.dim() != 4:
        raise MaskValidationError(f"mask must be (B, K, H, W), got shape {tuple(mask.shape)}")
    binary = (mask == 0) | (mask == 1)
    if not bool(binary.all()):
        raise MaskValidationError("mask entries must be exactly 0 or 1")
    sums = mask.sum(dim=1)
    if not bool((sums == 1).all()):
        raise MaskValidationError("mask must assign every pixel to exactly one component")


@dataclass
class MaskedMoments:
    """Per-component, per-channel first and second moments.

    ``mean`` and ``var`` are ``(B, K, C)``; ``pixel_count`` is ``(B, K)``.
    Components with zero pixels carry zeros in ``mean``/``var`` and are
    flagged invalid via :attr:`valid` rather than propagating NaN.
    """

    mean: Tensor
    var: Tensor
    pixel_count: Tensor

    @property
    def valid(self) -> Tensor:
        return self.pixel_count > 0


def masked_moments(x: Tensor, mask: Tensor) -> MaskedMoments:
    """Mean and population variance of ``x`` over each mask component.

    ``x`` is ``(B, C, H, W)``, ``mask`` is ``(B, K, H, W)``.  Variance uses
    the divide-by-N (biased) convention, matching instance normalization.
    """
    if x.dim() != 4:
        raise ShapeMismatchError(f"features must be (B, C, H, W), got shape {tuple(x.shape)}")
    validate_mask(mask)
    if x.shape[0] != mask.shape[0] or x.shape[2:] != mask.shape[2:]:
        raise ShapeMismatchError(
            f"feature shape {tuple(x.shape)} does not match mask shape {tuple(mask.shape)}"
        )
    if not bool(torch.isfinite(x).all()):
        raise NumericError("features contain non-finite values")

    m = mask.to(x.dtype)
    count = m.sum(dim=(2, 3))
    denom = count.clamp(min=1.0).unsqueeze(-1)
    s1 = torch.einsum("bkhw,bchw->bkc", m, x)
    s2 = torch.einsum("bkhw,bchw->bkc", m, x * x)
    mean = s1 / denom
    var = (s2 / denom - mean * mean).clamp(min=0.0)
    empty = (count == 0).unsqueeze(-1)
    mean = torch.where(empty, torch.zeros_like(mean), mean)
    var = torch.where(empty, torch.zeros_like(var), var)
    return MaskedMoments(mean=mean, var=var, pixel_count=count.long())


def downsample_mask(mask: Tensor, target: tuple[int, int]) -> Tensor:
    """Nearest-neighbor label downsampling of a one-hot mask.

    Samples the label at the top-left position of each cell, which keeps
    the output a valid one-hot partition.  Requires integral ratios.
    """
    validate_mask(mask)
    h, w = mask.shape[2], mask.shape[3]
    th, tw = target
    if th > h or tw > w:
        raise ValidationError(f"target {target} exceeds mask size {(h, w)}")
    if h % th != 0 or w % tw != 0:
        raise ValidationError(f"target {target} does not evenly divide mask size {(h, w)}")
    return mask[:, :, :: h // th, :: w // tw].contiguous()


@dataclass
class CoadainParams:
    """Target statistics per component and channel, both ``(B, K, C)``.

    ``target_std`` is used raw (no positivity constraint); a negative
    scale flips the contrast of that component.
    """

    target_mean: Tensor
    target_std: Tensor


@dataclass
class CoadainState:
    """Saved forward state for the analytic backward pass.  Single use."""

    mask: Tensor
    x: Tensor
    mean: Tensor
    inv_std: Tensor
    target_std: Tensor
    pixel_count: Tensor
    consumed: bool = field(default=False)


def _project(mask: Tensor, per_component: Tensor) -> Tensor:
    """Scatter ``(B, K, C)`` values onto pixels: ``(B, C, H, W)``."""
    return torch.einsum("bkhw,bkc->bchw", mask, per_component)


def coadain_forward(
    x: Tensor, mask: Tensor, params: CoadainParams, eps: float = EPS
) -> tuple[Tensor, CoadainState]:
    """Apply the per-component renormalization; return output and saved state.

    Each pixel of component ``i`` becomes
    ``target_std[i] * (x - mean[i]) / sqrt(var[i] + eps) + target_mean[i]``.
    Components with zero pixels contribute nothing.  Changing the params of
    one component only ever changes that component's pixels.
    """
    moments = masked_moments(x, mask)
    tm, ts = params.target_mean, params.target_std
    if tm.shape != ts.shape or tm.shape != moments.mean.shape:
        raise ShapeMismatchError(
            f"params shape {tuple(tm.shape)} does not match moments shape "
            f"{tuple(moments.mean.shape)}"
        )
    m = mask.to(x.dtype)
    inv_std = (moments.var + eps).rsqrt()
    scale = ts * inv_std
    centered = x.unsqueeze(1) - moments.mean[..., None, None]
    per_comp = centered * scale[..., None, None] + tm[..., None, None]
    y = (per_comp * m.unsqueeze(2)).sum(dim=1)
    state = CoadainState(
        mask=m,
        x=x,
        mean=moments.mean,
        inv_std=inv_std,
        target_std=ts,
        pixel_count=moments.pixel_count,
    )
    return y, state


def coadain_backward(grad_out: Tensor, state: CoadainState) -> tuple[Tensor, Tensor, Tensor]:
    """Analytic gradients of :func:`coadain_forward`.

    Returns ``(grad_x, grad_target_mean, grad_target_std)``, including the
    dependence of the masked mean and variance on ``x``.
    """
    if state.consumed:
        raise ValidationError("saved state has already been consumed")
    state.consumed = True
    m, x = state.mask, state.x
    mean, inv_std, ts = state.mean, state.inv_std, state.target_std
    n = state.pixel_count.to(x.dtype).clamp(min=1.0).unsqueeze(-1)

    sum_go = torch.einsum("bkhw,bchw->bkc", m, grad_out)
    sum_go_x = torch.einsum("bkhw,bchw->bkc", m, grad_out * x)
    # sum over component pixels of grad_out * xhat
    sum_go_xhat = (sum_go_x - mean * sum_go) * inv_std

    grad_target_mean = sum_go
    grad_target_std = sum_go_xhat

    g_s = ts * inv_std
    grad_x = (
        _project(m, g_s) * grad_out
        - _project(m, g_s * sum_go / n)
        - _project(m, g_s * inv_std * sum_go_xhat / n) * x
        + _project(m, g_s * inv_std * sum_go_xhat * mean / n)
    )
    return grad_x, grad_target_mean, grad_target_std


class _CoadainFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, mask, target_mean, target_std, eps):
        y, state = coadain_forward(x, mask, CoadainParams(target_mean, target_std), eps)
        ctx.state = state
        return y

    @staticmethod
    def backward(ctx, grad_out):
        grad_x, grad_tm, grad_ts = coadain_backward(grad_out, ctx.state)
        return grad_x, None, grad_tm, grad_ts, None


def coadain(x: Tensor, mask: Tensor, params: CoadainParams, eps: float = EPS) -> Tensor:
    """Differentiable component-aware adaptive instance normalization."""
    return _CoadainFunction.apply(x, mask, params.target_mean, params.target_std, eps)


@dataclass
class StyleCode:
    """A style vector tied to one component index."""

    values: Tensor
    component_index: int


class ParamHead(nn.Module):
    """MLP mapping one component's style code to CoAdaIN target statistics.

    Emits ``2 * channels`` values split into (target_mean, target_std).
    With ``hidden=None`` the head is a single affine layer.
    """

    def __init__(self, style_dim: int, channels: int, hidden: int | None = None,
                 component_index: int = 0):
        super().__init__()
        self.channels = channels
        self.component_index = component_index
        if hidden is None:
            self.net = nn.Linear(style_dim, 2 * channels)
        else:
            self.net = nn.Sequential(
                nn.Linear(style_dim, hidden),
                nn.ReLU(inplace=True),
                nn.Linear(hidden, 2 * channels),
            )

    def forward(self, code: Tensor) -> tuple[Tensor, Tensor]:
        out = self.net(code)
        return out[..., : self.channels], out[..., self.channels :]


def style_to_params(style: StyleCode, head: ParamHead) -> tuple[Tensor, Tensor]:
    """Evaluate a parameter head on a style code, checking component identity."""
    if style.component_index != head.component_index:
        raise ValidationError(
            f"style code is for component {style.component_index}, "
            f"head is for component {head.component_index}"
        )
    return head(style.values)
