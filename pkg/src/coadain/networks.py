"""Encoders, generators and discriminators for bidirectional translation.

The RGB domain is called ``a`` and the thermal domain ``b``.  Content
encoders see the image concatenated with its one-hot component mask.
Style encoders form a bank, one per component, each pooling features only
over its own region.  Generators decode content plus mask back to an image,
styling every component independently through CoAdaIN residual blocks.

The residual blocks use 1x1 convolutions so that changing one component's
style code cannot leak across region boundaries before upsampling; spatial
mixing happens in the content encoder and the upsampling stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .exceptions import ShapeMismatchError, ValidationError
from .ops import CoadainParams, ParamHead, coadain, downsample_mask, validate_mask


@dataclass
class ModelConfig:
    num_components: int = 2
    style_dim: int = 8
    base_filters: int = 64
    num_downsamples: int = 2
    num_res_blocks: int = 4
    image_size: tuple[int, int] = (256, 512)
    rgb_channels: int = 3
    thermal_channels: int = 1
    discriminator_scales: int = 3
    mlp_hidden: int = 64

    def __post_init__(self):
        if self.num_components < 1:
            raise ValidationError("num_components must be >= 1")
        for name in ("style_dim", "base_filters", "num_downsamples", "num_res_blocks",
                     "discriminator_scales", "mlp_hidden"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        h, w = self.image_size
        stride = 2 ** self.num_downsamples
        if h % stride != 0 or w % stride != 0:
            raise ValidationError(
                f"image_size {self.image_size} not divisible by 2^num_downsamples={stride}"
            )

    @property
    def content_channels(self) -> int:
        return self.base_filters * 2 ** self.num_downsamples

    @property
    def content_size(self) -> tuple[int, int]:
        stride = 2 ** self.num_downsamples
        return self.image_size[0] // stride, self.image_size[1] // stride

    def channels_for(self, modality: str) -> int:
        if modality == "a":
            return self.rgb_channels
        if modality == "b":
            return self.thermal_channels
        raise ValidationError(f"unknown modality {modality!r}, expected 'a' or 'b'")


@dataclass
class StyleCodes:
    """One style vector per component: ``codes`` is ``(B, K, d)``.

    ``present`` flags components that were actually observed; sampled code
    sets are fully present.
    """

    codes: Tensor
    present: Tensor

    @property
    def num_components(self) -> int:
        return self.codes.shape[1]


def sample_style_codes(batch_size: int, config: ModelConfig,
                       generator: torch.Generator | None = None,
                       device: torch.device | str = "cpu") -> StyleCodes:
    """Draw a full set of style codes from a standard Gaussian."""
    codes = torch.randn(batch_size, config.num_components, config.style_dim,
                        generator=generator, device=device)
    present = torch.ones(batch_size, config.num_components, dtype=torch.bool, device=device)
    return StyleCodes(codes=codes, present=present)


class ResBlock(nn.Module):
    """Plain residual block with instance norm (content encoder only)."""

    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class ContentEncoder(nn.Module):
    def __init__(self, config: ModelConfig, in_channels: int):
        super().__init__()
        self.in_channels = in_channels
        dim = config.base_filters
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(in_channels, dim, 7),
            nn.InstanceNorm2d(dim),
            nn.ReLU(inplace=True),
        ]
        for _ in range(config.num_downsamples):
            layers += [
                nn.Conv2d(dim, dim * 2, 4, stride=2, padding=1),
                nn.InstanceNorm2d(dim * 2),
                nn.ReLU(inplace=True),
            ]
            dim *= 2
        layers += [ResBlock(dim) for _ in range(config.num_res_blocks)]
        self.model = nn.Sequential(*layers)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_channels:
            raise ShapeMismatchError(
                f"content encoder expects {self.in_channels} channels, got {x.shape[1]}"
            )
        return self.model(x)


class StyleEncoder(nn.Module):
    """Style encoder for a single component.

    The input image is zeroed outside the component before any convolution
    and features are average-pooled with region weights, so the resulting
    code is invariant to pixels outside the component.
    """

    def __init__(self, config: ModelConfig, in_channels: int, component_index: int):
        super().__init__()
        self.component_index = component_index
        dim = config.base_filters
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(in_channels, dim, 7),
            nn.ReLU(inplace=True),
        ]
        for _ in range(config.num_downsamples):
            layers += [
                nn.Conv2d(dim, dim * 2, 4, stride=2, padding=1),
                nn.ReLU(inplace=True),
            ]
            dim *= 2
        self.trunk = nn.Sequential(*layers)
        self.stride = 2 ** config.num_downsamples
        self.proj = nn.Linear(dim, config.style_dim)

    def forward(self, image: Tensor, region: Tensor) -> Tensor:
        """``region`` is the ``(B, 1, H, W)`` binary mask of this component."""
        feats = self.trunk(image * region)
        weights = F.avg_pool2d(region, self.stride)
        denom = weights.sum(dim=(2, 3)).clamp(min=1e-12)
        pooled = (feats * weights).sum(dim=(2, 3)) / denom
        return self.proj(pooled)


class StyleEncoderBank(nn.Module):
    """One independent style encoder per component."""

    def __init__(self, config: ModelConfig, in_channels: int):
        super().__init__()
        self.encoders = nn.ModuleList(
            StyleEncoder(config, in_channels, k) for k in range(config.num_components)
        )

    def encode_one(self, image: Tensor, mask: Tensor, k: int) -> tuple[Tensor, Tensor]:
        """Return the component-k code and a per-sample presence flag."""
        if not 0 <= k < len(self.encoders):
            raise ValidationError(f"component index {k} out of range")
        region = mask[:, k : k + 1].to(image.dtype)
        present = region.sum(dim=(1, 2, 3)) > 0
        code = self.encoders[k](image, region)
        return code * present.unsqueeze(-1).to(code.dtype), present

    def forward(self, image: Tensor, mask: Tensor) -> StyleCodes:
        validate_mask(mask)
        codes, present = [], []
        for k in range(len(self.encoders)):
            c, p = self.encode_one(image, mask, k)
            codes.append(c)
            present.append(p)
        return StyleCodes(codes=torch.stack(codes, dim=1), present=torch.stack(present, dim=1))


class CoadainResBlock(nn.Module):
    """Residual block whose normalization layers are CoAdaIN.

    1x1 convolutions only: the block mixes channels, never positions.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 1)
        self.conv2 = nn.Conv2d(channels, channels, 1)

    def forward(self, x, mask, params1: CoadainParams, params2: CoadainParams,
                sink: list | None = None):
        h = coadain(self.conv1(x), mask, params1)
        if sink is not None:
            sink.append(h)
        h = F.relu(h)
        h = coadain(self.conv2(h), mask, params2)
        if sink is not None:
            sink.append(h)
        return x + h


class Decoder(nn.Module):
    """Generator: styled residual blocks followed by upsampling to an image.

    Takes the content code concatenated with the mask downsampled to
    content resolution; one MLP parameter head per component per CoAdaIN
    layer, all fed from the shared per-component style codes.
    """

    def __init__(self, config: ModelConfig, out_channels: int):
        super().__init__()
        self.config = config
        self.out_channels = out_channels
        dim = config.content_channels
        self.merge = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim + config.num_components, dim, 3),
            nn.ReLU(inplace=True),
        )
        self.blocks = nn.ModuleList(CoadainResBlock(dim) for _ in range(config.num_res_blocks))
        self.heads = nn.ModuleList()
        for _ in range(2 * config.num_res_blocks):
            self.heads.append(nn.ModuleList(
                ParamHead(config.style_dim, dim, hidden=config.mlp_hidden, component_index=k)
                for k in range(config.num_components)
            ))
        up = []
        for _ in range(config.num_downsamples):
            up += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.ReflectionPad2d(1),
                nn.Conv2d(dim, dim // 2, 3),
                nn.ReLU(inplace=True),
            ]
            dim //= 2
        up += [nn.ReflectionPad2d(3), nn.Conv2d(dim, out_channels, 7), nn.Tanh()]
        self.upsample = nn.Sequential(*up)

    def layer_params(self, layer: int, styles: StyleCodes) -> CoadainParams:
        means, stds = [], []
        for k, head in enumerate(self.heads[layer]):
            m, s = head(styles.codes[:, k])
            means.append(m)
            stds.append(s)
        return CoadainParams(torch.stack(means, dim=1), torch.stack(stds, dim=1))

    def forward(self, content: Tensor, mask: Tensor, styles: StyleCodes,
                feature_sink: list | None = None) -> Tensor:
        validate_mask(mask)
        if styles.num_components != self.config.num_components:
            raise ShapeMismatchError(
                f"expected {self.config.num_components} style codes, got {styles.num_components}"
            )
        present_in_mask = mask.sum(dim=(2, 3)) > 0
        missing = present_in_mask & ~styles.present
        if bool(missing.any()):
            k = int(missing.any(dim=0).nonzero()[0])
            raise ValidationError(
                f"component {k} is present in the mask but its style code is absent; "
                "sample or encode it first"
            )
        mask_ds = downsample_mask(mask, content.shape[2:])
        h = self.merge(torch.cat([content, mask_ds.to(content.dtype)], dim=1))
        for i, block in enumerate(self.blocks):
            p1 = self.layer_params(2 * i, styles)
            p2 = self.layer_params(2 * i + 1, styles)
            h = block(h, mask_ds, p1, p2, sink=feature_sink)
        return self.upsample(h)


class PatchDiscriminator(nn.Module):
    def __init__(self, in_channels: int, base_filters: int, n_layers: int = 3):
        super().__init__()
        dim = base_filters
        layers = [nn.Conv2d(in_channels, dim, 4, stride=2, padding=1),
                  nn.LeakyReLU(0.2, inplace=True)]
        for _ in range(n_layers - 1):
            layers += [nn.Conv2d(dim, dim * 2, 4, stride=2, padding=1),
                       nn.LeakyReLU(0.2, inplace=True)]
            dim *= 2
        layers += [nn.Conv2d(dim, 1, 3, padding=1)]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        return self.model(x)


class MultiScaleDiscriminator(nn.Module):
    """Patch discriminators applied at progressively halved resolutions."""

    def __init__(self, config: ModelConfig, in_channels: int):
        super().__init__()
        self.in_channels = in_channels
        self.scales = nn.ModuleList(
            PatchDiscriminator(in_channels, config.base_filters)
            for _ in range(config.discriminator_scales)
        )

    def forward(self, image: Tensor) -> list[Tensor]:
        if image.shape[1] != self.in_channels:
            raise ShapeMismatchError(
                f"discriminator expects {self.in_channels} channels, got {image.shape[1]}"
            )
        outputs = []
        x = image
        for scale in self.scales:
            outputs.append(scale(x))
            x = F.avg_pool2d(x, 3, stride=2, padding=1, count_include_pad=False)
        return outputs


class TranslationModel(nn.Module):
    """The full bidirectional model: both streams plus discriminators."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        k = config.num_components
        self.content_encoders = nn.ModuleDict({
            "a": ContentEncoder(config, config.rgb_channels + k),
            "b": ContentEncoder(config, config.thermal_channels + k),
        })
        self.style_banks = nn.ModuleDict({
            "a": StyleEncoderBank(config, config.rgb_channels),
            "b": StyleEncoderBank(config, config.thermal_channels),
        })
        self.decoders = nn.ModuleDict({
            "a": Decoder(config, config.rgb_channels),
            "b": Decoder(config, config.thermal_channels),
        })
        self.discriminators = nn.ModuleDict({
            "a": MultiScaleDiscriminator(config, config.rgb_channels),
            "b": MultiScaleDiscriminator(config, config.thermal_channels),
        })

    def _check_modality(self, modality: str):
        if modality not in ("a", "b"):
            raise ValidationError(f"unknown modality {modality!r}, expected 'a' or 'b'")

    def encode_content(self, image: Tensor, mask: Tensor, modality: str) -> Tensor:
        self._check_modality(modality)
        validate_mask(mask)
        if image.shape[2:] != mask.shape[2:]:
            raise ShapeMismatchError("image and mask spatial dims differ")
        if image.shape[1] != self.config.channels_for(modality):
            raise ShapeMismatchError(
                f"modality {modality!r} expects {self.config.channels_for(modality)} "
                f"channels, got {image.shape[1]}"
            )
        x = torch.cat([image, mask.to(image.dtype)], dim=1)
        return self.content_encoders[modality](x)

    def encode_styles(self, image: Tensor, mask: Tensor, modality: str) -> StyleCodes:
        self._check_modality(modality)
        return self.style_banks[modality](image, mask)

    def encode_style(self, image: Tensor, mask: Tensor, k: int, modality: str):
        self._check_modality(modality)
        return self.style_banks[modality].encode_one(image, mask, k)

    def decode(self, content: Tensor, mask: Tensor, styles: StyleCodes, modality: str,
               feature_sink: list | None = None) -> Tensor:
        self._check_modality(modality)
        return self.decoders[modality](content, mask, styles, feature_sink=feature_sink)

    def translate(self, image: Tensor, mask: Tensor, styles: StyleCodes,
                  direction: str = "a2b", feature_sink: list | None = None) -> Tensor:
        if direction not in ("a2b", "b2a"):
            raise ValidationError(f"unknown direction {direction!r}")
        src, dst = direction[0], direction[-1]
        content = self.encode_content(image, mask, src)
        return self.decode(content, mask, styles, dst, feature_sink=feature_sink)

    def reconstruct(self, image: Tensor, mask: Tensor, modality: str) -> Tensor:
        content = self.encode_content(image, mask, modality)
        styles = self.encode_styles(image, mask, modality)
        return self.decode(content, mask, styles, modality)

    def discriminate(self, image: Tensor, modality: str) -> list[Tensor]:
        self._check_modality(modality)
        return self.discriminators[modality](image)

    def generator_parameters(self):
        for name, module in self.named_children():
            if name != "discriminators":
                yield from module.parameters()

    def discriminator_parameters(self):
        return self.discriminators.parameters()
