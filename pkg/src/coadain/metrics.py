"""Diversity and quality evaluation.

Perceptual diversity is the average feature-space distance between pairs
of translations of the same sources under independently sampled styles;
quality is the Fréchet distance between Gaussian fits of real and
generated feature embeddings, averaged over several style samplings.

Both run over a pluggable feature extractor.  The default is a small
frozen randomly initialized conv stack shipped with the package, which
keeps the metrics deterministic and dependency-free; externally trained
backbones can be loaded from the same ``.npz`` weights format for numbers
comparable with published results.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .exceptions import ShapeMismatchError, ValidationError
from .networks import ModelConfig, StyleCodes, TranslationModel, sample_style_codes

DEFAULT_EXTRACTOR_ASSET = "extractor_default.npz"
DIVERSITY_NUM_SOURCES = 100
DIVERSITY_NUM_PAIRS = 1000
FID_NUM_SAMPLINGS = 3


class FeatureExtractor:
    """Frozen conv stack: per-layer feature maps plus a pooled embedding.

    Weights live in an ``.npz`` archive with arrays ``w0, b0, w1, b1, ...``
    (conv weights ``(out, in, kh, kw)``) and ``strides``.  The archive's
    SHA-256 is recorded in the descriptor of every report.
    """

    def __init__(self, weights: list[tuple[Tensor, Tensor]], strides: list[int],
                 name: str, sha256: str):
        self.weights = weights
        self.strides = strides
        self.in_channels = weights[0][0].shape[1]
        self.embedding_dim = weights[-1][0].shape[0]
        self.descriptor = {"name": name, "version": 1, "weights_sha256": sha256}

    @classmethod
    def from_file(cls, path: str | Path, name: str | None = None) -> "FeatureExtractor":
        raw = Path(path).read_bytes()
        sha = hashlib.sha256(raw).hexdigest()
        data = np.load(Path(path))
        strides = [int(s) for s in data["strides"]]
        weights = []
        for i in range(len(strides)):
            weights.append((torch.from_numpy(data[f"w{i}"]).float(),
                            torch.from_numpy(data[f"b{i}"]).float()))
        return cls(weights, strides, name or Path(path).stem, sha)

    @classmethod
    def default(cls) -> "FeatureExtractor":
        ref = resources.files("coadain").joinpath("assets", DEFAULT_EXTRACTOR_ASSET)
        with resources.as_file(ref) as path:
            return cls.from_file(path, name="random-conv-default")

    def _prepare(self, x: Tensor) -> Tensor:
        if x.dim() != 4:
            raise ShapeMismatchError(f"expected (B, C, H, W), got shape {tuple(x.shape)}")
        if x.shape[1] != self.in_channels:
            if self.in_channels == 1:
                x = x.mean(dim=1, keepdim=True)
            else:
                raise ShapeMismatchError(
                    f"extractor expects {self.in_channels} channels, got {x.shape[1]}"
                )
        return x

    def features(self, x: Tensor) -> list[Tensor]:
        x = self._prepare(x)
        feats = []
        with torch.no_grad():
            for (w, b), stride in zip(self.weights, self.strides):
                x = F.relu(F.conv2d(x, w, b, stride=stride, padding=w.shape[-1] // 2))
                feats.append(x)
        return feats

    def embedding(self, x: Tensor) -> Tensor:
        return self.features(x)[-1].mean(dim=(2, 3))


def create_extractor_weights(path: str | Path, seed: int = 2024, in_channels: int = 1,
                             widths: tuple[int, ...] = (8, 16, 32, 64),
                             strides: tuple[int, ...] = (1, 2, 2, 2)) -> None:
    """Write a fixed-seed random conv stack in the extractor weights format."""
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {"strides": np.asarray(strides, dtype=np.int64)}
    c_in = in_channels
    for i, (c_out, _) in enumerate(zip(widths, strides)):
        fan_in = c_in * 9
        arrays[f"w{i}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                     (c_out, c_in, 3, 3)).astype(np.float32)
        arrays[f"b{i}"] = np.zeros(c_out, dtype=np.float32)
        c_in = c_out
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savez(Path(path), **arrays)


def lpips_distance(x: Tensor, y: Tensor, extractor: FeatureExtractor,
                   mask: Tensor | None = None) -> Tensor:
    """Perceptual distance per sample pair, shape ``(B,)``.

    Features are unit-normalized across channels, differenced, squared,
    averaged spatially (over the masked region when a mask is given) and
    summed across layers.  Layer weighting is uniform.
    """
    if x.shape != y.shape:
        raise ShapeMismatchError(f"shapes differ: {tuple(x.shape)} vs {tuple(y.shape)}")
    if mask is not None:
        if mask.dim() == 3:
            mask = mask.unsqueeze(1)
        if mask.shape[2:] != x.shape[2:]:
            raise ShapeMismatchError("mask resolution does not match images")
        mask = mask.to(x.dtype)
    total = torch.zeros(x.shape[0], dtype=x.dtype)
    for fx, fy in zip(extractor.features(x), extractor.features(y)):
        nx = fx / fx.pow(2).sum(dim=1, keepdim=True).sqrt().clamp(min=1e-10)
        ny = fy / fy.pow(2).sum(dim=1, keepdim=True).sqrt().clamp(min=1e-10)
        diff = (nx - ny).pow(2).sum(dim=1, keepdim=True)
        if mask is None:
            layer = diff.mean(dim=(1, 2, 3))
        else:
            w = F.interpolate(mask, size=diff.shape[2:], mode="area")
            denom = w.sum(dim=(1, 2, 3))
            layer = (diff * w).sum(dim=(1, 2, 3)) / denom.clamp(min=1e-12)
            layer = torch.where(denom > 0, layer, torch.zeros_like(layer))
        total = total + layer
    return total


class ModelTranslator:
    """Adapter giving protocols a uniform RGB-to-thermal translation surface."""

    def __init__(self, model: TranslationModel, config: ModelConfig):
        self.model = model
        self.config = config

    @property
    def num_components(self) -> int:
        return self.config.num_components

    @property
    def style_dim(self) -> int:
        return self.config.style_dim

    def translate(self, images: Tensor, masks: Tensor, styles: StyleCodes) -> Tensor:
        with torch.no_grad():
            return self.model.translate(images, masks, styles, "a2b")


def _sample_codes(translator, batch: int, rng: torch.Generator) -> StyleCodes:
    codes = torch.randn(batch, translator.num_components, translator.style_dim, generator=rng)
    present = torch.ones(batch, translator.num_components, dtype=torch.bool)
    return StyleCodes(codes=codes, present=present)


@dataclass
class ProtocolResult:
    protocol: str
    mean: float
    std: float
    counts: dict[str, int]
    seed: int
    extractor: dict

    def as_dict(self) -> dict:
        return {"protocol": self.protocol, "mean": self.mean, "std": self.std,
                "counts": self.counts, "seed": self.seed, "extractor": self.extractor}


def diversity_protocol(translator, images: Tensor, masks: Tensor,
                       extractor: FeatureExtractor, seed: int = 0,
                       num_sources: int = DIVERSITY_NUM_SOURCES,
                       num_pairs: int = DIVERSITY_NUM_PAIRS,
                       mode: str = "all", vehicle_component: int = 0) -> ProtocolResult:
    """Mean/std perceptual distance over random translation pairs.

    Each pair translates one source twice with independently sampled style
    sets.  ``vehicle-only`` mode resamples only the vehicle code between
    the two and measures the masked distance over the vehicle region.
    """
    if mode not in ("all", "vehicle-only"):
        raise ValidationError(f"unknown diversity mode {mode!r}")
    if images.shape[0] < num_sources:
        raise ValidationError(
            f"protocol needs {num_sources} source images, got {images.shape[0]}"
        )
    images = images[:num_sources]
    masks = masks[:num_sources]
    rng = torch.Generator().manual_seed(seed)
    source_idx = torch.randint(num_sources, (num_pairs,), generator=rng)
    distances = []
    pairs_evaluated = 0
    for i in source_idx.tolist():
        img = images[i : i + 1]
        msk = masks[i : i + 1]
        s1 = _sample_codes(translator, 1, rng)
        if mode == "all":
            s2 = _sample_codes(translator, 1, rng)
            region = None
        else:
            codes = s1.codes.clone()
            codes[:, vehicle_component] = torch.randn(1, translator.style_dim, generator=rng)
            s2 = StyleCodes(codes=codes, present=s1.present.clone())
            region = msk[:, vehicle_component]
        out1 = translator.translate(img, msk, s1)
        out2 = translator.translate(img, msk, s2)
        distances.append(float(lpips_distance(out1, out2, extractor, mask=region)[0]))
        pairs_evaluated += 1
    arr = np.asarray(distances)
    return ProtocolResult(
        protocol=f"diversity-{mode}", mean=float(arr.mean()), std=float(arr.std()),
        counts={"sources": num_sources, "pairs": pairs_evaluated},
        seed=seed, extractor=extractor.descriptor,
    )


@dataclass
class ActivationStats:
    """Gaussian fit of pooled embeddings: mean, covariance, sample count."""

    mean: np.ndarray
    covariance: np.ndarray
    sample_count: int


class StatsAccumulator:
    """Streaming, order-stable accumulation of embedding statistics."""

    def __init__(self, dim: int):
        self.dim = dim
        self.n = 0
        self.s1 = np.zeros(dim, dtype=np.float64)
        self.s2 = np.zeros((dim, dim), dtype=np.float64)

    def update(self, embeddings: Tensor | np.ndarray) -> None:
        e = np.asarray(embeddings, dtype=np.float64)
        if e.ndim == 1:
            e = e[None]
        self.n += e.shape[0]
        self.s1 += e.sum(axis=0)
        self.s2 += e.T @ e

    def finalize(self) -> ActivationStats:
        if self.n < 2:
            raise ValidationError(f"need at least 2 samples, got {self.n}")
        mean = self.s1 / self.n
        cov = (self.s2 - self.n * np.outer(mean, mean)) / (self.n - 1)
        cov = (cov + cov.T) / 2.0
        return ActivationStats(mean=mean, covariance=cov, sample_count=self.n)


def activation_stats(images, extractor: FeatureExtractor,
                     batch_size: int = 16) -> ActivationStats:
    """Mean and covariance of pooled embeddings over a stream of images."""
    acc: StatsAccumulator | None = None
    if isinstance(images, Tensor):
        images = [images[i : i + batch_size] for i in range(0, images.shape[0], batch_size)]
    for batch in images:
        if batch.dim() == 3:
            batch = batch.unsqueeze(0)
        emb = extractor.embedding(batch)
        if acc is None:
            acc = StatsAccumulator(emb.shape[1])
        acc.update(emb)
    if acc is None:
        raise ValidationError("no images given")
    return acc.finalize()


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(p: ActivationStats, q: ActivationStats) -> float:
    """Fréchet distance between two Gaussian fits.

    The cross term uses the symmetric eigendecomposition of
    ``sqrt(Sp) Sq sqrt(Sp)`` with negative eigenvalues clamped to zero;
    the result is clamped to be nonnegative.
    """
    if p.mean.shape != q.mean.shape:
        raise ShapeMismatchError("statistics have different dimensions")
    if not (np.isfinite(p.mean).all() and np.isfinite(q.mean).all()
            and np.isfinite(p.covariance).all() and np.isfinite(q.covariance).all()):
        raise ValidationError("statistics contain non-finite values")
    diff = p.mean - q.mean
    sp = _psd_sqrt(p.covariance)
    inner = sp @ q.covariance @ sp
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_sqrt = np.sqrt(np.clip(vals, 0.0, None)).sum()
    value = float(diff @ diff + np.trace(p.covariance) + np.trace(q.covariance) - 2.0 * tr_sqrt)
    return max(value, 0.0)


def fid_protocol(translator, images: Tensor, masks: Tensor, real_thermals: Tensor,
                 extractor: FeatureExtractor, seed: int = 0,
                 samplings: int = FID_NUM_SAMPLINGS, batch_size: int = 16) -> ProtocolResult:
    """Mean/std Fréchet distance over independent style sampling passes.

    Every pass translates the whole test set with freshly sampled styles
    and compares the embedding statistics against the real thermals.
    """
    if images.shape[0] == 0:
        raise ValidationError("test set is empty")
    real_stats = activation_stats(real_thermals, extractor, batch_size)
    rng = torch.Generator().manual_seed(seed)
    scores = []
    passes_run = 0
    for _ in range(samplings):
        acc = StatsAccumulator(extractor.embedding_dim)
        for i in range(0, images.shape[0], batch_size):
            img = images[i : i + batch_size]
            msk = masks[i : i + batch_size]
            styles = _sample_codes(translator, img.shape[0], rng)
            out = translator.translate(img, msk, styles)
            acc.update(extractor.embedding(out))
        scores.append(frechet_distance(acc.finalize(), real_stats))
        passes_run += 1
    arr = np.asarray(scores)
    return ProtocolResult(
        protocol="fid", mean=float(arr.mean()), std=float(arr.std()),
        counts={"test_images": int(images.shape[0]), "samplings": passes_run},
        seed=seed, extractor=extractor.descriptor,
    )
