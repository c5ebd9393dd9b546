"""Dataset ingestion, preprocessing and the synthetic scene generator.

On-disk layout: ``root/{rgb,thermal,seg}/<stem>.png`` with 8-bit 3-channel
RGB, 16-bit single-channel thermal and 8-bit label-indexed segmentation.
Synthetic toy scenes are written in the identical layout so everything
downstream is format-agnostic.

The toy scenes embody the one-to-many premise directly: RGB depends on
albedo only and thermal on temperature only, so the same RGB frame admits
many thermal appearances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import torch
from torch import Tensor

from .exceptions import ShapeMismatchError, ValidationError

#: Synthetic seg label ids; component 0 is vehicles, component 1 background.
SYNTHETIC_LABEL_MAP = {1: 0, 0: 1}
SYNTHETIC_THERMAL_MIN = 0.0
SYNTHETIC_THERMAL_MAX = 65535.0
SYNTHETIC_IMAGE_SIZE = (64, 128)


@dataclass
class DatasetEntry:
    stem: str
    rgb_path: Path
    thermal_path: Path
    seg_path: Path


@dataclass
class ScanReport:
    orphans: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.orphans


@dataclass
class DatasetManifest:
    root: Path
    split: str
    entries: list[DatasetEntry]
    label_map: dict[int, int]
    thermal_min: float = SYNTHETIC_THERMAL_MIN
    thermal_max: float = SYNTHETIC_THERMAL_MAX

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def num_components(self) -> int:
        return max(self.label_map.values()) + 1


def scan_dataset(root: str | Path, split: str, label_map: dict[int, int],
                 thermal_min: float = SYNTHETIC_THERMAL_MIN,
                 thermal_max: float = SYNTHETIC_THERMAL_MAX,
                 ) -> tuple[DatasetManifest, ScanReport]:
    """Build a sorted manifest of complete (rgb, thermal, seg) triples.

    Files missing a counterpart are reported as orphans, not included.
    """
    root = Path(root)
    for sub in ("rgb", "thermal", "seg"):
        if not (root / sub).is_dir():
            raise ValidationError(f"dataset root {root} is missing subdirectory {sub}/")
    stems = {sub: {p.stem for p in (root / sub).glob("*.png")} for sub in ("rgb", "thermal", "seg")}
    complete = sorted(stems["rgb"] & stems["thermal"] & stems["seg"])
    report = ScanReport()
    for sub in ("rgb", "thermal", "seg"):
        for stem in sorted(stems[sub] - set(complete)):
            report.orphans.append(f"{sub}/{stem}.png")
    entries = [
        DatasetEntry(stem=s, rgb_path=root / "rgb" / f"{s}.png",
                     thermal_path=root / "thermal" / f"{s}.png",
                     seg_path=root / "seg" / f"{s}.png")
        for s in complete
    ]
    manifest = DatasetManifest(root=root, split=split, entries=entries, label_map=dict(label_map),
                               thermal_min=thermal_min, thermal_max=thermal_max)
    return manifest, report


def load_entry(entry: DatasetEntry) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read one triple: rgb uint8 HxWx3, thermal uint16 HxW, seg uint8 HxW."""
    bgr = cv2.imread(str(entry.rgb_path), cv2.IMREAD_COLOR)
    thermal = cv2.imread(str(entry.thermal_path), cv2.IMREAD_UNCHANGED)
    seg = cv2.imread(str(entry.seg_path), cv2.IMREAD_GRAYSCALE)
    if bgr is None or thermal is None or seg is None:
        raise ValidationError(f"could not read files for entry {entry.stem}")
    return bgr[:, :, ::-1].copy(), np.atleast_2d(thermal), seg


def resize_labels(labels: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor label resize by floor index mapping.

    For integral ratios this samples the top-left pixel of each cell,
    matching the mask downsampling used inside the generator.
    """
    h, w = labels.shape
    th, tw = target
    rows = np.arange(th) * h // th
    cols = np.arange(tw) * w // tw
    return labels[np.ix_(rows, cols)]


def labels_to_onehot(labels: np.ndarray, label_map: dict[int, int]) -> np.ndarray:
    """Map raw label ids through ``label_map`` into K one-hot channels."""
    present = np.unique(labels)
    unmapped = [int(v) for v in present if int(v) not in label_map]
    if unmapped:
        raise ValidationError(f"segmentation contains unmapped label ids {unmapped}")
    k = max(label_map.values()) + 1
    lut = np.zeros(256, dtype=np.int64)
    for raw, comp in label_map.items():
        lut[raw] = comp
    comp_img = lut[labels]
    onehot = np.zeros((k,) + labels.shape, dtype=np.float32)
    for c in range(k):
        onehot[c] = comp_img == c
    return onehot


def preprocess(rgb: np.ndarray, thermal: np.ndarray, seg: np.ndarray,
               label_map: dict[int, int], thermal_min: float, thermal_max: float,
               image_size: tuple[int, int] = (256, 512),
               ) -> tuple[Tensor, Tensor, Tensor]:
    """Resize and normalize one triple.

    Images are resized bilinearly and mapped to [-1, 1]; thermal uses the
    dataset-level fixed min/max rather than per-image scaling, so thermal
    appearance stays comparable across frames.  Segmentation is resized
    nearest-neighbor and expanded to one-hot component channels.
    """
    if rgb.shape[:2] != thermal.shape[:2] or rgb.shape[:2] != seg.shape[:2]:
        raise ShapeMismatchError(
            f"input sizes differ: rgb {rgb.shape[:2]}, thermal {thermal.shape[:2]}, "
            f"seg {seg.shape[:2]}"
        )
    h, w = image_size
    rgb_r = cv2.resize(rgb.astype(np.float32), (w, h), interpolation=cv2.INTER_LINEAR)
    th_r = cv2.resize(thermal.astype(np.float32), (w, h), interpolation=cv2.INTER_LINEAR)
    seg_r = resize_labels(seg, image_size)

    rgb_t = torch.from_numpy(rgb_r / 127.5 - 1.0).permute(2, 0, 1).contiguous()
    span = max(thermal_max - thermal_min, 1e-12)
    th_t = torch.from_numpy((th_r - thermal_min) / span * 2.0 - 1.0).unsqueeze(0)
    th_t = th_t.clamp(-1.0, 1.0)
    mask = torch.from_numpy(labels_to_onehot(seg_r, label_map))
    return rgb_t.clamp(-1.0, 1.0), th_t, mask


@dataclass
class Vehicle:
    position: tuple[int, int]  # top-left (row, col)
    size: tuple[int, int]      # (height, width)
    temperature: float
    albedo: float


@dataclass
class SceneSpec:
    background_temperature: float
    vehicles: list[Vehicle]
    noise_level: float
    seed: int

    def validate(self, image_size: tuple[int, int]) -> None:
        h, w = image_size
        if not 0.0 <= self.background_temperature <= 1.0:
            raise ValidationError("background_temperature must be in [0, 1]")
        for v in self.vehicles:
            r, c = v.position
            vh, vw = v.size
            if r < 0 or c < 0 or r + vh > h or c + vw > w:
                raise ValidationError(f"vehicle at {v.position} size {v.size} out of bounds")
            if not 0.0 <= v.temperature <= 1.0 or not 0.0 <= v.albedo <= 1.0:
                raise ValidationError("vehicle temperature and albedo must be in [0, 1]")


def _vehicle_region(h: int, w: int, v: Vehicle) -> np.ndarray:
    """Rounded-rectangle footprint as a boolean mask."""
    r, c = v.position
    vh, vw = v.size
    yy, xx = np.mgrid[0:vh, 0:vw]
    cy, cx = (vh - 1) / 2.0, (vw - 1) / 2.0
    # superellipse: boxy shape with rounded corners
    d = (np.abs(yy - cy) / max(cy, 0.5)) ** 4 + (np.abs(xx - cx) / max(cx, 0.5)) ** 4
    region = np.zeros((h, w), dtype=bool)
    region[r : r + vh, c : c + vw] = d <= 1.0
    return region


def generate_synthetic_scene(spec: SceneSpec,
                             image_size: tuple[int, int] = SYNTHETIC_IMAGE_SIZE,
                             ) -> tuple[Tensor, Tensor, Tensor]:
    """Render one toy scene: (rgb, thermal, mask) tensors in model format.

    RGB is a function of albedo only; thermal of temperature only, plus
    seed-deterministic noise.  Two specs that differ only in a vehicle's
    temperature therefore produce bitwise-identical RGB and thermal images
    that differ only inside that vehicle's footprint.
    """
    spec.validate(image_size)
    h, w = image_size
    rng = np.random.default_rng(spec.seed)
    texture = cv2.GaussianBlur(rng.random((h, w), dtype=np.float64), (0, 0), 3.0)
    texture = (texture - texture.min()) / max(texture.max() - texture.min(), 1e-12)
    noise = rng.normal(0.0, 1.0, (h, w)) * spec.noise_level

    albedo_map = 0.30 + 0.35 * texture
    temp_map = np.clip(spec.background_temperature + 0.08 * (texture - 0.5), 0.0, 1.0)
    vehicle_mask = np.zeros((h, w), dtype=bool)
    for v in spec.vehicles:
        region = _vehicle_region(h, w, v)
        vehicle_mask |= region
        albedo_map = np.where(region, v.albedo, albedo_map)
        temp_map = np.where(region, v.temperature, temp_map)

    rgb = np.stack([albedo_map, albedo_map * 0.9, albedo_map * 0.8]).astype(np.float32)
    thermal = np.clip(temp_map + noise, 0.0, 1.0).astype(np.float32)[None]
    mask = np.stack([vehicle_mask, ~vehicle_mask]).astype(np.float32)
    return (torch.from_numpy(rgb * 2.0 - 1.0),
            torch.from_numpy(thermal * 2.0 - 1.0),
            torch.from_numpy(mask))


def random_scene_spec(rng: np.random.Generator,
                      image_size: tuple[int, int] = SYNTHETIC_IMAGE_SIZE) -> SceneSpec:
    """Draw a random toy scene description."""
    h, w = image_size
    vehicles = []
    for _ in range(int(rng.integers(1, 4))):
        vh = int(rng.integers(h // 6, h // 3))
        vw = int(rng.integers(w // 8, w // 3))
        r = int(rng.integers(0, h - vh))
        c = int(rng.integers(0, w - vw))
        vehicles.append(Vehicle(position=(r, c), size=(vh, vw),
                                temperature=float(rng.uniform(0.1, 0.9)),
                                albedo=float(rng.uniform(0.1, 0.9))))
    return SceneSpec(background_temperature=float(rng.uniform(0.2, 0.6)),
                     vehicles=vehicles,
                     noise_level=float(rng.uniform(0.005, 0.02)),
                     seed=int(rng.integers(0, 2**31 - 1)))


def write_synthetic_dataset(out_dir: str | Path, num_scenes: int, seed: int,
                            image_size: tuple[int, int] = SYNTHETIC_IMAGE_SIZE) -> DatasetManifest:
    """Write toy scenes in the standard dataset layout plus a manifest file."""
    if num_scenes < 1:
        raise ValidationError("num_scenes must be >= 1")
    out_dir = Path(out_dir)
    for sub in ("rgb", "thermal", "seg"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(num_scenes):
        spec = random_scene_spec(rng, image_size)
        rgb, thermal, mask = generate_synthetic_scene(spec, image_size)
        stem = f"scene_{i:05d}"
        rgb_u8 = ((rgb.numpy().transpose(1, 2, 0) + 1.0) * 127.5).round().clip(0, 255).astype(np.uint8)
        th_u16 = ((thermal.numpy()[0] + 1.0) / 2.0 * 65535.0).round().clip(0, 65535).astype(np.uint16)
        seg = np.where(mask.numpy()[0] > 0, 1, 0).astype(np.uint8)
        cv2.imwrite(str(out_dir / "rgb" / f"{stem}.png"), rgb_u8[:, :, ::-1])
        cv2.imwrite(str(out_dir / "thermal" / f"{stem}.png"), th_u16)
        cv2.imwrite(str(out_dir / "seg" / f"{stem}.png"), seg)
    meta = {
        "num_scenes": num_scenes,
        "seed": seed,
        "image_size": list(image_size),
        "label_map": {str(k): v for k, v in SYNTHETIC_LABEL_MAP.items()},
        "thermal_min": SYNTHETIC_THERMAL_MIN,
        "thermal_max": SYNTHETIC_THERMAL_MAX,
    }
    (out_dir / "manifest.json").write_text(json.dumps(meta, indent=2) + "\n")
    manifest, _ = scan_dataset(out_dir, "train", SYNTHETIC_LABEL_MAP)
    return manifest


@dataclass
class ArrayDataset:
    """All images of one modality held in memory as tensors."""

    images: Tensor  # (N, C, H, W)
    masks: Tensor   # (N, K, H, W)

    def __len__(self) -> int:
        return self.images.shape[0]

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, modality: str,
                      image_size: tuple[int, int]) -> "ArrayDataset":
        if modality not in ("rgb", "thermal"):
            raise ValidationError(f"unknown modality {modality!r}")
        images, masks = [], []
        for entry in manifest.entries:
            rgb, thermal, seg = load_entry(entry)
            rgb_t, th_t, mask = preprocess(rgb, thermal, seg, manifest.label_map,
                                           manifest.thermal_min, manifest.thermal_max,
                                           image_size)
            images.append(rgb_t if modality == "rgb" else th_t)
            masks.append(mask)
        if not images:
            raise ValidationError("manifest has no entries")
        return cls(images=torch.stack(images), masks=torch.stack(masks))


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int,
                  shuffle: bool = True) -> list[np.ndarray]:
    """Deterministic index batches for one epoch; partial final batch dropped."""
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    order = np.arange(n)
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(n)
    num_full = n // batch_size
    return [order[i * batch_size : (i + 1) * batch_size] for i in range(num_full)]


def batch_iterator(n: int, batch_size: int, seed: int, shuffle: bool = True,
                   start_iteration: int = 0):
    """Infinite deterministic stream of index batches, resumable by iteration."""
    per_epoch = n // batch_size
    if per_epoch < 1:
        raise ValidationError(f"batch_size {batch_size} larger than dataset size {n}")
    it = start_iteration
    while True:
        epoch, offset = divmod(it, per_epoch)
        batches = epoch_batches(n, batch_size, seed, epoch, shuffle)
        for b in batches[offset:]:
            yield b
            it += 1
