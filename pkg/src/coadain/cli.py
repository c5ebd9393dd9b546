"""Command-line driver: dataset preparation, training, translation,
evaluation and gallery composition.

Every command is reproducible from its config and seed alone; each run
directory receives an echo of the exact configuration that produced it.
The run directory root can be overridden with ``COADAIN_RUN_ROOT``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import click
import cv2
import numpy as np
import torch

from .config import dump_run_config, load_run_config
from .data import (
    SYNTHETIC_LABEL_MAP,
    ArrayDataset,
    labels_to_onehot,
    resize_labels,
    scan_dataset,
    write_synthetic_dataset,
)
from .exceptions import CoadainError
from .metrics import (
    FeatureExtractor,
    ModelTranslator,
    diversity_protocol,
    fid_protocol,
)
from .networks import StyleCodes, sample_style_codes
from .trainer import fit, load_model

VEHICLE_COMPONENT = 0


def _run_root() -> Path:
    return Path(os.environ.get("COADAIN_RUN_ROOT", "runs"))


@click.group()
def main():
    """Multimodal RGB-to-thermal translation with per-component styles."""


@main.command("make-synthetic")
@click.argument("out_dir", type=click.Path(path_type=Path))
@click.option("--num-scenes", type=int, required=True, help="Number of scenes to render.")
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_make_synthetic(out_dir: Path, num_scenes: int, seed: int):
    """Write a synthetic toy dataset in the standard rgb/thermal/seg layout."""
    if num_scenes < 1:
        raise click.UsageError("--num-scenes must be >= 1")
    try:
        manifest = write_synthetic_dataset(out_dir, num_scenes, seed)
    except (CoadainError, OSError) as exc:
        raise click.ClickException(str(exc))
    click.echo(f"wrote {len(manifest)} scenes to {out_dir}")


@main.command("train")
@click.argument("config_path", type=click.Path(exists=True, path_type=Path))
@click.option("--run-dir", type=click.Path(path_type=Path), default=None,
              help="Run directory (default: <run root>/<config stem>).")
@click.option("--resume", type=click.Path(exists=True, path_type=Path), default=None,
              help="Checkpoint to resume from.")
def cmd_train(config_path: Path, run_dir: Path | None, resume: Path | None):
    """Train from a run config; writes checkpoints and a metrics log."""
    try:
        cfg = load_run_config(config_path)
        if cfg.data.train_root is None:
            raise click.ClickException("config data.train_root is not set")
        root = Path(cfg.data.train_root)
        if not root.is_dir():
            raise click.ClickException(f"dataset path does not exist: {root}")
        run_dir = run_dir or _run_root() / config_path.stem
        run_dir.mkdir(parents=True, exist_ok=True)
        dump_run_config(cfg, run_dir / "config.yaml")
        manifest, report = scan_dataset(root, "train", cfg.data.label_map,
                                        cfg.data.thermal_min, cfg.data.thermal_max)
        for orphan in report.orphans:
            click.echo(f"warning: orphan file {orphan}", err=True)
        dataset_a = ArrayDataset.from_manifest(manifest, "rgb", cfg.model.image_size)
        dataset_b = ArrayDataset.from_manifest(manifest, "thermal", cfg.model.image_size)
        final = fit(cfg.model, cfg.train, dataset_a, dataset_b, run_dir, resume_from=resume)
    except click.ClickException:
        raise
    except (CoadainError, OSError) as exc:
        raise click.ClickException(str(exc))
    click.echo(f"final checkpoint: {final}")


def _load_input_meta(input_dir: Path) -> tuple[dict[int, int], float, float]:
    meta_path = input_dir / "manifest.json"
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text())
        label_map = {int(k): int(v) for k, v in meta["label_map"].items()}
        return label_map, float(meta["thermal_min"]), float(meta["thermal_max"])
    return dict(SYNTHETIC_LABEL_MAP), 0.0, 65535.0


def _thermal_to_png(thermal: torch.Tensor, tmin: float, tmax: float) -> np.ndarray:
    counts = (thermal[0].numpy() + 1.0) / 2.0 * (tmax - tmin) + tmin
    return counts.round().clip(0, 65535).astype(np.uint16)


@main.command("translate")
@click.argument("checkpoint", type=click.Path(exists=True, path_type=Path))
@click.argument("input_dir", type=click.Path(exists=True, path_type=Path))
@click.argument("out_dir", type=click.Path(path_type=Path))
@click.option("--num-styles", type=int, default=1, show_default=True)
@click.option("--resample", type=click.Choice(["vehicles", "background", "all"]),
              default="all", show_default=True,
              help="Which style codes vary between the emitted outputs.")
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_translate(checkpoint: Path, input_dir: Path, out_dir: Path,
                  num_styles: int, resample: str, seed: int):
    """Translate every rgb+seg input into one or more thermal outputs."""
    if num_styles < 1:
        raise click.UsageError("--num-styles must be >= 1")
    try:
        model, model_cfg = load_model(checkpoint)
    except CoadainError as exc:
        raise click.ClickException(str(exc))
    label_map, tmin, tmax = _load_input_meta(input_dir)
    rgb_paths = sorted((input_dir / "rgb").glob("*.png"))
    if not rgb_paths:
        raise click.ClickException(f"no rgb inputs under {input_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = torch.Generator().manual_seed(seed)
    failures = 0
    for rgb_path in rgb_paths:
        stem = rgb_path.stem
        seg_path = input_dir / "seg" / f"{stem}.png"
        if not seg_path.is_file():
            click.echo(f"error: missing seg for {stem}", err=True)
            failures += 1
            continue
        try:
            bgr = cv2.imread(str(rgb_path), cv2.IMREAD_COLOR)
            seg = cv2.imread(str(seg_path), cv2.IMREAD_GRAYSCALE)
            h, w = model_cfg.image_size
            rgb = cv2.resize(bgr[:, :, ::-1].astype(np.float32), (w, h),
                             interpolation=cv2.INTER_LINEAR)
            image = torch.from_numpy(rgb / 127.5 - 1.0).permute(2, 0, 1)[None].clamp(-1, 1)
            mask = torch.from_numpy(
                labels_to_onehot(resize_labels(seg, (h, w)), label_map))[None]

            base = sample_style_codes(1, model_cfg, generator=rng)
            sample_dir = out_dir / stem
            sample_dir.mkdir(parents=True, exist_ok=True)
            cv2.imwrite(str(sample_dir / "rgb.png"),
                        ((rgb).round().clip(0, 255).astype(np.uint8))[:, :, ::-1])
            for j in range(num_styles):
                codes = base.codes.clone()
                if resample == "all":
                    codes = torch.randn(codes.shape, generator=rng)
                elif resample == "vehicles":
                    codes[:, VEHICLE_COMPONENT] = torch.randn(
                        1, model_cfg.style_dim, generator=rng)
                else:  # background: vary every non-vehicle code
                    for k in range(model_cfg.num_components):
                        if k != VEHICLE_COMPONENT:
                            codes[:, k] = torch.randn(1, model_cfg.style_dim, generator=rng)
                styles = StyleCodes(codes=codes, present=base.present.clone())
                with torch.no_grad():
                    thermal = model.translate(image, mask, styles, "a2b")[0]
                cv2.imwrite(str(sample_dir / f"{resample}_{j}.png"),
                            _thermal_to_png(thermal, tmin, tmax))
        except (CoadainError, OSError) as exc:
            click.echo(f"error: {stem}: {exc}", err=True)
            failures += 1
    (out_dir / "translate_config.json").write_text(json.dumps({
        "checkpoint": str(checkpoint), "input_dir": str(input_dir),
        "num_styles": num_styles, "resample": resample, "seed": seed,
        "thermal_min": tmin, "thermal_max": tmax,
    }, indent=2) + "\n")
    if failures:
        raise click.exceptions.Exit(1)


@main.command("eval")
@click.argument("checkpoint", type=click.Path(exists=True, path_type=Path))
@click.argument("dataset", type=click.Path(exists=True, path_type=Path))
@click.option("--which", type=click.Choice(["lpips", "lpips-vehicle", "fid"]), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--num-sources", type=int, default=100, show_default=True)
@click.option("--num-pairs", type=int, default=1000, show_default=True)
@click.option("--samplings", type=int, default=3, show_default=True)
@click.option("--real-vs-real", is_flag=True,
              help="FID sanity mode: score the real thermals against themselves.")
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None,
              help="JSON report path (default: report_<which>.json next to the dataset).")
@click.option("--csv", "csv_path", type=click.Path(path_type=Path), default=None,
              help="Append the result to this CSV for cross-run comparison.")
def cmd_eval(checkpoint: Path, dataset: Path, which: str, seed: int, num_sources: int,
             num_pairs: int, samplings: int, real_vs_real: bool,
             out_path: Path | None, csv_path: Path | None):
    """Run a diversity or quality protocol and write a JSON report."""
    try:
        model, model_cfg = load_model(checkpoint)
        label_map, tmin, tmax = _load_input_meta(dataset)
        manifest, _ = scan_dataset(dataset, "test", label_map, tmin, tmax)
        ds_a = ArrayDataset.from_manifest(manifest, "rgb", model_cfg.image_size)
        ds_b = ArrayDataset.from_manifest(manifest, "thermal", model_cfg.image_size)
        extractor = FeatureExtractor.default()
        translator = ModelTranslator(model, model_cfg)
        if which == "fid":
            if real_vs_real:
                translator = _RealPassthrough(ds_b.images, model_cfg)
            result = fid_protocol(translator, ds_a.images, ds_a.masks, ds_b.images,
                                  extractor, seed=seed, samplings=samplings)
        else:
            mode = "vehicle-only" if which == "lpips-vehicle" else "all"
            result = diversity_protocol(translator, ds_a.images, ds_a.masks, extractor,
                                        seed=seed, num_sources=num_sources,
                                        num_pairs=num_pairs, mode=mode,
                                        vehicle_component=VEHICLE_COMPONENT)
    except CoadainError as exc:
        raise click.ClickException(str(exc))
    report = result.as_dict()
    report["checkpoint"] = str(checkpoint)
    report["dataset"] = str(dataset)
    out_path = out_path or dataset / f"report_{which}.json"
    Path(out_path).write_text(json.dumps(report, indent=2) + "\n")
    if csv_path is not None:
        header = "protocol,seed,mean,std,checkpoint\n"
        line = f"{result.protocol},{seed},{result.mean},{result.std},{checkpoint}\n"
        csv_path = Path(csv_path)
        if not csv_path.exists():
            csv_path.write_text(header)
        with csv_path.open("a") as fh:
            fh.write(line)
    click.echo(f"{result.protocol}: mean={result.mean:.6g} std={result.std:.6g}")


class _RealPassthrough:
    """Feeds the real thermals through unchanged (FID self-distance mode)."""

    def __init__(self, thermals: torch.Tensor, config):
        self.thermals = thermals
        self.num_components = config.num_components
        self.style_dim = config.style_dim
        self.pos = 0

    def translate(self, images, masks, styles):
        n = self.thermals.shape[0]
        out = self.thermals[self.pos : self.pos + images.shape[0]]
        self.pos = (self.pos + images.shape[0]) % n
        return out


GALLERY_MARGIN = 4


def _load_panel(path: Path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise click.ClickException(f"cannot read {path}")
    if img.dtype == np.uint16:
        img = (img / 257.0).round().astype(np.uint8)
    if img.ndim == 2:
        img = cv2.cvtColor(img, cv2.COLOR_GRAY2BGR)
    return img


@main.command("gallery")
@click.argument("run_dir", type=click.Path(exists=True, path_type=Path))
@click.argument("out_path", type=click.Path(path_type=Path))
def cmd_gallery(run_dir: Path, out_path: Path):
    """Compose per-source grids from completed translate runs.

    Row one: the source rgb followed by the vehicle-resampled outputs;
    row two: the all-resampled outputs.
    """
    sample_dirs = sorted(p for p in run_dir.iterdir() if p.is_dir())
    if not sample_dirs:
        raise click.UsageError(f"no translated samples under {run_dir}")
    out_path.mkdir(parents=True, exist_ok=True)
    for sample in sample_dirs:
        rgb = _load_panel(sample / "rgb.png")
        row1 = [rgb] + [_load_panel(p) for p in sorted(sample.glob("vehicles_*.png"))]
        row2 = [_load_panel(p) for p in sorted(sample.glob("all_*.png"))]
        ph, pw = rgb.shape[:2]
        cols = max(len(row1), len(row2) + 1)
        rows = 2 if row2 else 1
        m = GALLERY_MARGIN
        grid = np.full((rows * ph + (rows + 1) * m, cols * pw + (cols + 1) * m, 3),
                       255, dtype=np.uint8)
        for j, panel in enumerate(row1):
            y, x = m, m + j * (pw + m)
            grid[y : y + ph, x : x + pw] = panel
        for j, panel in enumerate(row2):
            y, x = 2 * m + ph, m + (j + 1) * (pw + m)
            grid[y : y + ph, x : x + pw] = panel
        cv2.imwrite(str(out_path / f"{sample.name}.png"), grid)
    click.echo(f"wrote {len(sample_dirs)} grids to {out_path}")


if __name__ == "__main__":
    main()
