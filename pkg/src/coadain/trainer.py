"""Bidirectional unpaired training loop with deterministic checkpointing.

Each step updates the discriminators first, then the generators.  The
generator pass per direction: reconstruct within-domain, translate with
Gaussian-sampled target styles, re-encode the translation for latent
reconstruction, score it adversarially, and (RGB-to-thermal only) apply
the diversity penalty between two translations whose style sets differ
only in the component of interest.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import Tensor

from .data import ArrayDataset, batch_iterator
from .exceptions import CheckpointFormatError, NumericError, ValidationError
from .losses import (
    LossReport,
    LossWeights,
    adversarial_losses,
    discriminator_loss,
    image_recon_loss,
    latent_recon_loss,
    ocdp_loss,
    total_generator_loss,
)
from .networks import ModelConfig, StyleCodes, TranslationModel, sample_style_codes

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    iterations: int = 500
    batch_size: int = 2
    learning_rate: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    weight_decay: float = 1e-4
    seed: int = 0
    checkpoint_every: int = 500
    log_every: int = 10
    loss_weights: LossWeights = field(default_factory=LossWeights)
    component_of_interest: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")


@dataclass
class TrainState:
    model: TranslationModel
    model_config: ModelConfig
    train_config: TrainConfig
    opt_gen: torch.optim.Adam
    opt_dis: torch.optim.Adam
    style_rng: torch.Generator
    iteration: int = 0


def _make_optimizers(model: TranslationModel, cfg: TrainConfig):
    opt_gen = torch.optim.Adam(model.generator_parameters(), lr=cfg.learning_rate,
                               betas=(cfg.adam_beta1, cfg.adam_beta2),
                               weight_decay=cfg.weight_decay)
    opt_dis = torch.optim.Adam(model.discriminator_parameters(), lr=cfg.learning_rate,
                               betas=(cfg.adam_beta1, cfg.adam_beta2),
                               weight_decay=cfg.weight_decay)
    return opt_gen, opt_dis


def init_state(model_config: ModelConfig, train_config: TrainConfig) -> TrainState:
    """Build model, optimizers and sampling RNG from the configured seed."""
    torch.manual_seed(train_config.seed)
    model = TranslationModel(model_config)
    opt_gen, opt_dis = _make_optimizers(model, train_config)
    style_rng = torch.Generator().manual_seed(train_config.seed + 1)
    return TrainState(model=model, model_config=model_config, train_config=train_config,
                      opt_gen=opt_gen, opt_dis=opt_dis, style_rng=style_rng)


def _resample_component(styles: StyleCodes, k: int, rng: torch.Generator) -> StyleCodes:
    codes = styles.codes.clone()
    codes[:, k] = torch.randn(codes.shape[0], codes.shape[2], generator=rng)
    return StyleCodes(codes=codes, present=styles.present.clone())


def _generator_direction_terms(state: TrainState, images, masks, src: str, dst: str,
                               with_ocdp: bool) -> dict[str, Tensor]:
    model, cfg = state.model, state.train_config
    stream = f"{src}2{dst}"
    content = model.encode_content(images, masks, src)
    own_styles = model.encode_styles(images, masks, src)
    recon = model.decode(content, masks, own_styles, src)

    sampled = sample_style_codes(images.shape[0], state.model_config,
                                 generator=state.style_rng)
    translated = model.decode(content, masks, sampled, dst)
    content_rt = model.encode_content(translated, masks, dst)
    styles_rt = model.encode_styles(translated, masks, dst)
    content_term, style_term = latent_recon_loss(content_rt, content, styles_rt, sampled, masks)

    terms = {
        f"{stream}/image_recon": image_recon_loss(recon, images),
        f"{stream}/content_recon": content_term,
        f"{stream}/style_recon": style_term,
        f"{stream}/adv": adversarial_losses(model.discriminate(translated, dst), "generator"),
    }
    if with_ocdp and cfg.loss_weights.w_ocdp > 0:
        coi = cfg.component_of_interest
        resampled = _resample_component(sampled, coi, state.style_rng)
        translated2 = model.decode(content, masks, resampled, dst)
        penalty = ocdp_loss(translated, translated2, masks[:, coi], sampled, resampled, coi)
        if penalty is not None:
            terms[f"{stream}/ocdp"] = penalty
    return terms


def train_step(batch_a: tuple[Tensor, Tensor], batch_b: tuple[Tensor, Tensor],
               state: TrainState) -> tuple[LossReport, LossReport]:
    """One discriminator update followed by one generator update.

    Returns the (discriminator, generator) loss reports.  NaN in any loss
    aborts the step before the corresponding optimizer update.
    """
    model, cfg = state.model, state.train_config
    images_a, masks_a = batch_a
    images_b, masks_b = batch_b

    with torch.no_grad():
        styles_b = sample_style_codes(images_a.shape[0], state.model_config,
                                      generator=state.style_rng)
        styles_a = sample_style_codes(images_b.shape[0], state.model_config,
                                      generator=state.style_rng)
        fake_b = model.translate(images_a, masks_a, styles_b, "a2b")
        fake_a = model.translate(images_b, masks_b, styles_a, "b2a")

    dis_b, rep_b = discriminator_loss(model.discriminate(images_b, "b"),
                                      model.discriminate(fake_b, "b"),
                                      cfg.loss_weights, "a2b")
    dis_a, rep_a = discriminator_loss(model.discriminate(images_a, "a"),
                                      model.discriminate(fake_a, "a"),
                                      cfg.loss_weights, "b2a")
    dis_total = dis_b + dis_a
    if not bool(torch.isfinite(dis_total)):
        raise NumericError(
            f"discriminator loss is not finite at iteration {state.iteration}: "
            f"{rep_b.terms} {rep_a.terms}"
        )
    state.opt_dis.zero_grad(set_to_none=True)
    dis_total.backward()
    state.opt_dis.step()
    dis_report = LossReport(role="discriminator", terms={**rep_b.terms, **rep_a.terms},
                            total=float(dis_total.detach()))

    terms = _generator_direction_terms(state, images_a, masks_a, "a", "b", with_ocdp=True)
    terms.update(_generator_direction_terms(state, images_b, masks_b, "b", "a", with_ocdp=False))
    gen_total, gen_report = total_generator_loss(terms, cfg.loss_weights)
    state.opt_gen.zero_grad(set_to_none=True)
    gen_total.backward()
    state.opt_gen.step()

    state.iteration += 1
    return dis_report, gen_report


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    """Write a single archive of parameters, optimizer state and metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "iteration": state.iteration,
        "model_config": dataclasses.asdict(state.model_config),
        "train_config": dataclasses.asdict(state.train_config),
        "model_state": state.model.state_dict(),
        "opt_gen_state": state.opt_gen.state_dict(),
        "opt_dis_state": state.opt_dis.state_dict(),
        "style_rng_state": state.style_rng.get_state(),
    }
    torch.save(payload, path)


_REQUIRED_KEYS = ("format_version", "iteration", "model_config", "train_config",
                  "model_state", "opt_gen_state", "opt_dis_state", "style_rng_state")


def _read_checkpoint(path: str | Path) -> dict:
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    for key in _REQUIRED_KEYS:
        if key not in payload:
            raise CheckpointFormatError(f"checkpoint {path} is missing field {key!r}")
    if payload["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointFormatError(
            f"checkpoint format version {payload['format_version']} is not supported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    return payload


def load_checkpoint(path: str | Path) -> TrainState:
    """Restore a full training state (model, optimizers, RNG, iteration)."""
    payload = _read_checkpoint(path)
    mc = payload["model_config"]
    mc["image_size"] = tuple(mc["image_size"])
    model_config = ModelConfig(**mc)
    tc = payload["train_config"]
    tc["loss_weights"] = LossWeights(**tc["loss_weights"])
    train_config = TrainConfig(**tc)
    model = TranslationModel(model_config)
    model.load_state_dict(payload["model_state"])
    opt_gen, opt_dis = _make_optimizers(model, train_config)
    opt_gen.load_state_dict(payload["opt_gen_state"])
    opt_dis.load_state_dict(payload["opt_dis_state"])
    style_rng = torch.Generator()
    style_rng.set_state(payload["style_rng_state"])
    return TrainState(model=model, model_config=model_config, train_config=train_config,
                      opt_gen=opt_gen, opt_dis=opt_dis, style_rng=style_rng,
                      iteration=payload["iteration"])


def load_model(path: str | Path) -> tuple[TranslationModel, ModelConfig]:
    """Restore just the model for inference."""
    state = load_checkpoint(path)
    state.model.eval()
    return state.model, state.model_config


def fit(model_config: ModelConfig, train_config: TrainConfig,
        dataset_a: ArrayDataset, dataset_b: ArrayDataset,
        run_dir: str | Path, resume_from: str | Path | None = None) -> Path:
    """Run the training loop; returns the path of the final checkpoint.

    Writes periodic checkpoints and a JSONL metrics log under ``run_dir``.
    On a NaN abort the last good checkpoint is left in place.
    """
    if len(dataset_a) == 0 or len(dataset_b) == 0:
        raise ValidationError("datasets must be non-empty")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        state = load_checkpoint(resume_from)
        # the caller's config is authoritative (e.g. a raised iteration
        # target); weights, optimizer and RNG state come from the archive
        state.train_config = train_config
    else:
        state = init_state(model_config, train_config)
    cfg = state.train_config

    batches_a = batch_iterator(len(dataset_a), cfg.batch_size, cfg.seed + 101,
                               start_iteration=state.iteration)
    batches_b = batch_iterator(len(dataset_b), cfg.batch_size, cfg.seed + 202,
                               start_iteration=state.iteration)
    log_path = run_dir / "metrics.jsonl"
    final_path = run_dir / "checkpoint_final.pt"

    with log_path.open("a") as log:
        while state.iteration < cfg.iterations:
            idx_a = next(batches_a)
            idx_b = next(batches_b)
            batch_a = (dataset_a.images[idx_a], dataset_a.masks[idx_a])
            batch_b = (dataset_b.images[idx_b], dataset_b.masks[idx_b])
            try:
                dis_report, gen_report = train_step(batch_a, batch_b, state)
            except NumericError:
                log.flush()
                raise
            it = state.iteration
            if it % cfg.log_every == 0 or it == cfg.iterations:
                record = {"iteration": it, "time": time.time()}
                record.update(dis_report.as_record())
                record.update(gen_report.as_record())
                log.write(json.dumps(record) + "\n")
                log.flush()
            if it % cfg.checkpoint_every == 0:
                save_checkpoint(state, run_dir / f"checkpoint_{it:07d}.pt")
    save_checkpoint(state, final_path)
    return final_path
