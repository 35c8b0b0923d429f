"""Alternating generator/discriminator training with a two-phase Adam schedule."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import random
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
import torch

from . import data as data_mod
from .data import PairedBatch, PairedDataset
from .networks import DiscriminatorConfig, GeneratorConfig, ModelBundle, build_bundle
from .objectives import (
    LossBreakdown,
    NumericError,
    ObjectiveSpec,
    discriminator_terms,
    generator_parts,
    make_preset,
    total_objective,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "csgan-checkpoint"
CHECKPOINT_VERSION = 1
LOSS_COLUMNS = ("epoch", "step", "adv_A", "adv_B", "cyc_A", "cyc_B", "cs_A", "cs_B", "total_G", "total_D", "lr")


class CheckpointError(RuntimeError):
    """Checkpoint cannot be used: wrong format, version, or config fingerprint."""


@dataclass(frozen=True)
class TrainConfig:
    epochs_total: int = 200
    epochs_constant: int = 100
    lr_initial: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 2
    seed: int = 0
    init_mean: float = 0.0
    init_std: float = 0.02
    objective: ObjectiveSpec = field(default_factory=lambda: make_preset("csgan"))
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    checkpoint_every: int = 10
    d_steps: int = 1
    generators_first: bool = True
    pool_size: int = 0

    def __post_init__(self):
        if not 0 <= self.epochs_constant <= self.epochs_total:
            raise ValueError("need 0 <= epochs_constant <= epochs_total")
        if self.lr_initial < 0:
            raise ValueError("lr_initial must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.d_steps < 1:
            raise ValueError("d_steps must be >= 1")
        want = self.objective.discriminator_in_channels(self.generator.out_channels)
        if self.discriminator.in_channels != want:
            object.__setattr__(self, "discriminator", replace(self.discriminator, in_channels=want))

    def fingerprint(self) -> str:
        """Hash of everything that fixes parameter shapes and loss semantics."""
        payload = {
            "generator": asdict(self.generator),
            "discriminator": asdict(self.discriminator),
            "method": self.objective.method,
            "conditional_D": self.objective.conditional_D,
            "bidirectional": self.objective.bidirectional,
        }
        blob = json.dumps(payload, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Constant ``lr_initial`` through ``epochs_constant``, then linear decay reaching 0 at ``epochs_total``."""
    if not 1 <= epoch <= cfg.epochs_total:
        raise ValueError(f"epoch {epoch} outside [1, {cfg.epochs_total}]")
    if epoch <= cfg.epochs_constant:
        return cfg.lr_initial
    span = cfg.epochs_total - cfg.epochs_constant
    return cfg.lr_initial * (1.0 - (epoch - cfg.epochs_constant) / span)


class ImagePool:
    """History buffer of generated images; ``size == 0`` passes images through."""

    def __init__(self, size: int, seed: int):
        self.size = size
        self.images: list[torch.Tensor] = []
        self.rng = np.random.default_rng([seed, 7])

    def query(self, images: torch.Tensor) -> torch.Tensor:
        if self.size == 0:
            return images
        out = []
        for img in images.detach():
            img = img.unsqueeze(0)
            if len(self.images) < self.size:
                self.images.append(img.clone())
                out.append(img)
            elif self.rng.random() < 0.5:
                j = int(self.rng.integers(self.size))
                out.append(self.images[j].clone())
                self.images[j] = img.clone()
            else:
                out.append(img)
        return torch.cat(out)

    def state_dict(self) -> dict:
        return {"images": [t.clone() for t in self.images], "rng": self.rng.bit_generator.state}

    def load_state_dict(self, state: dict) -> None:
        self.images = [t.clone() for t in state["images"]]
        self.rng.bit_generator.state = state["rng"]


@dataclass
class Checkpoint:
    epoch: int
    step: int
    config: dict
    fingerprint: str
    models: dict
    optimizers: dict
    rng: dict
    pools: dict = field(default_factory=dict)


class Trainer:
    """Owns the model bundle, both optimizers, and the step counter."""

    def __init__(self, cfg: TrainConfig, bundle: ModelBundle | None = None, dtype=torch.float32):
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        if bundle is None:
            bundle = build_bundle(cfg.generator, cfg.discriminator, cfg.seed, cfg.init_mean, cfg.init_std)
        self.bundle = bundle.to(dtype=dtype).train()
        self.dtype = dtype
        betas = (cfg.adam_beta1, cfg.adam_beta2)
        self.opt_G = torch.optim.Adam(bundle.generator_parameters(), lr=cfg.lr_initial, betas=betas, eps=cfg.adam_eps)
        self.opt_D = torch.optim.Adam(
            bundle.discriminator_parameters(), lr=cfg.lr_initial, betas=betas, eps=cfg.adam_eps
        )
        self.pool_A = ImagePool(cfg.pool_size, cfg.seed)
        self.pool_B = ImagePool(cfg.pool_size, cfg.seed + 1)
        self.epoch = 0
        self.step = 0

    def set_lr(self, lr: float) -> None:
        for opt in (self.opt_G, self.opt_D):
            for group in opt.param_groups:
                group["lr"] = lr

    def _set_d_trainable(self, flag: bool) -> None:
        for p in self.bundle.discriminator_parameters():
            p.requires_grad_(flag)

    def _update_generators(self, real_A, real_B):
        spec = self.cfg.objective
        self._set_d_trainable(False)
        try:
            parts, images = generator_parts(self.bundle, real_A, real_B, spec)
            out = total_objective(parts, spec.weights, spec.extra_weights)
            self.opt_G.zero_grad(set_to_none=True)
            out.total_G.backward()
            self.opt_G.step()
        finally:
            self._set_d_trainable(True)
        return out, images

    def _update_discriminators(self, real_A, real_B, images):
        spec = self.cfg.objective
        fake_B = self.pool_B.query(images["syn_B"])
        fake_A = self.pool_A.query(images["syn_A"]) if "syn_A" in images else None
        terms = {}
        for _ in range(self.cfg.d_steps):
            terms = discriminator_terms(self.bundle, real_A, real_B, fake_A, fake_B, spec)
            total = sum(terms.values())
            self.opt_D.zero_grad(set_to_none=True)
            total.backward()
            self.opt_D.step()
        return terms

    def training_step(self, batch: PairedBatch) -> LossBreakdown:
        """One joint update; returns the loss values computed before the update."""
        real_A = batch.real_A.to(self.dtype)
        real_B = batch.real_B.to(self.dtype)
        self.step += 1
        try:
            if self.cfg.generators_first:
                out, images = self._update_generators(real_A, real_B)
                d_terms = self._update_discriminators(real_A, real_B, images)
            else:
                with torch.no_grad():
                    _, images = generator_parts(self.bundle, real_A, real_B, self.cfg.objective)
                d_terms = self._update_discriminators(real_A, real_B, images)
                out, _ = self._update_generators(real_A, real_B)
            out = total_objective(out, self.cfg.objective.weights, self.cfg.objective.extra_weights, d_terms)
        except NumericError as exc:
            raise NumericError(f"{exc} at iteration {self.step} (epoch {self.epoch})") from exc
        return detach_breakdown(out)

    def run_epoch(self, ds: PairedDataset, on_step: Callable[[dict], None] | None = None) -> list[dict]:
        self.epoch += 1
        lr = lr_at(self.epoch, self.cfg)
        self.set_lr(lr)
        rows = []
        for batch in data_mod.batches(ds, self.cfg.batch_size, self.cfg.seed, self.epoch):
            values = self.training_step(batch).as_floats()
            row = {"epoch": self.epoch, "step": self.step, **values, "lr": lr}
            rows.append(row)
            if on_step is not None:
                on_step(row)
        return rows

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            epoch=self.epoch,
            step=self.step,
            config=config_to_dict(self.cfg),
            fingerprint=self.cfg.fingerprint(),
            models=self.bundle.state_dict(),
            optimizers={"G": self.opt_G.state_dict(), "D": self.opt_D.state_dict()},
            rng={
                "torch": torch.get_rng_state(),
                "numpy": np.random.get_state(),
                "python": random.getstate(),
            },
            pools={"A": self.pool_A.state_dict(), "B": self.pool_B.state_dict()},
        )

    def restore(self, ckpt: Checkpoint) -> None:
        if ckpt.fingerprint != self.cfg.fingerprint():
            raise CheckpointError(
                f"checkpoint fingerprint {ckpt.fingerprint} does not match config {self.cfg.fingerprint()}"
            )
        self.bundle.load_state_dict(ckpt.models)
        self.opt_G.load_state_dict(ckpt.optimizers["G"])
        self.opt_D.load_state_dict(ckpt.optimizers["D"])
        torch.set_rng_state(ckpt.rng["torch"])
        np.random.set_state(ckpt.rng["numpy"])
        random.setstate(ckpt.rng["python"])
        if ckpt.pools:
            self.pool_A.load_state_dict(ckpt.pools["A"])
            self.pool_B.load_state_dict(ckpt.pools["B"])
        self.epoch = ckpt.epoch
        self.step = ckpt.step


def detach_breakdown(b: LossBreakdown) -> LossBreakdown:
    def d(v):
        return v.detach() if isinstance(v, torch.Tensor) else v

    return LossBreakdown(
        adv_A=d(b.adv_A),
        adv_B=d(b.adv_B),
        cyc_A=d(b.cyc_A),
        cyc_B=d(b.cyc_B),
        cs_A=d(b.cs_A),
        cs_B=d(b.cs_B),
        extra={k: d(v) for k, v in b.extra.items()},
        total_G=d(b.total_G),
        total_D=d(b.total_D),
    )


def config_to_dict(cfg: TrainConfig) -> dict:
    out = asdict(cfg)
    out["objective"]["weights"] = asdict(cfg.objective.weights)
    out["objective"]["extra_weights"] = dict(cfg.objective.extra_weights)
    out["generator"] = asdict(cfg.generator)
    out["discriminator"] = {**asdict(cfg.discriminator), "widths": list(cfg.discriminator.widths)}
    return out


def config_from_dict(d: dict) -> TrainConfig:
    from .objectives import LossWeights

    d = dict(d)
    obj = dict(d.pop("objective"))
    obj["weights"] = LossWeights(**obj["weights"])
    disc = dict(d.pop("discriminator"))
    disc["widths"] = tuple(disc["widths"])
    return TrainConfig(
        objective=ObjectiveSpec(**obj),
        generator=GeneratorConfig(**d.pop("generator")),
        discriminator=DiscriminatorConfig(**disc),
        **d,
    )


def save_checkpoint(ckpt: Checkpoint, path: str) -> str:
    """Write atomically: a failed write leaves any previous file at ``path`` intact."""
    payload = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, **asdict_shallow(ckpt)}
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp = path + ".tmp"
    try:
        torch.save(payload, tmp)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def asdict_shallow(ckpt: Checkpoint) -> dict:
    return {k: getattr(ckpt, k) for k in Checkpoint.__dataclass_fields__}


def load_checkpoint(path: str, expected_fingerprint: str | None = None) -> Checkpoint:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a csgan checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path} has checkpoint version {payload.get('version')}, expected {CHECKPOINT_VERSION}")
    ckpt = Checkpoint(**{k: payload[k] for k in Checkpoint.__dataclass_fields__})
    if expected_fingerprint is not None and ckpt.fingerprint != expected_fingerprint:
        raise CheckpointError(
            f"checkpoint fingerprint {ckpt.fingerprint} does not match expected {expected_fingerprint}"
        )
    return ckpt


def bundle_from_checkpoint(ckpt: Checkpoint) -> tuple[ModelBundle, TrainConfig]:
    cfg = config_from_dict(ckpt.config)
    if cfg.fingerprint() != ckpt.fingerprint:
        raise CheckpointError("checkpoint config does not reproduce its own fingerprint")
    bundle = build_bundle(cfg.generator, cfg.discriminator)
    bundle.load_state_dict(ckpt.models)
    return bundle.eval(), cfg


class LossLog:
    """Append-only CSV of per-step losses."""

    def __init__(self, path: str):
        self.path = path
        if not os.path.exists(path) or os.path.getsize(path) == 0:
            with open(path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(LOSS_COLUMNS)

    def append(self, row: dict) -> None:
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow([_fmt(row[c]) for c in LOSS_COLUMNS])


def _fmt(v) -> str:
    return str(v) if isinstance(v, int) else repr(float(v))


def read_loss_log(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class TrainResult:
    trainer: Trainer
    log: list[dict]
    checkpoints: list[str]

    @property
    def bundle(self) -> ModelBundle:
        return self.trainer.bundle


def train(
    cfg: TrainConfig,
    ds: PairedDataset,
    out_dir: str | None = None,
    resume: Checkpoint | None = None,
    stop_after_epoch: int | None = None,
) -> TrainResult:
    """Run epochs ``1..epochs_total`` (or continue after ``resume.epoch``).

    With ``out_dir`` set, per-step losses go to ``loss.csv`` and checkpoints to
    ``checkpoints/epoch_XXXX.pt`` every ``checkpoint_every`` epochs, at epoch 0,
    and at the final epoch.
    """
    trainer = Trainer(cfg)
    if resume is not None:
        trainer.restore(resume)
    loss_log = None
    saved: list[str] = []
    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
        loss_log = LossLog(os.path.join(out_dir, "loss.csv"))

    def save(epoch: int) -> None:
        if out_dir is not None:
            path = os.path.join(out_dir, "checkpoints", f"epoch_{epoch:04d}.pt")
            saved.append(save_checkpoint(trainer.checkpoint(), path))

    if trainer.epoch == 0:
        save(0)
    last = cfg.epochs_total if stop_after_epoch is None else min(stop_after_epoch, cfg.epochs_total)
    rows: list[dict] = []
    while trainer.epoch < last:
        epoch_rows = trainer.run_epoch(ds, on_step=loss_log.append if loss_log else None)
        rows.extend(epoch_rows)
        mean_g = sum(r["total_G"] for r in epoch_rows) / len(epoch_rows)
        log.info("epoch %d/%d total_G %.4f lr %.2e", trainer.epoch, cfg.epochs_total, mean_g, epoch_rows[-1]["lr"])
        if trainer.epoch % cfg.checkpoint_every == 0 or trainer.epoch == last:
            save(trainer.epoch)
    return TrainResult(trainer, rows, saved)
