"""Two-stage training protocol with sub-network freezing.

Stage order is fixed: ``lf_dn -> lf_dr -> lf_sr`` at 16 kHz, then
``full_mid_high`` at 48 kHz.  Each stage freezes everything trained
before it and optimizes only its own sub-network(s).
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses
from .config import DmfConfig
from .data import Manifest, batch_iterator
from .model import (DmfNet, load_checkpoint, run_lf_on_fullband,
                    save_checkpoint)

log = logging.getLogger(__name__)

STAGE_ORDER = ("lf_dn", "lf_dr", "lf_sr", "full_mid_high")


class TrainingDiverged(RuntimeError):
    """Raised when a stage hits a non-finite loss."""


@dataclass(frozen=True)
class TrainingStage:
    name: str
    trainable: tuple[str, ...]
    frozen: tuple[str, ...]
    lr: float
    max_steps: int
    patience: int
    sample_rate: int

    def __post_init__(self):
        if set(self.trainable) & set(self.frozen):
            raise ValueError("a sub-network cannot be both trainable and frozen")


def stages_for(cfg: DmfConfig) -> list[TrainingStage]:
    opt, tr = cfg.optimizer, cfg.train
    out = [
        TrainingStage("lf_dn", ("dn",), (), opt.lr_pretrain,
                      tr.max_steps_per_stage, tr.patience, 16000),
        TrainingStage("lf_dr", ("dr",), ("dn",), opt.lr_pretrain,
                      tr.max_steps_per_stage, tr.patience, 16000),
    ]
    if cfg.use_sr_net:
        out.append(TrainingStage("lf_sr", ("sr",), ("dn", "dr"), opt.lr_pretrain,
                                 tr.max_steps_per_stage, tr.patience, 16000))
    lf = ("dn", "dr", "sr") if cfg.use_sr_net else ("dn", "dr")
    out.append(TrainingStage("full_mid_high", ("mf", "hf"), lf, opt.lr_full,
                             tr.max_steps_per_stage, tr.patience, 48000))
    return out


def param_hash(model: DmfNet, subnet: str) -> str:
    """Bit-level hash of one sub-network's parameters."""
    h = hashlib.sha256()
    for name, p in sorted(model.subnet(subnet).state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def stage_loss(model: DmfNet, batch, stage_name: str, cfg: DmfConfig) -> torch.Tensor:
    """Stage-selected loss on one spectral batch."""
    lc = cfg.loss
    if stage_name in ("lf_dn", "lf_dr", "lf_sr"):
        noisy_mag, noisy_phase = batch.noisy_mag, batch.noisy_phase
        if stage_name == "lf_dn":
            dn = model.dn(noisy_mag.unsqueeze(1), noisy_mag)
            return losses.loss_dn(dn, batch.target_dn_mag, lc)
        if stage_name == "lf_dr":
            dn = model.dn(noisy_mag.unsqueeze(1), noisy_mag)
            dr = model.dr(torch.stack([dn, noisy_mag], dim=1), dn)
            return losses.loss_dr(dr, batch.target_clean_mag, lc)
        lf = model.lf_forward(noisy_mag, noisy_phase)
        return losses.loss_sr(lf.refined_real, lf.refined_imag,
                              batch.target_clean_real, batch.target_clean_imag, lc)

    # full_mid_high: split the 481-bin tensors into the three bands
    lo, mi, hi = cfg.bands.low, cfg.bands.mid, cfg.bands.high
    noisy_low = batch.noisy_mag[..., lo[0]:lo[1]]
    phase_low = batch.noisy_phase[..., lo[0]:lo[1]]
    lf = run_lf_on_fullband(model, noisy_low, phase_low, cfg)
    lf_mag = torch.sqrt(lf.refined_real**2 + lf.refined_imag**2)
    est_mid = model.mf_forward(batch.noisy_mag[..., mi[0]:mi[1]], lf_mag)
    est_high = model.hf_forward(batch.noisy_mag[..., hi[0]:hi[1]], lf_mag, est_mid)
    return losses.loss_full(est_mid, est_high,
                            batch.target_clean_mag[..., mi[0]:mi[1]],
                            batch.target_clean_mag[..., hi[0]:hi[1]], lc)


@dataclass
class StageResult:
    stage: str
    checkpoint: Path
    history: list[float] = field(default_factory=list)
    valid_history: list[float] = field(default_factory=list)
    best_valid: float = float("inf")


def _dump_diagnostics(out_dir: Path, stage: str, step: int, batch) -> Path:
    path = out_dir / f"diverged_{stage}_step{step}.json"
    info = {"stage": stage, "step": step,
            "noisy_mag_max": float(batch.noisy_mag.max()),
            "noisy_mag_finite": bool(torch.isfinite(batch.noisy_mag).all()),
            "target_finite": bool(torch.isfinite(batch.target_clean_mag).all())}
    path.write_text(json.dumps(info, indent=2))
    return path


def run_stage(stage: TrainingStage, model: DmfNet, train_manifest: Manifest,
              cfg: DmfConfig, out_dir, valid_manifest: Manifest | None = None,
              log_every: int = 50) -> StageResult:
    """Train one stage; returns the best-validation checkpoint path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.train.master_seed + STAGE_ORDER.index(stage.name))

    model.unfreeze(model.active_subnets())
    model.freeze(stage.frozen)
    # sub-networks not in this stage at all are frozen too
    untouched = [n for n in model.active_subnets()
                 if n not in stage.trainable and n not in stage.frozen]
    model.freeze(untouched)

    fe = cfg.frontend if stage.sample_rate == 48000 else cfg.frontend_lf
    data_seed = cfg.train.master_seed * 1000 + STAGE_ORDER.index(stage.name)
    train_iter = batch_iterator(train_manifest, cfg, fe, seed=data_seed)
    vman = valid_manifest or train_manifest

    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=stage.lr,
                           betas=(cfg.optimizer.beta1, cfg.optimizer.beta2),
                           eps=cfg.optimizer.epsilon)

    result = StageResult(stage.name, out_dir / f"{stage.name}_best.pt")
    bad_validations = 0
    model.train()
    for step in range(1, stage.max_steps + 1):
        batch = next(train_iter)
        opt.zero_grad()
        loss = stage_loss(model, batch, stage.name, cfg)
        if not torch.isfinite(loss):
            dump = _dump_diagnostics(out_dir, stage.name, step, batch)
            raise TrainingDiverged(f"non-finite loss at step {step}; see {dump}")
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, cfg.train.grad_clip_norm)
        opt.step()
        result.history.append(float(loss.detach()))
        if step % log_every == 0:
            log.info("stage %s step %d loss %.6f", stage.name, step,
                     float(loss.detach()))

        if step % cfg.train.validate_every == 0 or step == stage.max_steps:
            vloss = evaluate_stage_loss(model, stage, vman, cfg)
            result.valid_history.append(vloss)
            log.info("stage %s step %d valid %.6f", stage.name, step, vloss)
            if vloss < result.best_valid:
                result.best_valid = vloss
                save_checkpoint(result.checkpoint, model,
                                extra={"stage": stage.name, "step": step,
                                       "valid_loss": vloss,
                                       "master_seed": cfg.train.master_seed})
                bad_validations = 0
            else:
                bad_validations += 1
                if bad_validations >= stage.patience:
                    log.info("stage %s early stop at step %d", stage.name, step)
                    break
    if not result.checkpoint.exists():
        save_checkpoint(result.checkpoint, model, extra={"stage": stage.name})
    return result


def evaluate_stage_loss(model: DmfNet, stage: TrainingStage, manifest: Manifest,
                        cfg: DmfConfig, max_batches: int = 4) -> float:
    fe = cfg.frontend if stage.sample_rate == 48000 else cfg.frontend_lf
    it = batch_iterator(manifest, cfg, fe, seed=12345, epochs=1)
    was_training = model.training
    model.eval()
    vals = []
    with torch.no_grad():
        for i, batch in enumerate(it):
            if i >= max_batches:
                break
            vals.append(float(stage_loss(model, batch, stage.name, cfg)))
    if was_training:
        model.train()
    return float(np.mean(vals))


def run_pipeline(cfg: DmfConfig, manifest_16k: Manifest, manifest_48k: Manifest,
                 out_dir, resume: str | None = None,
                 start_stage: str | None = None) -> Path:
    """Run every stage in order; returns the final checkpoint path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        model, _ = load_checkpoint(resume, cfg)
    else:
        torch.manual_seed(cfg.train.master_seed)
        model = DmfNet(cfg)

    started = start_stage is None
    last = None
    for stage in stages_for(cfg):
        if not started:
            if stage.name == start_stage:
                started = True
            else:
                continue
        manifest = manifest_48k if stage.sample_rate == 48000 else manifest_16k
        last = run_stage(stage, model, manifest, cfg, out_dir)
        model, _ = load_checkpoint(last.checkpoint, cfg)
    if last is None:
        raise ValueError(f"unknown start stage {start_stage!r}")
    final = out_dir / "final.pt"
    save_checkpoint(final, model, extra={"pipeline": "complete",
                                         "master_seed": cfg.train.master_seed})
    return final
