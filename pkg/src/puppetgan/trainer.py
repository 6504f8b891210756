"""Joint two-phase training.

Every step first takes one Adam step on all encoder/decoder weights against
the weighted total (generator view of the GAN terms), then one Adam step on
both discriminators against the discriminator GAN term computed on the
detached fakes of the same forward pass.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import torch

from . import checkpoint as ck
from .config import ExperimentConfig, TrainConfig
from .data import TrainingData, build_pool
from .errors import NumericalAbort
from .losses import (
    Batch,
    ForwardPass,
    InstanceNoise,
    LossLog,
    LossReport,
    LossWeights,
    attr_cycle_loss_1,
    attr_cycle_loss_2,
    cycle_loss,
    disentanglement_loss,
    gan_discriminator_term,
    gan_generator_term,
    generated_streams,
    is_finite,
    reconstruction_loss,
    total_loss,
)
from .nets import PuppetNets

log = logging.getLogger(__name__)


def lr_at(step: int, cfg: TrainConfig) -> Tuple[float, float]:
    """Polynomial decay from the initial rates to ``lr_end_fraction`` of them."""
    frac = min(max(step, 0), cfg.total_steps) / cfg.total_steps
    end = cfg.lr_end_fraction
    factor = (1.0 - end) * (1.0 - frac) ** cfg.lr_power + end
    return cfg.gen_lr * factor, cfg.disc_lr * factor


def noise_sigma_at(step: int, cfg: TrainConfig) -> float:
    decay = cfg.noise_decay_steps if cfg.noise_decay_steps > 0 else max(cfg.total_steps // 2, 1)
    return cfg.noise_sigma * max(0.0, 1.0 - step / decay)


def add_instance_noise(image, sigma: float, seed: int = 0):
    """clip(image + N(0, sigma^2), -1, 1); numpy in, numpy out."""
    x = np.asarray(image, dtype=np.float64)
    if sigma == 0:
        return np.array(image, copy=True)
    rng = np.random.default_rng(seed)
    out = np.clip(x + rng.normal(0.0, sigma, x.shape), -1.0, 1.0)
    return out.astype(np.asarray(image).dtype)


def make_optimizers(nets: PuppetNets, cfg: TrainConfig) -> Dict[str, torch.optim.Optimizer]:
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    return {
        "gen": torch.optim.Adam(list(nets.generator_parameters()), lr=cfg.gen_lr, betas=betas),
        "disc": torch.optim.Adam(list(nets.discriminator_parameters()), lr=cfg.disc_lr, betas=betas),
    }


def _check_finite(terms: Dict[str, torch.Tensor], step: int) -> None:
    for name, value in terms.items():
        if not is_finite(value):
            raise NumericalAbort(name, step, float(value.detach()) if torch.is_tensor(value) else float(value))


def train_step(nets: PuppetNets, optimizers: Dict[str, torch.optim.Optimizer], batch: Batch,
               cfg: TrainConfig, weights: LossWeights, step: int) -> LossReport:
    """One joint generator update followed by one discriminator update."""
    g_lr, d_lr = lr_at(step, cfg)
    for group in optimizers["gen"].param_groups:
        group["lr"] = g_lr
    for group in optimizers["disc"].param_groups:
        group["lr"] = d_lr

    noise = InstanceNoise(noise_sigma_at(step, cfg), seed=cfg.seed * 1_000_003 + step)
    fp = ForwardPass(nets, batch, noise)
    zero = torch.zeros(())
    terms = {"rec": reconstruction_loss(nets, batch, fp=fp), "cyc": cycle_loss(nets, batch, fp=fp)}
    if cfg.baseline_mode:
        terms.update(dis=zero, attr1=zero, attr2=zero)
    else:
        terms["dis"] = disentanglement_loss(nets, batch, fp=fp)
        terms["attr1"] = attr_cycle_loss_1(nets, batch, fp=fp)
        terms["attr2"] = attr_cycle_loss_2(nets, batch, fp=fp)
    fakes = generated_streams(fp)
    terms["gan_g"] = gan_generator_term(nets, fakes)
    _check_finite(terms, step)
    total = total_loss(weights, terms)

    optimizers["gen"].zero_grad(set_to_none=True)
    total.backward()
    optimizers["disc"].zero_grad(set_to_none=True)  # phase 1 never touches discriminators
    optimizers["gen"].step()

    reals = {"A": batch.real, "B": batch.b3}
    gan_d = gan_discriminator_term(nets, reals, {k: v.detach() for k, v in fakes.items()})
    _check_finite({"gan_d": gan_d}, step)
    optimizers["disc"].zero_grad(set_to_none=True)
    (weights.w_gan * gan_d).backward()
    optimizers["gen"].zero_grad(set_to_none=True)
    optimizers["disc"].step()

    vals = {k: float(v.detach()) for k, v in terms.items()}
    return LossReport(rec=vals["rec"], dis=vals["dis"], cyc=vals["cyc"], attr1=vals["attr1"],
                      attr2=vals["attr2"], gan_g=vals["gan_g"], gan_d=float(gan_d.detach()),
                      total=float(total_loss(weights, vals)))


def build_nets(cfg: ExperimentConfig) -> PuppetNets:
    torch.manual_seed(cfg.train.seed)
    return PuppetNets(cfg.model, split=not cfg.train.baseline_mode)


def nets_from_checkpoint(ckpt: ck.Checkpoint):
    from .config import from_dict

    cfg = from_dict(ckpt.config)
    nets = PuppetNets(cfg.model, split=not cfg.train.baseline_mode)
    ck.restore(ckpt, nets)
    nets.eval()
    return nets, cfg


@dataclass
class FitResult:
    checkpoint: Path
    global_step: int
    log_path: Path


def fit(cfg: ExperimentConfig, workspace, data: Optional[TrainingData] = None,
        resume: Optional[str] = None, progress_every: int = 100) -> FitResult:
    """Run ``train.total_steps`` steps, writing checkpoints and ``losses.csv``.

    ``resume`` is a checkpoint path; training continues from its global step
    with the same schedules.  On a numerical abort the last good state is
    saved as ``last-good.npz`` before the error propagates.
    """
    ws = Path(workspace)
    ws.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(max(cfg.train.threads, 1))
    if cfg.train.threads == 1:
        torch.use_deterministic_algorithms(True, warn_only=True)
    data = data if data is not None else build_pool(cfg.data, cfg.model.image_size)
    nets = build_nets(cfg)
    opts = make_optimizers(nets, cfg.train)
    chash, cdict = cfg.hash(), cfg.to_dict()
    start = 0
    if resume:
        state = ck.read_checkpoint(resume, expected_hash=chash)
        ck.restore(state, nets, opts)
        start = state.global_step
    cfg.dump(ws / "config.yaml")

    log_path = ws / "losses.csv"
    loss_log = LossLog(log_path, resume=bool(resume))
    nets.train()
    step = start
    last = ws / "last.npz"
    t0 = time.time()
    try:
        while step < cfg.train.total_steps:
            rng = np.random.default_rng([cfg.train.seed, step])
            batch = data.batch(rng, cfg.train.batch_size)
            report = train_step(nets, opts, batch, cfg.train, cfg.loss, step)
            step += 1
            loss_log.append(step, report)
            if progress_every and step % progress_every == 0:
                log.info("step %d/%d total=%.4f (%.2fs/step)", step, cfg.train.total_steps,
                         report.total, (time.time() - t0) / (step - start))
            if step % cfg.train.checkpoint_every == 0 or step == cfg.train.total_steps:
                ck.save_checkpoint(ws / f"ckpt-{step:06d}.npz", nets, opts, step, cdict, chash)
                ck.save_checkpoint(last, nets, opts, step, cdict, chash)
    except NumericalAbort:
        ck.save_checkpoint(ws / "last-good.npz", nets, opts, step, cdict, chash,
                           extra={"aborted": True})
        raise
    finally:
        loss_log.close()
    return FitResult(last, step, log_path)
