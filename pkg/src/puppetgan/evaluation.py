"""Checkpoint-level evaluation: wires domains, classifier and trained nets together."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from . import checkpoint as ck
from . import domains as dm
from .config import EvalConfig, ExperimentConfig, summary
from .data import domain_specs
from .metrics.classifier import DigitClassifier, cache_key, train_or_load
from .metrics.evaluate import (
    EvalSet,
    MetricsReport,
    build_eval_set,
    evaluate_model,
    manipulator,
)
from .metrics.saturation import SaturationReport, saturation_probe
from .trainer import nets_from_checkpoint

log = logging.getLogger(__name__)


def classifier_for(cfg: ExperimentConfig, cache_dir) -> DigitClassifier:
    """Train (or reuse) the class-preservation classifier for the real domain."""
    real_spec, _ = domain_specs(cfg.data, cfg.model.image_size)
    ev = cfg.eval
    if real_spec.style == dm.EXTERNAL:
        images, labels = real_spec.archive.images, real_spec.archive.labels
        key = cache_key("idx", cfg.data.idx_images, ev.classifier_steps)
    else:
        rng = np.random.default_rng(ev.seed + 1)
        images, params = dm.sample_real_batch(rng, real_spec, ev.classifier_pool)
        labels = np.array([p.class_id for p in params])
        key = cache_key(real_spec.to_dict(), ev.classifier_steps, ev.classifier_pool, ev.seed)
    clf = train_or_load(cache_dir, key, images, labels, ev.classifier_steps, seed=ev.seed)
    log.info("classifier held-out accuracy %.4f", clf.heldout_acc)
    return clf


def eval_set_for(cfg: ExperimentConfig) -> EvalSet:
    real_spec, syn_spec = domain_specs(cfg.data, cfg.model.image_size)
    ev = cfg.eval
    return build_eval_set(real_spec, syn_spec, cfg.data.aoi, ev.n_pairs, ev.n_vrest_inputs,
                          ev.n_references, ev.seed)


def load_for_eval(checkpoint_path, eval_cfg: Optional[EvalConfig] = None):
    state = ck.read_checkpoint(checkpoint_path)
    nets, cfg = nets_from_checkpoint(state)
    if state.config_hash != cfg.hash():
        raise ck.CheckpointMismatch(f"{checkpoint_path}: stored config does not match its hash")
    if eval_cfg is not None:
        cfg.eval = eval_cfg
    return nets, cfg, state


def model_tag(cfg: ExperimentConfig) -> str:
    return "cyclegan" if cfg.train.baseline_mode else "puppetgan"


def evaluate(checkpoint_path, eval_cfg: Optional[EvalConfig] = None, cache_dir=None,
             tag: Optional[str] = None) -> Tuple[MetricsReport, dict]:
    nets, cfg, state = load_for_eval(checkpoint_path, eval_cfg)
    cache_dir = Path(cache_dir) if cache_dir else Path(checkpoint_path).parent
    clf = classifier_for(cfg, cache_dir)
    report, series = evaluate_model(
        manipulator(nets), eval_set_for(cfg), cfg.data.aoi, clf,
        model_tag=tag or model_tag(cfg), config_summary=summary(cfg) + f" step={state.global_step}")
    return report, series


def saturation(checkpoint_path, eval_cfg: Optional[EvalConfig] = None, n_real: int = 8,
               n_sweep: int = 17) -> SaturationReport:
    """Sweep the reference AoI from twice the training minimum to twice the maximum."""
    nets, cfg, _ = load_for_eval(checkpoint_path, eval_cfg)
    real_spec, syn_spec = domain_specs(cfg.data, cfg.model.image_size)
    aoi = dm.canonical_aoi(cfg.data.aoi)
    lo, hi = syn_spec.attribute_ranges[aoi]
    if aoi == "rotation_deg":
        sweep = np.linspace(2 * lo, 2 * hi, n_sweep)
    else:
        sweep = np.linspace(lo / 2, 2 * hi, n_sweep)
    rng = np.random.default_rng(cfg.eval.seed + 2)
    reals, _ = dm.sample_real_batch(rng, real_spec, n_real)
    return saturation_probe(manipulator(nets), reals, syn_spec, aoi, sweep, seed=cfg.eval.seed)
