"""Table-style evaluation of a trained (or stub) manipulation model.

A *manipulator* is any callable ``f(references, reals) -> outputs`` on
(n, 1, H, W) tensors; :func:`manipulator` adapts trained nets, where the
output is ``C_A(reference, real)``.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch

from .. import domains as dm
from ..errors import DataFormatError, UndefinedMeasurementError
from .classifier import MIN_HELDOUT_ACC, DigitClassifier, matching_accuracy
from .moments import measure_all
from .stats import js_divergence, pearson_r

log = logging.getLogger(__name__)

CSV_COLUMNS = ("model", "attribute", "acc", "r_attr_syn", "r_rest_syn", "v_rest",
               "j_attr_syn", "j_rest_syn", "j_attr_gen", "j_rest_gen")
# measured stand-ins for non-AoI attributes, per AoI
REST_MEASURES = {
    "rotation_deg": ("size_scale", "mass", "centroid_x", "centroid_y"),
    "size_scale": ("rotation_deg", "centroid_x", "centroid_y"),
}
# the non-AoI attribute whose distribution shift is reported in the J columns
PRIMARY_REST = {"rotation_deg": "size_scale", "size_scale": "rotation_deg"}
MAX_DROP_FRACTION = 0.05

Manipulator = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass
class MetricsReport:
    model: str
    attribute: str
    acc: float
    r_attr_syn: float
    r_rest_syn: float
    v_rest: float
    j_attr_syn: float
    j_rest_syn: float
    j_attr_gen: float
    j_rest_gen: float
    config_summary: str = ""
    r_rest_each: Dict[str, float] = field(default_factory=dict)
    n_pairs: int = 0
    n_dropped: int = 0
    classifier_heldout_acc: float = float("nan")
    warnings: List[str] = field(default_factory=list)

    def row(self) -> Dict[str, object]:
        return {k: getattr(self, k) for k in CSV_COLUMNS}

    def validate(self) -> None:
        for k in ("r_attr_syn", "r_rest_syn"):
            if not -1.0 <= getattr(self, k) <= 1.0:
                raise ValueError(f"{k} outside [-1, 1]")
        if not 0.0 <= self.acc <= 1.0:
            raise ValueError("acc outside [0, 1]")
        for k in ("j_attr_syn", "j_rest_syn", "j_attr_gen", "j_rest_gen"):
            if not 0.0 <= getattr(self, k) <= 1.0:
                raise ValueError(f"{k} outside [0, 1]")
        if not self.v_rest >= 0:
            raise ValueError("v_rest negative")


def append_csv(path, report: MetricsReport) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        if new:
            w.writeheader()
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in report.row().items()})


def read_csv(path) -> List[Dict[str, object]]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise DataFormatError(f"{path}: missing column(s) {missing}")
        rows = []
        for r in reader:
            rows.append({k: (r[k] if k in ("model", "attribute") else float(r[k])) for k in CSV_COLUMNS})
        return rows


# -------------------------------------------------------------- manipulators

def manipulator(nets, domain: str = "A", chunk: int = 256) -> Manipulator:
    def run(refs: torch.Tensor, reals: torch.Tensor) -> torch.Tensor:
        outs = []
        with torch.no_grad():
            for r, a in zip(refs.split(chunk), reals.split(chunk)):
                outs.append(nets.combine(domain, r, a))
        return torch.cat(outs)

    return run


def _t(x) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(x), dtype=torch.float32)
    return t.unsqueeze(1) if t.dim() == 3 else t


def v_rest(model: Manipulator, real_inputs, reference_sets) -> float:
    """Mean pixel variance of outputs across references that share the AoI.

    ``reference_sets[i]`` is an (m, H, W) stack used with ``real_inputs[i]``.
    """
    vals = []
    for a, refs in zip(real_inputs, reference_sets):
        refs_t = _t(refs)
        reals_t = _t(np.repeat(np.asarray(a)[None], len(refs_t), axis=0))
        out = model(refs_t, reals_t).double()
        vals.append(out.var(dim=0, unbiased=False).mean().item())
    return float(np.mean(vals))


def reference_sets(rng: np.random.Generator, spec: dm.DomainSpec, aoi: str, n_sets: int,
                   n_refs: int) -> List[np.ndarray]:
    """Synthetic references sharing one AoI value per set, other fields random."""
    aoi = dm.canonical_aoi(aoi)
    sets = []
    for _ in range(n_sets):
        anchor = dm.sample_params(rng, spec)
        params = [dataclasses.replace(dm.sample_params(rng, spec), **{aoi: getattr(anchor, aoi)})
                  for _ in range(n_refs)]
        sets.append(dm.render_batch(params, spec))
    return sets


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalSet:
    real: np.ndarray
    real_labels: Optional[np.ndarray]
    syn: np.ndarray
    syn_params: List[dm.AttributeVector]
    vrest_reals: np.ndarray
    vrest_refs: List[np.ndarray]


def build_eval_set(real_spec: dm.DomainSpec, syn_spec: dm.DomainSpec, aoi: str, n_pairs: int,
                   n_vrest: int, n_refs: int, seed: int) -> EvalSet:
    rng = np.random.default_rng(seed)
    real, rparams = dm.sample_real_batch(rng, real_spec, n_pairs)
    labels = None if rparams[0] is None else np.array([p.class_id for p in rparams])
    sparams = [dm.sample_params(rng, syn_spec) for _ in range(n_pairs)]
    syn = dm.render_batch(sparams, syn_spec)
    vreals = real[:n_vrest]
    vrefs = reference_sets(rng, syn_spec, aoi, len(vreals), n_refs)
    return EvalSet(real, labels, syn, sparams, vreals, vrefs)


def _safe_r(x, y) -> Tuple[float, Optional[str]]:
    try:
        return pearson_r(x, y), None
    except UndefinedMeasurementError as exc:
        return 0.0, str(exc)


def _safe_j(x, y, label) -> Tuple[float, Optional[str]]:
    x, y = np.asarray(x), np.asarray(y)
    x, y = x[np.isfinite(x)], y[np.isfinite(y)]
    try:
        return js_divergence(x, y), None
    except UndefinedMeasurementError as exc:
        return 1.0, f"{label}: {exc}"


def evaluate_model(model: Manipulator, eval_set: EvalSet, aoi: str, classifier: DigitClassifier,
                   model_tag: str = "puppetgan", config_summary: str = "") -> Tuple[MetricsReport, dict]:
    """Compute every report field; returns (report, paired measurement series)."""
    aoi = dm.canonical_aoi(aoi)
    if aoi not in REST_MEASURES:
        raise ValueError(f"evaluation supports rotation_deg and size_scale, got {aoi}")
    gen = model(_t(eval_set.syn), _t(eval_set.real)).squeeze(1).numpy()
    m_real, m_syn, m_gen = (measure_all(x) for x in (eval_set.real, eval_set.syn, gen))

    keep = np.isfinite(m_syn[aoi]) & np.isfinite(m_gen[aoi]) & np.isfinite(m_real[aoi])
    for k in REST_MEASURES[aoi]:
        keep &= np.isfinite(m_syn[k]) & np.isfinite(m_gen[k])
    n_drop = int((~keep).sum())
    warnings = []
    if n_drop > MAX_DROP_FRACTION * len(keep):
        warnings.append(f"dropped {n_drop}/{len(keep)} samples with undefined measurements")

    r_attr, w = _safe_r(m_syn[aoi][keep], m_gen[aoi][keep])
    warnings += [f"r_attr: {w}"] if w else []
    r_each = {}
    for k in REST_MEASURES[aoi]:
        r_each[k], w = _safe_r(m_syn[k][keep], m_gen[k][keep])
        warnings += [f"r_rest[{k}]: {w}"] if w else []
    r_rest = max(abs(v) for v in r_each.values())

    acc = matching_accuracy(classifier.predict(gen), classifier.predict(eval_set.real))
    if classifier.heldout_acc is not None and classifier.heldout_acc < MIN_HELDOUT_ACC:
        warnings.append(f"classifier held-out accuracy {classifier.heldout_acc:.3f} "
                        f"below {MIN_HELDOUT_ACC}")
    vr = v_rest(model, eval_set.vrest_reals, eval_set.vrest_refs)

    rest = PRIMARY_REST[aoi]
    js = {}
    for name, (x, y) in {
        "j_attr_syn": (m_real[aoi], m_syn[aoi]),
        "j_rest_syn": (m_real[rest], m_syn[rest]),
        "j_attr_gen": (m_real[aoi], m_gen[aoi]),
        "j_rest_gen": (m_real[rest], m_gen[rest]),
    }.items():
        js[name], w = _safe_j(x, y, name)
        warnings += [w] if w else []

    report = MetricsReport(
        model=model_tag, attribute=aoi, acc=acc, r_attr_syn=r_attr, r_rest_syn=r_rest,
        v_rest=vr, config_summary=config_summary, r_rest_each=r_each,
        n_pairs=len(keep), n_dropped=n_drop,
        classifier_heldout_acc=classifier.heldout_acc or float("nan"), warnings=warnings, **js)
    for w in warnings:
        log.warning(w)
    series = {f"{src}_{k}": v for src, m in (("real", m_real), ("syn", m_syn), ("gen", m_gen))
              for k, v in m.items()}
    series["keep"] = keep
    return report, series


def write_sidecar(csv_path, report: MetricsReport, series: dict) -> Tuple[Path, Path]:
    """Details that do not fit the fixed CSV header: JSON extras and npz series."""
    base = Path(csv_path).with_suffix("")
    stem = f"{base}-{report.model}-{report.attribute}"
    jpath, npath = Path(stem + ".json"), Path(stem + "-series.npz")
    extras = dataclasses.asdict(report)
    jpath.write_text(json.dumps(extras, indent=2, default=float))
    np.savez(npath, **series)
    return jpath, npath
