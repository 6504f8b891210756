"""Response of a manipulator to AoI values beyond the training range."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import List

import numpy as np
import torch

from .. import domains as dm
from .moments import measure_all

MONOTONE_TOL = {"rotation_deg": 5.0, "size_scale": 0.25}


@dataclass
class SaturationReport:
    attribute: str
    sweep: List[float]
    response: List[float]
    train_range: tuple
    in_range_min: float
    in_range_max: float
    outputs_in_range: bool
    monotone: bool
    clamped: bool
    grid: np.ndarray = field(repr=False, default=None)  # (n_real, n_sweep, H, W)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("grid")
        return d


def saturation_probe(model, real_images: np.ndarray, syn_spec: dm.DomainSpec, aoi: str,
                     sweep: np.ndarray, seed: int = 0, tol: float = None) -> SaturationReport:
    """Sweep the reference AoI (other reference fields random) over ``sweep``.

    The response at each sweep value is the median measured AoI of the
    outputs over all real inputs.  ``clamped`` holds when responses beyond the
    training range stay within ``tol`` of the in-range extremes.
    """
    aoi = dm.canonical_aoi(aoi)
    tol = MONOTONE_TOL[aoi] if tol is None else tol
    lo, hi = syn_spec.attribute_ranges[aoi]
    wide = dict(syn_spec.attribute_ranges)
    wide[aoi] = (min(lo, float(np.min(sweep))), max(hi, float(np.max(sweep))))
    spec = dataclasses.replace(syn_spec, attribute_ranges=wide)
    rng = np.random.default_rng(seed)
    reals = torch.as_tensor(np.asarray(real_images), dtype=torch.float32).unsqueeze(1)
    n = len(reals)

    response, cols, ok = [], [], True
    for v in sweep:
        params = [dataclasses.replace(dm.sample_params(rng, syn_spec), **{aoi: float(v)})
                  for _ in range(n)]
        refs = torch.from_numpy(dm.render_batch(params, spec)).unsqueeze(1)
        out = model(refs, reals).squeeze(1).numpy()
        ok &= bool(np.all(np.isfinite(out)) and out.min() >= -1.0 and out.max() <= 1.0)
        meas = measure_all(out)[aoi]
        response.append(float(np.nanmedian(meas)) if np.any(np.isfinite(meas)) else float("nan"))
        cols.append(out)

    sweep = np.asarray(sweep, dtype=float)
    resp = np.asarray(response)
    inside = (sweep >= lo) & (sweep <= hi)
    rmin, rmax = float(np.nanmin(resp[inside])), float(np.nanmax(resp[inside]))
    monotone = bool(np.all(np.diff(resp) >= -tol))
    outside = ~inside
    clamped = bool(np.all((resp[outside] >= rmin - tol) & (resp[outside] <= rmax + tol)))
    grid = np.stack(cols, axis=1)
    return SaturationReport(aoi, sweep.tolist(), resp.tolist(), (lo, hi), rmin, rmax, ok,
                            monotone, clamped, grid)
