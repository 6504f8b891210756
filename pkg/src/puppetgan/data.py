"""Pre-rendered training pools and the on-disk archive layout of generate-data."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from . import domains as dm
from .config import DataConfig
from .errors import ConfigError, DataFormatError
from .losses import Batch

ARCHIVE_FILES = {
    "real_images": "real-images.idx3-ubyte",
    "real_labels": "real-labels.idx1-ubyte",
    "b1": "triplets-b1.idx3-ubyte",
    "b2": "triplets-b2.idx3-ubyte",
    "b3": "triplets-b3.idx3-ubyte",
    "triplet_labels": "triplets-b3-labels.idx1-ubyte",
    "real_params": "real-params.csv",
    "triplet_params": "triplet-params.csv",
}
MANIFEST = "manifest.json"


def domain_specs(data: DataConfig, image_size: int) -> Tuple[dm.DomainSpec, dm.DomainSpec]:
    """(real, synthetic) specs for a data config, attaching an IDX archive if named."""
    style = data.real_style
    if data.idx_images and style != dm.EXTERNAL:
        style = dm.EXTERNAL
    real, syn = dm.domain_pair(data.domains, image_size, style)
    if style == dm.EXTERNAL:
        if not (data.idx_images and data.idx_labels):
            raise ConfigError("external_idx real domain needs data.idx_images and data.idx_labels")
        real = dm.attach_idx(real, data.idx_images, data.idx_labels)
    return real, syn


@dataclass
class TrainingData:
    real: np.ndarray  # (n, H, W) float32
    real_labels: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray
    real_params: Optional[List[dm.AttributeVector]] = None
    triplet_params: Optional[List[tuple]] = None

    def batch(self, rng: np.random.Generator, size: int) -> Batch:
        i = rng.integers(len(self.real), size=size)
        j = rng.integers(len(self.b1), size=size)
        return Batch.from_arrays(self.real[i], self.b1[j], self.b2[j], self.b3[j])


def build_pool(data: DataConfig, image_size: int) -> TrainingData:
    if data.archive:
        return read_archive(data.archive, image_size)
    real_spec, syn_spec = domain_specs(data, image_size)
    rng = np.random.default_rng(data.seed)
    if real_spec.style == dm.EXTERNAL:
        real, real_params = real_spec.archive.images, None
        labels = real_spec.archive.labels
    else:
        real, real_params = dm.sample_real_batch(rng, real_spec, data.pool_size)
        labels = np.array([p.class_id for p in real_params])
    b1, b2, b3, tparams = dm.sample_triplet_batch(rng, syn_spec, data.aoi, data.pool_size)
    return TrainingData(real, labels, b1, b2, b3, real_params, tparams)


def _write_params(path: Path, rows: List[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def write_archive(pool: TrainingData, out_dir) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p = {k: out / v for k, v in ARCHIVE_FILES.items()}
    dm.write_idx_images(p["real_images"], dm.to_bytes(pool.real))
    dm.write_idx_labels(p["real_labels"], pool.real_labels)
    for k in ("b1", "b2", "b3"):
        dm.write_idx_images(p[k], dm.to_bytes(getattr(pool, k)))
    written = [p["real_images"], p["real_labels"], p["b1"], p["b2"], p["b3"]]
    if pool.triplet_params is not None:
        dm.write_idx_labels(p["triplet_labels"], [t[2].class_id for t in pool.triplet_params])
        rows = []
        for t in pool.triplet_params:
            row = {}
            for tag, prm in zip(("b1", "b2", "b3"), t):
                row.update({f"{tag}_{k}": v for k, v in prm.as_row().items()})
            rows.append(row)
        _write_params(p["triplet_params"], rows)
        written += [p["triplet_labels"], p["triplet_params"]]
    if pool.real_params is not None:
        _write_params(p["real_params"], [prm.as_row() for prm in pool.real_params])
        written.append(p["real_params"])
    return written


def read_archive(archive_dir, image_size: Optional[int] = None) -> TrainingData:
    d = Path(archive_dir)
    p = {k: d / v for k, v in ARCHIVE_FILES.items()}
    for key in ("real_images", "real_labels", "b1", "b2", "b3"):
        if not p[key].exists():
            raise DataFormatError(f"archive {d} lacks {p[key].name}")
    real = dm.load_idx(p["real_images"], p["real_labels"], image_size)
    trip = [dm.from_bytes(dm.read_idx_images(p[k])) for k in ("b1", "b2", "b3")]
    if not (len(trip[0]) == len(trip[1]) == len(trip[2])):
        raise DataFormatError(f"archive {d}: triplet files differ in length")
    if image_size is not None and trip[0].shape[1:] != (image_size, image_size):
        trip = [dm._resize(t, image_size) for t in trip]
    return TrainingData(real.images, real.labels, *trip)


def write_manifest(out_dir, entries: dict) -> Path:
    path = Path(out_dir) / MANIFEST
    path.write_text(json.dumps(entries, indent=2, sort_keys=True))
    return path
