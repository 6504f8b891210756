"""Procedural digit domains, demonstration triplets and IDX archives.

Glyphs are seven-segment-style skeletons rasterized as anti-aliased
strokes.  The synthetic domain renders the skeleton exactly; the
real-proxy domain perturbs control points, per-stroke width and warps the
sampling grid, standing in for handwriting.  Every image carries the
parameters it was rendered from, so attribute measurements have ground
truth.

Pixel convention: model-facing arrays are float32 in [-1, 1] with -1 as
background; files hold unsigned bytes.
"""
from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    ConfigError,
    ContractError,
    DegenerateRenderError,
    IdxFormatError,
    RangeError,
    StateError,
)

SYNTHETIC = "synthetic_sans"
REAL_PROXY = "real_proxy_handwritten"
EXTERNAL = "external_idx"
STYLES = (SYNTHETIC, REAL_PROXY, EXTERNAL)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

# glyph height (in pixels) at size_scale 1, as a fraction of the image side
BASE_HEIGHT = 0.5

# Control points in glyph units: x right, y up, box of width 0.5 and height 1.
_PTS = {
    "TL": (-0.25, 0.5), "TR": (0.25, 0.5),
    "ML": (-0.25, 0.0), "MR": (0.25, 0.0),
    "BL": (-0.25, -0.5), "BR": (0.25, -0.5),
    "CT": (0.0, 0.5), "CB": (0.0, -0.5),
}
_SEGMENTS = {
    "a": ("TL", "TR"), "b": ("TR", "MR"), "c": ("MR", "BR"), "d": ("BL", "BR"),
    "e": ("ML", "BL"), "f": ("TL", "ML"), "g": ("ML", "MR"), "i": ("CT", "CB"),
}
DIGIT_SEGMENTS = {
    0: "abcdef",
    1: "i",
    2: "abged",
    3: "abgcd",
    4: "fgbc",
    5: "afgcd",
    6: "afgedc",
    7: "abc",
    8: "abcdefg",
    9: "abcdfg",
}

FIELDS = ("class_id", "rotation_deg", "size_scale", "stroke_width", "offset_xy")
_AOI_ALIASES = {"rotation": "rotation_deg", "size": "size_scale",
                "class": "class_id", "stroke": "stroke_width", "offset": "offset_xy"}
# range keys backing each AttributeVector field
_RANGE_KEYS = {
    "class_id": ("class_id",),
    "rotation_deg": ("rotation_deg",),
    "size_scale": ("size_scale",),
    "stroke_width": ("stroke_width",),
    "offset_xy": ("offset_x", "offset_y"),
}

DEFAULT_RANGES = {
    "class_id": (0, 9),
    "rotation_deg": (-40.0, 40.0),
    "size_scale": (0.6, 1.3),
    "stroke_width": (1.5, 2.5),
    "offset_x": (-1.5, 1.5),
    "offset_y": (-1.5, 1.5),
}


@dataclass(frozen=True)
class AttributeVector:
    class_id: int
    rotation_deg: float
    size_scale: float
    stroke_width: float
    offset_xy: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        vals = [self.rotation_deg, self.size_scale, self.stroke_width, *self.offset_xy]
        if not np.all(np.isfinite(vals)):
            raise RangeError(f"non-finite attribute in {self}")
        if self.size_scale <= 0 or self.stroke_width <= 0:
            raise RangeError(f"size_scale and stroke_width must be positive: {self}")

    def get(self, name: str):
        return getattr(self, canonical_aoi(name))

    def as_row(self) -> Dict[str, float]:
        return {
            "class_id": self.class_id,
            "rotation_deg": self.rotation_deg,
            "size_scale": self.size_scale,
            "stroke_width": self.stroke_width,
            "offset_x": self.offset_xy[0],
            "offset_y": self.offset_xy[1],
        }

    @classmethod
    def from_row(cls, row) -> "AttributeVector":
        return cls(
            class_id=int(row["class_id"]),
            rotation_deg=float(row["rotation_deg"]),
            size_scale=float(row["size_scale"]),
            stroke_width=float(row["stroke_width"]),
            offset_xy=(float(row["offset_x"]), float(row["offset_y"])),
        )


@dataclass(frozen=True)
class Perturbation:
    """Real-proxy style noise. All zeros reproduces the clean skeleton."""

    jitter: float = 0.04  # control-point std, glyph units
    stroke_noise: float = 0.2  # relative std of per-stroke width
    warp: float = 0.8  # elastic displacement amplitude, pixels

    @classmethod
    def zero(cls) -> "Perturbation":
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class LabeledImages:
    images: np.ndarray  # (n, H, W) float32 in [-1, 1]
    labels: np.ndarray  # (n,) int64

    def __len__(self):
        return len(self.images)


@dataclass(frozen=True)
class DomainSpec:
    name: str
    style: str
    attribute_ranges: Dict[str, Tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_RANGES))
    image_size: int = 32
    perturbation: Perturbation = field(default_factory=Perturbation)
    archive: Optional[LabeledImages] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.style not in STYLES:
            raise ConfigError(f"unknown domain style {self.style!r}")
        if self.image_size < 16:
            raise ConfigError(f"image_size must be >= 16, got {self.image_size}")
        ranges = {**DEFAULT_RANGES, **{k: tuple(v) for k, v in self.attribute_ranges.items()}}
        unknown = set(ranges) - set(DEFAULT_RANGES)
        if unknown:
            raise ConfigError(f"unknown attribute range(s): {sorted(unknown)}")
        for key, (lo, hi) in ranges.items():
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ConfigError(f"empty or invalid range for {key}: {(lo, hi)}")
        object.__setattr__(self, "attribute_ranges", ranges)

    def with_archive(self, archive: LabeledImages) -> "DomainSpec":
        return dataclasses.replace(self, archive=archive)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "style": self.style,
            "attribute_ranges": {k: list(v) for k, v in self.attribute_ranges.items()},
            "image_size": self.image_size,
            "perturbation": dataclasses.asdict(self.perturbation),
        }


@dataclass
class GlyphImage:
    pixels: np.ndarray
    source_params: Optional[AttributeVector] = None


@dataclass
class SyntheticTriplet:
    b1: GlyphImage
    b2: GlyphImage
    b3: GlyphImage
    aoi_name: str


def canonical_aoi(name: str) -> str:
    name = _AOI_ALIASES.get(name, name)
    if name not in FIELDS:
        raise ConfigError(f"unknown attribute {name!r}; expected one of {FIELDS}")
    return name


# ---------------------------------------------------------------- presets

def domain_pair(preset: str = "matched", image_size: int = 32,
                real_style: str = REAL_PROXY) -> Tuple[DomainSpec, DomainSpec]:
    """(real, synthetic) domain specs for a named shift configuration.

    ``smaller_synth`` shrinks synthetic glyphs strictly below the real size
    range; ``unscaled_real`` removes size variation from the real domain.
    """
    real_ranges = dict(DEFAULT_RANGES)
    syn_ranges = dict(DEFAULT_RANGES)
    if preset == "matched":
        pass
    elif preset == "smaller_synth":
        syn_ranges["size_scale"] = (0.35, 0.5)
    elif preset == "unscaled_real":
        real_ranges["size_scale"] = (1.0, 1.0)
    else:
        raise ConfigError(f"unknown domain preset {preset!r}")
    real = DomainSpec("real", real_style, real_ranges, image_size)
    syn = DomainSpec("synthetic", SYNTHETIC, syn_ranges, image_size)
    return real, syn


# -------------------------------------------------------------- rendering

def check_in_range(params: AttributeVector, spec: DomainSpec) -> None:
    row = params.as_row()
    for key, (lo, hi) in spec.attribute_ranges.items():
        if not lo <= row[key] <= hi:
            raise RangeError(f"{key}={row[key]} outside [{lo}, {hi}] of domain {spec.name!r}")
    if params.class_id not in DIGIT_SEGMENTS:
        raise RangeError(f"class_id {params.class_id} has no glyph")


def _pixel_grid(size: int) -> Tuple[np.ndarray, np.ndarray]:
    # pixel centres, origin at image centre, x right, y up
    c = np.arange(size) + 0.5 - size / 2.0
    return np.meshgrid(c, -c)


def _rasterize(segments: np.ndarray, widths: np.ndarray, px: np.ndarray,
               py: np.ndarray) -> np.ndarray:
    p = np.stack([px.ravel(), py.ravel()], axis=1)[:, None, :]  # (N, 1, 2)
    a = segments[None, :, 0, :]
    ab = segments[None, :, 1, :] - a
    t = np.sum((p - a) * ab, axis=-1) / np.maximum(np.sum(ab * ab, axis=-1), 1e-12)
    t = np.clip(t, 0.0, 1.0)
    d = np.linalg.norm(p - (a + t[..., None] * ab), axis=-1)  # (N, S)
    cover = np.clip(widths[None, :] / 2.0 + 0.5 - d, 0.0, 1.0)
    return cover.max(axis=1).reshape(px.shape)


def _render(params: AttributeVector, size: int, pert: Perturbation,
            rng: Optional[np.random.Generator]) -> np.ndarray:
    names = DIGIT_SEGMENTS[params.class_id]
    pts = {k: np.array(v, dtype=np.float64) for k, v in _PTS.items()}
    px, py = _pixel_grid(size)
    widths = np.full(len(names), float(params.stroke_width))
    if rng is not None:
        if pert.jitter > 0:
            pts = {k: v + rng.normal(0.0, pert.jitter, 2) for k, v in pts.items()}
        if pert.stroke_noise > 0:
            widths = widths * np.clip(1.0 + rng.normal(0.0, pert.stroke_noise, len(names)), 0.5, 1.5)
        if pert.warp > 0:
            k = rng.uniform(0.5, 1.5, size=(2, 2)) * 2 * np.pi / size
            ph = rng.uniform(0, 2 * np.pi, size=2)
            amp = pert.warp * rng.uniform(0.5, 1.0, size=2)
            dx = amp[0] * np.sin(k[0, 0] * px + k[0, 1] * py + ph[0])
            dy = amp[1] * np.sin(k[1, 0] * px + k[1, 1] * py + ph[1])
            px, py = px + dx, py + dy

    scale = BASE_HEIGHT * size * params.size_scale
    th = np.deg2rad(params.rotation_deg)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    # offset_xy is in image orientation: +x right, +y down
    shift = np.array([params.offset_xy[0], -params.offset_xy[1]])
    segs = np.array([[pts[s0], pts[s1]] for s0, s1 in (_SEGMENTS[n] for n in names)])
    segs = segs * scale @ rot.T + shift
    return _rasterize(segs, widths, px, py)


def _to_glyph(intensity: np.ndarray, params: Optional[AttributeVector]) -> GlyphImage:
    lit = int(np.count_nonzero(intensity > 0.05))
    if lit < 4:
        raise DegenerateRenderError(f"glyph rasterized to {lit} lit pixels: {params}")
    pixels = (2.0 * intensity - 1.0).astype(np.float32)
    return GlyphImage(pixels=pixels, source_params=params)


def render_glyph(params: AttributeVector, spec: DomainSpec, seed: int = 0) -> GlyphImage:
    """Render ``params`` in the style of ``spec``.

    Synthetic renders ignore ``seed``; real-proxy renders draw their
    perturbations from it.  The result is a pure function of the inputs.
    """
    check_in_range(params, spec)
    rng = np.random.default_rng(seed) if spec.style == REAL_PROXY else None
    pert = spec.perturbation if spec.style == REAL_PROXY else Perturbation.zero()
    return _to_glyph(_render(params, spec.image_size, pert, rng), params)


# --------------------------------------------------------------- sampling

def sample_params(rng: np.random.Generator, spec: DomainSpec) -> AttributeVector:
    r = spec.attribute_ranges
    lo, hi = r["class_id"]
    return AttributeVector(
        class_id=int(rng.integers(int(lo), int(hi) + 1)),
        rotation_deg=float(rng.uniform(*r["rotation_deg"])),
        size_scale=float(rng.uniform(*r["size_scale"])),
        stroke_width=float(rng.uniform(*r["stroke_width"])),
        offset_xy=(float(rng.uniform(*r["offset_x"])), float(rng.uniform(*r["offset_y"]))),
    )


def sample_triplet_params(rng: np.random.Generator, spec: DomainSpec, aoi_name: str):
    """Parameters of one triplet: b1 and b2 independent, b3 = b2 with b1's AoI."""
    aoi = canonical_aoi(aoi_name)
    for key in _RANGE_KEYS[aoi]:
        if key not in spec.attribute_ranges:
            raise ConfigError(f"domain {spec.name!r} has no range for {key}")
    p1 = sample_params(rng, spec)
    p2 = sample_params(rng, spec)
    p3 = dataclasses.replace(p2, **{aoi: getattr(p1, aoi)})
    return p1, p2, p3


def check_triplet(t: SyntheticTriplet) -> None:
    """Raise ContractError unless the sharing contract holds exactly."""
    aoi = canonical_aoi(t.aoi_name)
    p1, p2, p3 = (g.source_params for g in (t.b1, t.b2, t.b3))
    if p1 is None or p2 is None or p3 is None:
        raise ContractError("triplet images lack source_params")
    if getattr(p1, aoi) != getattr(p3, aoi):
        raise ContractError(f"b1 and b3 disagree on {aoi}")
    for name in FIELDS:
        if name != aoi and getattr(p2, name) != getattr(p3, name):
            raise ContractError(f"b2 and b3 disagree on non-AoI field {name}")


def sample_triplet(rng_seed: int, spec: DomainSpec, aoi_name: str) -> SyntheticTriplet:
    if spec.style != SYNTHETIC:
        raise ConfigError(f"triplets are drawn from a synthetic domain, got {spec.style!r}")
    rng = np.random.default_rng(rng_seed)
    params = sample_triplet_params(rng, spec, aoi_name)
    b1, b2, b3 = (render_glyph(p, spec) for p in params)
    return SyntheticTriplet(b1, b2, b3, canonical_aoi(aoi_name))


def sample_real(rng_seed: int, spec: DomainSpec) -> GlyphImage:
    rng = np.random.default_rng(rng_seed)
    return _sample_real(rng, spec)


def _sample_real(rng: np.random.Generator, spec: DomainSpec) -> GlyphImage:
    if spec.style == EXTERNAL:
        if spec.archive is None or len(spec.archive) == 0:
            raise StateError(f"external domain {spec.name!r} has no loaded archive")
        idx = int(rng.integers(len(spec.archive)))
        return GlyphImage(pixels=spec.archive.images[idx], source_params=None)
    if spec.style != REAL_PROXY:
        raise ConfigError(f"sample_real needs a real-style domain, got {spec.style!r}")
    params = sample_params(rng, spec)
    return render_glyph(params, spec, seed=int(rng.integers(2**63)))


def sample_real_batch(rng: np.random.Generator, spec: DomainSpec, n: int):
    """n real images stacked into (n, H, W) plus their params (None for IDX)."""
    glyphs = [_sample_real(rng, spec) for _ in range(n)]
    return np.stack([g.pixels for g in glyphs]), [g.source_params for g in glyphs]


def sample_triplet_batch(rng: np.random.Generator, spec: DomainSpec, aoi_name: str, n: int):
    """Arrays (b1, b2, b3), each (n, H, W), and the list of parameter triples."""
    params = [sample_triplet_params(rng, spec, aoi_name) for _ in range(n)]
    imgs = [[render_glyph(p, spec).pixels for p in trip] for trip in params]
    b1, b2, b3 = (np.stack(col) for col in zip(*imgs))
    return b1, b2, b3, params


def render_batch(params: Sequence[AttributeVector], spec: DomainSpec,
                 seeds: Optional[Iterable[int]] = None) -> np.ndarray:
    seeds = list(seeds) if seeds is not None else [0] * len(params)
    return np.stack([render_glyph(p, spec, s).pixels for p, s in zip(params, seeds)])


# -------------------------------------------------------------------- IDX

def _read_header(buf: bytes, path, magic: int, ndim: int) -> Tuple[int, ...]:
    need = 4 * (1 + ndim)
    if len(buf) < need:
        raise IdxFormatError(path, len(buf), f"truncated header, need {need} bytes")
    found = struct.unpack(">I", buf[:4])[0]
    if found != magic:
        raise IdxFormatError(path, 0, f"bad magic 0x{found:08x}, expected 0x{magic:08x}")
    return struct.unpack(f">{ndim}I", buf[4:need])


def read_idx_images(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    n, rows, cols = _read_header(buf, path, IMAGE_MAGIC, 3)
    payload = n * rows * cols
    if len(buf) - 16 < payload:
        raise IdxFormatError(path, len(buf), f"truncated payload: {len(buf) - 16} of {payload} bytes")
    return np.frombuffer(buf, dtype=np.uint8, count=payload, offset=16).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (n,) = _read_header(buf, path, LABEL_MAGIC, 1)
    if len(buf) - 8 < n:
        raise IdxFormatError(path, len(buf), f"truncated payload: {len(buf) - 8} of {n} bytes")
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=8)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images)
    if images.dtype != np.uint8 or images.ndim != 3:
        raise ValueError("expected a (n, rows, cols) uint8 array")
    with open(path, "wb") as f:
        f.write(struct.pack(">4I", IMAGE_MAGIC, *images.shape))
        f.write(np.ascontiguousarray(images).tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">2I", LABEL_MAGIC, len(labels)))
        f.write(labels.tobytes())


def to_bytes(pixels: np.ndarray) -> np.ndarray:
    """[-1, 1] floats to 8-bit grayscale."""
    return np.clip(np.rint((np.asarray(pixels) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_bytes(raw: np.ndarray) -> np.ndarray:
    return (raw.astype(np.float32) / np.float32(127.5) - np.float32(1.0)).astype(np.float32)


def _resize(images: np.ndarray, size: int) -> np.ndarray:
    from PIL import Image

    out = np.empty((len(images), size, size), dtype=np.float32)
    for i, img in enumerate(images):
        im = Image.fromarray(img.astype(np.float32), mode="F")
        out[i] = np.asarray(im.resize((size, size), Image.BILINEAR), dtype=np.float32)
    return np.clip(out, -1.0, 1.0)


def load_idx(images_path, labels_path, image_size: Optional[int] = None) -> LabeledImages:
    """Read an IDX image/label pair, mapping bytes linearly onto [-1, 1].

    Images are bilinearly resized to ``image_size`` when it differs from
    the stored resolution.
    """
    raw = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(raw) != len(labels):
        raise IdxFormatError(labels_path, 4, f"label count {len(labels)} != image count {len(raw)}")
    images = from_bytes(raw)
    if image_size is not None and images.shape[1:] != (image_size, image_size):
        images = _resize(images, image_size)
    return LabeledImages(images=images, labels=labels.astype(np.int64))


def attach_idx(spec: DomainSpec, images_path, labels_path) -> DomainSpec:
    if spec.style != EXTERNAL:
        raise ConfigError("only external_idx domains take an archive")
    return spec.with_archive(load_idx(images_path, labels_path, spec.image_size))


def params_table(params: Sequence[AttributeVector]) -> List[Dict[str, float]]:
    return [p.as_row() for p in params]
