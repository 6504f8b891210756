"""Supervised L1 constraints, LS-GAN terms and their weighted total.

All penalties are mean absolute differences over pixels and batch.  Notation
in comments: ``a`` real image, ``(b1, b2, b3)`` a demonstration triplet,
``b`` a lone synthetic image (``b3`` is used), ``C_K(x, y)`` the combination
operator decoding into domain K.

Each public loss builds a :class:`ForwardPass`; the trainer shares a single
one across all terms so common intermediates are computed once.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .errors import ContractError
from .nets import combine_codes

STREAMS = tuple(itertools.product("AB", repeat=3))  # (K1, K2, K3)
LOG_COLUMNS = ("step", "rec", "dis", "cyc", "attr1", "attr2", "gan_g", "gan_d", "total")


@dataclass
class LossWeights:
    w_rec: float = 10.0
    w_dis: float = 10.0
    w_cyc: float = 10.0
    w_attr: float = 5.0
    w_rest: float = 3.0
    w_gan: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(**{k: v * factor for k, v in asdict(self).items()})


@dataclass
class LossReport:
    rec: float = 0.0
    dis: float = 0.0
    cyc: float = 0.0
    attr1: float = 0.0
    attr2: float = 0.0
    gan_g: float = 0.0
    gan_d: float = 0.0
    total: float = 0.0

    def row(self, step: int) -> Dict[str, float]:
        return {"step": step, **asdict(self)}


@dataclass
class Batch:
    real: torch.Tensor
    b1: torch.Tensor
    b2: torch.Tensor
    b3: torch.Tensor

    def __post_init__(self):
        if len(self.real) == 0 or len(self.b1) == 0:
            raise ValueError("batch needs at least one real image and one triplet")
        if not (len(self.b1) == len(self.b2) == len(self.b3)):
            raise ValueError("triplet components differ in length")

    @classmethod
    def from_arrays(cls, real, b1, b2, b3, dtype=torch.float32) -> "Batch":
        t = [torch.as_tensor(np.asarray(x)).to(dtype).unsqueeze(1) for x in (real, b1, b2, b3)]
        return cls(*t)

    @classmethod
    def from_triplets(cls, real, triplets, check: bool = False) -> "Batch":
        """Build from GlyphImage-style objects; ``check`` enforces the sharing contract."""
        from .domains import check_triplet

        if check:
            for t in triplets:
                check_triplet(t)
        stack = lambda gs: np.stack([g.pixels for g in gs])
        return cls.from_arrays(stack(real), stack([t.b1 for t in triplets]),
                               stack([t.b2 for t in triplets]), stack([t.b3 for t in triplets]))


class InstanceNoise:
    """Gaussian pixel noise, clipped to [-1, 1], drawn once per named image."""

    def __init__(self, sigma: float = 0.0, seed: int = 0):
        self.sigma = float(sigma)
        self.gen = torch.Generator().manual_seed(int(seed))
        self._cache: Dict[str, torch.Tensor] = {}

    def __call__(self, key: str, x: torch.Tensor) -> torch.Tensor:
        if self.sigma == 0:
            return x
        if key not in self._cache:
            eps = torch.randn(x.shape, generator=self.gen, dtype=x.dtype)
            self._cache[key] = eps
        return torch.clamp(x + self.sigma * self._cache[key], -1.0, 1.0)


def l1(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return (x - y).abs().mean()


class ForwardPass:
    """Memoized encodings and combinations for one batch."""

    def __init__(self, nets, batch: Batch, noise: Optional[InstanceNoise] = None):
        self.nets = nets
        self.batch = batch
        self.noise = noise or InstanceNoise(0.0)
        self._memo: Dict[str, object] = {}

    def _get(self, key, fn):
        if key not in self._memo:
            self._memo[key] = fn()
        return self._memo[key]

    @property
    def a(self):
        return self.batch.real

    @property
    def b(self):
        return self.batch.b3

    def enc(self, key: str, image_fn):
        return self._get("e:" + key, lambda: self.nets.encode(image_fn()))

    def noisy(self, key: str, x: torch.Tensor) -> torch.Tensor:
        return self.noise(key, x)

    def C(self, domain, x_key, x_fn, y_key, y_fn):
        key = f"C{domain}({x_key},{y_key})"
        return self._get(key, lambda: combine_codes(
            self.nets, domain, self.enc(x_key, x_fn), self.enc(y_key, y_fn)))

    # named images
    def img(self, key: str) -> torch.Tensor:
        sources = {
            "a": lambda: self.a,
            "b": lambda: self.b,
            "b1": lambda: self.batch.b1,
            "n(b1)": lambda: self.noisy("b1", self.batch.b1),
            "n(b2)": lambda: self.noisy("b2", self.batch.b2),
            "n(a)": lambda: self.noisy("a", self.a),
            "bc~": lambda: self.C("B", "a", self.src("a"), "a", self.src("a")),
            "ac~": lambda: self.C("A", "b", self.src("b"), "b", self.src("b")),
            "a~": lambda: self.C("A", "b1", self.src("b1"), "a", self.src("a")),
            "b~": lambda: self.C("B", "a", self.src("a"), "b", self.src("b")),
            "n(a~)": lambda: self.noisy("a~", self.img("a~")),
            "n(sg(b~))": lambda: self.noisy("b~", self.img("b~").detach()),
        }
        return self._get("i:" + key, sources[key])

    def src(self, key: str):
        return lambda: self.img(key)

    def CC(self, domain: str, x: str, y: str) -> torch.Tensor:
        """C_domain(x, y) on named images."""
        return self.C(domain, x, self.src(x), y, self.src(y))


# ---------------------------------------------------------------- penalties

def _fp(nets, batch, noise=None, fp=None) -> ForwardPass:
    return fp if fp is not None else ForwardPass(nets, batch, noise)


def reconstruction_loss(nets, batch: Batch, fp: Optional[ForwardPass] = None) -> torch.Tensor:
    """Mean over the two domains of |x - C_K(x, x)|."""
    f = _fp(nets, batch, fp=fp)
    return 0.5 * (l1(f.a, f.CC("A", "a", "a")) + l1(f.b, f.CC("B", "b", "b")))


def disentanglement_loss(nets, batch: Batch, noise: Optional[InstanceNoise] = None,
                         fp: Optional[ForwardPass] = None) -> torch.Tensor:
    """|b3 - C_B(noisy b1, noisy b2)|."""
    f = _fp(nets, batch, noise, fp)
    return l1(f.batch.b3, f.CC("B", "n(b1)", "n(b2)"))


def cycle_terms(nets, batch: Batch, fp: Optional[ForwardPass] = None):
    """(A side, B side): |a - C_A(bc, bc)| with bc = C_B(a, a), and the mirror."""
    f = _fp(nets, batch, fp=fp)
    a_side = l1(f.a, f.CC("A", "bc~", "bc~"))
    b_side = l1(f.b, f.CC("B", "ac~", "ac~"))
    return a_side, b_side


def cycle_loss(nets, batch: Batch, fp: Optional[ForwardPass] = None) -> torch.Tensor:
    a_side, b_side = cycle_terms(nets, batch, fp)
    return a_side + b_side


def attr_cycle_loss_1(nets, batch: Batch, noise: Optional[InstanceNoise] = None,
                      fp: Optional[ForwardPass] = None) -> torch.Tensor:
    """|b3 - C_B(noisy a~, noisy b2)| with a~ = C_A(b1, a); gradients reach C_A."""
    f = _fp(nets, batch, noise, fp)
    return l1(f.batch.b3, f.CC("B", "n(a~)", "n(b2)"))


def attr_cycle_loss_2(nets, batch: Batch, noise: Optional[InstanceNoise] = None,
                      fp: Optional[ForwardPass] = None) -> torch.Tensor:
    """|a - C_A(stopgrad(noisy b~), noisy a)| with b~ = C_B(a, b)."""
    f = _fp(nets, batch, noise, fp)
    return l1(f.a, f.CC("A", "n(sg(b~))", "n(a)"))


def generated_streams(fp: ForwardPass) -> Dict[Tuple[str, str, str], torch.Tensor]:
    """C_K3(x, y) for x from K1 and y from K2, all eight combinations."""
    name = {"A": "a", "B": "b"}
    return {(k1, k2, k3): fp.CC(k3, name[k1], name[k2]) for k1, k2, k3 in STREAMS}


def _ls(scores: torch.Tensor, target: float) -> torch.Tensor:
    return 0.5 * ((scores - target) ** 2).mean()


def gan_generator_term(nets, fakes: Dict[tuple, torch.Tensor]) -> torch.Tensor:
    total = 0.0
    for k3 in "AB":
        keys = [k for k in fakes if k[2] == k3]
        if not keys:
            continue
        scores = nets.discriminate(k3, torch.cat([fakes[k] for k in keys]))
        for s in scores.chunk(len(keys)):
            total = total + _ls(s, 1.0)
    return total


def gan_discriminator_term(nets, reals: Dict[str, torch.Tensor],
                           fakes: Dict[tuple, torch.Tensor]) -> torch.Tensor:
    """Sum over streams of 1/2 E[(D(real) - 1)^2] + 1/2 E[D(fake)^2]."""
    total = 0.0
    for k3 in "AB":
        keys = [k for k in fakes if k[2] == k3]
        if not keys:
            continue
        real_term = _ls(nets.discriminate(k3, reals[k3]), 1.0)
        scores = nets.discriminate(k3, torch.cat([fakes[k] for k in keys]))
        for s in scores.chunk(len(keys)):
            total = total + real_term + _ls(s, 0.0)
    return total


def gan_losses(nets, batch: Batch, fp: Optional[ForwardPass] = None):
    """(generator term, discriminator term), each summed over the eight streams."""
    f = _fp(nets, batch, fp=fp)
    fakes = generated_streams(f)
    reals = {"A": f.a, "B": f.b}
    gen = gan_generator_term(nets, fakes)
    disc = gan_discriminator_term(nets, reals, {k: v.detach() for k, v in fakes.items()})
    return gen, disc


def total_loss(weights: LossWeights, components) -> float:
    """Weighted sum of supervised penalties and the generator GAN term.

    ``components`` is a mapping or object with rec, dis, cyc, attr1, attr2,
    gan_g entries (tensors or floats).
    """
    get = components.get if isinstance(components, dict) else lambda k: getattr(components, k)
    return (weights.w_rec * get("rec") + weights.w_dis * get("dis")
            + weights.w_cyc * get("cyc") + weights.w_attr * get("attr1")
            + weights.w_rest * get("attr2") + weights.w_gan * get("gan_g"))


def multi_attribute_disentanglement_loss(nets, triplets_per_slot: Sequence[Batch],
                                         noise: Optional[InstanceNoise] = None) -> torch.Tensor:
    """Sum over slots s of |b3^s - G_B(slot s code of b1^s, other codes of b2^s)|.

    Each batch's b1 is only used for its triplets; the ``real`` field is ignored.
    """
    n_slots = getattr(getattr(nets, "cfg", None), "num_attr_slots", len(triplets_per_slot))
    if len(triplets_per_slot) != n_slots:
        raise ContractError(f"expected {n_slots} triplet streams, got {len(triplets_per_slot)}")
    noise = noise or InstanceNoise(0.0)
    total = 0.0
    for s, t in enumerate(triplets_per_slot):
        tag = "" if n_slots == 1 else f"/{s}"
        e1 = nets.encode(noise("b1" + tag, t.b1))
        e2 = nets.encode(noise("b2" + tag, t.b2))
        slots = None if n_slots == 1 else [s]
        total = total + l1(t.b3, combine_codes(nets, "B", e1, e2, slots))
    return total


# ------------------------------------------------------------------ logging

class LossLog:
    """Append-only CSV of LossReport rows."""

    def __init__(self, path, resume: bool = False):
        self.path = path
        exists = resume and _nonempty(path)
        self._fh = open(path, "a" if exists else "w", newline="")
        self._w = csv.DictWriter(self._fh, fieldnames=LOG_COLUMNS)
        if not exists:
            self._w.writeheader()

    def append(self, step: int, report: LossReport) -> None:
        self._w.writerow({k: (repr(v) if isinstance(v, float) else v)
                          for k, v in report.row(step).items()})
        self._fh.flush()

    def close(self):
        self._fh.close()


def _nonempty(path) -> bool:
    import os

    return os.path.exists(path) and os.path.getsize(path) > 0


def read_loss_log(path) -> List[Dict[str, float]]:
    with open(path, newline="") as f:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(f)]


def is_finite(x) -> bool:
    return math.isfinite(float(x.detach()) if torch.is_tensor(x) else float(x))
