"""Finite-difference helpers shared by the loss and acceptance suites."""
import dataclasses

import numpy as np
import torch

from puppetgan.losses import Batch
from puppetgan.nets import TINY, PuppetNets

# Tiny double-precision nets for gradient checks.  Instance norm over the
# 2x2 bottleneck maps of an 8x8 input is too curved for central differences
# at 1e-4, and the default init leaves ReLUs sitting on their kinks, so
# parameters are redrawn at a generic point.
GRAD_CFG = dataclasses.replace(TINY, instance_norm=False)
FD_EPS = 1e-6
FD_TOL = 1e-4


def generic_tiny(seed=0, cfg=GRAD_CFG):
    torch.manual_seed(seed)
    nets = PuppetNets(cfg).double()
    with torch.no_grad():
        for p in nets.parameters():
            p.normal_(0.0, 0.3)
    return nets


def tiny_batch(seed=0, n=3):
    g = torch.Generator().manual_seed(seed)
    mk = lambda: torch.rand(n, 1, 8, 8, generator=g, dtype=torch.float64) * 2 - 1
    return Batch(mk(), mk(), mk(), mk())


def _sampled_entries(nets, per_tensor=3, seed=0):
    rng = np.random.default_rng(seed)
    return [(name, p, int(i)) for name, p in nets.named_parameters()
            for i in rng.choice(p.numel(), min(per_tensor, p.numel()), replace=False)]


def fd_max_rel_error(nets, analytic_fn, oracle_fn=None):
    """Max relative error of analytic vs central-difference gradients.

    ``oracle_fn`` is the function differenced numerically; it defaults to
    ``analytic_fn`` and differs only where the analytic graph stops gradients.
    """
    oracle_fn = oracle_fn or analytic_fn
    nets.zero_grad(set_to_none=True)
    analytic_fn().backward()
    worst = 0.0
    with torch.no_grad():
        for name, p, i in _sampled_entries(nets):
            flat = p.data.view(-1)
            a = 0.0 if p.grad is None else p.grad.view(-1)[i].item()
            old = flat[i].item()
            flat[i] = old + FD_EPS
            hi = oracle_fn().item()
            flat[i] = old - FD_EPS
            lo = oracle_fn().item()
            flat[i] = old
            n = (hi - lo) / (2 * FD_EPS)
            worst = max(worst, abs(a - n) / max(abs(a), abs(n), 1e-6))
    return worst
