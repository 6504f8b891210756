from dataclasses import dataclass

import numpy as np
import pytest
import torch

from puppetgan import domains as dm
from puppetgan.nets import Embedding


@pytest.fixture(scope="session")
def specs():
    return dm.domain_pair("matched", 32)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@dataclass
class PixelNets:
    """Stub model whose code is the image itself, split in two halves.

    ``attr`` holds the whole flattened x and ``rest`` the whole flattened y,
    so ``decode`` can apply any rule ``rule(x, y, domain)``.
    """

    rule: callable
    size: int = 8
    split: bool = True

    def encode(self, x):
        flat = x.reshape(len(x), -1)
        return Embedding([flat], flat)

    def decode(self, domain, e):
        shape = (len(e.rest), 1, self.size, self.size)
        return self.rule(e.attr[0].reshape(shape), e.rest.reshape(shape), domain)

    def combine(self, domain, x, y):
        return self.decode(domain, Embedding(self.encode(x).attr, self.encode(y).rest))


@pytest.fixture
def pixel_nets():
    return PixelNets


def rand_images(rng, n, size=8):
    return rng.uniform(-1, 1, size=(n, size, size)).astype(np.float32)


# --------------------------------------------------- acceptance summary lines

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and not report.failed):
        return
    n, text = mark.args
    ok, _ = _CRITERIA.get(n, (True, text))
    _CRITERIA[n] = (ok and report.passed, text)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, text = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {text}")
