"""LeNet-style digit classifier used to score class preservation."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from ..errors import StateError

MIN_HELDOUT_ACC = 0.95


class LeNet(nn.Module):
    def __init__(self, image_size: int = 32):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 6, 5)
        self.conv2 = nn.Conv2d(6, 16, 5)
        side = ((image_size - 4) // 2 - 4) // 2
        self.fc1 = nn.Linear(16 * side * side, 120)
        self.fc2 = nn.Linear(120, 84)
        self.fc3 = nn.Linear(84, 10)

    def forward(self, x):
        x = F.max_pool2d(F.relu(self.conv1(x)), 2)
        x = F.max_pool2d(F.relu(self.conv2(x)), 2)
        x = F.relu(self.fc1(x.flatten(1)))
        return self.fc3(F.relu(self.fc2(x)))


class DigitClassifier:
    """Wraps a LeNet together with its held-out accuracy.

    ``heldout_acc`` is None until :meth:`fit` (or loading) has run; using an
    untrained classifier is a state error.
    """

    def __init__(self, image_size: int = 32):
        self.net = LeNet(image_size)
        self.image_size = image_size
        self.heldout_acc: Optional[float] = None

    def fit(self, images: np.ndarray, labels: np.ndarray, steps: int = 1500,
            batch_size: int = 128, lr: float = 1e-3, seed: int = 0,
            heldout_fraction: float = 0.15) -> float:
        torch.manual_seed(seed)
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(images))
        n_hold = max(int(len(images) * heldout_fraction), 1)
        hold, train = order[:n_hold], order[n_hold:]
        x = torch.from_numpy(np.asarray(images, dtype=np.float32)).unsqueeze(1)
        y = torch.from_numpy(np.asarray(labels, dtype=np.int64))
        opt = torch.optim.Adam(self.net.parameters(), lr=lr)
        self.net.train()
        for step in range(steps):
            idx = torch.from_numpy(rng.choice(train, size=batch_size))
            xb = x[idx]
            # light blur/noise augmentation keeps it usable on generated images
            if step % 2:
                xb = F.avg_pool2d(F.pad(xb, (1, 1, 1, 1), value=-1.0), 3, stride=1)
            xb = (xb + 0.05 * torch.randn(xb.shape, generator=None)).clamp(-1, 1)
            loss = F.cross_entropy(self.net(xb), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        self.net.eval()
        self.heldout_acc = 1.0
        pred = self.predict(x[torch.from_numpy(hold)])
        self.heldout_acc = float(np.mean(pred == y[torch.from_numpy(hold)].numpy()))
        return self.heldout_acc

    def predict(self, images) -> np.ndarray:
        if self.heldout_acc is None:
            raise StateError("classifier has not been trained")
        x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
        if x.dim() == 3:
            x = x.unsqueeze(1)
        out = []
        with torch.no_grad():
            for chunk in x.split(512):
                out.append(self.net(chunk).argmax(1).numpy())
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)

    def save(self, path) -> None:
        arrays = {k: v.numpy() for k, v in self.net.state_dict().items()}
        meta = {"heldout_acc": self.heldout_acc, "image_size": self.image_size}
        arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        with open(path, "wb") as f:
            np.savez(f, **arrays)

    @classmethod
    def load(cls, path) -> "DigitClassifier":
        with np.load(path) as z:
            meta = json.loads(z["__meta__"].tobytes().decode())
            state = {k: torch.from_numpy(z[k]) for k in z.files if k != "__meta__"}
        clf = cls(meta["image_size"])
        clf.net.load_state_dict(state)
        clf.net.eval()
        clf.heldout_acc = meta["heldout_acc"]
        return clf


def classifier_accuracy(generated, real_inputs, classifier: DigitClassifier,
                        require_heldout: float = MIN_HELDOUT_ACC) -> float:
    """Fraction of generated images classified like their paired real input."""
    if classifier.heldout_acc is None:
        raise StateError("classifier has not been trained")
    if classifier.heldout_acc < require_heldout:
        raise StateError(f"classifier held-out accuracy {classifier.heldout_acc:.3f} "
                         f"below required {require_heldout}")
    pg = classifier.predict(generated)
    pr = classifier.predict(real_inputs)
    if len(pg) != len(pr):
        raise ValueError("generated and real inputs must be paired")
    return float(np.mean(pg == pr))


def matching_accuracy(pred_generated, pred_real) -> float:
    a, b = np.asarray(pred_generated), np.asarray(pred_real)
    return float(np.mean(a == b))


def cache_key(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True, default=str).encode()).hexdigest()[:12]


def train_or_load(cache_dir, key: str, images, labels, steps: int, seed: int = 0) -> DigitClassifier:
    path = Path(cache_dir) / f"classifier-{key}.npz"
    if path.exists():
        return DigitClassifier.load(path)
    clf = DigitClassifier(images.shape[-1])
    clf.fit(images, labels, steps=steps, seed=seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    clf.save(path)
    return clf
