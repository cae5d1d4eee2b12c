"""Deterministic training of the desk-scale reference CNN.

Architecture: conv3x3(16)-relu-maxpool2-conv3x3(32)-relu-maxpool2-flatten-
dense(10), every layer drawn from the attack runtime's supported set. The
net trains on inputs scaled to [0, 1]; the exporter folds that scale into
the first conv so the shipped model consumes raw [0, 255] pixels.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .data import load_split

SUPPORTED_KINDS = {"conv2d", "relu", "maxpool2d", "global_avg_pool", "flatten", "dense"}
INPUT_SCALE = 1.0 / 255.0


class SmallCnn(nn.Module):
    def __init__(self, num_classes: int = 10):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 16, 3, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, padding=1)
        self.pool = nn.MaxPool2d(2, 2)
        self.relu = nn.ReLU()
        self.fc = nn.Linear(32 * 8 * 8, num_classes)

    def forward(self, x):
        x = self.pool(self.relu(self.conv1(x)))
        x = self.pool(self.relu(self.conv2(x)))
        return self.fc(torch.flatten(x, 1))

    def layer_plan(self):
        """The layer kinds the exporter will emit, for validation."""
        return ["conv2d", "relu", "maxpool2d", "conv2d", "relu", "maxpool2d",
                "flatten", "dense"]


def validate_architecture(model: SmallCnn) -> None:
    unsupported = [k for k in model.layer_plan() if k not in SUPPORTED_KINDS]
    if unsupported:
        raise ValueError(f"architecture uses unsupported layer kinds: {unsupported}")


def _seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
    torch.use_deterministic_algorithms(True)


def train_small_cnn(dataset_dir, epochs: int, seed: int, batch_size: int = 64,
                    lr: float = 1e-3):
    """Train on dataset_dir/train, evaluate on dataset_dir/test.

    Returns (model, held_out_accuracy). Same seed, same data -> same weights
    and accuracy (single-threaded CPU, deterministic kernels).
    """
    _seed_everything(seed)
    model = SmallCnn()
    validate_architecture(model)

    train_x, train_y = load_split(f"{dataset_dir}/train")
    test_x, test_y = load_split(f"{dataset_dir}/test")
    # NHWC uint8-valued floats -> NCHW in [0, 1]
    tx = torch.from_numpy(train_x.transpose(0, 3, 1, 2).copy()) * INPUT_SCALE
    ty = torch.from_numpy(train_y)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss()
    order_rng = torch.Generator().manual_seed(seed)

    model.train()
    for _ in range(epochs):
        perm = torch.randperm(len(tx), generator=order_rng)
        for start in range(0, len(tx), batch_size):
            idx = perm[start : start + batch_size]
            opt.zero_grad()
            loss = loss_fn(model(tx[idx]), ty[idx])
            loss.backward()
            opt.step()

    model.eval()
    acc = evaluate(model, test_x, test_y)
    return model, acc


@torch.no_grad()
def evaluate(model: SmallCnn, images_nhwc: np.ndarray, labels: np.ndarray) -> float:
    x = torch.from_numpy(images_nhwc.transpose(0, 3, 1, 2).copy()) * INPUT_SCALE
    preds = model(x).argmax(dim=1).numpy()
    return float((preds == labels).mean())


@torch.no_grad()
def evaluate_raw(model, images_nhwc: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy of a folded model that consumes raw [0, 255] pixels."""
    x = torch.from_numpy(images_nhwc.transpose(0, 3, 1, 2).copy())
    preds = model(x).argmax(dim=1).numpy()
    return float((preds == labels).mean())
