"""Shared builders: random small models and scripted mock models."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from batk.model import LayerSpec, ModelGraph
from batk.tensor import DOMAIN_01

ASSETS = Path(__file__).resolve().parents[1] / "assets"


def build_model(layers, input_shape, num_classes, rng, scale=0.3, domain=DOMAIN_01):
    """Fill a layer stack with seeded gaussian weights."""
    weights = []
    shape = tuple(input_shape)
    for layer in layers:
        params = {}
        for name, pshape in zip(layer.param_names(), layer.param_shapes(shape)):
            if name == "bias":
                params[name] = rng.normal(0, 0.05, pshape).astype(np.float32)
            else:
                params[name] = rng.normal(0, scale, pshape).astype(np.float32)
        weights.append(params)
        shape = layer.output_shape(shape)
    return ModelGraph(layers, weights, tuple(input_shape), num_classes, domain)


def small_conv_net(rng, input_shape=(8, 8, 3), num_classes=3, domain=DOMAIN_01):
    layers = [
        LayerSpec("conv2d", {"out_channels": 4, "kernel": [3, 3], "stride": 1, "pad": 1}),
        LayerSpec("relu"),
        LayerSpec("maxpool2d", {"window": 2, "stride": 2}),
        LayerSpec("flatten"),
        LayerSpec("dense", {"out_features": num_classes}),
    ]
    return build_model(layers, input_shape, num_classes, rng, domain=domain)


def random_small_model(rng, max_hw=16, domain=DOMAIN_01):
    """A random <=4 layer model over a random small input, for fuzzing."""
    h = int(rng.integers(6, max_hw + 1))
    w = int(rng.integers(6, max_hw + 1))
    c = int(rng.choice([1, 3]))
    num_classes = int(rng.integers(2, 6))
    arch = rng.integers(0, 4)
    if arch == 0:
        layers = [
            LayerSpec("conv2d", {"out_channels": 3, "kernel": [3, 3], "stride": 1, "pad": 1}),
            LayerSpec("relu"),
            LayerSpec("flatten"),
            LayerSpec("dense", {"out_features": num_classes}),
        ]
    elif arch == 1:
        layers = [
            LayerSpec("conv2d", {"out_channels": 4, "kernel": [3, 3], "stride": 1, "pad": 0}),
            LayerSpec("maxpool2d", {"window": 2, "stride": 2}),
            LayerSpec("flatten"),
            LayerSpec("dense", {"out_features": num_classes}),
        ]
    elif arch == 2:
        layers = [
            LayerSpec("conv2d", {"out_channels": 4, "kernel": [2, 2], "stride": 2, "pad": 0}),
            LayerSpec("relu"),
            LayerSpec("global_avg_pool"),
            LayerSpec("dense", {"out_features": num_classes}),
        ]
    else:
        layers = [
            LayerSpec("flatten"),
            LayerSpec("dense", {"out_features": num_classes}),
        ]
    return build_model(layers, (h, w, c), num_classes, rng, domain=domain)


def identity_dense_model(n: int, domain=DOMAIN_01):
    """Flatten + dense with identity weight and zero bias: logits == input."""
    layers = [LayerSpec("flatten"), LayerSpec("dense", {"out_features": n})]
    weights = [{}, {"weight": np.eye(n, dtype=np.float32), "bias": np.zeros(n, np.float32)}]
    return ModelGraph(layers, weights, (1, 1, n), n, domain)


class FixedGradientModel:
    """Mock: serves a preset gradient; prediction flips after a preset number
    of predict calls (the first call is the clean-input check)."""

    def __init__(self, gradient, true_label=0, flip_label=1, flip_after_calls=None,
                 flip_on_calls=None):
        self.gradient = np.asarray(gradient, dtype=np.float32)
        self.true_label = true_label
        self.flip_label = flip_label
        self.flip_after_calls = flip_after_calls
        self.flip_on_calls = set(flip_on_calls) if flip_on_calls is not None else None
        self.predict_calls = 0
        self.gradient_calls = 0

    def predict(self, image):
        self.predict_calls += 1
        if self.flip_on_calls is not None:
            if self.predict_calls in self.flip_on_calls:
                return self.flip_label
            return self.true_label
        if self.flip_after_calls is not None and self.predict_calls > self.flip_after_calls:
            return self.flip_label
        return self.true_label

    def loss_gradient(self, image, true_label):
        self.gradient_calls += 1
        return np.broadcast_to(self.gradient, image.shape).astype(np.float32)


class NeverFlipModel(FixedGradientModel):
    def __init__(self, gradient, true_label=0):
        super().__init__(gradient, true_label=true_label, flip_after_calls=None)

    def predict(self, image):
        self.predict_calls += 1
        return self.true_label


def make_dataset_dir(dirpath, model, rng, n=12, mislabel_every=4):
    """Write n random PNGs + manifest; labels come from the model's own
    prediction on the quantized file (so membership in the attacked set is
    known), except every ``mislabel_every``-th image which gets a wrong
    label on purpose."""
    from batk.dataset import load_png, save_png
    from batk.weights import save_model

    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(n):
        img = rng.uniform(model.pixel_domain.lo, model.pixel_domain.hi,
                          model.input_shape).astype(np.float32)
        name = f"img{i:03d}.png"
        save_png(dirpath / name, img, model.pixel_domain)
        pred = model.predict(load_png(dirpath / name, model.pixel_domain))
        label = pred
        if mislabel_every and i % mislabel_every == mislabel_every - 1:
            label = (pred + 1) % model.num_classes
        rows.append(f"{name},{label}")
    (dirpath / "manifest.csv").write_text("path,label\n" + "\n".join(rows) + "\n")
    model_path = dirpath / "model.batk"
    save_model(model, str(model_path))
    return model_path, dirpath / "manifest.csv"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
