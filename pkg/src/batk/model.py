"""Frozen-weight CNN inference runtime with input-gradient computation.

Supports the minimal closed layer set {conv2d, relu, maxpool2d,
global_avg_pool, flatten, dense} on single channel-last images. Weights are
frozen after load; forward and backward passes allocate their own scratch,
so a ModelGraph can be shared read-only across threads.

The backward pass propagates deltas only (no weight gradients): the loss is
softmax cross-entropy of the true label, whose gradient at the logits is
``softmax(logits) - one_hot(label)``. Grad-CAM style requests seed the
backward pass with ``one_hot(class_index)`` instead and stop at the chosen
layer's output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import PixelDomain, ShapeMismatchError, Tensor, arg_max

LAYER_KINDS = ("conv2d", "relu", "maxpool2d", "global_avg_pool", "flatten", "dense")


class ModelError(ValueError):
    """Structural problem in a layer stack or its weights."""


class LabelError(ValueError):
    """Class or layer index out of range."""


def conv_output_hw(extent: int, kernel: int, stride: int, pad: int) -> int:
    return (extent + 2 * pad - kernel) // stride + 1


@dataclass
class LayerSpec:
    """One layer: its kind plus kind-specific hyperparameters.

    hyper keys by kind:
      conv2d      out_channels, kernel [kh, kw], stride, pad
      maxpool2d   window, stride
      dense       out_features
      others      none
    """

    kind: str
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ModelError(f"unsupported layer kind {self.kind!r}")

    def param_names(self) -> list[str]:
        return ["weight", "bias"] if self.kind in ("conv2d", "dense") else []

    def param_shapes(self, in_shape: tuple) -> list[tuple]:
        """Expected parameter shapes given the layer's input shape."""
        if self.kind == "conv2d":
            kh, kw = self.hyper["kernel"]
            in_c = in_shape[2]
            out_c = self.hyper["out_channels"]
            return [(out_c, kh, kw, in_c), (out_c,)]
        if self.kind == "dense":
            return [(self.hyper["out_features"], in_shape[0]), (self.hyper["out_features"],)]
        return []

    def output_shape(self, in_shape: tuple) -> tuple:
        if self.kind == "conv2d":
            if len(in_shape) != 3:
                raise ModelError(f"conv2d needs (H,W,C) input, got {in_shape}")
            kh, kw = self.hyper["kernel"]
            s, p = self.hyper["stride"], self.hyper["pad"]
            ho = conv_output_hw(in_shape[0], kh, s, p)
            wo = conv_output_hw(in_shape[1], kw, s, p)
            if ho < 1 or wo < 1:
                raise ModelError(f"conv2d output collapses to {ho}x{wo} from input {in_shape}")
            return (ho, wo, self.hyper["out_channels"])
        if self.kind == "maxpool2d":
            if len(in_shape) != 3:
                raise ModelError(f"maxpool2d needs (H,W,C) input, got {in_shape}")
            k, s = self.hyper["window"], self.hyper["stride"]
            ho = conv_output_hw(in_shape[0], k, s, 0)
            wo = conv_output_hw(in_shape[1], k, s, 0)
            if ho < 1 or wo < 1:
                raise ModelError(f"maxpool2d output collapses from input {in_shape}")
            return (ho, wo, in_shape[2])
        if self.kind == "global_avg_pool":
            if len(in_shape) != 3:
                raise ModelError(f"global_avg_pool needs (H,W,C) input, got {in_shape}")
            return (in_shape[2],)
        if self.kind == "flatten":
            return (int(np.prod(in_shape)),)
        if self.kind == "relu":
            return tuple(in_shape)
        # dense
        if len(in_shape) != 1:
            raise ModelError(f"dense needs a flat input, got {in_shape}")
        return (self.hyper["out_features"],)


@dataclass
class ModelGraph:
    """Ordered layer stack with frozen weights."""

    layers: list[LayerSpec]
    weights: list[dict[str, Tensor]]  # one dict per layer, keyed by param name
    input_shape: tuple
    num_classes: int
    pixel_domain: PixelDomain

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        if len(self.weights) != len(self.layers):
            raise ModelError("one weight dict required per layer")
        shape = self.input_shape
        for i, (layer, params) in enumerate(zip(self.layers, self.weights)):
            expected = dict(zip(layer.param_names(), layer.param_shapes(shape)))
            if set(params) != set(expected):
                raise ModelError(
                    f"layer {i} ({layer.kind}) params {sorted(params)} != expected {sorted(expected)}"
                )
            for name, want in expected.items():
                got = tuple(params[name].shape)
                if got != want:
                    raise ModelError(
                        f"layer {i} ({layer.kind}) param {name!r} shape {got}, expected {want}"
                    )
            shape = layer.output_shape(shape)
        if shape != (self.num_classes,):
            raise ModelError(
                f"final layer produces shape {shape}, expected ({self.num_classes},)"
            )

    # shapes of every intermediate output, index i = output of layer i
    def layer_output_shapes(self) -> list[tuple]:
        shapes = []
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
            shapes.append(shape)
        return shapes

    def param_count(self) -> int:
        return sum(int(p.size) for params in self.weights for p in params.values())

    # convenience methods so attacks can duck-type any model-like object
    def forward(self, image: Tensor) -> Tensor:
        return forward(self, image)

    def predict(self, image: Tensor) -> int:
        return predict(self, image)

    def loss_gradient(self, image: Tensor, true_label: int) -> Tensor:
        return loss_gradient_wrt_input(self, image, true_label)

    def activations_with_gradient(self, image, class_index, layer_index):
        return activations_with_gradient(self, image, class_index, layer_index)

    def last_conv_index(self) -> int:
        idx = [i for i, l in enumerate(self.layers) if l.kind == "conv2d"]
        if not idx:
            raise ModelError("model has no conv2d layer")
        return idx[-1]


# ---------------------------------------------------------------------------
# layer forward/backward kernels (single image, channel-last, float32)
# ---------------------------------------------------------------------------


def _im2col(x: Tensor, kh: int, kw: int, stride: int, pad: int):
    """Gather conv patches into a (Ho*Wo, kh*kw*Cin) matrix."""
    if pad:
        x = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(0, 1))
    windows = windows[::stride, ::stride]  # (Ho, Wo, Cin, kh, kw)
    ho, wo = windows.shape[:2]
    cols = windows.transpose(0, 1, 3, 4, 2).reshape(ho * wo, kh * kw * x.shape[2])
    return np.ascontiguousarray(cols), ho, wo


def _conv2d_forward(x: Tensor, layer: LayerSpec, params: dict) -> Tensor:
    kh, kw = layer.hyper["kernel"]
    stride, pad = layer.hyper["stride"], layer.hyper["pad"]
    w, b = params["weight"], params["bias"]
    cols, ho, wo = _im2col(x, kh, kw, stride, pad)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(ho, wo, w.shape[0])


def _conv2d_backward(x: Tensor, delta: Tensor, layer: LayerSpec, params: dict) -> Tensor:
    kh, kw = layer.hyper["kernel"]
    stride, pad = layer.hyper["stride"], layer.hyper["pad"]
    w = params["weight"]
    ho, wo, out_c = delta.shape
    in_c = x.shape[2]
    dcols = delta.reshape(ho * wo, out_c) @ w.reshape(out_c, -1)
    dcols = dcols.reshape(ho, wo, kh, kw, in_c)
    dxp = np.zeros((x.shape[0] + 2 * pad, x.shape[1] + 2 * pad, in_c), dtype=np.float32)
    for ki in range(kh):
        for kj in range(kw):
            dxp[ki : ki + stride * ho : stride, kj : kj + stride * wo : stride, :] += dcols[
                :, :, ki, kj, :
            ]
    if pad:
        return dxp[pad:-pad, pad:-pad, :]
    return dxp


def _maxpool_forward(x: Tensor, layer: LayerSpec):
    k, s = layer.hyper["window"], layer.hyper["stride"]
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(0, 1))
    windows = windows[::s, ::s]  # (Ho, Wo, C, k, k)
    ho, wo, c = windows.shape[:3]
    flat = windows.reshape(ho, wo, c, k * k)
    # argmax over the window in (ki, kj) row-major order: first occurrence
    # wins, which is the lowest flat input index
    win_idx = np.argmax(flat, axis=3)
    out = np.take_along_axis(flat, win_idx[..., None], axis=3)[..., 0]
    return np.ascontiguousarray(out), win_idx


def _maxpool_backward(x: Tensor, delta: Tensor, win_idx: np.ndarray, layer: LayerSpec) -> Tensor:
    k, s = layer.hyper["window"], layer.hyper["stride"]
    ho, wo, c = delta.shape
    h, w, _ = x.shape
    ki, kj = win_idx // k, win_idx % k
    rows = np.arange(ho)[:, None, None] * s + ki
    cols = np.arange(wo)[None, :, None] * s + kj
    chans = np.broadcast_to(np.arange(c)[None, None, :], (ho, wo, c))
    flat = (rows * w + cols) * c + chans
    dx = np.zeros(h * w * c, dtype=np.float32)
    np.add.at(dx, flat.ravel(), delta.ravel())
    return dx.reshape(h, w, c)


def _layer_forward(x: Tensor, layer: LayerSpec, params: dict):
    """Returns (output, aux) where aux carries what backward needs."""
    if layer.kind == "conv2d":
        return _conv2d_forward(x, layer, params), None
    if layer.kind == "relu":
        return np.maximum(x, np.float32(0)), None
    if layer.kind == "maxpool2d":
        out, win_idx = _maxpool_forward(x, layer)
        return out, win_idx
    if layer.kind == "global_avg_pool":
        return np.mean(x, axis=(0, 1), dtype=np.float32), None
    if layer.kind == "flatten":
        return x.reshape(-1), None
    # dense
    return params["weight"] @ x + params["bias"], None


def _layer_backward(x: Tensor, delta: Tensor, aux, layer: LayerSpec, params: dict) -> Tensor:
    if layer.kind == "conv2d":
        return _conv2d_backward(x, delta, layer, params)
    if layer.kind == "relu":
        return np.where(x > 0, delta, np.float32(0))
    if layer.kind == "maxpool2d":
        return _maxpool_backward(x, delta, aux, layer)
    if layer.kind == "global_avg_pool":
        h, w, _ = x.shape
        scale = np.float32(1.0 / (h * w))
        return np.broadcast_to(delta * scale, x.shape).astype(np.float32)
    if layer.kind == "flatten":
        return delta.reshape(x.shape)
    return params["weight"].T @ delta


def _forward_cached(model: ModelGraph, image: Tensor):
    """Run the stack, caching every layer input and pooling aux state."""
    x = np.ascontiguousarray(image, dtype=np.float32)
    inputs, auxes = [], []
    for layer, params in zip(model.layers, model.weights):
        inputs.append(x)
        x, aux = _layer_forward(x, layer, params)
        auxes.append(aux)
    return x, inputs, auxes


def _check_image(model: ModelGraph, image: Tensor):
    if tuple(image.shape) != model.input_shape:
        raise ShapeMismatchError(
            f"image shape {tuple(image.shape)} != model input {model.input_shape}"
        )


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def forward(model: ModelGraph, image: Tensor) -> Tensor:
    """Logits for one image. Deterministic: same input, bit-identical output."""
    _check_image(model, image)
    logits, _, _ = _forward_cached(model, image)
    return logits


def predict(model: ModelGraph, image: Tensor) -> int:
    return arg_max(forward(model, image))


def _softmax64(logits: Tensor) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def loss_gradient_wrt_input(model: ModelGraph, image: Tensor, true_label: int) -> Tensor:
    """Gradient of softmax cross-entropy of ``true_label`` w.r.t. the image."""
    _check_image(model, image)
    if not 0 <= true_label < model.num_classes:
        raise LabelError(f"label {true_label} out of range for {model.num_classes} classes")
    logits, inputs, auxes = _forward_cached(model, image)
    delta = _softmax64(logits)
    delta[true_label] -= 1.0
    delta = delta.astype(np.float32)
    for i in range(len(model.layers) - 1, -1, -1):
        delta = _layer_backward(inputs[i], delta, auxes[i], model.layers[i], model.weights[i])
    return delta


def activations_with_gradient(
    model: ModelGraph, image: Tensor, class_index: int, layer_index: int
):
    """Forward output of layer ``layer_index`` and d(logit of class)/d(that output)."""
    _check_image(model, image)
    if not 0 <= class_index < model.num_classes:
        raise LabelError(f"class {class_index} out of range for {model.num_classes} classes")
    if not 0 <= layer_index < len(model.layers):
        raise LabelError(f"layer index {layer_index} out of range")
    if model.layers[layer_index].kind not in ("conv2d", "relu"):
        raise LabelError(
            f"layer {layer_index} is {model.layers[layer_index].kind}, need conv2d or relu"
        )
    logits, inputs, auxes = _forward_cached(model, image)
    activations = (
        inputs[layer_index + 1]
        if layer_index + 1 < len(model.layers)
        else logits
    )
    delta = np.zeros(model.num_classes, dtype=np.float32)
    delta[class_index] = 1.0
    for i in range(len(model.layers) - 1, layer_index, -1):
        delta = _layer_backward(inputs[i], delta, auxes[i], model.layers[i], model.weights[i])
    return activations, delta
