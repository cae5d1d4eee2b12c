"""Class-activation heatmaps: where the model looks for a given class.

Channel weights are the spatial means of the class-score gradients at a
conv (or relu) layer; the map is the ReLU of the weighted channel sum,
bilinearly upsampled to image resolution (align-corners=false convention:
output sample i maps to input coordinate (i + 0.5) * h_in / h_out - 0.5,
edge-clamped). Same inputs always give the same bytes out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelGraph
from .tensor import PixelDomain, Tensor


class GradCamError(ValueError):
    pass


@dataclass
class AttentionMap:
    raw: Tensor  # (h, w) at the chosen layer's resolution, >= 0
    upsampled: Tensor  # (H, W) at image resolution
    class_index: int
    layer_index: int


def bilinear_resize(grid: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of a 2-D array, align-corners=false, edge-clamped."""
    h, w = grid.shape
    src = np.asarray(grid, dtype=np.float64)
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def gradcam_map(
    model: ModelGraph, image: Tensor, class_index: int, layer_index: int | None = None
) -> AttentionMap:
    """Attention map of ``class_index`` at ``layer_index`` (default: last conv).

    raw(h, w) = relu( sum_c mean_spatial(d score / d A_c) * A_c(h, w) ),
    computed in float64 and stored as float32.
    """
    if layer_index is None:
        layer_index = model.last_conv_index()
    acts, grads = model.activations_with_gradient(image, class_index, layer_index)
    if acts.ndim != 3:
        raise GradCamError(
            f"layer {layer_index} output has shape {acts.shape}; need a spatial (h,w,c) layer"
        )
    a64 = np.asarray(acts, dtype=np.float64)
    g64 = np.asarray(grads, dtype=np.float64)
    channel_w = g64.mean(axis=(0, 1))
    raw = np.maximum((a64 * channel_w).sum(axis=2), 0.0).astype(np.float32)
    up = bilinear_resize(raw, image.shape[0], image.shape[1])
    return AttentionMap(raw=raw, upsampled=up, class_index=class_index, layer_index=layer_index)


def normalized_map(amap: AttentionMap) -> Tensor:
    """Min-max normalize the upsampled map to [0, 1]; constant maps become 0."""
    m = amap.upsampled
    lo, hi = float(m.min()), float(m.max())
    if hi <= lo:
        return np.zeros_like(m)
    return ((m - lo) / (hi - lo)).astype(np.float32)


def _jet(values: Tensor) -> Tensor:
    """Compact jet colormap: channel ramps r/g/b peak at 0.75/0.5/0.25."""
    v = np.asarray(values, dtype=np.float32)
    r = np.clip(1.5 - np.abs(4.0 * v - 3.0), 0.0, 1.0)
    g = np.clip(1.5 - np.abs(4.0 * v - 2.0), 0.0, 1.0)
    b = np.clip(1.5 - np.abs(4.0 * v - 1.0), 0.0, 1.0)
    return np.stack([r, g, b], axis=-1).astype(np.float32)


def render_overlay(image: Tensor, amap: AttentionMap, domain: PixelDomain) -> Tensor:
    """Blend the colormapped attention (alpha 0.5) onto the grayscale image.

    Returns an (H, W, 3) float32 image in [0, 1]. A constant map renders as
    a uniform color, not an error.
    """
    if image.shape[:2] != amap.upsampled.shape:
        raise GradCamError(
            f"map {amap.upsampled.shape} does not match image {image.shape[:2]}"
        )
    gray = np.mean(np.asarray(image, dtype=np.float32), axis=2) / np.float32(domain.hi)
    gray = np.clip(gray, 0.0, 1.0)
    color = _jet(normalized_map(amap))
    return (0.5 * color + 0.5 * gray[..., None]).astype(np.float32)


def attention_shift(clean_map: AttentionMap, adv_map: AttentionMap) -> float:
    """Mean L1 distance between the two normalized maps (reported, not
    thresholded: how much the attention moved)."""
    a = normalized_map(clean_map)
    b = normalized_map(adv_map)
    return float(np.mean(np.abs(a.astype(np.float64) - b.astype(np.float64))))
