"""Export trained models and numeric fixtures for the attack runtime.

Weight file ("BATK", version 1, little-endian):
    magic, u32 version, u32 manifest length, UTF-8 JSON manifest
    { input_shape:[H,W,C], num_classes, pixel_domain:{lo,hi},
      layers:[{kind, hyperparams, param_names, param_shapes}] },
    then per layer and param: raw float32 row-major values, no padding.
    Conv weights are (out_c, kh, kw, in_c), dense weights (out, in) against
    a channel-last, row-major flatten.

Fixture file ("BFIX", version 1, little-endian):
    magic, u32 version, u32 index length, UTF-8 JSON index
    { input_shape, num_classes, pixel_domain, count,
      entries:[{id, label, prediction}] },
    then per entry in order: image (H*W*C), logits (num_classes),
    input_grad (H*W*C), all float32 row-major channel-last.

The training-time 1/255 input scale is folded into the first conv's weights
so the exported model consumes raw [0, 255] pixels.
"""

from __future__ import annotations

import copy
import json
import struct

import numpy as np
import torch
from torch import nn

from .train import INPUT_SCALE, SmallCnn

BATK_MAGIC = b"BATK"
BFIX_MAGIC = b"BFIX"
VERSION = 1

PIXEL_DOMAIN = {"lo": 0.0, "hi": 255.0}
INPUT_SHAPE = [32, 32, 3]


def fold_input_scale(model: SmallCnn) -> SmallCnn:
    """Return a copy whose first conv absorbs the 1/255 training scale."""
    folded = copy.deepcopy(model)
    with torch.no_grad():
        folded.conv1.weight.mul_(INPUT_SCALE)
    folded.eval()
    return folded


def _layer_entries(model: SmallCnn):
    c1 = model.conv1
    c2 = model.conv2
    fc = model.fc
    return [
        ("conv2d", {"out_channels": c1.out_channels, "kernel": [3, 3], "stride": 1, "pad": 1},
         {"weight": c1.weight.detach().numpy().transpose(0, 2, 3, 1),
          "bias": c1.bias.detach().numpy()}),
        ("relu", {}, {}),
        ("maxpool2d", {"window": 2, "stride": 2}, {}),
        ("conv2d", {"out_channels": c2.out_channels, "kernel": [3, 3], "stride": 1, "pad": 1},
         {"weight": c2.weight.detach().numpy().transpose(0, 2, 3, 1),
          "bias": c2.bias.detach().numpy()}),
        ("relu", {}, {}),
        ("maxpool2d", {"window": 2, "stride": 2}, {}),
        ("flatten", {}, {}),
        ("dense", {"out_features": fc.out_features},
         {"weight": fc.weight.detach().numpy()
          .reshape(fc.out_features, c2.out_channels, 8, 8)
          .transpose(0, 2, 3, 1)
          .reshape(fc.out_features, -1),
          "bias": fc.bias.detach().numpy()}),
    ]


def export_weights(folded: SmallCnn, path) -> None:
    """Write the folded model as a BATK file (raw-pixel inputs)."""
    entries = _layer_entries(folded)
    manifest = {
        "input_shape": INPUT_SHAPE,
        "num_classes": folded.fc.out_features,
        "pixel_domain": PIXEL_DOMAIN,
        "layers": [
            {
                "kind": kind,
                "hyperparams": hyper,
                "param_names": list(params),
                "param_shapes": [list(params[name].shape) for name in params],
            }
            for kind, hyper, params in entries
        ],
    }
    blob = json.dumps(manifest, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(BATK_MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, _, params in entries:
            for name in params:
                f.write(np.ascontiguousarray(params[name], dtype="<f4").tobytes())


def fixture_arrays(folded: SmallCnn, images_nhwc: np.ndarray, labels: np.ndarray):
    """Logits, input gradients (w.r.t. raw pixels) and predictions."""
    folded.eval()
    loss_fn = nn.CrossEntropyLoss()
    logits_out, grads_out, preds = [], [], []
    for img, label in zip(images_nhwc, labels):
        x = torch.from_numpy(img.transpose(2, 0, 1).copy()).unsqueeze(0)
        x.requires_grad_(True)
        logits = folded(x)
        loss = loss_fn(logits, torch.tensor([int(label)]))
        loss.backward()
        logits_out.append(logits.detach().numpy()[0])
        grads_out.append(x.grad.detach().numpy()[0].transpose(1, 2, 0))
        preds.append(int(logits.detach().argmax()))
    return np.stack(logits_out), np.stack(grads_out), preds


def export_fixtures(folded: SmallCnn, images_nhwc: np.ndarray, labels: np.ndarray,
                    ids: list[str], path) -> None:
    logits, grads, preds = fixture_arrays(folded, images_nhwc, labels)
    index = {
        "input_shape": INPUT_SHAPE,
        "num_classes": folded.fc.out_features,
        "pixel_domain": PIXEL_DOMAIN,
        "count": len(ids),
        "entries": [
            {"id": ids[i], "label": int(labels[i]), "prediction": preds[i]}
            for i in range(len(ids))
        ],
    }
    blob = json.dumps(index, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(BFIX_MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for i in range(len(ids)):
            f.write(np.ascontiguousarray(images_nhwc[i], dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(logits[i], dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(grads[i], dtype="<f4").tobytes())


def read_fixtures(path):
    """Parse a BFIX file back into (index, list of dicts with arrays)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != BFIX_MAGIC:
        raise ValueError(f"bad fixture magic {blob[:4]!r}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise ValueError(f"unsupported fixture version {version}")
    (jlen,) = struct.unpack("<I", blob[8:12])
    index = json.loads(blob[12 : 12 + jlen].decode("utf-8"))
    h, w, c = index["input_shape"]
    k = index["num_classes"]
    img_n, log_n = h * w * c, k
    offset = 12 + jlen
    out = []
    for entry in index["entries"]:
        image = np.frombuffer(blob, dtype="<f4", count=img_n, offset=offset).reshape(h, w, c)
        offset += 4 * img_n
        logits = np.frombuffer(blob, dtype="<f4", count=log_n, offset=offset).copy()
        offset += 4 * log_n
        grad = np.frombuffer(blob, dtype="<f4", count=img_n, offset=offset).reshape(h, w, c)
        offset += 4 * img_n
        out.append({**entry, "image": image.copy(), "logits": logits, "input_grad": grad.copy()})
    if offset != len(blob):
        raise ValueError("trailing bytes after the last fixture")
    return index, out
