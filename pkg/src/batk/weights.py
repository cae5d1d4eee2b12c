"""Binary weight-file format: load and save frozen models bit-exactly.

Layout (little-endian):

    bytes 0-3    magic "BATK"
    bytes 4-7    version, u32 = 1
    bytes 8-11   u32 J = byte length of the UTF-8 JSON manifest
    bytes 12..   manifest JSON:
                   { "input_shape": [H, W, C],
                     "num_classes": int,
                     "pixel_domain": {"lo": float, "hi": float},
                     "layers": [ {"kind": str,
                                  "hyperparams": {...},
                                  "param_names": [...],
                                  "param_shapes": [[...], ...]} ] }
    then         for each layer in order, for each param_name in order:
                 raw float32 little-endian values, row-major,
                 exactly product(shape) of them; no padding; EOF right
                 after the last tensor.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .model import LayerSpec, ModelError, ModelGraph
from .tensor import PixelDomain, Tensor

MAGIC = b"BATK"
VERSION = 1


class WeightFormatError(ValueError):
    """Base class for weight-file problems."""


class BadMagicError(WeightFormatError):
    pass


class VersionMismatchError(WeightFormatError):
    pass


class ManifestError(WeightFormatError):
    pass


class TruncatedStreamError(WeightFormatError):
    pass


def _read_exact(stream, n: int, what: str) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise TruncatedStreamError(f"stream ended while reading {what}")
    return data


def load_model(stream) -> ModelGraph:
    """Parse a weight file into a validated ModelGraph.

    ``stream`` is a binary file object or bytes. Loading is bit-exact: weight
    values are taken verbatim from the file.
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    magic = _read_exact(stream, 4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", _read_exact(stream, 4, "version"))
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version {version}, expected {VERSION}")
    (json_len,) = struct.unpack("<I", _read_exact(stream, 4, "manifest length"))
    try:
        manifest = json.loads(_read_exact(stream, json_len, "manifest").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ManifestError(f"manifest is not valid UTF-8 JSON: {e}") from e

    try:
        input_shape = tuple(int(v) for v in manifest["input_shape"])
        num_classes = int(manifest["num_classes"])
        domain = PixelDomain(
            float(manifest["pixel_domain"]["lo"]), float(manifest["pixel_domain"]["hi"])
        )
        layer_entries = manifest["layers"]
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestError(f"manifest missing or malformed field: {e}") from e

    layers: list[LayerSpec] = []
    weights: list[dict[str, Tensor]] = []
    for li, entry in enumerate(layer_entries):
        try:
            layer = LayerSpec(entry["kind"], dict(entry.get("hyperparams", {})))
            names = list(entry.get("param_names", []))
            shapes = [tuple(int(v) for v in s) for s in entry.get("param_shapes", [])]
        except (KeyError, TypeError, ModelError) as e:
            raise ManifestError(f"layer {li}: {e}") from e
        if len(names) != len(shapes):
            raise ManifestError(f"layer {li}: {len(names)} param names vs {len(shapes)} shapes")
        params = {}
        for name, shape in zip(names, shapes):
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(stream, 4 * count, f"layer {li} tensor {name!r}")
            params[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)
        layers.append(layer)
        weights.append(params)

    if stream.read(1):
        raise ManifestError("trailing bytes after the last tensor")

    try:
        return ModelGraph(layers, weights, input_shape, num_classes, domain)
    except ModelError as e:
        raise ManifestError(str(e)) from e


def save_model(model: ModelGraph, stream) -> None:
    """Write a ModelGraph in the format above (bit-exact round trip)."""
    close = False
    if isinstance(stream, str):
        stream = open(stream, "wb")
        close = True
    try:
        entries = []
        shape = model.input_shape
        for layer in model.layers:
            entries.append(
                {
                    "kind": layer.kind,
                    "hyperparams": layer.hyper,
                    "param_names": layer.param_names(),
                    "param_shapes": [list(s) for s in layer.param_shapes(shape)],
                }
            )
            shape = layer.output_shape(shape)
        manifest = {
            "input_shape": list(model.input_shape),
            "num_classes": model.num_classes,
            "pixel_domain": {"lo": model.pixel_domain.lo, "hi": model.pixel_domain.hi},
            "layers": entries,
        }
        blob = json.dumps(manifest, separators=(",", ":")).encode("utf-8")
        stream.write(MAGIC)
        stream.write(struct.pack("<I", VERSION))
        stream.write(struct.pack("<I", len(blob)))
        stream.write(blob)
        for layer, params in zip(model.layers, model.weights):
            for name in layer.param_names():
                stream.write(np.ascontiguousarray(params[name], dtype="<f4").tobytes())
    finally:
        if close:
            stream.close()


def load_model_file(path) -> ModelGraph:
    with open(path, "rb") as f:
        return load_model(f)
