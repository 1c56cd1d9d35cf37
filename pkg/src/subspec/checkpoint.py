"""Layer checkpoints: a JSON manifest plus one TNS4 blob per array.

Manifest layout::

    {
      "format": "subspec-checkpoint",
      "input_shape": [1, 1, F, T],
      "layers": [
        {"name": "block0.conv", "type": "conv", "weight": "block0.conv.weight.tns", ...},
        {"name": "block0.norm", "type": "norm", "kind": "ssn", "s": 4, "affine": "sub", ...},
        {"name": "head", "type": "dense", ...}
      ],
      "pairs": [["block0.norm", "block1.conv"], ...]
    }

Blob paths are relative to the manifest's directory.  2-D arrays (gamma,
running stats, dense weights) are stored with leading singleton axes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ManifestParse, MissingBlob
from .norm import NormLayer, SsnConfig, SsnParams, SsnRunningStats
from .tensor import Conv2dParams, DenseParams, read_tns4, to_tns4_shape, write_tns4

FORMAT = "subspec-checkpoint"


def _put(directory: Path, name: str, array) -> str:
    fname = f"{name}.tns"
    write_tns4(directory / fname, to_tns4_shape(array))
    return fname


def _get(directory: Path, entry: dict, key: str, shape=None) -> np.ndarray:
    try:
        fname = entry[key]
    except KeyError as exc:
        raise ManifestParse(f"layer {entry.get('name')!r} lacks field {key!r}") from exc
    path = directory / fname
    if not path.is_file():
        raise MissingBlob(f"missing blob {path}")
    arr = read_tns4(path)
    return arr.reshape(shape) if shape is not None else arr


def layer_entry(directory: Path, name: str, layer) -> dict:
    """Write the blobs of one layer and return its manifest entry."""
    if isinstance(layer, Conv2dParams):
        return {
            "name": name,
            "type": "conv",
            "weight": _put(directory, f"{name}.weight", layer.weight),
            "bias": _put(directory, f"{name}.bias", layer.bias),
            "padding": list(layer.padding),
        }
    if isinstance(layer, NormLayer):
        return {
            "name": name,
            "type": "norm",
            "kind": layer.kind.value,
            "channels": layer.channels,
            "s": layer.cfg.s,
            "affine": layer.cfg.affine.value,
            "eps": layer.cfg.eps,
            "momentum": layer.cfg.momentum,
            "batches_seen": layer.stats.batches_seen,
            "gamma": _put(directory, f"{name}.gamma", layer.params.gamma),
            "beta": _put(directory, f"{name}.beta", layer.params.beta),
            "running_mean": _put(directory, f"{name}.running_mean", layer.stats.running_mean),
            "running_var": _put(directory, f"{name}.running_var", layer.stats.running_var),
        }
    if isinstance(layer, DenseParams):
        return {
            "name": name,
            "type": "dense",
            "weight": _put(directory, f"{name}.weight", layer.weight),
            "bias": _put(directory, f"{name}.bias", layer.bias),
        }
    raise TypeError(f"cannot serialize layer of type {type(layer).__name__}")


def save_layers(directory, layers: dict, input_shape, pairs=(), extra: dict | None = None) -> Path:
    """Write ``layers`` (name -> layer, in order) and return the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": FORMAT,
        "input_shape": [int(v) for v in input_shape],
        "layers": [layer_entry(directory, name, layer) for name, layer in layers.items()],
        "pairs": [list(p) for p in pairs],
    }
    if extra:
        manifest.update(extra)
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def _load_entry(directory: Path, entry: dict):
    kind = entry.get("type")
    if kind == "conv":
        w = _get(directory, entry, "weight")
        b = _get(directory, entry, "bias", (w.shape[0],))
        return Conv2dParams(w, b, tuple(entry.get("padding", (w.shape[2] // 2, w.shape[3] // 2))))
    if kind == "norm":
        try:
            cfg = SsnConfig(int(entry["s"]), entry["affine"], float(entry["eps"]), float(entry["momentum"]))
            layer = NormLayer(entry["kind"], int(entry["channels"]), cfg)
        except (KeyError, ValueError) as exc:
            raise ManifestParse(f"bad norm layer entry {entry.get('name')!r}: {exc}") from exc
        c = layer.channels
        layer.params = SsnParams(
            _get(directory, entry, "gamma", (c, layer.affine_bands)),
            _get(directory, entry, "beta", (c, layer.affine_bands)),
        )
        layer.stats = SsnRunningStats(
            _get(directory, entry, "running_mean", (c, layer.stat_bands)),
            _get(directory, entry, "running_var", (c, layer.stat_bands)),
            int(entry.get("batches_seen", 0)),
        )
        return layer
    if kind == "dense":
        w = _get(directory, entry, "weight")
        w = w.reshape(w.shape[-2:])
        return DenseParams(w, _get(directory, entry, "bias", (w.shape[0],)))
    raise ManifestParse(f"unknown layer type {kind!r}")


def load_layers(manifest_path) -> tuple[dict, dict]:
    """Read a manifest; return ``(manifest, {name: layer})``."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    if not manifest_path.is_file():
        raise MissingBlob(f"checkpoint manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
        entries = manifest["layers"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ManifestParse(f"{manifest_path}: {exc}") from exc
    directory = manifest_path.parent
    layers = {}
    for entry in entries:
        if not isinstance(entry, dict) or "name" not in entry:
            raise ManifestParse(f"{manifest_path}: malformed layer entry {entry!r}")
        layers[entry["name"]] = _load_entry(directory, entry)
    return manifest, layers
