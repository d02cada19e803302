"""Checkpoints: ``model.json`` manifest plus ``weights.bin``.

``weights.bin`` is every parameter array, little-endian float64, in the
order listed by the manifest's ``tensors`` entries.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from ..errors import DataError, PartialWriteError
from .config import ModelConfig
from .svm import SvmModel
from .zoo import Model, NaiveAverage, build_model

FORMAT_VERSION = 1
MANIFEST = "model.json"
WEIGHTS = "weights.bin"
SVM_FILE = "svm.json"


def _hyper_json(hyper: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in hyper.items()}


def _networks(model) -> list[tuple[str, Model]]:
    if isinstance(model, NaiveAverage):
        return [(f"{k}/", m) for k, m in model.parts.items()]
    return [("", model)]


def manifest(model, extra: dict | None = None) -> dict:
    layers, tensors = [], []
    for prefix, net in _networks(model):
        for name, layer in net.layers.items():
            layers.append({"name": prefix + name, "kind": layer.kind, "hyper": _hyper_json(layer.hyper)})
        for name, t in net.parameters().items():
            tensors.append({"name": prefix + name, "shape": list(t.shape)})
    return {
        "format_version": FORMAT_VERSION,
        "variant": model.config.variant,
        "seed": model.config.seed,
        "config": model.config.model_dump(mode="json"),
        "layers": layers,
        "tensors": tensors,
        **(extra or {}),
    }


def save_checkpoint(model, directory: Path, extra: dict | None = None) -> Path:
    """Write the checkpoint; the manifest goes last so its presence marks completion."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(model, SvmModel):
        tmp = directory / (SVM_FILE + ".partial")
        model.save(tmp)
        os.replace(tmp, directory / SVM_FILE)
        return directory
    man = manifest(model, extra)
    params = {}
    for prefix, net in _networks(model):
        params.update({prefix + k: v for k, v in net.parameters().items()})
    tmp = directory / (WEIGHTS + ".partial")
    with open(tmp, "wb") as fh:
        for entry in man["tensors"]:
            fh.write(np.ascontiguousarray(params[entry["name"]].data, dtype="<f8").tobytes())
    os.replace(tmp, directory / WEIGHTS)
    tmp = directory / (MANIFEST + ".partial")
    tmp.write_text(json.dumps(man, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, directory / MANIFEST)
    return directory


def load_checkpoint(directory: Path):
    directory = Path(directory)
    if (directory / SVM_FILE).exists():
        return SvmModel.load(directory / SVM_FILE)
    mpath, wpath = directory / MANIFEST, directory / WEIGHTS
    if not mpath.exists():
        if wpath.exists():
            raise PartialWriteError(f"{directory}: weights present but {MANIFEST} missing")
        raise DataError(f"no checkpoint in {directory}")
    man = json.loads(mpath.read_text())
    if man.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format {man.get('format_version')}")
    model = build_model(ModelConfig(**man["config"]))
    params = {}
    for prefix, net in _networks(model):
        params.update({prefix + k: v for k, v in net.parameters().items()})
    expected = sum(int(np.prod(e["shape"])) for e in man["tensors"]) * 8
    if not wpath.exists() or wpath.stat().st_size != expected:
        raise PartialWriteError(f"{wpath}: expected {expected} bytes")
    blob = wpath.read_bytes()
    offset = 0
    for entry in man["tensors"]:
        t = params[entry["name"]]
        n = int(np.prod(entry["shape"]))
        t.data = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(entry["shape"]).astype(np.float64)
        offset += 8 * n
    return model
