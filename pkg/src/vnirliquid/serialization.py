"""Versioned JSON model files.

Layout::

    {
      "format_version": 1,
      "feature_config": "full",
      "mode": "hier", "link": "probs",
      "class_orderings": {"container": [...], "content": [...]},
      "init_scheme": "...", "dtype": "float32", "dropout_rate": 0.25,
      "input_standardization": {"shift": [...], "scale": [...]},
      "branches": {"container": [{"rows", "cols", "weights", "bias"}, ...],
                   "content": [...]}
    }

Weights are row-major flat arrays of shape (rows=fan_in, cols=fan_out).
Floats are written with ``repr`` precision, so a save/load cycle is exact.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .labels import CONTAINER_CLASSES, CONTENT_CLASSES
from .model import Dense, HierarchicalModel, Link, MlpBranch, Mode

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """A model document is malformed; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"model file field {field!r}: {message}")
        self.field = field


def _branch_to_list(branch: MlpBranch) -> list[dict[str, Any]]:
    return [
        {
            "rows": layer.rows,
            "cols": layer.cols,
            "weights": [float(v) for v in layer.W.ravel(order="C")],
            "bias": [float(v) for v in layer.b],
        }
        for layer in branch.layers
    ]


def model_to_dict(model: HierarchicalModel) -> dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "feature_config": model.feature_config,
        "mode": model.mode.value,
        "link": model.link.value,
        "class_orderings": {
            "container": list(CONTAINER_CLASSES),
            "content": list(CONTENT_CLASSES),
        },
        "init_scheme": model.init_scheme,
        "dtype": np.dtype(model.dtype).name,
        "dropout_rate": model.container_branch.dropout_rate,
        "input_standardization": {
            "shift": [float(v) for v in model.input_shift],
            "scale": [float(v) for v in model.input_scale],
        },
        "branches": {
            "container": _branch_to_list(model.container_branch),
            "content": _branch_to_list(model.content_branch),
        },
    }


def _require(doc: dict, key: str, prefix: str = "") -> Any:
    if not isinstance(doc, dict) or key not in doc:
        raise ModelFormatError(prefix + key, "missing")
    return doc[key]


def _layers_from_list(layers: Any, name: str, dtype) -> list[Dense]:
    if not isinstance(layers, list) or not layers:
        raise ModelFormatError(f"branches.{name}", "must be a non-empty list of layers")
    out = []
    for i, layer in enumerate(layers):
        prefix = f"branches.{name}[{i}]."
        rows = _require(layer, "rows", prefix)
        cols = _require(layer, "cols", prefix)
        if not (isinstance(rows, int) and isinstance(cols, int) and rows > 0 and cols > 0):
            raise ModelFormatError(prefix + "rows", "rows and cols must be positive integers")
        raw_w = _require(layer, "weights", prefix)
        raw_b = _require(layer, "bias", prefix)
        try:
            W = np.array(raw_w, dtype=dtype)
        except (TypeError, ValueError) as exc:
            raise ModelFormatError(prefix + "weights", f"non-numeric entries ({exc})") from None
        try:
            b = np.array(raw_b, dtype=dtype)
        except (TypeError, ValueError) as exc:
            raise ModelFormatError(prefix + "bias", f"non-numeric entries ({exc})") from None
        if W.shape != (rows * cols,):
            raise ModelFormatError(prefix + "weights", f"expected {rows * cols} values, got {W.size}")
        if b.shape != (cols,):
            raise ModelFormatError(prefix + "bias", f"expected {cols} values, got {b.size}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ModelFormatError(prefix + "weights", "non-finite values")
        out.append(Dense(W.reshape(rows, cols), b))
    return out


def model_from_dict(doc: dict[str, Any]) -> HierarchicalModel:
    version = _require(doc, "format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError("format_version", f"unsupported version {version!r}")
    orderings = _require(doc, "class_orderings")
    if list(_require(orderings, "container", "class_orderings.")) != list(CONTAINER_CLASSES):
        raise ModelFormatError("class_orderings.container", "does not match this build's container classes")
    if list(_require(orderings, "content", "class_orderings.")) != list(CONTENT_CLASSES):
        raise ModelFormatError("class_orderings.content", "does not match this build's content classes")
    try:
        mode = Mode(_require(doc, "mode"))
    except ValueError:
        raise ModelFormatError("mode", f"unknown mode {doc['mode']!r}") from None
    try:
        link = Link(doc.get("link", Link.PROBS.value))
    except ValueError:
        raise ModelFormatError("link", f"unknown link {doc['link']!r}") from None
    try:
        dtype = np.dtype(doc.get("dtype", "float64"))
    except TypeError:
        raise ModelFormatError("dtype", f"unknown dtype {doc['dtype']!r}") from None
    dropout = doc.get("dropout_rate", 0.25)
    branches = _require(doc, "branches")
    container_layers = _layers_from_list(_require(branches, "container", "branches."), "container", dtype)
    content_layers = _layers_from_list(_require(branches, "content", "branches."), "content", dtype)
    try:
        container = MlpBranch(container_layers, dropout)
    except ValueError as exc:
        raise ModelFormatError("branches.container", str(exc)) from None
    try:
        content = MlpBranch(content_layers, dropout)
    except ValueError as exc:
        raise ModelFormatError("branches.content", str(exc)) from None
    if container.n_classes != len(CONTAINER_CLASSES):
        raise ModelFormatError("branches.container", "output width does not match container classes")
    if content.n_classes != len(CONTENT_CLASSES):
        raise ModelFormatError("branches.content", "output width does not match content classes")
    feature_config = _require(doc, "feature_config")
    std = doc.get("input_standardization") or {}
    try:
        shift = None if std.get("shift") is None else np.array(std["shift"], dtype=dtype)
        scale = None if std.get("scale") is None else np.array(std["scale"], dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError("input_standardization", f"non-numeric entries ({exc})") from None
    try:
        return HierarchicalModel(
            container,
            content,
            mode=mode,
            link=link,
            feature_config=feature_config,
            init_scheme=doc.get("init_scheme", ""),
            input_shift=shift,
            input_scale=scale,
        )
    except ValueError as exc:
        field = "input_standardization" if str(exc).startswith("input") else "branches.content"
        raise ModelFormatError(field, str(exc)) from None


def save_model(model: HierarchicalModel, path: Path | str) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n", encoding="utf-8")


def load_model(path: Path | str) -> HierarchicalModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError("<document>", f"invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ModelFormatError("<document>", "top level must be an object")
    return model_from_dict(doc)
