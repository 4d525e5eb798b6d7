import json

import numpy as np
import pytest

from vnirliquid.model import HierarchicalModel
from vnirliquid.serialization import (
    ModelFormatError,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
)


@pytest.fixture
def model():
    m = HierarchicalModel.init(608, 5, feature_config="full")
    rng = np.random.default_rng(0)
    m.fit_standardization(rng.normal(2.0, 0.5, size=(40, 608)))
    return m


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_roundtrip_is_exact(tmp_path, dtype):
    m = HierarchicalModel.init(32, 1, mode="naive", feature_config="nir", dtype=dtype)
    path = tmp_path / "m.json"
    save_model(m, path)
    back = load_model(path)
    assert back.mode == m.mode and back.feature_config == "nir" and back.dtype == m.dtype
    for a, b in zip(m.parameters(), back.parameters()):
        assert a.dtype == b.dtype and np.array_equal(a, b)
    x = np.random.default_rng(0).random((4, 32)).astype(dtype)
    assert np.array_equal(m.predict(x).content_probs, back.predict(x).content_probs)


def test_standardization_survives(tmp_path, model):
    path = tmp_path / "m.json"
    save_model(model, path)
    back = load_model(path)
    assert np.array_equal(back.input_shift, model.input_shift)
    assert np.array_equal(back.input_scale, model.input_scale)


def test_header_fields(model):
    doc = model_to_dict(model)
    assert doc["format_version"] == 1
    assert doc["class_orderings"]["container"] == ["Acrylic", "Glass", "PET", "PP", "Paper", "Silicone"]
    assert doc["class_orderings"]["content"][0] == "Acetaminophen"
    assert "glorot" in doc["init_scheme"]
    layer = doc["branches"]["content"][0]
    assert (layer["rows"], layer["cols"]) == (614, 200)
    assert len(layer["weights"]) == 614 * 200
    # row-major flattening
    assert layer["weights"][1] == float(model.content_branch.layers[0].W[0, 1])


def _corrupt(doc, dotted, value):
    target = doc
    parts = dotted.split(".")
    for key in parts[:-1]:
        target = target[int(key)] if key.isdigit() else target[key]
    last = parts[-1]
    if value is KeyError:
        del target[last]
    else:
        target[int(last) if last.isdigit() else last] = value
    return doc


@pytest.mark.parametrize(
    "dotted,value,field",
    [
        ("format_version", 99, "format_version"),
        ("mode", "sideways", "mode"),
        ("class_orderings.content", ["Water"], "class_orderings.content"),
        ("branches.container.1.weights", [0.0, 1.0], "branches.container[1].weights"),
        ("branches.content.0.bias", KeyError, "branches.content[0].bias"),
        ("branches.content.3.rows", 7, "branches.content"),
        ("branches", KeyError, "branches"),
        ("feature_config", KeyError, "feature_config"),
    ],
)
def test_corrupted_field_is_named(model, dotted, value, field):
    doc = json.loads(json.dumps(model_to_dict(model)))
    with pytest.raises(ModelFormatError) as err:
        model_from_dict(_corrupt(doc, dotted, value))
    assert err.value.field.startswith(field)
    assert field in str(err.value)


def test_non_numeric_weights(model):
    doc = model_to_dict(model)
    doc["branches"]["container"][0]["weights"][5] = "x"
    with pytest.raises(ModelFormatError, match="weights"):
        model_from_dict(doc)


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ModelFormatError) as err:
        load_model(p)
    assert err.value.field == "<document>"


def test_bad_standardization_length(model):
    doc = model_to_dict(model)
    doc["input_standardization"]["scale"] = [1.0] * 5
    with pytest.raises(ModelFormatError) as err:
        model_from_dict(doc)
    assert err.value.field == "input_standardization"
