import csv
import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vnirliquid import dataset
from vnirliquid.dataset import (
    AugmentationPolicy,
    DataError,
    LabeledSample,
    augment,
    read_raw_samples,
    split,
)
from vnirliquid.labels import CONTAINER_CLASSES, CONTENT_CLASSES
from vnirliquid.spectra import FeatureConfig, FeatureVector, gradient


def make_samples(counts: dict[tuple[str, str], int], seed: int = 0) -> list[LabeledSample]:
    rng = np.random.default_rng(seed)
    out = []
    for (container, content), n in counts.items():
        for k in range(n):
            out.append(
                LabeledSample(
                    FeatureVector(rng.uniform(0.1, 1.0, 304), FeatureConfig.NO_GRADIENT),
                    container,
                    content,
                    f"{container}-x",
                    f"{container}-{content}-{k}",
                )
            )
    return out


def uniform_counts(per_class: int) -> dict[tuple[str, str], int]:
    return {(c, b): per_class for c in CONTAINER_CLASSES for b in CONTENT_CLASSES}


def write_rows(path, rows, n_channels):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*dataset.META_COLUMNS, *dataset.channel_header(n_channels)])
        for row in rows:
            w.writerow(row)


def row(sid, device, n, container="Glass", content="Water", value=1.0):
    return [sid, device, container, f"{container}-clear", content, "10", *([value] * n)]


# -- ingestion ---------------------------------------------------------------


def test_fixture_corpus_has_2340_samples(fixture_corpus):
    samples = fixture_corpus.samples()
    assert len(samples) == 6 * 13 * 30
    assert all(len(s.features) == 608 for s in samples)
    assert Counter(s.joint_class for s in samples) == Counter(uniform_counts(30))


def test_orphan_row_names_sample(tmp_path):
    vis, nir = tmp_path / "v.csv", tmp_path / "n.csv"
    write_rows(vis, [row("a", "VisibleGrating", 288), row("lonely", "VisibleGrating", 288)], 288)
    write_rows(nir, [row("a", "NirChip", 16)], 16)
    with pytest.raises(DataError, match="lonely"):
        read_raw_samples([vis, nir])


def test_channel_count_mismatch_reports_line(tmp_path):
    vis = tmp_path / "v.csv"
    write_rows(vis, [row("a", "VisibleGrating", 288), row("b", "VisibleGrating", 287)], 288)
    with pytest.raises(DataError, match=r"v\.csv:3: .*287 channels"):
        read_raw_samples(vis)


def test_unknown_labels_listed_together(tmp_path):
    vis, nir = tmp_path / "v.csv", tmp_path / "n.csv"
    write_rows(vis, [row("a", "VisibleGrating", 288, content="Milkshake"), row("b", "VisibleGrating", 288)], 288)
    write_rows(nir, [row("a", "NirChip", 16, content="Milkshake"), row("b", "NirChip", 16, container="Tin")], 16)
    with pytest.raises(DataError) as err:
        read_raw_samples([vis, nir])
    msg = str(err.value)
    assert "v.csv:2" in msg and "n.csv:2" in msg and "n.csv:3" in msg and "'Tin'" in msg


def test_unlabeled_rows_allowed_for_prediction(tmp_path):
    vis, nir = tmp_path / "v.csv", tmp_path / "n.csv"
    write_rows(vis, [row("q", "VisibleGrating", 288, container="", content="")], 288)
    write_rows(nir, [row("q", "NirChip", 16, container="", content="")], 16)
    (sample,) = read_raw_samples([vis, nir], require_labels=False)
    assert sample.sample_id == "q"


def test_duplicate_and_non_numeric(tmp_path):
    vis = tmp_path / "v.csv"
    write_rows(vis, [row("a", "VisibleGrating", 288)] * 2, 288)
    with pytest.raises(DataError, match="duplicate"):
        read_raw_samples(vis)
    bad = row("a", "VisibleGrating", 288)
    bad[10] = "1,5"
    write_rows(vis, [bad], 288)
    with pytest.raises(DataError, match="non-numeric"):
        read_raw_samples(vis)


def test_missing_header_and_missing_file(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("sample_id,device\na,NirChip\n")
    with pytest.raises(DataError, match="channel columns"):
        read_raw_samples(p)
    with pytest.raises(DataError, match="not found"):
        read_raw_samples(tmp_path / "absent.csv")


def test_combined_file_with_padded_nir_rows(tmp_path):
    p = tmp_path / "both.csv"
    nir_row = row("a", "NirChip", 16) + [""] * (288 - 16)
    write_rows(p, [row("a", "VisibleGrating", 288), nir_row], 288)
    (sample,) = read_raw_samples(p)
    assert sample.nir.channels.shape == (16,)


def test_references_roundtrip(fixture_corpus):
    refs = fixture_corpus.refs_vis
    assert refs.white_median.shape == (288,) and np.all(refs.white_median > refs.dark_median)
    with pytest.raises(DataError):
        dataset.load_references(fixture_corpus.paths.dataset_vis, "VisibleGrating")


# -- splitting ---------------------------------------------------------------


def test_single_class_24_3_3():
    sp = split(make_samples({("Glass", "Water"): 30}), seed=3)
    assert (len(sp.train), len(sp.validation), len(sp.test)) == (24, 3, 3)


def test_fixture_split_exact_per_class(fixture_corpus):
    sp = split(fixture_corpus.samples("nir"), seed=0)
    for part, expected in ((sp.train, 24), (sp.validation, 3), (sp.test, 3)):
        counts = Counter(s.joint_class for s in part)
        assert set(counts.values()) == {expected} and len(counts) == 78


def test_released_design_gives_507_test():
    # 13 physical containers x 13 contents x 30 readings, stratified on material x content
    from vnirliquid.labels import CONTAINER_INSTANCES

    counts = {(c, b): 30 * len(CONTAINER_INSTANCES[c]) for c in CONTAINER_CLASSES for b in CONTENT_CLASSES}
    samples = make_samples(counts)
    assert len(samples) == 5070
    sp = split(samples, seed=0)
    assert (len(sp.train), len(sp.validation), len(sp.test)) == (4056, 507, 507)


def test_split_is_deterministic_and_seed_dependent():
    samples = make_samples(uniform_counts(5))
    a, b, c = split(samples, seed=1), split(samples, seed=1), split(samples, seed=2)
    assert a.to_manifest() == b.to_manifest()
    assert a.to_manifest()["test"] != c.to_manifest()["test"]


def test_disjoint_and_exhaustive_over_50_seeds():
    samples = make_samples(uniform_counts(4))
    ids = {s.sample_id for s in samples}
    for seed in range(50):
        sp = split(samples, seed=seed)
        parts = [{s.sample_id for s in p} for p in (sp.train, sp.validation, sp.test)]
        assert sum(map(len, parts)) == len(ids)
        assert parts[0] | parts[1] | parts[2] == ids


@settings(max_examples=40, deadline=None)
@given(
    sizes=st.lists(st.integers(3, 40), min_size=1, max_size=12),
    seed=st.integers(0, 10_000),
    val=st.sampled_from([0.1, 0.15, 0.2, 0.25]),
)
def test_stratification_bound(sizes, seed, val):
    keys = [(c, b) for c in CONTAINER_CLASSES for b in CONTENT_CLASSES][: len(sizes)]
    counts = dict(zip(keys, sizes))
    ratios = (1 - 2 * val, val, val)
    sp = split(make_samples(counts), ratios, seed)
    for p, ratio in zip((sp.train, sp.validation, sp.test), ratios):
        got = Counter(s.joint_class for s in p)
        for key, n in counts.items():
            assert abs(got[key] - n * ratio) <= 1


def test_split_rejects_tiny_class_and_bad_ratios():
    with pytest.raises(ValueError, match="fewer than 3"):
        split(make_samples({("Glass", "Water"): 2}))
    with pytest.raises(ValueError):
        split(make_samples({("Glass", "Water"): 5}), ratios=(0.5, 0.5, 0.5))


def test_manifest_roundtrip(tmp_path):
    samples = make_samples(uniform_counts(3))
    sp = split(samples, seed=9)
    path = tmp_path / "m.json"
    dataset.save_manifest(sp, path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"seed", "ratios", "train", "validation", "test"}
    again = dataset.apply_manifest(samples, dataset.load_manifest(path))
    assert again.to_manifest() == sp.to_manifest()
    assert again.seed == 9 and tuple(again.ratios) == sp.ratios


def test_manifest_with_unknown_ids_or_overlap():
    samples = make_samples(uniform_counts(10))
    doc = split(samples).to_manifest()
    bad = dict(doc, test=doc["test"] + ["nope"])
    with pytest.raises(DataError, match="nope"):
        dataset.apply_manifest(samples, bad)
    overlap = dict(doc, validation=doc["validation"] + doc["test"][:1])
    with pytest.raises(DataError, match="overlap"):
        dataset.apply_manifest(samples, overlap)


# -- augmentation ------------------------------------------------------------


def test_augment_triples():
    samples = make_samples({("Glass", "Water"): 100})
    out = augment(samples, AugmentationPolicy(seed=4))
    assert len(out) == 300
    assert out[:100] == samples


def test_augment_copies_zero_is_identity():
    samples = make_samples({("Glass", "Water"): 10})
    assert augment(samples, AugmentationPolicy(copies=0)) == samples


@settings(max_examples=25, deadline=None)
@given(copies=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_augmented_copies_are_single_scalar_multiples(copies, seed):
    samples = make_samples({("PP", "Salt"): 7}, seed=seed % 1000)
    out = augment(samples, AugmentationPolicy(copies=copies, seed=seed))
    assert len(out) == (1 + copies) * len(samples)
    for i, copy in enumerate(out[len(samples):]):
        orig = samples[i % len(samples)]
        ratio = copy.features.values / orig.features.values
        s = ratio[0]
        assert 0.8 <= s <= 1.2
        np.testing.assert_allclose(ratio, s, rtol=1e-12)
        assert (copy.container_material, copy.content) == (orig.container_material, orig.content)


def test_augment_deterministic_per_seed():
    samples = make_samples({("PET", "Coke"): 5})
    a = augment(samples, AugmentationPolicy(seed=1))
    b = augment(samples, AugmentationPolicy(seed=1))
    assert all(np.array_equal(x.features.values, y.features.values) for x, y in zip(a, b))


def test_scaling_commutes_with_gradient_block():
    rng = np.random.default_rng(0)
    z = rng.random(288)
    assert np.allclose(gradient(1.1 * z), 1.1 * gradient(z))


def test_policy_validation():
    with pytest.raises(ValueError):
        AugmentationPolicy(copies=-1)
    with pytest.raises(ValueError):
        AugmentationPolicy(scale_min=1.2, scale_max=0.8)


def test_leaky_ordering_puts_copies_of_test_samples_in_train():
    samples = make_samples(uniform_counts(3))
    sp = dataset.leaky_augment_then_split(samples, AugmentationPolicy())
    base = lambda sid: sid.split("~")[0]
    train_bases = {base(s.sample_id) for s in sp.train}
    assert train_bases & {base(s.sample_id) for s in sp.test}


def test_stack_shapes():
    X, yc, yb = dataset.stack(make_samples({("Silicone", "Sugar"): 4}))
    assert X.shape == (4, 304)
    assert set(yc) == {CONTAINER_CLASSES.index("Silicone")}
    assert set(yb) == {CONTENT_CLASSES.index("Sugar")}
