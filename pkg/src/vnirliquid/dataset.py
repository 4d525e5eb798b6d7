"""Dataset ingestion, stratified splitting and multiplicative augmentation.

CSV layout (one file per spectrometer, or both devices in one file)::

    sample_id,device,container_material,container_instance,content,integration_time_ms,c0,...,cN

N is 287 for VisibleGrating rows and 15 for NirChip rows; in a combined
file the NIR rows leave the surplus channel cells empty. Reference files
use ``device,kind,c0..cN`` with ``kind`` in {white, dark}.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .labels import (
    CONTAINER_CLASSES,
    CONTENT_CLASSES,
    container_index,
    content_index,
)
from .spectra import (
    Device,
    FeatureConfig,
    FeatureVector,
    RawSpectrum,
    ReferenceSet,
    assemble_features,
    calibrate,
)

META_COLUMNS = (
    "sample_id",
    "device",
    "container_material",
    "container_instance",
    "content",
    "integration_time_ms",
)
DEFAULT_RATIOS = (0.8, 0.1, 0.1)


class DataError(ValueError):
    """Malformed or inconsistent input data; carries file/line context."""


def channel_header(n: int) -> list[str]:
    return [f"c{i}" for i in range(n)]


@dataclass(frozen=True)
class RawSample:
    """A visible + NIR reading pair sharing one sample_id."""

    sample_id: str
    container_material: str
    container_instance: str
    content: str
    vis: RawSpectrum
    nir: RawSpectrum


@dataclass(frozen=True)
class LabeledSample:
    features: FeatureVector
    container_material: str
    content: str
    container_instance_id: str
    sample_id: str

    def __post_init__(self) -> None:
        container_index(self.container_material)
        content_index(self.content)

    @property
    def container_label(self) -> int:
        return container_index(self.container_material)

    @property
    def content_label(self) -> int:
        return content_index(self.content)

    @property
    def joint_class(self) -> tuple[str, str]:
        return (self.container_material, self.content)


@dataclass(frozen=True)
class DatasetSplit:
    train: list[LabeledSample]
    validation: list[LabeledSample]
    test: list[LabeledSample]
    seed: int
    ratios: tuple[float, float, float] = DEFAULT_RATIOS

    def partition(self, name: str) -> list[LabeledSample]:
        if name not in ("train", "validation", "test"):
            raise ValueError(f"unknown partition {name!r}")
        return getattr(self, name)

    def to_manifest(self) -> dict:
        return {
            "seed": self.seed,
            "ratios": list(self.ratios),
            "train": [s.sample_id for s in self.train],
            "validation": [s.sample_id for s in self.validation],
            "test": [s.sample_id for s in self.test],
        }


@dataclass(frozen=True)
class AugmentationPolicy:
    copies: int = 2
    scale_min: float = 0.8
    scale_max: float = 1.2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.copies < 0:
            raise ValueError("copies must be >= 0")
        if not self.scale_min < self.scale_max:
            raise ValueError("scale_min must be below scale_max")


# --------------------------------------------------------------------------
# CSV reading


def _parse_channels(cells: Sequence[str], where: str) -> np.ndarray:
    cells = list(cells)
    while cells and cells[-1].strip() == "":
        cells.pop()
    try:
        return np.array([float(c) for c in cells], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{where}: non-numeric channel value ({exc})") from None


def _read_rows(path: Path) -> Iterable[tuple[int, dict[str, str], list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        first_channel = next((i for i, h in enumerate(header) if h == "c0"), None)
        if first_channel is None:
            raise DataError(f"{path}:1: header has no channel columns (c0..cN)")
        meta_names = header[:first_channel]
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            meta = dict(zip(meta_names, (c.strip() for c in row[:first_channel])))
            yield lineno, meta, row[first_channel:]


def read_raw_samples(
    paths: Path | str | Sequence[Path | str], require_labels: bool = True
) -> list[RawSample]:
    """Read dataset CSV(s) and join visible and NIR rows on sample_id.

    Unknown labels are collected across all files and reported together.
    With ``require_labels=False`` label cells may be empty or unknown
    (used for single-sample prediction).
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    rows: dict[str, dict[Device, tuple[str, dict[str, str], RawSpectrum]]] = defaultdict(dict)
    order: list[str] = []
    bad_labels: list[str] = []
    for path in map(Path, paths):
        if not path.exists():
            raise DataError(f"{path}: dataset file not found")
        for lineno, meta, cells in _read_rows(path):
            where = f"{path}:{lineno}"
            missing = [c for c in META_COLUMNS if c not in meta]
            if missing:
                raise DataError(f"{where}: missing columns {missing}")
            try:
                device = Device.parse(meta["device"])
            except ValueError as exc:
                raise DataError(f"{where}: {exc}") from None
            channels = _parse_channels(cells, where)
            if channels.shape[0] != device.n_channels:
                raise DataError(
                    f"{where}: {device.value} row has {channels.shape[0]} channels, "
                    f"expected {device.n_channels}"
                )
            if require_labels and meta["container_material"] not in CONTAINER_CLASSES:
                bad_labels.append(f"{where}: unknown container_material {meta['container_material']!r}")
            if require_labels and meta["content"] not in CONTENT_CLASSES:
                bad_labels.append(f"{where}: unknown content {meta['content']!r}")
            try:
                itime = float(meta["integration_time_ms"]) if meta["integration_time_ms"] else 1.0
                spectrum = RawSpectrum(device, channels, itime)
            except ValueError as exc:
                raise DataError(f"{where}: {exc}") from None
            sid = meta["sample_id"]
            if device in rows[sid]:
                raise DataError(f"{where}: duplicate {device.value} row for sample_id {sid!r}")
            if sid not in order:
                order.append(sid)
            rows[sid][device] = (where, meta, spectrum)
    if bad_labels:
        raise DataError("rows with unknown labels:\n  " + "\n  ".join(bad_labels))

    samples = []
    for sid in order:
        pair = rows[sid]
        for device in Device:
            if device not in pair:
                other = next(iter(pair.values()))[0]
                raise DataError(
                    f"sample_id {sid!r} has no {device.value} row (orphan row at {other})"
                )
        where_v, meta_v, vis = pair[Device.VISIBLE]
        where_n, meta_n, nir = pair[Device.NIR]
        for key in ("container_material", "content"):
            if require_labels and meta_v[key] != meta_n[key]:
                raise DataError(
                    f"sample_id {sid!r}: {key} disagrees between {where_v} and {where_n}"
                )
        samples.append(
            RawSample(
                sample_id=sid,
                container_material=meta_v["container_material"],
                container_instance=meta_v["container_instance"],
                content=meta_v["content"],
                vis=vis,
                nir=nir,
            )
        )
    return samples


def load_references(path: Path | str, device: Device | str) -> ReferenceSet:
    """Median white/dark references for ``device`` from a reference CSV."""
    path = Path(path)
    device = Device.parse(device)
    if not path.exists():
        raise DataError(f"{path}: reference file not found")
    groups: dict[str, list[RawSpectrum]] = {"white": [], "dark": []}
    for lineno, meta, cells in _read_rows(path):
        where = f"{path}:{lineno}"
        if "device" not in meta or "kind" not in meta:
            raise DataError(f"{where}: reference rows need 'device' and 'kind' columns")
        try:
            row_device = Device.parse(meta["device"])
        except ValueError as exc:
            raise DataError(f"{where}: {exc}") from None
        if row_device is not device:
            continue
        kind = meta["kind"].lower()
        if kind not in groups:
            raise DataError(f"{where}: kind must be 'white' or 'dark', got {meta['kind']!r}")
        channels = _parse_channels(cells, where)
        if channels.shape[0] != device.n_channels:
            raise DataError(
                f"{where}: {device.value} reference has {channels.shape[0]} channels, "
                f"expected {device.n_channels}"
            )
        try:
            groups[kind].append(RawSpectrum(device, channels))
        except ValueError as exc:
            raise DataError(f"{where}: {exc}") from None
    for kind, readings in groups.items():
        if not readings:
            raise DataError(f"{path}: no {kind} reference rows for {device.value}")
    try:
        return ReferenceSet.from_readings(groups["white"], groups["dark"])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def featurize(
    raw: RawSample,
    refs_vis: ReferenceSet | None,
    refs_nir: ReferenceSet | None,
    config: FeatureConfig | str,
) -> FeatureVector:
    config = FeatureConfig(config)
    vis = nir = None
    if Device.VISIBLE in config.devices:
        if refs_vis is None:
            raise ValueError(f"{config.label} needs visible references")
        vis = calibrate(raw.vis, refs_vis)
    if Device.NIR in config.devices:
        if refs_nir is None:
            raise ValueError(f"{config.label} needs NIR references")
        nir = calibrate(raw.nir, refs_nir)
    return assemble_features(vis, nir, config)


def build_samples(
    raw_samples: Sequence[RawSample],
    refs_vis: ReferenceSet | None,
    refs_nir: ReferenceSet | None,
    config: FeatureConfig | str = FeatureConfig.FULL,
) -> list[LabeledSample]:
    out = []
    for raw in raw_samples:
        try:
            features = featurize(raw, refs_vis, refs_nir, config)
        except ValueError as exc:
            raise DataError(f"sample_id {raw.sample_id!r}: {exc}") from None
        out.append(
            LabeledSample(
                features=features,
                container_material=raw.container_material,
                content=raw.content,
                container_instance_id=raw.container_instance,
                sample_id=raw.sample_id,
            )
        )
    return out


def load_dataset(
    path: Path | str | Sequence[Path | str],
    refs_vis: ReferenceSet | None,
    refs_nir: ReferenceSet | None,
    config: FeatureConfig | str = FeatureConfig.FULL,
) -> list[LabeledSample]:
    """Read, calibrate and feature-assemble every sample pair in ``path``."""
    return build_samples(read_raw_samples(path), refs_vis, refs_nir, config)


# --------------------------------------------------------------------------
# splitting


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(
    samples: Sequence[LabeledSample],
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> DatasetSplit:
    """Stratified train/validation/test split on the joint (container, content) class.

    Within every joint class the validation and test counts are the
    proportional counts rounded half-up; train takes the remainder, so each
    partition is within one sample of its exact share.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    if not samples:
        raise ValueError("cannot split an empty sample list")
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValueError("sample_ids must be unique")

    by_class: dict[tuple[str, str], list[int]] = defaultdict(list)
    for i, s in enumerate(samples):
        by_class[s.joint_class].append(i)
    small = sorted(k for k, v in by_class.items() if len(v) < 3)
    if small:
        raise ValueError(f"joint classes with fewer than 3 samples cannot be stratified: {small}")

    rng = np.random.default_rng(seed)
    parts: tuple[list[int], list[int], list[int]] = ([], [], [])
    for key in sorted(by_class):
        idx = by_class[key]
        n = len(idx)
        perm = rng.permutation(n)
        n_val = _round_half_up(n * ratios[1])
        n_test = _round_half_up(n * ratios[2])
        n_train = n - n_val - n_test
        parts[0].extend(idx[j] for j in perm[:n_train])
        parts[1].extend(idx[j] for j in perm[n_train : n_train + n_val])
        parts[2].extend(idx[j] for j in perm[n_train + n_val :])
    train, val, test = ([samples[i] for i in sorted(p)] for p in parts)
    return DatasetSplit(train, val, test, seed=seed, ratios=ratios)


def apply_manifest(samples: Sequence[LabeledSample], manifest: dict) -> DatasetSplit:
    """Rebuild a split from a manifest; every listed id must be present."""
    for key in ("seed", "ratios", "train", "validation", "test"):
        if key not in manifest:
            raise DataError(f"split manifest is missing field {key!r}")
    by_id = {s.sample_id: s for s in samples}
    parts = []
    for name in ("train", "validation", "test"):
        missing = [sid for sid in manifest[name] if sid not in by_id]
        if missing:
            raise DataError(
                f"split manifest {name} lists sample_ids absent from the dataset: {missing[:5]}"
            )
        parts.append([by_id[sid] for sid in manifest[name]])
    listed = [sid for p in parts for sid in (s.sample_id for s in p)]
    if len(set(listed)) != len(listed):
        raise DataError("split manifest partitions overlap")
    return DatasetSplit(
        parts[0], parts[1], parts[2], seed=int(manifest["seed"]), ratios=tuple(manifest["ratios"])
    )


def save_manifest(split_: DatasetSplit, path: Path | str) -> None:
    Path(path).write_text(json.dumps(split_.to_manifest(), indent=1) + "\n", encoding="utf-8")


def load_manifest(path: Path | str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read split manifest ({exc})") from None


# --------------------------------------------------------------------------
# augmentation


def augment(train: Sequence[LabeledSample], policy: AugmentationPolicy) -> list[LabeledSample]:
    """Append ``policy.copies`` rescaled duplicates of every training sample.

    Each copy is its original multiplied by one scalar drawn uniformly from
    ``[scale_min, scale_max]``. Only ever applied to a training partition.
    """
    out = list(train)
    if policy.copies == 0 or not train:
        return out
    rng = np.random.default_rng(policy.seed)
    for k in range(1, policy.copies + 1):
        scales = rng.uniform(policy.scale_min, policy.scale_max, size=len(train))
        for s, scale in zip(train, scales):
            out.append(
                LabeledSample(
                    features=FeatureVector(s.features.values * scale, s.features.config),
                    container_material=s.container_material,
                    content=s.content,
                    container_instance_id=s.container_instance_id,
                    sample_id=f"{s.sample_id}~aug{k}",
                )
            )
    return out


def leaky_augment_then_split(
    samples: Sequence[LabeledSample],
    policy: AugmentationPolicy,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> DatasetSplit:
    """Augment the whole corpus before splitting.

    Scaled near-duplicates of test samples end up in train. Kept only to
    measure how much that ordering inflates test scores.
    """
    return split(augment(samples, policy), ratios, seed)


def stack(samples: Sequence[LabeledSample], dtype=np.float64) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Design matrix and integer label vectors for both heads."""
    if not samples:
        raise ValueError("no samples to stack")
    X = np.stack([s.features.values for s in samples]).astype(dtype, copy=False)
    yc = np.array([s.container_label for s in samples], dtype=np.int64)
    yb = np.array([s.content_label for s in samples], dtype=np.int64)
    return X, yc, yb
