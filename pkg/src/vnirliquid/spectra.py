"""Raw spectrometer readings, white/dark reference calibration and feature assembly.

Two devices feed the pipeline: a 288-channel visible grating spectrometer
(340-850 nm) and a 16-channel NIR spectrometer-on-chip whose channels are
broadband photocurrents. Each reading is reflectance-normalized against
per-channel medians of white (Teflon) and dark references, then the
normalized vector and its gradient are concatenated into the model input.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray


class Device(str, Enum):
    VISIBLE = "VisibleGrating"
    NIR = "NirChip"

    @property
    def n_channels(self) -> int:
        return CHANNELS[self]

    @classmethod
    def parse(cls, value: "str | Device") -> "Device":
        try:
            return cls(value)
        except ValueError:
            raise ValueError(
                f"unknown device {value!r}; expected one of {[d.value for d in cls]}"
            ) from None


CHANNELS = {Device.VISIBLE: 288, Device.NIR: 16}

# metadata only: the grating is not wavelength-calibrated here
VISIBLE_RANGE_NM = (340.0, 850.0)
NIR_RANGE_NM = (850.0, 1700.0)


class FeatureConfig(str, Enum):
    FULL = "full"
    VISIBLE_ONLY = "vis"
    NIR_ONLY = "nir"
    NO_GRADIENT = "nograd"

    @property
    def length(self) -> int:
        return FEATURE_LENGTHS[self]

    @property
    def devices(self) -> tuple[Device, ...]:
        if self is FeatureConfig.VISIBLE_ONLY:
            return (Device.VISIBLE,)
        if self is FeatureConfig.NIR_ONLY:
            return (Device.NIR,)
        return (Device.VISIBLE, Device.NIR)

    @property
    def label(self) -> str:
        return {
            FeatureConfig.FULL: "Full608",
            FeatureConfig.VISIBLE_ONLY: "VisibleOnly576",
            FeatureConfig.NIR_ONLY: "NirOnly32",
            FeatureConfig.NO_GRADIENT: "NoGradient304",
        }[self]


FEATURE_LENGTHS = {
    FeatureConfig.FULL: 608,
    FeatureConfig.VISIBLE_ONLY: 576,
    FeatureConfig.NIR_ONLY: 32,
    FeatureConfig.NO_GRADIENT: 304,
}


def _as_vector(values, name: str) -> NDArray[np.float64]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def _check_length(device: Device, arr: np.ndarray, name: str) -> None:
    if arr.shape[0] != device.n_channels:
        raise ValueError(
            f"{name} has {arr.shape[0]} channels; {device.value} has {device.n_channels}"
        )


@dataclass(frozen=True)
class RawSpectrum:
    """One uncalibrated reading (intensity counts) from one spectrometer."""

    device: Device
    channels: NDArray[np.float64]
    integration_time_ms: float = 1.0

    def __post_init__(self) -> None:
        device = Device.parse(self.device)
        channels = _as_vector(self.channels, "channels")
        _check_length(device, channels, "channels")
        if not np.all(np.isfinite(channels)):
            raise ValueError("channels must be finite")
        if np.any(channels < 0):
            raise ValueError("channels must be non-negative")
        if not self.integration_time_ms > 0:
            raise ValueError("integration_time_ms must be positive")
        object.__setattr__(self, "device", device)
        object.__setattr__(self, "channels", channels)


@dataclass(frozen=True)
class ReferenceSet:
    """Per-channel white and dark medians for one device."""

    device: Device
    white_median: NDArray[np.float64]
    dark_median: NDArray[np.float64]
    source_count: int = 1

    def __post_init__(self) -> None:
        device = Device.parse(self.device)
        white = _as_vector(self.white_median, "white_median")
        dark = _as_vector(self.dark_median, "dark_median")
        _check_length(device, white, "white_median")
        _check_length(device, dark, "dark_median")
        if self.source_count < 1:
            raise ValueError("source_count must be >= 1")
        _check_calibratable(white, dark)
        object.__setattr__(self, "device", device)
        object.__setattr__(self, "white_median", white)
        object.__setattr__(self, "dark_median", dark)

    @classmethod
    def from_readings(
        cls, white: Sequence[RawSpectrum], dark: Sequence[RawSpectrum]
    ) -> "ReferenceSet":
        """Build a reference set from raw white and dark readings of one device."""
        white_med = build_reference(white)
        dark_med = build_reference(dark)
        if white[0].device is not dark[0].device:
            raise ValueError("white and dark readings come from different devices")
        return cls(
            device=white[0].device,
            white_median=white_med,
            dark_median=dark_med,
            source_count=min(len(white), len(dark)),
        )


def _check_calibratable(white: np.ndarray, dark: np.ndarray) -> None:
    bad = np.flatnonzero(~(white > dark))
    if bad.size:
        raise ValueError(
            f"white reference must exceed dark reference on every channel; "
            f"uncalibratable channels: {bad[:10].tolist()}"
            + (" ..." if bad.size > 10 else "")
        )


@dataclass(frozen=True)
class CalibratedSpectrum:
    device: Device
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        device = Device.parse(self.device)
        values = _as_vector(self.values, "values")
        _check_length(device, values, "values")
        if not np.all(np.isfinite(values)):
            raise ValueError("calibrated values must be finite")
        object.__setattr__(self, "device", device)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class FeatureVector:
    values: NDArray[np.float64]
    config: FeatureConfig

    def __post_init__(self) -> None:
        config = FeatureConfig(self.config)
        values = _as_vector(self.values, "values")
        if values.shape[0] != config.length:
            raise ValueError(
                f"feature vector length {values.shape[0]} does not match "
                f"{config.label} ({config.length})"
            )
        object.__setattr__(self, "config", config)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]


def build_reference(readings: Iterable[RawSpectrum]) -> NDArray[np.float64]:
    """Element-wise median over readings of a single device.

    The median (rather than the mean) keeps a few saturated or noisy pixels
    from dragging the reference. An even count yields the mean of the two
    middle values.
    """
    readings = list(readings)
    if not readings:
        raise ValueError("at least one reading is required")
    device = readings[0].device
    for r in readings[1:]:
        if r.device is not device:
            raise ValueError(
                f"mixed devices in reference readings: {device.value} and {r.device.value}"
            )
    stack = np.stack([r.channels for r in readings])
    return np.median(stack, axis=0)


def calibrate(sample: RawSpectrum, refs: ReferenceSet) -> CalibratedSpectrum:
    """Reflectance-normalize a raw reading: (S - dark) / (white - dark).

    Values are not clamped; specular highlights may exceed 1 and sub-dark
    noise may go negative.
    """
    if sample.device is not refs.device:
        raise ValueError(
            f"device mismatch: sample is {sample.device.value}, references are {refs.device.value}"
        )
    _check_calibratable(refs.white_median, refs.dark_median)
    values = (sample.channels - refs.dark_median) / (refs.white_median - refs.dark_median)
    return CalibratedSpectrum(sample.device, values)


def gradient(values) -> NDArray[np.float64]:
    """Second-order finite-difference gradient at unit spacing.

    Central differences on interior points, second-order one-sided
    stencils at both ends; output has the input's length.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("gradient expects a 1-D vector")
    n = v.shape[0]
    if n < 3:
        raise ValueError(f"gradient needs at least 3 points, got {n}")
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / 2.0
    # (-3a + 4b - c) / 2 rearranged as differences so constant and
    # integer-sloped inputs stay exact in floating point
    out[0] = (4.0 * (v[1] - v[0]) - (v[2] - v[0])) / 2.0
    out[-1] = (4.0 * (v[-1] - v[-2]) - (v[-1] - v[-3])) / 2.0
    return out


def assemble_features(
    vis: CalibratedSpectrum | None,
    nir: CalibratedSpectrum | None,
    config: FeatureConfig | str = FeatureConfig.FULL,
) -> FeatureVector:
    """Concatenate calibrated spectra with their per-device gradients.

    Layout is ``[vis | nir | grad(vis) | grad(nir)]`` with absent blocks
    dropped for the ablation configs. Gradients never span the seam
    between devices.
    """
    config = FeatureConfig(config)
    slots = {Device.VISIBLE: vis, Device.NIR: nir}
    blocks = []
    for device in config.devices:
        spec = slots[device]
        if spec is None:
            raise ValueError(f"{config.label} requires a {device.value} spectrum")
        if spec.device is not device:
            raise ValueError(
                f"expected a {device.value} spectrum in that slot, got {spec.device.value}"
            )
        blocks.append(spec.values)
    if config is not FeatureConfig.NO_GRADIENT:
        blocks = blocks + [gradient(b) for b in blocks]
    return FeatureVector(np.concatenate(blocks), config)


def reference_from_arrays(
    device: Device | str, white_rows: np.ndarray, dark_rows: np.ndarray
) -> ReferenceSet:
    device = Device.parse(device)
    white = [RawSpectrum(device, row) for row in np.atleast_2d(white_rows)]
    dark = [RawSpectrum(device, row) for row in np.atleast_2d(dark_rows)]
    return ReferenceSet.from_readings(white, dark)
