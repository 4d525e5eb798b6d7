"""Synthetic container/content spectra from a two-layer double-pass light model.

Light leaves the source, crosses the container wall and the contents, hits
the white reflector behind them and comes back the same way. Along the way
the container wall and the contents each back-scatter part of the light
straight to the detector. Per channel::

    signal = I * g * R * (r_container + T_container**2 * (r_content + T_content**2))

where ``T`` is single-pass transmission, ``r = albedo * (1 - T - A)`` is
diffuse back-scatter, ``R`` the reflector reflectance and ``g`` in (0, 1]
a per-sample coupling loss from repositioning. R scales the back-scatter
terms too, so nothing can return more light than the white reference,
which is the maximum signal at the working distance. Dark current and
shot noise are added afterwards and the result is clamped at zero.

An opaque container (T = 0) leaves only its own back-scatter, which
carries no information about what is inside.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import META_COLUMNS, channel_header
from .labels import CONTAINER_CLASSES, CONTAINER_INSTANCES, CONTENT_CLASSES
from .spectra import CHANNELS, Device, RawSpectrum

N_VIS = CHANNELS[Device.VISIBLE]
N_NIR = CHANNELS[Device.NIR]
N_TOTAL = N_VIS + N_NIR

VIS_WAVELENGTHS = np.linspace(340.0, 850.0, N_VIS)
# dense grid the NIR chip's bimodal channel responses integrate over
_NIR_GRID = np.linspace(850.0, 1700.0, 426)
INTEGRATION_TIME_MS = {Device.VISIBLE: 170.0, Device.NIR: 512.0}
PROFILE_SEED = 20230101


def _gauss(x: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    return np.exp(-0.5 * ((x - mu) / sigma) ** 2)


def _nir_responses() -> np.ndarray:
    """Normalized (16, grid) response matrix: two broad lobes per channel."""
    rng = np.random.default_rng(7)
    first = np.linspace(880.0, 1300.0, N_NIR)
    second = first + rng.uniform(250.0, 400.0, N_NIR)
    resp = np.stack(
        [
            _gauss(_NIR_GRID, a, 45.0) + 0.6 * _gauss(_NIR_GRID, b, 60.0)
            for a, b in zip(first, second)
        ]
    )
    return resp / resp.sum(axis=1, keepdims=True)


_NIR_RESPONSE = _nir_responses()


def project(curve) -> np.ndarray:
    """Map a continuous curve ``f(wavelength_nm)`` onto the 288 + 16 device channels."""
    vis = curve(VIS_WAVELENGTHS)
    nir = _NIR_RESPONSE @ curve(_NIR_GRID)
    return np.concatenate([vis, nir])


@dataclass(frozen=True)
class MaterialProfile:
    """Optical behaviour of one layer over all 304 channels."""

    name: str
    transmission: np.ndarray
    absorption: np.ndarray
    scattering_albedo: float

    def __post_init__(self) -> None:
        t = np.asarray(self.transmission, dtype=np.float64)
        a = np.asarray(self.absorption, dtype=np.float64)
        if t.shape != (N_TOTAL,) or a.shape != (N_TOTAL,):
            raise ValueError(f"{self.name}: curves must cover all {N_TOTAL} channels")
        if np.any((t < 0) | (t > 1)) or np.any((a < 0) | (a > 1)):
            raise ValueError(f"{self.name}: transmission and absorption must lie in [0, 1]")
        if np.any(t + a > 1 + 1e-12):
            raise ValueError(f"{self.name}: transmission + absorption exceeds 1")
        if not 0 <= self.scattering_albedo <= 1:
            raise ValueError(f"{self.name}: scattering_albedo must lie in [0, 1]")
        object.__setattr__(self, "transmission", t)
        object.__setattr__(self, "absorption", a)

    @property
    def backscatter(self) -> np.ndarray:
        return self.scattering_albedo * np.clip(1.0 - self.transmission - self.absorption, 0.0, 1.0)

    def with_transmission(self, transmission: np.ndarray) -> "MaterialProfile":
        t = np.clip(transmission, 0.0, 1.0 - self.absorption)
        return replace(self, transmission=t)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "transmission": self.transmission.tolist(),
            "absorption": self.absorption.tolist(),
            "scattering_albedo": self.scattering_albedo,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MaterialProfile":
        return cls(d["name"], np.array(d["transmission"]), np.array(d["absorption"]), float(d["scattering_albedo"]))


def transparent(name: str = "transparent") -> MaterialProfile:
    return MaterialProfile(name, np.ones(N_TOTAL), np.zeros(N_TOTAL), 0.0)


def opaque(profile: MaterialProfile) -> MaterialProfile:
    return replace(profile, transmission=np.zeros(N_TOTAL))


@dataclass(frozen=True)
class NoiseModel:
    dark_mean_vis: float = 300.0
    dark_std_vis: float = 0.25
    dark_mean_nir: float = 1200.0
    dark_std_nir: float = 1.0
    # shot noise standard deviation is shot_scale * sqrt(signal); the default
    # ("moderate") puts the visible peak near 5000:1 signal-to-noise
    shot_scale: float = 0.01

    def dark_mean(self) -> np.ndarray:
        return np.concatenate([np.full(N_VIS, self.dark_mean_vis), np.full(N_NIR, self.dark_mean_nir)])

    def dark_std(self) -> np.ndarray:
        return np.concatenate([np.full(N_VIS, self.dark_std_vis), np.full(N_NIR, self.dark_std_nir)])

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls(dark_std_vis=0.0, dark_std_nir=0.0, shot_scale=0.0)

    @classmethod
    def preset(cls, name: str) -> "NoiseModel":
        presets = {
            "none": cls.none(),
            "low": cls(dark_std_vis=0.1, dark_std_nir=0.5, shot_scale=0.005),
            "moderate": cls(),
            "high": cls(dark_std_vis=1.0, dark_std_nir=4.0, shot_scale=0.04),
        }
        try:
            return presets[name]
        except KeyError:
            raise ValueError(f"unknown noise preset {name!r}; choose from {sorted(presets)}") from None


@dataclass(frozen=True)
class Jitter:
    """Per-sample perturbation standing in for container repositioning."""

    # coupling loss g drawn uniformly from [1 - gain, 1]
    gain: float = 0.1
    # relative amplitude of smooth multiplicative transmission perturbations
    curve: float = 0.02

    @classmethod
    def none(cls) -> "Jitter":
        return cls(0.0, 0.0)


def default_illuminant() -> np.ndarray:
    """Source intensity per channel in detector counts at the working distance.

    Halogen (about 2900 K blackbody) times a silicon or InGaAs-like detector response.
    """
    h, c, k = 6.626e-34, 2.998e8, 1.381e-23

    def planck(lam_nm):
        lam = lam_nm * 1e-9
        return 1.0 / (lam**5 * (np.exp(h * c / (lam * k * 2900.0)) - 1.0))

    def vis_curve(lam):
        return planck(lam) * _gauss(lam, 700.0, 160.0)

    def nir_curve(lam):
        return planck(lam) * (0.3 + 0.7 * _gauss(lam, 1300.0, 300.0))

    vis = vis_curve(VIS_WAVELENGTHS)
    vis = 3000.0 * vis / vis.max() + 150.0
    nir = _NIR_RESPONSE @ nir_curve(_NIR_GRID)
    nir = 40000.0 * nir / nir.max()
    return np.concatenate([vis, nir])


@dataclass(frozen=True)
class SceneSpec:
    container: MaterialProfile
    content: MaterialProfile
    illuminant: np.ndarray = field(default_factory=default_illuminant)
    reflector_reflectance: float = 0.95
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0
    gain: float = 1.0

    def __post_init__(self) -> None:
        illum = np.asarray(self.illuminant, dtype=np.float64)
        if illum.shape != (N_TOTAL,):
            raise ValueError(f"illuminant must have {N_TOTAL} channels")
        if np.any(illum < 0):
            raise ValueError("illuminant must be non-negative")
        if not 0 < self.reflector_reflectance <= 1:
            raise ValueError("reflector_reflectance must lie in (0, 1]")
        if not 0 < self.gain <= 1:
            raise ValueError("gain must lie in (0, 1]")
        object.__setattr__(self, "illuminant", illum)


def clean_signal(scene: SceneSpec) -> np.ndarray:
    """Noise-free returned intensity (without dark current)."""
    c, b = scene.container, scene.content
    inner = b.backscatter + b.transmission**2
    path = c.backscatter + c.transmission**2 * inner
    return scene.illuminant * scene.gain * scene.reflector_reflectance * path


def simulate_reading(scene: SceneSpec) -> tuple[RawSpectrum, RawSpectrum]:
    """One noisy (visible, NIR) reading pair for ``scene``."""
    rng = np.random.default_rng(scene.seed)
    signal = clean_signal(scene)
    noise = scene.noise
    dark = noise.dark_mean() + rng.standard_normal(N_TOTAL) * noise.dark_std()
    shot = rng.standard_normal(N_TOTAL) * (noise.shot_scale * np.sqrt(signal))
    reading = np.maximum(signal + dark + shot, 0.0)
    return (
        RawSpectrum(Device.VISIBLE, reading[:N_VIS], INTEGRATION_TIME_MS[Device.VISIBLE]),
        RawSpectrum(Device.NIR, reading[N_VIS:], INTEGRATION_TIME_MS[Device.NIR]),
    )


# --------------------------------------------------------------------------
# default material profiles

# (base transmission, absorbed fraction of the rest, albedo, [(center nm, depth, width nm)])
_CONTAINER_SHAPES = {
    "Acrylic": (0.90, 0.3, 0.35, [(1190, 0.15, 40), (1400, 0.2, 50), (1680, 0.3, 40)]),
    "Glass": (0.88, 0.4, 0.30, [(380, 0.3, 40), (1400, 0.05, 80)]),
    "PET": (0.84, 0.3, 0.40, [(1130, 0.08, 40), (1660, 0.35, 40)]),
    "PP": (0.55, 0.4, 0.60, [(1210, 0.2, 40), (1390, 0.15, 50), (1720, 0.3, 50)]),
    "Paper": (0.40, 0.5, 0.85, [(1450, 0.15, 80), (1200, 0.08, 60), (1930, 0.2, 80)]),
    "Silicone": (0.62, 0.4, 0.55, [(1180, 0.15, 30), (1400, 0.2, 40), (1500, 0.1, 60)]),
}
_CONTENT_SHAPES = {
    "Acetaminophen": (0.25, 0.4, 0.85, [(1140, 0.25, 30), (1510, 0.45, 40), (1660, 0.35, 30)]),
    "AlmondMilk": (0.15, 0.3, 0.90, [(420, 0.3, 60), (970, 0.1, 40), (1200, 0.15, 50), (1450, 0.4, 60)]),
    "Coke": (0.10, 0.9, 0.06, [(450, 0.08, 80), (1450, 0.05, 60)]),
    "Empty": (1.00, 0.0, 0.00, []),
    "Ibuprofen": (0.25, 0.4, 0.85, [(1190, 0.4, 30), (1390, 0.3, 30), (1690, 0.45, 40)]),
    "Ketchup": (0.08, 0.7, 0.50, [(500, 0.6, 80), (420, 0.5, 40), (1450, 0.3, 60)]),
    "OliveOil": (0.80, 0.5, 0.10, [(670, 0.4, 20), (450, 0.5, 40), (1210, 0.3, 40), (1400, 0.2, 40)]),
    "OrangeJuice": (0.35, 0.5, 0.60, [(470, 0.6, 50), (970, 0.1, 40), (1450, 0.5, 60)]),
    "Salt": (0.30, 0.2, 0.92, []),
    "SoySauce": (0.08, 0.9, 0.08, [(500, 0.07, 120), (1450, 0.05, 60)]),
    "Sugar": (0.30, 0.2, 0.88, [(1430, 0.25, 40), (1560, 0.2, 40)]),
    "VegetableOil": (0.85, 0.5, 0.10, [(450, 0.5, 40), (1210, 0.35, 40), (1400, 0.25, 40)]),
    "Water": (0.92, 0.8, 0.05, [(970, 0.15, 40), (1200, 0.25, 50), (1450, 0.8, 60)]),
}
_COLOR_BANDS = {
    "yellow": (450.0, 0.6),
    "green": (620.0, 0.6),
    "red": (510.0, 0.7),
    "orange": (480.0, 0.65),
    "purple": (560.0, 0.6),
    "blue": (600.0, 0.6),
}


def _shaped_profile(name: str, shape, rng: np.random.Generator, extra_bumps: int = 3) -> MaterialProfile:
    t0, absorbed, albedo, bumps = shape
    bumps = list(bumps)
    for _ in range(extra_bumps if t0 < 1.0 else 0):
        bumps.append((rng.uniform(360, 1680), rng.uniform(0.03, 0.12), rng.uniform(25, 120)))

    def t_curve(lam):
        t = np.full_like(lam, t0)
        for mu, depth, width in bumps:
            t = t * (1.0 - depth * _gauss(lam, mu, width))
        return t

    phase = rng.uniform(0, 2 * np.pi)

    def f_curve(lam):
        return absorbed * (0.85 + 0.15 * np.sin(lam / 180.0 + phase))

    t = np.clip(project(t_curve), 0.0, 1.0)
    a = np.clip((1.0 - t) * project(f_curve), 0.0, 1.0 - t)
    return MaterialProfile(name, t, a, float(albedo))


def generate_default_profiles(seed: int = PROFILE_SEED) -> tuple[list[MaterialProfile], list[MaterialProfile]]:
    """Container and content profiles built from hand-shaped bumps plus seeded random ones."""
    rng = np.random.default_rng(seed)
    containers = [_shaped_profile(n, _CONTAINER_SHAPES[n], rng) for n in CONTAINER_CLASSES]
    contents = [_shaped_profile(n, _CONTENT_SHAPES[n], rng) for n in CONTENT_CLASSES]
    return containers, contents


def instance_profile(material: MaterialProfile, color: str) -> MaterialProfile:
    """Tint a container material with a colour absorption band in the visible."""
    if color not in _COLOR_BANDS:
        return material
    mu, depth = _COLOR_BANDS[color]
    tint = 1.0 - depth * project(lambda lam: _gauss(lam, mu, 45.0))
    return material.with_transmission(material.transmission * tint)


def profiles_to_json(containers, contents) -> str:
    return json.dumps(
        {
            "profile_seed": PROFILE_SEED,
            "containers": [p.to_dict() for p in containers],
            "contents": [p.to_dict() for p in contents],
        }
    )


def load_default_profiles() -> tuple[list[MaterialProfile], list[MaterialProfile]]:
    """The committed fixture profiles shipped with the package."""
    text = resources.files("vnirliquid").joinpath("data/profiles.json").read_text(encoding="utf-8")
    doc = json.loads(text)
    containers = [MaterialProfile.from_dict(d) for d in doc["containers"]]
    contents = [MaterialProfile.from_dict(d) for d in doc["contents"]]
    return containers, contents


# --------------------------------------------------------------------------
# corpus generation


def _jittered(profile: MaterialProfile, rng: np.random.Generator, amplitude: float) -> MaterialProfile:
    if amplitude == 0 or profile.transmission.max() == 0:
        return profile
    x = np.linspace(0.0, 1.0, N_TOTAL)
    coef = rng.standard_normal(3) * amplitude
    wobble = 1.0 + coef[0] + coef[1] * np.cos(np.pi * x) + coef[2] * np.cos(2 * np.pi * x)
    return profile.with_transmission(profile.transmission * wobble)


def _fmt(x: float) -> str:
    return f"{x:.4f}"


@dataclass
class CorpusPaths:
    dataset_vis: Path
    dataset_nir: Path
    references: Path

    @property
    def datasets(self) -> list[Path]:
        return [self.dataset_vis, self.dataset_nir]


def reference_readings(
    illuminant: np.ndarray,
    noise: NoiseModel,
    seed: int,
    count: int = 10,
    reflector_reflectance: float = 0.95,
) -> dict[str, list[tuple[RawSpectrum, RawSpectrum]]]:
    """White (empty gripper, Teflon only) and dark (no light) reading pairs."""
    ss = np.random.default_rng(seed)
    seeds = ss.integers(0, 2**63 - 1, size=2 * count)
    empty = transparent()
    out: dict[str, list] = {"white": [], "dark": []}
    for i in range(count):
        out["white"].append(
            simulate_reading(SceneSpec(empty, empty, illuminant, reflector_reflectance, noise, int(seeds[i])))
        )
        out["dark"].append(
            simulate_reading(
                SceneSpec(empty, empty, np.zeros(N_TOTAL), reflector_reflectance, noise, int(seeds[count + i]))
            )
        )
    return out


def write_references(path: Path, refs: dict[str, list[tuple[RawSpectrum, RawSpectrum]]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["device", "kind", *channel_header(N_VIS)])
        for device_idx, device in enumerate((Device.VISIBLE, Device.NIR)):
            for kind in ("white", "dark"):
                for pair in refs[kind]:
                    values = [_fmt(v) for v in pair[device_idx].channels]
                    w.writerow([device.value, kind, *values])


def generate_corpus(
    out_dir: Path | str,
    containers: Sequence[MaterialProfile] | None = None,
    contents: Sequence[MaterialProfile] | None = None,
    samples_per_cell: int = 30,
    seed: int = 0,
    noise: NoiseModel | None = None,
    jitter: Jitter | None = None,
    opaque_containers: bool = False,
    reference_count: int = 10,
) -> CorpusPaths:
    """Write a labelled dataset (one CSV per device) and a reference CSV.

    Every (container material, content) cell gets ``samples_per_cell`` reading
    pairs; physical container instances (colours) rotate within a material.
    Each cell draws from its own seed stream, so output is reproducible.
    """
    if containers is None or contents is None:
        default_c, default_b = load_default_profiles()
        containers = default_c if containers is None else containers
        contents = default_b if contents is None else contents
    for group in (containers, contents):
        names = [p.name for p in group]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate material names: {names}")
    if samples_per_cell < 1:
        raise ValueError("samples_per_cell must be >= 1")
    noise = NoiseModel() if noise is None else noise
    jitter = Jitter() if jitter is None else jitter
    illuminant = default_illuminant()

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = CorpusPaths(out / "dataset_vis.csv", out / "dataset_nir.csv", out / "references.csv")
    root = np.random.SeedSequence(seed)
    ref_seed, cell_root = root.spawn(2)
    write_references(
        paths.references,
        reference_readings(illuminant, noise, int(ref_seed.generate_state(1)[0]), reference_count),
    )

    cells = cell_root.spawn(len(containers) * len(contents))
    with open(paths.dataset_vis, "w", newline="", encoding="utf-8") as fv, open(
        paths.dataset_nir, "w", newline="", encoding="utf-8"
    ) as fn:
        wv = csv.writer(fv, lineterminator="\n")
        wn = csv.writer(fn, lineterminator="\n")
        wv.writerow([*META_COLUMNS, *channel_header(N_VIS)])
        wn.writerow([*META_COLUMNS, *channel_header(N_NIR)])
        for ci, container in enumerate(containers):
            colors = CONTAINER_INSTANCES.get(container.name, ("default",))
            for bi, content in enumerate(contents):
                rng = np.random.default_rng(cells[ci * len(contents) + bi])
                for k in range(samples_per_cell):
                    color = colors[k % len(colors)]
                    cont = instance_profile(container, color)
                    cont = _jittered(cont, rng, jitter.curve)
                    if opaque_containers:
                        cont = opaque(cont)
                    filling = _jittered(content, rng, jitter.curve)
                    gain = 1.0 - rng.uniform(0.0, jitter.gain) if jitter.gain > 0 else 1.0
                    scene = SceneSpec(
                        cont, filling, illuminant, 0.95, noise, int(rng.integers(0, 2**63 - 1)), gain
                    )
                    vis, nir = simulate_reading(scene)
                    sid = f"{container.name}-{content.name}-{k:03d}"
                    meta = [sid, "", container.name, f"{container.name}-{color}", content.name]
                    wv.writerow([*meta[:1], Device.VISIBLE.value, *meta[2:], _fmt(vis.integration_time_ms),
                                 *map(_fmt, vis.channels)])
                    wn.writerow([*meta[:1], Device.NIR.value, *meta[2:], _fmt(nir.integration_time_ms),
                                 *map(_fmt, nir.channels)])
    return paths
