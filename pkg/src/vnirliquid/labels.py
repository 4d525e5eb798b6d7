"""Class vocabularies for the two prediction heads.

Index order is ASCII-sorted by name and is frozen into every saved model.
"""

from __future__ import annotations

from enum import Enum


class ContainerMaterial(str, Enum):
    ACRYLIC = "Acrylic"
    GLASS = "Glass"
    PET = "PET"
    PP = "PP"
    PAPER = "Paper"
    SILICONE = "Silicone"


class Content(str, Enum):
    ACETAMINOPHEN = "Acetaminophen"
    ALMOND_MILK = "AlmondMilk"
    COKE = "Coke"
    EMPTY = "Empty"
    IBUPROFEN = "Ibuprofen"
    KETCHUP = "Ketchup"
    OLIVE_OIL = "OliveOil"
    ORANGE_JUICE = "OrangeJuice"
    SALT = "Salt"
    SOY_SAUCE = "SoySauce"
    SUGAR = "Sugar"
    VEGETABLE_OIL = "VegetableOil"
    WATER = "Water"


CONTAINER_CLASSES: tuple[str, ...] = tuple(sorted(m.value for m in ContainerMaterial))
CONTENT_CLASSES: tuple[str, ...] = tuple(sorted(c.value for c in Content))

N_CONTAINER = len(CONTAINER_CLASSES)
N_CONTENT = len(CONTENT_CLASSES)

_CONTAINER_INDEX = {name: i for i, name in enumerate(CONTAINER_CLASSES)}
_CONTENT_INDEX = {name: i for i, name in enumerate(CONTENT_CLASSES)}

# physical containers used for collection; material is the prediction target
CONTAINER_INSTANCES: dict[str, tuple[str, ...]] = {
    "Glass": ("blue", "clear"),
    "PP": ("yellow", "green", "red", "orange", "purple"),
    "PET": ("clear",),
    "Paper": ("white",),
    "Acrylic": ("clear",),
    "Silicone": ("yellow", "green", "blue"),
}


def container_index(name: str) -> int:
    try:
        return _CONTAINER_INDEX[name]
    except KeyError:
        raise ValueError(f"unknown container material {name!r}") from None


def content_index(name: str) -> int:
    try:
        return _CONTENT_INDEX[name]
    except KeyError:
        raise ValueError(f"unknown content {name!r}") from None
