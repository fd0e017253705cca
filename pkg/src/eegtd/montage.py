"""Fixed 2-D layout of the 32-channel 10-20 montage used by the generator
and the channel-importance outputs.

Coordinates are azimuthal projections onto the unit head disk: x grows to
the right ear, y to the nasion. Values are approximate standard positions;
they only need to order scalp distances sensibly.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence, TextIO

import numpy as np

MONTAGE_32: tuple[tuple[str, float, float], ...] = (
    ("Fp1", -0.31, 0.95),
    ("Fp2", 0.31, 0.95),
    ("F7", -0.81, 0.59),
    ("F3", -0.43, 0.55),
    ("Fz", 0.0, 0.53),
    ("F4", 0.43, 0.55),
    ("F8", 0.81, 0.59),
    ("FC5", -0.69, 0.29),
    ("FC1", -0.25, 0.28),
    ("FC2", 0.25, 0.28),
    ("FC6", 0.69, 0.29),
    ("T7", -1.0, 0.0),
    ("C3", -0.5, 0.0),
    ("Cz", 0.0, 0.0),
    ("C4", 0.5, 0.0),
    ("T8", 1.0, 0.0),
    ("TP9", -1.03, -0.32),
    ("CP5", -0.69, -0.29),
    ("CP1", -0.25, -0.28),
    ("CP2", 0.25, -0.28),
    ("CP6", 0.69, -0.29),
    ("TP10", 1.03, -0.32),
    ("P7", -0.81, -0.59),
    ("P3", -0.43, -0.55),
    ("Pz", 0.0, -0.53),
    ("P4", 0.43, -0.55),
    ("P8", 0.81, -0.59),
    ("PO9", -0.63, -0.88),
    ("O1", -0.31, -0.95),
    ("Oz", 0.0, -1.0),
    ("O2", 0.31, -0.95),
    ("PO10", 0.63, -0.88),
)

CHANNEL_NAMES: tuple[str, ...] = tuple(label for label, _, _ in MONTAGE_32)

_POSITIONS: dict[str, tuple[float, float]] = {
    label: (x, y) for label, x, y in MONTAGE_32
}

OCCIPITAL_CHANNELS = ("PO9", "O1", "Oz", "O2", "PO10")
FRONTAL_CHANNELS = ("Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8")


def position(label: str) -> tuple[float, float]:
    try:
        return _POSITIONS[label]
    except KeyError:
        raise ValueError(f"unknown channel label {label!r}") from None


def distance(a: str, b: str) -> float:
    (ax, ay), (bx, by) = position(a), position(b)
    return math.hypot(ax - bx, ay - by)


def spatial_weights(
    center: str, labels: Sequence[str], sigma: float
) -> np.ndarray:
    """Gaussian falloff exp(-d^2 / (2 sigma^2)) of scalp distance from `center`."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    dists = np.array([distance(center, lab) for lab in labels])
    return np.exp(-(dists**2) / (2.0 * sigma**2))


def write_layout_csv(destination: TextIO, labels: Iterable[str] = CHANNEL_NAMES) -> None:
    destination.write("channel,x,y\n")
    for label in labels:
        x, y = position(label)
        destination.write(f"{label},{x},{y}\n")
