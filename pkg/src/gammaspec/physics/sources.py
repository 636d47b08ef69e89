"""Radioisotope sources, decay and emission-time sampling."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..constants import BQ_PER_MICROCURIE


@dataclass(frozen=True)
class EmissionLine:
    energy: float  # keV
    yield_: float  # photons per decay

    def __post_init__(self):
        if not self.energy > 0:
            raise ValueError("emission energy must be positive")
        if self.yield_ < 0:
            raise ValueError("emission yield must be non-negative")


@dataclass(frozen=True)
class Isotope:
    name: str
    half_life: float  # s
    lines: tuple[EmissionLine, ...]

    def __post_init__(self):
        if not self.half_life > 0:
            raise ValueError("half_life must be positive")
        if not self.lines:
            raise ValueError("an isotope needs at least one emission line")
        object.__setattr__(self, "lines", tuple(self.lines))

    @property
    def decay_constant(self) -> float:
        return math.log(2.0) / self.half_life

    @property
    def energies(self) -> np.ndarray:
        return np.array([ln.energy for ln in self.lines])

    @property
    def yields(self) -> np.ndarray:
        return np.array([ln.yield_ for ln in self.lines])

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "half_life_s": self.half_life,
            "lines": [{"energy_kev": ln.energy, "yield": ln.yield_} for ln in self.lines],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Isotope":
        unknown = set(d) - {"name", "half_life_s", "lines", "source"}
        if unknown:
            raise ValueError(f"unknown isotope keys: {sorted(unknown)}")
        lines = []
        for row in d["lines"]:
            extra = set(row) - {"energy_kev", "yield"}
            if extra:
                raise ValueError(f"unknown emission-line keys: {sorted(extra)}")
            lines.append(EmissionLine(float(row["energy_kev"]), float(row["yield"])))
        return cls(str(d["name"]), float(d["half_life_s"]), tuple(lines))

    @classmethod
    def monoenergetic(cls, energy: float, half_life: float = 1e12, name: str | None = None) -> "Isotope":
        return cls(name or f"mono_{energy:g}keV", half_life, (EmissionLine(energy, 1.0),))


BUILTIN_ISOTOPES = ("Cu64", "Ba133", "Lu177")


def load_isotope(name_or_path: str | Path) -> Isotope:
    """Load an isotope from a JSON file, or a bundled one by name (``"Ba133"``)."""
    if str(name_or_path) in BUILTIN_ISOTOPES:
        text = resources.files("gammaspec.data").joinpath(f"{name_or_path}.json").read_text()
    else:
        text = Path(name_or_path).read_text()
    return Isotope.from_dict(json.loads(text))


@dataclass(frozen=True)
class PointSource:
    isotope: Isotope
    activity_at_t0: float  # Bq
    position: tuple[float, float, float] = (0.0, 0.0, 10.0)  # mm from chip centre

    def __post_init__(self):
        if self.activity_at_t0 < 0:
            raise ValueError("activity must be non-negative")
        pos = tuple(float(p) for p in self.position)
        if len(pos) != 3:
            raise ValueError("position must be a 3-vector")
        object.__setattr__(self, "position", pos)

    @classmethod
    def from_microcurie(cls, isotope: Isotope, microcurie: float,
                        position=(0.0, 0.0, 10.0)) -> "PointSource":
        return cls(isotope, microcurie * BQ_PER_MICROCURIE, position)

    @property
    def activity_microcurie(self) -> float:
        return self.activity_at_t0 / BQ_PER_MICROCURIE


def activity_at(source: PointSource, t: float) -> float:
    """Activity in Bq at time ``t`` seconds after t0."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return source.activity_at_t0 * 2.0 ** (-t / source.isotope.half_life)


def expected_decays(source: PointSource, t0: float, duration: float) -> float:
    """Integral of the activity over [t0, t0 + duration]."""
    if t0 < 0 or duration < 0:
        raise ValueError("t0 and duration must be non-negative")
    lam = source.isotope.decay_constant
    # expm1 keeps precision for acquisitions much shorter than the half-life
    return source.activity_at_t0 * math.exp(-lam * t0) * -math.expm1(-lam * duration) / lam


def sample_decay_times(source: PointSource, t0: float, duration: float, n: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` decay instants from the exponentially falling rate on the window."""
    lam = source.isotope.decay_constant
    u = rng.uniform(0.0, 1.0, n)
    frac = -math.expm1(-lam * duration)
    return t0 - np.log1p(-u * frac) / lam
