"""Straight-line transport from a point source onto the chip plane."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from ..geometry import ArrayGeometry


@dataclass(frozen=True)
class Photon:
    energy: float  # keV
    origin: tuple[float, float, float]  # mm
    direction: tuple[float, float, float]
    emit_time: float = 0.0  # s

    def __post_init__(self):
        if not self.energy > 0:
            raise ValueError("photon energy must be positive")
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise ValueError("direction must be a unit vector")


class PixelHit(NamedTuple):
    row: int
    col: int
    incidence_angle: float  # rad from the chip normal
    path_in_depletion: float  # um


def intersect_chip(origins, directions, geometry: ArrayGeometry):
    """Vectorised ray/chip intersection.

    Returns ``(row, col, incidence_angle, path_um)``; missed rays carry
    row = col = 0 and NaN angle/path.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    z0 = origins[:, 2]
    dz = directions[:, 2]
    toward = (np.abs(dz) > 1e-12) & (z0 * dz < 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(toward, -z0 / dz, np.nan)
    x = origins[:, 0] + s * directions[:, 0]
    y = origins[:, 1] + s * directions[:, 1]
    row, col = geometry.pixel_at(np.where(toward, x, np.inf), np.where(toward, y, np.inf))
    hit = row > 0
    cos_i = np.abs(dz)
    theta_i = np.where(hit, np.arccos(np.clip(cos_i, 0.0, 1.0)), np.nan)
    with np.errstate(divide="ignore"):
        path = np.where(hit, geometry.depletion_depth / cos_i, np.nan)
    return row, col, theta_i, path


def transport_to_pixel(photon: Photon, geometry: ArrayGeometry) -> Optional[PixelHit]:
    """Pixel struck by ``photon``, or None if it misses the sensitive area."""
    row, col, theta_i, path = intersect_chip(photon.origin, photon.direction, geometry)
    if row[0] == 0:
        return None
    return PixelHit(int(row[0]), int(col[0]), float(theta_i[0]), float(path[0]))


def rectangle_solid_angle(x1: float, x2: float, y1: float, y2: float, h: float) -> float:
    """Solid angle of the rectangle [x1,x2]x[y1,y2] in a plane at distance h.

    Coordinates are relative to the foot of the perpendicular from the point.
    """
    def f(x, y):
        return np.arctan2(x * y, h * np.sqrt(x * x + y * y + h * h))

    return float(f(x2, y2) - f(x1, y2) - f(x2, y1) + f(x1, y1))


def chip_solid_angle(position, geometry: ArrayGeometry) -> float:
    px, py, pz = position
    hx, hy = geometry.half_extent
    return rectangle_solid_angle(-hx - px, hx - px, -hy - py, hy - py, abs(pz))


@dataclass(frozen=True)
class Cone:
    """Cone of directions from a source that encloses the whole chip."""
    axis: np.ndarray
    cos_half_angle: float
    min_incidence_cos: float  # smallest |cos| of incidence over the chip

    @property
    def fraction(self) -> float:
        """Share of the full sphere covered by the cone."""
        return (1.0 - self.cos_half_angle) / 2.0

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        cos_psi = rng.uniform(self.cos_half_angle, 1.0, n)
        phi = rng.uniform(0.0, 2.0 * np.pi, n)
        sin_psi = np.sqrt(np.clip(1.0 - cos_psi**2, 0.0, None))
        a = self.axis
        helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = np.cross(a, helper)
        u /= np.linalg.norm(u)
        v = np.cross(a, u)
        return (cos_psi[:, None] * a
                + (sin_psi * np.cos(phi))[:, None] * u
                + (sin_psi * np.sin(phi))[:, None] * v)


def chip_cone(position, geometry: ArrayGeometry) -> Cone:
    p = np.asarray(position, dtype=float)
    if p[2] <= 0:
        raise ValueError("source must sit in front of the chip (z > 0)")
    axis = -p / np.linalg.norm(p)
    corners = np.column_stack([geometry.corners, np.zeros(4)])
    to_corner = corners - p
    to_corner /= np.linalg.norm(to_corner, axis=1)[:, None]
    cos_half = float(np.min(to_corner @ axis))
    # a guard so corner rays are not lost to rounding
    cos_half = max(-1.0, cos_half - 1e-12)
    min_cos_inc = float(np.min(np.abs(to_corner[:, 2])))
    return Cone(axis, cos_half, min_cos_inc)
