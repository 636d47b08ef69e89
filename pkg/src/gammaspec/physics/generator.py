"""Poisson event generator: decay -> emission -> transport -> Compton deposit."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Iterator

import numpy as np

from ..geometry import ArrayGeometry, PixelKind
from .attenuation import AttenuationTable
from .kinematics import deposit_in_depletion, interaction_probability, sample_compton
from .sources import PointSource, expected_decays, sample_decay_times
from .transport import chip_cone, intersect_chip

UM_PER_CM = 1e4
DEFAULT_STOPPING_POWER = 1.5  # keV/um


@dataclass(frozen=True)
class InteractionEvent:
    pixel_row: int
    pixel_col: int
    diode_index: int
    time: float
    deposited_energy: float
    scatter_angle: float
    incidence_angle: float
    electron_energy: float
    incident_energy: float


@dataclass
class Interactions:
    """Column store of interaction events, sorted by time."""
    time: np.ndarray
    pixel_row: np.ndarray
    pixel_col: np.ndarray
    diode_index: np.ndarray
    deposited_energy: np.ndarray
    scatter_angle: np.ndarray
    incidence_angle: np.ndarray
    electron_energy: np.ndarray
    incident_energy: np.ndarray

    def __len__(self) -> int:
        return self.time.size

    def __getitem__(self, i: int) -> InteractionEvent:
        return InteractionEvent(
            int(self.pixel_row[i]), int(self.pixel_col[i]), int(self.diode_index[i]),
            float(self.time[i]), float(self.deposited_energy[i]), float(self.scatter_angle[i]),
            float(self.incidence_angle[i]), float(self.electron_energy[i]),
            float(self.incident_energy[i]))

    def __iter__(self) -> Iterator[InteractionEvent]:
        return (self[i] for i in range(len(self)))

    def select(self, mask) -> "Interactions":
        return Interactions(**{f.name: getattr(self, f.name)[mask] for f in fields(self)})

    @classmethod
    def empty(cls) -> "Interactions":
        z = np.zeros(0)
        zi = np.zeros(0, dtype=np.int64)
        return cls(z, zi, zi, zi, z, z, z, z, z)

    @classmethod
    def concatenate(cls, parts) -> "Interactions":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(**{f.name: np.concatenate([getattr(p, f.name) for p in parts])
                      for f in fields(cls)})

    def to_bytes(self) -> bytes:
        """Canonical binary image, used for determinism checks."""
        return b"".join(np.ascontiguousarray(getattr(self, f.name)).tobytes() for f in fields(self))


@dataclass(frozen=True)
class Scene:
    """Everything the generator needs besides duration and rng."""
    source: PointSource
    geometry: ArrayGeometry = field(default_factory=ArrayGeometry)
    attenuation: AttenuationTable | None = None
    stopping_power: float = DEFAULT_STOPPING_POWER  # keV/um
    # multiplies the Poisson mean; stands in for unmodelled collection efficiency
    efficiency_scale: float = 1.0

    def generate(self, duration: float, rng: np.random.Generator, t0: float = 0.0) -> Interactions:
        return generate_interactions(self.source, self.geometry, self.attenuation, duration, rng,
                                     t0=t0, stopping_power=self.stopping_power,
                                     efficiency_scale=self.efficiency_scale)

    def expected_interactions(self, duration: float, t0: float = 0.0) -> float:
        return expected_interaction_count(self.source, self.geometry, self.attenuation, duration,
                                          t0=t0, efficiency_scale=self.efficiency_scale)


def _line_majorants(source, geometry, table):
    cone = chip_cone(source.position, geometry)
    max_path_cm = geometry.depletion_depth / cone.min_incidence_cos / UM_PER_CM
    mu = np.asarray(table(source.isotope.energies), dtype=float).reshape(-1)
    p_max = interaction_probability(mu, max_path_cm)
    return cone, mu, np.atleast_1d(p_max)


def _table(table):
    if table is None:
        from .attenuation import load_attenuation_table
        return load_attenuation_table()
    return table


def expected_interaction_count(source: PointSource, geometry: ArrayGeometry, table, duration: float,
                               t0: float = 0.0, efficiency_scale: float = 1.0,
                               n_quad: int = 200) -> float:
    """Mean number of interactions in the window, by deterministic quadrature over the chip."""
    table = _table(table)
    hx, hy = geometry.half_extent
    xs = (np.arange(n_quad) + 0.5) / n_quad * 2 * hx - hx
    ys = (np.arange(n_quad) + 0.5) / n_quad * 2 * hy - hy
    X, Y = np.meshgrid(xs, ys)
    px, py, pz = source.position
    d2 = (X - px) ** 2 + (Y - py) ** 2 + pz**2
    cos_i = pz / np.sqrt(d2)
    # dOmega = cos / r^2 dA
    d_omega = cos_i / d2 * (2 * hx / n_quad) * (2 * hy / n_quad)
    path_cm = geometry.depletion_depth / cos_i / UM_PER_CM
    n_decays = expected_decays(source, t0, duration)
    total = 0.0
    for line in source.isotope.lines:
        p = interaction_probability(table(line.energy), path_cm)
        total += line.yield_ * np.sum(p * d_omega) / (4 * np.pi)
    return float(n_decays * total * efficiency_scale)


def generate_interactions(source: PointSource, geometry: ArrayGeometry, tables: AttenuationTable | None,
                          duration: float, rng: np.random.Generator, *, t0: float = 0.0,
                          stopping_power: float = DEFAULT_STOPPING_POWER,
                          efficiency_scale: float = 1.0) -> Interactions:
    """Simulate the interactions a source produces in the depletion layer.

    Photon directions are drawn only inside the cone that just encloses the
    chip, and the Poisson mean is scaled by the cone's share of the sphere.
    The per-photon interaction test is applied by thinning: the mean is also
    scaled by the largest interaction probability over the chip for each line,
    and each photon is then kept with probability p(path) / p_max. The
    resulting event counts are Poisson with the same mean as the naive
    emit-everything-and-test scheme.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if not geometry.populated_mask().any():
        raise ValueError("geometry has no pixels")
    tables = _table(tables)
    iso = source.isotope
    if source.activity_at_t0 == 0 or efficiency_scale == 0:
        return Interactions.empty()

    cone, mu, p_max = _line_majorants(source, geometry, tables)
    n_decays = expected_decays(source, t0, duration)
    line_means = n_decays * iso.yields * cone.fraction * p_max * efficiency_scale
    total_mean = float(line_means.sum())
    n = int(rng.poisson(total_mean)) if total_mean > 0 else 0
    if n == 0:
        return Interactions.empty()

    line_idx = rng.choice(len(iso.lines), size=n, p=line_means / total_mean)
    times = sample_decay_times(source, t0, duration, n, rng)
    dirs = cone.sample(n, rng)
    origin = np.broadcast_to(np.asarray(source.position, dtype=float), (n, 3))
    row, col, theta_i, path_um = intersect_chip(origin, dirs, geometry)
    hit = row > 0

    energies = iso.energies[line_idx]
    keep_p = np.zeros(n)
    p = interaction_probability(mu[line_idx[hit]], path_um[hit] / UM_PER_CM)
    keep_p[hit] = np.asarray(p) / p_max[line_idx[hit]]
    u = rng.uniform(0.0, 1.0, n)
    keep = hit & (u < keep_p)

    idx = np.flatnonzero(keep)
    m = idx.size
    if m == 0:
        return Interactions.empty()
    theta, electron, _ = sample_compton(energies[idx], rng)
    deposit = deposit_in_depletion(electron, path_um[idx], stopping_power)

    kinds = geometry.row_kinds()[row[idx] - 1]
    diode = np.where(kinds == PixelKind.LOW_FLUX, rng.integers(0, 6, m), 0)

    order = np.argsort(times[idx], kind="stable")
    return Interactions(
        time=times[idx][order],
        pixel_row=row[idx][order].astype(np.int64),
        pixel_col=col[idx][order].astype(np.int64),
        diode_index=diode[order].astype(np.int64),
        deposited_energy=np.asarray(deposit)[order],
        scatter_angle=theta[order],
        incidence_angle=theta_i[idx][order],
        electron_energy=electron[order],
        incident_energy=energies[idx][order],
    )
