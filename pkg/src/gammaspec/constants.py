"""Physical constants shared across the simulation."""
from __future__ import annotations

from dataclasses import dataclass

ELECTRON_REST_ENERGY_KEV = 510.99895
ELEMENTARY_CHARGE = 1.602176634e-19  # C
BOLTZMANN = 1.380649e-23  # J/K
BANDGAP_EV = 1.12  # eV per EHP, silicon
QUENCHING_FACTOR = 1.0 / 3.0
TEMPERATURE_K = 300.0
BQ_PER_MICROCURIE = 3.7e4


@dataclass(frozen=True)
class PhysicsConstants:
    electron_rest_energy: float = ELECTRON_REST_ENERGY_KEV
    bandgap_energy: float = BANDGAP_EV
    quenching_factor: float = QUENCHING_FACTOR
    electron_charge: float = ELEMENTARY_CHARGE
    boltzmann_k: float = BOLTZMANN
    temperature: float = TEMPERATURE_K

    def __post_init__(self):
        for name in ("electron_rest_energy", "bandgap_energy", "quenching_factor",
                     "electron_charge", "boltzmann_k", "temperature"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.quenching_factor > 1:
            raise ValueError("quenching_factor must lie in (0, 1]")

    @property
    def kt(self) -> float:
        """Thermal energy kT in joules."""
        return self.boltzmann_k * self.temperature


DEFAULT_CONSTANTS = PhysicsConstants()
