"""Tabulated Compton attenuation coefficients with log-log interpolation."""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class AttenuationTable:
    material: str
    energies: np.ndarray  # keV
    mu: np.ndarray  # 1/cm

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        m = np.asarray(self.mu, dtype=float)
        if e.ndim != 1 or e.shape != m.shape or e.size < 2:
            raise ValueError("need at least two (energy, mu) rows")
        if np.any(np.diff(e) <= 0):
            raise ValueError("energies must be strictly increasing")
        if np.any(e <= 0) or np.any(m < 0):
            raise ValueError("energies must be positive and mu non-negative")
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "mu", m)

    def __call__(self, energy):
        """Compton mu (1/cm) at ``energy`` keV; extrapolation raises."""
        e = np.asarray(energy, dtype=float)
        if np.any(e < self.energies[0]) or np.any(e > self.energies[-1]):
            raise ValueError(
                f"energy outside table range [{self.energies[0]}, {self.energies[-1]}] keV")
        if np.any(self.mu == 0):
            out = np.interp(e, self.energies, self.mu)
        else:
            out = np.exp(np.interp(np.log(e), np.log(self.energies), np.log(self.mu)))
        return out if out.ndim else float(out)


def parse_attenuation_table(text: str) -> AttenuationTable:
    """Parse the two-column format: a ``# material: <name>`` header, then rows."""
    material = None
    rows = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.lower().startswith("material:") and material is None:
                material = body.split(":", 1)[1].strip()
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError(f"malformed attenuation row: {raw!r}")
        rows.append((float(parts[0]), float(parts[1])))
    if material is None:
        raise ValueError("attenuation table lacks a '# material:' header")
    arr = np.array(rows)
    return AttenuationTable(material, arr[:, 0], arr[:, 1])


def load_attenuation_table(path: str | Path | None = None) -> AttenuationTable:
    """Load a table from ``path``, or the bundled silicon Compton table."""
    if path is None or str(path) == "silicon":
        text = resources.files("gammaspec.data").joinpath("silicon_compton.txt").read_text()
    else:
        text = Path(path).read_text()
    return parse_attenuation_table(text)
