"""Regenerate src/gammaspec/data/silicon_compton.txt.

Below 800 keV the incoherent (bound-electron Compton) mass attenuation of
silicon comes from the Elam tables shipped with ``xraydb``; above that the
free-electron Klein-Nishina total cross section times the silicon electron
density is used (binding effects are negligible there, and the two agree to
0.05 % at 800 keV). Run once; the output file is what the package reads.

    pip install xraydb
    python tools/make_attenuation_table.py
"""
from pathlib import Path

import numpy as np
import xraydb

DENSITY = 2.329  # g/cm^3
R_E = 2.8179403262e-13  # cm
N_A = 6.02214076e23
Z_OVER_A = 14 / 28.0855
MEC2 = 510.99895

ENERGIES = [10, 15, 20, 30, 40, 50, 60, 80, 100, 150, 200, 300, 400, 500, 600,
            800, 1000, 1250, 1500, 2000]


def kn_mass_attenuation(e_kev):
    k = e_kev / MEC2
    a = ((1 + k) / k**2 * (2 * (1 + k) / (1 + 2 * k) - np.log(1 + 2 * k) / k)
         + np.log(1 + 2 * k) / (2 * k) - (1 + 3 * k) / (1 + 2 * k) ** 2)
    return 2 * np.pi * R_E**2 * a * Z_OVER_A * N_A


def main():
    out = Path(__file__).resolve().parents[1] / "src" / "gammaspec" / "data" / "silicon_compton.txt"
    lines = [
        "# material: silicon",
        "# Compton (incoherent) linear attenuation, density 2.329 g/cm3",
        "# <= 800 keV: Elam tables via xraydb; > 800 keV: Klein-Nishina x electron density",
        "# energy_kev mu_per_cm",
    ]
    for e in ENERGIES:
        if e <= 800:
            mass = float(xraydb.mu_elam("Si", e * 1000.0, kind="incoh"))
        else:
            mass = float(kn_mass_attenuation(e))
        lines.append(f"{e:g} {mass * DENSITY:.5g}")
    out.write_text("\n".join(lines) + "\n")
    print(out.read_text())


if __name__ == "__main__":
    main()
