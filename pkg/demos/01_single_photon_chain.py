# Follow gamma photons from a Ba-133 point source through the detector:
# Compton deposits in the thin depletion layer, the analog pulse at the
# sensing node and the decay time the readout counts.
import numpy as np

from gammaspec.frontend import NoiseParams, decay_time, diode_voltage, n_ehps
from gammaspec.geometry import ArrayGeometry
from gammaspec.physics import PointSource, Scene, compton_edge, load_isotope

rng = np.random.default_rng(0)
iso = load_isotope("Ba133")
print("lines (keV):", iso.energies, " yields:", iso.yields)
print("Compton edges (keV):", np.round(compton_edge(iso.energies), 2))

# 300 uCi at 10 mm; the efficiency scale just buys statistics for the demo
scene = Scene(PointSource.from_microcurie(iso, 300.0), ArrayGeometry(), efficiency_scale=50.0)
print("expected interactions per second:", scene.expected_interactions(1.0))
ev = scene.generate(60.0, rng)
print(len(ev), "interactions in 60 s")

# Most recoil electrons leave the 1.5 um layer, so deposits pile up near
# stopping power times the slant path (about 2.25 keV)
hist, edges = np.histogram(ev.deposited_energy, bins=np.arange(0, 3.01, 0.25))
for lo, n in zip(edges[:-1], hist):
    print(f"{lo:5.2f} keV  {'#' * int(60 * n / hist.max())}")

# The same deposits as node voltages and decay times at unity gain
noise = NoiseParams()
v = diode_voltage(n_ehps(ev.deposited_energy), 1.5e-15)
dt = np.array([decay_time(x, 200e-6, 5e-3) or 0.0 for x in v])
print("median node voltage (mV):", 1e3 * np.median(v))
print("median decay time (us):", 1e6 * np.median(dt[dt > 0]))
