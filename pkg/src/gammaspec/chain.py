"""End-to-end detector chain: interactions -> pulses -> records -> deposits."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .frontend import C_DIODE_REF, V_TH_DETECT, NoiseParams
from .geometry import PixelKind
from .physics.generator import Interactions
from .pixels import PixelArray, PulseBatch, respond_batch
from .readout import ConflictFlag, ReadoutConfig, ReadoutResult, quantize_dt, run_readout
from .reconstruction import DEFAULT_BIN_WIDTH, DepositionHistogram, EnergyEstimator, alpha_from_model, build_histogram

SPECTRAL_KINDS = (PixelKind.ENERGY_RESOLVING, PixelKind.LOW_FLUX)


@dataclass
class DetectorResponse:
    """A configured chip: pixel array, noise model and readout settings.

    Only energy-resolving and low-flux rows feed the deposit histogram; the
    energy-calibrating rows have different capacitances and are read for
    clock setup only.
    """
    array: PixelArray
    noise: NoiseParams = field(default_factory=NoiseParams)
    readout: ReadoutConfig = field(default_factory=ReadoutConfig)
    v_th_detect: float = V_TH_DETECT

    @property
    def spectral_rows(self) -> np.ndarray:
        kinds = self.array.geometry.row_kinds()
        return np.flatnonzero(np.isin(kinds, [int(k) for k in SPECTRAL_KINDS])) + 1

    def estimator(self) -> EnergyEstimator:
        """Estimator with the mean threshold of the enabled spectral pixels.

        Per-pixel mismatch is not known off-chip, so a single threshold stands
        in for all pixels.
        """
        rows = self.spectral_rows - 1
        th = self.array.thresholds(self.v_th_detect)[rows]
        ok = self.array.enabled[rows]
        v_th = float(th[ok].mean()) if ok.any() else self.v_th_detect
        tau = float(self.array.r_ds * C_DIODE_REF)
        return EnergyEstimator(self.readout.clock, tau, alpha_from_model(C_DIODE_REF, self.noise.constants), v_th)

    def respond(self, interactions: Interactions, rng: np.random.Generator | None) -> PulseBatch:
        return respond_batch(interactions, self.array, self.noise, rng, self.v_th_detect)

    def histogram(self, records, bin_width: float = DEFAULT_BIN_WIDTH, n_bins: int | None = None) -> DepositionHistogram:
        rows = set(self.spectral_rows.tolist())
        est = self.estimator()
        kept = [r for r in records if r.row in rows]
        return build_histogram(kept, est.clock, est.tau, est.alpha, est.v_th, bin_width, n_bins)

    def estimate_independent(self, interactions: Interactions, rng: np.random.Generator | None):
        """Per-interaction deposit estimate, treating every pulse in isolation.

        Returns ``(edep_estimate, kept)`` aligned with ``interactions``; ``kept``
        marks detected pulses on spectral rows.
        """
        pulses = self.respond(interactions, rng)
        n = len(interactions)
        est = np.zeros(n)
        kept = np.zeros(n, dtype=bool)
        counts = quantize_dt(pulses.dt_true, self.readout.clock)
        on_rows = np.isin(pulses.pixel_row, self.spectral_rows)
        ok = pulses.detected & on_rows
        idx = pulses.source_index[ok]
        est[idx] = self.estimator()(counts[ok])
        kept[idx] = True
        return est, kept


@dataclass
class Acquisition:
    interactions: Interactions
    pulses: PulseBatch
    readout: ReadoutResult

    @property
    def records(self):
        return self.readout.records

    def flag_counts(self) -> dict:
        out = {f.name: 0 for f in ConflictFlag}
        for r in self.readout.records:
            out[r.flag.name] += 1
        return out


def simulate_acquisition(scene, response: DetectorResponse, duration: float, rng: np.random.Generator,
                         t0: float = 0.0) -> Acquisition:
    inter = scene.generate(duration, rng, t0)
    pulses = response.respond(inter, rng)
    result = run_readout(pulses, response.readout, response.array.geometry)
    return Acquisition(inter, pulses, result)
