"""Dark-noise sensitivity calibration and counting-clock selection."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .frontend import V_TH_DETECT, NoiseParams, vga_gain
from .geometry import PixelKind
from .pixels import PixelArray, respond_batch
from .readout import COUNTER_MAX, ClockConfig, ReadoutConfig, quantize_dt, run_readout

CLOCK_PERIODS_US = tuple(2**k for k in range(8))
CALIBRATED_KINDS = (PixelKind.ENERGY_RESOLVING, PixelKind.LOW_FLUX)


def dark_trigger_rate(v_th_eff, sigma_v, tau):
    """Rate (Hz) at which Gaussian node noise crosses ``v_th_eff`` upward."""
    sigma_v = np.asarray(sigma_v, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(sigma_v <= 0) or np.any(tau <= 0):
        raise ValueError("sigma_v and tau must be positive")
    v = np.asarray(v_th_eff, dtype=float)
    rate = np.exp(-(v**2) / (2 * sigma_v**2)) / (2 * np.pi * tau)
    return rate if rate.ndim else float(rate)


def pixel_dark_rates(array: PixelArray, noise: NoiseParams, v_th_detect: float = V_TH_DETECT) -> np.ndarray:
    """Dark trigger rate of every pixel at its current code; disabled pixels give 0."""
    rate = dark_trigger_rate(array.thresholds(v_th_detect), array.noise_sigma(noise), array.tau)
    return np.where(array.enabled, rate, 0.0)


def dark_counts(array: PixelArray, noise: NoiseParams, window: float, rng: np.random.Generator,
                v_th_detect: float = V_TH_DETECT) -> np.ndarray:
    """Poisson dark counts per pixel over ``window`` seconds."""
    return rng.poisson(pixel_dark_rates(array, noise, v_th_detect) * window)


@dataclass
class CalibrationResult:
    gain_codes: np.ndarray  # (rows, cols)
    dark_rate_post: np.ndarray  # Hz per pixel at the saved codes
    duration_modeled: float  # s of serial dark monitoring the hardware would spend
    window: float = 30.0

    def __post_init__(self):
        codes = np.asarray(self.gain_codes)
        if codes.size and (codes.min() < 0 or codes.max() > 7):
            raise ValueError("gain codes must be 3-bit")

    def apply(self, array: PixelArray) -> PixelArray:
        return array.with_gain_codes(self.gain_codes)

    def to_dict(self) -> dict:
        return {
            "window_s": self.window,
            "duration_modeled_s": self.duration_modeled,
            "gain_codes": np.asarray(self.gain_codes).tolist(),
            "dark_rate_post_hz": [[float(f"{x:.9g}") for x in row] for row in self.dark_rate_post],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationResult":
        unknown = set(d) - {"window_s", "duration_modeled_s", "gain_codes", "dark_rate_post_hz"}
        if unknown:
            raise ValueError(f"unknown calibration keys: {sorted(unknown)}")
        codes = np.array(d["gain_codes"], dtype=np.int64)
        rates = np.array(d.get("dark_rate_post_hz", np.zeros(codes.shape)), dtype=float)
        return cls(codes, rates, float(d.get("duration_modeled_s", 0.0)), float(d.get("window_s", 30.0)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CalibrationResult":
        return cls.from_dict(json.loads(Path(path).read_text()))


def calibrate_sensitivity(array: PixelArray, noise: NoiseParams, window: float = 30.0,
                          rng: np.random.Generator | None = None,
                          v_th_detect: float = V_TH_DETECT,
                          kinds=CALIBRATED_KINDS) -> CalibrationResult:
    """Raise each pixel's gain code from 0 until dark noise triggers it, then back off one.

    Runs in the dark: at each code the pixel's dark count over ``window`` is a
    Poisson draw around the modelled trigger rate. A pixel noisy already at
    code 1 ends disabled; one that stays quiet through code 7 keeps 7. Pixels
    of kinds not listed keep their codes.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    rng = rng if rng is not None else np.random.default_rng()
    target = np.isin(array.kind, [int(k) for k in kinds])
    sigma = array.noise_sigma(noise)
    tau = array.tau
    final = array.gain_code.copy()
    final[target] = 7
    searching = target.copy()
    steps = np.zeros(array.shape, dtype=np.int64)
    for code in range(1, 8):
        v_th = v_th_detect * array.mismatch / vga_gain(code)
        mean = dark_trigger_rate(v_th, sigma, tau) * window
        counts = rng.poisson(np.where(searching, mean, 0.0))
        steps += searching
        noisy = searching & (counts > 0)
        final[noisy] = code - 1
        searching &= ~noisy
    calibrated = array.with_gain_codes(final)
    rates = pixel_dark_rates(calibrated, noise, v_th_detect)
    return CalibrationResult(final, rates, float(steps.sum() * window), window)


def flat_field_counts(array: PixelArray, noise: NoiseParams, deposits_kev: np.ndarray,
                      hits_per_pixel: float, duration: float, rng: np.random.Generator,
                      include_dark: bool = True, v_th_detect: float = V_TH_DETECT) -> np.ndarray:
    """Per-pixel counts when every pixel sees the same deposit spectrum.

    Each enabled pixel receives Poisson(``hits_per_pixel``) hits whose deposits
    are resampled from ``deposits_kev``; a hit counts when its noisy node
    voltage reaches the pixel threshold. Dark triggers over ``duration`` are
    added when ``include_dark`` is set. Disabled pixels count nothing.
    """
    k = noise.constants
    deposits_kev = np.asarray(deposits_kev, dtype=float)
    n_hits = rng.poisson(hits_per_pixel, array.shape) * array.enabled
    flat_idx = np.repeat(np.arange(n_hits.size), n_hits.ravel())
    e = rng.choice(deposits_kev, size=flat_idx.size)
    n = np.rint(e * 1e3 * k.quenching_factor / k.bandgap_energy)
    cap = array.c_diode.ravel()[flat_idx]
    v = k.electron_charge * n / cap + array.noise_sigma(noise).ravel()[flat_idx] * rng.standard_normal(flat_idx.size)
    hit = v >= array.thresholds(v_th_detect).ravel()[flat_idx]
    counts = np.bincount(flat_idx[hit], minlength=n_hits.size).reshape(array.shape)
    if include_dark:
        counts = counts + dark_counts(array, noise, duration, rng, v_th_detect)
    return counts


def count_cv(counts: np.ndarray, mask: np.ndarray) -> float:
    """Coefficient of variation of the counts at the masked pixels."""
    c = np.asarray(counts, dtype=float)[mask]
    return float(c.std() / c.mean())


def select_clock_period(dt_cal: int, area_cal_row: float, area_er: float = 4.0) -> int:
    """Counting-clock period (us) that fits the calibration-row maximum DT into 10 bits.

    The calibration count is rescaled by the capacitance (area) ratio and
    mapped to the nearest available period; a tie picks the longer period.
    """
    if not 1 <= dt_cal <= COUNTER_MAX:
        raise ValueError("dt_cal must lie in [1, 1023]")
    if area_cal_row <= 0 or area_er <= 0:
        raise ValueError("areas must be positive")
    t_approx = dt_cal * (area_er / area_cal_row) * 128.0 / COUNTER_MAX
    best = CLOCK_PERIODS_US[0]
    for p in CLOCK_PERIODS_US:
        if abs(t_approx - p) <= abs(t_approx - best):
            best = p
    return best


@dataclass(frozen=True)
class ClockCalibration:
    dt_cal: int  # counts at the initial clock
    source_row_area: float  # um^2
    chosen_period: int  # us
    row_counts: dict  # EC row -> detected records

    def __post_init__(self):
        if self.chosen_period not in CLOCK_PERIODS_US:
            raise ValueError("chosen_period must be a power of two in [1, 128] us")
        if not 0 <= self.dt_cal <= COUNTER_MAX:
            raise ValueError("dt_cal exceeds 10 bits")

    @property
    def clock(self) -> ClockConfig:
        return ClockConfig.from_period(self.chosen_period)


def run_energy_calibration(scene, array: PixelArray, noise: NoiseParams, duration: float,
                           rng: np.random.Generator, clock_initial: ClockConfig = ClockConfig(7),
                           readout: ReadoutConfig | None = None,
                           v_th_detect: float = V_TH_DETECT) -> ClockCalibration:
    """Pick the counting clock from the energy-calibrating rows.

    The scene is acquired with the slowest clock. The largest-diode row that
    records at least one event supplies its maximum DT count.
    """
    geometry = array.geometry
    if geometry.ec_rows is None:
        raise ValueError("geometry has no energy-calibrating rows")
    inter = scene.generate(duration, rng)
    pulses = respond_batch(inter, array, noise, rng, v_th_detect)
    base = readout or ReadoutConfig()
    cfg = ReadoutConfig(clock_initial, base.cas, base.drain_interval, base.fifo_depth)
    result = run_readout(pulses, cfg, geometry)
    lo, hi = geometry.ec_rows
    per_row: dict[int, list[int]] = {r: [] for r in range(lo, hi + 1)}
    for rec in result.records:
        if lo <= rec.row <= hi:
            per_row[rec.row].append(rec.dt_counts)
    counted = [r for r in per_row if per_row[r]]
    if not counted:
        raise ValueError("no events on the energy-calibrating rows")
    row = max(counted, key=geometry.ec_area)
    dt_cal = max(per_row[row])
    area = geometry.ec_area(row)
    period = select_clock_period(max(dt_cal, 1), area)
    return ClockCalibration(int(dt_cal), area, period, {r: len(v) for r, v in per_row.items()})


def saturation_fraction(dt_true: np.ndarray, clock: ClockConfig) -> float:
    """Share of decay times that pin the counter at 1023."""
    dt_true = np.asarray(dt_true, dtype=float)
    if dt_true.size == 0:
        return 0.0
    return float(np.mean(quantize_dt(dt_true, clock) >= COUNTER_MAX))


def expected_dark_free_fraction(array: PixelArray, noise: NoiseParams, window: float = 30.0,
                                v_th_detect: float = V_TH_DETECT) -> float:
    """Mean share of enabled calibrated-kind pixels with no dark count in ``window``."""
    mask = array.enabled & np.isin(array.kind, [int(k) for k in CALIBRATED_KINDS])
    rate = pixel_dark_rates(array, noise, v_th_detect)[mask]
    return float(np.mean(np.exp(-rate * window))) if rate.size else math.nan
