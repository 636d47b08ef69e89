"""Pixel analog chain: charge, diode voltage, noise, decay time, detection."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import DEFAULT_CONSTANTS, PhysicsConstants
from .geometry import PixelKind

V_TH_DETECT = 5e-3  # V
V_CLIP = 1.2  # V, supply
C_DIODE_REF = 1.5e-15  # F at the reference area
AREA_REF = 4.0  # um^2
TAU_DEFAULT = 200e-6  # s at the reference capacitance
GAIN_STEP = 1.35  # VGA gain ratio per code step; code 4 is unity
MISMATCH_SIGMA = 0.2  # lognormal sigma of the per-pixel threshold multiplier
LOW_FLUX_DIODES = 6


def c_diode_for_area(area: float) -> float:
    """Node capacitance, scaled linearly with diode area from the 1.5 fF anchor."""
    return C_DIODE_REF * area / AREA_REF


@dataclass(frozen=True)
class NoiseParams:
    i_s: float = 1e-15  # A, diode reverse saturation current
    r_ds: float = TAU_DEFAULT / C_DIODE_REF  # ohm, bias PMOS in triode
    gamma_noise: float = 2.0 / 3.0
    a_ol_buffer: float = 100.0
    c_out_buffer: float = 15e-15  # F
    constants: PhysicsConstants = DEFAULT_CONSTANTS

    def __post_init__(self):
        for name in ("i_s", "r_ds", "gamma_noise", "a_ol_buffer", "c_out_buffer"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class TransistorParams:
    """Reset-PMOS parameters; the defaults give tau = 200 us at 1.5 fF for V_res = 0.7 V."""
    mu_p_cox: float = 60e-6  # A/V^2
    w_over_l: float = 2.5e-6
    v_ddl: float = 1.2  # V
    v_th_p: float = 0.45  # V


@dataclass(frozen=True)
class PixelConfig:
    kind: PixelKind = PixelKind.ENERGY_RESOLVING
    diode_area: float = AREA_REF  # um^2
    c_diode: float = C_DIODE_REF  # F
    tau: float = TAU_DEFAULT  # s
    gain_code: int = 4
    mismatch_factor: float = 1.0
    n_diodes: int = 1

    def __post_init__(self):
        if not self.c_diode > 0 or not self.tau > 0:
            raise ValueError("c_diode and tau must be positive")
        if not 0 <= self.gain_code <= 7:
            raise ValueError("gain_code is 3-bit")
        if (self.n_diodes == LOW_FLUX_DIODES) != (self.kind == PixelKind.LOW_FLUX):
            raise ValueError("low-flux pixels, and only they, have six diodes")

    @classmethod
    def make(cls, kind=PixelKind.ENERGY_RESOLVING, diode_area=AREA_REF, gain_code=4,
             mismatch_factor=1.0, r_ds=TAU_DEFAULT / C_DIODE_REF) -> "PixelConfig":
        """Build a pixel whose capacitance and time constant follow its diode area."""
        kind = PixelKind(kind)
        c = c_diode_for_area(diode_area)
        n = LOW_FLUX_DIODES if kind == PixelKind.LOW_FLUX else 1
        return cls(kind, diode_area, c, r_ds * c, gain_code, mismatch_factor, n)

    @property
    def enabled(self) -> bool:
        return self.gain_code >= 1 or self.kind == PixelKind.ENERGY_CALIBRATING


@dataclass(frozen=True)
class AnalogPulse:
    pixel_row: int
    pixel_col: int
    start_time: float
    v_d: float
    dt_true: float
    detected: bool


def n_ehps(e_dep, theta_i=0.0, constants: PhysicsConstants = DEFAULT_CONSTANTS):
    """Electron-hole pairs from a deposit of ``e_dep`` keV at incidence ``theta_i``."""
    e = np.asarray(e_dep, dtype=float)
    t = np.asarray(theta_i, dtype=float)
    if np.any(e < 0):
        raise ValueError("deposited energy must be non-negative")
    if np.any((t < 0) | (t >= np.pi / 2)):
        raise ValueError("incidence angle must lie in [0, pi/2)")
    n = np.rint(e * 1e3 * constants.quenching_factor / (constants.bandgap_energy * np.cos(t)))
    n = n.astype(np.int64)
    return n if n.ndim else int(n)


def diode_voltage(n, c_diode, clip=V_CLIP, constants: PhysicsConstants = DEFAULT_CONSTANTS):
    """Voltage drop q*n/C at the sensing node, limited by the supply."""
    v = np.minimum(constants.electron_charge * np.asarray(n, dtype=float) / c_diode, clip)
    return v if np.ndim(v) else float(v)


def voltage_noise_sigma(params: NoiseParams, c_diode) -> float:
    """RMS node voltage from diode shot noise plus kT/C of the bias device."""
    k = params.constants
    var = k.electron_charge * params.i_s * params.r_ds / (2 * np.asarray(c_diode)) + k.kt / np.asarray(c_diode)
    s = np.sqrt(var)
    return s if np.ndim(s) else float(s)


def snr_vd(v_d, sigma):
    if np.any(np.asarray(sigma) <= 0):
        raise ValueError("sigma must be positive")
    return np.asarray(v_d) / sigma if np.ndim(v_d) else v_d / sigma


def decay_time(v_d: float, tau: float, v_th: float):
    """Time for the pulse to decay back to threshold, or None if it never crossed."""
    if tau <= 0 or v_th <= 0:
        raise ValueError("tau and v_th must be positive")
    if v_d < v_th:
        return None
    return tau * math.log(v_d / v_th)


def dt_noise_sigma(tau, q_gen, c_diode, constants: PhysicsConstants = DEFAULT_CONSTANTS):
    """Delta-method RMS of the decay time, kT/C term only."""
    if np.any(np.asarray(q_gen) <= 0):
        raise ValueError("q_gen must be positive")
    return tau * np.sqrt(constants.kt * c_diode) / q_gen


def snr_dt(dt, sigma_dt):
    if np.any(np.asarray(sigma_dt) <= 0):
        raise ValueError("sigma_dt must be positive")
    return dt / sigma_dt


def resolution_bound(dt, sigma_dt, tau, alpha, v_th):
    """The +-2 sigma deposited-energy width (keV) implied by decay-time jitter."""
    x = 2.0 * np.asarray(sigma_dt) / tau
    return alpha * v_th * np.exp(np.asarray(dt) / tau) * (np.exp(x) - np.exp(-x))


def tau_from_vres(v_res: float, tp: TransistorParams, c_diode: float) -> float:
    overdrive = tp.v_ddl - v_res - abs(tp.v_th_p)
    if overdrive <= 0:
        raise ValueError("bias leaves the PMOS without triode headroom")
    return c_diode / (tp.mu_p_cox * tp.w_over_l * overdrive)


def dt_from_vres(v_res: float, tp: TransistorParams, c_diode: float, v_d: float, v_th: float) -> float:
    """Decay time expressed through the gate bias of the reset PMOS."""
    return tau_from_vres(v_res, tp, c_diode) * math.log(v_d / v_th)


def lowflux_summation_sigma(params: NoiseParams) -> float:
    """Integrated thermal noise added at the six-diode summation node."""
    k = params.constants
    return math.sqrt(24.0 * params.gamma_noise * k.kt / (params.c_out_buffer * params.a_ol_buffer))


def pixel_noise_sigma(pixel: PixelConfig, noise: NoiseParams) -> float:
    s = voltage_noise_sigma(noise, pixel.c_diode)
    if pixel.kind == PixelKind.LOW_FLUX:
        s = math.hypot(s, lowflux_summation_sigma(noise))
    return s


def vga_gain(code):
    return GAIN_STEP ** (np.asarray(code, dtype=float) - 4.0)


def effective_gain_code(kind, code):
    """Gain code actually applied; calibrating pixels cannot be disabled."""
    kind = np.asarray(kind)
    code = np.asarray(code)
    return np.where((kind == PixelKind.ENERGY_CALIBRATING) & (code == 0), 4, code)


def effective_threshold(pixel: PixelConfig, v_th_detect: float = V_TH_DETECT) -> float:
    """Diode-node threshold after VGA gain and per-pixel mismatch."""
    code = effective_gain_code(pixel.kind, pixel.gain_code)
    return float(v_th_detect * pixel.mismatch_factor / vga_gain(code))


def respond(event, pixel: PixelConfig, noise: NoiseParams, rng: np.random.Generator | None,
            v_th_detect: float = V_TH_DETECT, v_clip: float = V_CLIP) -> AnalogPulse | None:
    """Analog response of one pixel to one interaction.

    Returns None for a disabled pixel. ``rng=None`` gives the noiseless pulse.
    """
    if not pixel.enabled:
        return None
    k = noise.constants
    # deposits already follow the slant chord, so the 1/cos enhancement is not reapplied
    n = n_ehps(event.deposited_energy, 0.0, k)
    v = diode_voltage(n, pixel.c_diode, v_clip, k)
    if rng is not None:
        v = min(v + rng.normal(0.0, pixel_noise_sigma(pixel, noise)), v_clip)
    v_th = effective_threshold(pixel, v_th_detect)
    detected = v >= v_th
    dt = pixel.tau * math.log(v / v_th) if detected else 0.0
    return AnalogPulse(event.pixel_row, event.pixel_col, event.time, v, dt, bool(detected))
