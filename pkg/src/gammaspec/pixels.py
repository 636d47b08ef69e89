"""Per-pixel array state and the vectorised analog response."""
from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .frontend import (C_DIODE_REF, LOW_FLUX_DIODES, MISMATCH_SIGMA, TAU_DEFAULT, V_CLIP,
                       V_TH_DETECT, AnalogPulse, NoiseParams, PixelConfig, c_diode_for_area,
                       effective_gain_code, lowflux_summation_sigma, voltage_noise_sigma, vga_gain)
from .geometry import ArrayGeometry, PixelKind


@dataclass
class PixelArray:
    """Per-pixel configuration of the whole array, as (rows, cols) arrays.

    Index ``[r - 1, c - 1]`` holds pixel (r, c). Unpopulated rows carry kind
    UNPOPULATED and are never hit.
    """
    geometry: ArrayGeometry
    kind: np.ndarray
    diode_area: np.ndarray
    gain_code: np.ndarray
    mismatch: np.ndarray
    r_ds: float = TAU_DEFAULT / C_DIODE_REF

    @classmethod
    def build(cls, geometry: ArrayGeometry | None = None, rng: np.random.Generator | None = None,
              mismatch_sigma: float = MISMATCH_SIGMA, gain_code: int = 4,
              r_ds: float = TAU_DEFAULT / C_DIODE_REF) -> "PixelArray":
        """Fresh array; with ``rng`` each pixel gets a lognormal threshold mismatch."""
        geometry = geometry or ArrayGeometry()
        shape = (geometry.rows, geometry.cols)
        kinds = np.repeat(geometry.row_kinds()[:, None], geometry.cols, axis=1)
        area = np.full(shape, 4.0)
        if geometry.ec_rows is not None:
            lo, hi = geometry.ec_rows
            area[lo - 1:hi, :] = np.asarray(geometry.ec_areas)[:, None]
        if rng is None or mismatch_sigma == 0:
            mismatch = np.ones(shape)
        else:
            mismatch = rng.lognormal(0.0, mismatch_sigma, shape)
        codes = np.full(shape, gain_code, dtype=np.int64)
        return cls(geometry, kinds, area, codes, mismatch, r_ds)

    @property
    def shape(self) -> tuple[int, int]:
        return self.kind.shape

    @property
    def c_diode(self) -> np.ndarray:
        return c_diode_for_area(self.diode_area)

    @property
    def tau(self) -> np.ndarray:
        return self.r_ds * self.c_diode

    @property
    def populated(self) -> np.ndarray:
        return self.kind != PixelKind.UNPOPULATED

    @property
    def enabled(self) -> np.ndarray:
        return self.populated & ((self.gain_code >= 1) | (self.kind == PixelKind.ENERGY_CALIBRATING))

    def pixel(self, row: int, col: int) -> PixelConfig:
        r, c = row - 1, col - 1
        kind = PixelKind(int(self.kind[r, c]))
        if kind is PixelKind.UNPOPULATED:
            raise ValueError(f"pixel ({row}, {col}) does not exist")
        return PixelConfig(kind, float(self.diode_area[r, c]), float(self.c_diode[r, c]),
                           float(self.tau[r, c]), int(self.gain_code[r, c]),
                           float(self.mismatch[r, c]),
                           LOW_FLUX_DIODES if kind is PixelKind.LOW_FLUX else 1)

    def thresholds(self, v_th_detect: float = V_TH_DETECT) -> np.ndarray:
        code = effective_gain_code(self.kind, self.gain_code)
        return v_th_detect * self.mismatch / vga_gain(code)

    def noise_sigma(self, noise: NoiseParams) -> np.ndarray:
        s = voltage_noise_sigma(noise, self.c_diode)
        lf = self.kind == PixelKind.LOW_FLUX
        return np.where(lf, np.hypot(s, lowflux_summation_sigma(noise)), s)

    def with_gain_codes(self, codes) -> "PixelArray":
        codes = np.asarray(codes, dtype=np.int64)
        if codes.shape != self.shape or codes.min() < 0 or codes.max() > 7:
            raise ValueError("gain codes must be a (rows, cols) array of 3-bit values")
        return replace(self, gain_code=codes.copy())

    # configuration file

    def to_dict(self, mismatch_seed: int | None = None, mismatch_sigma: float = MISMATCH_SIGMA) -> dict:
        return {
            "geometry": geometry_to_dict(self.geometry),
            "row_kinds": [PixelKind(int(k)).name for k in self.geometry.row_kinds()],
            "mismatch": {"sigma": mismatch_sigma, "seed": mismatch_seed},
            "r_ds": self.r_ds,
            "gain_codes": self.gain_code.tolist(),
        }


_GEOMETRY_TUPLES = {"er_rows", "lf_rows", "ec_rows", "chip_size", "ec_areas"}


def geometry_to_dict(geometry: ArrayGeometry) -> dict:
    out = {}
    for f in fields(geometry):
        if f.init:
            v = getattr(geometry, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def geometry_from_dict(d: dict) -> ArrayGeometry:
    names = {f.name for f in fields(ArrayGeometry) if f.init}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown geometry keys: {sorted(unknown)}")
    kw = {k: (tuple(v) if k in _GEOMETRY_TUPLES and v is not None else v) for k, v in d.items()}
    return ArrayGeometry(**kw)


def pixel_array_from_dict(d: dict) -> PixelArray:
    """Build an array from its configuration block.

    Keys: ``geometry``; optional ``row_kinds`` (checked against the geometry),
    ``mismatch`` ({sigma, seed}; seed null means no mismatch), ``r_ds``,
    ``default_gain_code``, ``gain_codes`` (full map) and ``overrides``
    (list of {row, col, gain_code?, mismatch_factor?}).
    """
    allowed = {"geometry", "row_kinds", "mismatch", "r_ds", "default_gain_code", "gain_codes",
               "overrides"}
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown pixel-array keys: {sorted(unknown)}")
    geometry = geometry_from_dict(d.get("geometry", {}))
    if "row_kinds" in d:
        expected = [PixelKind(int(k)).name for k in geometry.row_kinds()]
        if list(d["row_kinds"]) != expected:
            raise ValueError("row_kinds disagree with the geometry row ranges")
    mm = d.get("mismatch", {}) or {}
    extra = set(mm) - {"sigma", "seed"}
    if extra:
        raise ValueError(f"unknown mismatch keys: {sorted(extra)}")
    seed = mm.get("seed")
    rng = None if seed is None else np.random.default_rng(seed)
    arr = PixelArray.build(geometry, rng, mm.get("sigma", MISMATCH_SIGMA),
                           d.get("default_gain_code", 4), d.get("r_ds", TAU_DEFAULT / C_DIODE_REF))
    if "gain_codes" in d:
        arr = arr.with_gain_codes(np.array(d["gain_codes"]))
    for ov in d.get("overrides", []):
        extra = set(ov) - {"row", "col", "gain_code", "mismatch_factor"}
        if extra:
            raise ValueError(f"unknown override keys: {sorted(extra)}")
        r, c = int(ov["row"]) - 1, int(ov["col"]) - 1
        if "gain_code" in ov:
            if not 0 <= int(ov["gain_code"]) <= 7:
                raise ValueError("gain_code is 3-bit")
            arr.gain_code[r, c] = int(ov["gain_code"])
        if "mismatch_factor" in ov:
            arr.mismatch[r, c] = float(ov["mismatch_factor"])
    return arr


def load_pixel_array(path: str | Path) -> PixelArray:
    return pixel_array_from_dict(json.loads(Path(path).read_text()))


@dataclass
class PulseBatch:
    """Column store of analog pulses (one per surviving interaction)."""
    pixel_row: np.ndarray
    pixel_col: np.ndarray
    start_time: np.ndarray
    v_d: np.ndarray
    dt_true: np.ndarray
    detected: np.ndarray
    source_index: np.ndarray  # index into the interactions that produced the pulse

    def __len__(self) -> int:
        return self.start_time.size

    def __getitem__(self, i: int) -> AnalogPulse:
        return AnalogPulse(int(self.pixel_row[i]), int(self.pixel_col[i]), float(self.start_time[i]),
                           float(self.v_d[i]), float(self.dt_true[i]), bool(self.detected[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def select(self, mask) -> "PulseBatch":
        return PulseBatch(**{f.name: getattr(self, f.name)[mask] for f in fields(self)})

    def to_bytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(getattr(self, f.name)).tobytes() for f in fields(self))


def respond_batch(interactions, array: PixelArray, noise: NoiseParams,
                  rng: np.random.Generator | None, v_th_detect: float = V_TH_DETECT,
                  v_clip: float = V_CLIP) -> PulseBatch:
    """Vectorised analog response for a time-sorted interaction list.

    Hits on disabled pixels produce no pulse. On low-flux pixels a hit that
    arrives while an earlier pulse of the same pixel is still above threshold
    is summed into that pulse (one noise draw for the sum).
    """
    k = noise.constants
    r = np.asarray(interactions.pixel_row) - 1
    c = np.asarray(interactions.pixel_col) - 1
    n_ev = r.size
    enabled = array.enabled[r, c] if n_ev else np.zeros(0, bool)

    cap = array.c_diode[r, c]
    tau = array.tau[r, c]
    v_th = array.thresholds(v_th_detect)[r, c]
    sigma = array.noise_sigma(noise)[r, c]
    kind = array.kind[r, c]

    n = np.rint(np.asarray(interactions.deposited_energy) * 1e3 * k.quenching_factor
                / k.bandgap_energy)
    v0 = np.minimum(k.electron_charge * n / cap, v_clip)
    z = rng.standard_normal(n_ev) if rng is not None else np.zeros(n_ev)

    keep = enabled.copy()
    lf = np.flatnonzero(enabled & (kind == PixelKind.LOW_FLUX))
    if lf.size > 1:
        pid = r[lf] * array.shape[1] + c[lf]
        order = lf[np.argsort(pid, kind="stable")]
        pid_sorted = np.sort(pid, kind="stable")
        t = np.asarray(interactions.time)
        max_window = tau[order] * np.log(v_clip / v_th[order])
        same = pid_sorted[1:] == pid_sorted[:-1]
        close = (t[order[1:]] - t[order[:-1]]) < max_window[:-1]
        # candidates are rare; resolve their chains exactly in a short loop
        for j in np.flatnonzero(same & close) + 1:
            head = j - 1
            while head > 0 and not keep[order[head]] and pid_sorted[head - 1] == pid_sorted[j]:
                head -= 1
            i = order[head]
            if not keep[i]:
                continue
            vi = min(v0[i] + sigma[i] * z[i], v_clip)
            if vi < v_th[i]:
                continue
            if t[order[j]] < t[i] + tau[i] * np.log(vi / v_th[i]):
                v0[i] = min(v0[i] + v0[order[j]], v_clip)
                keep[order[j]] = False

    v = np.minimum(v0 + sigma * z, v_clip)
    detected = keep & (v >= v_th)
    with np.errstate(divide="ignore", invalid="ignore"):
        dt = np.where(detected, tau * np.log(np.where(detected, v / v_th, 1.0)), 0.0)
    idx = np.flatnonzero(keep)
    return PulseBatch(
        pixel_row=np.asarray(interactions.pixel_row)[idx],
        pixel_col=np.asarray(interactions.pixel_col)[idx],
        start_time=np.asarray(interactions.time)[idx],
        v_d=v[idx],
        dt_true=dt[idx],
        detected=detected[idx],
        source_index=idx,
    )
