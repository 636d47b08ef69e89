"""Scenario runner: strict JSON configs, seeded runs and CSV/JSON reports."""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from . import __version__
from .calibration import (CalibrationResult, calibrate_sensitivity, dark_counts, run_energy_calibration)
from .chain import DetectorResponse, simulate_acquisition
from .constants import BQ_PER_MICROCURIE, PhysicsConstants
from .frontend import C_DIODE_REF, NoiseParams, dt_noise_sigma, resolution_bound
from .geometry import ArrayGeometry, PixelKind
from .physics import PointSource, Scene, load_attenuation_table, load_isotope
from .physics.sources import Isotope
from .pixels import PixelArray, geometry_from_dict, geometry_to_dict, respond_batch
from .readout import (CasConfig, ClockConfig, ConflictFlag, ReadoutConfig, encode_event_stream,
                      quantize_dt, read_event_stream)
from .reconstruction import (DepositionHistogram, LookupTable, alpha_from_model, assign_incident,
                             generate_lookup, import_external_table, match_lookup)

KINDS = ("linearity", "decay", "spectrum", "characterize", "calibrate", "gen-table")

BLOCK_DEFAULTS = {
    "source": {"isotope": "Cu64", "activity_uci": 300.0, "position_mm": [0.0, 0.0, 10.0]},
    "noise": {"i_s": 1e-15, "tau_s": 200e-6, "gamma_noise": 2.0 / 3.0, "a_ol_buffer": 100.0,
              "c_out_buffer": 15e-15, "temperature_k": 300.0},
    "clock": {"select_code": 0},
    "readout": {"drain_interval_s": 10e-6, "fifo_depth": 16, "cas_pulse_width_us": 1.0},
    "physics": {"stopping_power_kev_per_um": 1.5, "attenuation": "silicon"},
    "pixels": {"mismatch_sigma": 0.2, "mismatch_seed": None, "default_gain_code": 4,
               "calibration": "auto", "calibration_window_s": 30.0},
}

SCENARIO_DEFAULTS = {
    "linearity": {"activities_uci": [300.0, 150.0, 75.0, 38.0, 19.0, 9.0, 4.5], "duration_s": 300.0,
                  "efficiency_scale": 10.0},
    "decay": {"a0_uci": 300.0, "total_hours": 107.0, "acquisition_s": 300.0, "efficiency_scale": 500.0,
              "tail_activity_uci": 1.5},
    "spectrum": {"isotope": "Ba133", "n_events": 10000, "repeats": 1, "table_isotopes": ["Ba133", "Lu177"],
                 "table_depths_mm": [10.0], "table_events": 100000, "table_files": [],
                 "bin_width_kev": 0.1},
    "characterize": {"magnitudes_v": [0.025, 0.04, 0.06, 0.1, 0.16, 0.25, 0.4, 0.64], "repeats": 10000,
                     "array_size": 5, "clock_select_code": None},
    "calibrate": {"window_s": 30.0, "ec_duration_s": 3600.0},
    "gen-table": {"isotopes": ["Ba133", "Lu177"], "depths_mm": [10.0], "n_events": 100000,
                  "bin_width_kev": 0.1, "response": True},
}


def rng_for(seed: int, stream: str) -> np.random.Generator:
    """Independent generator for a named stream of a seeded run."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(stream.encode()),)))


def _strict_merge(defaults: dict, given: dict, where: str) -> dict:
    unknown = set(given) - set(defaults)
    if unknown:
        raise ValueError(f"unknown keys in {where}: {sorted(unknown)}")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    return out


def normalize_config(raw: dict, kind: str | None = None) -> dict:
    """Fill defaults and reject unknown keys anywhere in the config."""
    allowed = {"scenario", "geometry", *BLOCK_DEFAULTS}
    unknown = set(raw) - allowed
    if unknown:
        raise ValueError(f"unknown config blocks: {sorted(unknown)}")
    scen = dict(raw.get("scenario", {}))
    given_kind = scen.pop("kind", None)
    if kind is not None and given_kind is not None and given_kind != kind:
        raise ValueError(f"config is for {given_kind!r}, not {kind!r}")
    kind = kind or given_kind
    if kind not in KINDS:
        raise ValueError(f"scenario kind must be one of {KINDS}")
    out = {"scenario": {"kind": kind, **_strict_merge(SCENARIO_DEFAULTS[kind], scen, "scenario")}}
    geometry = geometry_from_dict(raw.get("geometry", {}))
    out["geometry"] = geometry_to_dict(geometry)
    for name, defaults in BLOCK_DEFAULTS.items():
        out[name] = _strict_merge(defaults, raw.get(name, {}), name)
    return out


def load_config(path: str | Path | None, kind: str | None = None) -> dict:
    raw = json.loads(Path(path).read_text()) if path is not None else {}
    return normalize_config(raw, kind)


def config_hash(config: dict) -> str:
    return hashlib.sha256(_canonical_json(config).encode()).hexdigest()


def _canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"), allow_nan=True)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# CSV tables


def write_csv(path: str | Path, rows: list[dict]) -> None:
    Path(path).write_text(csv_text(rows))


def csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    cols = list(rows[0])
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r[c]) for c in cols])
    return buf.getvalue()


def _cell(v) -> str:
    v = _plain(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_csv(path: str | Path) -> list[dict]:
    """Inverse of write_csv: ints, floats and booleans come back typed."""
    text = Path(path).read_text()
    if not text:
        return []
    reader = csv.DictReader(io.StringIO(text))
    return [{k: _parse_cell(v) for k, v in row.items()} for row in reader]


def _parse_cell(s: str):
    if s in ("true", "false"):
        return s == "true"
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


@dataclass
class RunReport:
    kind: str
    seed: int
    config: dict
    stats: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # name -> list of row dicts
    blobs: dict = field(default_factory=dict)  # file name -> bytes or str
    files: list = field(default_factory=list)

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "version": __version__,
            "config_hash": self.config_hash,
            "config": self.config,
            "stats": self.stats,
            "files": sorted(self.files),
        }

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        names = [f"{n}.csv" for n in self.tables] + list(self.blobs)
        self.files = sorted(set(names) | {"report.json"})
        paths = []
        for name, rows in self.tables.items():
            p = out / f"{name}.csv"
            write_csv(p, rows)
            paths.append(p)
        for name, blob in self.blobs.items():
            p = out / name
            (p.write_bytes if isinstance(blob, bytes) else p.write_text)(blob)
            paths.append(p)
        p = out / "report.json"
        p.write_text(json.dumps(_plain(self.summary()), sort_keys=True, indent=1) + "\n")
        paths.append(p)
        return paths


# building blocks from a config


@dataclass
class RunContext:
    config: dict
    seed: int
    _array: PixelArray | None = None
    _calibration: CalibrationResult | None = None

    def rng(self, stream: str) -> np.random.Generator:
        return rng_for(self.seed, stream)

    @property
    def geometry(self) -> ArrayGeometry:
        return geometry_from_dict(self.config["geometry"])

    @property
    def constants(self) -> PhysicsConstants:
        return PhysicsConstants(temperature=self.config["noise"]["temperature_k"])

    @property
    def noise(self) -> NoiseParams:
        n = self.config["noise"]
        return NoiseParams(n["i_s"], n["tau_s"] / C_DIODE_REF, n["gamma_noise"], n["a_ol_buffer"],
                           n["c_out_buffer"], self.constants)

    def readout(self, clock: ClockConfig | None = None) -> ReadoutConfig:
        r = self.config["readout"]
        cas = CasConfig(r["cas_pulse_width_us"], r["cas_pulse_width_us"] * self.geometry.cols, self.geometry.cols)
        clock = clock or ClockConfig(self.config["clock"]["select_code"])
        return ReadoutConfig(clock, cas, r["drain_interval_s"], r["fifo_depth"])

    def isotope(self, name: str | None = None) -> Isotope:
        return load_isotope(name or self.config["source"]["isotope"])

    def scene(self, isotope: Isotope | None = None, activity_uci: float | None = None,
              depth_mm: float | None = None, efficiency_scale: float = 1.0) -> Scene:
        s = self.config["source"]
        pos = list(s["position_mm"])
        if depth_mm is not None:
            pos[2] = depth_mm
        act = s["activity_uci"] if activity_uci is None else activity_uci
        src = PointSource(isotope or self.isotope(), act * BQ_PER_MICROCURIE, tuple(pos))
        ph = self.config["physics"]
        return Scene(src, self.geometry, load_attenuation_table(ph["attenuation"]),
                     ph["stopping_power_kev_per_um"], efficiency_scale)

    def base_array(self) -> PixelArray:
        p = self.config["pixels"]
        mseed = p["mismatch_seed"]
        rng = rng_for(self.seed, "mismatch") if mseed is None else np.random.default_rng(mseed)
        return PixelArray.build(self.geometry, rng, p["mismatch_sigma"], p["default_gain_code"],
                                self.config["noise"]["tau_s"] / C_DIODE_REF)

    def array(self) -> PixelArray:
        """Pixel array with the configured sensitivity calibration applied."""
        if self._array is None:
            arr = self.base_array()
            cal = self.config["pixels"]["calibration"]
            if cal == "auto":
                self._calibration = calibrate_sensitivity(arr, self.noise, self.config["pixels"]["calibration_window_s"],
                                                          self.rng("calibration"))
                arr = self._calibration.apply(arr)
            elif cal != "none":
                self._calibration = CalibrationResult.load(cal)
                arr = self._calibration.apply(arr)
            self._array = arr
        return self._array

    def response(self, clock: ClockConfig | None = None) -> DetectorResponse:
        return DetectorResponse(self.array(), self.noise, self.readout(clock))


def _base_report(ctx: RunContext) -> RunReport:
    return RunReport(ctx.config["scenario"]["kind"], ctx.seed, ctx.config)


def _linear_fit(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else math.nan
    return float(slope), float(intercept), r2


# scenarios


def run_linearity(ctx: RunContext, activities_uci, duration: float, rng: np.random.Generator,
                  efficiency_scale: float = 1.0) -> RunReport:
    """Counts per second against activity for a ladder of sources."""
    activities = [float(a) for a in activities_uci]
    if len(activities) < 3:
        raise ValueError("need at least three activities")
    response = ctx.response()
    rows = []
    for a in activities:
        scene = ctx.scene(activity_uci=a, efficiency_scale=efficiency_scale)
        acq = simulate_acquisition(scene, response, duration, rng)
        n = len(acq.records)
        rows.append({"activity_uci": a, "counts": n, "cps": n / duration,
                     "expected_interactions": scene.expected_interactions(duration)})
    total = sum(r["counts"] for r in rows)
    if total == 0:
        raise ValueError("no counts recorded at any activity")
    slope, intercept, r2 = _linear_fit(activities, [r["cps"] for r in rows])
    rep = _base_report(ctx)
    rep.stats = {"slope_cps_per_uci": slope, "intercept_cps": intercept, "r_squared": r2,
                 "total_counts": total, "duration_s": duration, "efficiency_scale": efficiency_scale}
    rep.tables["linearity"] = rows
    return rep


def fit_half_life(t_start, counts, width: float):
    """Poisson maximum-likelihood fit of C * 2**(-t / T) integrated over each window.

    Returns ``(half_life_s, rate_at_t0_per_s)``.
    """
    t = np.asarray(t_start, dtype=float)
    n = np.asarray(counts, dtype=float)
    if n.sum() <= 0:
        raise ValueError("no counts to fit")
    # log-linear start point from the nonzero bins
    nz = n > 0
    slope, icpt = np.polyfit(t[nz], np.log(n[nz]), 1, w=np.sqrt(n[nz]))
    lam0 = max(-slope, 1e-12)
    scale_t = max(t.max(), width)

    def expected(p):
        log_r0, lam_u = p
        lam = lam_u / scale_t
        return np.exp(log_r0) * np.exp(-lam * t) * (-np.expm1(-lam * width)) / lam

    def nll(p):
        mu = expected(p)
        return float(np.sum(mu - n * np.log(mu)))

    p0 = np.array([icpt - math.log(width), lam0 * scale_t])
    res = minimize(nll, p0, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 20000})
    lam = res.x[1] / scale_t
    return math.log(2) / lam, float(np.exp(res.x[0])), expected(res.x)


def run_decay_tracking(ctx: RunContext, a0_uci: float, total_hours: float, acquisition: float,
                       rng: np.random.Generator, efficiency_scale: float = 1.0,
                       tail_activity_uci: float = 1.5) -> RunReport:
    """Counts in back-to-back acquisitions while a source decays.

    Counts are detected pulses per window. At these rates the readout loses
    nothing (FIFO drops and row coincidences need overlapping pulses on one
    row), so the per-record readout model is skipped for speed.
    """
    if total_hours <= 0 or acquisition <= 0:
        raise ValueError("total_hours and acquisition must be positive")
    iso = ctx.isotope()
    scene = ctx.scene(iso, a0_uci, efficiency_scale=efficiency_scale)
    response = ctx.response()
    n_acq = int(math.floor(total_hours * 3600 / acquisition + 1e-9))
    starts = np.arange(n_acq) * acquisition
    counts = np.zeros(n_acq, dtype=np.int64)
    if a0_uci > 0:
        chunk = max(1, int(3600 // acquisition))
        for k0 in range(0, n_acq, chunk):
            k1 = min(n_acq, k0 + chunk)
            inter = scene.generate((k1 - k0) * acquisition, rng, t0=starts[k0])
            pulses = respond_batch(inter, response.array, response.noise, rng, response.v_th_detect)
            t = pulses.start_time[pulses.detected]
            idx = np.floor((t - starts[k0]) / acquisition).astype(np.int64)
            counts[k0:k1] += np.bincount(np.clip(idx, 0, k1 - k0 - 1), minlength=k1 - k0)
    lam = iso.decay_constant
    mid_act = a0_uci * np.exp(-lam * (starts + acquisition / 2))
    rep = _base_report(ctx)
    rows = [{"t_start_s": float(s), "activity_uci": float(a), "counts": int(c)}
            for s, a, c in zip(starts, mid_act, counts)]
    stats = {"n_acquisitions": n_acq, "total_counts": int(counts.sum()), "true_half_life_h": iso.half_life / 3600,
             "efficiency_scale": efficiency_scale, "acquisition_s": acquisition}
    if counts.sum() > 0:
        t_half, r0, expected = fit_half_life(starts, counts, acquisition)
        rel = (counts - expected) / expected
        tail = mid_act <= tail_activity_uci
        within = np.abs(rel[tail]) <= 0.10
        for r, e, q in zip(rows, expected, rel):
            r["fit_expected"] = float(e)
            r["rel_error"] = float(q)
        stats.update({
            "fitted_half_life_h": t_half / 3600,
            "half_life_rel_error": t_half / iso.half_life - 1.0,
            "fitted_rate_t0_per_s": r0,
            "tail_acquisitions": int(tail.sum()),
            "tail_within_10pct_fraction": float(within.mean()) if tail.any() else math.nan,
            "tail_mean_counts": float(counts[tail].mean()) if tail.any() else math.nan,
        })
    else:
        stats["fitted_half_life_h"] = math.nan
    rep.stats = stats
    rep.tables["decay"] = rows
    return rep


def build_table_family(ctx: RunContext, isotopes, depths_mm, n_events: int, bin_width: float,
                       rng: np.random.Generator, response: DetectorResponse | None) -> list[LookupTable]:
    tables = []
    for name in isotopes:
        iso = ctx.isotope(name)
        for d in depths_mm:
            scene = ctx.scene(iso, depth_mm=float(d))
            tables.append(generate_lookup(scene, int(n_events), rng, bin_width, response))
    return tables


def spectrum_trial(ctx: RunContext, isotope: Isotope, n_events: int, tables: list[LookupTable],
                   response: DetectorResponse, rng: np.random.Generator, bin_width: float = 0.1):
    """One acquisition of about ``n_events`` interactions, matched and assigned."""
    scene = ctx.scene(isotope)
    duration = n_events / scene.expected_interactions(1.0)
    acq = simulate_acquisition(scene, response, duration, rng)
    hist = response.histogram(acq.records, bin_width)
    match = match_lookup(hist, tables)
    table = next(t for t in tables if t.scenario_id == match.best)
    spectrum = assign_incident(hist, table)
    return acq, hist, match, spectrum


def run_spectrum(ctx: RunContext, isotope: str, n_events: int, tables: list[LookupTable],
                 rng: np.random.Generator, repeats: int = 1, bin_width: float = 0.1) -> RunReport:
    """Full chain for one isotope, matched against a table family."""
    if not tables:
        raise ValueError("table family is empty")
    iso = ctx.isotope(isotope)
    response = ctx.response()
    rep = _base_report(ctx)
    trials = []
    first = None
    for k in range(int(repeats)):
        acq, hist, match, spec = spectrum_trial(ctx, iso, n_events, tables, response, rng, bin_width)
        spectral_rows = set(response.spectral_rows.tolist())
        on_rows = [r for r in acq.records if r.row in spectral_rows]
        excluded = sum(r.flag == ConflictFlag.ROW_COINCIDENT for r in on_rows)
        trials.append({"trial": k, "records": len(acq.records), "spectral_records": len(on_rows),
                       "coincidence_excluded": excluded, "histogram_total": int(hist.total),
                       "best": match.best, "scale": match.scale, "ssd_best": match.ssd,
                       "margin": match.margin, "assigned_total": float(spec.assigned_counts.sum()),
                       "unmapped": spec.unmapped})
        if first is None:
            first = (acq, hist, match, spec)
    acq, hist, match, spec = first
    rep.tables["trials"] = trials
    rep.tables["histogram"] = [{"bin_center_kev": float(c), "count": int(v)} for c, v in zip(hist.centers, hist.counts)]
    rep.tables["incident"] = ([{"energy_kev": float(e), "assigned": float(a)}
                               for e, a in zip(spec.energies, spec.assigned_counts)]
                              + [{"energy_kev": "unmapped", "assigned": float(spec.unmapped)}])
    rep.tables["ssd"] = [{"scenario_id": k, "ssd": v, "scale": match.scales[k]} for k, v in match.ssds.items()]
    rep.blobs["records.bin"] = encode_event_stream(acq.records)
    margins = np.array([t["margin"] for t in trials])
    rep.stats = {"isotope": iso.name, "n_events": n_events, "repeats": int(repeats),
                 "best_first_trial": match.best,
                 "correct_fraction": float(np.mean([t["best"].startswith(iso.name + "@") for t in trials])),
                 "margin_ge3_fraction": float(np.mean(margins >= 3.0)),
                 "margin_median": float(np.median(margins)),
                 "incident_support_kev": [float(e) for e in spec.support],
                 "flag_counts": acq.flag_counts()}
    return rep


def run_characterization(ctx: RunContext, magnitudes_v, repeats: int = 10, rng: np.random.Generator | None = None,
                         array_size: int = 5, clock: ClockConfig | None = None) -> RunReport:
    """Charge injection into a small calibrated test array.

    ``repeats`` pulses per magnitude are spread evenly over the enabled test
    pixels. Statistics are taken per pixel (so threshold mismatch does not
    inflate the spread) and then averaged, with the pixel-to-pixel standard
    deviation reported alongside. Decay times are timed on the count line in
    continuous time unless ``clock`` is given, in which case they are read
    through the 10-bit counter.
    """
    rng = rng if rng is not None else ctx.rng("characterize")
    mags = [float(m) for m in magnitudes_v]
    if len(mags) < 2:
        raise ValueError("need at least two pulse magnitudes")
    n = int(array_size)
    geom = ArrayGeometry(rows=n, cols=n, er_rows=(1, n), lf_rows=None, ec_rows=None, ec_areas=(),
                         chip_size=(n * 0.018, n * 0.026))
    p = ctx.config["pixels"]
    arr = PixelArray.build(geom, rng, p["mismatch_sigma"], p["default_gain_code"],
                           ctx.config["noise"]["tau_s"] / C_DIODE_REF)
    noise = ctx.noise
    arr = calibrate_sensitivity(arr, noise, p["calibration_window_s"], rng).apply(arr)
    ok = arr.enabled.ravel()
    v_th = arr.thresholds().ravel()[ok]
    tau = arr.tau.ravel()[ok]
    cap = arr.c_diode.ravel()[ok]
    sigma_v = arr.noise_sigma(noise).ravel()[ok]
    n_pix = int(ok.sum())
    if n_pix == 0:
        raise ValueError("calibration disabled every test pixel")
    per_pixel = max(2, int(repeats) // n_pix)
    alpha = alpha_from_model(C_DIODE_REF, noise.constants)
    rows = []
    for v in mags:
        row = {"v_diode_v": v, "pulses": per_pixel * n_pix}
        if v <= 0:
            row.update({"detected_fraction": 0.0})
            rows.append(row)
            continue
        z = rng.standard_normal((n_pix, per_pixel))
        vv = np.minimum(v + sigma_v[:, None] * z, 1.2)
        det = vv >= v_th[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            dt = np.where(det, tau[:, None] * np.log(np.where(det, vv / v_th[:, None], 1.0)), 0.0)
        dt_meas = dt if clock is None else quantize_dt(dt, clock) * clock.period
        q = v * cap
        sig_th = dt_noise_sigma(tau, q, cap, noise.constants)
        dt_th = tau * np.log(v / v_th)
        mean_dt = np.array([dt_meas[i][det[i]].mean() if det[i].sum() > 1 else np.nan for i in range(n_pix)])
        std_dt = np.array([dt_meas[i][det[i]].std(ddof=1) if det[i].sum() > 1 else np.nan for i in range(n_pix)])
        snr_meas = mean_dt / std_dt
        snr_th = dt_th / sig_th
        res_meas = resolution_bound(mean_dt, std_dt, tau, alpha, v_th)
        res_th = resolution_bound(dt_th, sig_th, tau, alpha, v_th)
        row.update({
            "detected_fraction": float(det.mean()),
            "mean_dt_s": float(np.nanmean(mean_dt)),
            "sigma_dt_s": float(np.nanmean(std_dt)),
            "sigma_dt_theory_s": float(np.mean(sig_th)),
            "sigma_dt_pixel_std_s": float(np.nanstd(std_dt)),
            "snr_dt": float(np.nanmean(snr_meas)),
            "snr_dt_theory": float(np.mean(snr_th)),
            "snr_dt_pixel_std": float(np.nanstd(snr_meas)),
            "resolution_kev": float(np.nanmean(res_meas)),
            "resolution_theory_kev": float(np.mean(res_th)),
        })
        rows.append(row)
    rep = _base_report(ctx)
    rep.tables["characterization"] = rows
    live = [r for r in rows if "sigma_dt_s" in r]
    sig_err = [abs(r["sigma_dt_s"] / r["sigma_dt_theory_s"] - 1) for r in live]
    snr_err = [abs(r["snr_dt"] / r["snr_dt_theory"] - 1) for r in live]
    rep.stats = {"test_pixels": n_pix, "pulses_per_pixel": per_pixel,
                 "max_sigma_rel_error": max(sig_err) if sig_err else math.nan,
                 "max_snr_rel_error": max(snr_err) if snr_err else math.nan,
                 "sigma_decreasing": bool(all(np.diff([r["sigma_dt_s"] for r in live]) < 0)),
                 "snr_increasing": bool(all(np.diff([r["snr_dt"] for r in live]) > 0))}
    return rep


def run_calibrate(ctx: RunContext, rng_clock: np.random.Generator, rng_dark: np.random.Generator,
                  ec_duration: float, window: float) -> RunReport:
    """Clock calibration on the configured source, then dark sensitivity calibration."""
    base = ctx.base_array()
    noise = ctx.noise
    clock_cal = run_energy_calibration(ctx.scene(), base, noise, ec_duration, rng_clock,
                                       readout=ctx.readout())
    sens = calibrate_sensitivity(base, noise, window, rng_dark)
    cal_arr = sens.apply(base)
    mask = np.isin(base.kind, [int(PixelKind.ENERGY_RESOLVING), int(PixelKind.LOW_FLUX)])
    fresh = dark_counts(cal_arr, noise, window, rng_dark)
    rep = _base_report(ctx)
    rep.stats = {"chosen_period_us": clock_cal.chosen_period, "dt_cal": clock_cal.dt_cal,
                 "source_row_area_um2": clock_cal.source_row_area,
                 "ec_row_counts": {str(k): v for k, v in clock_cal.row_counts.items()},
                 "code_histogram": np.bincount(sens.gain_codes[mask], minlength=8).tolist(),
                 "dark_free_fraction": float(np.mean(fresh[mask] == 0)),
                 "duration_modeled_s": sens.duration_modeled}
    rep.blobs["calibration.json"] = json.dumps(_plain(sens.to_dict()), indent=1) + "\n"
    rep.blobs["clock.json"] = json.dumps({"chosen_period_us": clock_cal.chosen_period, "dt_cal": clock_cal.dt_cal,
                                          "source_row_area_um2": clock_cal.source_row_area}, indent=1) + "\n"
    rep.tables["ec_rows"] = [{"row": k, "diode_area_um2": ctx.geometry.ec_area(k), "counts": v}
                             for k, v in clock_cal.row_counts.items()]
    return rep


def run_gen_table(ctx: RunContext, rng: np.random.Generator) -> RunReport:
    s = ctx.config["scenario"]
    response = ctx.response() if s["response"] else None
    tables = build_table_family(ctx, s["isotopes"], s["depths_mm"], s["n_events"], s["bin_width_kev"], rng, response)
    rep = _base_report(ctx)
    for t in tables:
        rep.blobs[f"table_{t.scenario_id.replace('@', '_')}.txt"] = t.to_text()
    rep.stats = {"tables": [t.scenario_id for t in tables],
                 "expected_totals": {t.scenario_id: float(t.expected.sum()) for t in tables}}
    return rep


def run_decode(stream_path: str | Path, seed: int = 0, config: dict | None = None) -> RunReport:
    records = read_event_stream(stream_path)
    rep = RunReport("decode", seed, config or {})
    rep.tables["records"] = [{"flag": r.flag.name, "row": r.row, "col": r.col, "dt_counts": r.dt_counts}
                             for r in records]
    counts = {f.name: 0 for f in ConflictFlag}
    for r in records:
        counts[r.flag.name] += 1
    rep.stats = {"n_records": len(records), "flag_counts": counts}
    return rep


def run_scenario(config: dict, seed: int) -> RunReport:
    """Run a normalised config end to end."""
    ctx = RunContext(config, int(seed))
    s = config["scenario"]
    kind = s["kind"]
    if kind == "linearity":
        return run_linearity(ctx, s["activities_uci"], s["duration_s"], ctx.rng("linearity"), s["efficiency_scale"])
    if kind == "decay":
        return run_decay_tracking(ctx, s["a0_uci"], s["total_hours"], s["acquisition_s"], ctx.rng("decay"),
                                  s["efficiency_scale"], s["tail_activity_uci"])
    if kind == "spectrum":
        if s["table_files"]:
            tables = [import_external_table(p) for p in s["table_files"]]
        else:
            tables = build_table_family(ctx, s["table_isotopes"], s["table_depths_mm"], s["table_events"],
                                        s["bin_width_kev"], ctx.rng("tables"), ctx.response())
        return run_spectrum(ctx, s["isotope"], s["n_events"], tables, ctx.rng("spectrum"), s["repeats"],
                            s["bin_width_kev"])
    if kind == "characterize":
        return run_characterization(ctx, s["magnitudes_v"], s["repeats"], ctx.rng("characterize"),
                                    s["array_size"],
                                    None if s["clock_select_code"] is None else ClockConfig(s["clock_select_code"]))
    if kind == "calibrate":
        return run_calibrate(ctx, ctx.rng("clock"), ctx.rng("dark"), s["ec_duration_s"], s["window_s"])
    if kind == "gen-table":
        return run_gen_table(ctx, ctx.rng("gen-table"))
    raise ValueError(f"unknown scenario kind {kind!r}")
