"""Decay-time records to deposited-energy histograms, lookup-table matching
and incident-energy assignment."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .constants import DEFAULT_CONSTANTS, PhysicsConstants
from .frontend import C_DIODE_REF, TAU_DEFAULT, V_TH_DETECT
from .readout import ClockConfig, ConflictFlag

DEFAULT_BIN_WIDTH = 0.1  # keV


def alpha_from_model(c_diode: float = C_DIODE_REF, constants: PhysicsConstants = DEFAULT_CONSTANTS) -> float:
    """Deposited keV per volt of node signal: C * E_g / (q * qf)."""
    return c_diode * constants.bandgap_energy / (constants.electron_charge * constants.quenching_factor) / 1e3


def edep_estimate(dt_counts, clock: ClockConfig, tau: float, alpha: float, v_th: float):
    """Deposited energy (keV) implied by a DT count: alpha * v_th * exp(DT / tau)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    e = alpha * v_th * np.exp(np.asarray(dt_counts, dtype=float) * clock.period / tau)
    return e if e.ndim else float(e)


@dataclass(frozen=True)
class EnergyEstimator:
    clock: ClockConfig = ClockConfig()
    tau: float = TAU_DEFAULT
    alpha: float = field(default_factory=alpha_from_model)
    v_th: float = V_TH_DETECT

    def __call__(self, dt_counts):
        return edep_estimate(dt_counts, self.clock, self.tau, self.alpha, self.v_th)


@dataclass
class DepositionHistogram:
    counts: np.ndarray
    bin_width: float = DEFAULT_BIN_WIDTH
    origin: float = 0.0

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")
        if self.counts.ndim != 1 or np.any(self.counts < 0):
            raise ValueError("counts must be a non-negative 1-D array")

    @property
    def n_bins(self) -> int:
        return self.counts.size

    @property
    def total(self):
        return self.counts.sum()

    @property
    def edges(self) -> np.ndarray:
        return self.origin + self.bin_width * np.arange(self.n_bins + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.origin + self.bin_width * (np.arange(self.n_bins) + 0.5)

    def padded(self, n_bins: int) -> np.ndarray:
        out = np.zeros(max(n_bins, self.n_bins), dtype=float)
        out[: self.n_bins] = self.counts
        return out

    def to_text(self) -> str:
        lines = ["# bin_center_kev count"]
        lines += [f"{c:.6g} {_fmt(v)}" for c, v in zip(self.centers, self.counts)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DepositionHistogram":
        centers, counts = [], []
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            a, b = line.split()
            centers.append(float(a))
            counts.append(float(b))
        if not centers:
            return cls(np.zeros(0))
        c = np.array(centers)
        width = float(c[1] - c[0]) if c.size > 1 else 2 * c[0]
        if c.size > 1 and not np.allclose(np.diff(c), width, rtol=1e-6, atol=1e-9):
            raise ValueError("bin centres are not evenly spaced")
        counts_arr = np.array(counts)
        if np.all(counts_arr == np.round(counts_arr)):
            counts_arr = counts_arr.astype(np.int64)
        return cls(counts_arr, round(width, 12), round(c[0] - width / 2, 12))


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) or float(v).is_integer():
        return str(int(v))
    return format(float(v), ".10g")


def histogram_from_energies(edep_kev, bin_width: float = DEFAULT_BIN_WIDTH, origin: float = 0.0,
                            n_bins: int | None = None) -> DepositionHistogram:
    e = np.asarray(edep_kev, dtype=float)
    idx = np.floor((e - origin) / bin_width).astype(np.int64)
    if np.any(idx < 0):
        raise ValueError("energies below the histogram origin")
    size = n_bins if n_bins is not None else (int(idx.max()) + 1 if idx.size else 0)
    idx = idx[idx < size]
    return DepositionHistogram(np.bincount(idx, minlength=size).astype(np.int64), bin_width, origin)


def build_histogram(records: Sequence, clock: ClockConfig, tau: float, alpha: float, v_th: float,
                    bin_width: float = DEFAULT_BIN_WIDTH, n_bins: int | None = None) -> DepositionHistogram:
    """Histogram of estimated deposits; row-coincident records are left out."""
    counts = [r.dt_counts for r in records if r.flag != ConflictFlag.ROW_COINCIDENT]
    e = edep_estimate(np.asarray(counts, dtype=float), clock, tau, alpha, v_th)
    return histogram_from_energies(np.atleast_1d(e), bin_width, 0.0, n_bins)


@dataclass
class LookupTable:
    """Per deposited-energy bin: incident-energy fractions and expected counts."""
    scenario_id: str
    bin_width: float
    incident_energies: np.ndarray  # keV, increasing
    bins: np.ndarray  # indices of nonempty bins, increasing
    fractions: np.ndarray  # (len(bins), len(incident_energies))
    expected: np.ndarray  # per-bin expected counts
    depth_mm: float | None = None

    def __post_init__(self):
        self.incident_energies = np.asarray(self.incident_energies, dtype=float)
        self.bins = np.asarray(self.bins, dtype=np.int64)
        self.fractions = np.asarray(self.fractions, dtype=float).reshape(self.bins.size,
                                                                         self.incident_energies.size)
        self.expected = np.asarray(self.expected, dtype=float)
        if self.bin_width <= 0:
            raise ValueError("bin_width must be positive")
        if self.incident_energies.size == 0 or np.any(np.diff(self.incident_energies) <= 0):
            raise ValueError("incident energies must be nonempty and increasing")
        if np.any(self.bins < 0) or np.any(np.diff(self.bins) <= 0):
            raise ValueError("bin indices must be non-negative and strictly increasing")
        if self.expected.shape != self.bins.shape or np.any(self.expected < 0):
            raise ValueError("need one non-negative expected count per bin")
        if np.any(self.fractions < 0):
            raise ValueError("fractions must be non-negative")
        if self.bins.size and np.any(np.abs(self.fractions.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("fractions in each bin must sum to 1")

    @property
    def n_bins(self) -> int:
        return int(self.bins[-1]) + 1 if self.bins.size else 0

    def dense_expected(self, n_bins: int | None = None) -> np.ndarray:
        out = np.zeros(max(n_bins or 0, self.n_bins))
        out[self.bins] = self.expected
        return out

    def to_text(self) -> str:
        head = [f"# scenario_id: {self.scenario_id}", f"# bin_width_kev: {_g(self.bin_width)}"]
        if self.depth_mm is not None:
            head.append(f"# depth_mm: {_g(self.depth_mm)}")
        head.append("# incident_energies_kev: " + " ".join(_g(e) for e in self.incident_energies))
        rows = [" ".join([str(int(b)), _g(x)] + [_g(f) for f in fr])
                for b, x, fr in zip(self.bins, self.expected, self.fractions)]
        return "\n".join(head + rows) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())


def _g(x: float) -> str:
    return format(float(x), ".10g")


def parse_lookup_table(text: str) -> LookupTable:
    header: dict[str, str] = {}
    rows = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, val = line[1:].partition(":")
            if not sep:
                raise ValueError(f"line {n}: malformed header")
            key = key.strip()
            if key not in ("scenario_id", "bin_width_kev", "depth_mm", "incident_energies_kev"):
                raise ValueError(f"line {n}: unknown header {key!r}")
            header[key] = val.strip()
            continue
        rows.append((n, line.split()))
    for key in ("scenario_id", "bin_width_kev", "incident_energies_kev"):
        if key not in header:
            raise ValueError(f"lookup table lacks the {key!r} header")
    energies = [float(x) for x in header["incident_energies_kev"].split()]
    bins, expected, fractions = [], [], []
    for n, parts in rows:
        if len(parts) != 2 + len(energies):
            raise ValueError(f"line {n}: expected {2 + len(energies)} fields")
        try:
            bins.append(int(parts[0]))
            expected.append(float(parts[1]))
            fractions.append([float(x) for x in parts[2:]])
        except ValueError as exc:
            raise ValueError(f"line {n}: {exc}") from None
    depth = float(header["depth_mm"]) if "depth_mm" in header else None
    return LookupTable(header["scenario_id"], float(header["bin_width_kev"]), energies,
                       np.array(bins, dtype=np.int64), np.array(fractions).reshape(len(bins), len(energies)),
                       np.array(expected), depth)


def import_external_table(path: str | Path) -> LookupTable:
    """Read a lookup table produced elsewhere, validating it on the way in."""
    return parse_lookup_table(Path(path).read_text())


def export_table(table: LookupTable, path: str | Path) -> None:
    table.save(path)


@dataclass(frozen=True)
class MatchResult:
    best: str
    scale: float
    ssd: float
    ssds: dict  # scenario_id -> ssd
    scales: dict  # scenario_id -> scale

    @property
    def margin(self) -> float:
        """Second-smallest SSD over the smallest (inf for a perfect unique match)."""
        others = sorted(v for k, v in self.ssds.items() if k != self.best)
        if not others:
            return math.inf
        return others[0] / self.ssd if self.ssd > 0 else math.inf


def match_lookup(measured: DepositionHistogram, candidates: Sequence[LookupTable]) -> MatchResult:
    """Choose the table whose scaled expected histogram is closest in squared error."""
    if not candidates:
        raise ValueError("no candidate tables")
    if measured.total <= 0:
        raise ValueError("measured histogram is empty")
    if measured.origin != 0.0:
        raise ValueError("measured histogram must start at 0 keV")
    for c in candidates:
        if not math.isclose(c.bin_width, measured.bin_width, rel_tol=1e-9):
            raise ValueError(f"table {c.scenario_id!r} has bin width {c.bin_width}, "
                             f"histogram has {measured.bin_width}")
    n = max([measured.n_bins] + [c.n_bins for c in candidates])
    m = measured.padded(n)
    fits = []
    for pos, c in enumerate(candidates):
        v = c.dense_expected(n)
        cc = float(v @ v)
        scale = max(0.0, float(m @ v) / cc) if cc > 0 else 0.0
        r = m - scale * v
        ssd = float(r @ r)
        depth = c.depth_mm if c.depth_mm is not None else math.inf
        fits.append((ssd, depth, pos, c.scenario_id, scale))
    best = min(fits)
    return MatchResult(best[3], best[4], best[0], {f[3]: f[0] for f in fits}, {f[3]: f[4] for f in fits})


@dataclass
class IncidentSpectrum:
    energies: np.ndarray
    assigned_counts: np.ndarray
    unmapped: float = 0.0

    @property
    def total(self) -> float:
        return math.fsum(self.assigned_counts) + self.unmapped

    @property
    def support(self) -> np.ndarray:
        return self.energies[self.assigned_counts > 0]


def assign_incident(measured: DepositionHistogram, table: LookupTable) -> IncidentSpectrum:
    """Split each measured bin across incident energies by the table's fractions.

    Counts in bins the table never populated go to ``unmapped``.
    """
    if not math.isclose(table.bin_width, measured.bin_width, rel_tol=1e-9) or measured.origin != 0.0:
        raise ValueError("histogram and table grids differ")
    n = max(measured.n_bins, table.n_bins)
    m = measured.padded(n)
    frac = np.zeros((n, table.incident_energies.size))
    frac[table.bins] = table.fractions
    mapped = frac.sum(axis=1) > 0
    assigned = m[mapped] @ frac[mapped]
    unmapped = math.fsum(m[~mapped])
    return IncidentSpectrum(table.incident_energies.copy(), assigned, unmapped)


def table_from_samples(scenario_id: str, edep_kev, incident_kev, bin_width: float = DEFAULT_BIN_WIDTH,
                       energies=None, depth_mm: float | None = None, weight: float = 1.0) -> LookupTable:
    """Tabulate labelled deposits; ``weight`` scales counts into expected counts."""
    e = np.asarray(edep_kev, dtype=float)
    lab = np.asarray(incident_kev, dtype=float)
    if e.size == 0:
        raise ValueError("no interactions to tabulate")
    levels = np.unique(lab) if energies is None else np.asarray(energies, dtype=float)
    col = np.searchsorted(levels, lab)
    if np.any(col >= levels.size) or np.any(levels[np.minimum(col, levels.size - 1)] != lab):
        raise ValueError("a sample carries an energy missing from the label set")
    b = np.floor(e / bin_width).astype(np.int64)
    n_bins = int(b.max()) + 1
    grid = np.zeros((n_bins, levels.size))
    np.add.at(grid, (b, col), 1.0)
    tot = grid.sum(axis=1)
    nz = np.flatnonzero(tot)
    return LookupTable(scenario_id, bin_width, levels, nz, grid[nz] / tot[nz, None], tot[nz] * weight, depth_mm)


def generate_lookup(scene, n_events: int, rng: np.random.Generator, bin_width: float = DEFAULT_BIN_WIDTH,
                    response=None, scenario_id: str | None = None) -> LookupTable:
    """Simulate ``scene`` for about ``n_events`` interactions and tabulate them.

    Without ``response`` the true deposits are binned. With a DetectorResponse
    each interaction is passed through the analog chain, quantised and
    re-estimated as the measurement would be; undetected events drop out.
    """
    if n_events < 1:
        raise ValueError("n_events must be positive")
    rate = scene.expected_interactions(1.0)
    if rate <= 0:
        raise ValueError("scene produces no interactions")
    inter = scene.generate(n_events / rate, rng)
    if len(inter) == 0:
        raise ValueError("scene produced no interactions")
    labels = inter.incident_energy
    if response is None:
        edep = inter.deposited_energy
    else:
        edep, keep = response.estimate_independent(inter, rng)
        edep, labels = edep[keep], labels[keep]
        if edep.size == 0:
            raise ValueError("no interaction was detected")
    iso = scene.source.isotope
    sid = scenario_id or f"{iso.name}@{_g(abs(scene.source.position[2]))}mm"
    return table_from_samples(sid, edep, labels, bin_width, np.unique(iso.energies),
                              depth_mm=abs(float(scene.source.position[2])))
