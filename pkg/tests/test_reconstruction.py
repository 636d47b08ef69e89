import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import nnls

from gammaspec.chain import DetectorResponse, simulate_acquisition
from gammaspec.frontend import C_DIODE_REF, diode_voltage, n_ehps
from gammaspec.geometry import ArrayGeometry
from gammaspec.physics import PointSource, Scene, load_isotope
from gammaspec.physics.sources import Isotope
from gammaspec.pixels import PixelArray
from gammaspec.readout import ClockConfig, ConflictFlag, EventRecord, quantize_dt
from gammaspec.reconstruction import (DepositionHistogram, EnergyEstimator, LookupTable, alpha_from_model,
                                      assign_incident, build_histogram, edep_estimate, export_table,
                                      generate_lookup, histogram_from_energies, import_external_table,
                                      match_lookup, parse_lookup_table, table_from_samples)


def table(sid, expected, depth=None, energies=(100.0,)):
    bins = np.flatnonzero(expected)
    k = len(energies)
    return LookupTable(sid, 0.1, np.array(energies), bins, np.full((bins.size, k), 1.0 / k),
                       np.asarray(expected, dtype=float)[bins], depth)


class TestEstimator:
    def test_alpha(self):
        assert alpha_from_model() == pytest.approx(31.4572, rel=1e-5)

    @pytest.mark.parametrize("e_dep", [0.3, 1.0, 2.25, 8.0])
    def test_inverts_noiseless_chain(self, e_dep):
        tau, v_th, clock = 200e-6, 5e-3, ClockConfig(0)
        v = diode_voltage(n_ehps(e_dep), C_DIODE_REF)
        counts = quantize_dt(tau * math.log(v / v_th), clock)
        est = edep_estimate(counts, clock, tau, alpha_from_model(), v_th)
        # floor quantisation biases low by at most one period
        assert est <= e_dep * 1.002
        assert est >= e_dep * math.exp(-clock.period / tau) * 0.998

    def test_zero_count_is_threshold_energy(self):
        est = EnergyEstimator()
        assert est(0) == pytest.approx(alpha_from_model() * 5e-3)

    def test_tau_positive(self):
        with pytest.raises(ValueError):
            edep_estimate(1, ClockConfig(), 0.0, 1.0, 1.0)


class TestHistogram:
    def test_binning(self):
        h = histogram_from_energies([0.05, 0.15, 0.16, 0.35])
        assert h.counts.tolist() == [1, 2, 0, 1]
        assert np.allclose(h.centers, [0.05, 0.15, 0.25, 0.35])

    def test_excludes_coincident_records(self):
        recs = [EventRecord(ConflictFlag.CONFLICT_FREE, 1, 1, 0), EventRecord(ConflictFlag.ROW_COINCIDENT, 1, 2, 0),
                EventRecord(ConflictFlag.MISSED_COLUMN, 2, 0, 0)]
        h = build_histogram(recs, ClockConfig(), 200e-6, alpha_from_model(), 5e-3)
        assert h.total == 2

    @settings(max_examples=30)
    @given(st.lists(st.integers(0, 1000), min_size=1, max_size=50))
    def test_text_roundtrip(self, counts):
        h = DepositionHistogram(np.array(counts))
        back = DepositionHistogram.from_text(h.to_text())
        assert np.array_equal(back.counts, h.counts)
        assert back.bin_width == pytest.approx(0.1) and back.origin == pytest.approx(0.0, abs=1e-9)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            DepositionHistogram(np.array([1, -1]))


class TestLookupTable:
    def test_text_roundtrip(self, tmp_path):
        t = table_from_samples("X@10mm", [0.05, 0.15, 0.15, 2.0], [81.0, 81.0, 356.0, 356.0], depth_mm=10.0)
        export_table(t, tmp_path / "t.txt")
        back = import_external_table(tmp_path / "t.txt")
        assert back.scenario_id == "X@10mm" and back.depth_mm == 10.0
        assert np.array_equal(back.bins, t.bins) and np.allclose(back.fractions, t.fractions)
        assert back.to_text() == t.to_text()

    def test_fractions_from_samples(self):
        t = table_from_samples("s", [0.15, 0.15, 0.15, 0.15], [81.0, 81.0, 81.0, 356.0])
        assert t.bins.tolist() == [1]
        assert t.fractions.tolist() == [[0.75, 0.25]]

    @pytest.mark.parametrize("text", [
        "# bin_width_kev: 0.1\n# incident_energies_kev: 1\n0 1 1\n",
        "# scenario_id: a\n# bin_width_kev: 0.1\n# incident_energies_kev: 1 2\n0 1 0.5\n",
        "# scenario_id: a\n# bin_width_kev: 0.1\n# incident_energies_kev: 1 2\n0 1 0.5 0.4\n",
        "# scenario_id: a\n# bin_width_kev: 0.1\n# incident_energies_kev: 1\n3 1 1\n1 1 1\n",
        "# scenario_id: a\n# bin_width_kev: 0.1\n# colour: red\n",
    ])
    def test_parse_rejects(self, text):
        with pytest.raises(ValueError):
            parse_lookup_table(text)

    def test_unlabelled_energy(self):
        with pytest.raises(ValueError):
            table_from_samples("s", [0.1], [99.0], energies=[81.0])


class TestMatching:
    def test_exact_scaled_match(self):
        a = np.array([0, 5, 10, 5, 1, 0], float)
        b = np.array([0, 1, 3, 8, 6, 2], float)
        h = DepositionHistogram((3 * a).astype(int))
        res = match_lookup(h, [table("A", a), table("B", b)])
        assert res.best == "A" and res.scale == pytest.approx(3.0) and res.ssd == pytest.approx(0.0, abs=1e-9)
        assert res.margin == math.inf

    @settings(max_examples=50)
    @given(st.lists(st.integers(0, 50), min_size=8, max_size=8), st.lists(st.floats(0, 20), min_size=8, max_size=8))
    def test_scale_matches_nnls(self, measured, expected):
        expected = np.array(expected)
        if not expected.any() or not any(measured):
            return
        res = match_lookup(DepositionHistogram(np.array(measured)), [table("T", expected)])
        x, rnorm = nnls(expected[:, None], np.array(measured, float))
        assert res.scale == pytest.approx(x[0], rel=1e-9, abs=1e-12)
        assert res.ssd == pytest.approx(rnorm**2, rel=1e-9, abs=1e-9)

    def test_tie_prefers_shallower(self):
        a = np.array([1.0, 2.0, 3.0])
        res = match_lookup(DepositionHistogram(np.array([1, 2, 3])), [table("deep", a, 30.0), table("near", a, 10.0)])
        assert res.best == "near"

    def test_bin_width_mismatch(self):
        t = table("A", np.array([1.0]))
        with pytest.raises(ValueError):
            match_lookup(DepositionHistogram(np.array([1]), bin_width=0.2), [t])

    def test_empty_inputs(self):
        with pytest.raises(ValueError):
            match_lookup(DepositionHistogram(np.array([0, 0])), [table("A", np.array([1.0]))])
        with pytest.raises(ValueError):
            match_lookup(DepositionHistogram(np.array([1])), [])


class TestAssignment:
    @settings(max_examples=50)
    @given(st.lists(st.integers(0, 10_000), min_size=1, max_size=30))
    def test_conserves_counts(self, counts):
        t = table_from_samples("s", [0.05, 0.15, 0.15, 0.75], [81.0, 81.0, 356.0, 356.0])
        h = DepositionHistogram(np.array(counts))
        spec = assign_incident(h, t)
        assert math.fsum(spec.assigned_counts) + spec.unmapped == pytest.approx(float(h.total), rel=1e-12, abs=1e-9)

    def test_unmapped_bucket(self):
        t = table_from_samples("s", [0.05], [81.0])
        spec = assign_incident(DepositionHistogram(np.array([4, 6])), t)
        assert spec.assigned_counts.tolist() == [4.0] and spec.unmapped == 6.0

    def test_monoenergetic_single_line(self, rng):
        iso = Isotope.monoenergetic(200.0)
        scene = Scene(PointSource.from_microcurie(iso, 300.0), efficiency_scale=100.0)
        t = generate_lookup(scene, 3000, rng)
        spec = assign_incident(histogram_from_energies(scene.generate(10.0, rng).deposited_energy), t)
        assert spec.support.tolist() == [200.0]


class TestGeneratedTables:
    def test_line_labels_and_id(self, rng):
        scene = Scene(PointSource.from_microcurie(load_isotope("Lu177"), 300.0, (0.0, 0.0, 20.0)))
        t = generate_lookup(scene, 5000, rng)
        assert t.scenario_id == "Lu177@20mm" and t.depth_mm == 20.0
        assert t.incident_energies.tolist() == [113.0, 208.0]
        assert t.expected.sum() > 4000

    def test_response_tables_use_estimates(self, rng, noise):
        resp = DetectorResponse(PixelArray.build(ArrayGeometry(), np.random.default_rng(1)), noise)
        scene = Scene(PointSource.from_microcurie(load_isotope("Ba133"), 300.0))
        truth = generate_lookup(scene, 5000, np.random.default_rng(2))
        measured = generate_lookup(scene, 5000, np.random.default_rng(2), response=resp)
        assert measured.expected.sum() < truth.expected.sum()
        assert not np.array_equal(measured.bins, truth.bins)

    def test_requires_events(self, rng):
        scene = Scene(PointSource(load_isotope("Ba133"), 0.0))
        with pytest.raises(ValueError):
            generate_lookup(scene, 100, rng)


class TestChain:
    def test_deterministic_acquisition(self, noise):
        resp = DetectorResponse(PixelArray.build(ArrayGeometry(), np.random.default_rng(1)), noise)
        scene = Scene(PointSource.from_microcurie(load_isotope("Ba133"), 300.0), efficiency_scale=20.0)
        a = simulate_acquisition(scene, resp, 30.0, np.random.default_rng(3))
        b = simulate_acquisition(scene, resp, 30.0, np.random.default_rng(3))
        assert a.records == b.records and len(a.records) > 100
        assert sum(a.flag_counts().values()) == len(a.records)

    def test_histogram_ignores_calibrating_rows(self, noise):
        resp = DetectorResponse(PixelArray.build(ArrayGeometry()), noise)
        recs = [EventRecord(ConflictFlag.CONFLICT_FREE, 74, 1, 10), EventRecord(ConflictFlag.CONFLICT_FREE, 3, 1, 10)]
        assert resp.histogram(recs).total == 1

    def test_estimator_uses_mean_threshold(self, noise):
        arr = PixelArray.build(ArrayGeometry(), np.random.default_rng(1))
        est = DetectorResponse(arr, noise).estimator()
        assert est.v_th == pytest.approx(arr.thresholds()[:66].mean())
        assert est.tau == pytest.approx(200e-6)
