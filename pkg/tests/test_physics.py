import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from gammaspec.constants import ELECTRON_REST_ENERGY_KEV
from gammaspec.geometry import ArrayGeometry, PixelKind
from gammaspec.physics import (AttenuationTable, Photon, PointSource, Scene, activity_at, chip_cone,
                               chip_solid_angle, compton_edge, compton_electron_energy,
                               deposit_in_depletion, expected_decays, intersect_chip,
                               interaction_probability, klein_nishina_unnormalized,
                               load_attenuation_table, load_isotope, parse_attenuation_table,
                               rectangle_solid_angle, sample_compton, sample_decay_times, theta_pdf,
                               transport_to_pixel)
from gammaspec.physics.sources import Isotope

MEC2 = ELECTRON_REST_ENERGY_KEV


def kn_textbook(e, theta):
    """Klein-Nishina in the (E'/E) form, written independently of the package."""
    ratio = 1.0 / (1.0 + e / MEC2 * (1.0 - np.cos(theta)))
    return 0.5 * ratio**2 * (ratio + 1.0 / ratio - np.sin(theta) ** 2)


def theta_cdf_oracle(e):
    grid = np.linspace(0.0, np.pi, 200001)
    dens = kn_textbook(e, grid) * np.sin(grid)
    cdf = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
    cdf /= cdf[-1]
    return lambda t: np.interp(t, grid, cdf)


class TestKinematics:
    @pytest.mark.parametrize("energy, edge", [(511.0, 340.667), (100.0, 28.129), (356.0, 207.2545)])
    def test_compton_edge(self, energy, edge):
        assert compton_edge(energy) == pytest.approx(edge, abs=5e-4)

    def test_edge_is_backscatter_energy(self):
        assert compton_electron_energy(511.0, math.pi) == pytest.approx(compton_edge(511.0), rel=1e-12)

    def test_forward_scatter_transfers_nothing(self):
        assert compton_electron_energy(208.0, 0.0) == 0.0

    @given(st.floats(1.0, 2000.0), st.floats(0.0, math.pi))
    def test_electron_energy_bounded_by_edge(self, e, theta):
        t = compton_electron_energy(e, theta)
        assert 0.0 <= t <= compton_edge(e) * (1 + 1e-12)

    @given(st.floats(1.0, 2000.0), st.floats(0.0, math.pi - 1e-3))
    def test_electron_energy_increases_with_angle(self, e, theta):
        assert compton_electron_energy(e, theta + 1e-3) > compton_electron_energy(e, theta)

    @pytest.mark.parametrize("theta", [-0.1, math.pi + 0.1])
    def test_angle_out_of_range(self, theta):
        with pytest.raises(ValueError):
            compton_electron_energy(100.0, theta)

    @pytest.mark.parametrize("energy", [0.0, -5.0])
    def test_nonpositive_energy(self, energy):
        with pytest.raises(ValueError):
            compton_edge(energy)

    def test_kn_forward_value(self):
        assert klein_nishina_unnormalized(511.0, 0.0) == pytest.approx(2.0)

    def test_kn_thomson_limit(self):
        theta = np.linspace(0, np.pi, 7)
        assert np.allclose(klein_nishina_unnormalized(1e-6, theta), 1 + np.cos(theta) ** 2, rtol=1e-6)

    @pytest.mark.parametrize("energy", [31.0, 208.0, 511.0, 1346.0])
    def test_kn_matches_textbook_form(self, energy):
        theta = np.linspace(0, np.pi, 50)
        assert np.allclose(klein_nishina_unnormalized(energy, theta), 2 * kn_textbook(energy, theta), rtol=1e-12)

    @pytest.mark.parametrize("energy", [81.0, 511.0])
    def test_theta_pdf_normalized(self, energy):
        val, _ = integrate.quad(lambda t: theta_pdf(energy, t), 0, math.pi, limit=200)
        assert val == pytest.approx(1.0, abs=1e-6)


class TestSampling:
    def test_scalar_call_returns_floats(self, rng):
        theta, t, e_out = sample_compton(356.0, rng)
        assert isinstance(theta, float) and t + e_out == pytest.approx(356.0)

    @pytest.mark.parametrize("energy", [31.0, 356.0, 1346.0])
    def test_angle_distribution_ks(self, rng, energy):
        theta, electron, scattered = sample_compton(energy, rng, size=50_000)
        d = stats.kstest(theta, theta_cdf_oracle(energy)).statistic
        assert d < 0.01
        assert np.all(electron <= compton_edge(energy) * (1 + 1e-12))
        assert np.allclose(electron + scattered, energy)

    def test_mixed_energies(self, rng):
        e = np.repeat([113.0, 208.0], 2000)
        theta, electron, _ = sample_compton(e, rng)
        assert theta.shape == (4000,)
        assert np.all(electron[:2000] <= compton_edge(113.0) + 1e-9)

    def test_reproducible(self):
        a = sample_compton(511.0, np.random.default_rng(5), size=100)
        b = sample_compton(511.0, np.random.default_rng(5), size=100)
        assert np.array_equal(a[0], b[0])


class TestInteractionAndDeposit:
    def test_probability_value(self):
        assert interaction_probability(2.0, 0.5) == pytest.approx(1 - math.exp(-1))

    @given(st.floats(0, 1e3), st.floats(0, 1.0))
    def test_probability_is_probability(self, mu, length):
        p = interaction_probability(mu, length)
        assert 0.0 <= p <= 1.0
        assert p <= mu * length + 1e-15

    def test_negative_inputs(self):
        with pytest.raises(ValueError):
            interaction_probability(-1.0, 1.0)

    @pytest.mark.parametrize("t, path, expected", [(1.0, 1.5, 1.0), (100.0, 1.5, 2.25), (0.0, 3.0, 0.0)])
    def test_deposit(self, t, path, expected):
        assert deposit_in_depletion(t, path, 1.5) == pytest.approx(expected)

    @given(st.floats(0, 1000), st.floats(0, 20), st.floats(0, 5))
    def test_deposit_never_exceeds_either_limit(self, t, path, s):
        d = deposit_in_depletion(t, path, s)
        assert d <= t and d <= s * path + 1e-12


class TestAttenuation:
    def test_silicon_compton_at_100kev(self):
        # NIST XCOM incoherent scattering for Si: 0.1432 cm^2/g times 2.329 g/cm^3
        assert load_attenuation_table()(100.0) == pytest.approx(0.3335, rel=5e-3)

    def test_nodes_reproduced_exactly(self):
        table = load_attenuation_table()
        assert np.allclose(table(table.energies), table.mu, rtol=1e-12)

    def test_decreasing_over_source_lines(self):
        mu = load_attenuation_table()([31.0, 81.0, 208.0, 356.0, 511.0, 1346.0])
        assert np.all(np.diff(mu) < 0)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            load_attenuation_table()(1e6)

    @pytest.mark.parametrize("text", ["10 1\n20 2\n", "# material: x\n10 1 2\n", "# material: x\n20 1\n10 2\n"])
    def test_parse_rejects(self, text):
        with pytest.raises(ValueError):
            parse_attenuation_table(text)

    def test_log_log_midpoint(self):
        t = AttenuationTable("t", np.array([10.0, 40.0]), np.array([4.0, 1.0]))
        # a power law through both nodes: mu = 40 / E
        assert t(20.0) == pytest.approx(2.0)


class TestSources:
    @pytest.mark.parametrize("name, half_life_h", [("Cu64", 12.7), ("Lu177", 159.5), ("Ba133", 92489.4)])
    def test_builtin_half_lives(self, name, half_life_h):
        assert load_isotope(name).half_life / 3600 == pytest.approx(half_life_h, rel=2e-3)

    @pytest.mark.parametrize("name, lines", [("Ba133", [31, 81, 302, 356]), ("Lu177", [113, 208])])
    def test_line_sets(self, name, lines):
        assert load_isotope(name).energies.tolist() == lines

    def test_activity_halves(self):
        src = PointSource.from_microcurie(load_isotope("Cu64"), 300.0)
        assert activity_at(src, src.isotope.half_life) == pytest.approx(150.0 * 3.7e4)

    def test_expected_decays_matches_quadrature(self):
        src = PointSource.from_microcurie(load_isotope("Cu64"), 10.0)
        val, _ = integrate.quad(lambda t: activity_at(src, t), 3600.0, 3600.0 + 7200.0)
        assert expected_decays(src, 3600.0, 7200.0) == pytest.approx(val, rel=1e-10)

    def test_decay_times_follow_exponential(self, rng):
        iso = Isotope.monoenergetic(100.0, half_life=100.0)
        src = PointSource(iso, 1.0)
        t = sample_decay_times(src, 50.0, 400.0, 100_000, rng)
        assert t.min() >= 50.0 and t.max() <= 450.0
        lam = iso.decay_constant
        cdf = lambda x: -np.expm1(-lam * (x - 50.0)) / -math.expm1(-lam * 400.0)
        assert stats.kstest(t, cdf).pvalue > 1e-3

    @pytest.mark.parametrize("bad", [{"name": "x", "half_life_s": 1, "lines": [], "extra": 1},
                                     {"name": "x", "half_life_s": -1, "lines": [{"energy_kev": 1, "yield": 1}]}])
    def test_isotope_validation(self, bad):
        with pytest.raises(ValueError):
            Isotope.from_dict(bad)

    def test_roundtrip_dict(self):
        iso = load_isotope("Ba133")
        assert Isotope.from_dict(iso.to_dict()) == iso


class TestGeometry:
    def test_default_layout(self):
        g = ArrayGeometry()
        kinds = g.row_kinds()
        assert (kinds == PixelKind.ENERGY_RESOLVING).sum() == 61
        assert (kinds == PixelKind.LOW_FLUX).sum() == 5
        assert (kinds == PixelKind.ENERGY_CALIBRATING).sum() == 5
        assert g.populated_mask().sum() == 71 * 110

    def test_unpopulated_rows_never_hit(self, rng):
        g = ArrayGeometry()
        hx, hy = g.half_extent
        row, col = g.pixel_at(rng.uniform(-hx, hx, 200_000), rng.uniform(-hy, hy, 200_000))
        assert set(np.unique(row)) == set(range(1, 67)) | set(range(72, 77))

    def test_low_flux_rows_twice_as_tall(self, rng):
        g = ArrayGeometry()
        hx, hy = g.half_extent
        row, _ = g.pixel_at(rng.uniform(-hx, hx, 400_000), rng.uniform(-hy, hy, 400_000))
        counts = np.bincount(row, minlength=77)
        assert counts[62:67].mean() / counts[1:62].mean() == pytest.approx(2.0, rel=0.05)

    def test_outside_maps_to_zero(self):
        row, col = ArrayGeometry().pixel_at(10.0, 0.0)
        assert row == 0 and col == 0

    @pytest.mark.parametrize("kw", [{"rows": 200}, {"er_rows": (1, 70)}, {"ec_areas": (1.0,)}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ArrayGeometry(**kw)

    def test_ec_area(self):
        assert ArrayGeometry().ec_area(74) == 5.29
        with pytest.raises(ValueError):
            ArrayGeometry().ec_area(10)


class TestTransport:
    def test_normal_ray_hits_centre_row(self):
        g = ArrayGeometry()
        hit = transport_to_pixel(Photon(511.0, (0.0, 0.0, 10.0), (0.0, 0.0, -1.0)), g)
        assert hit.incidence_angle == 0.0 and hit.path_in_depletion == pytest.approx(1.5)
        assert hit.col in (55, 56)

    def test_ray_away_from_chip_misses(self):
        assert transport_to_pixel(Photon(511.0, (0.0, 0.0, 10.0), (0.0, 0.0, 1.0)), ArrayGeometry()) is None

    def test_slant_path(self):
        d = np.array([0.1, 0.0, -1.0])
        d /= np.linalg.norm(d)
        _, _, theta, path = intersect_chip([0.0, 0.0, 10.0], d, ArrayGeometry())
        assert path[0] == pytest.approx(1.5 / math.cos(theta[0]))

    def test_solid_angle_matches_quadrature(self):
        h = 10.0
        val, _ = integrate.dblquad(lambda y, x: h / (x * x + y * y + h * h) ** 1.5, -1.65, 1.65, -1.5, 1.5)
        assert chip_solid_angle((0, 0, h), ArrayGeometry()) == pytest.approx(val, rel=1e-9)

    def test_infinite_plane_is_half_sphere(self):
        assert rectangle_solid_angle(-1e6, 1e6, -1e6, 1e6, 1.0) == pytest.approx(2 * math.pi, rel=1e-5)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(1, 50))
    def test_cone_covers_chip(self, x, y, z):
        g = ArrayGeometry()
        cone = chip_cone((x, y, z), g)
        dirs = cone.sample(4000, np.random.default_rng(0))
        assert np.all(dirs @ cone.axis >= cone.cos_half_angle - 1e-12)
        corners = np.column_stack([g.corners, np.zeros(4)]) - np.array([x, y, z])
        corners /= np.linalg.norm(corners, axis=1)[:, None]
        assert np.all(corners @ cone.axis >= cone.cos_half_angle)


class TestGenerator:
    def _scene(self, iso, mu, geometry, efficiency_scale=1.0):
        table = AttenuationTable("flat", np.array([1.0, 2000.0]), np.array([mu, mu]))
        return Scene(PointSource(iso, 1e6, (0.3, -0.2, 2.0)), geometry, table, 1.5, efficiency_scale)

    def test_rate_matches_naive_emission(self, rng):
        # emit isotropically, transport and test every photon; compare with the thinned generator
        g = ArrayGeometry()
        iso = Isotope.monoenergetic(100.0)
        scene = self._scene(iso, 300.0, g)
        n = 4_000_000
        u = rng.uniform(-1, 1, n)
        phi = rng.uniform(0, 2 * math.pi, n)
        s = np.sqrt(1 - u * u)
        dirs = np.column_stack([s * np.cos(phi), s * np.sin(phi), u])
        row, _, _, path = intersect_chip(np.broadcast_to(scene.source.position, (n, 3)), dirs, g)
        hit = row > 0
        p_naive = interaction_probability(300.0, path[hit] / 1e4).sum() / n
        per_decay = scene.expected_interactions(1.0) / 1e6
        assert per_decay == pytest.approx(p_naive, rel=0.02)
        counts = [len(scene.generate(1.0, np.random.default_rng(k))) for k in range(40)]
        mean = scene.expected_interactions(1.0)
        assert abs(np.mean(counts) - mean) < 5 * math.sqrt(mean / 40)

    def test_event_fields(self, rng):
        g = ArrayGeometry()
        scene = Scene(PointSource.from_microcurie(load_isotope("Ba133"), 300.0), g, None, 1.5, 200.0)
        ev = scene.generate(20.0, rng)
        assert len(ev) > 100
        assert np.all(np.diff(ev.time) >= 0)
        assert set(np.unique(ev.incident_energy)) <= {31.0, 81.0, 302.0, 356.0}
        kinds = g.row_kinds()[ev.pixel_row - 1]
        assert not np.any(kinds == PixelKind.UNPOPULATED)
        assert np.all(ev.deposited_energy <= np.minimum(ev.electron_energy,
                                                        1.5 * 1.5 / np.cos(ev.incidence_angle)) + 1e-12)
        assert np.all(ev.diode_index[kinds != PixelKind.LOW_FLUX] == 0)
        assert ev.diode_index.max() <= 5

    def test_zero_activity(self, rng):
        scene = Scene(PointSource(load_isotope("Cu64"), 0.0))
        assert len(scene.generate(10.0, rng)) == 0

    def test_bad_duration(self, rng):
        with pytest.raises(ValueError):
            Scene(PointSource(load_isotope("Cu64"), 1.0)).generate(0.0, rng)

    def test_deterministic(self):
        scene = Scene(PointSource.from_microcurie(load_isotope("Lu177"), 300.0), efficiency_scale=100.0)
        a = scene.generate(30.0, np.random.default_rng(9))
        b = scene.generate(30.0, np.random.default_rng(9))
        assert a.to_bytes() == b.to_bytes()
