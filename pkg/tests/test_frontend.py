import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import constants as sc

from gammaspec.frontend import (C_DIODE_REF, V_CLIP, NoiseParams, PixelConfig, TransistorParams,
                                decay_time, diode_voltage, dt_from_vres, dt_noise_sigma,
                                effective_threshold, lowflux_summation_sigma, n_ehps,
                                pixel_noise_sigma, resolution_bound, respond, snr_dt, snr_vd,
                                tau_from_vres, vga_gain, voltage_noise_sigma)
from gammaspec.geometry import PixelKind
from gammaspec.physics import InteractionEvent

KT = sc.k * 300.0


def event(e_dep, row=1, col=1, t=0.0):
    return InteractionEvent(t, row, col, 0, e_dep, 1.0, 0.0, e_dep, 100.0)


class TestCharge:
    def test_fifty_pairs_threshold(self):
        # 50 pairs on the reference node is the detection threshold
        assert diode_voltage(50, C_DIODE_REF) == pytest.approx(5.34e-3, rel=5e-4)

    @pytest.mark.parametrize("e_dep, pairs", [(1.0, 298), (0.0, 0), (2.25, 670)])
    def test_pair_count(self, e_dep, pairs):
        assert n_ehps(e_dep) == pairs

    def test_slant_incidence_scales(self):
        assert n_ehps(1.0, math.acos(0.5)) == round(2000 / 3 / 1.12)

    @pytest.mark.parametrize("e_dep, theta", [(-1.0, 0.0), (1.0, math.pi / 2)])
    def test_pair_count_rejects(self, e_dep, theta):
        with pytest.raises(ValueError):
            n_ehps(e_dep, theta)

    def test_voltage_clips(self):
        assert diode_voltage(10**7, C_DIODE_REF) == V_CLIP

    @given(st.integers(0, 10**6), st.integers(0, 10**6))
    def test_voltage_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert diode_voltage(lo, C_DIODE_REF) <= diode_voltage(hi, C_DIODE_REF)


class TestNoise:
    def test_sigma_value(self, noise):
        # kT/C plus the shot term q I_s r_ds / 2C
        shot = sc.e * 1e-15 * (200e-6 / C_DIODE_REF) / (2 * C_DIODE_REF)
        assert voltage_noise_sigma(noise, C_DIODE_REF) == pytest.approx(math.sqrt(KT / C_DIODE_REF + shot), rel=1e-9)
        assert voltage_noise_sigma(noise, C_DIODE_REF) == pytest.approx(1.66386e-3, rel=1e-5)

    def test_shot_term_is_small(self, noise):
        excess = voltage_noise_sigma(noise, C_DIODE_REF) / math.sqrt(KT / C_DIODE_REF) - 1
        assert excess == pytest.approx(1.2886e-3, rel=1e-3)

    def test_snr_at_threshold(self):
        assert snr_vd(5.34e-3, math.sqrt(KT / C_DIODE_REF)) == pytest.approx(3.214, abs=1e-3)

    def test_lowflux_summation(self, noise):
        assert lowflux_summation_sigma(noise) == pytest.approx(2.1019e-4, rel=1e-4)

    def test_lowflux_pixel_noisier(self, noise):
        er = PixelConfig.make()
        lf = PixelConfig.make(PixelKind.LOW_FLUX)
        assert pixel_noise_sigma(lf, noise) == pytest.approx(math.hypot(pixel_noise_sigma(er, noise), 2.1019e-4), rel=1e-4)

    @pytest.mark.parametrize("field", ["i_s", "r_ds", "c_out_buffer"])
    def test_params_positive(self, field):
        with pytest.raises(ValueError):
            NoiseParams(**{field: 0.0})

    def test_snr_rejects_zero_sigma(self):
        with pytest.raises(ValueError):
            snr_vd(1.0, 0.0)


class TestDecayTime:
    def test_one_kev(self):
        v = diode_voltage(298, C_DIODE_REF)
        assert decay_time(v, 200e-6, 5e-3) == pytest.approx(370.19e-6, rel=1e-4)

    def test_below_threshold(self):
        assert decay_time(4e-3, 200e-6, 5e-3) is None

    def test_dt_noise_and_snr(self):
        q = 298 * sc.e
        sigma = dt_noise_sigma(200e-6, q, C_DIODE_REF)
        assert sigma == pytest.approx(1.04412e-5, rel=1e-4)
        assert snr_dt(370.19e-6, sigma) == pytest.approx(35.455, rel=1e-3)

    def test_dt_noise_matches_delta_method(self):
        # d(DT)/dV = tau / V; sigma_DT = tau * sigma_V / V with sigma_V = sqrt(kT/C)
        q = 1000 * sc.e
        v = q / C_DIODE_REF
        expected = 200e-6 * math.sqrt(KT / C_DIODE_REF) / v
        assert dt_noise_sigma(200e-6, q, C_DIODE_REF) == pytest.approx(expected, rel=1e-12)

    @given(st.floats(6e-3, 1.2), st.floats(6e-3, 1.2))
    def test_decay_time_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert decay_time(lo, 200e-6, 5e-3) <= decay_time(hi, 200e-6, 5e-3)

    def test_resolution_bound_small_noise_limit(self):
        # for small sigma the +-2 sigma width is 4 sigma/tau times the deposit
        alpha = 31.457
        dt = 400e-6
        e = alpha * 5e-3 * math.exp(dt / 200e-6)
        assert resolution_bound(dt, 1e-9, 200e-6, alpha, 5e-3) == pytest.approx(e * 4e-9 / 200e-6, rel=1e-6)

    def test_bias_helper(self):
        tp = TransistorParams()
        assert tau_from_vres(0.7, tp, C_DIODE_REF) == pytest.approx(200e-6)
        assert dt_from_vres(0.7, tp, C_DIODE_REF, 5e-3 * math.e, 5e-3) == pytest.approx(200e-6)
        with pytest.raises(ValueError):
            tau_from_vres(0.8, tp, C_DIODE_REF)


class TestGain:
    def test_unity_at_code_four(self):
        assert vga_gain(4) == 1.0

    def test_step_ratio(self):
        g = vga_gain(np.arange(8))
        assert np.allclose(g[1:] / g[:-1], 1.35)

    def test_calibrating_pixel_code_zero_acts_as_four(self):
        ec = PixelConfig.make(PixelKind.ENERGY_CALIBRATING, 6.25, gain_code=0)
        assert ec.enabled
        assert effective_threshold(ec) == pytest.approx(5e-3)

    def test_higher_code_lower_threshold(self):
        th = [effective_threshold(PixelConfig.make(gain_code=c)) for c in range(1, 8)]
        assert np.all(np.diff(th) < 0)

    def test_area_scaling(self):
        p = PixelConfig.make(diode_area=6.25)
        assert p.c_diode == pytest.approx(1.5e-15 * 6.25 / 4)
        assert p.tau == pytest.approx(200e-6 * 6.25 / 4)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PixelConfig(gain_code=8)
        with pytest.raises(ValueError):
            PixelConfig(kind=PixelKind.LOW_FLUX, n_diodes=1)


class TestRespond:
    def test_noiseless_pulse(self, noise):
        pulse = respond(event(1.0), PixelConfig.make(), noise, None)
        assert pulse.detected
        assert pulse.dt_true == pytest.approx(decay_time(pulse.v_d, 200e-6, 5e-3))

    def test_disabled_pixel(self, noise):
        assert respond(event(1.0), PixelConfig.make(gain_code=0), noise, None) is None

    def test_subthreshold(self, noise):
        pulse = respond(event(0.1), PixelConfig.make(), noise, None)
        assert not pulse.detected and pulse.dt_true == 0.0

    def test_noise_spread(self, noise):
        rng = np.random.default_rng(1)
        v = [respond(event(1.0), PixelConfig.make(), noise, rng).v_d for _ in range(4000)]
        assert np.std(v) == pytest.approx(voltage_noise_sigma(noise, C_DIODE_REF), rel=0.05)
