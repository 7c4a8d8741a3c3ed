import numpy as np
import pytest
from scipy import constants

from cpdm.frontend import AdcParams, PhotodiodeParams, adc, coherent_detect, quantize
from cpdm.signal import ComplexWaveform, JonesSignal, TributarySet
from cpdm.transmitter import CpdmMuxModel, LaserParams, cpdm_mux

RATE = 16 * 28e9 / 3
QUIET_LO = LaserParams(power_dbm=20.0, linewidth=0.0)


def _ideal4(rng, n=1024):
    arrays = [rng.normal(size=n) + 1j * rng.normal(size=n) for _ in range(4)]
    t = TributarySet.from_arrays(arrays, RATE)
    return t, cpdm_mux(t, CpdmMuxModel("ideal4"))


def _zero_field(n):
    z = JonesSignal.from_array(np.zeros((2, n), complex), RATE)
    return (z, z)


class TestCoherentDetect:
    def test_noise_free_linear_map(self, rng):
        t, sig = _ideal4(rng)
        out = coherent_detect(sig, QUIET_LO, tia_gain_db=20.0, noise=False)
        pd = PhotodiodeParams()
        k = pd.responsivity * 0.5 * np.sqrt(0.1) * pd.load_resistance * 10.0
        for w, b in zip(t, out.branches):
            np.testing.assert_allclose(b.samples, k * w.samples, rtol=1e-12)

    def test_noise_floor_formula(self):
        n = 10**6
        pd = PhotodiodeParams()
        out = coherent_detect(_zero_field(n), QUIET_LO, pd, tia_gain_db=0.0, seed=3)
        p_lo_branch = 0.1 * 0.25
        i_ph = pd.responsivity * p_lo_branch / 2
        b = pd.thermal_bandwidth
        rail = 2 * constants.e * (i_ph + 2 * pd.dark_current) * b + 4 * constants.k * pd.temperature * b / pd.load_resistance
        expected = 2 * rail * pd.load_resistance**2
        for br in out.branches:
            assert np.var(br.samples) == pytest.approx(expected, rel=0.05)

    def test_lo_offset_rotation(self, rng):
        t, sig = _ideal4(rng, 4096)
        lo = LaserParams(power_dbm=20.0, linewidth=0.0, frequency_offset=500e6)
        out = coherent_detect(sig, lo, noise=False)
        z = out.branches[0].samples * np.conj(t.rcp_h.samples)
        f = np.fft.fftfreq(z.size, 1 / RATE)
        peak = f[np.argmax(np.abs(np.fft.fft(z)))]
        # the LO sits above the carrier, so the beat rotates at -500 MHz
        assert abs(abs(peak) - 500e6) <= RATE / z.size

    def test_ideal4_recovers_tributaries(self, rng):
        t, sig = _ideal4(rng)
        out = coherent_detect(sig, QUIET_LO, noise=False)
        for w, b in zip(t, out.branches):
            rho = abs(np.vdot(w.samples, b.samples)) / (np.linalg.norm(w.samples) * np.linalg.norm(b.samples))
            assert rho > 1 - 1e-9

    def test_shot_noise_scales_with_lo(self):
        pd = PhotodiodeParams(dark_current=1e-18, temperature=1e-9)
        n = 10**6
        v = []
        for p in (10.0, 20.0):
            out = coherent_detect(_zero_field(n), LaserParams(power_dbm=p, linewidth=0.0), pd, seed=1)
            v.append(np.var(out.branches[0].samples))
        assert v[1] / v[0] == pytest.approx(10.0, rel=0.02)

    def test_seeded(self, rng):
        _, sig = _ideal4(rng)
        a = coherent_detect(sig, seed=9).as_array()
        b = coherent_detect(sig, seed=9).as_array()
        assert np.array_equal(a, b)


class TestAdc:
    def test_identity(self, rng):
        w = ComplexWaveform(rng.normal(size=256) + 0j, 112e9)
        assert adc(w, AdcParams(sample_rate=112e9)) is w

    def test_rate_from_samples_per_bit(self):
        assert AdcParams(samples_per_bit=2).rate == 2 * 28e9

    def test_eight_bit_snr(self):
        n = 2**16
        t = np.arange(n)
        x = np.sin(2 * np.pi * 0.01234567 * t) + 1j * np.cos(2 * np.pi * 0.01234567 * t)
        q = quantize(x, 8, full_scale=1.0)
        snr = 10 * np.log10(np.mean(x.real**2) / np.mean((q.real - x.real) ** 2))
        assert snr == pytest.approx(6.02 * 8 + 1.76, abs=1.5)

    def test_seeded(self, rng):
        w = ComplexWaveform(rng.normal(size=1024) + 1j * rng.normal(size=1024), RATE)
        p = AdcParams(samples_per_bit=4, bits=6)
        assert np.array_equal(adc(w, p, 1).samples, adc(w, p, 1).samples)
        assert len(adc(w, p).samples) == round(1024 * 112e9 / RATE)

    def test_rejects_upsampling(self, rng):
        w = ComplexWaveform(np.ones(64), 100e9)
        with pytest.raises(ValueError):
            adc(w, AdcParams(samples_per_bit=10))
