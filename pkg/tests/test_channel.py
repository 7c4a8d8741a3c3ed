import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpdm.channel import (
    C_LIGHT, H_PLANCK, AdaptiveStep, AmplifierParams, FiberParams, FixedStep, LinkPlan, ase_load,
    bookkept_osnr, edfa, obpf, run_link, ssfm_propagate,
)
from cpdm.signal import JonesSignal, field_power
from cpdm.transmitter import pulse_shape

RS = 28e9 / 3
SPS = 16
RATE = RS * SPS


def _field(seed=0, n_sym=512, power_w=1e-3, pulse="rrc"):
    rng = np.random.default_rng(seed)
    s = (rng.choice([-1, 1], (2, n_sym)) + 1j * rng.choice([-1, 1], (2, n_sym))) / np.sqrt(2)
    a = np.vstack([pulse_shape(r, SPS, pulse, 0.2) for r in s])
    a *= np.sqrt(power_w / np.sum(np.mean(np.abs(a) ** 2, axis=1)))
    return JonesSignal.from_array(a, RATE)


def _rms(a, b):
    return float(np.sqrt(np.mean(np.abs(a - b) ** 2)))


class TestSsfm:
    def test_dispersion_only_is_all_pass(self):
        f = FiberParams(alpha=0.0, n2=0.0, length=80.0)
        sig = _field()
        out = ssfm_propagate(sig, f)
        np.testing.assert_allclose(np.abs(np.fft.fft(out.as_array())), np.abs(np.fft.fft(sig.as_array())),
                                   atol=1e-10 * np.abs(np.fft.fft(sig.as_array())).max())

    def test_cw_self_phase_modulation(self):
        f = FiberParams(alpha=0.0, length=50.0).with_coefficients(beta2=0.0, beta3=0.0, gamma=1.317)
        p = 10e-3
        a = np.full((2, 256), np.sqrt(p / 2), complex)
        out = ssfm_propagate(JonesSignal.from_array(a, RATE), f, AdaptiveStep(1e-3))
        phase = np.angle(out.as_array()[0, 0] / a[0, 0])
        expected = (8 / 9) * 1.317 * p * 50.0
        assert phase == pytest.approx(expected, rel=1e-9)

    def test_attenuation_80km(self):
        f = FiberParams(n2=0.0, length=80.0)
        sig = _field()
        out = ssfm_propagate(sig, f)
        assert 10 * np.log10(out.power / sig.power) == pytest.approx(-16.0, abs=1e-6)

    @pytest.mark.parametrize("beta2,length", [(-21.36, 80.0), (-5.0, 400.0)])
    def test_linear_regime_matches_transfer_function(self, beta2, length):
        f = FiberParams(length=length, n2=0.0).with_coefficients(beta2=beta2, beta3=0.157)
        sig = _field()
        out = ssfm_propagate(sig, f, FixedStep(dz=7.3))
        w = 2 * np.pi * np.fft.fftfreq(len(sig.x), 1 / RATE)
        # numpy's inverse FFT uses exp(+j w t), so d/dt -> j w
        h = np.exp(-f.alpha_np * length / 2
                   + 1j * (beta2 * 1e-24 / 2 * w**2 - f.beta3 * 1e-36 / 6 * w**3) * length)
        ref = np.fft.ifft(np.fft.fft(sig.as_array()) * h)
        assert _rms(out.as_array(), ref) < 1e-9 * np.sqrt(sig.power)

    def test_step_halving_second_order(self):
        f = FiberParams(length=40.0)
        sig = _field(power_w=50e-3, n_sym=256)
        loose = FixedStep(dz=1.0, max_phase=10.0)

        def run(dz):
            return ssfm_propagate(sig, f, FixedStep(dz=dz, max_phase=10.0)).as_array()

        ref = run(0.005)
        e1 = _rms(run(loose.dz), ref)
        e2 = _rms(run(loose.dz / 2), ref)
        assert 3.0 < e1 / e2 < 5.0

    def test_seed_free_and_deterministic(self):
        f = FiberParams(length=20.0)
        a = ssfm_propagate(_field(), f).as_array()
        b = ssfm_propagate(_field(), f).as_array()
        assert np.array_equal(a, b)


class TestEdfa:
    def test_nsp_from_noise_figure(self):
        amp = AmplifierParams(gain_db=20.0, noise_figure_db=4.0)
        g = 100.0
        assert amp.spontaneous_emission_factor == pytest.approx(10**0.4 * g / (2 * (g - 1)), rel=1e-12)
        assert amp.spontaneous_emission_factor == pytest.approx(10**0.4 / 2, rel=0.015)

    def test_noiseless_gain(self):
        sig = _field()
        out = edfa(sig, AmplifierParams(gain_db=20.0, noise=False))
        assert 10 * np.log10(out.power / sig.power) == pytest.approx(20.0, abs=1e-12)

    def test_ase_in_reference_band(self):
        amp = AmplifierParams(gain_db=20.0, noise_figure_db=4.0)
        n, rate = 4096, 100e9
        zero = JonesSignal.from_array(np.zeros((2, n), complex), rate)
        f = np.fft.fftfreq(n, 1 / rate)
        band = np.abs(f) <= 6.25e9
        p = []
        for k in range(100):
            a = edfa(zero, amp, seed=k).as_array()
            spec = np.abs(np.fft.fft(a, axis=1)) ** 2 / n**2
            p.append(spec[:, band].sum(axis=1).mean())
        s_ase = amp.spontaneous_emission_factor * (amp.gain - 1) * H_PLANCK * C_LIGHT / 1550e-9
        assert np.mean(p) == pytest.approx(s_ase * band.sum() * rate / n, rel=0.03)

    def test_seeded_noise(self):
        sig = _field()
        amp = AmplifierParams()
        assert np.array_equal(edfa(sig, amp, seed=3).as_array(), edfa(sig, amp, seed=3).as_array())


class TestObpf:
    def test_dc_unchanged(self):
        sig = JonesSignal.from_array(np.ones((2, 1024), complex), 448e9)
        np.testing.assert_allclose(obpf(sig, 100e9).as_array(), 1.0, atol=1e-12)

    def test_white_noise_fraction(self, rng):
        n = 2**16
        sig = JonesSignal.from_array(rng.normal(size=(2, n)) + 1j * rng.normal(size=(2, n)), 448e9)
        assert obpf(sig, 100e9).power / sig.power == pytest.approx(100 / 448, rel=0.02)

    def test_out_of_band_tone(self):
        n = 2240  # 200 GHz falls on a bin
        t = np.arange(n) / 448e9
        tone = np.exp(2j * np.pi * 200e9 * t)
        sig = JonesSignal.from_array(np.vstack([tone, tone]), 448e9)
        out = obpf(sig, 100e9)
        assert 10 * np.log10(max(out.power, 1e-300) / sig.power) < -60


class TestLink:
    def test_zero_spans_identity(self):
        sig = _field()
        assert run_link(sig, LinkPlan(n_spans=0), FiberParams(), AmplifierParams()) is sig

    def test_noiseless_transparent(self):
        sig = _field(n_sym=256, power_w=0.5e-3)
        out = run_link(sig, LinkPlan(step=AdaptiveStep(), obpf_bandwidth=None), FiberParams(),
                       AmplifierParams(noise=False))
        assert abs(10 * np.log10(field_power(out) / field_power(sig))) < 0.01

    def test_loop_osnr_matches_budget(self):
        sig = _field(n_sym=256, power_w=10 ** (-0.3) * 1e-3, pulse="nrz")
        out = run_link(sig, LinkPlan(step=AdaptiveStep()), FiberParams(), AmplifierParams(), seed=1)
        assert bookkept_osnr(out) == pytest.approx(58 - 3 - 4 - 16 - 10, abs=1.5)

    def test_seeded_link(self):
        sig = _field(n_sym=128)
        plan = LinkPlan(n_spans=2, step=AdaptiveStep())
        a = run_link(sig, plan, FiberParams(), AmplifierParams(), seed=4).as_array()
        b = run_link(sig, plan, FiberParams(), AmplifierParams(), seed=4).as_array()
        assert np.array_equal(a, b)


def _direct_osnr(clean, noisy, ref_bw=12.5e9):
    """Signal power over the added noise density of both polarizations in ``ref_bw``."""
    d = noisy.as_array() - clean.as_array()
    psd = np.mean(np.abs(d) ** 2) / clean.sample_rate  # per mode
    return 10 * np.log10(clean.power / (2 * psd * ref_bw))


class TestAseLoad:
    def test_infinite_target(self):
        sig = _field()
        assert ase_load(sig, np.inf) is sig

    def test_load_twenty(self):
        sig = _field(n_sym=4096)
        out = ase_load(sig, 20.0, seed=2)
        assert bookkept_osnr(out) == pytest.approx(20.0, abs=0.05)
        assert _direct_osnr(sig, out) == pytest.approx(20.0, abs=0.05)

    def test_two_loads(self):
        sig = _field(n_sym=4096)
        out = ase_load(ase_load(sig, 23.0, seed=1), 20.0, seed=2)
        assert _direct_osnr(sig, out) == pytest.approx(20.0, abs=0.1)

    def test_rejects_raising_osnr(self):
        sig = ase_load(_field(), 15.0)
        with pytest.raises(ValueError):
            ase_load(sig, 20.0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_link_seed_determinism(seed):
    sig = _field(n_sym=64)
    plan = LinkPlan(n_spans=1, step=AdaptiveStep(3e-2), span_length=10.0)
    fib = FiberParams(length=10.0)
    a = run_link(sig, plan, fib, AmplifierParams(gain_db=2.0), seed=seed).as_array()
    b = run_link(sig, plan, fib, AmplifierParams(gain_db=2.0), seed=seed).as_array()
    assert np.array_equal(a, b)
