import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpdm.channel import FiberParams, FixedStep, ssfm_propagate
from cpdm.dsp.carrier import BpsConfig, FoeConfig, bps_phase, cpe_bps, estimate_offset, foe
from cpdm.dsp.dispersion import DbpPlan, cd_compensate, cd_response, dbp, min_cd_taps
from cpdm.metrics import ber_from_symbols
from cpdm.signal import ComplexWaveform, JonesSignal, dbm2w, map_8qam, nearest_points
from cpdm.transmitter import pulse_shape

RS = 28e9 / 3
FIBER = FiberParams()


def _symbols(rng, n, m=1):
    return np.vstack([map_8qam(rng.integers(0, 2, 3 * n)).samples for _ in range(m)])


def _awgn(rng, shape, esn0_db):
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)) * np.sqrt(10 ** (-esn0_db / 10) / 2)


def _evm_db(y):
    z = y.ravel() / np.sqrt(np.mean(np.abs(y) ** 2))
    return 10 * np.log10(np.mean(np.abs(z - nearest_points(z)) ** 2))


def _wiener(rng, n, linewidth):
    return np.cumsum(rng.normal(0, np.sqrt(2 * np.pi * linewidth / RS), n))


class TestFoe:
    def test_zero_offset(self, rng):
        s = _symbols(rng, 2**14, 2) + _awgn(rng, (2, 2**14), 20)
        res = estimate_offset(s, RS)
        n_fft = 4 * 2**14
        assert abs(res.offset) <= RS / n_fft / 2
        assert res.reliable

    @pytest.mark.parametrize("offset", [500e6, -1e9, 1.9e9])
    def test_injected_offset(self, rng, offset):
        n = 2**14
        s = _symbols(rng, n, 2) + _awgn(rng, (2, n), 20)
        s = s * np.exp(2j * np.pi * offset * np.arange(n) / RS)
        _, res = foe(s, RS)
        assert res.offset == pytest.approx(offset, abs=10e6)

    def test_search_range_clipped_to_unambiguous_band(self):
        assert min(FoeConfig().search_range, RS / 4) == pytest.approx(2e9)


class TestBps:
    def test_no_phase_noise(self, rng):
        s = _symbols(rng, 4096)[0] + _awgn(rng, 4096, 25)
        r = bps_phase(s)
        assert np.max(np.abs(r.phase)) <= np.pi / (2 * BpsConfig().b_test_phases) + 1e-12

    def test_static_rotation(self, rng):
        s = _symbols(rng, 2**14, 2) + _awgn(rng, (2, 2**14), 18)
        ref, _ = cpe_bps(s)
        rot, _ = cpe_bps(s * np.exp(1j * np.pi / 8))
        assert _evm_db(rot) - _evm_db(ref) < 0.2

    def test_linewidth_penalty_evm(self, rng):
        # OSNR 20 dB in 0.1 nm is Es/N0 = 20 - 1.74 dB per tributary
        n = 2**15
        esn0 = 20 - 1.74
        s = _symbols(rng, n, 2)
        noise = _awgn(rng, (2, n), esn0)
        pn = np.vstack([_wiener(rng, n, 0.2e6) for _ in range(2)])
        clean, _ = cpe_bps(s + noise)
        noisy, _ = cpe_bps((s + noise) * np.exp(1j * pn))
        assert _evm_db(noisy) - _evm_db(clean) < 0.3

    def test_linewidth_penalty_ber(self):
        # BER-equivalent SNR penalty at a level where errors are countable
        rng = np.random.default_rng(21)
        n = 2**17
        s = _symbols(rng, n, 2)
        base = rng.normal(size=(2, n)) + 1j * rng.normal(size=(2, n))
        pn = np.vstack([_wiener(rng, n, 0.2e6) for _ in range(2)])

        def ber(esn0, phase):
            y, _ = cpe_bps((s + base * np.sqrt(10 ** (-esn0 / 10) / 2)) * np.exp(1j * phase))
            return ber_from_symbols(y, s)[0].ber

        b_pn = ber(13.0, pn)
        grid = np.arange(12.0, 14.01, 0.1)
        curve = np.array([ber(e, 0 * pn) for e in grid])
        equiv = np.interp(np.log10(b_pn), np.log10(curve[::-1]), grid[::-1])
        assert 13.0 - equiv < 0.3

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 3), st.integers(0, 1000))
    def test_quarter_turn_invariance(self, k, seed):
        rng = np.random.default_rng(seed)
        s = _symbols(rng, 2048)[0] + _awgn(rng, 2048, 18)
        a = bps_phase(s).phase
        b = bps_phase(s * np.exp(1j * k * np.pi / 2)).phase
        d = np.mod(b - a + np.pi / 4, np.pi / 2) - np.pi / 4
        assert np.allclose(d, 0, atol=1e-9)


def _band_limited(rng, n_sym=1024, sps=16, m=2):
    s = _symbols(rng, n_sym, m)
    return np.vstack([pulse_shape(r, sps, "rrc", 0.2) for r in s]), sps * RS


class TestCd:
    def test_zero_length(self, rng):
        x, rate = _band_limited(rng, m=1)
        w = ComplexWaveform(x[0], rate)
        assert cd_compensate(w, FIBER, 0.0) is w

    @given(st.integers(8, 16), st.floats(1.0, 2000.0))
    def test_all_pass(self, log_n, length):
        h = cd_response(2**log_n, 149.3e9, FIBER, length)
        assert np.max(np.abs(np.abs(h) - 1)) < 1e-12

    @pytest.mark.parametrize("length", [80.0, 400.0, 800.0])
    def test_exact_inverse(self, rng, length):
        x, rate = _band_limited(rng, m=1)
        f = FiberParams(alpha=0.0, n2=0.0, length=length)
        fwd = ssfm_propagate(JonesSignal.from_array(np.vstack([x[0], 0 * x[0]]), rate), f)
        out = cd_compensate(fwd.x, f, length)
        assert np.sqrt(np.mean(np.abs(out.samples - x[0]) ** 2)) < 1e-9 * np.sqrt(np.mean(np.abs(x) ** 2))

    def test_fir_matches_frequency_mode(self, rng):
        x, _ = _band_limited(rng, n_sym=2048, sps=2, m=1)
        rate = 2 * RS
        w = ComplexWaveform(x[0], rate)
        n_taps = min_cd_taps(FIBER, 80.0, rate)
        a = cd_compensate(w, FIBER, 80.0, "freq").samples
        b = cd_compensate(w, FIBER, 80.0, "time", n_taps).samples
        assert np.sqrt(np.mean(np.abs(a - b) ** 2) / np.mean(np.abs(a) ** 2)) < 1e-3

    @pytest.mark.parametrize("length", [80.0, 800.0])
    def test_fir_error_shrinks_with_taps(self, rng, length):
        x, _ = _band_limited(rng, n_sym=2048, sps=2, m=1)
        w = ComplexWaveform(x[0], 2 * RS)
        a = cd_compensate(w, FIBER, length, "freq").samples
        m = min_cd_taps(FIBER, length, w.sample_rate)
        errs = [np.sqrt(np.mean(np.abs(a - cd_compensate(w, FIBER, length, "time", k * m).samples) ** 2))
                for k in (1, 2, 4, 8)]
        assert all(e1 > e2 for e1, e2 in zip(errs, errs[1:]))


class TestDbp:
    @pytest.mark.parametrize("n_spans", [1, 3])
    def test_zero_xi_equals_cdc(self, rng, n_spans):
        x, rate = _band_limited(rng)
        ws = [ComplexWaveform(r, rate) for r in x]
        plan = DbpPlan(FIBER, n_spans, xi_nl=0.0)
        out = dbp(ws, plan)
        for w, o in zip(ws, out):
            ref = cd_compensate(w, FIBER, plan.distance).samples
            assert np.sqrt(np.mean(np.abs(o.samples - ref) ** 2)) < 1e-9 * np.sqrt(w.power)

    @pytest.mark.parametrize("beta2", [-21.36, -5.0])
    @pytest.mark.parametrize("gamma", [0.5, 1.317])
    @pytest.mark.parametrize("length", [80.0, 400.0])
    def test_inversion(self, rng, beta2, gamma, length):
        x, rate = _band_limited(rng, n_sym=512)
        p_dbm = 3.0
        x *= np.sqrt(dbm2w(p_dbm) / np.sum(np.mean(np.abs(x) ** 2, axis=1)))
        f = FiberParams(alpha=0.0, length=length).with_coefficients(beta2=beta2, gamma=gamma)
        steps = 40
        fwd = ssfm_propagate(JonesSignal.from_array(x, rate), f, FixedStep(length / steps, max_phase=np.inf))
        back = dbp([fwd.x, fwd.y], DbpPlan(f, 1, steps, xi_nl=1.0, launch_power_dbm=p_dbm))
        y = np.vstack([b.samples for b in back])
        assert 10 * np.log10(np.mean(np.abs(y - x) ** 2) / np.mean(np.abs(x) ** 2)) < -40

    def test_distance_mismatch(self):
        ws = [ComplexWaveform(np.ones(16), 1e9)]
        with pytest.raises(ValueError):
            dbp(ws, DbpPlan(FIBER, 2), distance=80.0)
