import numpy as np
import pytest
from hypothesis import given, strategies as st

from cpdm.signal import (
    DEFAULT_CONSTELLATION, BitStream, ComplexWaveform, TributarySet, demap_8qam, fft,
    generate_bits, ifft, map_8qam, resample,
)

C = DEFAULT_CONSTELLATION


def _slicer_bits(s):
    """Independent rectangular-grid slicer: column by I thresholds, row by Q sign."""
    i = s.real * np.sqrt(6)
    col = np.digitize(i, [-2, 0, 2])  # 0..3 for I = -3, -1, 1, 3
    gray = np.array([0b00, 0b01, 0b11, 0b10])[col]
    row = (s.imag < 0).astype(int)
    lab = (row << 2) | gray
    return np.stack([(lab >> 2) & 1, (lab >> 1) & 1, lab & 1], axis=-1).ravel()


class TestConstellation:
    def test_unit_energy(self):
        assert abs(np.mean(np.abs(C.points) ** 2) - 1) < 1e-12

    def test_eight_points_two_radii(self):
        bits = np.array([[(k >> 2) & 1, (k >> 1) & 1, k & 1] for k in range(8)]).ravel()
        s = map_8qam(bits).samples
        assert len(set(np.round(s, 12))) == 8
        r = np.unique(np.round(np.abs(s), 12))
        assert len(r) == 2
        np.testing.assert_allclose(r**2, [2 / 6, 10 / 6])

    def test_adjacent_points_differ_in_one_bit(self):
        pts = C.by_label
        d = np.abs(pts[:, None] - pts[None, :])
        nearest = np.isclose(d, 2 / np.sqrt(6))
        for a, b in zip(*np.nonzero(nearest)):
            assert bin(a ^ b).count("1") == 1

    def test_all_zero_bits(self):
        s = map_8qam(np.zeros(30, np.uint8)).samples
        assert np.all(s == C.by_label[0])

    def test_midpoint_tie_goes_to_lower_label(self):
        pts = C.by_label
        mid = (pts[0] + pts[1]) / 2
        bits = demap_8qam(np.array([mid])).bits
        assert bits.tolist() == [0, 0, 0]
        mid = (pts[7] + pts[6]) / 2
        assert demap_8qam(np.array([mid])).bits.tolist() == [1, 1, 0]


class TestBits:
    def test_prbs15_period(self):
        b = generate_bits(2 * (2**15 - 1), seed=5, generator="PRBS15").bits
        p = 2**15 - 1
        assert np.array_equal(b[:p], b[p:])
        assert not np.array_equal(b[:p], np.roll(b[:p], 1))

    def test_determinism(self):
        assert np.array_equal(generate_bits(6, 3).bits, generate_bits(6, 3).bits)
        assert np.array_equal(generate_bits(999, 3, "uniform").bits, generate_bits(999, 3, "uniform").bits)

    def test_uniform_balance(self):
        b = generate_bits(3 * 2**16, 1, "uniform").bits
        assert abs(b.mean() - 0.5) < 0.01

    def test_unknown_generator(self):
        with pytest.raises(ValueError):
            generate_bits(10, 0, "PRBS7x")

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            BitStream(np.array([0, 2]))


@given(st.integers(0, 2**32 - 1))
def test_map_demap_round_trip(seed):
    b = generate_bits(3 * 2**12, seed, "uniform")
    assert np.array_equal(demap_8qam(map_8qam(b)).bits, b.bits)


def _oracle_symbols(bits):
    lab = (bits[0::3] << 2) | (bits[1::3] << 1) | bits[2::3]
    cols = np.array([-3, -1, 3, 1])[lab & 3]  # gray 00, 01, 10, 11 -> -3, -1, 3, 1
    return (cols + 1j * (1 - 2 * (lab >> 2))) / np.sqrt(6)


def _awgn(rng, n, esn0_db):
    return (rng.normal(size=n) + 1j * rng.normal(size=n)) * np.sqrt(10 ** (-esn0_db / 10) / 2)


def test_awgn_ber_same_realization_matches_slicer():
    n = 10**5
    rng = np.random.default_rng(7)
    bits = rng.integers(0, 2, 3 * n)
    r = map_8qam(bits.astype(np.uint8)).samples + _awgn(rng, n, 16)
    assert np.array_equal(demap_8qam(r).bits, _slicer_bits(r))


def test_awgn_ber_matches_independent_monte_carlo():
    # 10^6 symbols each so both estimates carry about 6% relative spread
    n = 10**6
    rng = np.random.default_rng(7)
    bits = rng.integers(0, 2, 3 * n)
    ber = np.mean(demap_8qam(map_8qam(bits.astype(np.uint8)).samples + _awgn(rng, n, 16)).bits != bits)
    rng2 = np.random.default_rng(99)
    bits2 = rng2.integers(0, 2, 3 * n)
    oracle = np.mean(_slicer_bits(_oracle_symbols(bits2) + _awgn(rng2, n, 16)) != bits2)
    assert oracle > 0
    assert abs(ber / oracle - 1) < 0.2


class TestResample:
    def test_same_rate_identity(self, rng):
        w = ComplexWaveform(rng.normal(size=64) + 0j, 10e9)
        assert resample(w, 10e9) is w

    def test_fft_up_down(self, rng):
        n = 256
        spec = np.zeros(n, complex)
        spec[:20] = rng.normal(size=20) + 1j * rng.normal(size=20)
        spec[-19:] = rng.normal(size=19) + 1j * rng.normal(size=19)
        w = ComplexWaveform(np.fft.ifft(spec), 32e9)
        back = resample(resample(w, 64e9, "fft"), 32e9, "fft")
        assert np.sqrt(np.mean(np.abs(back.samples - w.samples) ** 2)) < 1e-6

    @pytest.mark.parametrize("method", ["fft", "cubic"])
    def test_tone_frequency_preserved(self, method):
        n = 1024
        t = np.arange(n) / 32e9
        w = ComplexWaveform(np.exp(2j * np.pi * 1e9 * t), 32e9)
        out = resample(w, 64e9, method)
        f = np.fft.fftfreq(len(out), 1 / 64e9)
        assert f[np.argmax(np.abs(np.fft.fft(out.samples)))] == pytest.approx(1e9, abs=64e9 / len(out))


@given(st.integers(1, 20), st.integers(0, 1000))
def test_fft_round_trip(log_n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=2**log_n) + 1j * rng.normal(size=2**log_n)
    err = np.sqrt(np.mean(np.abs(ifft(fft(x)) - x) ** 2) / np.mean(np.abs(x) ** 2))
    assert err < 1e-12


class TestTypes:
    def test_waveform_rejects_nan(self):
        with pytest.raises(ValueError):
            ComplexWaveform(np.array([np.nan]), 1.0)

    def test_tributaries_share_rate(self):
        a = ComplexWaveform(np.ones(4), 1.0)
        b = ComplexWaveform(np.ones(4), 2.0)
        with pytest.raises(ValueError):
            TributarySet(a, a, a, b)
