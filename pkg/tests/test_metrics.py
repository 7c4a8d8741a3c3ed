import csv
import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cpdm.channel import FiberParams, bookkept_osnr, run_link
from cpdm.metrics import (
    BracketError, LinkReport, SyncResult, count_ber, export_constellation, measure_osnr,
    osnr_margin, osnr_max_achievable, osnr_required, synchronize,
)
from cpdm.signal import JonesSignal, map_8qam
from cpdm.system import SystemConfig, transmit


def _syms(rng, n=4096, m=1):
    return np.vstack([map_8qam(rng.integers(0, 2, 3 * n)).samples for _ in range(m)])


class TestSync:
    def test_identity(self, rng):
        tx = _syms(rng, m=2)
        for k, r in enumerate(synchronize(tx, tx)):
            assert (r.delay, r.rotation, r.conjugated, r.source) == (0, 0, False, k)
            assert r.correlation == pytest.approx(1.0)

    def test_delay_and_rotation(self, rng):
        tx = _syms(rng)
        rx = np.roll(tx, 37, axis=1) * 1j
        (r,) = synchronize(rx, tx)
        assert (r.delay, r.rotation, r.conjugated) == (37, 1, False)
        assert np.allclose(r.apply(rx[0]), tx[0])

    def test_conjugate_and_swap(self, rng):
        tx = _syms(rng, m=2)
        rx = np.conj(tx[::-1])
        res = synchronize(rx, tx)
        assert [r.source for r in res] == [1, 0]
        assert all(r.conjugated and r.ok for r in res)

    def test_random_fails(self, rng):
        (r,) = synchronize(_syms(rng), _syms(rng))
        assert not r.ok

    def test_too_short(self, rng):
        with pytest.raises(ValueError):
            synchronize(_syms(rng, 1024), _syms(rng, 1024))


class TestBer:
    def test_identical(self, rng):
        b = rng.integers(0, 2, 10**5)
        r = count_ber(b, b)
        assert r.ber == 0 and r.upper_bound and r.reported == pytest.approx(1e-5)

    def test_single_flip(self, rng):
        b = rng.integers(0, 2, 10**5)
        c = b.copy()
        c[12345] ^= 1
        r = count_ber(c, b)
        assert r.ber == pytest.approx(1e-5)
        assert r.ci_low <= 1e-5 <= r.ci_high

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            count_ber(np.zeros(3), np.zeros(4))


class TestOsnr:
    def test_spectral_interp_doubling(self):
        rng = np.random.default_rng(3)
        n, rate = 2**14, 16 * 28e9 / 3
        s = map_8qam(rng.integers(0, 2, 3 * n // 16)).samples
        from cpdm.transmitter import pulse_shape

        x = np.vstack([pulse_shape(s, 16, "rrc", 0.2), pulse_shape(s[::-1], 16, "rrc", 0.2)])
        x /= np.sqrt(np.mean(np.abs(x) ** 2))
        noise = (rng.normal(size=x.shape) + 1j * rng.normal(size=x.shape)) * 0.05
        a = measure_osnr(JonesSignal.from_array(x + noise, rate), "spectral_interp", signal_band=6e9)
        b = measure_osnr(JonesSignal.from_array(np.sqrt(2) * x + noise, rate), "spectral_interp", signal_band=6e9)
        assert b - a == pytest.approx(10 * np.log10(2), abs=0.05)

    def test_bookkeeping_unavailable(self):
        sig = JonesSignal.from_array(np.ones((2, 64), complex), 1e9, ase_psd=None)
        with pytest.raises(ValueError):
            measure_osnr(sig)

    @pytest.mark.parametrize("args, expect", [((-3, 4, 16, 10), 25.0), ((-3, 4, 20, 8), 21.97)])
    def test_budget(self, args, expect):
        assert osnr_max_achievable(*args) == pytest.approx(expect, abs=0.005)

    def test_budget_halving_spans(self):
        d = osnr_max_achievable(-3, 4, 16, 5) - osnr_max_achievable(-3, 4, 16, 10)
        assert d == pytest.approx(3.0103, abs=1e-4)

    def test_budget_rejects_zero_spans(self):
        with pytest.raises(ValueError):
            osnr_max_achievable(0, 4, 16, 0)

    @pytest.mark.parametrize("n_spans", [5, 8, 10])
    @pytest.mark.parametrize("p_dbm", [-6.0, -3.0, 0.0])
    def test_simulated_loop_matches_budget(self, n_spans, p_dbm):
        cfg = SystemConfig(n_symbols=4096, sps=16, launch_power_dbm=p_dbm,
                           fiber=replace(FiberParams(), n2=0.0)).with_distance(n_spans)
        tx = transmit(cfg)
        out = run_link(tx.field, cfg.link, cfg.fiber, cfg.amp, seed=1)
        sim = bookkept_osnr(out)
        assert sim == pytest.approx(osnr_max_achievable(p_dbm, cfg.amp.noise_figure_db, 16.0, n_spans), abs=1.5)

    @given(st.floats(-10, 5), st.floats(3, 8), st.floats(10, 25), st.integers(1, 20))
    def test_budget_closed_form(self, p, nf, loss, n):
        assert osnr_max_achievable(p, nf, loss, n) == pytest.approx(58 + p - nf - loss - 10 * np.log10(n))


class TestRequired:
    @staticmethod
    def _waterfall(osnr):
        from scipy.special import erfc

        return 0.5 * erfc(np.sqrt(10 ** ((osnr - 8.0) / 10)))

    def test_monotone_in_target(self):
        a = osnr_required(self._waterfall, 1e-3, tol=0.01).value
        b = osnr_required(self._waterfall, 1e-5, tol=0.01).value
        assert np.isfinite(a) and b > a

    def test_bracket_failure(self):
        with pytest.raises(BracketError):
            osnr_required(lambda x: 1e-2, 1e-4)

    def test_search_records_points(self):
        res = osnr_required(self._waterfall, 1e-4, tol=0.1)
        assert res.monotone and len(res.points) >= 2


class TestReport:
    def test_margin(self):
        assert osnr_margin(25.0, 18.0) == pytest.approx(7.0)
        assert osnr_margin(20.0, 20.0) == 0

    def _report(self, **kw):
        base = dict(launch_power=-3.0, distance=800.0, span_km=80.0, sps_bit=2, ber=1e-4,
                    ber_upper_bound=False, evm=-15.0, q_factor=11.4, osnr_measured=25.0,
                    osnr_required=18.0, osnr_max_achievable=25.0, osnr_margin=7.0, seed=1)
        base.update(kw)
        return LinkReport(**base)

    def test_identity_enforced(self):
        self._report()
        with pytest.raises(ValueError):
            self._report(osnr_margin=6.0)

    def test_ber_range(self):
        with pytest.raises(ValueError):
            self._report(ber=0.6)

    def test_serialization(self):
        r = self._report()
        assert len(r.csv_row()) == len(LinkReport.columns())
        assert json.loads(r.to_json())["osnr_margin"] == 7.0


class TestExport:
    def test_ideal_points(self, tmp_path):
        from cpdm.signal import DEFAULT_CONSTELLATION

        p = tmp_path / "c.csv"
        export_constellation(DEFAULT_CONSTELLATION.points, p)
        rows = list(csv.reader(open(p)))
        assert rows[0] == ["re", "im"]
        assert len({tuple(r) for r in rows[1:]}) == 8

    def test_empty(self, tmp_path):
        p = tmp_path / "e.csv"
        export_constellation(np.array([], complex), p)
        assert open(p).read().strip() == "re,im"
