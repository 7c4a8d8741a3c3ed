import json
from dataclasses import replace

import numpy as np
import pytest

from cpdm.dsp.chain import STAGES, BesselConfig, DbpConfig, DspConfig, ResampleConfig
from cpdm.system import SystemConfig, dbp_at_launch, evaluate, noiseless_link, propagate, simulate, transmit
from cpdm.transmitter import LaserParams

QUIET = LaserParams(linewidth=0.0)


def _b2b(**kw) -> SystemConfig:
    cfg = SystemConfig(n_symbols=2**14, tx_laser=QUIET, lo_laser=replace(QUIET, power_dbm=10.0),
                       receiver_noise=False, **kw)
    return noiseless_link(cfg.with_distance(0))


@pytest.fixture(scope="module")
def b2b_run():
    return simulate(_b2b())


def test_back_to_back_error_free(b2b_run):
    assert b2b_run.ber.compared >= 10**5
    assert b2b_run.ber.errors == 0


def test_stage_report_has_every_stage(b2b_run, tmp_path):
    rep = b2b_run.chain.report
    assert len(rep) == 8
    assert [e.stage for e in rep.entries] == list(STAGES)
    assert rep["nlc"].enabled is False
    assert json.loads(rep.to_json())[-1]["metrics"]["evm_db"] < -25


def test_taps_written(tmp_path):
    cfg = _b2b()
    simulate(replace(cfg, n_symbols=4096), tap_dir=tmp_path)
    names = {p.name.split("_ch")[0] for p in tmp_path.glob("stage*_ch0.bin")}
    assert {"stage1_bessel", "stage2_resample", "stage8_carrier"} <= names
    assert (tmp_path / "stage_report.json").exists()


def test_deterministic():
    cfg = replace(_b2b(), n_symbols=4096, tx_laser=LaserParams(), receiver_noise=True)
    a = simulate(cfg, osnr_db=14.0)
    b = simulate(cfg, osnr_db=14.0)
    assert a.ber.errors == b.ber.errors
    np.testing.assert_array_equal(a.chain.as_array(), b.chain.as_array())


def test_seed_changes_realization():
    cfg = replace(_b2b(), n_symbols=4096)
    a = simulate(cfg, osnr_db=12.0)
    b = simulate(replace(cfg, seed=1), osnr_db=12.0)
    assert not np.array_equal(a.chain.as_array(), b.chain.as_array())


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        SystemConfig(n_symbols=5000)
    with pytest.raises(ValueError):
        ResampleConfig(sps=4)
    with pytest.raises(ValueError):
        DbpConfig(xi_nl=2.0)
    assert DspConfig.from_dict({"bessel": {"order": 5}}).bessel == BesselConfig(order=5)
    with pytest.raises(ValueError):
        DspConfig.from_dict({"nope": {}})


@pytest.mark.slow
def test_dbp_not_worse_on_full_link():
    # paired comparison on one propagated field and one ASE realization
    cfg = dbp_at_launch(noiseless_link(SystemConfig(n_symbols=2**14)))
    tx = transmit(cfg)
    rx = propagate(cfg, tx.field)
    on = replace(cfg, dsp=replace(cfg.dsp, dbp=replace(cfg.dsp.dbp, enable=True)))
    cd = evaluate(cfg, tx, rx, 17.0)
    nl = evaluate(on, tx, rx, 17.0)
    assert nl.chain.report["nlc"].enabled and not cd.chain.report["nlc"].enabled
    assert nl.ber.errors <= cd.ber.errors
