"""``simulate``: run a scenario sweep from a config file."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError
from .experiment import SCENARIOS, describe_stage, list_presets, run_experiment, validate_config

EXIT_OK, EXIT_CONFIG, EXIT_FAILED_POINT = 0, 2, 3

_COLUMNS = """\
CSV columns, one row per sweep point in axis order:
  <axis>...            the swept values (e.g. launch_power_dbm, distance_km)
  launch_power         launch power, dBm
  distance             link length, km
  span_km              span length, km
  sps_bit              ADC samples per bit (rate = sps_bit x 28 GSa/s)
  ber                  bit error ratio; 1/n when no errors were counted
  ber_upper_bound      true when ber is the 1/n bound
  evm                  decision-directed EVM after carrier recovery, dB
  q_factor             Gaussian-equivalent Q from ber, dB
  osnr_measured        OSNR at the receiver in 0.1 nm, dB
  osnr_required        OSNR reaching the target BER, dB (required-OSNR scenarios)
  osnr_max_achievable  link-budget OSNR, dB
  osnr_margin          osnr_max_achievable - osnr_required, dB
  seed                 point seed derived from the master seed and axis values
  status               ok, or failed: <reason>
  cluster_spread       RMS cluster spread (constellation scenario only)
Unavailable values are nan.  Environment variables CPDM_<KEY>__<SUBKEY>
override config values; command-line flags override both.
"""


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="simulate", description="Simulate the CPDM 8-QAM coherent link over a sweep.",
        epilog=_COLUMNS, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config", nargs="?", help="YAML config file or a run manifest")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), help="scenario to run")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--tap-dir", help="dump intermediate waveforms per point")
    p.add_argument("--list-presets", action="store_true", help="list scenarios and exit")
    p.add_argument("--describe", metavar="STAGE", help="describe a DSP stage and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.list_presets:
        print(list_presets())
        return EXIT_OK
    if args.describe:
        try:
            print(describe_stage(args.describe))
        except KeyError as e:
            print(f"error: {e.args[0]}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG

    over: dict = {}
    if args.seed is not None:
        over["seed"] = args.seed
    exp = {}
    if args.scenario:
        exp["scenario"] = args.scenario
    if args.out:
        exp["output_dir"] = args.out
    if exp:
        over["experiment"] = exp
    try:
        spec = validate_config(args.config, overrides=over)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    man = run_experiment(spec, threads=args.threads, tap_dir=args.tap_dir)
    print(f"{spec.scenario.name}: {len(man.points)} points, {man.failed} failed, "
          f"{man.wall_clock_s:.1f} s -> {spec.output_dir / man.csv}")
    return EXIT_FAILED_POINT if man.failed else EXIT_OK


__all__ = ["EXIT_CONFIG", "EXIT_FAILED_POINT", "EXIT_OK", "build_parser", "main"]


if __name__ == "__main__":
    sys.exit(main())
