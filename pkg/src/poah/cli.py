"""Command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 usage/config error,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .ledger import LedgerLoadError, parse_ledger, verify_chain
from .identity import Registry
from .powbaseline import PowBaselineConfig, run_baseline
from .scenario import Scenario, ScenarioError
from .simnet import InvariantViolation, Simulation, locate_tampering

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_INVARIANT = 3


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_run(args) -> int:
    try:
        scenario = Scenario.load(args.scenario)
        scenario = scenario.with_overrides(seed=getattr(args, "seed", None))
    except ScenarioError as exc:
        for field_name, message in exc.errors:
            _err(f"config error: {field_name}: {message}")
        return EXIT_USAGE
    out = Path(getattr(args, "out", None) or scenario.out_dir)

    try:
        report = Simulation(scenario).run()
    except InvariantViolation as exc:
        _err(f"invariant violation: {exc}")
        return EXIT_INVARIANT
    report.write(out)

    summary = report.summary()
    print(f"seed {scenario.seed}: proposed {summary['proposed']} blocks, "
          f"accepted {summary['accepted_min']}..{summary['accepted_max']} per node")
    print(f"adversarial injected {summary['injected']}, dropped {summary['injected_dropped']}, "
          f"accepted {summary['forged_accepted']}; fake authentications {summary['fake_authentications']}")
    if summary["mean_dt_tx_ms"] is not None:
        print(f"mean dt_tx {summary['mean_dt_tx_ms']:.1f} ms")
    print(f"outputs written to {out}")

    problems = report.invariant_violations()
    if problems:
        for p in problems:
            _err(f"invariant violation: {p}")
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_pow_baseline(args) -> int:
    try:
        config = PowBaselineConfig(args.difficulty_bits, args.trials)
    except ValueError as exc:
        _err(f"config error: {exc}")
        return EXIT_USAGE
    report = run_baseline(config, seed=getattr(args, "seed", None) or 0)
    data = report.to_dict()

    out = getattr(args, "out", None)
    if out:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "pow_baseline.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        with open(out / "pow_baseline.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial", "attempts", "pow_s", "poah_s"])
            for i, row in enumerate(zip(report.attempts, report.pow_seconds, report.poah_seconds)):
                w.writerow([i, row[0], f"{row[1]:.6f}", f"{row[2]:.6f}"])

    print(f"difficulty {config.difficulty_bits} bits, {config.trials} trials")
    print(f"mean nonce attempts {data['mean_attempts']:.0f} (expected {data['expected_attempts']})")
    print(f"mean PoW time {data['mean_pow_s'] * 1e3:.3f} ms, mean PoAh time {data['mean_poah_s'] * 1e3:.3f} ms")
    print(f"ratio PoW/PoAh {data['ratio_pow_over_poah']:.1f}")
    return EXIT_OK


def _find_metadata(ledger: Path, explicit: Optional[str]) -> Optional[Path]:
    if explicit:
        return Path(explicit)
    for directory in (ledger.parent, ledger.parent.parent):
        candidate = directory / "metadata.json"
        if candidate.is_file():
            return candidate
    return None


def cmd_verify(args) -> int:
    path = Path(args.ledger)
    try:
        data = path.read_bytes()
    except OSError as exc:
        _err(f"cannot read {path}: {exc.strerror}")
        return EXIT_USAGE
    if not data:
        _err(f"{path} is empty")
        return EXIT_USAGE
    meta_path = _find_metadata(path, args.metadata)
    try:
        registry = Registry.from_dict(json.loads(meta_path.read_text())["registry"])
    except (AttributeError, OSError, ValueError, KeyError) as exc:
        _err(f"cannot load registry metadata ({meta_path}): {exc}")
        return EXIT_USAGE

    try:
        chain = parse_ledger(data)
    except LedgerLoadError as exc:
        print(f"load error: {exc}")
        print(f"first-bad-index: {locate_tampering(data, registry)}")
        return EXIT_VERIFY_FAILED
    bad = verify_chain(chain, registry)
    if bad is not None:
        print(f"first-bad-index: {bad}")
        return EXIT_VERIFY_FAILED
    print(f"valid: {len(chain)} blocks")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--seed", type=int, metavar="N", default=argparse.SUPPRESS, help="override the seed")

    parser = argparse.ArgumentParser(prog="poah", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="execute a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("pow-baseline", parents=[common], help="compare toy PoW mining with PoAh authentication")
    p.add_argument("--difficulty-bits", type=int, default=20)
    p.add_argument("--trials", type=int, default=10)
    p.set_defaults(func=cmd_pow_baseline)

    p = sub.add_parser("verify", parents=[common], help="audit a ledger file")
    p.add_argument("ledger")
    p.add_argument("--metadata", help="metadata.json holding the registry (default: next to the ledger)")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
