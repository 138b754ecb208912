"""tbrd-sim: run one scenario and write metrics, trajectories and verdicts."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .. import odid
from .scenarios import ScenarioError, SuiteResult, list_scenarios, load_scenario, run_attack_suite
from .swarm import SwarmResult


def write_outputs(result: SuiteResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(result.metrics(), indent=2, sort_keys=True) + "\n")
    with (out / "verdicts.jsonl").open("w") as fh:
        for r in sorted(result.records, key=lambda r: r.verdict.msg_id):
            fh.write(r.to_json() + "\n")
    with (out / "trajectories.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        if result.swarm is not None:
            _swarm_rows(w, result.swarm)
        else:
            w.writerow(["uas_id", "interval", "t_ms", "lat_deg", "lon_deg", "alt_m"])
            for e in result.tx.sent():
                loc = odid.decode_pack(e.pack).location
                w.writerow([odid.decode_pack(e.pack).basic.uas_id, e.interval, e.t_ms,
                            f"{loc.lat_deg:.7f}", f"{loc.lon_deg:.7f}", loc.alt_m])


def _swarm_rows(w, swarm: SwarmResult) -> None:
    w.writerow(["run", "agent", "step", "x_m", "y_m"])
    runs = [("attack" if swarm.attack else "baseline", swarm)]
    if swarm.baseline is not None:
        runs.append(("baseline", swarm.baseline))
    for label, res in runs:
        for agent, path in res.paths.items():
            for step, (x, y) in enumerate(path):
                w.writerow([label, agent, step, f"{x:.6f}", f"{y:.6f}"])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="tbrd-sim", description=__doc__)
    ap.add_argument("--scenario", help="shipped scenario id or path to a scenario JSON file")
    ap.add_argument("--seed", type=int, default=0, help="64-bit unsigned seed")
    ap.add_argument("--out", type=Path, help="output directory")
    ap.add_argument("--list", action="store_true", help="list shipped scenarios and exit")
    args = ap.parse_args(argv)
    if args.list:
        print("\n".join(list_scenarios()))
        return 0
    if not args.scenario or not args.out:
        ap.error("--scenario and --out are required")
    if not 0 <= args.seed < 2**64:
        ap.error("--seed must be an unsigned 64-bit integer")
    try:
        result = run_attack_suite(load_scenario(args.scenario), args.seed)
    except ScenarioError as exc:
        print(f"tbrd-sim: {exc}", file=sys.stderr)
        return 2
    write_outputs(result, args.out)
    m = result.metrics()
    print(f"{result.scenario.id} seed={args.seed}: {len(result.records)} verdicts, "
          f"{m['forged_authentic']} forged accepted; outputs in {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
