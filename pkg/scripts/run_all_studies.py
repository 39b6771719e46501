#!/usr/bin/env python3
"""Run every bundled study config through the CLI, one output directory per
study, and print a one-line summary each.

Usage: python scripts/run_all_studies.py [OUT_DIR] [--quick]

--quick shrinks trajectory counts so the whole sweep finishes in a couple
of minutes; the full versions reproduce the acceptance-scale numbers.
"""

import json
import sys
import time
from pathlib import Path

from stomax.cli import run

HERE = Path(__file__).resolve().parent
CONFIGS = HERE.parent / "configs"

QUICK_OVERRIDES = {
    "convergence_dt": {"monte_carlo": {"trajectories": 24}},
    "convergence_h": {"monte_carlo": {"trajectories": 16}},
    "ergodicity": {"monte_carlo": {"trajectories": 40}},
    "energy_law": {"monte_carlo": {"trajectories": 3}, "study": {"n_steps": 50}},
    "simulate": {"study": {"n_steps": 50}},
}


def main(argv):
    out_root = Path(argv[1]) if len(argv) > 1 and not argv[1].startswith("-") else Path("study_out")
    quick = "--quick" in argv
    out_root.mkdir(parents=True, exist_ok=True)
    failures = 0
    for cfg_path in sorted(CONFIGS.glob("*.toml")):
        name = cfg_path.stem
        out_dir = out_root / name
        effective = cfg_path
        if quick and name in QUICK_OVERRIDES:
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            config = tomllib.loads(cfg_path.read_text())
            for table, fields in QUICK_OVERRIDES[name].items():
                config.setdefault(table, {}).update(fields)
            effective = out_dir / "quick_config.json"
            out_dir.mkdir(parents=True, exist_ok=True)
            effective.write_text(json.dumps(config))
        t0 = time.perf_counter()
        code = run(effective, out_dir)
        elapsed = time.perf_counter() - t0
        report = json.loads((out_dir / "report.json").read_text())
        summary = {k: report[k] for k in ("slope", "r2", "passed", "worst_ratio")
                   if k in report}
        print(f"{name:>16}: exit {code} in {elapsed:6.1f}s {summary}")
        failures += code != 0
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
