"""Experiment runner: declarative configs in, CSV/JSON artifacts out.

Configs are TOML (JSON accepted with the same schema).  Reruns with the
same config and seed produce byte-identical CSV bodies; only the manifest
carries timestamps.

Config schema::

    [problem]
    box = [x_l, x_r, y_l, y_r, z_l, z_r]
    sigma0 = 1.0
    lambda1 = 0.0
    lambda2 = [1.0, 0.0, 0.0]
    trunc_b = 4.0

    [problem.q1]            # and [problem.q2]
    per_axis = 5            # default spectrum (m1^2+m2^2+m3^2)^-decay_r
    decay_r = 3.0
    trace = 1.0             # optional rescaling of sum(eta)
    # or an explicit spectrum:
    # modes = [[4,4,1], [4,1,4]]
    # eigenvalues = [0.9, 0.1]

    [discretization]
    kind = "fd"             # or "dg"
    cells = [8, 8, 8]

    [stepper]
    dt = 0.02
    solver = "fixed_point"
    tol = 1e-10
    max_iter = 200

    [study]
    kind = "simulate"       # one of the subcommand names
    n_steps = 100
    # study-specific fields, see _run_study

    [monte_carlo]
    trajectories = 10
    seed = 1234

    [output]
    formats = ["csv", "json"]
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .dg import DgOperator, build_mesh
from .errors import ParameterError, SolverError, StepError
from .fd import FdOperator, StaggeredGrid
from .model import Box, NoiseSpec, ProblemSpec, SigmaField, validate
from .stepper import StepperConfig, run_trajectory
from . import studies

STUDIES = (
    "simulate",
    "convergence-dt",
    "convergence-h",
    "ergodicity",
    "energy-law",
    "msymp-check",
    "operator-check",
)


class ConfigError(ValueError):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


def _load_config(path: Path) -> dict:
    text = path.read_bytes()
    if path.suffix == ".json":
        return json.loads(text)
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        return tomllib.loads(text.decode())
    except Exception as err:
        raise ConfigError(f"config parse error in {path}: {err}") from err


def _require(table: dict, field: str, where: str):
    if field not in table:
        raise ConfigError(f"missing required field '{where}.{field}'", field=f"{where}.{field}")
    return table[field]


def _noise_spec(box: Box, table: dict, where: str) -> NoiseSpec:
    if "modes" in table or "eigenvalues" in table:
        modes = np.asarray(_require(table, "modes", where), dtype=int)
        eigs = np.asarray(_require(table, "eigenvalues", where), dtype=float)
        return NoiseSpec(box=box, modes=modes, eigenvalues=eigs)
    return NoiseSpec.default(
        box,
        per_axis=int(table.get("per_axis", 5)),
        decay_r=float(table.get("decay_r", 3.0)),
        trace=table.get("trace"),
    )


def build_problem(config: dict) -> ProblemSpec:
    prob = _require(config, "problem", "config")
    box_vals = _require(prob, "box", "problem")
    if len(box_vals) != 6:
        raise ConfigError("problem.box must have 6 entries", field="problem.box")
    box = Box(*[float(v) for v in box_vals])
    sigma = SigmaField.constant(float(_require(prob, "sigma0", "problem")))
    spec = ProblemSpec(
        box=box,
        sigma=sigma,
        lambda1=float(prob.get("lambda1", 0.0)),
        lambda2=[float(v) for v in prob.get("lambda2", (0.0, 0.0, 0.0))],
        q1=_noise_spec(box, prob.get("q1", {}), "problem.q1"),
        q2=_noise_spec(box, prob.get("q2", {}), "problem.q2"),
        trunc_b=float(prob.get("trunc_b", 4.0)),
    )
    problems = validate(spec)
    if problems:
        raise ConfigError("invalid problem spec: " + "; ".join(problems))
    return spec


def _build_operator(spec: ProblemSpec, config: dict):
    disc = config.get("discretization", {})
    kind = disc.get("kind", "fd")
    cells = [int(c) for c in disc.get("cells", (8, 8, 8))]
    if kind == "fd":
        return FdOperator(StaggeredGrid.build(spec.box, tuple(cells), spec.sigma))
    if kind == "dg":
        if not spec.sigma.is_constant:
            raise ConfigError("the dG discretization requires constant sigma")
        return DgOperator(build_mesh(spec.box, *cells), spec.sigma0)
    raise ConfigError(f"unknown discretization kind {kind!r}", field="discretization.kind")


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not serializable: {type(obj)}")


def _write_manifest(out_dir: Path, config: dict, seed: int, status: str) -> None:
    canonical = json.dumps(config, sort_keys=True, default=_json_default)
    manifest = {
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": seed,
        "package_version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "status": status,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _run_simulate(spec, config, out_dir, threads, seed):
    op = _build_operator(spec, config)
    st = config.get("stepper", {})
    cfg = StepperConfig(
        dt=float(_require(st, "dt", "stepper")),
        solver=st.get("solver", "fixed_point"),
        tol=float(st.get("tol", 1e-10)),
        max_iter=int(st.get("max_iter", 200)),
    )
    study = config.get("study", {})
    n_steps = int(_require(study, "n_steps", "study"))
    initial = study.get("initial", "sine")
    mc = config.get("monte_carlo", {})
    n_traj = int(mc.get("trajectories", 1))

    def one(k: int):
        return run_trajectory(spec, op, cfg, n_steps, seed + k, initial=initial)

    if threads > 1 and n_traj > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n_traj)))
    else:
        results = [one(k) for k in range(n_traj)]

    header = ["trajectory"] + results[0].column_names()
    rows = []
    for k, stats in enumerate(results):
        for row in stats.rows():
            rows.append([k] + row)
    _write_csv(out_dir / "stats.csv", header, rows)
    report = {
        "study": "simulate",
        "trajectories": n_traj,
        "n_steps": n_steps,
        "final_norm2_mean": float(np.mean([s.norm2[-1] for s in results])),
    }
    return report


def _run_study(name, spec, config, out_dir, threads, seed):
    if name == "simulate":
        return _run_simulate(spec, config, out_dir, threads, seed)

    study = config.get("study", {})
    st = config.get("stepper", {})
    mc = config.get("monte_carlo", {})
    disc = config.get("discretization", {})
    cells = tuple(int(c) for c in disc.get("cells", (8, 8, 8)))
    tol = float(st.get("tol", 1e-10))

    if name == "convergence-dt":
        ks = [int(k) for k in _require(study, "k_ladder", "study")]
        report = studies.temporal_order_study(
            spec,
            counts=cells,
            horizon=float(study.get("horizon", 1.0)),
            k_coarse=ks,
            k_ref=int(study.get("k_ref", 12)),
            n_traj=int(mc.get("trajectories", 200)),
            seed=seed,
            tol=tol,
            initial=study.get("initial", "zero"),
        )
        _write_csv(out_dir / "orders.csv", ["dt", "ms_error"],
                   zip(report["dts"], report["errors"]))
    elif name == "convergence-h":
        report = studies.spatial_order_study(
            spec,
            nx_ladder=[int(v) for v in _require(study, "nx_ladder", "study")],
            nx_ref=int(study.get("nx_ref", 10)),
            dt=float(_require(st, "dt", "stepper")),
            n_steps=int(study.get("n_steps", 256)),
            n_traj=int(mc.get("trajectories", 100)),
            seed=seed,
            tol=tol,
        )
        _write_csv(out_dir / "orders.csv", ["h", "ms_error"],
                   zip(report["hs"], report["errors"]))
    elif name == "ergodicity":
        report = studies.ergodicity_study(
            spec,
            counts=cells,
            dt=float(_require(st, "dt", "stepper")),
            times=tuple(float(t) for t in study.get("times", (1.0, 3.0, 6.0))),
            n_traj=int(mc.get("trajectories", 200)),
            seed=seed,
            amplitude=float(study.get("amplitude", 10.0)),
            tol=tol,
        )
    elif name == "energy-law":
        report = studies.energy_law_study(
            spec,
            counts=cells,
            dt=float(_require(st, "dt", "stepper")),
            n_steps=int(study.get("n_steps", 200)),
            n_traj=int(mc.get("trajectories", 10)),
            seed=seed,
            tol=tol,
        )
        rows = [[i, (i + 1) * report["dt"], r] for i, r in enumerate(report.pop("max_residuals"))]
        _write_csv(out_dir / "stats.csv", ["step", "t", "energy_residual"], rows)
    elif name == "msymp-check":
        report = studies.msymp_study(
            spec,
            counts=cells,
            dt=float(_require(st, "dt", "stepper")),
            n_steps=int(study.get("n_steps", 100)),
            n_pairs=int(mc.get("trajectories", 5)),
            seed=seed,
            tol=tol,
        )
        rows = [[i, (i + 1) * report["dt"], r] for i, r in enumerate(report.pop("max_residuals"))]
        _write_csv(out_dir / "stats.csv", ["step", "t", "max_msymp_residual"], rows)
    elif name == "operator-check":
        report = {
            "structure": studies.operator_structure_check(
                spec, n_pairs=int(mc.get("trajectories", 1000)), seed=seed
            ),
            "resolvent": studies.resolvent_contraction_check(spec, counts=cells, seed=seed),
            "truncation": studies.truncation_moment_check(b=spec.trunc_b),
        }
        report["passed"] = all(v["passed"] for v in report.values())
    else:
        raise ConfigError(f"unknown study kind {name!r}", field="study.kind")
    report["study"] = name
    return report


def run(config_path, out_dir, threads: int = 1, seed_override: int | None = None) -> int:
    """Execute one study; returns the process exit code."""
    config_path = Path(config_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        config = _load_config(config_path)
        study = _require(config, "study", "config")
        name = _require(study, "kind", "study")
        if name not in STUDIES:
            raise ConfigError(f"unknown study kind {name!r}", field="study.kind")
        seed = int(seed_override if seed_override is not None
                   else config.get("monte_carlo", {}).get("seed", 0))
        spec = build_problem(config)
    except ConfigError as err:
        record = {"status": "config-error", "error": str(err), "field": err.field}
        (out_dir / "report.json").write_text(json.dumps(record, indent=2))
        print(f"error: {err}", file=sys.stderr)
        return 2

    try:
        report = _run_study(name, spec, config, out_dir, threads, seed)
    except (SolverError, StepError, ParameterError) as err:
        record = {"status": "numerical-error", "error": str(err),
                  "error_type": type(err).__name__}
        (out_dir / "report.json").write_text(json.dumps(record, indent=2))
        _write_manifest(out_dir, config, seed, "failed")
        print(f"error: {err}", file=sys.stderr)
        return 1

    report["status"] = "ok"
    (out_dir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True, default=_json_default)
    )
    _write_manifest(out_dir, config, seed, "ok")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="stomax",
        description="Stress tests for ergodic discretizations of damped stochastic "
                    "Maxwell equations",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STUDIES:
        p = sub.add_parser(name, help=f"run the {name} study")
        p.add_argument("--config", required=True, help="TOML or JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seed", type=int, default=None,
                       help="override monte_carlo.seed from the config")
    args = parser.parse_args(argv)

    config = Path(args.config)
    if not config.exists():
        print(f"error: config file {config} not found", file=sys.stderr)
        return 2
    try:
        loaded = _load_config(config)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    loaded.setdefault("study", {})["kind"] = args.command
    tmp = Path(args.out)
    tmp.mkdir(parents=True, exist_ok=True)
    merged = tmp / "_effective_config.json"
    merged.write_text(json.dumps(loaded, indent=2, default=_json_default))
    return run(merged, args.out, threads=args.threads, seed_override=args.seed)


if __name__ == "__main__":
    sys.exit(main())
