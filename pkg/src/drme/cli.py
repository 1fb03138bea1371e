"""Command-line front end.

Subcommands
-----------
test             run the split-sample test on a CSV dataset
simulate         Monte Carlo rejection rates for a named experiment
validate-theory  oracle fixed-location study along the local path
generate         write a simulated dataset as CSV
replay           rerun a manifest and check that every artifact is byte-identical

Every run except ``replay`` writes a JSON manifest next to its artifacts.
Exit codes: 0 success, 2 input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError

from . import __version__
from .data import InputError, read_csv, write_csv
from .dgp import SCENARIOS, LocalPathSpec, gen_scenario
from .experiments import EXPERIMENTS, METHOD_CONFIGS, monte_carlo, validate_theory
from .locations import OBJECTIVES
from .drscore import SCORE_KINDS
from .pipeline import SELECTIONS, TestConfig, run_drme_test

MANIFEST_SCHEMA_VERSION = 1
SEED_ENV = "DRME_SEED"
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        seed = int(raw)
    except ValueError:
        raise InputError(f"{SEED_ENV} must be a nonnegative integer, got {raw!r}") from None
    if seed < 0:
        raise InputError(f"{SEED_ENV} must be a nonnegative integer, got {raw!r}")
    return seed


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _write_manifest(path: Path, subcommand: str, args: dict, config: dict, seed: int,
                    artifacts: list[Path], input_digest: str | None = None) -> Path:
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "subcommand": subcommand,
        "args": args,
        "config": config,
        "seed": seed,
        "input_digest": input_digest,
        "artifacts": {str(p): _sha256_file(p) for p in artifacts},
        "version": __version__,
    }
    return _write(path, _dump_json(manifest))


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    d = TestConfig()
    g = p.add_argument_group("test configuration")
    g.add_argument("--J", type=int, default=d.J, help="number of locations")
    g.add_argument("--M", type=int, default=d.M, help="dictionary size")
    g.add_argument("--tau", type=float, default=None, help="learning ridge (default: scaled trace)")
    g.add_argument("--gamma", type=float, default=None, help="test ridge (default: scaled trace)")
    g.add_argument("--lengthscale", type=float, default=None,
                   help="outcome kernel lengthscale (default: median heuristic)")
    g.add_argument("--covariate-lengthscale", type=float, default=None)
    g.add_argument("--dim-normalized", action=argparse.BooleanOptionalAction, default=None,
                   help="divide squared outcome distances by the outcome dimension")
    g.add_argument("--propensity-ridge", type=float, default=d.propensity_ridge)
    g.add_argument("--clip", type=float, nargs=2, default=list(d.clip), metavar=("LO", "HI"))
    g.add_argument("--outcome-ridge", type=float, nargs=2, default=list(d.outcome_ridge),
                   metavar=("R0", "R1"))
    g.add_argument("--fractions", type=float, nargs=3, default=list(d.fractions),
                   metavar=("ETA", "TR", "TE"))
    g.add_argument("--selection", choices=SELECTIONS, default=d.selection)
    g.add_argument("--objective", choices=OBJECTIVES, default=d.objective)
    g.add_argument("--score-kind", choices=SCORE_KINDS, default=d.score_kind)
    g.add_argument("--gradient-steps", type=int, default=d.gradient_steps)
    g.add_argument("--step-size", type=float, default=None)
    g.add_argument("--alpha", type=float, default=d.alpha)
    g.add_argument("--max-resplits", type=int, default=d.max_resplits)


def _config_from_args(a: argparse.Namespace, seed: int) -> TestConfig:
    if not 0.0 < a.alpha < 1.0:
        raise InputError("alpha must lie in (0, 1)")
    return TestConfig(J=a.J, M=a.M, tau=a.tau, gamma=a.gamma, lengthscale=a.lengthscale,
                      covariate_lengthscale=a.covariate_lengthscale,
                      dim_normalized=a.dim_normalized, propensity_ridge=a.propensity_ridge,
                      clip=tuple(a.clip), outcome_ridge=tuple(a.outcome_ridge),
                      fractions=tuple(a.fractions), selection=a.selection,
                      objective=a.objective, score_kind=a.score_kind,
                      gradient_steps=a.gradient_steps, step_size=a.step_size,
                      alpha=a.alpha, max_resplits=a.max_resplits, seed=seed)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def cmd_test(a: argparse.Namespace, out=sys.stdout) -> int:
    seed = a.seed
    config = _config_from_args(a, seed)
    data = read_csv(a.data)
    result = run_drme_test(data, config)
    out_path = Path(a.out)
    _write(out_path, _dump_json(_jsonable(result.to_dict())))
    resolved = config.to_dict()
    resolved.update(tau=result.tau, gamma=result.gamma, lengthscale=result.lengthscale)
    manifest = Path(a.manifest) if a.manifest else out_path.with_suffix(".manifest.json")
    _write_manifest(manifest, "test", _replay_args(a), _jsonable(resolved), seed, [out_path],
                    input_digest=_sha256_file(a.data))
    decision = "reject" if result.reject(config.alpha) else "do not reject"
    print(f"statistic  {result.statistic:.6g}", file=out)
    print(f"df         {result.df}", file=out)
    print(f"p-value    {result.p_value:.6g}", file=out)
    print(f"decision   {decision} at alpha={config.alpha:g}", file=out)
    print(f"n_test     {result.n_test}", file=out)
    print("locations (outcome-space coordinates):", file=out)
    for j, v in enumerate(np.asarray(result.locations)):
        print(f"  v{j + 1} = (" + ", ".join(f"{x:.6g}" for x in np.atleast_1d(v)) + ")",
              file=out)
    print(f"wrote {out_path} and {manifest}", file=out)
    return EXIT_OK


def _report_artifacts(report, out_dir: Path, stem: str) -> list[Path]:
    return [_write(out_dir / f"{stem}.csv", report.to_csv()),
            _write(out_dir / f"{stem}.json", _dump_json(_jsonable(report.to_dict()))),
            _write(out_dir / f"{stem}_plot.csv", report.plot_data())]


def cmd_simulate(a: argparse.Namespace, out=sys.stdout) -> int:
    if a.experiment not in EXPERIMENTS:
        raise InputError(f"unknown experiment {a.experiment!r}; choose from "
                         f"{', '.join(sorted(EXPERIMENTS))}")
    if a.reps < 1:
        raise InputError("reps must be at least 1")
    methods = a.methods or list(EXPERIMENTS[a.experiment].methods)
    bad = [m for m in methods if m not in METHOD_CONFIGS]
    if bad:
        raise InputError(f"unknown methods {bad}; choose from {', '.join(METHOD_CONFIGS)}")
    config = {}
    for key in ("J", "M", "tau", "lengthscale"):
        val = getattr(a, key)
        if val is not None:
            config[key] = val
    report = monte_carlo(a.experiment, methods=methods, n_grid=a.n, reps=a.reps,
                         alpha=a.alpha, base_seed=a.seed, d_y=a.dy, config=config,
                         workers=a.workers)
    out_dir = Path(a.out)
    stem = a.experiment if not EXPERIMENTS[a.experiment].vector else f"{a.experiment}_dy{a.dy}"
    arts = _report_artifacts(report, out_dir, stem)
    _write_manifest(out_dir / f"{stem}.manifest.json", "simulate", _replay_args(a),
                    _jsonable(report.meta), a.seed, arts)
    out.write(report.to_csv())
    return EXIT_OK


def cmd_validate_theory(a: argparse.Namespace, out=sys.stdout) -> int:
    if a.reps < 1:
        raise InputError("reps must be at least 1")
    spec = LocalPathSpec() if a.reference_spec else None
    report = validate_theory(reps=a.reps, n_grid=a.n, h_grid=a.h, alpha=a.alpha,
                             base_seed=a.seed, n_pilot=a.n_pilot, M=a.M, J=a.J, spec=spec,
                             workers=a.workers)
    out_dir = Path(a.out)
    arts = _report_artifacts(report, out_dir, "local_path")
    _write_manifest(out_dir / "local_path.manifest.json", "validate-theory", _replay_args(a),
                    _jsonable(report.meta["spec"]), a.seed, arts)
    print("n,h,empirical,theory,se", file=out)
    for r in report.rows:
        print(f"{r['n']},{r['h']:g},{r['rate']:.4f},{r['theory']:.4f},{r['se']:.4f}", file=out)
    print(f"KS distance at h=0: {report.meta['ks_null']}", file=out)
    return EXIT_OK


def cmd_generate(a: argparse.Namespace, out=sys.stdout) -> int:
    if a.n < 1:
        raise InputError("n must be positive")
    sim = gen_scenario(a.scenario, a.n, np.random.default_rng(a.seed), d_y=a.dy, h=a.h)
    path = Path(a.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(sim.data, path)
    _write_manifest(path.with_suffix(".manifest.json"), "generate", _replay_args(a),
                    {"scenario": a.scenario, "n": a.n, "d_y": a.dy, "h": a.h}, a.seed, [path])
    print(f"wrote {path}", file=out)
    return EXIT_OK


def cmd_replay(a: argparse.Namespace, out=sys.stdout) -> int:
    try:
        manifest = json.loads(Path(a.manifest).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read manifest {a.manifest}: {exc}") from None
    argv = manifest.get("args")
    if not isinstance(argv, list):
        raise InputError("manifest has no replayable argument list")
    expected = manifest.get("artifacts", {})
    if manifest.get("input_digest") is not None and "--data" in argv:
        data_path = argv[argv.index("--data") + 1]
        if _sha256_file(data_path) != manifest["input_digest"]:
            raise InputError(f"input {data_path} does not match the recorded digest")
    code = main(argv, out=out)
    if code != EXIT_OK:
        return code
    mismatched = [p for p, digest in expected.items() if _sha256_file(p) != digest]
    if mismatched:
        print("replay differs for: " + ", ".join(mismatched), file=out)
        return 1
    print(f"replay reproduced {len(expected)} artifact(s) byte-identically", file=out)
    return EXIT_OK


def _replay_args(a: argparse.Namespace) -> list[str]:
    """Canonical argument list that reruns this invocation with every value explicit."""
    argv = [a.command]
    positional = {"simulate": "experiment", "generate": "scenario"}.get(a.command)
    if positional:
        argv.append(str(getattr(a, positional)))
    for key, val in sorted(vars(a).items()):
        if key in ("command", "func", positional) or val is None:
            continue
        flag = "--" + key.replace("_", "-")
        if isinstance(val, bool):
            if key == "dim_normalized":
                argv.append(flag if val else "--no-dim-normalized")
            elif val:
                argv.append(flag)
        elif isinstance(val, list):
            if key in ("n", "h", "methods"):
                argv += [flag, ",".join(str(v) for v in val)]
            else:
                argv += [flag] + [repr(v) for v in val]
        else:
            argv += [flag, repr(val) if isinstance(val, float) else str(val)]
    return argv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drme", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="run the split-sample test on a CSV dataset")
    p.add_argument("--data", required=True, help="CSV with header x_1..x_dx,a,y_1..y_dy")
    p.add_argument("--out", default="drme_result.json", help="result JSON path")
    p.add_argument("--manifest", default=None, help="manifest path (default: next to --out)")
    p.add_argument("--seed", type=int, default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("simulate", help="Monte Carlo rejection rates for an experiment")
    p.add_argument("experiment", help=", ".join(sorted(EXPERIMENTS)))
    p.add_argument("--n", type=_int_list, default=None, help="comma-separated sample sizes")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--methods", type=_str_list, default=None,
                   help=", ".join(METHOD_CONFIGS))
    p.add_argument("--dy", type=int, default=5, help="outcome dimension (two-bump designs)")
    p.add_argument("--J", type=int, default=None)
    p.add_argument("--M", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--lengthscale", type=float, default=None)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="drme_out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate-theory", help="oracle local-path study against theory")
    p.add_argument("--reps", type=int, default=2000)
    p.add_argument("--n", type=_int_list, default=[3000])
    p.add_argument("--h", type=_float_list, default=[0.0, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0])
    p.add_argument("--n-pilot", type=int, default=100_000)
    p.add_argument("--M", type=int, default=100)
    p.add_argument("--J", type=int, default=2)
    p.add_argument("--reference-spec", action="store_true",
                   help="use the frozen reference locations instead of running a pilot")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="drme_out")
    p.set_defaults(func=cmd_validate_theory)

    p = sub.add_parser("generate", help="write a simulated dataset as CSV")
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dy", type=int, default=5)
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("replay", help="rerun a manifest and verify its artifacts")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None, out=sys.stdout) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if hasattr(args, "seed") and args.seed is None:
            args.seed = _default_seed()
        if getattr(args, "workers", 1) < 1:
            raise InputError("workers must be at least 1")
        return args.func(args, out=out)
    except (InputError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, ArithmeticError, LinAlgError, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
