"""Command-line front end.

Exit codes: 0 success, 2 usage or validation error, 3 non-identifiable
estimate, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    BENCHMARK_T,
    ModelSpec,
    check_stochastic,
    cyclic_permutation,
    move_to_next,
)
from .data import (
    EnsembleDataset,
    TrajectoryDataset,
    generate_multitraj,
    read_dataset,
    read_matrix_csv,
    write_dataset,
    write_matrix_csv,
)
from .dynamics import analysis_report, detect_synchronization, predicts_synchronization
from .errors import (
    EnumerationTooLarge,
    LipcaError,
    NoConvergence,
    NotErgodic,
    NotPrimitive,
    NotRepresentable,
)
from .experiments import CONFIGS, default_output_dir, load_config, parse_init, run_experiment
from .inference import (
    assemble_ensemble,
    assemble_multitraj,
    assemble_singletraj,
    identifiability_report,
    sample_size_bound,
    solve_constrained,
)

EXIT_OK, EXIT_USAGE, EXIT_NONIDENT, EXIT_NUMERIC = 0, 2, 3, 4
_NUMERIC = (NoConvergence, NotRepresentable, NotErgodic, NotPrimitive, EnumerationTooLarge, np.linalg.LinAlgError)
_NAMED_T = {"permutation": cyclic_permutation, "move-to-next": move_to_next}


class UsageError(Exception):
    pass


def parse_spec(text: str) -> ModelSpec:
    parts = text.replace(";", ",").split(",")
    if len(parts) != 3:
        raise UsageError("--spec expects N,K,n_v")
    try:
        N, K, n_v = (int(p) for p in parts)
    except ValueError:
        raise UsageError("--spec expects three integers N,K,n_v") from None
    return ModelSpec(K=K, N=N, n_v=n_v)


def load_T(value: str, K: int) -> np.ndarray:
    """A CSV matrix file, or one of ``permutation``, ``move-to-next``, ``benchmark``."""
    if value == "benchmark":
        T = BENCHMARK_T.copy()
    elif value in _NAMED_T:
        T = _NAMED_T[value](K)
    else:
        if not Path(value).exists():
            raise UsageError(f"no such matrix file: {value}")
        T = read_matrix_csv(value)
    return check_stochastic(T, K)


def _emit(obj, path=None) -> None:
    text = json.dumps(obj, indent=2, default=_default)
    if path:
        Path(path).write_text(text + "\n")
    print(text)


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    spec = parse_spec(args.spec)
    T = load_T(args.T, spec.K)
    init = parse_init(args.init, spec.K)
    data = generate_multitraj(spec, T, init, args.M, args.L, seed=args.seed)
    out = Path(args.out) if args.out else default_output_dir() / "trajectories.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, data, format=args.format)
    t0 = [detect_synchronization(tr) for tr in data.states]
    synced = [t for t in t0 if t is not None]
    _emit({
        "spec": {"N": spec.N, "K": spec.K, "n_v": spec.n_v},
        "M": data.M,
        "L": data.L,
        "seed": args.seed,
        "out": str(out),
        "predicts_sync": predicts_synchronization(T),
        "synchronized": len(synced),
        "t0": t0[0] if data.M == 1 else t0,
        "t0_max": max(synced) if synced else None,
    })
    return EXIT_OK


def cmd_analyze(args) -> int:
    spec = parse_spec(args.spec)
    T = load_T(args.T, spec.K)
    rep = analysis_report(spec, T, include_global=args.include_global, include_stationary=args.stationary, t_max=args.t_max)
    _emit(rep, args.report)
    return EXIT_OK


def _as_ensemble(data: TrajectoryDataset) -> EnsembleDataset:
    return EnsembleDataset(data.spec, [data.states[:, t].copy() for t in range(data.L + 1)], data.seed, data.T_hash)


def cmd_infer(args) -> int:
    data = read_dataset(args.data)
    if args.regime == "ensemble":
        system = assemble_ensemble(data if isinstance(data, EnsembleDataset) else _as_ensemble(data))
    elif not isinstance(data, TrajectoryDataset):
        raise UsageError(f"regime {args.regime!r} needs linked trajectories, got ensemble data")
    elif args.regime == "single":
        if not 0 <= args.trajectory < data.M:
            raise UsageError(f"--trajectory must lie in 0..{data.M - 1}")
        system = assemble_singletraj(data.states[args.trajectory], data.spec)
    else:
        system = assemble_multitraj(data)
    res = solve_constrained(system)
    out = res.to_dict()
    out["identifiability"] = identifiability_report(system)
    if args.system_out:
        write_matrix_csv(Path(args.system_out).with_suffix(".A.csv"), system.A)
        write_matrix_csv(Path(args.system_out).with_suffix(".B.csv"), system.B)
    _emit(out, args.out)
    if not res.identifiable:
        print("non-identifiable: lambda_min below tolerance", file=sys.stderr)
        return EXIT_NONIDENT
    return EXIT_OK


def cmd_bounds(args) -> int:
    regimes = ["multi-trajectory", "ensemble"] if args.regime == "both" else [_REGIMES[args.regime]]
    out = {}
    for r in regimes:
        if r == "ensemble" and (args.N is None or args.L is None):
            if args.regime == "both":
                continue
            raise UsageError("the ensemble bound needs --N and --L")
        b = sample_size_bound(args.epsilon, args.delta, args.lambda_min, args.frob_T, args.K, r, args.N, args.L)
        out[r] = {"alpha": b.alpha, "s": b.s, "M_required": b.M_required}
    _emit({"epsilon": args.epsilon, "delta": args.delta, "bounds": out})
    return EXIT_OK


_REGIMES = {"multi": "multi-trajectory", "multi-trajectory": "multi-trajectory", "ensemble": "ensemble"}


def cmd_experiment(args) -> int:
    cfg = load_config(args.name, args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.seed is not None:
        cfg.seed = args.seed
    if args.no_plots:
        cfg.plots = False
    res = run_experiment(args.name, cfg)
    _emit({"experiment": res.name, "files": res.files, "summary": res.summary})
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lipca", description="Probabilistic cellular automata on cyclic graphs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate trajectories and write a dataset")
    s.add_argument("--spec", required=True, help="N,K,n_v")
    s.add_argument("--T", required=True, help="matrix CSV, or permutation | move-to-next | benchmark")
    s.add_argument("--init", default="uniform", help="uniform | point:1,1,... | site:w1,..,wK | joint:w1,...")
    s.add_argument("--M", type=int, default=1)
    s.add_argument("--L", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="dataset path (default: $LIPCA_OUTPUT_DIR/trajectories.csv)")
    s.add_argument("--format", choices=["csv", "binary"], default="csv")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="period, ergodicity and chain diagnostics for T")
    a.add_argument("--spec", required=True)
    a.add_argument("--T", required=True)
    a.add_argument("--report", help="write the JSON report here as well")
    a.add_argument("--global", dest="include_global", action="store_true", help="include the global matrix P")
    a.add_argument("--stationary", action="store_true", help="stationary law, tau, l0 and TV decay fit")
    a.add_argument("--t-max", type=int, default=60)
    a.set_defaults(func=cmd_analyze)

    i = sub.add_parser("infer", help="constrained least-squares estimate of T")
    i.add_argument("--data", required=True)
    i.add_argument("--regime", choices=["multi", "single", "ensemble"], default="multi")
    i.add_argument("--trajectory", type=int, default=0, help="trajectory index for --regime single")
    i.add_argument("--out", help="write the JSON result here as well")
    i.add_argument("--system-out", help="path stem for the normal system CSVs")
    i.set_defaults(func=cmd_infer)

    b = sub.add_parser("bounds", help="non-asymptotic sample-size bounds")
    b.add_argument("--epsilon", type=float, required=True)
    b.add_argument("--delta", type=float, required=True)
    b.add_argument("--lambda-min", type=float, required=True)
    b.add_argument("--frob-T", type=float, required=True)
    b.add_argument("--K", type=int, required=True)
    b.add_argument("--regime", choices=["multi", "ensemble", "both"], default="both")
    b.add_argument("--N", type=int)
    b.add_argument("--L", type=int)
    b.set_defaults(func=cmd_bounds)

    e = sub.add_parser("experiment", help="run a reproduction experiment")
    e.add_argument("name", choices=sorted(CONFIGS))
    e.add_argument("--config", help="JSON config file (defaults otherwise)")
    e.add_argument("--output-dir", help="overrides the config and $LIPCA_OUTPUT_DIR")
    e.add_argument("--seed", type=int)
    e.add_argument("--no-plots", action="store_true")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _NUMERIC as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, LipcaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
