"""Experiment harness: Lipschitz ratios, convergence rates, sync prediction.

Each experiment takes a small config dataclass, writes plot-ready CSV (and
optionally PNG figures) into its output directory, and returns an
:class:`ExperimentResult` with the paths and a JSON-ready summary.  All
randomness is derived from the config's master ``seed``.
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import (
    BENCHMARK_T,
    Init,
    ModelSpec,
    check_stochastic,
    cyclic_permutation,
    empirical_distributions,
    random_transition_matrix,
    simulate_trajectory,
)
from .data import delink_to_ensemble, generate_multitraj
from .dynamics import detect_synchronization, lipschitz_ratios, predicts_synchronization
from .errors import InvalidConfig
from .inference import (
    NormalSystem,
    _ensemble_system,
    assemble_ensemble,
    assemble_multitraj,
    relative_error,
    solve_constrained,
    threshold_matrix,
    trajectory_moments,
)

OUTPUT_ENV = "LIPCA_OUTPUT_DIR"
DEFAULT_OUTPUT = "lipca-output"

LIPSCHITZ_COLUMNS = [
    "N", "K", "n_v", "pairs",
    "dP1_dT1", "dP2_dT2", "dpi1_dT1", "dpi2_dT2",
    "max_dP1_over_bound", "max_dpi1_over_bound",
]
CONVERGENCE_COLUMNS = ["M", "estimator", "resamples", "min", "q1", "median", "q3", "max", "mean"]
CONVERGENCE_RAW_COLUMNS = ["M", "estimator", "rep", "rel_error"]
SYNC_COLUMNS = ["estimator", "thresholded", "lambda_min", "predicts_sync", "runs", "synchronized", "first_t0", "off_pattern_mass"]


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT))


def nv_rule(rule, N: int) -> int:
    """``"default"`` is ``min(3, N // 2)``; an integer is used as is."""
    if rule in (None, "default"):
        return min(3, N // 2)
    try:
        return int(rule)
    except (TypeError, ValueError):
        raise InvalidConfig(f"bad n_v rule {rule!r}") from None


def parse_init(value, K: int | None = None) -> Init:
    """Initial law from a config value.

    Accepts ``"uniform"``, ``"point:1,1,2"`` (1-based symbols),
    ``"site:0.6,0.3,0.1"``, ``"joint:w1,w2,..."`` or a dict with ``kind``
    and ``value`` (``point`` values are 1-based there as well).
    """
    if isinstance(value, Init):
        return value
    if isinstance(value, dict):
        kind, payload = value.get("kind"), value.get("value", ())
    elif isinstance(value, str):
        kind, _, rest = value.partition(":")
        payload = [v for v in rest.replace(";", ",").split(",") if v.strip()]
    else:
        raise InvalidConfig(f"cannot parse init {value!r}")
    kind = {"site": "site_weights", "site-weights": "site_weights"}.get(kind, kind)
    try:
        if kind == "uniform":
            return Init.uniform()
        if kind == "point":
            x = [int(v) - 1 for v in payload]
            if K is not None and any(not 0 <= v < K for v in x):
                raise InvalidConfig("point init symbols must lie in 1..K")
            return Init.point(x)
        if kind == "site_weights":
            w = [float(v) for v in payload]
            if not w or min(w) < 0 or sum(w) <= 0 or (K is not None and len(w) != K):
                raise InvalidConfig("site weights must be a nonnegative length-K vector")
            return Init.site_weights(w)
        if kind == "joint":
            return Init.joint([float(v) for v in payload])
    except ValueError as exc:
        raise InvalidConfig(f"bad init {value!r}: {exc}") from None
    raise InvalidConfig(f"unknown init kind {kind!r}")


def _init_to_json(init: Init):
    if init.kind == "point":
        return {"kind": "point", "value": [v + 1 for v in init.value]}
    return {"kind": init.kind, "value": list(init.value)}


# ----------------------------------------------------------------- configs

@dataclass
class _Config:
    seed: int = 0
    output_dir: str | None = None
    plots: bool = True

    @classmethod
    def from_dict(cls, d: dict):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known - {"experiment"}
        if extra:
            raise InvalidConfig(f"unknown config keys for {cls.__name__}: {sorted(extra)}")
        cfg = cls(**{k: v for k, v in d.items() if k in known})
        cfg.validate()
        return cfg

    def validate(self):
        pass

    def out_path(self) -> Path:
        p = Path(self.output_dir) if self.output_dir else default_output_dir()
        p.mkdir(parents=True, exist_ok=True)
        return p

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LipschitzConfig(_Config):
    N_list: list = field(default_factory=lambda: [2, 3, 4])
    K_list: list = field(default_factory=lambda: [2, 3])
    n_v: object = "default"
    pairs: int = 100
    workers: int = 1

    def validate(self):
        if not self.N_list or not self.K_list:
            raise InvalidConfig("N_list and K_list must be nonempty")
        if any(int(k) < 2 for k in self.K_list):
            raise InvalidConfig("K must be ≥ 2")
        if any(int(n) < 1 for n in self.N_list):
            raise InvalidConfig("N must be ≥ 1")
        if self.pairs < 1:
            raise InvalidConfig("pairs must be ≥ 1")


@dataclass
class ConvergenceConfig(_Config):
    N: int = 8
    K: int = 3
    n_v: int = 3
    T: object = "benchmark"
    init: object = field(default_factory=lambda: {"kind": "site_weights", "value": [0.6, 0.3, 0.1]})
    pool: int = 50_000
    L: int = 20
    M_grid: list = field(default_factory=lambda: [100, 316, 1000, 3162, 10000])
    resamples: int = 100
    ensemble_replace: bool = False

    def validate(self):
        if not self.M_grid:
            raise InvalidConfig("M_grid must be nonempty")
        if self.resamples < 1 or self.L < 1:
            raise InvalidConfig("resamples and L must be ≥ 1")
        if max(self.M_grid) > self.pool:
            raise InvalidConfig("M_grid exceeds the pool size")
        ModelSpec(self.K, self.N, self.n_v)
        parse_init(self.init, self.K)


@dataclass
class SyncPredictConfig(_Config):
    N: int = 8
    K: int = 3
    n_v: int = 2
    T: object = "permutation"
    init: object = field(default_factory=lambda: {"kind": "site_weights", "value": [0.6, 0.3, 0.1]})
    M: int = 1000
    L: int = 100
    theta: float | None = None
    sim_runs: int = 20
    sim_L: int = 200
    ensemble_replace: bool = True

    def validate(self):
        if self.M < 1 or self.L < 1 or self.sim_runs < 1 or self.sim_L < 1:
            raise InvalidConfig("M, L, sim_runs and sim_L must be ≥ 1")
        if self.theta is not None and not 0 <= self.theta < 1:
            raise InvalidConfig("theta must lie in [0, 1)")
        ModelSpec(self.K, self.N, self.n_v)
        parse_init(self.init, self.K)


CONFIGS = {"lipschitz": LipschitzConfig, "convergence": ConvergenceConfig, "sync-predict": SyncPredictConfig}


def load_config(name: str, source=None):
    """Config for experiment ``name`` from a dict, a JSON path, or defaults."""
    if name not in CONFIGS:
        raise InvalidConfig(f"unknown experiment {name!r}; choose from {sorted(CONFIGS)}")
    if source is None:
        d = {}
    elif isinstance(source, dict):
        d = dict(source)
    else:
        try:
            d = json.loads(Path(source).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"config is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise InvalidConfig("config must be a JSON object")
    if d.get("experiment", name) != name:
        raise InvalidConfig(f"config is for {d['experiment']!r}, not {name!r}")
    return CONFIGS[name].from_dict(d)


def _resolve_T(value, K: int) -> np.ndarray:
    if isinstance(value, str):
        if value == "benchmark":
            return BENCHMARK_T.copy()
        if value == "permutation":
            return cyclic_permutation(K)
        from .data import read_matrix_csv

        return check_stochastic(read_matrix_csv(value), K)
    return check_stochastic(np.asarray(value, dtype=float), K)


@dataclass
class ExperimentResult:
    name: str
    files: dict
    summary: dict


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    return v


# --------------------------------------------------------------- lipschitz

def _lipschitz_cell(args) -> dict:
    N, K, n_v, pairs, seed = args
    spec = ModelSpec(K, N, n_v)
    rng = np.random.default_rng(np.random.SeedSequence([seed, N, K]))
    acc = {k: [] for k in ("dP1_dT1", "dP2_dT2", "dpi1_dT1", "dpi2_dT2")}
    worst_P = worst_pi = 0.0
    for _ in range(pairs):
        rec = lipschitz_ratios(spec, random_transition_matrix(K, rng), random_transition_matrix(K, rng))
        for k, v in rec.ratios().items():
            acc[k].append(v)
        worst_P = max(worst_P, rec.dP_1 / rec.bound_L1)
        worst_pi = max(worst_pi, rec.dpi_1 / rec.bound_pi)
    row = {"N": N, "K": K, "n_v": n_v, "pairs": pairs}
    row.update({k: float(np.mean(v)) for k, v in acc.items()})
    row.update(max_dP1_over_bound=worst_P, max_dpi1_over_bound=worst_pi)
    return row


def run_lipschitz(cfg: LipschitzConfig) -> ExperimentResult:
    """Mean ratios of ``P`` and ``pi`` perturbations to ``T`` perturbations.

    Every pair is checked against both bounds (an ``AssertionError``
    propagates on violation).  Cells are seeded independently, so the
    result does not depend on ``workers``.
    """
    cells = [(int(N), int(K), nv_rule(cfg.n_v, int(N)), cfg.pairs, cfg.seed) for N in cfg.N_list for K in cfg.K_list]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            rows = list(ex.map(_lipschitz_cell, cells))
    else:
        rows = [_lipschitz_cell(c) for c in cells]
    out = cfg.out_path()
    files = {"csv": out / "lipschitz.csv"}
    _write_csv(files["csv"], LIPSCHITZ_COLUMNS, rows)
    if cfg.plots:
        from .plotting import plot_lipschitz

        files["figure"] = plot_lipschitz(rows, out / "lipschitz.png")
    return ExperimentResult("lipschitz", {k: str(v) for k, v in files.items()}, {"rows": rows})


# ------------------------------------------------------------- convergence

def _ensemble_error(spec, states, M, rng, replace, T):
    L = states.shape[1] - 1
    phi = np.empty((L + 1, spec.N, spec.K))
    p = np.empty_like(phi)
    eye = np.eye(spec.K)
    for t in range(L + 1):
        snap = states[rng.choice(states.shape[0], size=M, replace=replace), t]
        phi[t] = empirical_distributions(spec, snap).mean(axis=0)
        p[t] = eye[snap].mean(axis=0)
    res = solve_constrained(_ensemble_system(phi[:-1], p[1:], "ensemble"))
    return relative_error(res.T_hat, T)


def fit_loglog_slope(M_grid, values) -> float:
    return float(np.polyfit(np.log(np.asarray(M_grid, float)), np.log(np.asarray(values, float)), 1)[0])


def run_convergence(cfg: ConvergenceConfig) -> ExperimentResult:
    """Relative Frobenius error of both estimators against the sample size.

    A master pool of trajectories is simulated once.  For each ``M`` and
    resample, the multi-trajectory estimate uses ``M`` distinct pool
    trajectories; the ensemble estimate draws a fresh set of ``M`` pool
    members at every time step, which removes the cross-time linkage.
    """
    spec = ModelSpec(cfg.K, cfg.N, cfg.n_v)
    T = _resolve_T(cfg.T, spec.K)
    init = parse_init(cfg.init, spec.K)
    pool = generate_multitraj(spec, T, init, cfg.pool, cfg.L, seed=cfg.seed)
    Am, Bm = trajectory_moments(spec, pool.states)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
    raw = []
    for M in cfg.M_grid:
        M = int(M)
        for rep in range(cfg.resamples):
            idx = rng.choice(cfg.pool, size=M, replace=False)
            sys_m = NormalSystem(Am[idx].mean(axis=0), Bm[idx].mean(axis=0), M * cfg.L * spec.N, regime="multi-trajectory")
            raw.append({"M": M, "estimator": "multi-trajectory", "rep": rep,
                        "rel_error": relative_error(solve_constrained(sys_m).T_hat, T)})
            raw.append({"M": M, "estimator": "ensemble", "rep": rep,
                        "rel_error": _ensemble_error(spec, pool.states, M, rng, cfg.ensemble_replace, T)})
    rows, medians = [], {"multi-trajectory": [], "ensemble": []}
    for M in cfg.M_grid:
        for est in medians:
            e = np.array([r["rel_error"] for r in raw if r["M"] == int(M) and r["estimator"] == est])
            q1, med, q3 = np.quantile(e, [0.25, 0.5, 0.75])
            medians[est].append(med)
            rows.append({"M": int(M), "estimator": est, "resamples": e.size, "min": e.min(), "q1": q1,
                         "median": med, "q3": q3, "max": e.max(), "mean": e.mean()})
    slopes = {est: fit_loglog_slope(cfg.M_grid, v) for est, v in medians.items()} if len(cfg.M_grid) > 1 else {}
    summary = {
        "slopes": slopes,
        "medians": {k: [float(x) for x in v] for k, v in medians.items()},
        "M_grid": [int(m) for m in cfg.M_grid],
        "multi_below_ensemble": bool(np.all(np.array(medians["multi-trajectory"]) < np.array(medians["ensemble"]))),
        "T": T.tolist(),
        "init": _init_to_json(init),
    }
    out = cfg.out_path()
    files = {"csv": out / "convergence.csv", "raw": out / "convergence_raw.csv", "summary": out / "convergence_summary.json"}
    _write_csv(files["csv"], CONVERGENCE_COLUMNS, rows)
    _write_csv(files["raw"], CONVERGENCE_RAW_COLUMNS, raw)
    files["summary"].write_text(json.dumps(summary, indent=2))
    if cfg.plots:
        from .plotting import plot_convergence

        files["figure"] = plot_convergence(raw, cfg.M_grid, out / "convergence.png")
    return ExperimentResult("convergence", {k: str(v) for k, v in files.items()}, summary)


# ------------------------------------------------------------ sync-predict

def off_pattern_mass(T_hat, T) -> float:
    """Largest row mass that ``T_hat`` puts outside the support of ``T``."""
    T_hat = np.asarray(T_hat)
    return float(np.where(np.asarray(T) > 0, 0.0, T_hat).sum(axis=1).max())


def simulate_sync(spec: ModelSpec, T, runs: int, L: int, seed: int) -> tuple[list, list]:
    """Simulate ``runs`` trajectories from i.i.d. uniform starts; return trajectories and t0's."""
    trajs, t0s = [], []
    init = Init.uniform()
    for r in range(runs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2, r]))
        x0 = init.sample(spec, rng)
        traj = simulate_trajectory(spec, T, x0, L, rng)
        trajs.append(traj)
        t0s.append(detect_synchronization(traj))
    return trajs, t0s


def run_sync_predict(cfg: SyncPredictConfig) -> ExperimentResult:
    """Estimate ``T`` from data of a synchronizing PCA and simulate the estimates.

    Both the multi-trajectory and the ensemble estimators are applied; when
    ``theta`` is set, each estimate is also thresholded and renormalized.
    """
    spec = ModelSpec(cfg.K, cfg.N, cfg.n_v)
    T = _resolve_T(cfg.T, spec.K)
    init = parse_init(cfg.init, spec.K)
    data = generate_multitraj(spec, T, init, cfg.M, cfg.L, seed=cfg.seed)
    ens = delink_to_ensemble(data, cfg.M, seed=cfg.seed, replace=cfg.ensemble_replace)
    estimates = {
        "multi-trajectory": solve_constrained(assemble_multitraj(data)),
        "ensemble": solve_constrained(assemble_ensemble(ens)),
    }
    rows, matrices, trajectories = [], {}, {}
    for est, res in estimates.items():
        variants = [(False, res.T_hat)]
        if cfg.theta is not None:
            variants.append((True, threshold_matrix(res.T_hat, cfg.theta)))
        for thr, M_hat in variants:
            trajs, t0s = simulate_sync(spec, M_hat, cfg.sim_runs, cfg.sim_L, cfg.seed)
            synced = [t for t in t0s if t is not None]
            key = f"{est}{'-thresholded' if thr else ''}"
            matrices[key] = M_hat.tolist()
            trajectories[key] = trajs[0]
            rows.append({
                "estimator": est,
                "thresholded": thr,
                "lambda_min": res.lambda_min,
                "predicts_sync": bool(predicts_synchronization(M_hat)),
                "runs": cfg.sim_runs,
                "synchronized": len(synced),
                "first_t0": synced[0] if synced else "",
                "off_pattern_mass": off_pattern_mass(M_hat, T),
            })
    out = cfg.out_path()
    files = {"csv": out / "sync_predict.csv", "summary": out / "sync_predict.json"}
    _write_csv(files["csv"], SYNC_COLUMNS, rows)
    summary = {"rows": rows, "T_hat": matrices, "theta": cfg.theta, "init": _init_to_json(init)}
    files["summary"].write_text(json.dumps(summary, indent=2, default=_json_default))
    if cfg.plots:
        from .plotting import plot_sync

        files["figure"] = plot_sync(trajectories, spec.K, out / "sync_predict.png")
    return ExperimentResult("sync-predict", {k: str(v) for k, v in files.items()}, summary)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o).__name__)


RUNNERS = {"lipschitz": run_lipschitz, "convergence": run_convergence, "sync-predict": run_sync_predict}


def run_experiment(name: str, config=None) -> ExperimentResult:
    cfg = config if isinstance(config, _Config) else load_config(name, config)
    return RUNNERS[name](cfg)
