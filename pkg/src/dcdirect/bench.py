"""Benchmark harness: run orchestration, trace emission, rate fitting.

A run is described by a :class:`RunConfig` (problem spec, driver,
selector, solver config, starting point).  ``run_config`` executes the
driver, certifies the final iterate at the run's delta, and emits a CSV
trace plus a certificate JSON.

Config files are JSON (schema version 1): vectors are arrays, matrices
are {"shape": [r, c], "data": [...]} in row-major order.  The CSV trace
carries one row per iterate with columns
k,f,step_norm,index_set_size,subproblems,cumulative_subproblems,wall_ns;
the first line is a timestamp comment.  Reruns with identical config and
seed are byte-identical apart from the timestamp line and the wall_ns
column (wall-clock time is the one quantity that cannot be reproduced).

``fit_rate`` estimates the geometric decay factor of |x^k - x^inf| on a
converged trace, using the final iterate as the limit proxy and dropping
the last five points, where the proxy error dominates.  Geometric decay
with q < 1 is what objectives satisfying a Lojasiewicz inequality with
exponent <= 1/2 exhibit.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import certify, drivers, problems
from .core import (
    Array,
    DCProgram,
    InsufficientDataError,
    InvalidSpecError,
    NextStepRule,
    RunTrace,
    SolverConfig,
    Termination,
    h_value,
)
from .certify import Certificate, Verdict
from .drivers import SelectorSpec, SubgradientPolicy
from .problems import ProblemSpec, build_problem, default_x0
from .selectors import cover_ball

SCHEMA_VERSION = 1

CSV_COLUMNS = ("k", "f", "step_norm", "index_set_size", "subproblems",
               "cumulative_subproblems", "wall_ns")

_DRIVERS = ("dca", "alg1", "alg2", "alg3")


# --------------------------------------------------------------------------
# Run configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RunConfig:
    """One benchmark run: problem, driver, selector, solver settings."""

    problem: ProblemSpec
    driver: str = "alg1"
    selector: SelectorSpec = field(default_factory=SelectorSpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    x0: object = None  # vector, generator seed (int), or None for the default
    output_dir: str | None = None
    run_id: str | None = None

    def __post_init__(self):
        if self.driver not in _DRIVERS:
            raise InvalidSpecError(
                f"unknown driver {self.driver!r}; expected one of {_DRIVERS}"
            )

    @property
    def name(self) -> str:
        if self.run_id:
            return self.run_id
        sel = f"_{self.selector.kind}" if self.driver == "alg1" else ""
        return f"{self.problem.id}_{self.driver}{sel}"


def resolve_x0(rc: RunConfig, program: DCProgram) -> Array:
    if rc.x0 is None:
        return default_x0(rc.problem, program, rc.solver.seed)
    if isinstance(rc.x0, (int, np.integer)):
        return default_x0(rc.problem, program, int(rc.x0))
    return np.asarray(rc.x0, float)


def resolved_delta(cfg: SolverConfig, program: DCProgram, x0: Array) -> float:
    if cfg.delta is not None:
        return cfg.delta
    return 1e-2 * (1.0 + abs(h_value(program.h, x0)))


def execute(rc: RunConfig, program: DCProgram, x0: Array) -> RunTrace:
    """Dispatch to the configured driver, checking compatibility."""
    if rc.driver == "dca":
        return drivers.dca_run(program, x0, policy=rc.selector.policy, cfg=rc.solver)
    if rc.driver == "alg1":
        return drivers.alg1_run(program, x0, selector=rc.selector, cfg=rc.solver)
    if rc.driver == "alg2":
        return drivers.alg2_run(program, x0, cfg=rc.solver)
    if rc.driver == "alg3":
        return drivers.alg3_run(program, x0, cfg=rc.solver)
    raise InvalidSpecError(f"unknown driver {rc.driver!r}")


def run_config(rc: RunConfig) -> tuple[RunTrace, Certificate]:
    """Run, certify the final iterate at the run's delta, write outputs."""
    program = build_problem(rc.problem)
    x0 = resolve_x0(rc, program)
    trace = execute(rc, program, x0)
    delta = resolved_delta(rc.solver, program, x0)
    cert = certify.certificate(program, trace.final_x, delta=delta,
                               tol_stat=rc.solver.tol_stat,
                               tol_sub=rc.solver.tol_sub)
    if rc.output_dir is not None:
        out = Path(rc.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_trace_csv(trace, out / f"{rc.name}_trace.csv")
        write_certificate_json(cert, out / f"{rc.name}_certificate.json",
                               extras={"termination": trace.termination.value,
                                       "total_subproblems": trace.total_subproblems,
                                       "iterations": trace.iterations})
    return trace, cert


# --------------------------------------------------------------------------
# Trace and certificate emission
# --------------------------------------------------------------------------

def write_trace_csv(trace: RunTrace, path) -> None:
    lines = [f"# timestamp_ns: {time.time_ns()}", ",".join(CSV_COLUMNS)]
    cumulative = 0
    for r in trace.records:
        cumulative += r.subproblems_solved
        lines.append(",".join([
            str(r.k), repr(r.f_value), repr(r.step_norm), str(r.index_set_size),
            str(r.subproblems_solved), str(cumulative), str(r.wall_ns),
        ]))
    Path(path).write_text("\n".join(lines) + "\n")


def trace_csv_fingerprint(path) -> str:
    """CSV content with the timestamp line and wall_ns column removed.

    Byte-identical fingerprints are the reproducibility contract; wall
    clock readings are excluded because they are the one nondeterministic
    column.
    """
    out = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            continue
        out.append(",".join(line.split(",")[:-1]))
    return "\n".join(out)


def write_certificate_json(cert: Certificate, path, extras: dict | None = None) -> None:
    payload = cert.to_json_dict()
    if extras:
        payload.update(extras)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


# --------------------------------------------------------------------------
# Config file ingestion
# --------------------------------------------------------------------------

def load_run_config(path) -> RunConfig:
    """Parse a JSON run config (schema 1), with line-numbered JSON errors."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidSpecError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"
        ) from exc
    return run_config_from_dict(raw, where=str(path))


def _parse_value(value):
    if isinstance(value, dict) and set(value) == {"shape", "data"}:
        return np.asarray(value["data"], float).reshape(value["shape"])
    if isinstance(value, list):
        return np.asarray(value, float)
    return value


def run_config_from_dict(raw: dict, where: str = "<config>") -> RunConfig:
    if not isinstance(raw, dict):
        raise InvalidSpecError(f"{where}: config root must be an object")
    schema = raw.get("schema")
    if schema != SCHEMA_VERSION:
        raise InvalidSpecError(
            f"{where}: unsupported schema {schema!r} (expected {SCHEMA_VERSION})"
        )
    known = {"schema", "problem", "driver", "selector", "solver", "x0",
             "output_dir", "run_id"}
    unknown = set(raw) - known
    if unknown:
        raise InvalidSpecError(f"{where}: unknown keys {sorted(unknown)}")

    prob = raw.get("problem")
    if not isinstance(prob, dict) or "kind" not in prob:
        raise InvalidSpecError(f"{where}: 'problem' must be an object with a 'kind'")
    params = {k: _parse_value(v) for k, v in prob.get("params", {}).items()}
    spec = ProblemSpec(id=prob.get("id", prob["kind"]), kind=prob["kind"],
                       params=params)

    sel_raw = raw.get("selector", {}) or {}
    policy = SubgradientPolicy(kind=sel_raw.get("policy", "first_active"))
    selector = SelectorSpec(kind=sel_raw.get("kind", "full_active"),
                            policy=policy, rho=sel_raw.get("rho"))

    solver_raw = dict(raw.get("solver", {}) or {})
    eps0 = solver_raw.pop("eps0", None)
    if "step3_rule" in solver_raw:
        solver_raw["step3_rule"] = NextStepRule(solver_raw["step3_rule"])
    allowed = {f.name for f in dataclasses.fields(SolverConfig)} - {"eps_schedule"}
    bad = set(solver_raw) - allowed
    if bad:
        raise InvalidSpecError(f"{where}: unknown solver keys {sorted(bad)}")
    if eps0 is not None:
        solver_raw["eps_schedule"] = lambda k, _e=float(eps0): _e / (k + 1)
    try:
        solver = SolverConfig(**solver_raw)
    except TypeError as exc:
        raise InvalidSpecError(f"{where}: bad solver config: {exc}") from exc

    x0 = raw.get("x0")
    if isinstance(x0, dict):
        if set(x0) != {"seed"}:
            raise InvalidSpecError(f"{where}: x0 object must be {{'seed': int}}")
        x0 = int(x0["seed"])
    elif isinstance(x0, list):
        x0 = np.asarray(x0, float)

    return RunConfig(problem=spec, driver=raw.get("driver", "alg1"),
                     selector=selector, solver=solver, x0=x0,
                     output_dir=raw.get("output_dir"), run_id=raw.get("run_id"))


# --------------------------------------------------------------------------
# Rate fitting
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RateFit:
    """Least-squares decay fit of the iterate gap on a converged trace."""

    q_estimate: float
    r_squared: float
    tail_start: int
    model: str = "geometric"


def fit_rate(trace: RunTrace, model: str = "geometric",
             max_window: int = 40) -> RateFit:
    """Fit log |x^k - x^K| against k (geometric) or log k (power).

    Requires a converged trace with at least 30 iterations; uses the last
    ``max_window`` positive-gap points up to K-5 (the final iterate is
    the limit proxy, so the last points carry proxy error).  Raises
    InsufficientDataError when the tail is degenerate.
    """
    if model not in ("geometric", "power"):
        raise InvalidSpecError(f"unknown rate model {model!r}")
    if trace.termination is not Termination.STEP_AND_RESIDUAL_BELOW_TOL:
        raise InsufficientDataError("rate fits need a converged trace")
    records = trace.records
    K = len(records) - 1
    if K < 30:
        raise InsufficientDataError(f"rate fits need >= 30 iterations, got {K}")
    x_inf = records[-1].x
    usable = []
    for k in range(0, K - 4):
        dist = float(np.linalg.norm(records[k].x - x_inf))
        if dist > 0.0:
            usable.append((k, dist))
    usable = usable[-max_window:]
    if len(usable) < 10:
        raise InsufficientDataError("fewer than 10 usable tail points")
    ks = np.array([k for k, _ in usable], float)
    ys = np.log([d for _, d in usable])
    xs = ks if model == "geometric" else np.log(ks + 1.0)
    A = np.stack([xs, np.ones_like(xs)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    fitted = A @ coef
    ss_res = float(np.sum((ys - fitted) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    if ss_tot == 0.0:
        raise InsufficientDataError("zero variation in the tail")
    r2 = 1.0 - ss_res / ss_tot
    return RateFit(q_estimate=float(math.exp(coef[0])), r_squared=r2,
                   tail_start=int(usable[0][0]), model=model)


# --------------------------------------------------------------------------
# Benchmark matrix (descent audit)
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MatrixEntry:
    """One benchmark-matrix run with its guaranteed descent constant.

    ``rho_bar`` is the per-step quantified-descent constant the
    configuration provably satisfies: the minimum minorant modulus for
    surrogate-rule runs, the prox weight for prox-regularized runs, and 0
    when no quantified bound is claimed.
    """

    rc: RunConfig
    rho_bar: float


def _p2_spec(seed: int) -> ProblemSpec:
    return ProblemSpec(id=f"p2_s{seed}", kind="P2_piecewise_quadratic",
                       params={"n": 4, "m": 3, "sigma": 0.5, "sigma_i": 0.5,
                               "seed": seed})


def _p4_spec(seed: int) -> ProblemSpec:
    return ProblemSpec(id=f"p4_s{seed}", kind="P4_affine_general",
                       params={"n": 3, "seed": seed})


_P1 = ProblemSpec(id="p1", kind="P1_trap")
_P3 = ProblemSpec(id="p3", kind="P3_huber_continuum")


def benchmark_matrix(seeds=range(5)) -> list[MatrixEntry]:
    """Driver x problem matrix used by the descent audit (60 runs)."""
    first = SubgradientPolicy("first_active")
    avg = SubgradientPolicy("average_active")
    maxi = SubgradientPolicy("maximizer")
    entries: list[MatrixEntry] = []
    for seed in seeds:
        rng = np.random.default_rng([seed, 0xB0B])
        p1_x0 = np.array([float(rng.uniform(-3.0, 3.0))])
        p3_x0 = np.array([float(rng.uniform(-2.0, 2.0))])
        base = SolverConfig(seed=seed, max_iters=2000)
        short = dataclasses.replace(base, max_iters=250)
        prox = dataclasses.replace(short, prox_weight=1.0,
                                   step3_rule=NextStepRule.PROX_REGULARIZED)

        entries += [
            MatrixEntry(RunConfig(_P1, "dca",
                                  SelectorSpec("singleton", policy=first),
                                  base, p1_x0, run_id=f"m_dca_p1_{seed}"), 0.0),
            MatrixEntry(RunConfig(_p2_spec(seed), "dca",
                                  SelectorSpec("singleton", policy=avg),
                                  base, seed, run_id=f"m_dca_p2_{seed}"), 0.5),
            MatrixEntry(RunConfig(_P3, "dca",
                                  SelectorSpec("singleton", policy=maxi),
                                  base, p3_x0, run_id=f"m_dca_p3_{seed}"), 0.0),
            MatrixEntry(RunConfig(_p4_spec(seed), "dca",
                                  SelectorSpec("singleton", policy=first),
                                  base, seed, run_id=f"m_dca_p4_{seed}"), 0.0),
            MatrixEntry(RunConfig(_P1, "alg1", SelectorSpec("full_active"),
                                  dataclasses.replace(base, delta=0.1),
                                  p1_x0, run_id=f"m_alg1_p1_{seed}"), 0.0),
            MatrixEntry(RunConfig(_p2_spec(seed), "alg1",
                                  SelectorSpec("full_active"),
                                  base, seed, run_id=f"m_alg1f_p2_{seed}"), 0.5),
            MatrixEntry(RunConfig(_p2_spec(seed), "alg1",
                                  SelectorSpec("windowed"),
                                  base, seed, run_id=f"m_alg1w_p2_{seed}"), 0.5),
            MatrixEntry(RunConfig(_P3, "alg1", SelectorSpec("param_cover"),
                                  prox, p3_x0, run_id=f"m_alg1_p3_{seed}"), 1.0),
            MatrixEntry(RunConfig(_p4_spec(seed), "alg1",
                                  SelectorSpec("subgrad_sample"),
                                  prox, seed, run_id=f"m_alg1_p4_{seed}"), 1.0),
            MatrixEntry(RunConfig(_P1, "alg2", SelectorSpec("full_active"),
                                  base, p1_x0, run_id=f"m_alg2_p1_{seed}"), 0.0),
            MatrixEntry(RunConfig(_p2_spec(seed), "alg2",
                                  SelectorSpec("full_active"),
                                  base, seed, run_id=f"m_alg2_p2_{seed}"), 0.5),
            MatrixEntry(RunConfig(_P3, "alg3", SelectorSpec("param_cover"),
                                  short, p3_x0, run_id=f"m_alg3_p3_{seed}"), 0.0),
        ]
    return entries


def run_matrix(entries=None, validate_minorants: bool = False):
    """Execute the benchmark matrix; returns (entry, trace) pairs."""
    if entries is None:
        entries = benchmark_matrix()
    results = []
    for entry in entries:
        rc = entry.rc
        if validate_minorants:
            rc = dataclasses.replace(
                rc, solver=dataclasses.replace(rc.solver, validate_minorants=True))
        program = build_problem(rc.problem)
        x0 = resolve_x0(rc, program)
        trace = execute(rc, program, x0)
        results.append((entry, trace))
    return results


# --------------------------------------------------------------------------
# Suites
# --------------------------------------------------------------------------

RATES_SEEDS = tuple(range(10))
RATES_DELTA = 0.5


def _rates_config(seed: int, kind: str) -> RunConfig:
    return RunConfig(
        problem=_p2_spec(seed), driver="alg1", selector=SelectorSpec(kind),
        solver=SolverConfig(delta=RATES_DELTA, k0=2, seed=seed, max_iters=10_000),
        x0=seed, run_id=f"rates_{kind}_{seed}",
    )


def suite_rates(output_dir=None) -> dict:
    """Convergence-rate and subproblem-economy suite on 10 P2 instances."""
    rows = []
    for seed in RATES_SEEDS:
        full_rc = _rates_config(seed, "full_active")
        win_rc = _rates_config(seed, "windowed")
        program = build_problem(full_rc.problem)
        x0 = resolve_x0(full_rc, program)
        full = execute(full_rc, program, x0)
        win = execute(win_rc, program, x0)
        fit = None
        if full.termination is Termination.STEP_AND_RESIDUAL_BELOW_TOL:
            try:
                fit = fit_rate(full)
            except InsufficientDataError:
                fit = None
        rows.append({
            "seed": seed,
            "converged": full.termination.value,
            "iterations": full.iterations,
            "q_estimate": fit.q_estimate if fit else None,
            "r_squared": fit.r_squared if fit else None,
            "f_full": full.records[-1].f_value,
            "f_windowed": win.records[-1].f_value,
            "subproblems_full": full.total_subproblems,
            "subproblems_windowed": win.total_subproblems,
        })
        if output_dir is not None:
            out = Path(output_dir)
            out.mkdir(parents=True, exist_ok=True)
            write_trace_csv(full, out / f"rates_full_{seed}_trace.csv")
            write_trace_csv(win, out / f"rates_windowed_{seed}_trace.csv")
    summary = {"suite": "rates", "rows": rows}
    _write_summary(summary, output_dir)
    return summary


TRAP_DELTA = 0.1


def suite_trap(output_dir=None) -> dict:
    """The P1 matrix: who stalls at the trap point, who escapes."""
    first = SubgradientPolicy("first_active")
    avg = SubgradientPolicy("average_active")
    solver = SolverConfig(delta=TRAP_DELTA, max_iters=200)
    runs = [
        ("dca_first", RunConfig(_P1, "dca", SelectorSpec("singleton", policy=first),
                                solver, np.array([0.0]), run_id="trap_dca_first")),
        ("dca_average", RunConfig(_P1, "dca", SelectorSpec("singleton", policy=avg),
                                  solver, np.array([0.0]), run_id="trap_dca_average")),
        ("alg1_singleton_average",
         RunConfig(_P1, "alg1", SelectorSpec("singleton", policy=avg),
                   solver, np.array([0.0]), run_id="trap_alg1_singleton")),
        ("alg1_full_active",
         RunConfig(_P1, "alg1", SelectorSpec("full_active"),
                   solver, np.array([0.0]), run_id="trap_alg1_full")),
        ("alg1_windowed",
         RunConfig(_P1, "alg1", SelectorSpec("windowed"),
                   solver, np.array([0.0]), run_id="trap_alg1_windowed")),
        ("alg2", RunConfig(_P1, "alg2", SelectorSpec("full_active"),
                           solver, np.array([0.0]), run_id="trap_alg2")),
    ]
    rows = []
    for name, rc in runs:
        rc = dataclasses.replace(rc, output_dir=str(output_dir) if output_dir else None)
        trace, cert = run_config(rc)
        rows.append({
            "run": name,
            "x_final": [float(v) for v in trace.final_x],
            "f_final": trace.records[-1].f_value,
            "verdict": cert.verdict.value,
            "dstat_residual": cert.dstat_residual,
            "critical_residual": cert.critical_residual,
        })
    summary = {"suite": "trap", "rows": rows}
    _write_summary(summary, output_dir)
    return summary


RANDOMIZED_SEEDS = tuple(range(20))


def suite_randomized(output_dir=None) -> dict:
    """Randomized drivers: verdicts, monotonicity, seed reproducibility."""
    rows = []
    for x0 in (0.0, -2.0, 0.7):
        for seed in RANDOMIZED_SEEDS:
            rc = RunConfig(_P1, "alg2", SelectorSpec("full_active"),
                           SolverConfig(seed=seed, max_iters=500),
                           np.array([x0]), run_id=f"rand_alg2_{x0}_{seed}")
            trace, cert = run_config(rc)
            rows.append({"driver": "alg2", "x0": x0, "seed": seed,
                         "x_final": [float(v) for v in trace.final_x],
                         "verdict": cert.verdict.value,
                         "termination": trace.termination.value})
    for seed in RANDOMIZED_SEEDS:
        rc = RunConfig(_P3, "alg3", SelectorSpec("param_cover"),
                       SolverConfig(seed=seed, max_iters=250),
                       np.array([0.8]), run_id=f"rand_alg3_{seed}")
        trace, cert = run_config(rc)
        rows.append({"driver": "alg3", "x0": 0.8, "seed": seed,
                     "x_final": [float(v) for v in trace.final_x],
                     "verdict": cert.verdict.value,
                     "termination": trace.termination.value})
    summary = {"suite": "randomized", "rows": rows}
    _write_summary(summary, output_dir)
    return summary


COVERING_GRID = tuple((n, 1.0, eps) for n in (1, 2, 3) for eps in (1.0, 0.5, 0.25))


def suite_covering(output_dir=None, samples: int = 10_000) -> dict:
    """Coverage and center-count audit of the ball coverings."""
    rows = []
    for n, radius, eps in COVERING_GRID:
        cov = cover_ball(np.zeros(n), radius, eps)
        rng = np.random.default_rng([n, int(1 / eps)])
        pts = np.empty((samples, n))
        for i in range(samples):
            u = rng.standard_normal(n)
            u /= np.linalg.norm(u)
            pts[i] = radius * rng.uniform() ** (1.0 / n) * u
        dists = np.linalg.norm(pts[:, None, :] - cov.centers[None, :, :], axis=2)
        worst = float(dists.min(axis=1).max())
        bound = (4.0 * radius / eps) ** n
        rows.append({"N": n, "R": radius, "eps": eps, "count": cov.count,
                     "count_bound": bound, "max_gap": worst,
                     "covered": worst <= eps + 1e-12})
    summary = {"suite": "covering", "rows": rows}
    _write_summary(summary, output_dir)
    return summary


SUITES = {
    "trap": suite_trap,
    "rates": suite_rates,
    "randomized": suite_randomized,
    "covering": suite_covering,
}


def _write_summary(summary: dict, output_dir) -> None:
    if output_dir is None:
        return
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{summary['suite']}_summary.json"
    path.write_text(json.dumps(summary, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")
