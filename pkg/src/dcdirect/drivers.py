"""Outer iteration loops.

Four drivers share the same skeleton: pick minorants of h at the current
iterate, solve one tilted convex subproblem per minorant, move to the
best candidate, record the step.

* ``dca_run``: classical DCA with a single subgradient per iteration
  (the subgradient choice is an explicit policy because the stalling
  behaviour at critical-but-not-d-stationary points depends on it);
* ``alg1_run``: deterministic multi-minorant descent, converging to
  d-stationary points for the family selectors;
* ``alg2_run``: randomized variant for finite maxes, solving only two
  subproblems per iteration (the active member plus one sampled from the
  delta-active set);
* ``alg3_run``: randomized variant for parametric maxes, sampling the
  second parameter uniformly from the ball.

All drivers terminate on the joint criterion step_norm <= tol_step and
d-stationarity residual <= tol_stat (step alone for DCA, which targets
criticality only), or at max_iters, or when the objective falls below
the divergence floor, which signals an unbounded program.
"""

from __future__ import annotations

import dataclasses
import math
import time
import warnings
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from . import certify, subsolver
from .core import (
    Array,
    DCProgram,
    DIVERGENCE_FLOOR,
    FiniteMaxH,
    GeneralConvexH,
    InvalidSpecError,
    IterateRecord,
    NextStepRule,
    ParamMaxH,
    RunTrace,
    SolverConfig,
    SolverWarning,
    Termination,
    active_set,
    as_vector,
    ensure_finite_vector,
    f_value,
    g_value,
    h_value,
    maximizer_point,
)
from .selectors import (
    Minorant,
    SelectorState,
    check_minorant_family,
    point_tag,
    select_full_active,
    select_param_cover,
    select_singleton,
    select_subgrad_sample,
    select_windowed,
    _uniform_in_ball,
)

SELECTOR_KINDS = ("singleton", "full_active", "windowed", "param_cover",
                  "subgrad_sample")


# --------------------------------------------------------------------------
# Subgradient policies
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SubgradientPolicy:
    """How DCA (and the singleton selector) picks y in the subdifferential.

    ``first_active`` uses the gradient of the smallest exactly-active
    member; ``average_active`` averages the gradients of all exactly
    active members (still a subgradient, and the choice that exhibits the
    classical stall at kinks); ``maximizer`` queries the parametric
    maximizer oracle; ``custom`` delegates to a user chooser.
    """

    kind: str = "first_active"
    chooser: Callable[[Array], Array] | None = None

    def __post_init__(self):
        if self.kind not in ("first_active", "average_active", "maximizer", "custom"):
            raise InvalidSpecError(f"unknown subgradient policy kind: {self.kind!r}")
        if self.kind == "custom" and self.chooser is None:
            raise InvalidSpecError("custom policy needs a chooser callable")


def subgradient(h, x: Array, policy: SubgradientPolicy) -> tuple[Array, str]:
    """One element of the subdifferential of h at x, with an identity tag."""
    if policy.kind == "custom":
        y = ensure_finite_vector(policy.chooser(x), x.size, "custom subgradient")
        return y, "custom"
    if isinstance(h, FiniteMaxH):
        acts = active_set(h, x, 0.0)
        if policy.kind == "average_active":
            grads = [ensure_finite_vector(h.members[i - 1].grad(x), x.size,
                                          f"member {i} grad") for i in acts]
            return np.mean(grads, axis=0), "avg"
        i = acts[0]
        return ensure_finite_vector(h.members[i - 1].grad(x), x.size,
                                    f"member {i} grad"), str(i)
    if isinstance(h, ParamMaxH):
        t = maximizer_point(h, x)
        return ensure_finite_vector(h.phi_grad_x(x, t), x.size, "phi grad"), point_tag(t)
    if isinstance(h, GeneralConvexH):
        return ensure_finite_vector(h.subgrad(x), x.size, "subgrad"), "subgrad"
    raise InvalidSpecError(f"unsupported h oracle type: {type(h).__name__}")


# --------------------------------------------------------------------------
# Selector specification
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SelectorSpec:
    """Which minorant-selection strategy alg1 uses.

    ``policy`` and ``rho`` only apply to the singleton kind; ``rho=None``
    infers the modulus from the h oracle (min member modulus for finite
    maxes, member modulus for parametric ones, 0 otherwise).
    """

    kind: str = "full_active"
    policy: SubgradientPolicy = SubgradientPolicy()
    rho: float | None = None

    def __post_init__(self):
        if self.kind not in SELECTOR_KINDS:
            raise InvalidSpecError(
                f"unknown selector kind {self.kind!r}; expected one of {SELECTOR_KINDS}"
            )


def default_singleton_rho(h) -> float:
    if isinstance(h, FiniteMaxH):
        return min(m.modulus for m in h.members)
    if isinstance(h, ParamMaxH):
        return h.member_modulus
    return 0.0


def _check_compat(kind: str, h) -> None:
    ok = {
        "singleton": (FiniteMaxH, ParamMaxH, GeneralConvexH),
        "full_active": (FiniteMaxH,),
        "windowed": (FiniteMaxH,),
        "param_cover": (ParamMaxH,),
        "subgrad_sample": (GeneralConvexH,),
    }[kind]
    if not isinstance(h, ok):
        raise InvalidSpecError(
            f"selector {kind!r} is incompatible with {type(h).__name__}"
        )


# --------------------------------------------------------------------------
# Shared machinery
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Candidate:
    """One subproblem solution with its selection keys.

    ``surrogate`` is g(z) - <y, z - x> - h_i(x), an upper bound on f(z)
    because h_i minorizes h.
    """

    tag: str
    z: Array
    surrogate: float
    f_value: float


def _solve_subproblem(g, y: Array, anchor: Array, mu: float,
                      tol_sub: float) -> subsolver.SubSolution:
    return subsolver.solve(subsolver.Subproblem(g=g, y=y, anchor=anchor, mu=mu),
                           tol_sub=tol_sub)


def _resolve_config(cfg: SolverConfig, program: DCProgram, x0: Array,
                    needs_prox: bool) -> SolverConfig:
    """Fill in the adaptive delta default and auto-enable the prox weight.

    Affine minorant families (zero modulus) provide no quantified descent
    on their own; when such a selector runs with prox_weight 0, a unit
    prox weight is substituted with a warning so the step norms still
    vanish.
    """
    updates: dict = {}
    if cfg.delta is None:
        hx0 = h_value(program.h, x0)
        updates["delta"] = 1e-2 * (1.0 + abs(hx0))
    if needs_prox and cfg.prox_weight == 0.0:
        warnings.warn(
            "selected strategy yields minorants with zero modulus; "
            "enabling prox_weight=1.0 to retain quantified descent",
            SolverWarning,
            stacklevel=3,
        )
        updates["prox_weight"] = 1.0
    if updates:
        return dataclasses.replace(cfg, **updates)
    return cfg


def _pick_key(rule: NextStepRule, mu: float, x: Array):
    if rule is NextStepRule.SURROGATE:
        return lambda c: c.surrogate
    if rule is NextStepRule.FVALUE:
        return lambda c: c.f_value
    if rule is NextStepRule.PROX_REGULARIZED:
        def key(c: Candidate) -> float:
            d = c.z - x
            return c.f_value + 0.5 * mu * float(d @ d)
        return key
    raise InvalidSpecError(f"unknown next-step rule: {rule!r}")


class _Loop:
    """Trace bookkeeping shared by all drivers."""

    def __init__(self, program: DCProgram, x0: Array):
        self.program = program
        self.x = as_vector(x0, program.dim, what="x0")
        self.f = f_value(program, self.x)
        if not math.isfinite(self.f):
            raise InvalidSpecError("f(x0) must be finite (x0 must be feasible)")
        self.records = [IterateRecord(k=0, x=self.x, f_value=self.f, step_norm=0.0,
                                      index_set_size=0, subproblems_solved=0,
                                      chosen_index_tag="")]
        self.total_subproblems = 0

    def push(self, x_new: Array, f_new: float, index_size: int, solves: int,
             tag: str, wall_ns: int) -> float:
        step = float(np.linalg.norm(x_new - self.x))
        self.total_subproblems += solves
        self.records.append(IterateRecord(
            k=len(self.records), x=x_new, f_value=f_new, step_norm=step,
            index_set_size=index_size, subproblems_solved=solves,
            chosen_index_tag=tag, wall_ns=wall_ns,
        ))
        self.x = x_new
        self.f = f_new
        return step

    def finish(self, termination: Termination) -> RunTrace:
        return RunTrace(records=tuple(self.records), termination=termination,
                        final_x=self.x, total_subproblems=self.total_subproblems)


def _diverged(f: float) -> bool:
    return f < DIVERGENCE_FLOOR


def _stationarity_reached(program: DCProgram, x: Array, cfg: SolverConfig) -> bool:
    res = certify.dstat_residual(program, x, delta=cfg.delta, tol_sub=cfg.tol_sub)
    return res <= cfg.tol_stat


def _rng_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """(index-draw stream, sampling stream) derived from one 64-bit seed."""
    children = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(children[0]), np.random.default_rng(children[1])


def _validation_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0xC0FFEE, k])


# --------------------------------------------------------------------------
# Classical DCA
# --------------------------------------------------------------------------

def dca_run(program: DCProgram, x0, policy: SubgradientPolicy | None = None,
            cfg: SolverConfig | None = None) -> RunTrace:
    """Classical DCA: y in the subdifferential of h, then one tilted solve.

    Converges to DC-critical points; whether a kink traps the iteration
    depends on the subgradient policy.  Stops when the step norm falls to
    tol_step (criticality is all this iteration can target).
    """
    policy = policy if policy is not None else SubgradientPolicy()
    cfg = cfg if cfg is not None else SolverConfig()
    loop = _Loop(program, x0)
    cfg = _resolve_config(cfg, program, loop.x, needs_prox=False)

    for _ in range(cfg.max_iters):
        t0 = time.perf_counter_ns()
        y, tag = subgradient(program.h, loop.x, policy)
        sol = _solve_subproblem(program.g, y, loop.x, cfg.prox_weight, cfg.tol_sub)
        f_new = f_value(program, sol.z)
        wall = time.perf_counter_ns() - t0
        step = loop.push(sol.z, f_new, 1, 1, tag, wall)
        if _diverged(f_new):
            return loop.finish(Termination.DIVERGENCE_DETECTED)
        if step <= cfg.tol_step:
            return loop.finish(Termination.STEP_AND_RESIDUAL_BELOW_TOL)
    return loop.finish(Termination.MAX_ITERS)


# --------------------------------------------------------------------------
# Deterministic multi-minorant descent
# --------------------------------------------------------------------------

def _make_selector(program: DCProgram, spec: SelectorSpec, cfg: SolverConfig,
                   state: SelectorState):
    h = program.h
    _check_compat(spec.kind, h)
    if spec.kind == "singleton":
        rho = spec.rho if spec.rho is not None else default_singleton_rho(h)

        def select(x: Array, k: int) -> list[Minorant]:
            y, _ = subgradient(h, x, spec.policy)
            return select_singleton(h, x, y, rho)

    elif spec.kind == "full_active":
        def select(x: Array, k: int) -> list[Minorant]:
            return select_full_active(h, x, cfg.delta)

    elif spec.kind == "windowed":
        def select(x: Array, k: int) -> list[Minorant]:
            return select_windowed(h, x, cfg, state)

    elif spec.kind == "param_cover":
        def select(x: Array, k: int) -> list[Minorant]:
            return select_param_cover(h, x, k, cfg, state)

    else:  # subgrad_sample
        def select(x: Array, k: int) -> list[Minorant]:
            return select_subgrad_sample(h, x, k, cfg, state)

    return select


def _needs_prox(spec_kind: str, h) -> bool:
    if spec_kind == "subgrad_sample":
        return True
    if spec_kind == "param_cover":
        return isinstance(h, ParamMaxH) and h.member_modulus == 0.0
    return False


def _solve_candidates(program: DCProgram, x: Array, minorants: Sequence[Minorant],
                      mu: float, tol_sub: float) -> list[Candidate]:
    cands = []
    for m in minorants:
        y = ensure_finite_vector(m.grad(x), x.size, f"minorant {m.tag} grad")
        sol = _solve_subproblem(program.g, y, x, mu, tol_sub)
        surrogate = g_value(program.g, sol.z) - float(y @ (sol.z - x)) - float(m.value(x))
        cands.append(Candidate(tag=m.tag, z=sol.z, surrogate=surrogate,
                               f_value=f_value(program, sol.z)))
    return cands


def alg1_run(program: DCProgram, x0, selector: SelectorSpec | None = None,
             cfg: SolverConfig | None = None) -> RunTrace:
    """Deterministic minorant-family descent toward d-stationary points.

    Per iteration: select minorants, solve one subproblem per minorant,
    and move to the candidate minimizing the configured next-step key
    (ties break on the smallest tag).  A descent safeguard re-solves the
    winning subproblem at tol_sub/100 if inexactness ever produces an
    ascent and stops the run if the ascent persists.
    """
    selector = selector if selector is not None else SelectorSpec()
    cfg = cfg if cfg is not None else SolverConfig()
    loop = _Loop(program, x0)
    cfg = _resolve_config(cfg, program, loop.x,
                          needs_prox=_needs_prox(selector.kind, program.h))
    _, sample_rng = _rng_streams(cfg.seed)
    state = SelectorState.create(cfg.k0, sample_rng)
    select = _make_selector(program, selector, cfg, state)
    mu = cfg.prox_weight
    ascent_slack = lambda f: 1e-12 * (1.0 + abs(f))

    for k in range(cfg.max_iters):
        t0 = time.perf_counter_ns()
        minorants = select(loop.x, k)
        if cfg.validate_minorants:
            check_minorant_family(program.h, loop.x, minorants,
                                  _validation_rng(cfg.seed, k))
        cands = _solve_candidates(program, loop.x, minorants, mu, cfg.tol_sub)
        key = _pick_key(cfg.step3_rule, mu, loop.x)
        winner = min(cands, key=lambda c: (key(c), c.tag))
        solves = len(cands)
        if winner.f_value > loop.f + ascent_slack(loop.f):
            # inexact subsolve produced an ascent: re-solve tighter, once
            m = next(m for m in minorants if m.tag == winner.tag)
            y = ensure_finite_vector(m.grad(loop.x), loop.x.size, "minorant grad")
            sol = _solve_subproblem(program.g, y, loop.x, mu, cfg.tol_sub / 100.0)
            solves += 1
            surrogate = (g_value(program.g, sol.z)
                         - float(y @ (sol.z - loop.x)) - float(m.value(loop.x)))
            winner = Candidate(tag=winner.tag, z=sol.z, surrogate=surrogate,
                               f_value=f_value(program, sol.z))
            if winner.f_value > loop.f + ascent_slack(loop.f):
                loop.total_subproblems += solves
                return loop.finish(Termination.STEP_AND_RESIDUAL_BELOW_TOL)
        wall = time.perf_counter_ns() - t0
        step = loop.push(winner.z, winner.f_value, len(minorants), solves,
                         winner.tag, wall)
        if _diverged(loop.f):
            return loop.finish(Termination.DIVERGENCE_DETECTED)
        if step <= cfg.tol_step and _stationarity_reached(program, loop.x, cfg):
            return loop.finish(Termination.STEP_AND_RESIDUAL_BELOW_TOL)
    return loop.finish(Termination.MAX_ITERS)


# --------------------------------------------------------------------------
# Randomized drivers
# --------------------------------------------------------------------------

def alg2_run(program: DCProgram, x0, cfg: SolverConfig | None = None,
             weights: Callable[[Sequence[int]], Sequence[float]] | None = None,
             ) -> RunTrace:
    """Randomized index selection for finite maxes: two solves per iteration.

    j_k is the smallest exactly-active member; xi_k is drawn from the
    delta-active set (uniformly by default, or per ``weights``).  The next
    iterate minimizes the surrogate over the two candidates, ties
    preferring the j_k candidate.  Per-iteration descent holds surely, not
    just in expectation, because the j_k candidate already guarantees it.
    """
    cfg = cfg if cfg is not None else SolverConfig()
    if not isinstance(program.h, FiniteMaxH):
        raise InvalidSpecError("alg2 requires a finite-max h oracle")
    loop = _Loop(program, x0)
    cfg = _resolve_config(cfg, program, loop.x, needs_prox=False)
    xi_rng, _ = _rng_streams(cfg.seed)
    h = program.h
    mu = cfg.prox_weight

    for k in range(cfg.max_iters):
        t0 = time.perf_counter_ns()
        approx = active_set(h, loop.x, cfg.delta)
        j = active_set(h, loop.x, 0.0)[0]
        if weights is None:
            xi = approx[int(xi_rng.integers(len(approx)))]
        else:
            p = np.asarray(weights(approx), float)
            p = p / p.sum()
            xi = approx[int(xi_rng.choice(len(approx), p=p))]
        tags = [j] if xi == j else [j, xi]
        minorants = [Minorant(tag=str(i), value=h.members[i - 1].value,
                              grad=h.members[i - 1].grad,
                              modulus=h.members[i - 1].modulus) for i in tags]
        if cfg.validate_minorants:
            check_minorant_family(h, loop.x, minorants, _validation_rng(cfg.seed, k))
        cands = _solve_candidates(program, loop.x, minorants, mu, cfg.tol_sub)
        winner = min(cands, key=lambda c: (c.surrogate, 0 if c.tag == str(j) else 1))
        wall = time.perf_counter_ns() - t0
        step = loop.push(winner.z, winner.f_value, len(approx), len(cands),
                         winner.tag, wall)
        if _diverged(loop.f):
            return loop.finish(Termination.DIVERGENCE_DETECTED)
        if step <= cfg.tol_step and _stationarity_reached(program, loop.x, cfg):
            return loop.finish(Termination.STEP_AND_RESIDUAL_BELOW_TOL)
    return loop.finish(Termination.MAX_ITERS)


def alg3_run(program: DCProgram, x0, cfg: SolverConfig | None = None) -> RunTrace:
    """Randomized parameter selection for parametric maxes.

    t_k is the maximizer at the iterate; xi_k is sampled uniformly from
    the parameter ball (every ball has positive probability).  Two solves
    per iteration; the surrogate argmin picks the next iterate, ties
    preferring the t_k candidate.
    """
    cfg = cfg if cfg is not None else SolverConfig()
    if not isinstance(program.h, ParamMaxH):
        raise InvalidSpecError("alg3 requires a parametric-max h oracle")
    loop = _Loop(program, x0)
    cfg = _resolve_config(cfg, program, loop.x, needs_prox=False)
    xi_rng, _ = _rng_streams(cfg.seed)
    h = program.h
    mu = cfg.prox_weight
    ball_center = np.asarray(h.domain.center, float)

    for k in range(cfg.max_iters):
        t0 = time.perf_counter_ns()
        t_k = maximizer_point(h, loop.x)
        xi = _uniform_in_ball(xi_rng, ball_center, h.domain.radius)
        t_tag = point_tag(t_k)
        params = {t_tag: t_k}
        params.setdefault(point_tag(xi), xi)
        minorants = []
        for tag, t in params.items():
            minorants.append(Minorant(
                tag=tag,
                value=lambda z, _t=t: float(h.phi_value(z, _t)),
                grad=lambda z, _t=t: np.asarray(h.phi_grad_x(z, _t), float),
                modulus=h.member_modulus,
            ))
        if cfg.validate_minorants:
            check_minorant_family(h, loop.x, minorants, _validation_rng(cfg.seed, k))
        cands = _solve_candidates(program, loop.x, minorants, mu, cfg.tol_sub)
        winner = min(cands, key=lambda c: (c.surrogate, 0 if c.tag == t_tag else 1))
        wall = time.perf_counter_ns() - t0
        step = loop.push(winner.z, winner.f_value, len(cands), len(cands),
                         winner.tag, wall)
        if _diverged(loop.f):
            return loop.finish(Termination.DIVERGENCE_DETECTED)
        if step <= cfg.tol_step and _stationarity_reached(program, loop.x, cfg):
            return loop.finish(Termination.STEP_AND_RESIDUAL_BELOW_TOL)
    return loop.finish(Termination.MAX_ITERS)
