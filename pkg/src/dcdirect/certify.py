"""Stationarity certificates.

A point x of a DC program f = g - h is DC-critical when some subgradient
of h at x also lies in the subdifferential of g, and directionally
stationary (d-stationary) when f'(x, d) >= 0 for every direction, which
for points with nonempty subdifferential of h is equivalent to every
active slope of h lying in the subdifferential of g.  Both notions are
quantified here as computable residuals:

* ``dstat_residual``: for each active slope y, x is re-solved against the
  prox-regularized linearization min g(z) - <y, z> + 0.5 |z - x|^2; the
  residual is the largest distance |z - x|, zero exactly when x is a
  fixed point of every active linearization.
* ``critical_residual``: distance from the gradient of g to the convex
  hull of the active slopes (smooth g), computed by an away-step
  conditional-gradient method.

A directional-derivative probe over sampled directions provides a cheap
falsification layer: a clearly negative sampled derivative certifies that
the point is not d-stationary.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from . import subsolver
from .core import (
    Array,
    DCProgram,
    FiniteMaxH,
    GeneralConvexH,
    InvalidSpecError,
    MaxInnerItersError,
    ParamMaxH,
    active_set,
    ensure_finite_value,
    ensure_finite_vector,
    fp_slack,
    g_value,
    h_value,
    maximizer_point,
)
from .selectors import point_tag

_HULL_TOL = 1e-6
_NEAR_MAX_GRID = 33


class Verdict(str, enum.Enum):
    D_STATIONARY = "DStationary"
    CRITICAL_NOT_D_STATIONARY = "CriticalNotDStationary"
    NOT_CRITICAL = "NotCritical"


@dataclass(frozen=True, eq=False)
class Certificate:
    """Stationarity assessment of a point at a given tolerance.

    ``active`` lists the member indices (finite max) or quantized
    parameter tags (parametric max) that entered the check;
    ``near_maximizer_count`` reports how many near-maximizers the
    parametric check enumerated (0 for the other oracle kinds).  For a
    general convex h only the tangent subgradient is checked, and only
    criticality can be assessed; ``critical_is_proxy`` records when the
    critical residual is the per-slope upper proxy rather than a hull
    distance.
    """

    x: Array
    active: tuple
    dstat_residual: float
    critical_residual: float
    verdict: Verdict
    near_maximizer_count: int = 0
    critical_is_proxy: bool = False

    def to_json_dict(self) -> dict:
        return {
            "x": [float(v) for v in self.x],
            "active": list(self.active),
            "dstat_residual": float(self.dstat_residual),
            "critical_residual": float(self.critical_residual),
            "verdict": self.verdict.value,
            "near_maximizer_count": int(self.near_maximizer_count),
            "critical_is_proxy": bool(self.critical_is_proxy),
        }

    def to_text(self) -> str:
        lines = [f"{key}: {value}" for key, value in self.to_json_dict().items()]
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)


# --------------------------------------------------------------------------
# Active slopes
# --------------------------------------------------------------------------

def _near_maximizers(h: ParamMaxH, x: Array, delta: float,
                     grid: int = _NEAR_MAX_GRID) -> list[Array]:
    """Maximizer plus grid points of the ball within a ``delta`` value gap."""
    ball = h.domain
    n = ball.dim
    if n > 3:
        raise InvalidSpecError("near-maximizer grids support at most 3 dims")
    t_star = maximizer_point(h, x)
    hx = ensure_finite_value(h.phi_value(x, t_star), "phi at maximizer")
    threshold = hx - delta - fp_slack(hx)
    center = np.asarray(ball.center, float)
    axes = [np.linspace(center[j] - ball.radius, center[j] + ball.radius, grid)
            for j in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    inside = np.linalg.norm(pts - center, axis=1) <= ball.radius + 1e-12 * (1 + ball.radius)
    found: dict[str, Array] = {point_tag(t_star): t_star}
    for t in pts[inside]:
        if float(h.phi_value(x, t)) >= threshold:
            tag = point_tag(t)
            if tag not in found:
                found[tag] = np.array(t, float)
    return [found[tag] for tag in sorted(found)]


def _active_slopes(program: DCProgram, x: Array,
                   delta: float) -> tuple[list, list[Array], int]:
    """(labels, slopes, near_maximizer_count) of the active pieces of h."""
    h = program.h
    if isinstance(h, FiniteMaxH):
        idx = active_set(h, x, delta)
        slopes = [ensure_finite_vector(h.members[i - 1].grad(x), program.dim,
                                       f"member {i} grad") for i in idx]
        return list(idx), slopes, 0
    if isinstance(h, ParamMaxH):
        ts = _near_maximizers(h, x, delta)
        slopes = [ensure_finite_vector(h.phi_grad_x(x, t), program.dim, "phi grad")
                  for t in ts]
        return [point_tag(t) for t in ts], slopes, len(ts)
    if isinstance(h, GeneralConvexH):
        # only the tangent subgradient is observable through this oracle
        slope = ensure_finite_vector(h.subgrad(x), program.dim, "subgrad")
        return ["subgrad"], [slope], 0
    raise InvalidSpecError(f"unsupported h oracle type: {type(h).__name__}")


# --------------------------------------------------------------------------
# Residuals
# --------------------------------------------------------------------------

def dstat_residual(program: DCProgram, x: Array, delta: float = 0.0,
                   tol_sub: float = 1e-10) -> float:
    """Largest fixed-point violation of the active prox-linearizations.

    For each active slope y at x, solves
    min_z g(z) - <y, z> + 0.5 |z - x|^2 and measures |z - x|.  The
    maximum over active slopes is zero exactly when every active slope
    lies in the subdifferential of g at x, i.e. when x is d-stationary
    (for a general convex h only the tangent subgradient is checked).
    """
    x = np.asarray(x, float)
    _, slopes, _ = _active_slopes(program, x, delta)
    worst = 0.0
    for y in slopes:
        sol = subsolver.solve(
            subsolver.Subproblem(g=program.g, y=y, anchor=x, mu=1.0),
            tol_sub=tol_sub,
        )
        worst = max(worst, float(np.linalg.norm(sol.z - x)))
    return worst


def _critical_residual_impl(program: DCProgram, x: Array, delta: float,
                            tol_sub: float) -> tuple[float, bool]:
    x = np.asarray(x, float)
    _, slopes, _ = _active_slopes(program, x, delta)
    if program.g.prox_part is None:
        target = ensure_finite_vector(program.g.smooth.grad(x), program.dim, "grad g")
        return hull_distance(target, slopes, tol=_HULL_TOL), False
    # g is not smooth: fall back to the per-slope prox residuals and report
    # the smallest one as an upper proxy for the criticality distance
    best = math.inf
    for y in slopes:
        sol = subsolver.solve(
            subsolver.Subproblem(g=program.g, y=y, anchor=x, mu=1.0),
            tol_sub=tol_sub,
        )
        best = min(best, float(np.linalg.norm(sol.z - x)))
    return best, True


def critical_residual(program: DCProgram, x: Array, delta: float = 0.0,
                      tol_sub: float = 1e-10) -> float:
    """Distance from grad g(x) to the hull of the active slopes of h.

    Zero exactly when x is DC-critical.  When g carries a prox part the
    gradient is unavailable and the minimum per-slope prox residual is
    returned instead (an upper proxy, flagged in certificates).
    """
    value, _ = _critical_residual_impl(program, x, delta, tol_sub)
    return value


def hull_distance(target: Array, points: list[Array], tol: float = 1e-9,
                  max_inner: int = 10_000) -> float:
    """Euclidean distance from ``target`` to the convex hull of ``points``.

    Minimizes 0.5 |sum_i w_i p_i - target|^2 over the simplex with
    away-step conditional-gradient iterations and exact line search,
    stopping once the duality gap certifies the distance to ``tol``
    (relative to the spread of the points).
    """
    P = np.stack([np.atleast_1d(np.asarray(p, float)) for p in points], axis=0)
    tgt = np.atleast_1d(np.asarray(target, float))
    m = P.shape[0]
    if m == 1:
        return float(np.linalg.norm(P[0] - tgt))
    Pc = P - tgt[None, :]
    scale = max(1.0, float(np.max(np.sum(Pc * Pc, axis=1))))
    gap_tol = 0.5 * tol * tol * scale

    w = np.zeros(m)
    w[0] = 1.0
    av = Pc[0].copy()
    for _ in range(max_inner):
        grad = Pc @ av
        s = int(np.argmin(grad))
        fw_gap = float(w @ grad - grad[s])
        if fw_gap <= gap_tol:
            return float(np.linalg.norm(av))
        active = np.flatnonzero(w > 0)
        a = int(active[np.argmax(grad[active])])
        away_gap = float(grad[a] - w @ grad)
        if fw_gap >= away_gap or w[a] >= 1.0:
            dvec = Pc[s] - av
            gamma_max = 1.0
            toward, away = s, None
        else:
            dvec = av - Pc[a]
            gamma_max = w[a] / (1.0 - w[a])
            toward, away = None, a
        denom = float(dvec @ dvec)
        if denom <= 0.0:
            return float(np.linalg.norm(av))
        gamma = min(max(-float(av @ dvec) / denom, 0.0), gamma_max)
        if toward is not None:
            w *= 1.0 - gamma
            w[toward] += gamma
        else:
            w *= 1.0 + gamma
            w[away] -= gamma
            if w[away] < 1e-16:
                w[away] = 0.0
        av += gamma * dvec
    raise MaxInnerItersError("hull distance did not reach its duality-gap tolerance")


# --------------------------------------------------------------------------
# Directional-derivative probe
# --------------------------------------------------------------------------

_FD_STEPS = (1e-4, 1e-5, 1e-6)


def _directional_quotient(g, x: Array, d: Array) -> float:
    """One-sided difference quotient of g along d, Richardson extrapolated."""
    base = g_value(g, x)
    quotients = []
    for step in _FD_STEPS:
        v = g_value(g, x + step * d)
        if math.isinf(v) or math.isinf(base):
            return math.inf
        quotients.append((v - base) / step)
    r1 = (10.0 * quotients[1] - quotients[0]) / 9.0
    r2 = (10.0 * quotients[2] - quotients[1]) / 9.0
    return (100.0 * r2 - r1) / 99.0


def directional_derivative_probe(program: DCProgram, x: Array,
                                 dirs: list[Array]) -> float:
    """Minimum of f'(x, d) over the sampled directions.

    f'(x, d) = g'(x, d) - h'(x, d) with h'(x, d) the max of <slope, d>
    over the exactly active slopes.  A negative return value witnesses
    that x is not d-stationary; a nonnegative one proves nothing beyond
    the sampled directions.
    """
    x = np.asarray(x, float)
    _, slopes, _ = _active_slopes(program, x, 0.0)
    S = np.stack(slopes, axis=0)
    g = program.g
    smooth_grad = None
    if g.prox_part is None:
        smooth_grad = ensure_finite_vector(g.smooth.grad(x), program.dim, "grad g")
    best = math.inf
    for d in dirs:
        d = np.asarray(d, float)
        if smooth_grad is not None:
            gdir = float(smooth_grad @ d)
        else:
            gdir = _directional_quotient(g, x, d)
        hdir = float(np.max(S @ d))
        best = min(best, gdir - hdir)
    return best


def default_probe_directions(dim: int, count: int = 64,
                             seed: int = 0xD177) -> list[Array]:
    """``count`` uniform sphere directions plus both signs of each axis."""
    rng = np.random.default_rng(seed)
    dirs = []
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = 1.0
        dirs.append(e)
        dirs.append(-e)
    while len(dirs) < count + 2 * dim:
        u = rng.standard_normal(dim)
        nrm = float(np.linalg.norm(u))
        if nrm > 0:
            dirs.append(u / nrm)
    return dirs


# --------------------------------------------------------------------------
# Certificates
# --------------------------------------------------------------------------

def certificate(program: DCProgram, x: Array, delta: float = 0.0,
                tol_stat: float = 1e-6, tol_sub: float = 1e-10) -> Certificate:
    """Assemble the full stationarity certificate of a point."""
    x = np.asarray(x, float)
    labels, slopes, near_count = _active_slopes(program, x, delta)
    worst = 0.0
    for y in slopes:
        sol = subsolver.solve(
            subsolver.Subproblem(g=program.g, y=y, anchor=x, mu=1.0),
            tol_sub=tol_sub,
        )
        worst = max(worst, float(np.linalg.norm(sol.z - x)))
    crit, proxy = _critical_residual_impl(program, x, delta, tol_sub)
    if worst <= tol_stat:
        verdict = Verdict.D_STATIONARY
    elif crit <= tol_stat:
        verdict = Verdict.CRITICAL_NOT_D_STATIONARY
    else:
        verdict = Verdict.NOT_CRITICAL
    return Certificate(
        x=x,
        active=tuple(labels),
        dstat_residual=worst,
        critical_residual=crit,
        verdict=verdict,
        near_maximizer_count=near_count,
        critical_is_proxy=proxy,
    )
