"""Inner convex subproblem solvers.

Each outer iteration solves, for one or more slopes ``y``, the tilted and
optionally prox-regularized program

    min_z  g(z) - <y, z> + mu/2 |z - anchor|^2.

Two routes are provided: an accelerated proximal-gradient method with
backtracking (handles composite g, including constraints through the prox
part) and a closed-form linear solve for quadratic g without a prox part.
Both are deterministic: identical inputs give bitwise identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    Array,
    ConvexG,
    DIVERGENCE_FLOOR,
    MaxInnerItersError,
    SingularSystemError,
    UnboundedError,
    g_value,
)

DEFAULT_TOL_SUB = 1e-10
DEFAULT_MAX_INNER = 10_000

# condition-number cutoff for the closed-form route
_SINGULAR_COND = 1e14


@dataclass(frozen=True, eq=False)
class Subproblem:
    """min g(z) - <y, z> + mu/2 |z - anchor|^2."""

    g: ConvexG
    y: Array
    anchor: Array
    mu: float = 0.0


@dataclass(frozen=True, eq=False)
class SubSolution:
    """Solution of a subproblem.

    ``residual`` is the gradient-mapping norm at ``z`` (the plain gradient
    norm when there is no prox part), ``objective`` the full subproblem
    objective at ``z``.
    """

    z: Array
    objective: float
    residual: float
    inner_iters: int


def objective(sp: Subproblem, z: Array) -> float:
    """Full subproblem objective F(z); may be +inf outside the domain."""
    val = g_value(sp.g, z) - float(sp.y @ z)
    if sp.mu > 0:
        d = z - sp.anchor
        val += 0.5 * sp.mu * float(d @ d)
    return val


def solve(sp: Subproblem, tol_sub: float = DEFAULT_TOL_SUB,
          max_inner: int = DEFAULT_MAX_INNER) -> SubSolution:
    """Solve a subproblem, using the closed form when one is available."""
    if sp.g.quadratic is not None and sp.g.prox_part is None:
        q = sp.g.quadratic
        return solve_quadratic(q.matrix, q.offset, sp.y, anchor=sp.anchor,
                               mu=sp.mu, const=q.const)
    return solve_fista(sp, tol_sub=tol_sub, max_inner=max_inner)


def solve_quadratic(matrix: Array, offset: Array, y: Array,
                    anchor: Array | None = None, mu: float = 0.0,
                    const: float = 0.0) -> SubSolution:
    """Closed form for g(z) = 0.5 z'Qz + b'z + const with no prox part.

    Solves (Q + mu I) z = y - b + mu anchor.  Raises SingularSystemError
    when the system matrix has condition estimate above 1e14.
    """
    Q = np.asarray(matrix, float)
    b = np.asarray(offset, float)
    y = np.asarray(y, float)
    n = b.size
    M = Q + mu * np.eye(n)
    rhs = y - b
    if mu > 0:
        if anchor is None:
            raise ValueError("anchor is required when mu > 0")
        rhs = rhs + mu * np.asarray(anchor, float)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > _SINGULAR_COND:
        raise SingularSystemError(
            f"subproblem system is numerically singular (cond ~ {cond:.2e})"
        )
    z = np.linalg.solve(M, rhs)
    residual = float(np.linalg.norm(M @ z - rhs))
    obj = 0.5 * float(z @ (Q @ z)) + float(b @ z) + const - float(y @ z)
    if mu > 0:
        d = z - np.asarray(anchor, float)
        obj += 0.5 * mu * float(d @ d)
    return SubSolution(z=z, objective=obj, residual=residual, inner_iters=0)


def solve_fista(sp: Subproblem, tol_sub: float = DEFAULT_TOL_SUB,
                max_inner: int = DEFAULT_MAX_INNER) -> SubSolution:
    """Accelerated proximal gradient with backtracking and monotone restart.

    Warm starts at the anchor.  The step size starts at 1/(L + mu) when
    the smooth part's Lipschitz constant L is known and at 1 otherwise,
    and only ever halves, so the whole schedule is deterministic.  When an
    accelerated step increases the objective it is rejected and the
    momentum is restarted, which keeps the objective monotone.

    Stops when the gradient-mapping norm |(z - prox(z - s grad(z), s)) / s|
    falls to ``tol_sub``.  Raises UnboundedError when the objective dives
    below the divergence floor, MaxInnerItersError at the iteration cap.
    """
    smooth = sp.g.smooth
    y = sp.y
    mu = sp.mu
    anchor = np.asarray(sp.anchor, float)

    def phi(z: Array) -> float:
        val = float(smooth.value(z)) - float(y @ z)
        if mu > 0:
            d = z - anchor
            val += 0.5 * mu * float(d @ d)
        return val

    def dphi(z: Array) -> Array:
        gr = np.asarray(smooth.grad(z), float) - y
        if mu > 0:
            gr = gr + mu * (z - anchor)
        return gr

    if sp.g.prox_part is not None:
        prox = sp.g.prox_part.prox
    else:
        def prox(v: Array, step: float) -> Array:
            return v

    if smooth.lipschitz_grad is not None:
        step = 1.0 / (smooth.lipschitz_grad + mu)
    else:
        step = 1.0

    x = anchor.copy()
    v = x
    t = 1.0
    fx = objective(sp, x)

    for it in range(1, max_inner + 1):
        gv = dphi(v)
        phiv = phi(v)
        while True:
            z = prox(v - step * gv, step)
            d = z - v
            model = phiv + float(gv @ d) + float(d @ d) / (2.0 * step)
            if phi(z) <= model + 1e-15 * (1.0 + abs(phiv)):
                break
            step *= 0.5
            if step < 1e-18:
                break
        fz = objective(sp, z)
        if fz < DIVERGENCE_FLOOR:
            raise UnboundedError(
                "subproblem objective fell below the divergence floor; "
                "the DC program is likely unbounded below"
            )
        if fz > fx:
            # reject the accelerated step and restart momentum at x
            v = x
            t = 1.0
        else:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            v = z + ((t - 1.0) / t_next) * (z - x)
            x = z
            fx = fz
            t = t_next
        gx = dphi(x)
        px = prox(x - step * gx, step)
        residual = float(np.linalg.norm(x - px)) / step
        if residual <= tol_sub:
            return SubSolution(z=x, objective=fx, residual=residual, inner_iters=it)

    raise MaxInnerItersError(
        f"subproblem did not reach gradient-mapping tolerance {tol_sub:g} "
        f"within {max_inner} inner iterations (last residual {residual:.3e})"
    )
