"""Desk-scale benchmark problem library.

Four families, one per h-oracle flavour:

* ``P1_trap``: the 1-D trap f(x) = x^2/2 - |x| with |x| written as
  max(x, -x).  The origin is DC-critical but not d-stationary; the two
  d-stationary points are -1 and +1 with f = -1/2.
* ``P2_piecewise_quadratic``: g and the h members are strongly convex
  quadratics built from a seeded spectral factor A.  The members share
  the Hessian s^2 A'A + sigma_i I with s < 1, which keeps every piece
  g - h_i convex (so f is bounded below) while the random linear parts
  produce genuinely overlapping active regions.
* ``P3_huber_continuum``: h(x) = max_{|t| <= R} (t x - t^2/2) is the
  Huber-type envelope with closed-form maximizer clamp(x, -R, R);
  g = x^2.  The unique d-stationary point is the origin.
* ``P4_affine_general``: h = the l1 norm through a subgradient oracle
  (sign convention 0 -> +1), g = 0.5 |x - a|^2.

Instance randomness is fully determined by the spec's seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    Array,
    ConvexG,
    DCProgram,
    EuclideanBall,
    FiniteMaxH,
    GeneralConvexH,
    InvalidSpecError,
    ParamMaxH,
    QuadraticForm,
    SmoothConvexFunction,
)

PROBLEM_KINDS = ("P1_trap", "P2_piecewise_quadratic", "P3_huber_continuum",
                 "P4_affine_general")


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Identifier, family kind, and kind-specific parameters."""

    id: str
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise InvalidSpecError(
                f"unknown problem kind {self.kind!r}; expected one of {PROBLEM_KINDS}"
            )


def quadratic_fn(Q: Array, b: Array, const: float = 0.0) -> SmoothConvexFunction:
    """0.5 x'Qx + b'x + const with exact modulus and Lipschitz constants."""
    Q = np.asarray(Q, float)
    b = np.asarray(b, float)
    eigs = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    lo = float(max(eigs[0], 0.0))
    hi = float(eigs[-1])

    def value(x: Array) -> float:
        return 0.5 * float(x @ (Q @ x)) + float(b @ x) + const

    def grad(x: Array) -> Array:
        return Q @ x + b

    return SmoothConvexFunction(value=value, grad=grad, modulus=lo,
                                lipschitz_grad=hi if hi > 0 else None)


def affine_fn(c: Array, const: float = 0.0) -> SmoothConvexFunction:
    c = np.asarray(c, float)

    def value(x: Array) -> float:
        return float(c @ x) + const

    def grad(x: Array) -> Array:
        return c.copy()

    return SmoothConvexFunction(value=value, grad=grad, modulus=0.0)


def _quadratic_g(Q: Array, b: Array, const: float = 0.0) -> ConvexG:
    smooth = quadratic_fn(Q, b, const)
    return ConvexG(smooth=smooth, modulus=smooth.modulus,
                   quadratic=QuadraticForm(matrix=np.asarray(Q, float),
                                           offset=np.asarray(b, float),
                                           const=const))


# --------------------------------------------------------------------------
# Builders
# --------------------------------------------------------------------------

def build_p1() -> DCProgram:
    g = _quadratic_g(np.array([[1.0]]), np.array([0.0]))
    h = FiniteMaxH(members=(affine_fn(np.array([1.0])),
                            affine_fn(np.array([-1.0]))))
    return DCProgram(g=g, h=h, dim=1)


def build_p2(n: int = 4, m: int = 3, sigma: float = 0.5, sigma_i: float = 0.5,
             seed: int = 0) -> DCProgram:
    if n < 1 or m < 1 or sigma <= 0 or sigma_i <= 0:
        raise InvalidSpecError("P2 needs n, m >= 1 and positive sigma, sigma_i")
    rng = np.random.default_rng(seed)
    u, _ = np.linalg.qr(rng.standard_normal((n, n)))
    v, _ = np.linalg.qr(rng.standard_normal((n, n)))
    dvals = rng.uniform(np.sqrt(0.5), 2.0, size=n)
    A = u @ np.diag(dvals) @ v.T
    AtA = A.T @ A
    Q = AtA + sigma * np.eye(n)
    b = rng.standard_normal(n)
    # shared member Hessian with s < 1 keeps every g - h_i convex
    s = rng.uniform(0.8, 0.9)
    Qi = (s * s) * AtA + sigma_i * np.eye(n)
    members = []
    for _ in range(m):
        c = rng.standard_normal(n)
        d = rng.uniform(-0.3, 0.3)
        members.append(quadratic_fn(Qi, c, d))
    return DCProgram(g=_quadratic_g(Q, b), h=FiniteMaxH(members=tuple(members)),
                     dim=n)


def build_p3(radius: float = 1.0) -> DCProgram:
    if radius <= 0:
        raise InvalidSpecError("P3 needs a positive radius")
    g = _quadratic_g(np.array([[2.0]]), np.array([0.0]))

    def phi_value(x: Array, t: Array) -> float:
        return float(t[0] * x[0] - 0.5 * t[0] * t[0])

    def phi_grad_x(x: Array, t: Array) -> Array:
        return np.array([t[0]])

    def maximizer(x: Array) -> Array:
        return np.array([min(max(float(x[0]), -radius), radius)])

    h = ParamMaxH(phi_value=phi_value, phi_grad_x=phi_grad_x,
                  domain=EuclideanBall(center=np.array([0.0]), radius=radius),
                  maximizer=maximizer, member_modulus=0.0)
    return DCProgram(g=g, h=h, dim=1)


def build_p4(n: int = 3, seed: int = 0, a: Array | None = None) -> DCProgram:
    if a is None:
        a = np.random.default_rng(seed).standard_normal(n)
    a = np.asarray(a, float)
    n = a.size
    g = _quadratic_g(np.eye(n), -a, const=0.5 * float(a @ a))

    def value(x: Array) -> float:
        return float(np.sum(np.abs(x)))

    def subgrad(x: Array) -> Array:
        return np.where(np.asarray(x) < 0, -1.0, 1.0)

    return DCProgram(g=g, h=GeneralConvexH(value=value, subgrad=subgrad), dim=n)


def build_problem(spec: ProblemSpec) -> DCProgram:
    """Instantiate a problem family from its spec."""
    p = dict(spec.params)
    try:
        if spec.kind == "P1_trap":
            _reject_unknown(p, ())
            return build_p1()
        if spec.kind == "P2_piecewise_quadratic":
            _reject_unknown(p, ("n", "m", "sigma", "sigma_i", "seed"))
            return build_p2(**p)
        if spec.kind == "P3_huber_continuum":
            _reject_unknown(p, ("radius",))
            return build_p3(**p)
        if spec.kind == "P4_affine_general":
            _reject_unknown(p, ("n", "seed", "a"))
            if "a" in p:
                p["a"] = np.asarray(p["a"], float)
            return build_p4(**p)
    except TypeError as exc:
        raise InvalidSpecError(f"bad parameters for {spec.kind}: {exc}") from exc
    raise InvalidSpecError(f"unknown problem kind {spec.kind!r}")


def _reject_unknown(params: dict, allowed: tuple) -> None:
    unknown = set(params) - set(allowed)
    if unknown:
        raise InvalidSpecError(
            f"unknown problem parameters: {sorted(unknown)} (allowed: {sorted(allowed)})"
        )


def default_x0(spec: ProblemSpec, program: DCProgram, seed: int) -> Array:
    """Seeded default starting point for benchmark runs."""
    if spec.kind == "P1_trap":
        return np.array([0.0])
    if spec.kind == "P3_huber_continuum":
        return np.array([0.8])
    rng = np.random.default_rng([seed, 0xA110])
    return 2.0 * rng.standard_normal(program.dim)
