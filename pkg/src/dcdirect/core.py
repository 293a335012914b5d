"""Domain model shared by every solver component.

A difference-of-convex (DC) program minimizes ``f = g - h`` where both
``g`` and ``h`` are convex.  ``g`` is represented as a smooth convex part
plus an optional prox-friendly part (which is how constraints enter, via
indicator functions).  ``h`` comes in three flavours: a finite pointwise
maximum of smooth convex functions, a parametric maximum over a Euclidean
ball, or a general continuous convex function exposed through a
subgradient oracle.

Everything here is an immutable value object; oracles hold no mutable
state and are safe to evaluate concurrently.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray


# --------------------------------------------------------------------------
# Errors and warnings
# --------------------------------------------------------------------------

class SolverError(Exception):
    """Base class for all errors raised by this package."""


class OracleError(SolverError):
    """An oracle produced a non-finite or otherwise invalid output."""


class InvalidSpecError(SolverError):
    """A problem or run specification is malformed or incompatible."""


class UnboundedError(SolverError):
    """An objective decreased below the divergence floor."""


class MaxInnerItersError(SolverError):
    """An inner iterative method hit its iteration cap before its tolerance."""


class SingularSystemError(SolverError):
    """A linear system in a closed-form solve is numerically singular."""


class TooManyCentersError(SolverError):
    """A requested ball covering would exceed the center budget."""


class InsufficientDataError(SolverError):
    """A trace does not carry enough usable data for the requested fit."""


class SolverWarning(UserWarning):
    """Non-fatal configuration adjustments (e.g. enabling a prox weight)."""


# --------------------------------------------------------------------------
# Vectors
# --------------------------------------------------------------------------

def as_vector(x, dim: int | None = None, what: str = "vector") -> Array:
    """Coerce ``x`` to a finite 1-D float64 array, validating dimension."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"{what} must be one-dimensional, got shape {arr.shape}")
    if dim is not None and arr.size != dim:
        raise ValueError(f"{what} has dimension {arr.size}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite entries")
    return np.array(arr, dtype=float)


def ensure_finite_value(v, what: str) -> float:
    v = float(v)
    if not math.isfinite(v):
        raise OracleError(f"{what} returned a non-finite value: {v!r}")
    return v


def ensure_finite_vector(a, dim: int | None, what: str) -> Array:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if dim is not None and arr.shape != (dim,):
        raise OracleError(f"{what} returned shape {arr.shape}, expected ({dim},)")
    if not np.all(np.isfinite(arr)):
        raise OracleError(f"{what} returned non-finite entries")
    return arr


def fp_slack(value: float) -> float:
    """Relative floating-point slack used for active-set membership."""
    return 1e-12 * (1.0 + abs(value))


# --------------------------------------------------------------------------
# Convex oracles
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SmoothConvexFunction:
    """A differentiable convex function with known strong-convexity modulus.

    ``modulus`` is a valid (not necessarily tight) strong-convexity
    constant: value(y) >= value(x) + <grad(x), y-x> + modulus/2 |y-x|^2.
    ``lipschitz_grad`` bounds the gradient's Lipschitz constant when known;
    solvers fall back to adaptive step sizes otherwise.
    """

    value: Callable[[Array], float]
    grad: Callable[[Array], Array]
    modulus: float = 0.0
    lipschitz_grad: float | None = None

    def __post_init__(self):
        if self.modulus < 0:
            raise InvalidSpecError("modulus must be nonnegative")
        if self.lipschitz_grad is not None and self.lipschitz_grad <= 0:
            raise InvalidSpecError("lipschitz_grad must be positive when given")


@dataclass(frozen=True, eq=False)
class ProxFriendlyFunction:
    """A convex function whose proximal map is computable.

    ``value`` may return ``inf`` outside the domain (indicator functions).
    ``prox(v, step)`` returns argmin_z value(z) + |z - v|^2 / (2 step).
    """

    value: Callable[[Array], float]
    prox: Callable[[Array, float], Array]


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """Metadata marking a smooth part as 0.5 x'Qx + b'x + const."""

    matrix: Array
    offset: Array
    const: float = 0.0


@dataclass(frozen=True, eq=False)
class ConvexG:
    """The first DC component: smooth convex part plus optional prox part.

    ``modulus`` is a strong-convexity constant for the whole of g.  When
    the smooth part is a known quadratic and there is no prox part,
    ``quadratic`` enables a closed-form subproblem solve.
    """

    smooth: SmoothConvexFunction
    prox_part: ProxFriendlyFunction | None = None
    modulus: float = 0.0
    quadratic: QuadraticForm | None = None


def g_value(g: ConvexG, x: Array) -> float:
    """Evaluate g(x); may be +inf when a prox part encodes constraints."""
    v = float(g.smooth.value(x))
    if g.prox_part is not None:
        v += float(g.prox_part.value(x))
    if math.isnan(v):
        raise OracleError("g evaluated to NaN")
    return v


# --------------------------------------------------------------------------
# Second component oracles
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FiniteMaxH:
    """h(x) = max_i members[i](x) over finitely many smooth convex members."""

    members: tuple[SmoothConvexFunction, ...]

    def __post_init__(self):
        if len(self.members) < 1:
            raise InvalidSpecError("FiniteMaxH needs at least one member")


@dataclass(frozen=True, eq=False)
class EuclideanBall:
    center: Array
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidSpecError("ball radius must be positive")

    @property
    def dim(self) -> int:
        return int(np.asarray(self.center).size)

    def contains(self, t: Array, slack: float = 0.0) -> bool:
        return float(np.linalg.norm(np.asarray(t, float) - self.center)) <= self.radius + slack


@dataclass(frozen=True, eq=False)
class ParamMaxH:
    """h(x) = max over t in a Euclidean ball of phi(x, t).

    ``maximizer`` returns one element of the argmax; problems without a
    closed form can use :func:`make_grid_maximizer`.  ``member_modulus``
    is a lower bound on the strong-convexity modulus of x -> phi(x, t)
    uniform over t (often 0, e.g. for families of affine functions).
    """

    phi_value: Callable[[Array, Array], float]
    phi_grad_x: Callable[[Array, Array], Array]
    domain: EuclideanBall
    maximizer: Callable[[Array], Array]
    member_modulus: float = 0.0


@dataclass(frozen=True, eq=False)
class GeneralConvexH:
    """A continuous convex h given by value and one-subgradient oracles."""

    value: Callable[[Array], float]
    subgrad: Callable[[Array], Array]


HOracle = FiniteMaxH | ParamMaxH | GeneralConvexH


@dataclass(frozen=True, eq=False)
class DCProgram:
    """min f(x) = g(x) - h(x) over R^dim."""

    g: ConvexG
    h: HOracle
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidSpecError("dim must be a positive integer")


# --------------------------------------------------------------------------
# Oracle operations
# --------------------------------------------------------------------------

def member_values(h: FiniteMaxH, x: Array) -> Array:
    vals = np.empty(len(h.members))
    for i, m in enumerate(h.members):
        vals[i] = ensure_finite_value(m.value(x), f"h member {i + 1}")
    return vals


def h_value(h: HOracle, x: Array) -> float:
    """Evaluate h(x) for any of the three oracle variants.

    For a finite max the reduction is left-to-right over the member list,
    so the result is bitwise reproducible.
    """
    if isinstance(h, FiniteMaxH):
        best = ensure_finite_value(h.members[0].value(x), "h member 1")
        for i, m in enumerate(h.members[1:], start=2):
            v = ensure_finite_value(m.value(x), f"h member {i}")
            if v > best:
                best = v
        return best
    if isinstance(h, ParamMaxH):
        t = maximizer_point(h, x)
        return ensure_finite_value(h.phi_value(x, t), "phi at maximizer")
    if isinstance(h, GeneralConvexH):
        return ensure_finite_value(h.value(x), "h")
    raise InvalidSpecError(f"unsupported h oracle type: {type(h).__name__}")


def maximizer_point(h: ParamMaxH, x: Array) -> Array:
    """Query the maximizer oracle, validating the point lies in the domain."""
    t = ensure_finite_vector(h.maximizer(x), h.domain.dim, "maximizer")
    if not h.domain.contains(t, slack=1e-9 * (1.0 + h.domain.radius)):
        raise OracleError("maximizer returned a point outside the parameter ball")
    return t


def active_set(h: FiniteMaxH, x: Array, delta: float = 0.0) -> tuple[int, ...]:
    """Indices (1-based) of members within ``delta`` of the max at ``x``.

    Membership uses a relative slack of 1e-12 (1 + |h(x)|) so the exact
    active set is deterministic under rounding; the delta=0 set is never
    empty.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    vals = member_values(h, x)
    hx = float(vals[0])
    for v in vals[1:]:
        if v > hx:
            hx = float(v)
    threshold = hx - delta - fp_slack(hx)
    return tuple(i + 1 for i in range(vals.size) if vals[i] >= threshold)


def f_value(program: DCProgram, x: Array) -> float:
    """f(x) = g(x) - h(x); +inf outside the domain of g's prox part."""
    gx = g_value(program.g, x)
    hx = h_value(program.h, x)
    if math.isinf(gx):
        return math.inf
    return gx - hx


def grad_check(oracle: SmoothConvexFunction, points: Sequence[Array]) -> float:
    """Max relative mismatch between ``oracle.grad`` and central differences.

    The step is 1e-6 (1 + |x|) per point; the error is
    |grad - fd| / (1 + |fd|), maximized over the given points.
    """
    if len(points) == 0:
        raise ValueError("points must be nonempty")
    worst = 0.0
    for p in points:
        x = as_vector(p, what="grad_check point")
        step = 1e-6 * (1.0 + float(np.linalg.norm(x)))
        fd = np.empty_like(x)
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = step
            fp = ensure_finite_value(oracle.value(x + e), "oracle value")
            fm = ensure_finite_value(oracle.value(x - e), "oracle value")
            fd[j] = (fp - fm) / (2.0 * step)
        gx = ensure_finite_vector(oracle.grad(x), x.size, "oracle grad")
        err = float(np.linalg.norm(gx - fd) / (1.0 + np.linalg.norm(fd)))
        worst = max(worst, err)
    return worst


def make_grid_maximizer(
    phi_value: Callable[[Array, Array], float],
    domain: EuclideanBall,
    resolution: int = 64,
) -> Callable[[Array], Array]:
    """Grid search with local refinement over the parameter ball.

    Fallback for parametric-max oracles without a closed-form maximizer.
    Supports up to 3 parameter dimensions; the refinement shrinks the
    search window geometrically around the incumbent until the spacing is
    negligible relative to the ball radius.
    """
    n = domain.dim
    if n > 3:
        raise InvalidSpecError("grid maximizer supports at most 3 parameter dims")
    center = np.asarray(domain.center, float)
    radius = float(domain.radius)

    def _best_on_grid(x: Array, lo: Array, hi: Array, res: int) -> Array:
        axes = [np.linspace(lo[j], hi[j], res) for j in range(n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        inside = np.linalg.norm(pts - center, axis=1) <= radius + 1e-12 * (1 + radius)
        pts = pts[inside]
        if pts.shape[0] == 0:
            return center.copy()
        best_t = pts[0]
        best_v = phi_value(x, pts[0])
        for t in pts[1:]:
            v = phi_value(x, t)
            if v > best_v:
                best_v = v
                best_t = t
        return np.array(best_t, float)

    def maximizer(x: Array) -> Array:
        t = _best_on_grid(x, center - radius, center + radius, resolution)
        width = 2.0 * radius / max(resolution - 1, 1)
        while width > 1e-12 * (1.0 + radius):
            lo = np.maximum(t - width, center - radius)
            hi = np.minimum(t + width, center + radius)
            t = _best_on_grid(x, lo, hi, 9)
            width *= 0.3
        # project any rounding excursion back onto the ball
        d = t - center
        norm = float(np.linalg.norm(d))
        if norm > radius:
            t = center + d * (radius / norm)
        return t

    return maximizer


# --------------------------------------------------------------------------
# Run configuration and traces
# --------------------------------------------------------------------------

class NextStepRule(str, enum.Enum):
    """How the outer iteration picks the next iterate among candidates.

    SURROGATE minimizes the linearized model value
    g(z_i) - <y_i, z_i - x> - h_i(x); FVALUE minimizes f(z_i) directly;
    PROX_REGULARIZED minimizes f(z_i) + mu/2 |z_i - x|^2.
    """

    SURROGATE = "surrogate"
    FVALUE = "fvalue"
    PROX_REGULARIZED = "prox_regularized"


class Termination(str, enum.Enum):
    STEP_AND_RESIDUAL_BELOW_TOL = "step_and_residual_below_tol"
    MAX_ITERS = "max_iters"
    DIVERGENCE_DETECTED = "divergence_detected"


DIVERGENCE_FLOOR = -1e15


@dataclass(frozen=True, eq=False)
class SolverConfig:
    """All tunables of the outer iterations.

    ``delta`` is the approximate-activity width; ``None`` resolves to
    1e-2 (1 + |h(x0)|) at run start.  ``k0`` is the exclusion window of
    the windowed selectors.  ``eps_schedule`` maps the iteration counter
    to the covering radius; ``None`` resolves to (R/2) / (k+1) for
    parameter balls and 0.5 / (k+1) for subgradient sampling.
    ``prox_weight`` is the proximal weight mu added to every inner
    subproblem.  ``sample_count`` is the number of subgradient samples the
    sampling selector draws per iteration.  ``validate_minorants`` turns
    on per-iteration tangency/minoration assertions (test suites).
    """

    delta: float | None = None
    k0: int = 2
    eps_schedule: Callable[[int], float] | None = None
    prox_weight: float = 0.0
    step3_rule: NextStepRule = NextStepRule.SURROGATE
    tol_step: float = 1e-8
    tol_stat: float = 1e-6
    tol_sub: float = 1e-10
    max_iters: int = 10_000
    seed: int = 0
    sample_count: int = 8
    validate_minorants: bool = False

    def __post_init__(self):
        if self.delta is not None and not self.delta > 0:
            raise InvalidSpecError("delta must be positive when given")
        if self.k0 < 0:
            raise InvalidSpecError("k0 must be nonnegative")
        if self.prox_weight < 0:
            raise InvalidSpecError("prox_weight must be nonnegative")
        for name in ("tol_step", "tol_stat", "tol_sub"):
            if not getattr(self, name) > 0:
                raise InvalidSpecError(f"{name} must be strictly positive")
        if self.max_iters < 1:
            raise InvalidSpecError("max_iters must be at least 1")
        if self.sample_count < 1:
            raise InvalidSpecError("sample_count must be at least 1")
        if self.seed < 0 or self.seed > 2**64 - 1:
            raise InvalidSpecError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True, eq=False)
class IterateRecord:
    """One row of a run trace.

    Record 0 is the starting point; record k >= 1 describes the iterate
    reached by outer iteration k, with ``step_norm`` the length of that
    step and ``index_set_size`` the size of the minorant family used.
    """

    k: int
    x: Array
    f_value: float
    step_norm: float
    index_set_size: int
    subproblems_solved: int
    chosen_index_tag: str
    wall_ns: int = 0

    def __post_init__(self):
        if not math.isfinite(self.f_value):
            raise SolverError(f"non-finite f value recorded at k={self.k}")
        if self.step_norm < 0:
            raise SolverError("step_norm must be nonnegative")


DESCENT_SLACK = 1e-10


@dataclass(frozen=True, eq=False)
class RunTrace:
    """Complete record of a solver run."""

    records: tuple[IterateRecord, ...]
    termination: Termination
    final_x: Array
    total_subproblems: int

    def __post_init__(self):
        if len(self.records) == 0:
            raise SolverError("a trace must contain at least the starting record")
        prev = self.records[0].f_value
        for rec in self.records[1:]:
            if rec.f_value > prev + DESCENT_SLACK:
                raise SolverError(
                    f"descent violated at k={rec.k}: {prev!r} -> {rec.f_value!r}"
                )
            prev = rec.f_value

    @property
    def f_values(self) -> Array:
        return np.array([r.f_value for r in self.records])

    @property
    def iterates(self) -> list[Array]:
        return [r.x for r in self.records]

    @property
    def iterations(self) -> int:
        return self.records[-1].k
