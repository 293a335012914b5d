"""Minorant-family selection strategies.

At each iterate x the driver needs a finite family of differentiable
convex minorants {h_i} with max_i h_i(x) = h(x) and h_i <= h everywhere.
Five strategies are implemented:

* ``singleton``: one tangent minorant built from a subgradient, the
  classical DCA choice (quadratic when a positive modulus is admissible,
  affine otherwise);
* ``full_active``: all delta-active members of a finite max;
* ``windowed``: delta-active members minus those selected during the last
  k0+1 iterations, plus the currently active member (finite max);
* ``param_cover``: an eps-net of the parameter ball, filtered to
  delta-active and recently-unused net points, plus the maximizer
  (parametric max);
* ``subgrad_sample``: sampled affine minorants from subgradients drawn in
  a delta-ball around the iterate, plus the tangent (general convex h).

Tags give each minorant a stable identity for the exclusion-window
bookkeeping: member indices for finite maxes and quantized coordinates
(grid 1e-9) for parameter or subgradient vectors.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from collections.abc import Callable, Iterable
from dataclasses import dataclass

import numpy as np

from .core import (
    Array,
    EuclideanBall,
    FiniteMaxH,
    GeneralConvexH,
    HOracle,
    InvalidSpecError,
    ParamMaxH,
    SolverConfig,
    SolverError,
    SolverWarning,
    TooManyCentersError,
    active_set,
    ensure_finite_value,
    ensure_finite_vector,
    fp_slack,
    h_value,
    maximizer_point,
)

_TAG_QUANTUM = 1e-9
_MAX_COVER_CENTERS = 1_000_000


# --------------------------------------------------------------------------
# Minorants and selector state
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Minorant:
    """One differentiable convex minorant of h with a stable identity tag."""

    tag: str
    value: Callable[[Array], float]
    grad: Callable[[Array], Array]
    modulus: float = 0.0


@dataclass(eq=False)
class SelectorState:
    """Mutable per-run selector bookkeeping.

    ``history`` is a ring buffer of the last k0+2 selected tag sets;
    ``rng`` drives the subgradient sampling selector.
    """

    history: deque
    rng: np.random.Generator

    @classmethod
    def create(cls, k0: int, rng: np.random.Generator | None = None) -> "SelectorState":
        return cls(history=deque(maxlen=k0 + 2),
                   rng=rng if rng is not None else np.random.default_rng(0))

    def push(self, tags: Iterable[str]) -> None:
        self.history.append(frozenset(tags))

    def recent_tags(self, count: int | None = None) -> set[str]:
        """Union of the most recent ``count`` tag sets (all when None)."""
        sets = list(self.history)
        if count is not None:
            sets = sets[-count:] if count > 0 else []
        out: set[str] = set()
        for s in sets:
            out |= s
        return out


def point_tag(t: Array) -> str:
    """Quantize a parameter/subgradient vector into an identity tag."""
    return ",".join(str(round(float(c) / _TAG_QUANTUM)) for c in np.atleast_1d(t))


def tag_point(tag: str) -> Array:
    """Recover the (quantized) coordinates behind a point tag."""
    return np.array([int(part) * _TAG_QUANTUM for part in tag.split(",")])


# --------------------------------------------------------------------------
# Minorant constructors
# --------------------------------------------------------------------------

def _member_minorant(h: FiniteMaxH, index1: int) -> Minorant:
    m = h.members[index1 - 1]
    return Minorant(tag=str(index1), value=m.value, grad=m.grad, modulus=m.modulus)


def _param_minorant(h: ParamMaxH, t: Array) -> Minorant:
    t = np.array(t, float)

    def value(z: Array, _t=t) -> float:
        return float(h.phi_value(z, _t))

    def grad(z: Array, _t=t) -> Array:
        return np.asarray(h.phi_grad_x(z, _t), float)

    return Minorant(tag=point_tag(t), value=value, grad=grad,
                    modulus=h.member_modulus)


def _affine_minorant(slope: Array, intercept: float) -> Minorant:
    slope = np.array(slope, float)

    def value(z: Array, _s=slope, _c=intercept) -> float:
        return float(_s @ z) + _c

    def grad(z: Array, _s=slope) -> Array:
        return _s.copy()

    return Minorant(tag=point_tag(slope), value=value, grad=grad, modulus=0.0)


# --------------------------------------------------------------------------
# Singleton (DCA) selection
# --------------------------------------------------------------------------

def _probe_points(x: Array, rng_seed: int = 0x5EED) -> list[Array]:
    """Deterministic probe points on rays around x for minoration checks."""
    x = np.asarray(x, float)
    n = x.size
    scale = 1.0 + float(np.linalg.norm(x))
    dirs: list[Array] = []
    for j in range(min(n, 8)):
        e = np.zeros(n)
        e[j] = 1.0
        dirs.append(e)
        dirs.append(-e)
    rng = np.random.default_rng(rng_seed)
    for _ in range(16):
        u = rng.standard_normal(n)
        nrm = float(np.linalg.norm(u))
        if nrm > 0:
            dirs.append(u / nrm)
    radii = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0]
    return [x + (r * scale) * d for d in dirs for r in radii]


def _minorizes(h: HOracle, minorant: Minorant, x: Array) -> bool:
    for z in _probe_points(x):
        hz = h_value(h, z)
        if minorant.value(z) > hz + 1e-9 * (1.0 + abs(hz)):
            return False
    return True


def select_singleton(h: HOracle, x_k: Array, y_k: Array, rho: float = 0.0) -> list[Minorant]:
    """One tangent minorant m(z) = rho/2 |z-x|^2 + <y, z-x> + h(x).

    ``y_k`` must be a subgradient of h at ``x_k``.  A positive ``rho`` is
    admissible only when h is rho-strongly convex; the candidate quadratic
    is probed against h on a deterministic grid of rays and, on any
    violation, the selection falls back to the affine tangent (rho = 0)
    with a warning.
    """
    x_k = np.array(x_k, float)
    y_k = np.array(y_k, float)
    hx = h_value(h, x_k)

    def build(r: float) -> Minorant:
        def value(z: Array, _r=r) -> float:
            d = z - x_k
            return 0.5 * _r * float(d @ d) + float(y_k @ d) + hx

        def grad(z: Array, _r=r) -> Array:
            return _r * (z - x_k) + y_k

        return Minorant(tag=point_tag(y_k), value=value, grad=grad, modulus=r)

    if rho < 0:
        raise InvalidSpecError("rho must be nonnegative")
    if rho > 0:
        cand = build(rho)
        if not _minorizes(h, cand, x_k):
            warnings.warn(
                "quadratic tangent with the requested modulus is not a global "
                "minorant of h; falling back to the affine tangent",
                SolverWarning,
                stacklevel=2,
            )
            rho = 0.0
        else:
            return [cand]
    return [build(rho)]


# --------------------------------------------------------------------------
# Finite-max selections
# --------------------------------------------------------------------------

def select_full_active(h: FiniteMaxH, x_k: Array, delta: float) -> list[Minorant]:
    """All delta-active members, tagged by their 1-based index."""
    if not delta > 0:
        raise InvalidSpecError("delta must be positive")
    return [_member_minorant(h, i) for i in active_set(h, x_k, delta)]


def select_windowed(h: FiniteMaxH, x_k: Array, cfg: SolverConfig,
                    state: SelectorState) -> list[Minorant]:
    """Delta-active members not used in the last k0+1 selections, plus the
    currently active member (smallest exactly-active index), which is
    always re-included so the family is never empty."""
    if cfg.delta is None:
        raise InvalidSpecError("delta must be resolved before selection")
    approx = active_set(h, x_k, cfg.delta)
    current = active_set(h, x_k, 0.0)[0]
    excluded = state.recent_tags(cfg.k0 + 1)
    indices = [i for i in approx if str(i) not in excluded]
    if current not in indices:
        indices.append(current)
    indices.sort()
    state.push(str(i) for i in indices)
    return [_member_minorant(h, i) for i in indices]


# --------------------------------------------------------------------------
# Coverings of Euclidean balls
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Covering:
    """Centers of eps-balls jointly covering a target ball."""

    centers: Array  # (count, dim)
    radius: float

    @property
    def count(self) -> int:
        return int(self.centers.shape[0])


def cover_ball(center: Array, radius: float, eps: float) -> Covering:
    """Axis-aligned grid covering of the ball B(center, radius) by eps-balls.

    Grid spacing is 2 eps / sqrt(N), restricted to the ball dilated by
    eps, which guarantees every point of the target ball lies within eps
    of some center.  Deterministic; raises TooManyCentersError when the
    predicted center count exceeds 1e6.
    """
    center = np.atleast_1d(np.asarray(center, float))
    n = center.size
    if n > 6:
        raise InvalidSpecError("ball coverings support at most 6 dimensions")
    if not (0 < eps <= 2 * radius):
        raise InvalidSpecError("need 0 < eps <= 2 * radius")
    spacing = 2.0 * eps / math.sqrt(n)
    kmax = int(math.floor((radius + eps) / spacing))
    predicted = (2 * kmax + 1) ** n
    if predicted > _MAX_COVER_CENTERS:
        raise TooManyCentersError(
            f"covering would need ~{predicted} centers (limit {_MAX_COVER_CENTERS})"
        )
    axis = np.arange(-kmax, kmax + 1, dtype=float) * spacing
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1) + center
    keep = np.linalg.norm(pts - center, axis=1) <= radius + eps + 1e-12 * (1 + radius)
    return Covering(centers=pts[keep], radius=eps)


def _default_eps(k: int, scale: float) -> float:
    return (scale / 2.0) / (k + 1)


def _excluded_points(state: SelectorState) -> Array | None:
    """Parameter points behind every tag in the exclusion buffer."""
    pts = []
    for tag in state.recent_tags(None):
        try:
            pts.append(tag_point(tag))
        except ValueError:
            continue
    if not pts:
        return None
    return np.stack(pts, axis=0)


def select_param_cover(h: ParamMaxH, x_k: Array, k: int, cfg: SolverConfig,
                       state: SelectorState) -> list[Minorant]:
    """Eps-net selection for a parametric max over a ball.

    Builds an eps_k-cover of the parameter ball, drops net centers whose
    eps_k-ball contains a recently selected parameter, keeps the
    delta-active survivors, and always includes the maximizer of phi(x, .)
    at the current iterate.
    """
    if cfg.delta is None:
        raise InvalidSpecError("delta must be resolved before selection")
    eps_k = (cfg.eps_schedule(k) if cfg.eps_schedule is not None
             else _default_eps(k, h.domain.radius))
    eps_k = min(eps_k, 2.0 * h.domain.radius)
    if not eps_k > 0:
        raise InvalidSpecError("eps schedule must stay positive")

    t_star = maximizer_point(h, x_k)
    hx = ensure_finite_value(h.phi_value(x_k, t_star), "phi at maximizer")
    cov = cover_ball(h.domain.center, h.domain.radius, eps_k)

    recent = _excluded_points(state)
    centers = cov.centers
    if recent is not None and centers.shape[0] > 0:
        dists = np.linalg.norm(centers[:, None, :] - recent[None, :, :], axis=2)
        centers = centers[np.all(dists > eps_k, axis=1)]

    threshold = hx - cfg.delta - fp_slack(hx)
    chosen: dict[str, Minorant] = {}
    for t in centers:
        if ensure_finite_value(h.phi_value(x_k, t), "phi at net point") >= threshold:
            m = _param_minorant(h, t)
            chosen[m.tag] = m
    tangent = _param_minorant(h, t_star)
    chosen[tangent.tag] = tangent

    tags = sorted(chosen)
    state.push(tags)
    return [chosen[tag] for tag in tags]


# --------------------------------------------------------------------------
# Sampled affine minorants for general convex h
# --------------------------------------------------------------------------

def _uniform_in_ball(rng: np.random.Generator, center: Array, radius: float) -> Array:
    n = center.size
    u = rng.standard_normal(n)
    nrm = float(np.linalg.norm(u))
    if nrm == 0.0:
        return center.copy()
    r = radius * rng.uniform() ** (1.0 / n)
    return center + (r / nrm) * u


def select_subgrad_sample(h: GeneralConvexH, x_k: Array, k: int, cfg: SolverConfig,
                          state: SelectorState) -> list[Minorant]:
    """Sampled affine minorants of a general continuous convex h.

    Draws ``sample_count`` points uniformly in the delta-ball around the
    iterate; each sampled subgradient t at z yields the exact affine
    minorant a(w) = <t, w> - (<t, z> - h(z)).  Samples are kept when they
    are delta-active at the iterate and their slope is not within eps_k of
    a recently selected slope.  The tangent at the iterate is always
    included.  All draws happen before filtering, so the random stream
    advances identically regardless of which samples survive.
    """
    if cfg.delta is None:
        raise InvalidSpecError("delta must be resolved before selection")
    eps_k = (cfg.eps_schedule(k) if cfg.eps_schedule is not None
             else _default_eps(k, 1.0))
    x_k = np.asarray(x_k, float)
    hx = ensure_finite_value(h.value(x_k), "h")
    n = x_k.size

    samples = [_uniform_in_ball(state.rng, x_k, cfg.delta)
               for _ in range(cfg.sample_count)]

    t_star = ensure_finite_vector(h.subgrad(x_k), n, "subgrad")
    tangent = _affine_minorant(t_star, hx - float(t_star @ x_k))

    recent = _excluded_points(state)
    threshold = hx - cfg.delta - fp_slack(hx)
    chosen: dict[str, Minorant] = {}
    for z in samples:
        t = ensure_finite_vector(h.subgrad(z), n, "subgrad")
        hz = ensure_finite_value(h.value(z), "h")
        m = _affine_minorant(t, hz - float(t @ z))
        if m.value(x_k) < threshold:
            continue
        if recent is not None:
            if np.any(np.linalg.norm(recent - t[None, :], axis=1) <= eps_k):
                continue
        chosen[m.tag] = m
    chosen[tangent.tag] = tangent

    tags = sorted(chosen)
    state.push(tags)
    return [chosen[tag] for tag in tags]


# --------------------------------------------------------------------------
# Contract validation (debug assertions)
# --------------------------------------------------------------------------

def check_minorant_family(h: HOracle, x_k: Array, minorants: list[Minorant],
                          rng: np.random.Generator, probes: int = 100) -> None:
    """Assert tangency and global minoration of a selected family.

    Tangency: the family max at x_k matches h(x_k) within relative 1e-10.
    Minoration: every minorant stays below h (within 1e-9) at ``probes``
    random points around x_k.  Raises SolverError on violation.
    """
    x_k = np.asarray(x_k, float)
    hx = h_value(h, x_k)
    best = max(m.value(x_k) for m in minorants)
    if abs(best - hx) > 1e-10 * (1.0 + abs(hx)):
        raise SolverError(
            f"minorant tangency violated: family max {best!r} vs h {hx!r}"
        )
    n = x_k.size
    scale = 1.0 + float(np.linalg.norm(x_k))
    for _ in range(probes):
        u = rng.standard_normal(n)
        nrm = float(np.linalg.norm(u))
        if nrm == 0.0:
            continue
        radius = scale * 10.0 ** rng.uniform(-2.0, 1.0)
        z = x_k + (radius / nrm) * u
        hz = h_value(h, z)
        for m in minorants:
            if m.value(z) > hz + 1e-9 + 1e-12 * abs(hz):
                raise SolverError(
                    f"minorant {m.tag} exceeds h at a probe point: "
                    f"{m.value(z)!r} > {hz!r}"
                )
