"""Shared numerical layer: special functions, adaptive quadrature, RNG streams.

Everything here is deterministic given its inputs. Quadrature follows a fixed
refinement policy so repeated runs give bit-identical results.
"""
from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "QuadratureSpec",
    "QuadratureResult",
    "QuadratureError",
    "DEFAULT_QUADRATURE",
    "elliptic_K",
    "log_gamma",
    "gamma_moment",
    "integrate_1d",
    "integrate_2d_unit_square",
    "RngStream",
    "sample_gamma",
]


class QuadratureError(RuntimeError):
    """Raised when an integrand misbehaves (NaN/inf at an evaluation point)."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and refinement limits for the adaptive integrators."""

    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_subdivisions: int = 1 << 16
    rule_order: int = 15

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")
        if self.rule_order < 2:
            raise ValueError("rule_order must be >= 2")


DEFAULT_QUADRATURE = QuadratureSpec()


@dataclass(frozen=True)
class QuadratureResult:
    """Value plus an error estimate; ``converged`` is never silently false."""

    value: float
    error: float
    converged: bool
    panels: int = 0

    def __float__(self):
        return self.value


# ---------------------------------------------------------------------------
# special functions

def elliptic_K(m: float) -> float:
    """Complete elliptic integral of the first kind, modulus convention.

    K(m) = integral_0^{pi/2} dtheta / sqrt(1 - m^2 sin^2 theta).

    The argument is the modulus m, not the parameter m^2; callers used to
    scipy.special.ellipk must square-root their argument first. Computed by
    the arithmetic-geometric mean, K = pi / (2 AGM(1, sqrt(1-m^2))).
    """
    if not (0.0 <= m < 1.0):
        raise ValueError(f"elliptic_K requires 0 <= m < 1, got {m!r}")
    # (1-m)(1+m) avoids cancellation in 1-m^2 for m near 1
    a = 1.0
    b = math.sqrt((1.0 - m) * (1.0 + m))
    for _ in range(64):
        if abs(a - b) <= 2e-16 * a:
            break
        a, b = 0.5 * (a + b), math.sqrt(a * b)
    return math.pi / (a + b)


def _elliptic_K_array(m: np.ndarray) -> np.ndarray:
    # vectorized AGM for quadrature hot paths; same iteration as elliptic_K
    m = np.asarray(m, dtype=float)
    if np.any(m < 0.0) or np.any(m >= 1.0):
        bad = m[(m < 0.0) | (m >= 1.0)]
        raise ValueError(f"elliptic_K requires 0 <= m < 1, got {bad[:4]!r}")
    a = np.ones_like(m)
    b = np.sqrt((1.0 - m) * (1.0 + m))
    for _ in range(64):
        if np.all(np.abs(a - b) <= 2e-16 * a):
            break
        a, b = 0.5 * (a + b), np.sqrt(a * b)
    return np.pi / (a + b)


def log_gamma(x: float) -> float:
    """log Gamma(x) for x > 0."""
    if not x > 0:
        raise ValueError(f"log_gamma requires x > 0, got {x!r}")
    return math.lgamma(x)


def gamma_moment(shape: float, power: float) -> float:
    """E[X^power] for X ~ Gamma(shape, 1): Gamma(shape+power)/Gamma(shape)."""
    if shape + power <= 0:
        raise ValueError("moment does not exist")
    return math.exp(math.lgamma(shape + power) - math.lgamma(shape))


# ---------------------------------------------------------------------------
# adaptive quadrature

@lru_cache(maxsize=16)
def _gauss_rule(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def _wrap_vectorized(f: Callable, probe: float) -> Callable:
    """Return a version of f that maps ndarray -> ndarray of the same shape."""
    try:
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore")
            out = np.asarray(f(np.asarray([probe])), dtype=float)
        if out.shape == (1,):
            return f
    except Exception:
        pass

    def looped(xs):
        return np.array([float(f(float(x))) for x in xs])

    return looped


def _gauss_or_pole(fv, a, b, nodes, weights):
    """Gauss estimate over [a, b], or the location of a non-finite node.

    Returns (value, None) normally. If the integrand comes back non-finite
    at some node (an odd-order rule samples the panel center, so a panel
    symmetric around an integrable pole hits it exactly), returns
    (None, x_bad) so the caller can split the panel AT the pole, turning it
    into a panel edge the open rule never samples.
    """
    h = 0.5 * (b - a)
    xs = a + h * (nodes + 1.0)
    with np.errstate(all="ignore"):
        ys = np.asarray(fv(xs), dtype=float)
    finite = np.isfinite(ys)
    if finite.all():
        return h * float(weights @ ys), None
    return None, float(xs[int(np.argmax(~finite))])


def _segment_tasks(fv: Callable, a: float, b: float, cuts: Sequence[float]):
    """Split (a, b) at the cut points and fold cut-adjacent segments.

    A segment touching a cut point c is integrated under the substitution
    x = c ± u², which (1) turns an inverse-square-root divergence at c into
    a bounded integrand and (2) moves the hard point to u = 0, where floats
    are dense enough for bisection to resolve any integrable remainder.
    Plain segments keep the identity map. Returns [(callable, lo, hi)] in
    left-to-right order of the underlying x-intervals.
    """

    def fold_left(c):
        # x in (c, c+L) as x = c + u^2; when u^2 underflows the spacing at c
        # the evaluation snaps to the first representable point past c, which
        # keeps an inverse-square-root divergence bounded by its true scale
        floor = np.nextafter(c, math.inf)

        def g(us):
            us = np.asarray(us, dtype=float)
            return 2.0 * us * np.asarray(fv(np.maximum(c + us * us, floor)), dtype=float)

        return g

    def fold_right(c):
        # x in (c-L, c) as x = c - u^2; u decreasing keeps orientation
        floor = np.nextafter(c, -math.inf)

        def g(us):
            us = np.asarray(us, dtype=float)
            return 2.0 * us * np.asarray(fv(np.minimum(c - us * us, floor)), dtype=float)

        return g

    tasks = []
    edges = [a] + list(cuts) + [b]
    is_cut = [False] + [True] * len(cuts) + [False]
    for i in range(len(edges) - 1):
        lo, hi, lcut, rcut = edges[i], edges[i + 1], is_cut[i], is_cut[i + 1]
        if hi <= lo:
            continue
        if lcut and rcut:
            mid = 0.5 * (lo + hi)
            tasks.append((fold_left(lo), 0.0, math.sqrt(mid - lo)))
            tasks.append((fold_right(hi), 0.0, math.sqrt(hi - mid)))
        elif lcut:
            tasks.append((fold_left(lo), 0.0, math.sqrt(hi - lo)))
        elif rcut:
            tasks.append((fold_right(hi), 0.0, math.sqrt(hi - lo)))
        else:
            tasks.append((fv, lo, hi))
    return tasks


def integrate_1d(
    f: Callable,
    a: float,
    b: float,
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
    points: Sequence[float] = (),
) -> QuadratureResult:
    """Adaptive Gauss quadrature of f over (a, b).

    Bisects the panel with the largest error estimate until the summed
    estimate meets max(abs_tol, rel_tol * |value|) or the subdivision budget
    runs out, in which case the result is flagged non-converged rather than
    returned silently. Endpoint singularities are fine (the Gauss rule is
    open). ``points`` lists known interior singular or kink locations; the
    integrator folds the adjacent segments around each one, so integrable
    divergences there converge to full tolerance.
    """
    if a == b:
        return QuadratureResult(0.0, 0.0, True, 0)
    sign = 1.0
    if b < a:
        a, b = b, a
        sign = -1.0

    nodes, weights = _gauss_rule(spec.rule_order)
    fv = _wrap_vectorized(f, a + 0.61803398875 * (b - a))
    cuts = []
    for p in sorted({float(p) for p in points if a < p < b}):
        # near-coincident cuts would create segments with no representable
        # interior between the folds; keep the leftmost of each cluster
        if not cuts or p - cuts[-1] > 8.0 * np.spacing(max(abs(p), abs(cuts[-1]))):
            cuts.append(p)
    tasks = _segment_tasks(fv, a, b, cuts)

    # panel entries: (-err, task_id, lo, hi, g_left_half, g_right_half);
    # value is the two-half sum, err compares against the one-panel estimate
    heap = []
    total_value = 0.0
    total_error = 0.0
    stalled_error = 0.0
    splits = 0

    def push(task_id, lo, hi, whole, depth=0):
        nonlocal total_value, total_error, splits
        if depth > 100 or hi - lo < 1e-280:
            raise QuadratureError(
                "integrand non-finite on a shrinking neighborhood near "
                f"x={lo!r}; pass the singular location via points=[...]"
            )
        def split_at(u, v, d):
            # a sub-interval pinched below float spacing has no interior
            # nodes left to probe; its mass is below any achievable tolerance
            if v - u > 4.0 * np.spacing(max(abs(u), abs(v))):
                push(task_id, u, v, None, d)

        g = tasks[task_id][0]
        if whole is None:
            whole, pole = _gauss_or_pole(g, lo, hi, nodes, weights)
            if pole is not None:
                split_at(lo, pole, depth + 1)
                split_at(pole, hi, depth + 1)
                return
        mid = 0.5 * (lo + hi)
        gl, pl = _gauss_or_pole(g, lo, mid, nodes, weights)
        if pl is not None:
            split_at(lo, pl, depth + 1)
            split_at(pl, mid, depth + 1)
            split_at(mid, hi, depth + 1)
            return
        gr, pr = _gauss_or_pole(g, mid, hi, nodes, weights)
        if pr is not None:
            push(task_id, lo, mid, gl, depth + 1)
            split_at(mid, pr, depth + 1)
            split_at(pr, hi, depth + 1)
            return
        fine = gl + gr
        err = abs(fine - whole)
        total_value += fine
        total_error += err
        splits += 1
        heapq.heappush(heap, (-err, task_id, lo, hi, gl, gr))

    for tid, (_, lo, hi) in enumerate(tasks):
        push(tid, lo, hi, None)

    stalled = []
    while heap and splits < spec.max_subdivisions:
        tol = max(spec.abs_tol, spec.rel_tol * abs(total_value))
        if total_error <= tol:
            break
        if stalled_error > tol:
            break  # unsplittable panels alone exceed tolerance; give up honestly
        neg_err, tid, lo, hi, gl, gr = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        if not (lo < mid < hi):
            # midpoint not representable between the endpoints
            stalled.append((neg_err, tid, lo, hi, gl, gr))
            stalled_error += -neg_err
            continue
        total_value -= gl + gr
        total_error -= -neg_err
        push(tid, lo, mid, gl)
        push(tid, mid, hi, gr)

    # ordered re-sum for a reproducible, roundoff-tight final value
    panels = sorted(heap + stalled, key=lambda p: (p[1], p[2]))
    value = math.fsum(g for p in panels for g in (p[4], p[5]))
    error = math.fsum(-p[0] for p in panels)
    converged = error <= max(spec.abs_tol, spec.rel_tol * abs(value))
    return QuadratureResult(sign * value, error, converged, len(panels))


_CURVE_NAMES = frozenset(
    {"edges", "diagonal", "anti-diagonal", "alpha-mid", "beta-mid", "midlines"}
)


def integrate_2d_unit_square(
    f: Callable,
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
    singular_curves: Iterable[str] = (),
) -> QuadratureResult:
    """Adaptive quadrature of f(alpha, beta) over the open unit square.

    Realized as iterated adaptive 1D integration (outer alpha, inner beta):
    every supported singular curve maps to split points of the two 1D passes,
    so refinement concentrates exactly along the flagged loci.

    singular_curves may contain: "diagonal" (beta = alpha), "anti-diagonal"
    (beta = 1 - alpha), "alpha-mid"/"beta-mid"/"midlines" (the center lines),
    and "edges" (a no-op: the domain boundary is already a panel boundary).
    f must accept numpy arrays in its second argument for speed; scalar
    functions are wrapped automatically.
    """
    curves = set(singular_curves)
    unknown = curves - _CURVE_NAMES
    if unknown:
        raise ValueError(f"unknown singular curves {sorted(unknown)}; "
                         f"supported: {sorted(_CURVE_NAMES)}")
    if "midlines" in curves:
        curves |= {"alpha-mid", "beta-mid"}

    inner_spec = QuadratureSpec(
        abs_tol=max(spec.abs_tol * 0.25, 1e-14),
        rel_tol=max(spec.rel_tol * 0.25, 1e-14),
        max_subdivisions=spec.max_subdivisions,
        rule_order=spec.rule_order,
    )

    inner_state = {"max_err": 0.0, "all_converged": True}

    def outer_integrand(alpha: float) -> float:
        cuts = []
        if "diagonal" in curves:
            cuts.append(alpha)
        if "anti-diagonal" in curves:
            cuts.append(1.0 - alpha)
        if "beta-mid" in curves:
            cuts.append(0.5)
        res = integrate_1d(lambda bs: f(alpha, bs), 0.0, 1.0, inner_spec, cuts)
        inner_state["max_err"] = max(inner_state["max_err"], res.error)
        inner_state["all_converged"] &= res.converged
        return res.value

    outer_cuts = [0.5] if "alpha-mid" in curves else []
    outer = integrate_1d(outer_integrand, 0.0, 1.0, spec, outer_cuts)
    # inner errors integrate against unit outer measure; bound by the worst one
    error = outer.error + inner_state["max_err"]
    converged = outer.converged and inner_state["all_converged"]
    return QuadratureResult(outer.value, error, converged, outer.panels)


# ---------------------------------------------------------------------------
# random streams

@dataclass
class RngStream:
    """Reproducible PCG64 stream; distinct stream_ids are independent."""

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        object.__setattr__(self, "_gen", np.random.Generator(np.random.PCG64(ss)))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def substream(self, index: int) -> "RngStream":
        """Derived independent stream; used for per-replica / per-batch RNG."""
        ss = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.stream_id, index)
        )
        child = object.__new__(RngStream)
        child.seed = self.seed
        child.stream_id = self.stream_id
        object.__setattr__(child, "_gen", np.random.Generator(np.random.PCG64(ss)))
        return child

    def random(self, size=None):
        return self._gen.random(size)


def sample_gamma(shape: float, scale: float, rng: RngStream, size=None):
    """Gamma(shape, scale) draw(s): density x^{shape-1} e^{-x/scale}."""
    if not (shape > 0 and scale > 0):
        raise ValueError("shape and scale must be positive")
    gen = rng.generator if isinstance(rng, RngStream) else rng
    return gen.gamma(shape, scale, size)
