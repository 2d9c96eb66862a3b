"""Pair-exchange rate kernels in reduced form.

A kernel is stored as its reduced evaluation on the unit-energy pair simplex,
w(alpha, beta) = W(alpha, 1-alpha | beta, 1-beta), together with the cell
dimension d. The full rate for an (energy_a, energy_b) pair follows from
scale covariance: W = w(e_a/s, (e_a-eta)/s) / sqrt(s), s = e_a + e_b.

Built-ins: the two hard-particle kernels (gg2, gg3), the square-root-exchange
gradient kernel (root-eta), a uniform test kernel, and a deliberately broken
fixture (broken-alpha) for negative-control tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .numerics import RngStream, _elliptic_K_array, elliptic_K

__all__ = [
    "Kernel",
    "ConditionReport",
    "make_kernel",
    "custom_kernel",
    "eval_W",
    "eval_tilde",
    "check_conditions",
    "BUILTIN_KERNELS",
]

BUILTIN_KERNELS = ("gg2", "gg3", "root-eta", "uniform")
# negative-control fixtures, constructible but excluded from "all kernels" sweeps
FIXTURE_KERNELS = ("broken-alpha",)


@dataclass(frozen=True)
class Kernel:
    """Immutable kernel: reduced evaluator plus declared trouble curves.

    singular_loci lists curves where the reduced kernel genuinely diverges
    (evaluation there raises); crease_loci lists curves where it is finite
    but only piecewise smooth. Quadrature pre-splits along both.
    """

    name: str
    d: int
    reduced_eval: Callable = field(repr=False)
    singular_loci: tuple = ()
    crease_loci: tuple = ()
    closed_form_nu_bar: Optional[Callable] = field(default=None, repr=False)

    @property
    def split_curves(self) -> tuple:
        return tuple(self.singular_loci) + tuple(self.crease_loci)

    def tilde(self, alpha, beta):
        """The symmetrized form w(alpha,beta) * (alpha(1-alpha))^{d/2-1}."""
        a = np.asarray(alpha, dtype=float)
        w = self.reduced_eval(alpha, beta)
        if self.d == 2:
            return w
        return w * (a * (1.0 - a)) ** (0.5 * self.d - 1.0)


def _as_arrays(alpha, beta):
    a = np.asarray(alpha, dtype=float)
    b = np.asarray(beta, dtype=float)
    return np.broadcast_arrays(a, b)


# --- reduced evaluators -----------------------------------------------------

_GG2_PREF = math.sqrt(2.0 / math.pi**3)
_GG3_PREF = math.sqrt(math.pi / 8.0)
# largest modulus the elliptic routine accepts; rounding guard for the clamp
_K_SAFE = float(np.nextafter(1.0, 0.0))


def _gg2_reduced(alpha, beta):
    # returns +inf exactly on alpha + beta = 1 so quadrature can pole-split
    a, b = _as_arrays(alpha, beta)
    m = np.minimum.reduce([a, 1.0 - a, b, 1.0 - b])
    big = np.maximum(np.minimum(a, b), np.minimum(1.0 - a, 1.0 - b))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.minimum(m / big, 1.0)
        k_val = np.where(ratio < 1.0, _elliptic_K_array(np.minimum(np.sqrt(ratio), _K_SAFE)), np.inf)
        return _GG2_PREF / np.sqrt(big) * k_val


def _gg3_reduced(alpha, beta):
    a, b = _as_arrays(alpha, beta)
    m = np.minimum.reduce([a, 1.0 - a, b, 1.0 - b])
    return _GG3_PREF * np.sqrt(m) / np.sqrt(a * (1.0 - a))


def _root_eta_reduced(alpha, beta):
    # +inf on alpha = beta (integrable inverse-square-root divergence)
    a, b = _as_arrays(alpha, beta)
    gap = np.abs(a - b)
    with np.errstate(divide="ignore"):
        return 1.0 / np.sqrt(gap)


def _uniform_reduced(alpha, beta):
    a, b = _as_arrays(alpha, beta)
    return np.ones_like(a)


def _broken_alpha_reduced(alpha, beta):
    a, b = _as_arrays(alpha, beta)
    return a.copy()


def _gg3_nu_bar(alpha):
    a = np.asarray(alpha, dtype=float)
    m = np.minimum(a, 1.0 - a)
    integral = (4.0 / 3.0) * m ** 1.5 + (1.0 - 2.0 * m) * np.sqrt(m)
    return _GG3_PREF * integral / np.sqrt(a * (1.0 - a))


def _root_eta_nu_bar(alpha):
    a = np.asarray(alpha, dtype=float)
    return 2.0 * (np.sqrt(a) + np.sqrt(1.0 - a))


# --- raw piecewise forms (cross-check path only) ----------------------------

def _gg2_eval_W_raw(e_a: float, e_b: float, eta: float) -> float:
    """gg2 rate from the three-branch piecewise form in energy variables.

    Independent of the reduced min/max composition; kept to cross-check it.
    Stated for e_a <= e_b and extended by the pair-swap symmetry
    W(e_a, e_b | ...) = W(e_b, e_a | e_b + eta, e_a - eta).
    """
    if e_a > e_b:
        return _gg2_eval_W_raw(e_b, e_a, -eta)
    if not (-e_b < eta < e_a):
        raise ValueError("eta outside the admissible exchange window")
    if eta < e_a - e_b:
        val = elliptic_K(math.sqrt((e_b + eta) / e_a)) / math.sqrt(e_a)
    elif eta < 0.0:
        val = elliptic_K(math.sqrt(e_a / (e_b + eta))) / math.sqrt(e_b + eta)
    else:
        val = elliptic_K(math.sqrt((e_a - eta) / e_b)) / math.sqrt(e_b)
    return _GG2_PREF * val


def _gg3_eval_W_raw(e_a: float, e_b: float, eta: float) -> float:
    """gg3 rate from its three-branch piecewise form (cross-check path)."""
    if not (-e_b < eta < e_a):
        raise ValueError("eta outside the admissible exchange window")
    lo = min(0.0, e_a - e_b)
    hi = max(0.0, e_a - e_b)
    if eta < lo:
        val = math.sqrt((e_b + eta) / (e_a * e_b))
    elif eta <= hi:
        val = math.sqrt(1.0 / max(e_a, e_b))
    else:
        val = math.sqrt((e_a - eta) / (e_a * e_b))
    return _GG3_PREF * val


# --- construction -----------------------------------------------------------

@lru_cache(maxsize=None)
def make_kernel(name: str) -> Kernel:
    """Look up a kernel by name. Returns a shared immutable instance."""
    if name == "gg2":
        return Kernel(
            name="gg2",
            d=2,
            reduced_eval=_gg2_reduced,
            singular_loci=("anti-diagonal",),
            crease_loci=("diagonal", "alpha-mid", "beta-mid"),
        )
    if name == "gg3":
        return Kernel(
            name="gg3",
            d=3,
            reduced_eval=_gg3_reduced,
            singular_loci=(),
            crease_loci=("diagonal", "anti-diagonal", "alpha-mid", "beta-mid"),
            closed_form_nu_bar=_gg3_nu_bar,
        )
    if name == "root-eta":
        return Kernel(
            name="root-eta",
            d=2,
            reduced_eval=_root_eta_reduced,
            singular_loci=("diagonal",),
            closed_form_nu_bar=_root_eta_nu_bar,
        )
    if name == "uniform":
        return Kernel(
            name="uniform",
            d=2,
            reduced_eval=_uniform_reduced,
            closed_form_nu_bar=lambda a: np.ones_like(np.asarray(a, dtype=float)),
        )
    if name == "broken-alpha":
        # violates exchange symmetry; exists to prove the checker catches it
        return Kernel(
            name="broken-alpha",
            d=2,
            reduced_eval=_broken_alpha_reduced,
            closed_form_nu_bar=lambda a: np.asarray(a, dtype=float).copy(),
        )
    known = ", ".join(BUILTIN_KERNELS + FIXTURE_KERNELS)
    raise ValueError(f"unknown kernel {name!r}; known kernels: {known}")


def custom_kernel(
    name: str,
    d: int,
    reduced: Callable,
    singular_loci: tuple = (),
    crease_loci: tuple = (),
    closed_form_nu_bar: Optional[Callable] = None,
) -> Kernel:
    """Wrap a user-supplied reduced evaluator (used by the CLI config parser)."""
    if d < 1:
        raise ValueError("d must be a positive integer")
    return Kernel(
        name=name,
        d=int(d),
        reduced_eval=reduced,
        singular_loci=tuple(singular_loci),
        crease_loci=tuple(crease_loci),
        closed_form_nu_bar=closed_form_nu_bar,
    )


# --- evaluation -------------------------------------------------------------

def eval_W(k: Kernel, e_a: float, e_b: float, eta: float) -> float:
    """Full exchange rate for a pair at (e_a, e_b) moving eta off site a."""
    if not (e_a > 0 and e_b > 0):
        raise ValueError("energies must be positive")
    if not (-e_b < eta < e_a):
        raise ValueError(
            f"eta={eta!r} outside (-e_b, e_a) = ({-e_b!r}, {e_a!r}): "
            "the exchange would drive an energy negative"
        )
    s = e_a + e_b
    w = float(k.reduced_eval(e_a / s, (e_a - eta) / s)) / math.sqrt(s)
    if not math.isfinite(w):
        raise ValueError(
            f"rate diverges at (e_a={e_a!r}, e_b={e_b!r}, eta={eta!r}): the "
            f"point lies on a divergent curve of kernel {k.name!r}"
        )
    return w


def _on_curve(curve: str, alpha: float, beta: float) -> bool:
    if curve == "diagonal":
        return alpha == beta
    if curve == "anti-diagonal":
        return alpha + beta == 1.0
    if curve == "alpha-mid":
        return alpha == 0.5
    if curve == "beta-mid":
        return beta == 0.5
    return False


def eval_tilde(k: Kernel, alpha: float, beta: float) -> float:
    """Symmetrized reduced kernel at a single point off the divergent curves."""
    if not (0.0 < alpha < 1.0 and 0.0 < beta < 1.0):
        raise ValueError("alpha and beta must lie in the open unit interval")
    for curve in k.singular_loci:
        if _on_curve(curve, alpha, beta):
            raise ValueError(
                f"({alpha}, {beta}) lies on the divergent curve {curve!r} of "
                f"kernel {k.name!r}"
            )
    t = float(k.tilde(alpha, beta))
    if not math.isfinite(t):
        raise ValueError(
            f"({alpha}, {beta}) lies on a divergent curve of kernel {k.name!r}"
        )
    return t


# --- condition checking -----------------------------------------------------

@dataclass(frozen=True)
class ConditionReport:
    """Worst sampled residuals of the three defining kernel conditions."""

    residuals: dict
    passes: dict
    n_samples: int
    n_skipped: int
    tol: float

    @property
    def all_pass(self) -> bool:
        return all(self.passes.values())

    def to_dict(self) -> dict:
        return {
            "residuals": dict(self.residuals),
            "passes": dict(self.passes),
            "n_samples": self.n_samples,
            "n_skipped": self.n_skipped,
            "tol": self.tol,
            "all_pass": self.all_pass,
        }


_CONDITIONS = ("homogeneity", "exchange_symmetry", "detailed_balance")


def check_conditions(
    k: Kernel,
    n: int = 10_000,
    tol: float = 1e-9,
    rng: Optional[RngStream] = None,
) -> ConditionReport:
    """Sample-based residuals of scale covariance, exchange symmetry, and
    detailed balance. Samples where the kernel cannot be evaluated (e.g. a
    draw landing on a divergent curve) are skipped and counted.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng or RngStream(0)
    gen = rng.generator
    skipped = 0
    worst = dict.fromkeys(_CONDITIONS, 0.0)
    tiny = 1e-300

    # scale covariance: compare eval_W at scaled and unscaled arguments
    e_a = gen.exponential(1.0, n) + 1e-12
    e_b = gen.exponential(1.0, n) + 1e-12
    u = gen.random(n)
    eta = -e_b + u * (e_a + e_b)
    scales = 10.0 ** gen.uniform(-3.0, 3.0, n)
    for i in range(n):
        try:
            base = eval_W(k, e_a[i], e_b[i], eta[i])
            scaled = eval_W(k, scales[i] * e_a[i], scales[i] * e_b[i], scales[i] * eta[i])
        except (ValueError, FloatingPointError):
            skipped += 1
            continue
        target = base / math.sqrt(scales[i])
        res = abs(scaled - target) / (abs(target) + tiny)
        worst["homogeneity"] = max(worst["homogeneity"], res)

    # the two reduced-form symmetries, vectorized with a scalar fallback
    a = gen.random(n)
    b = gen.random(n)

    def pair_residuals(alpha, beta):
        w_ab = k.reduced_eval(alpha, beta)
        w_flip = k.reduced_eval(1.0 - alpha, 1.0 - beta)
        t_ab = k.tilde(alpha, beta)
        t_ba = k.tilde(beta, alpha)
        r_sym = np.abs(w_ab - w_flip) / np.maximum(np.maximum(np.abs(w_ab), np.abs(w_flip)), tiny)
        r_db = np.abs(t_ab - t_ba) / np.maximum(np.maximum(np.abs(t_ab), np.abs(t_ba)), tiny)
        return r_sym, r_db

    try:
        r_sym, r_db = pair_residuals(a, b)
        worst["exchange_symmetry"] = float(np.max(r_sym))
        worst["detailed_balance"] = float(np.max(r_db))
    except (ValueError, FloatingPointError):
        for i in range(n):
            try:
                r_sym, r_db = pair_residuals(a[i : i + 1], b[i : i + 1])
            except (ValueError, FloatingPointError):
                skipped += 1
                continue
            worst["exchange_symmetry"] = max(worst["exchange_symmetry"], float(r_sym[0]))
            worst["detailed_balance"] = max(worst["detailed_balance"], float(r_db[0]))

    passes = {c: worst[c] <= tol for c in _CONDITIONS}
    return ConditionReport(
        residuals=worst, passes=passes, n_samples=n, n_skipped=skipped, tol=tol
    )
