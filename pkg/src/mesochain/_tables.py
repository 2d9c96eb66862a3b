"""Inverse-CDF sampling tables for the exchange fraction.

For a pair at energy fraction alpha, the post-exchange fraction beta has
density w(alpha, beta) / nu_bar(alpha) on (0,1). Each table row holds the
beta-quantiles of that density at uniform probability levels; rows are laid
out over an arcsine-stretched fraction coordinate so that square-root
endpoint behaviour stays smooth under linear row blending. Row CDFs are
integrated on a mesh folded at the kernel's trouble curves (u = sqrt of the
distance to the nearest cut), which keeps inverse-square-root divergences
and half-power creases accurate on a fixed grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import Kernel

__all__ = [
    "SamplerTables",
    "TablesNotBuilt",
    "BETA_CLAMP",
    "build_tables",
    "get_tables",
    "clear_tables",
    "sample_from_tables",
    "nu_from_tables",
    "row_cdf",
    "quantiles_from_cdf",
    "dense_quantiles",
]

# smallest admissible sampled fraction; keeps post-exchange energies positive
BETA_CLAMP = 2.0 ** -40

_TWO_OVER_PI = 2.0 / math.pi


def _arcsine_coord(alpha):
    """Map fraction alpha to y in [0,1] with alpha = sin^2(pi y / 2)."""
    a = np.asarray(alpha, dtype=float)
    return _TWO_OVER_PI * np.arcsin(np.sqrt(a))


def _row_fractions(n_alpha: int) -> np.ndarray:
    # cell-centred rows; avoids evaluating any kernel at alpha = 0, 1/2, 1
    y = (np.arange(n_alpha) + 0.5) / n_alpha
    return np.sin(0.5 * math.pi * y) ** 2


@dataclass
class SamplerTables:
    """Quantile table for one kernel plus the per-row rate normalisation."""

    kernel_name: str
    d: int
    n_alpha: int
    n_beta: int
    beta_quantiles: np.ndarray = field(repr=False)  # (n_alpha, n_beta)
    nu_rows: np.ndarray = field(repr=False)         # (n_alpha,) unit-scale pair rates
    row_mass: np.ndarray = field(repr=False)        # (n_alpha,) numeric CDF masses


class TablesNotBuilt(RuntimeError):
    pass


_REGISTRY: dict = {}


def row_cdf(k: Kernel, alpha: float, total_cells: int = 2048):
    """Cell edges and cell masses of the unnormalised beta-CDF at one alpha.

    The row is cut at alpha, 1-alpha and 1/2; every segment between cuts is
    integrated from both ends in the folded variable with a midpoint rule,
    so a 1/sqrt divergence at a cut contributes a bounded, smooth integrand.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in the open unit interval")
    cuts = []
    for c in sorted({alpha, 1.0 - alpha, 0.5}):
        if 1e-12 < c < 1.0 - 1e-12 and (not cuts or c - cuts[-1] > 1e-12):
            cuts.append(c)
    bounds = [0.0] + cuts + [1.0]
    n_half = max(16, total_cells // (2 * (len(bounds) - 1)))

    edge_parts = []
    mid_parts = []
    wgt_parts = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        mid = 0.5 * (lo + hi)
        for c, sign, a, b in ((lo, 1.0, lo, mid), (hi, -1.0, mid, hi)):
            u_max = math.sqrt(hi - mid if sign < 0 else mid - lo)
            u_edge = np.linspace(0.0, u_max, n_half + 1)
            u_mid = 0.5 * (u_edge[:-1] + u_edge[1:])
            du = u_max / n_half
            beta_edge = c + sign * u_edge ** 2
            beta_edge[0] = c
            beta_edge[-1] = mid
            beta_mid = c + sign * u_mid ** 2
            wgt = 2.0 * u_mid * du
            if sign < 0:
                beta_edge = beta_edge[::-1]
                beta_mid = beta_mid[::-1]
                wgt = wgt[::-1]
                beta_edge[0] = mid
                beta_edge[-1] = hi
            edge_parts.append(beta_edge[:-1])
            mid_parts.append(beta_mid)
            wgt_parts.append(wgt)
    edges = np.concatenate(edge_parts + [np.array([1.0])])
    mids = np.concatenate(mid_parts)
    wgts = np.concatenate(wgt_parts)

    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.asarray(k.reduced_eval(alpha, mids), dtype=float)
    masses = wgts * w
    if not np.all(np.isfinite(masses)) or np.any(masses < 0.0):
        bad = mids[~np.isfinite(masses) | (masses < 0.0)][:1]
        raise ValueError(
            f"kernel {k.name!r} is not a finite nonnegative density at "
            f"alpha={alpha!r}, beta~{float(bad[0])!r}"
        )
    return edges, masses


def quantiles_from_cdf(edges: np.ndarray, masses: np.ndarray,
                       n_beta: int) -> np.ndarray:
    """Invert a piecewise CDF at n_beta uniform levels, clamped off 0 and 1."""
    cdf = np.concatenate([[0.0], np.cumsum(masses)])
    total = cdf[-1]
    if not total > 0.0:
        raise ValueError("row has zero total mass")
    levels = np.linspace(0.0, 1.0, n_beta) * total
    idx = np.clip(np.searchsorted(cdf, levels, side="right") - 1,
                  0, masses.size - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = (levels - cdf[idx]) / masses[idx]
    frac = np.clip(np.nan_to_num(frac, nan=0.0), 0.0, 1.0)
    q = edges[idx] + frac * (edges[idx + 1] - edges[idx])
    q = np.maximum.accumulate(np.clip(q, BETA_CLAMP, 1.0 - BETA_CLAMP))
    return q


def dense_quantiles(k: Kernel, alpha: float, n_beta: int = 4097,
                    total_cells: int = 32768) -> np.ndarray:
    """High-resolution quantiles at one exact alpha (no row blending).

    Validation path for the table sampler; also usable as a slow per-call
    fallback when a bias check at a specific fraction is needed.
    """
    edges, masses = row_cdf(k, alpha, total_cells)
    return quantiles_from_cdf(edges, masses, n_beta)


def build_tables(k: Kernel, n_alpha: int = 1024,
                 n_beta: int = 2048) -> SamplerTables:
    """Build and register the sampling tables for a kernel."""
    if n_alpha < 8 or n_beta < 8:
        raise ValueError("table needs at least 8 rows and 8 quantile levels")
    fractions = _row_fractions(n_alpha)
    beta_q = np.empty((n_alpha, n_beta))
    row_mass = np.empty(n_alpha)
    for i, a in enumerate(fractions):
        edges, masses = row_cdf(k, float(a))
        row_mass[i] = masses.sum()
        beta_q[i] = quantiles_from_cdf(edges, masses, n_beta)
    if k.closed_form_nu_bar is not None:
        nu_rows = np.asarray(k.closed_form_nu_bar(fractions), dtype=float)
    else:
        nu_rows = row_mass.copy()
    if not (np.all(np.isfinite(nu_rows)) and np.all(nu_rows > 0.0)):
        raise ValueError(f"kernel {k.name!r} has a non-positive pair rate row")
    t = SamplerTables(
        kernel_name=k.name,
        d=k.d,
        n_alpha=n_alpha,
        n_beta=n_beta,
        beta_quantiles=beta_q,
        nu_rows=nu_rows,
        row_mass=row_mass,
    )
    _REGISTRY[k] = t
    return t


def get_tables(k: Kernel) -> SamplerTables:
    try:
        return _REGISTRY[k]
    except KeyError:
        raise TablesNotBuilt(
            f"no sampling tables built for kernel {k.name!r}; call "
            "build_sampler(kernel) once before sampling or simulating"
        ) from None


def clear_tables(k: Kernel | None = None) -> None:
    if k is None:
        _REGISTRY.clear()
    else:
        _REGISTRY.pop(k, None)


def _row_blend(t: SamplerTables, alpha):
    f = _arcsine_coord(alpha) * t.n_alpha - 0.5
    i0 = np.clip(np.floor(f).astype(np.int64), 0, t.n_alpha - 2)
    wr = np.clip(f - i0, 0.0, 1.0)
    return i0, wr


def sample_from_tables(t: SamplerTables, alpha, u):
    """Bilinear quantile lookup: blends the two bracketing rows in u.

    Monotone in u because every row's quantiles are monotone and the row
    weights are nonnegative.
    """
    alpha = np.asarray(alpha, dtype=float)
    u = np.asarray(u, dtype=float)
    i0, wr = _row_blend(t, alpha)
    p = u * (t.n_beta - 1)
    j0 = np.clip(np.floor(p).astype(np.int64), 0, t.n_beta - 2)
    wu = np.clip(p - j0, 0.0, 1.0)
    q = t.beta_quantiles
    lo = q[i0, j0] * (1.0 - wu) + q[i0, j0 + 1] * wu
    hi = q[i0 + 1, j0] * (1.0 - wu) + q[i0 + 1, j0 + 1] * wu
    return lo * (1.0 - wr) + hi * wr


def nu_from_tables(t: SamplerTables, alpha):
    """Unit-scale pair rate by linear interpolation over the row coordinate."""
    i0, wr = _row_blend(t, alpha)
    return t.nu_rows[i0] * (1.0 - wr) + t.nu_rows[i0 + 1] * wr
