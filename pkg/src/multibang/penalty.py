"""Pointwise convex analysis for the multi-material penalty.

For material values u_1 < ... < u_d the pointwise penalty

    g0(v) = (alpha/2) v^2            if v is one of the u_i,
            (alpha/2) v^2 + beta     if v in [u_1, u_d] otherwise,
            +inf                     outside [u_1, u_d],

has the piecewise affine convex envelope

    g(v) = (alpha/2) ((u_i + u_{i+1}) v - u_i u_{i+1})   on [u_i, u_{i+1}],

provided beta >= alpha (u_{i+1} - u_i)^2 / 8 for every gap (otherwise the
envelope would cut below the parabola between materials and the piecewise
structure below breaks down; such configs are rejected).

This module evaluates g0, the envelope, the subdifferential of the envelope's
conjugate, the regularized single-valued map

    H_gamma(p) = u_i                    on the open band Q_i,
                 (p - t_i) / gamma      on the closed band Q_{i,i+1}
                                        = [t_i + gamma u_i, t_i + gamma u_{i+1}],

with thresholds t_i = (alpha/2)(u_i + u_{i+1}), its Newton derivative, the
brute-force maximization oracle certifying it, and an l1-type comparison
penalty with closed-form conjugate.
"""

import numpy as np
from collections import namedtuple
from dataclasses import dataclass

from .grid import ScalarField


class ConfigError(ValueError):
    """Invalid material/penalty configuration; gap is the 1-based index of
    the offending value gap when the envelope condition fails."""

    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap


Single = namedtuple("Single", "value")
Interval = namedtuple("Interval", "lo hi")


@dataclass(frozen=True)
class MultibangConfig:
    """Ordered material values with penalty weights alpha, beta.

    beta defaults to the smallest weight compatible with the piecewise
    affine envelope, alpha * (max gap)^2 / 8."""

    values: tuple
    alpha: float
    beta: float = None

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "alpha", float(self.alpha))
        if self.beta is None:
            gaps = np.diff(vals)
            default = self.alpha * float(np.max(gaps)) ** 2 / 8.0 if len(vals) > 1 else 0.0
            object.__setattr__(self, "beta", default)
        else:
            object.__setattr__(self, "beta", float(self.beta))

    @property
    def d(self):
        return len(self.values)

    def value_array(self):
        return np.asarray(self.values)


def validate_config(cfg):
    """Raise ConfigError unless the configuration admits the piecewise
    affine envelope; returns None on success."""
    vals = cfg.value_array()
    if vals.size < 2:
        raise ConfigError("need at least two material values")
    if not np.all(np.isfinite(vals)) or not np.isfinite(cfg.alpha) or not np.isfinite(cfg.beta):
        raise ConfigError("non-finite configuration entries")
    if np.any(np.diff(vals) <= 0.0):
        raise ConfigError("material values must be strictly increasing")
    if cfg.alpha <= 0.0:
        raise ConfigError("alpha must be positive")
    if cfg.beta < 0.0:
        raise ConfigError("beta must be nonnegative")
    # (alpha/2) gap <= sqrt(2 alpha beta), squared to avoid sqrt rounding
    gaps = np.diff(vals)
    bad = np.flatnonzero(cfg.alpha * gaps ** 2 / 8.0 > cfg.beta)
    if bad.size:
        i = int(bad[0]) + 1
        raise ConfigError("envelope condition fails at value gap %d" % i, gap=i)


def g0_eval(cfg, v):
    """Pointwise penalty; exact membership comparison against the values."""
    v = np.asarray(v, dtype=float)
    vals = cfg.value_array()
    out = cfg.alpha / 2.0 * v ** 2 + cfg.beta
    on_value = np.isin(v, vals)
    out = np.where(on_value, cfg.alpha / 2.0 * v ** 2, out)
    out = np.where((v < vals[0]) | (v > vals[-1]), np.inf, out)
    return float(out) if out.ndim == 0 else out


def _segment_slopes(cfg):
    # envelope slope on [u_i, u_{i+1}] equals (alpha/2)(u_i + u_{i+1})
    vals = cfg.value_array()
    return cfg.alpha / 2.0 * (vals[:-1] + vals[1:])


def envelope_eval(cfg, v):
    """Convex envelope of g0: piecewise affine interpolation of the
    parabola values (alpha/2) u_i^2 between adjacent materials."""
    v = np.asarray(v, dtype=float)
    vals = cfg.value_array()
    seg = np.clip(np.searchsorted(vals, v, side="right") - 1, 0, vals.size - 2)
    lo = vals[seg]
    hi = vals[seg + 1]
    out = cfg.alpha / 2.0 * ((lo + hi) * v - lo * hi)
    out = np.where((v < vals[0]) | (v > vals[-1]), np.inf, out)
    return float(out) if out.ndim == 0 else out


def subgrad_gstar(cfg, p):
    """Subdifferential of the envelope's conjugate at p: the material
    selected below/above the thresholds t_i, or the adjacent pair at a
    threshold (exact comparison)."""
    thresholds = _segment_slopes(cfg)
    vals = cfg.values
    idx = int(np.searchsorted(thresholds, p, side="left"))
    if idx < thresholds.size and p == thresholds[idx]:
        return Interval(vals[idx], vals[idx + 1])
    return Single(vals[idx])


@dataclass(frozen=True)
class TransitionBands:
    """Band decomposition of the real line for the regularized map at a
    fixed gamma: closed transition bands [t_i + gamma u_i, t_i + gamma u_{i+1}]
    separated by open single-material bands."""

    gamma: float
    values: tuple
    alpha: float
    thresholds: tuple
    lower: tuple
    upper: tuple

    def boundary_array(self):
        return np.stack([self.lower, self.upper], axis=1).ravel()


def transition_bands(cfg, gamma):
    """Build the band decomposition for gamma > 0."""
    if gamma <= 0.0:
        raise ConfigError("gamma must be positive")
    thresholds = _segment_slopes(cfg)
    vals = cfg.value_array()
    lower = thresholds + gamma * vals[:-1]
    upper = thresholds + gamma * vals[1:]
    return TransitionBands(float(gamma), cfg.values, cfg.alpha,
                           tuple(thresholds), tuple(lower), tuple(upper))


def _prox_core(bands, p):
    """Vectorized band lookup: returns (values, inside-closed-band mask)."""
    p = np.asarray(p, dtype=float)
    vals = np.asarray(bands.values)
    thresholds = np.asarray(bands.thresholds)
    bounds = bands.boundary_array()
    pos = np.searchsorted(bounds, p, side="right")
    # odd position: strictly inside a transition band or at its left edge
    inside = pos % 2 == 1
    # an exact hit on an upper bound lands at an even position one past it
    at_upper = np.zeros_like(inside)
    hit = pos >= 1
    prev = np.clip(pos - 1, 0, bounds.size - 1)
    at_upper[hit] = (bounds[prev][hit] == p[hit]) & ((prev[hit] % 2) == 1)
    inside = inside | at_upper
    band = np.clip(np.where(inside & at_upper, prev, pos) // 2, 0, thresholds.size - 1)
    u_band = (p - thresholds[band]) / bands.gamma
    u_single = vals[np.clip((pos + 1) // 2, 0, vals.size - 1)]
    u = np.where(inside, u_band, u_single)
    u = np.clip(u, vals[0], vals[-1])
    return u, inside


def prox_point(cfg, bands, p):
    """Regularized map H_gamma at a scalar p."""
    u, _ = _prox_core(bands, np.asarray([p], dtype=float))
    return float(u[0])


def prox_newton_deriv(cfg, bands, p):
    """Newton derivative of H_gamma: 1/gamma on the closed transition
    bands (endpoints included), zero elsewhere."""
    _, inside = _prox_core(bands, np.asarray([p], dtype=float))
    return 1.0 / bands.gamma if bool(inside[0]) else 0.0


def apply_prox_field(cfg, bands, p):
    """Nodewise H_gamma on a field."""
    u, _ = _prox_core(bands, p.data)
    return ScalarField(p.grid, u)


def inactive_indicator_field(cfg, bands, p):
    """Nodewise 0-1 indicator of the union of closed transition bands."""
    _, inside = _prox_core(bands, p.data)
    return ScalarField(p.grid, inside.astype(float))


def oracle_prox(cfg, gamma, p, n_scan=10001):
    """Brute-force certification oracle for prox_point: maximizes
    p u - g(u) - (gamma/2) u^2 over [u_1, u_d] by dense sampling followed
    by monotone-slope bisection, using only envelope values (never the band
    formulas).  Accepts a scalar or an array of p."""
    p_arr = np.atleast_1d(np.asarray(p, dtype=float))
    vals = cfg.value_array()
    u1, ud = vals[0], vals[-1]
    knot_g = envelope_eval(cfg, vals)
    slopes = np.diff(knot_g) / np.diff(vals)

    def dphi(u, pv):
        # derivative of the concave objective; piecewise linear, decreasing
        seg = np.clip(np.searchsorted(vals, u, side="right") - 1, 0, vals.size - 2)
        return pv - slopes[seg] - gamma * u

    grid = np.unique(np.concatenate([np.linspace(u1, ud, n_scan), vals]))
    gridval = envelope_eval(cfg, grid) + gamma / 2.0 * grid ** 2
    out = np.empty_like(p_arr)
    chunk = 1024
    for start in range(0, p_arr.size, chunk):
        pc = p_arr[start:start + chunk]
        at_lo = dphi(np.full_like(pc, u1), pc) <= 0.0
        at_hi = dphi(np.full_like(pc, ud), pc) >= 0.0
        phi = np.outer(pc, grid) - gridval
        j = np.argmax(phi, axis=1)
        a = grid[np.maximum(j - 2, 0)]
        b = grid[np.minimum(j + 2, grid.size - 1)]
        # fall back to the whole interval if the bracket misses the root
        bad = (dphi(a, pc) < 0.0) | (dphi(b, pc) > 0.0)
        a = np.where(bad, u1, a)
        b = np.where(bad, ud, b)
        for _ in range(60):
            mid = 0.5 * (a + b)
            pos = dphi(mid, pc) >= 0.0
            a = np.where(pos, mid, a)
            b = np.where(pos, b, mid)
        mid = 0.5 * (a + b)
        seg = np.clip(np.searchsorted(vals, mid, side="right") - 1, 0, vals.size - 2)
        # the root is linear within its segment; solve it in closed form
        u = np.clip((pc - slopes[seg]) / gamma, vals[seg], vals[seg + 1])
        u = np.clip(u, a, b)
        u = np.where(at_lo, u1, np.where(at_hi, ud, u))
        out[start:start + chunk] = u
    return float(out[0]) if np.ndim(p) == 0 else out


def l1_h_eval(cfg, v):
    """Comparison penalty alpha sum_i |v - u_i| on [u_1, u_d]."""
    v = np.asarray(v, dtype=float)
    vals = cfg.value_array()
    out = cfg.alpha * np.sum(np.abs(v[..., None] - vals), axis=-1)
    out = np.where((v < vals[0]) | (v > vals[-1]), np.inf, out)
    return float(out) if out.ndim == 0 else out


def _l1_affine_pieces(cfg):
    # conjugate branch i (1-based): u_i (q + alpha (d + 1 - 2 i))
    #                               + alpha (sum_{j<i} u_j - sum_{j>i} u_j)
    vals = cfg.value_array()
    d = vals.size
    i = np.arange(1, d + 1)
    csum = np.cumsum(vals)
    total = csum[-1]
    below = csum - vals
    above = total - csum
    shift = cfg.alpha * (d + 1 - 2 * i)
    const = cfg.alpha * (below - above)
    return vals, shift, const


def l1_hstar_eval(cfg, q):
    """Closed-form conjugate of the comparison penalty: max over the d
    affine branches."""
    q = np.asarray(q, dtype=float)
    vals, shift, const = _l1_affine_pieces(cfg)
    branches = vals * (q[..., None] + shift) + const
    out = np.max(branches, axis=-1)
    return float(out) if out.ndim == 0 else out


def l1_subdiff_hstar(cfg, q):
    """Subdifferential of the conjugate: boundaries sit at q/alpha = 2i - d,
    independent of the u_i values."""
    vals = cfg.values
    d = len(vals)
    t = q / cfg.alpha
    m = (t + d) / 2.0
    if m == np.floor(m) and 1 <= int(m) <= d - 1:
        k = int(m)
        return Interval(vals[k - 1], vals[k])
    i = int(np.clip(np.floor(m) + 1, 1, d))
    return Single(vals[i - 1])
