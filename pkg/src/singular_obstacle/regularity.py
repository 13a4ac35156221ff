"""Predicted regularity exponents and their empirical counterparts.

Growth at a free-boundary point is measured through
S(rho) = sup_{B_rho} |u(x) - u(x0) - grad u(x0).(x - x0)| and a log-log
least-squares fit; gradient oscillation through the Campanato quantity
sum over cells in B_r of |grad u - (grad u)_r|^q.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .grid import Domain, GridField, interpolate, make_grid, oscillation_integral, sup_on_ball

_NOISE = 10 * np.finfo(float).eps


@dataclass(frozen=True)
class ExponentPrediction:
    p: float
    gamma: float
    beta: float
    tau: float
    theta: float
    alpha_bound: float
    q: float
    sigma: float | None = None

    @property
    def upper_bound_only(self):
        """Without sigma, alpha_bound omits the p-harmonic term."""
        return self.sigma is None

    @property
    def growth(self):
        return 1 + self.tau

    def to_dict(self):
        return {
            "p": self.p,
            "gamma": self.gamma,
            "beta": self.beta,
            "sigma": self.sigma,
            "tau": self.tau,
            "theta": self.theta,
            "alpha_bound": self.alpha_bound,
            "alpha_upper_bound_only": self.upper_bound_only,
            "q": self.q,
        }


def theoretical_exponents(p, gamma, beta, sigma=None, kappa1=1.0) -> ExponentPrediction:
    """tau = min(beta, gamma/(p-gamma)), theta = min(1+beta, 2/(2-gamma)),
    alpha = min(gamma/(p-gamma), beta/(p-1)[, sigma])."""
    if p < 2:
        raise ValueError(f"p must be >= 2, got {p}")
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if not 0 < beta <= 1:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    if sigma is not None and not sigma > 0:
        raise ValueError("sigma must be positive")
    ratio = gamma / (p - gamma)
    alpha = min(ratio, beta / (p - 1))
    if sigma is not None:
        alpha = min(alpha, sigma)
    return ExponentPrediction(
        p=p,
        gamma=gamma,
        beta=beta,
        tau=min(beta, ratio),
        theta=min(1 + beta, 2 / (2 - gamma)),
        alpha_bound=alpha,
        q=2.0 if kappa1 == 0 else float(p),
        sigma=sigma,
    )


@dataclass
class ExponentFit:
    radii: np.ndarray
    values: np.ndarray
    slope: float = math.nan
    intercept: float = math.nan
    r_squared: float = math.nan
    usable: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {
            "samples": [[float(r), float(v)] for r, v in zip(self.radii, self.values)],
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "usable": self.usable,
        }
        d.update(self.extra)
        return d


def fit_power_law(radii, values, floor=0.0) -> ExponentFit:
    """Least-squares slope of log(value) against log(radius).

    Samples with value <= floor are dropped; the fit is usable with at least
    four samples spanning a decade.
    """
    radii = np.asarray(radii, float)
    values = np.asarray(values, float)
    order = np.argsort(-radii)
    radii, values = radii[order], values[order]
    keep = values > floor
    fit = ExponentFit(radii, values)
    r, v = radii[keep], values[keep]
    if r.size < 2:
        return fit
    lx, ly = np.log(r), np.log(v)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    fit.slope = float(slope)
    fit.intercept = float(intercept)
    fit.r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    fit.usable = bool(r.size >= 4 and r.max() / r.min() >= 10 * (1 - 1e-12))
    return fit


def default_radii(grid, x0, rho_max=None, levels=7, min_cells=4):
    """rho_max * 2**-k, k < levels, each rounded to a whole number of cells
    and kept when rho >= min_cells * h.

    Rounding matters: the sup over a ball only sees nodes, so a radius
    between two node distances adds jitter to the log-log fit.
    """
    if rho_max is None:
        x0 = np.asarray(x0, float).ravel()
        gaps = [min(x - a, b - x) for (a, b), x in zip(grid.domain.bounds, x0)]
        rho_max = 0.5 * min(gaps)
    h = grid.h
    radii = h * np.round(rho_max * 2.0 ** -np.arange(levels) / h)
    radii = np.unique(radii[radii >= min_cells * h * (1 - 1e-12)])[::-1]
    return radii


def _value_at(u, x0):
    return float(interpolate(u, np.asarray(x0, float).reshape(1, -1))[0])


def plane_subtracted(u: GridField, x0, gradient=None) -> GridField:
    """u(x) - u(x0) - gradient.(x - x0)."""
    x0 = np.asarray(x0, float).ravel()
    g = np.zeros(u.grid.dim) if gradient is None else np.asarray(gradient, float).ravel()
    return u.with_values(u.values - _value_at(u, x0) - (u.grid.coords - x0) @ g)


def growth_exponent(u: GridField, x0, gradient_at_x0=None, radii=None) -> ExponentFit:
    """Fit S(rho) ~ C rho^slope for the plane-subtracted field at x0."""
    if radii is None:
        radii = default_radii(u.grid, x0)
    w = plane_subtracted(u, x0, gradient_at_x0)
    samples = [sup_on_ball(w, x0, r) for r in radii]
    scale = max(float(np.abs(u.values).max()), 1.0)
    return fit_power_law(radii, samples, floor=_NOISE * scale)


def campanato_exponent(u: GridField, q, center, radii=None) -> ExponentFit:
    """Fit the oscillation integral ~ r^(n + q alpha); reports alpha."""
    if not q >= 1:
        raise ValueError("q must be >= 1")
    if radii is None:
        radii = default_radii(u.grid, center)
    samples = [oscillation_integral(u, center, r, q) for r in radii]
    n = u.grid.dim
    scale = max(float(np.abs(u.values).max()), 1.0) ** q * u.grid.h ** n
    fit = fit_power_law(radii, samples, floor=_NOISE * scale)
    fit.extra["alpha"] = (fit.slope - n) / q if fit.usable else math.nan
    fit.extra["q"] = q
    return fit


@dataclass
class DyadicReport:
    ks: list
    sups: list
    ratios: list
    C_fitted: float
    passed_k: list
    truncated: bool

    @property
    def passed(self):
        return bool(self.passed_k) and all(self.passed_k)

    def to_dict(self):
        return {
            "k": self.ks,
            "sup": self.sups,
            "ratio": self.ratios,
            "C_fitted": self.C_fitted,
            "pass_k": self.passed_k,
            "pass": self.passed,
            "truncated": self.truncated,
        }


def dyadic_decay_check(u: GridField, x0, tau, k_max, base=8.0, min_radius_cells=4.0, slack=0.25) -> DyadicReport:
    """S_k = sup_{B_{base^-k}} |u| against base^{-(1+tau) k}, k = 1..k_max.

    ``u`` must already be normalized (value, obstacle and plane removed at
    x0). C_fitted is the smallest C with S_k <= C base^{-(1+tau)k} for all
    k. Level k passes when its ratio S_k base^{(1+tau)k} stays within
    ``1 + slack`` of the first level's, i.e. the decay is at least as fast
    as predicted. Levels below ``min_radius_cells`` grid cells are dropped
    with a warning.
    """
    h = u.grid.h
    ks = [k for k in range(1, k_max + 1) if base ** -k >= min_radius_cells * h * (1 - 1e-12)]
    truncated = len(ks) < k_max
    if truncated:
        warnings.warn(
            f"dyadic ladder truncated to k <= {ks[-1] if ks else 0}: radius below {min_radius_cells} cells",
            RuntimeWarning,
            stacklevel=2,
        )
    sups = [sup_on_ball(u, x0, base ** -k) for k in ks]
    ratios = [s * base ** ((1 + tau) * k) for k, s in zip(ks, sups)]
    C = max(ratios, default=0.0)
    ref = ratios[0] if ratios else 0.0
    passed = [r <= (1 + slack) * ref + _NOISE for r in ratios]
    return DyadicReport(ks, sups, ratios, float(C), passed, truncated)


def blowup_rescale(u: GridField, x0, lam, exponent, gradient=None, h_unit=None) -> GridField:
    """x -> (u(x0 + lam x) - u(x0) - grad u(x0).(lam x)) / lam**exponent on
    the unit ball (interval [-1, 1] or unit disc)."""
    g = u.grid
    x0 = np.asarray(x0, float).ravel()
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if g.domain.shape == "disc":
        inside = np.linalg.norm(x0) + lam <= g.domain.radius * (1 + 1e-12)
    else:
        inside = all(a - 1e-12 <= c - lam and c + lam <= b + 1e-12 for (a, b), c in zip(g.domain.bounds, x0))
    if not inside:
        raise ValueError("the rescaled ball leaves the domain")
    if h_unit is None:
        h_unit = g.h / lam
    unit = make_grid(Domain.interval(-1.0, 1.0) if g.dim == 1 else Domain.disc(1.0), h_unit)
    grad = np.zeros(g.dim) if gradient is None else np.asarray(gradient, float).ravel()
    pts = x0[None] + lam * unit.coords
    if g.dim == 2:
        # disc boundary ring sits just outside the unit ball; clamp it in
        r = np.linalg.norm(unit.coords, axis=1, keepdims=True)
        pts = x0[None] + lam * unit.coords / np.maximum(r, 1.0)
    vals = interpolate(u, pts) - _value_at(u, x0) - (pts - x0[None]) @ grad
    return GridField(unit, vals / lam ** exponent)


def energy_scaling_identity_check(spec, v: GridField, j: int, tau: float, center=None) -> float:
    """Relative discrepancy of the blow-up identity for the discrete energy.

    With v_s(x) = b^{(1+tau) j} v(x / b^j), phi_s likewise (b = 8) and
    delta_s = delta * b^{-(gamma (1+tau) - p tau) j},

        I_{delta_s}(v_s; unit box) = b^{(n + p tau) j} I_delta(v; box of radius b^-j).

    The small box must be a union of grid cells around ``center`` so both
    sides are evaluated on the same node set.
    """
    from .solver import ProblemSpec, _Energy, discrete_energy

    if spec.density.kind != "p-power":
        raise ValueError("the scaling identity is stated for the p-power density")
    g = spec.grid
    n = g.dim
    c = np.zeros(n) if center is None else np.asarray(center, float).ravel()
    R = 8.0 ** -j
    k = R / g.h
    if abs(k - round(k)) > 1e-9 * max(1.0, k) or round(k) < 1:
        raise ValueError(f"box radius 8^-{j} is not a whole number of cells (h={g.h})")
    k = int(round(k))
    i0 = g.nearest_node(c)
    if np.linalg.norm(g.coords[i0] - c) > 1e-9 * g.h:
        raise ValueError("center must be a grid node")
    pos = np.unravel_index(np.flatnonzero(g.active)[i0], g.shape)
    sl = tuple(slice(q - k, q + k + 1) for q in pos)
    if any(s.start < 0 or s.stop > dim for s, dim in zip(sl, g.shape)):
        raise ValueError("the small box leaves the grid")
    if not np.all(g.active[sl]):
        raise ValueError("the small box must lie in the active region")

    def sub(values):
        return g.to_array(values)[sl]

    v_loc, phi_loc = sub(v.values), sub(spec.obstacle.values)
    bounds = [(cc - R, cc + R) for cc in c]
    dom_small = Domain("interval", tuple(bounds)) if n == 1 else Domain("rectangle", tuple(bounds))
    dom_unit = Domain("interval", ((-1.0, 1.0),)) if n == 1 else Domain("rectangle", ((-1.0, 1.0),) * 2)
    small = make_grid(dom_small, g.h)
    unit = make_grid(dom_unit, g.h * 8.0 ** j)
    if small.shape != v_loc.shape or unit.shape != v_loc.shape:
        raise ValueError("grids are not nested under the 8^-j map")

    p, gam = spec.p, spec.gamma
    scale_u = 8.0 ** ((1 + tau) * j)
    delta_s = spec.delta * 8.0 ** (-(gam * (1 + tau) - p * tau) * j)

    def energy(grid, vals, phis, delta):
        # delta_s may exceed 1; the identity does not care, so the ProblemSpec is
        # built at delta = 0 and the weight passed to the evaluator directly
        vf = GridField(grid, vals[grid.active])
        pf = GridField(grid, phis[grid.active])
        s = ProblemSpec(grid, p, gam, 0.0, pf, vf, beta=spec.beta, density=spec.density)
        discrete_energy(s, vf, 0.0)
        return _Energy(s).value(vf.values, delta, 0.0)

    lhs = energy(unit, scale_u * v_loc, scale_u * phi_loc, delta_s)
    rhs = 8.0 ** ((n + p * tau) * j) * energy(small, v_loc, phi_loc, spec.delta)
    denom = max(abs(lhs), abs(rhs), np.finfo(float).tiny)
    return abs(lhs - rhs) / denom
