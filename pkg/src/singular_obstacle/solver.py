"""Discrete singular obstacle energy and its constrained minimization.

The energy of a node field v is

    J(v) = sum_e w_e H(grad_e v) + delta * sum_i w_i [(v_i - phi_i + eps)^gamma - eps^gamma]

with elements e = cells (1-d) or the two triangles of each cell (2-d) and
trapezoid node weights w_i. ``eps`` regularizes the singular term; it is
driven to 1e-8 by continuation, after a continuation in delta started from
the convex (delta = 0) obstacle problem.

Minimization uses a two-metric projected Newton method with Armijo
backtracking along the projection arc: bound-active nodes take a scaled
projected-gradient step, free nodes a Newton step whose Hessian falls back to
the convex part (plus a shift) when the full Hessian is not usable. Free
nodes may close at most 90% of their remaining gap per step
(``boundary_fraction``); a node reaches the obstacle only through the
projection of the active set. After the last stage a ring search moves single
nodes across the discrete free boundary while that lowers the energy at the
final regularization.

Grids with more than ``coarse_nodes`` nodes are first solved at spacing 2h
(recursively); the coarse gap u - phi is prolonged to seed the fine grid,
which then only runs the final stage.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, solveh_banded
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree

from .energy import EnergyDensity, density_batch
from .grid import Grid, GridField, interpolate, make_grid

log = logging.getLogger(__name__)


class ConstraintViolation(ValueError):
    """A field violates v >= phi or the Dirichlet data."""


@dataclass
class ProblemSpec:
    grid: Grid
    p: float
    gamma: float
    delta: float
    obstacle: GridField
    boundary: GridField
    beta: float = 1.0
    density: EnergyDensity | None = None

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.p < 2:
            raise ValueError(f"p must be >= 2, got {self.p}")
        if not 0 <= self.delta <= 1:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.density is None:
            self.density = EnergyDensity.p_power(self.p)
        for name in ("obstacle", "boundary"):
            if getattr(self, name).grid is not self.grid:
                raise ValueError(f"{name} lives on a different grid")
        bd = self.grid.boundary_mask
        if np.any(self.boundary.values[bd] < self.obstacle.values[bd]):
            raise ValueError("boundary data must satisfy g >= phi on boundary nodes")

    def with_delta(self, delta):
        return replace(self, delta=delta)


@dataclass
class SolverConfig:
    eps_schedule: tuple = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
    delta_schedule: tuple = (0.0, 0.125, 0.25, 0.5, 1.0)
    tol_kkt: float = 1e-8
    tol_contact: float = 1e-12
    max_iter: int = 500
    armijo_sigma: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60
    fb_search: bool = True
    fb_search_moves: int = 400
    boundary_fraction: float = 0.1
    multilevel: bool = True
    coarse_nodes: int = 129

    def __post_init__(self):
        e = np.asarray(self.eps_schedule, float)
        d = np.asarray(self.delta_schedule, float)
        if e.size == 0 or np.any(e <= 0) or np.any(np.diff(e) >= 0):
            raise ValueError("eps_schedule must be a nonempty, strictly decreasing list of positive values")
        if d.size == 0 or d[0] != 0 or d[-1] != 1 or np.any(np.diff(d) <= 0):
            raise ValueError("delta_schedule must increase strictly from 0 to 1 (fractions of the target delta)")
        if not (self.tol_kkt > 0 and self.tol_contact > 0):
            raise ValueError("tolerances must be positive")
        if not 0.0 <= self.boundary_fraction < 1.0:
            raise ValueError("boundary_fraction must lie in [0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        self.eps_schedule = tuple(float(x) for x in e)
        self.delta_schedule = tuple(float(x) for x in d)


@dataclass
class StageTrace:
    delta: float
    eps: float
    energies: list = field(default_factory=list)
    kkt: float = np.inf
    iterations: int = 0
    converged: bool = False

    def to_dict(self):
        return {
            "delta": self.delta,
            "eps": self.eps,
            "iterations": self.iterations,
            "kkt": self.kkt,
            "converged": self.converged,
            "energies": self.energies,
        }


@dataclass
class SolveResult:
    u: GridField
    stages: list
    final_energy: float
    contact_mask: np.ndarray
    kkt_residual: GridField
    kkt: float
    tol_kkt: float
    converged: bool

    @property
    def iterations(self):
        return [s.iterations for s in self.stages]

    def to_dict(self):
        return {
            "converged": self.converged,
            "final_energy": self.final_energy,
            "kkt": self.kkt,
            "tol_kkt": self.tol_kkt,
            "n_contact": int(self.contact_mask.sum()),
            "stages": [s.to_dict() for s in self.stages],
        }


# -- discretization -----------------------------------------------------------


@lru_cache(maxsize=32)
def _element_operators(grid: Grid):
    """Difference matrices D_k (n_elem x n_active) and element weights."""
    h = grid.h
    idx = grid.index
    if grid.dim == 1:
        cells = np.flatnonzero(grid.cell_mask)
        i0, i1 = idx[cells], idx[cells + 1]
        m = cells.size
        rows = np.repeat(np.arange(m), 2)
        cols = np.stack([i0, i1], 1).ravel()
        vals = np.tile([-1.0 / h, 1.0 / h], m)
        D = sp.csr_matrix((vals, (rows, cols)), shape=(m, grid.n_active))
        return [D], np.full(m, h)
    ci, cj = np.nonzero(grid.cell_mask)
    a, b = idx[ci, cj], idx[ci + 1, cj]
    c, d = idx[ci, cj + 1], idx[ci + 1, cj + 1]
    m = ci.size

    def op(plus, minus):
        rows = np.repeat(np.arange(m), 2)
        cols = np.stack([plus, minus], 1).ravel()
        vals = np.tile([1.0 / h, -1.0 / h], m)
        return sp.csr_matrix((vals, (rows, cols)), shape=(m, grid.n_active))

    # lower-left triangle (a, b, c) and upper-right triangle (d, c, b)
    Dx = sp.vstack([op(b, a), op(d, c)]).tocsr()
    Dy = sp.vstack([op(c, a), op(d, b)]).tocsr()
    return [Dx, Dy], np.full(2 * m, 0.5 * h * h)


class _Tridiag:
    """Symmetric tridiagonal matrix; ``off[i]`` couples rows i and i + 1."""

    def __init__(self, main, off):
        self.main, self.off = main, off

    def restrict(self, mask):
        idx = np.flatnonzero(mask)
        off = np.where(np.diff(idx) == 1, self.off[idx[:-1]], 0.0)
        return _Tridiag(self.main[idx], off)

    def diagonal(self):
        return self.main

    def solve_pd(self, extra, rhs):
        """Cholesky solve of (self + diag(extra)) d = rhs; None if not PD."""
        ab = np.zeros((2, self.main.size))
        ab[0, 1:] = self.off
        ab[1] = self.main + extra
        try:
            return solveh_banded(ab, rhs, check_finite=False)
        except LinAlgError:
            return None


class _SparseSym:
    """Sparse symmetric matrix with the same interface as :class:`_Tridiag`."""

    def __init__(self, K):
        self.K = K.tocsc()

    def restrict(self, mask):
        idx = np.flatnonzero(mask)
        return _SparseSym(self.K[idx][:, idx])

    def diagonal(self):
        return self.K.diagonal()

    def solve_pd(self, extra, rhs):
        M = (self.K + sp.diags(extra)).tocsc()
        try:
            d = splu(M).solve(rhs)
        except RuntimeError:
            return None
        if not np.all(np.isfinite(d)) or d @ (M @ d) <= 0:
            return None
        return d


class _Energy:
    """Energy, gradient and Hessian of the discrete functional for one spec."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.D, self.we = _element_operators(spec.grid)
        self.wn = spec.grid.node_weights
        self.phi = spec.obstacle.values
        self._pairs = None
        if spec.grid.dim == 1:
            idx = spec.grid.index
            cells = np.flatnonzero(spec.grid.cell_mask)
            i0, i1 = idx[cells], idx[cells + 1]
            if np.all(i1 == i0 + 1):
                self._pairs = i0

    def _grads(self, v):
        return np.stack([D @ v for D in self.D], axis=1)

    def principal(self, v):
        return float(self.we @ density_batch(self.spec.density, self._grads(v))[0])

    def singular(self, v, delta, eps):
        if delta == 0:
            return 0.0
        s = np.maximum(v - self.phi, 0.0)
        g = self.spec.gamma
        return float(delta * (self.wn @ ((s + eps) ** g - eps ** g)))

    def value(self, v, delta, eps):
        return self.principal(v) + self.singular(v, delta, eps)

    def principal_gradient(self, v):
        _, dH, _, _ = density_batch(self.spec.density, self._grads(v))
        return sum(D.T @ (self.we * dH[:, k]) for k, D in enumerate(self.D))

    def gradient(self, v, delta, eps):
        g = self.principal_gradient(v)
        if delta > 0:
            s = np.maximum(v - self.phi, 0.0)
            gam = self.spec.gamma
            g = g + delta * self.wn * gam * (s + eps) ** (gam - 1)
        return g

    def hessians(self, v, delta, eps):
        """(convex principal part, diagonal of the concave singular part)."""
        _, _, d2H, _ = density_batch(self.spec.density, self._grads(v))
        d2H = np.nan_to_num(d2H)
        sing = np.zeros_like(v)
        if delta > 0:
            s = np.maximum(v - self.phi, 0.0)
            gam = self.spec.gamma
            sing = delta * self.wn * gam * (gam - 1) * (s + eps) ** (gam - 2)
        if self._pairs is not None:
            c = self.we * d2H[:, 0, 0] / self.spec.grid.h ** 2
            i0, n = self._pairs, v.size
            main = np.bincount(i0, c, n) + np.bincount(i0 + 1, c, n)
            off = np.zeros(n - 1)
            off[i0] = -c
            return _Tridiag(main, off), sing
        n = len(self.D)
        K = None
        for k in range(n):
            for l in range(n):
                term = self.D[k].T @ sp.diags(self.we * d2H[:, k, l]) @ self.D[l]
                K = term if K is None else K + term
        return _SparseSym(K), sing


def _check_admissible(spec, v, tol_contact):
    if np.any(v < spec.obstacle.values - tol_contact):
        worst = int(np.argmin(v - spec.obstacle.values))
        raise ConstraintViolation(
            f"v < phi at node {worst} (x={spec.grid.coords[worst].tolist()}): "
            f"{v[worst]} < {spec.obstacle.values[worst]}"
        )


def discrete_energy(spec: ProblemSpec, v: GridField, eps_reg: float = 0.0, tol_contact: float = 1e-12) -> float:
    """Discrete J_delta(v); exact (unregularized) for ``eps_reg = 0``."""
    vals = v.values if isinstance(v, GridField) else np.asarray(v, float)
    bd = spec.grid.boundary_mask
    if not np.array_equal(vals[bd], spec.boundary.values[bd]):
        raise ConstraintViolation("v must equal the boundary data on boundary nodes")
    _check_admissible(spec, vals, tol_contact)
    return _Energy(spec).value(vals, spec.delta, eps_reg)


def kkt_residual(grad, v, phi, free, tol_contact):
    """Per-node projected-gradient residual on the free variables."""
    res = np.zeros_like(v)
    g = grad[free]
    contact = v[free] - phi[free] <= tol_contact
    res[free] = np.where(contact, np.abs(np.minimum(g, 0.0)), np.abs(g))
    return res


# -- projected Newton ---------------------------------------------------------


def _newton_direction(K, sing, g, F):
    """Descent direction on free set F; full Hessian first, then safeguards."""
    gF = g[F]
    if not gF.size:
        return np.zeros(0)
    KF = K.restrict(F)
    diag = np.abs(KF.diagonal())
    scale = diag.max() if diag.size and diag.max() > 0 else 1.0
    gn = np.linalg.norm(gF)
    extras = [sing[F]] + [np.full(gF.size, 1e-10 * scale * 100.0**k) for k in range(8)]
    for extra in extras:
        d = KF.solve_pd(extra, -gF)
        if d is not None and d @ gF < -1e-12 * gn * np.linalg.norm(d):
            return d
    return -gF / np.maximum(diag, scale * 1e-12)


def _minimize_stage(E: _Energy, x, free, delta, eps, tol, cfg: SolverConfig, trace: StageTrace):
    phi = E.phi
    lo = phi[free]
    energy = E.value(x, delta, eps)
    trace.energies.append(energy)
    for it in range(cfg.max_iter + 1):
        g_all = E.gradient(x, delta, eps)
        res = kkt_residual(g_all, x, phi, free, cfg.tol_contact)
        kkt = float(res.max(initial=0.0))
        tol_now = tol * (1 + abs(energy))
        trace.kkt = kkt
        if kkt <= tol_now:
            trace.converged = True
            break
        if it == cfg.max_iter:
            break
        xf, gf = x[free], g_all[free]
        # two-metric active set: near the bound and pushed onto it
        w = np.linalg.norm(xf - np.maximum(lo, xf - gf))
        act = (xf - lo <= min(1e-3, w)) & (gf > 0)
        F = ~act
        K, sing = E.hessians(x, delta, eps)
        Kf = K.restrict(free)
        d = np.zeros_like(xf)
        d[F] = _newton_direction(Kf, sing[free], gf, F)
        if act.any():
            dg = np.abs(Kf.diagonal()[act])
            dg = np.where(dg > 0, dg, 1.0)
            d[act] = -gf[act] / dg
        # free nodes that would cross the obstacle stop short of it; only the
        # active set is projected, so one bad step cannot pin a whole region
        gap = xf - lo
        alpha = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks):
            xn = xf + alpha * d
            xn = np.where(act, np.maximum(lo, xn), np.maximum(lo + cfg.boundary_fraction * gap, xn))
            trial = x.copy()
            trial[free] = xn
            e_new = E.value(trial, delta, eps)
            decrease = cfg.armijo_sigma * max(-(gf @ (xn - xf)), 0.0)
            if e_new <= energy - decrease:
                accepted = True
                break
            alpha *= cfg.backtrack
        if not accepted or e_new > energy:
            log.debug("line search stalled at iteration %d (kkt=%g)", it, kkt)
            break
        x, energy = trial, e_new
        trace.energies.append(energy)
        trace.iterations = it + 1
    return x, energy


def _free_boundary_search(E: _Energy, x, free, delta, eps, cfg: SolverConfig, trace: StageTrace):
    """Shift the discrete free boundary one ring at a time while it pays.

    The concave singular term leaves stationary points whose contact set is
    off by a few cells; each move snaps the detached ring onto the obstacle
    (or lifts the contact ring), re-minimizes, and is kept only if the
    energy drops.
    """
    grid = E.spec.grid
    phi = E.phi
    energy = E.value(x, delta, eps)
    trace.energies.append(energy)
    for _ in range(cfg.fb_search_moves):
        contact = x - phi <= cfg.tol_contact
        improved = False
        for kind in ("snap", "lift"):
            if kind == "snap":
                ring = free & ~contact & grid.adjacent_to(contact)
            else:
                ring = free & contact & grid.adjacent_to(~contact)
            if not ring.any():
                continue
            y = x.copy()
            if kind == "snap":
                y[ring] = phi[ring]
            else:
                y[ring] = phi[ring] + 0.5 * grid.neighbor_mean(x - phi, ~contact)[ring]
            scratch = StageTrace(delta, eps)
            y, e_new = _minimize_stage(E, y, free, delta, eps, cfg.tol_kkt, cfg, scratch)
            if e_new < energy - 1e-15 * abs(energy):
                x, energy = y, e_new
                trace.energies.append(energy)
                trace.iterations += 1
                improved = True
                break
        if not improved:
            break
    trace.kkt = float(kkt_residual(E.gradient(x, delta, eps), x, phi, free, cfg.tol_contact).max(initial=0.0))
    trace.converged = trace.kkt <= cfg.tol_kkt * (1 + abs(energy))
    return x, energy


def _initial_guess(spec, init):
    g = spec.grid
    x = np.array(spec.obstacle.values, dtype=float)
    if init is not None:
        x = np.maximum(x, init.values if isinstance(init, GridField) else np.asarray(init, float))
    x[g.boundary_mask] = spec.boundary.values[g.boundary_mask]
    return x


def _coarse_problem(spec: ProblemSpec):
    """The same problem on the grid of spacing 2h, by injection; None if the
    grids do not nest (discs, odd cell counts)."""
    g = spec.grid
    if g.domain.shape == "disc":
        return None
    try:
        cg = make_grid(g.domain, 2 * g.h)
    except ValueError:
        return None
    dist, idx = cKDTree(g.coords).query(cg.coords)
    if np.any(dist > 1e-9 * max(1.0, g.h)):
        return None
    phi = GridField(cg, spec.obstacle.values[idx])
    bd = GridField(cg, spec.boundary.values[idx])
    return replace(spec, grid=cg, obstacle=phi, boundary=bd)


def _prolong(coarse_u: GridField, coarse_phi: GridField, spec: ProblemSpec):
    """Interpolate the coarse gap u - phi to the fine grid and add phi."""
    gap = GridField(coarse_u.grid, np.maximum(coarse_u.values - coarse_phi.values, 0.0))
    return spec.obstacle.values + interpolate(gap, spec.grid.coords)


def solve(spec: ProblemSpec, config: SolverConfig | None = None, init=None) -> SolveResult:
    """Minimize the discrete J_delta over v >= phi with v = g on the boundary.

    ``init`` optionally seeds the first (delta = 0) stage; it is lifted onto
    the obstacle. Without ``init``, fine grids are seeded from the solution on
    the grid of spacing 2h (when ``config.multilevel``), which fixes most of
    the contact set before the expensive fine-grid stages.
    """
    cfg = config or SolverConfig()
    grid = spec.grid
    free = grid.interior_mask
    E = _Energy(spec)

    if spec.delta > 0:
        plan = [(f * spec.delta, cfg.eps_schedule[0]) for f in cfg.delta_schedule]
        plan += [(spec.delta, e) for e in cfg.eps_schedule[1:]]
    else:
        plan = [(0.0, cfg.eps_schedule[-1])]

    coarse = None
    if init is None and cfg.multilevel and grid.n_active > cfg.coarse_nodes:
        coarse = _coarse_problem(spec)
    if coarse is not None:
        cres = solve(coarse, cfg)
        x = _initial_guess(spec, _prolong(cres.u, coarse.obstacle, spec))
        plan = plan[-1:]
        log.info("seeded h=%g from h=%g", grid.h, coarse.grid.h)
    else:
        x = _initial_guess(spec, init)

    stages = []
    energy = np.nan
    for delta, eps in plan:
        trace = StageTrace(delta, eps)
        x, energy = _minimize_stage(E, x, free, delta, eps, cfg.tol_kkt, cfg, trace)
        stages.append(trace)
        log.info("stage delta=%g eps=%g: %d its, kkt=%.3e", delta, eps, trace.iterations, trace.kkt)
    if cfg.fb_search and spec.delta > 0:
        trace = StageTrace(*plan[-1])
        x, energy = _free_boundary_search(E, x, free, plan[-1][0], plan[-1][1], cfg, trace)
        stages.append(trace)

    last = stages[-1]
    g_all = E.gradient(x, plan[-1][0], plan[-1][1])
    res = kkt_residual(g_all, x, E.phi, free, cfg.tol_contact)
    tol = cfg.tol_kkt * (1 + abs(energy))
    return SolveResult(
        u=GridField(grid, x),
        stages=stages,
        final_energy=float(energy),
        contact_mask=x - E.phi <= cfg.tol_contact,
        kkt_residual=GridField(grid, res),
        kkt=float(res.max(initial=0.0)),
        tol_kkt=tol,
        converged=bool(last.converged),
    )


def linf_bound_violation(result: SolveResult, spec: ProblemSpec, tol=None) -> float:
    """Excess of u over the bounds  -sup|phi| <= u <= max(sup|g|, sup|phi|).

    Returns 0 when both hold within ``tol`` (default: the solve's tol_kkt),
    else the largest violation.
    """
    tol = result.tol_kkt if tol is None else tol
    bd = spec.grid.boundary_mask
    gmax = np.abs(spec.boundary.values[bd]).max()
    pmax = np.abs(spec.obstacle.values).max()
    u = result.u.values
    over = u.max() - max(gmax, pmax) - tol
    under = -pmax - tol - u.min()
    return float(max(over, under, 0.0))


# -- Euler-Lagrange diagnostics -----------------------------------------------


@dataclass
class ELResidual:
    residual: np.ndarray
    mask: np.ndarray
    summary: float | None

    @property
    def vacuous(self):
        return self.summary is None


def _field_of(result_or_field):
    if isinstance(result_or_field, SolveResult):
        if not result_or_field.converged:
            raise ValueError("el_residual needs a converged result")
        return result_or_field.u
    return result_or_field


def default_tol_detach(spec: ProblemSpec):
    from .regularity import theoretical_exponents

    tau = theoretical_exponents(spec.p, spec.gamma, spec.beta).tau
    return spec.grid.h ** (1 + tau)


def el_residual(result, spec: ProblemSpec, tol_detach=None, min_distance=None) -> ELResidual:
    """div(grad H(grad u)) - delta*gamma*(u - phi)^(gamma-1) on the detached set.

    The summary is the max |residual| over interior nodes with
    u - phi > tol_detach lying at least ``min_distance`` (default 3h) from
    the contact set and from the boundary; ``None`` when no node qualifies.
    """
    u = _field_of(result)
    grid = spec.grid
    tol_detach = default_tol_detach(spec) if tol_detach is None else tol_detach
    min_distance = 3 * grid.h if min_distance is None else min_distance
    E = _Energy(spec)
    gap = u.values - E.phi
    detached = gap > tol_detach
    cell = grid.h ** grid.dim
    div = -E.principal_gradient(u.values) / cell
    res = np.zeros_like(div)
    with np.errstate(divide="ignore"):
        rhs = np.where(detached, spec.delta * spec.gamma * np.where(detached, gap, 1.0) ** (spec.gamma - 1), 0.0)
    mask = detached & grid.interior_mask
    res[mask] = div[mask] - rhs[mask]

    far = np.ones_like(mask)
    blockers = (~detached) | grid.boundary_mask
    if blockers.any():
        dist, _ = cKDTree(grid.coords[blockers]).query(grid.coords)
        far = dist >= min_distance * (1 - 1e-9)
    mask &= far
    summary = float(np.abs(res[mask]).max()) if mask.any() else None
    return ELResidual(res, mask, summary)


def min_energy_monotonicity_check(spec: ProblemSpec, deltas, config=None, tol=None):
    """Solve for each delta and test that min J_delta is non-decreasing.

    Returns ``(ok, energies)`` with energies evaluated exactly (eps = 0) on
    the computed minimizers.
    """
    energies = []
    for d in deltas:
        s = spec.with_delta(float(d))
        res = solve(s, config)
        energies.append(discrete_energy(s, res.u, 0.0))
    energies = np.asarray(energies)
    if tol is None:
        tol = 1e-8 * (1 + np.abs(energies).max(initial=0.0))
    order = np.argsort(np.asarray(deltas, float), kind="stable")
    ok = bool(np.all(np.diff(energies[order]) >= -tol))
    return ok, energies.tolist()


def evaluate(result: SolveResult, points):
    """Interpolate the minimizer at ``points``."""
    return interpolate(result.u, points)
