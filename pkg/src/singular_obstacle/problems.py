"""Named catalog of obstacle / boundary profiles and the dead-core benchmark.

Profiles are referenced by name plus numeric parameters, never by embedded
expressions, so configs stay portable.
"""
from __future__ import annotations

import numpy as np

from .grid import Domain, GridField, make_grid
from .solver import ProblemSpec


def dead_core_exponent(p, gamma):
    """Homogeneity kappa = p / (p - gamma) of the dead-core profile."""
    return p / (p - gamma)


def dead_core_constant(p, gamma, n=1):
    """c with c * r**kappa solving div(|grad u|^(p-2) grad u) = gamma u^(gamma-1).

    From c^(p-gamma) kappa^(p-1) ((kappa-1)(p-1) + n - 1) = gamma; n = 1 is
    the half-line profile c * x_+**kappa.
    """
    k = dead_core_exponent(p, gamma)
    return (gamma / (k ** (p - 1) * ((k - 1) * (p - 1) + n - 1))) ** (1.0 / (p - gamma))


def dead_core_profile(x, p, gamma, shift=0.0):
    """c * (x1 - shift)_+ ** kappa evaluated at points x (m, dim)."""
    x = np.atleast_2d(x)
    c = dead_core_constant(p, gamma)
    return c * np.maximum(x[:, 0] - shift, 0.0) ** dead_core_exponent(p, gamma)


def _norm(x):
    return np.linalg.norm(np.atleast_2d(x), axis=1)


def _q_dot(x, q):
    q = np.atleast_1d(np.asarray(q, float))
    x = np.atleast_2d(x)
    if q.size == 1:
        return q[0] * x[:, 0]
    return x @ q[: x.shape[1]]


# name -> (callable(x, problem_params, **params), allowed params)
CATALOG = {
    "zero": (lambda x, pr: np.zeros(len(x)), ()),
    "constant": (lambda x, pr, c=0.0: np.full(len(x), float(c)), ("c",)),
    "cone": (lambda x, pr, A=1.0: A * _norm(x), ("A",)),
    "power": (lambda x, pr, A=1.0, beta=None: -A * _norm(x) ** (1 + (pr["beta"] if beta is None else beta)), ("A", "beta")),
    "tilted": (
        lambda x, pr, q=0.0, A=1.0, beta=None: _q_dot(x, q) - A * _norm(x) ** (1 + (pr["beta"] if beta is None else beta)),
        ("q", "A", "beta"),
    ),
    "benchmark": (
        lambda x, pr, shift=0.0: dead_core_profile(x, pr["p"], pr["gamma"], shift),
        ("shift",),
    ),
    "radial_benchmark": (
        lambda x, pr: dead_core_constant(pr["p"], pr["gamma"], np.atleast_2d(x).shape[1])
        * _norm(x) ** dead_core_exponent(pr["p"], pr["gamma"]),
        (),
    ),
}


def catalog_eval(name, params, x, problem_params):
    """Evaluate catalog profile ``name`` at points ``x``."""
    if name not in CATALOG:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(CATALOG)}")
    fn, allowed = CATALOG[name]
    extra = set(params) - set(allowed)
    if extra:
        raise ValueError(f"profile {name!r} does not take parameters {sorted(extra)}")
    return np.asarray(fn(np.atleast_2d(x), problem_params, **params), dtype=float)


def build_problem(domain: Domain, h, p, gamma, delta, obstacle, boundary, beta=1.0, density=None) -> ProblemSpec:
    """ProblemSpec from catalog entries ``(name, params)`` for phi and g."""
    grid = make_grid(domain, h)
    pr = {"p": p, "gamma": gamma, "beta": beta}
    phi = GridField(grid, catalog_eval(obstacle[0], obstacle[1], grid.coords, pr))
    g = GridField(grid, catalog_eval(boundary[0], boundary[1], grid.coords, pr))
    return ProblemSpec(grid, p, gamma, delta, phi, g, beta=beta, density=density)


def benchmark_problem(h, p=2.0, gamma=0.5, delta=1.0, a=-1.0, b=1.0) -> ProblemSpec:
    """Flat obstacle on [a, b] with the dead-core profile as boundary data."""
    return build_problem(Domain.interval(a, b), h, p, gamma, delta, ("zero", {}), ("benchmark", {}))


def obstacle_limited_problem(h, p=2.0, gamma=0.75, beta=0.3, A=1.0, lift=0.0, delta=1.0) -> ProblemSpec:
    """Obstacle -A|x|^(1+beta) on [-1, 1]; boundary data phi + lift.

    The concave cusp at 0 cannot be detached from by a profile that is convex
    on the free set, so 0 is a contact point.
    """
    dom = Domain.interval(-1.0, 1.0)
    grid = make_grid(dom, h)
    pr = {"p": p, "gamma": gamma, "beta": beta}
    phi = catalog_eval("power", {"A": A}, grid.coords, pr)
    return ProblemSpec(grid, p, gamma, delta, GridField(grid, phi), GridField(grid, phi + lift), beta=beta)
