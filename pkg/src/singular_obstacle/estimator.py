"""scikit-learn style front end for the obstacle solver.

``ObstacleSolver(...).fit(problem)`` solves a :class:`ProblemSpec` and keeps
the solution; ``predict(X)`` interpolates it at points X of shape
(n_points, dim). The "training data" is the problem itself rather than a
sample matrix, so only the parameter handling and the fitted-attribute
conventions of the estimator API carry over.
"""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted, check_scalar

from .freeboundary import classify_contact
from .grid import interpolate
from .solver import ProblemSpec, SolverConfig, solve


class ObstacleSolver(BaseEstimator):
    """Minimizer of the singular obstacle energy with sklearn conventions.

    Parameters mirror :class:`SolverConfig`; ``eps_min`` is the last entry
    of the regularization schedule, which starts at 1e-2 and drops by a
    decade per stage.

    Attributes set by ``fit``: ``result_``, ``u_``, ``contact_``,
    ``free_boundary_``, ``n_iter_`` (Newton steps summed over stages) and
    ``converged_``.
    """

    def __init__(self, eps_min=1e-8, tol_kkt=1e-8, max_iter=500, fb_search=True, multilevel=True):
        self.eps_min = eps_min
        self.tol_kkt = tol_kkt
        self.max_iter = max_iter
        self.fb_search = fb_search
        self.multilevel = multilevel

    def _config(self):
        check_scalar(self.eps_min, "eps_min", numbers.Real, min_val=0.0, max_val=1e-2, include_boundaries="right")
        check_scalar(self.tol_kkt, "tol_kkt", numbers.Real, min_val=0.0, include_boundaries="neither")
        check_scalar(self.max_iter, "max_iter", numbers.Integral, min_val=1)
        n = int(round(np.log10(1e-2 / self.eps_min)))
        eps = tuple(10.0 ** -k for k in range(2, 2 + n) if 10.0 ** -k > self.eps_min) + (float(self.eps_min),)
        return SolverConfig(
            eps_schedule=eps,
            tol_kkt=self.tol_kkt,
            max_iter=self.max_iter,
            fb_search=bool(self.fb_search),
            multilevel=bool(self.multilevel),
        )

    def fit(self, problem: ProblemSpec, y=None, init=None):
        if not isinstance(problem, ProblemSpec):
            raise TypeError("fit expects a ProblemSpec")
        result = solve(problem, self._config(), init=init)
        self.problem_ = problem
        self.result_ = result
        self.u_ = result.u
        self.converged_ = result.converged
        self.n_iter_ = int(sum(result.iterations))
        if result.converged:
            cls = classify_contact(result, problem)
            self.contact_ = cls.contact
            self.free_boundary_ = problem.grid.coords[cls.fb_nodes]
        else:
            self.contact_ = result.contact_mask
            self.free_boundary_ = np.empty((0, problem.grid.dim))
        return self

    def predict(self, X):
        """Interpolated solution at points X (n_points, dim)."""
        check_is_fitted(self, "u_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, self.u_.grid.dim)
        return interpolate(self.u_, X)

    def score(self, problem: ProblemSpec = None, y=None):
        """Negative discrete energy of the fitted solution (higher is better)."""
        check_is_fitted(self, "u_")
        return -float(self.result_.final_energy)
