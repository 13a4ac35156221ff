"""Contact set, discrete free boundary and first-order matching of u and phi.

A node is in contact when ``u - phi <= tol_detach``. The discrete free
boundary is the contact-side ring: contact nodes with at least one detached
axis neighbour. Its detached counterpart (detached nodes next to contact) is
kept as ``detached_ring``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grid import GridField
from .solver import ProblemSpec, SolveResult, default_tol_detach


@dataclass(frozen=True)
class ContactClassification:
    """Per-node contact/free-boundary labels plus gradient estimates at FB nodes.

    ``grad_u``, ``grad_phi`` and ``mismatch`` are aligned with ``fb_nodes``.
    """

    u: GridField
    phi: GridField
    tol_detach: float
    contact: np.ndarray
    fb_mask: np.ndarray
    detached_ring: np.ndarray
    fb_nodes: np.ndarray
    grad_u: np.ndarray
    grad_phi: np.ndarray
    mismatch: np.ndarray

    @property
    def detached(self):
        return ~self.contact

    @property
    def vacuous(self):
        return self.fb_nodes.size == 0

    def to_csv(self, path):
        """Columns: node, x1[, x2], contact, fb, mismatch (empty off the FB)."""
        grid = self.u.grid
        mis = dict(zip(self.fb_nodes.tolist(), self.mismatch.tolist()))
        cols = ["node"] + [f"x{k + 1}" for k in range(grid.dim)] + ["contact", "fb", "mismatch"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for i in range(grid.n_active):
                m = mis.get(i)
                w.writerow(
                    [i]
                    + [repr(float(c)) for c in grid.coords[i]]
                    + [int(self.contact[i]), int(self.fb_mask[i]), "" if m is None else repr(m)]
                )


def _one_sided(vals, pos, axis, sign, h, shape):
    """Second-order one-sided derivative along ``axis`` stepping ``sign``.

    Falls back to first order when the second node is outside the box or
    inactive (NaN)."""
    p1, p2 = list(pos), list(pos)
    p1[axis] += sign
    p2[axis] += 2 * sign
    f0, f1 = vals[tuple(pos)], vals[tuple(p1)]
    if 0 <= p2[axis] < shape[axis] and np.isfinite(vals[tuple(p2)]):
        return sign * (-3 * f0 + 4 * f1 - vals[tuple(p2)]) / (2 * h)
    return sign * (f1 - f0) / h


def _node_gradients(grid, u_box, phi_box, det_box, pos):
    h, shape = grid.h, grid.shape
    gu = np.zeros(grid.dim)
    gp = np.zeros(grid.dim)
    for axis in range(grid.dim):
        sides = {}
        for sign in (-1, 1):
            q = list(pos)
            q[axis] += sign
            if 0 <= q[axis] < shape[axis] and np.isfinite(u_box[tuple(q)]):
                sides[sign] = bool(det_box[tuple(q)])
        into = [s for s, det in sides.items() if det]
        if into:
            gu[axis] = np.mean([_one_sided(u_box, pos, axis, s, h, shape) for s in into])
            gp[axis] = np.mean([_one_sided(phi_box, pos, axis, s, h, shape) for s in into])
        elif len(sides) == 2:
            q_lo, q_hi = list(pos), list(pos)
            q_lo[axis] -= 1
            q_hi[axis] += 1
            gu[axis] = (u_box[tuple(q_hi)] - u_box[tuple(q_lo)]) / (2 * h)
            gp[axis] = (phi_box[tuple(q_hi)] - phi_box[tuple(q_lo)]) / (2 * h)
        elif sides:
            s = next(iter(sides))
            gu[axis] = _one_sided(u_box, pos, axis, s, h, shape)
            gp[axis] = _one_sided(phi_box, pos, axis, s, h, shape)
    return gu, gp


def classify_contact(result, spec: ProblemSpec, tol_detach=None) -> ContactClassification:
    """Split the active nodes into contact / detached and locate the free boundary.

    ``result`` is a converged :class:`SolveResult` or a bare :class:`GridField`
    (analytic fields). ``tol_detach`` defaults to h^(1+tau).
    """
    if isinstance(result, SolveResult):
        if not result.converged:
            raise ValueError("classify_contact needs a converged solve result")
        u = result.u
    elif isinstance(result, GridField):
        u = result
    else:
        raise TypeError("result must be a SolveResult or a GridField")
    grid = spec.grid
    if u.grid is not grid:
        raise ValueError("result and spec live on different grids")
    tol = default_tol_detach(spec) if tol_detach is None else float(tol_detach)
    if tol < 0:
        raise ValueError("tol_detach must be non-negative")

    gap = u.values - spec.obstacle.values
    contact = gap <= tol
    fb_mask = contact & grid.adjacent_to(~contact)
    ring = ~contact & grid.adjacent_to(contact)
    fb_nodes = np.flatnonzero(fb_mask)

    u_box = grid.to_array(u.values)
    phi_box = grid.to_array(spec.obstacle.values)
    det_box = grid.to_array(~contact) == 1
    flat = np.flatnonzero(grid.active)
    gu = np.zeros((fb_nodes.size, grid.dim))
    gp = np.zeros((fb_nodes.size, grid.dim))
    for k, i in enumerate(fb_nodes):
        pos = np.unravel_index(flat[i], grid.shape)
        gu[k], gp[k] = _node_gradients(grid, u_box, phi_box, det_box, pos)
    mismatch = np.linalg.norm(gu - gp, axis=1)
    return ContactClassification(u, spec.obstacle, tol, contact, fb_mask, ring, fb_nodes, gu, gp, mismatch)


def gradient_match(classification: ContactClassification):
    """max |grad u - grad phi| over the free boundary, or None when it is empty."""
    if classification.vacuous:
        return None
    return float(classification.mismatch.max())
