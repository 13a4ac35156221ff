"""Energy densities H(xi), their growth algebra, and empirical checks of the
structural bounds

    |grad H| <= Upsilon * omega(|xi|)
    |D^2 H|  <= Lambda  * omega(|xi|) / |xi|
    eta^T D^2 H eta >= lambda * omega(|xi|) / |xi| * |eta|^2

with omega(z) = kappa1 * z**(p-1) + kappa2 * z.

Four kinds are supported: ``p-power`` (|xi|^p / p), ``quadratic``
(|xi|^2 / 2), ``tilted`` (second-order remainder of |.|^p / p around a
point ``a``, rescaled by ``epsilon``) and ``appendixA`` (the same remainder
taken of the convexified profile ``h`` built by :func:`h_jet`).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

KINDS = ("p-power", "quadratic", "appendixA", "tilted")


class NonConvexDensityWarning(UserWarning):
    """The appendixA density uses nu above the admissible threshold."""


@dataclass(frozen=True)
class GrowthParams:
    kappa1: float
    kappa2: float
    p: float

    def __post_init__(self):
        if self.kappa1 < 0 or self.kappa2 < 0:
            raise ValueError("kappa1 and kappa2 must be nonnegative")
        if not self.kappa1 + self.kappa2 > 0:
            raise ValueError("kappa1 + kappa2 must be positive")
        if self.p < 2:
            raise ValueError("p must be >= 2")

    @property
    def q(self):
        """Oscillation exponent: 2 for the purely quadratic case, else p."""
        return 2.0 if self.kappa1 == 0 else float(self.p)


@dataclass(frozen=True)
class Jet2:
    """Value, gradient and Hessian of a density at one point (or a batch).

    ``singular`` marks points where no finite Hessian exists (|xi|^p with
    2 < p < 4 at the origin); the Hessian is NaN there.
    """

    value: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray
    singular: np.ndarray | bool = False
    nonconvex_risk: bool = False


def _check_z(z):
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("growth functions are defined for z >= 0")
    return z


def omega_eval(growth: GrowthParams, z):
    """kappa1 * z**(p-1) + kappa2 * z."""
    z = _check_z(z)
    return growth.kappa1 * z ** (growth.p - 1) + growth.kappa2 * z


def G_eval(growth: GrowthParams, z):
    """Primitive of omega: kappa1 * z**p / p + kappa2 * z**2 / 2."""
    z = _check_z(z)
    return growth.kappa1 * z ** growth.p / growth.p + growth.kappa2 * z ** 2 / 2


def admissible_nu(p, kappa0):
    """Closed-form convexity threshold (p/152) * (kappa0/4)**(p-8) for h."""
    if p < 2 or not kappa0 > 0:
        raise ValueError("need p >= 2 and kappa0 > 0")
    return p / 152.0 * (kappa0 / 4.0) ** (p - 8)


# -- the convexified profile h -------------------------------------------------


def _power_jet(p, z):
    """|z|^p and its derivatives for a batch z of shape (m, n)."""
    m, n = z.shape
    r2 = np.einsum("ij,ij->i", z, z)
    r = np.sqrt(r2)
    val = r ** p
    with np.errstate(divide="ignore", invalid="ignore"):
        rp2 = np.where(r > 0, r ** (p - 2), 1.0 if p == 2 else 0.0)
        rp4 = np.where(r > 0, r ** (p - 4), 0.0)
    grad = p * rp2[:, None] * z
    hess = p * rp2[:, None, None] * np.eye(n)[None] + p * (p - 2) * rp4[:, None, None] * np.einsum(
        "ij,ik->ijk", z, z
    )
    singular = (r == 0) & (2 < p < 4)
    hess[singular] = np.nan
    return val, grad, hess, singular


def _h_batch(p, kappa0, nu, z):
    val, grad, hess, singular = _power_jet(p, z)
    n = z.shape[1]
    s = np.einsum("ij,ij->i", z, z)
    chi = s <= kappa0 ** 2
    gap = np.where(chi, kappa0 ** 2 - s, 0.0)
    val = val + nu * s * gap ** 3
    coef = 2 * nu * (kappa0 ** 2 - 4 * s) * gap ** 2
    grad = grad + coef[:, None] * z
    # the z (x) z coefficient is 24 nu (k^4 - 3 k^2 s + 2 s^2); it vanishes outside the ball
    zz = np.where(chi, 24 * nu * (kappa0 ** 4 - 3 * kappa0 ** 2 * s + 2 * s ** 2), 0.0)
    hess = hess + coef[:, None, None] * np.eye(n)[None] - zz[:, None, None] * np.einsum("ij,ik->ijk", z, z)
    return val, grad, hess, singular


def h_jet(p, kappa0, nu, z) -> Jet2:
    """Jet of h(z) = |z|^p + nu |z|^2 (kappa0^2 - |z|^2)^3 on |z| <= kappa0.

    ``z`` may be a single point (n,) or a batch (m, n).
    """
    if p < 2 or not kappa0 > 0 or not nu > 0:
        raise ValueError("need p >= 2, kappa0 > 0, nu > 0")
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    val, grad, hess, singular = _h_batch(p, kappa0, nu, np.atleast_2d(z))
    if single:
        return Jet2(val[0], grad[0], hess[0], bool(singular[0]))
    return Jet2(val, grad, hess, singular)


def min_hessian_eigenvalue_h(p, kappa0, nu, n_radii=4001):
    """Smallest eigenvalue of D^2 h over a radial sample of (0, kappa0].

    h is radial, so the eigenvalues at (r, 0) are the radial and tangential
    curvatures; the sample is exhaustive up to the radial resolution.
    """
    r = np.linspace(kappa0 / n_radii, kappa0, n_radii)
    z = np.stack([r, np.zeros_like(r)], axis=1)
    _, _, hess, _ = _h_batch(p, kappa0, nu, z)
    return float(np.linalg.eigvalsh(hess).min())


@lru_cache(maxsize=256)
def validated_nu(p, kappa0, n_radii=4001, iters=60):
    """Operative convexity threshold: the closed form, capped by sampling.

    Returns min(admissible_nu, nu_sampled) where nu_sampled is the largest
    nu (by bisection) keeping the sampled Hessian of h positive
    semidefinite.
    """
    closed = admissible_nu(p, kappa0)
    if min_hessian_eigenvalue_h(p, kappa0, closed, n_radii) >= 0:
        return closed
    lo, hi = 0.0, closed
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if min_hessian_eigenvalue_h(p, kappa0, mid, n_radii) >= 0:
            lo = mid
        else:
            hi = mid
    return lo


# -- densities ----------------------------------------------------------------


@dataclass(frozen=True)
class EnergyDensity:
    kind: str
    growth: GrowthParams
    epsilon: float = 1.0
    a: tuple = (0.0, 0.0)
    kappa0: float = 1.0
    nu: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown density kind {self.kind!r}")
        if self.kind in ("appendixA", "tilted"):
            if not 0 < self.epsilon <= 1:
                raise ValueError("epsilon must lie in (0, 1]")
            object.__setattr__(self, "a", tuple(float(c) for c in self.a))
        if self.kind == "appendixA":
            if not self.kappa0 > 0 or not self.nu > 0:
                raise ValueError("appendixA needs kappa0 > 0 and nu > 0")
            if self.nonconvex_risk:
                warnings.warn(
                    f"nu={self.nu} exceeds the validated threshold; the density may be non-convex",
                    NonConvexDensityWarning,
                    stacklevel=3,
                )

    @property
    def p(self):
        return self.growth.p

    @property
    def dim(self):
        return len(self.a) if self.kind in ("appendixA", "tilted") else None

    @property
    def nonconvex_risk(self):
        if self.kind != "appendixA":
            return False
        return self.nu > validated_nu(self.p, self.kappa0)

    @classmethod
    def p_power(cls, p):
        return cls("p-power", GrowthParams(1.0, 0.0, float(p)))

    @classmethod
    def quadratic(cls):
        return cls("quadratic", GrowthParams(0.0, 1.0, 2.0))

    @classmethod
    def tilted(cls, p, epsilon, a):
        a = tuple(float(c) for c in np.atleast_1d(a))
        return cls("tilted", _remainder_growth(p, epsilon, a), epsilon=epsilon, a=a)

    @classmethod
    def appendix_a(cls, p, epsilon, a, kappa0, nu):
        a = tuple(float(c) for c in np.atleast_1d(a))
        return cls(
            "appendixA", _remainder_growth(p, epsilon, a), epsilon=epsilon, a=a, kappa0=kappa0, nu=nu
        )

    def to_dict(self):
        d = {"kind": self.kind, "p": self.p}
        if self.kind in ("appendixA", "tilted"):
            d.update(epsilon=self.epsilon, a=list(self.a))
        if self.kind == "appendixA":
            d.update(kappa0=self.kappa0, nu=self.nu)
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d["kind"]
        if kind == "p-power":
            return cls.p_power(d["p"])
        if kind == "quadratic":
            return cls.quadratic()
        if kind == "tilted":
            return cls.tilted(d["p"], d.get("epsilon", 1.0), d.get("a", [0.0, 0.0]))
        if kind == "appendixA":
            return cls.appendix_a(d["p"], d.get("epsilon", 1.0), d.get("a", [0.0, 0.0]), d["kappa0"], d["nu"])
        raise ValueError(f"unknown density kind {kind!r}")


def _remainder_growth(p, epsilon, a):
    # kappa1 = eps^(p-2), kappa2 = |a|^(p-2) + 1 reproduce the growth of the
    # rescaled remainders up to constants depending on p, |a| and kappa0
    return GrowthParams(epsilon ** (p - 2), float(np.linalg.norm(a)) ** (p - 2) + 1.0, float(p))


def density_batch(density: EnergyDensity, xi):
    """(value, gradient, hessian, singular) for a batch xi of shape (m, n)."""
    xi = np.asarray(xi, dtype=float)
    kind = density.kind
    p = density.p
    if kind == "quadratic":
        n = xi.shape[1]
        val = 0.5 * np.einsum("ij,ij->i", xi, xi)
        hess = np.broadcast_to(np.eye(n), (xi.shape[0], n, n)).copy()
        return val, xi.copy(), hess, np.zeros(xi.shape[0], bool)
    if kind == "p-power":
        val, grad, hess, singular = _power_jet(p, xi)
        return val / p, grad / p, hess / p, singular

    eps = density.epsilon
    a = np.asarray(density.a, float)
    if xi.shape[1] != a.shape[0]:
        raise ValueError(f"xi has dimension {xi.shape[1]}, density expects {a.shape[0]}")
    z = eps * xi + a[None]
    if kind == "tilted":
        vz, gz, hz, singular = _power_jet(p, z)
        va, ga, _, _ = _power_jet(p, a[None])
    else:
        vz, gz, hz, singular = _h_batch(p, density.kappa0, density.nu, z)
        va, ga, _, _ = _h_batch(p, density.kappa0, density.nu, a[None])
    scale = 1.0 / (p * eps ** 2)
    val = scale * (vz - va[0] - eps * xi @ ga[0])
    grad = (gz - ga[0][None]) / (p * eps)
    hess = hz / p
    return val, grad, hess, singular


def energy_jet(density: EnergyDensity, xi) -> Jet2:
    """Value, gradient and Hessian of ``density`` at ``xi`` (point or batch)."""
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    val, grad, hess, singular = density_batch(density, np.atleast_2d(xi))
    risk = density.nonconvex_risk
    if single:
        return Jet2(val[0], grad[0], hess[0], bool(singular[0]), risk)
    return Jet2(val, grad, hess, singular, risk)


# -- empirical structural constants -------------------------------------------


def sample_directions(n, count=64):
    if n == 1:
        return np.array([[1.0], [-1.0]])
    t = 2 * np.pi * np.arange(count) / count
    return np.stack([np.cos(t), np.sin(t)], axis=1)


@dataclass
class StructuralReport:
    kind: str
    params: dict
    Upsilon_hat: float
    Lambda_hat: float
    lambda_hat: float
    worst_points: dict

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": self.params,
            "Upsilon_hat": self.Upsilon_hat,
            "Lambda_hat": self.Lambda_hat,
            "lambda_hat": self.lambda_hat,
            "worst_points": self.worst_points,
        }


def check_structural_bounds(density: EnergyDensity, sample_radii, samples_per_radius=64, dim=None):
    """Estimate Upsilon, Lambda, lambda on radii x directions.

    ``samples_per_radius`` is the number of angular directions in 2-d; in
    1-d the directions are {+1, -1}.
    """
    radii = np.asarray(sample_radii, dtype=float).ravel()
    if radii.size == 0 or samples_per_radius < 1:
        raise ValueError("empty sample set")
    if np.any(radii <= 0):
        raise ValueError("sample radii must be positive")
    n = dim or density.dim or 2
    dirs = sample_directions(n, samples_per_radius)
    xi = (radii[:, None, None] * dirs[None]).reshape(-1, n)
    val, grad, hess, singular = density_batch(density, xi)
    keep = ~singular
    xi, grad, hess = xi[keep], grad[keep], hess[keep]
    r = np.linalg.norm(xi, axis=1)
    om = omega_eval(density.growth, r)
    ups = np.linalg.norm(grad, axis=1) / om
    eig = np.linalg.eigvalsh(hess)
    lam_hi = np.abs(eig).max(axis=1) / (om / r)
    lam_lo = eig[:, 0] / (om / r)
    i_u, i_L, i_l = int(np.argmax(ups)), int(np.argmax(lam_hi)), int(np.argmin(lam_lo))
    return StructuralReport(
        kind=density.kind,
        params=density.to_dict(),
        Upsilon_hat=float(ups[i_u]),
        Lambda_hat=float(lam_hi[i_L]),
        lambda_hat=float(lam_lo[i_l]),
        worst_points={
            "Upsilon": xi[i_u].tolist(),
            "Lambda": xi[i_L].tolist(),
            "lambda": xi[i_l].tolist(),
        },
    )


def convexity_gap(density: EnergyDensity, pairs, return_argmin=False):
    """min over (x, y) of [H(x) - H(y) - grad H(y).(x - y)] / G(|x - y|)."""
    x, y = (np.asarray(v, dtype=float) for v in pairs)
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    if x.shape != y.shape or x.shape[0] == 0:
        raise ValueError("pairs must be two equally shaped, nonempty point arrays")
    d = np.linalg.norm(x - y, axis=1)
    if np.any(d == 0):
        raise ValueError("convexity gap is undefined for x == y")
    hx = density_batch(density, x)[0]
    hy, gy, _, _ = density_batch(density, y)
    rem = hx - hy - np.einsum("ij,ij->i", gy, x - y)
    ratio = rem / G_eval(density.growth, d)
    i = int(np.argmin(ratio))
    if return_argmin:
        return float(ratio[i]), (x[i].tolist(), y[i].tolist())
    return float(ratio[i])


def halton_pairs(count, dim, radius=1.0):
    """Deterministic pairs of points in the ball of ``radius`` (Halton)."""
    from scipy.stats import qmc

    u = qmc.Halton(d=2 * dim, scramble=False).random(count + 1)[1:]
    pts = radius * (2 * u - 1)
    x, y = pts[:, :dim], pts[:, dim:]
    # radial squash into the ball keeps the design deterministic
    for v in (x, y):
        nrm = np.linalg.norm(v, axis=1, keepdims=True)
        box = np.max(np.abs(v), axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            v *= np.where(nrm > 0, box / nrm, 1.0)
    return x, y


def finite_difference_check(density: EnergyDensity, points, step=1e-5):
    """Max relative mismatch of the analytic gradient and Hessian against
    central differences (of the value, and of the gradient respectively).

    Points within a few steps of a flagged singular point or of the
    appendixA cutoff sphere (where D^3 h jumps) are skipped.
    """
    pts = np.atleast_2d(np.asarray(points, float))
    m, n = pts.shape
    val, grad, hess, singular = density_batch(density, pts)
    keep = ~singular
    if density.kind == "p-power":
        keep &= np.linalg.norm(pts, axis=1) > 100 * step
    elif density.kind in ("tilted", "appendixA"):
        z = density.epsilon * pts + np.asarray(density.a)[None]
        keep &= np.linalg.norm(z, axis=1) > 100 * step
        if density.kind == "appendixA":
            keep &= np.abs(np.linalg.norm(z, axis=1) - density.kappa0) > 100 * step
    pts, grad, hess = pts[keep], grad[keep], hess[keep]
    fd_grad = np.empty_like(grad)
    fd_hess = np.empty_like(hess)
    for k in range(n):
        e = np.zeros(n)
        e[k] = step
        vp, gp, _, _ = density_batch(density, pts + e)
        vm, gm, _, _ = density_batch(density, pts - e)
        fd_grad[:, k] = (vp - vm) / (2 * step)
        fd_hess[:, :, k] = (gp - gm) / (2 * step)
    g_scale = np.maximum(np.linalg.norm(grad, axis=1), 1.0)
    h_scale = np.maximum(np.linalg.norm(hess, axis=(1, 2)), 1.0)
    g_err = np.linalg.norm(fd_grad - grad, axis=1) / g_scale
    h_err = np.linalg.norm(fd_hess - hess, axis=(1, 2)) / h_scale
    return {
        "n_checked": int(pts.shape[0]),
        "n_skipped": int(m - pts.shape[0]),
        "gradient_rel_err": float(g_err.max(initial=0.0)),
        "hessian_rel_err": float(h_err.max(initial=0.0)),
    }
