"""Elliptical level curves of a fitted Gaussian storm shape.

The boundary is x = x0 + r (cos t, sin t) M with Sigma = M^T M (M upper
triangular), so every point satisfies (x - x0) Sigma^-1 (x - x0)^T = r^2.
Coordinates are treated as planar.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distance import km_per_degree


@dataclass
class Ellipse:
    center: np.ndarray
    r: float
    M: np.ndarray
    boundary: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return self.M.T @ self.M

    @property
    def area(self) -> float:
        return float(np.pi * self.r**2 * abs(np.linalg.det(self.M)))

    def quadratic_form(self, x) -> np.ndarray:
        diff = np.atleast_2d(np.asarray(x, dtype=float)) - self.center
        return np.einsum("ni,ij,nj->n", diff, np.linalg.inv(self.sigma), diff)

    def contains(self, x) -> np.ndarray:
        return self.quadratic_form(x) <= self.r**2


def _sigma_array(s) -> np.ndarray:
    sigma = np.asarray(getattr(s, "sigma", s), dtype=float)
    if sigma.shape != (2, 2):
        raise ValueError("covariance must be 2x2")
    return sigma


def upper_cholesky(sigma) -> np.ndarray:
    """Upper-triangular M with M^T M = sigma; raises ValueError if sigma is not positive definite."""
    sigma = _sigma_array(sigma)
    if not np.allclose(sigma, sigma.T, rtol=1e-12, atol=0):
        raise ValueError("covariance is not symmetric")
    try:
        L = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise ValueError("covariance is not positive definite") from None
    return L.T


def chi2_radius(p: float) -> float:
    """Radius enclosing probability p of a standard bivariate normal."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    return float(np.sqrt(-2.0 * np.log1p(-p)))


def median_center(coords) -> tuple[float, float]:
    """Componentwise median; even counts average the two middle values."""
    xy = np.asarray(coords, dtype=float).reshape(-1, 2)
    if len(xy) == 0:
        raise ValueError("need at least one coordinate")
    med = np.median(xy, axis=0)
    return float(med[0]), float(med[1])


def level_curve(s, x0, r: float, n_points: int = 360) -> Ellipse:
    """Closed ring of `n_points` + 1 points (last repeats the first)."""
    if n_points < 8:
        raise ValueError("n_points must be at least 8")
    M = upper_cholesky(s)
    t = np.linspace(0.0, 2.0 * np.pi, n_points, endpoint=False)
    unit = np.column_stack([np.cos(t), np.sin(t)])
    center = np.asarray(x0, dtype=float)
    pts = center + r * unit @ M
    return Ellipse(center, float(r), M, np.vstack([pts, pts[:1]]))


def shoelace_area(ring) -> float:
    x, y = np.asarray(ring, dtype=float).T
    return 0.5 * abs(float(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1])))


def sample_inside(e: Ellipse, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws inside an ellipse (a linear image of the uniform disc)."""
    rad = e.r * np.sqrt(rng.uniform(size=n))
    ang = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return e.center + (rad[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])) @ e.M


def overlap_fraction(e1: Ellipse, e2: Ellipse, n_samples: int = 100_000, seed: int | None = 0) -> float:
    """Monte Carlo area(e1 & e2) / area(smaller ellipse)."""
    small, other = (e1, e2) if e1.area <= e2.area else (e2, e1)
    rng = np.random.default_rng(seed)
    pts = sample_inside(small, n_samples, rng)
    return float(other.contains(pts).mean())


def sigma_km_to_deg(sigma_km, lat0: float) -> np.ndarray:
    """Express a km^2 covariance in degree^2 using local scale factors at `lat0`."""
    kx, ky = km_per_degree(lat0)
    J = np.diag([1.0 / kx, 1.0 / ky])
    return J @ _sigma_array(sigma_km) @ J.T


def fit_ellipse(fit, level: float = 0.99, n_points: int = 360) -> Ellipse:
    """Level curve in lon/lat degrees for a regional fit (anything with params, units, center).

    km-unit covariances are rescaled to degrees at the centre latitude.
    """
    sigma = np.asarray(fit.params.sigma, dtype=float)
    if fit.units == "km":
        sigma = sigma_km_to_deg(sigma, fit.center[1])
    elif fit.units != "deg":
        raise ValueError(f"unknown units {fit.units!r}")
    return level_curve(sigma, fit.center, chi2_radius(level), n_points)


def overlap_matrix(ellipses, n_samples: int = 100_000, seed: int | None = 0) -> np.ndarray:
    k = len(ellipses)
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = overlap_fraction(ellipses[i], ellipses[j], n_samples, seed)
    return out
