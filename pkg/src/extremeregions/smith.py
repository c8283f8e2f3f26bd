"""Smith max-stable model: simulation, GEV margins and pairwise composite likelihood.

For two sites separated by h the bivariate unit-Frechet distribution is
exp{-Phi(w)/z1 - Phi(v)/z2} with a = sqrt(h' Sigma^-1 h),
w = a/2 + log(z2/z1)/a and v = a - w. Differentiating twice gives the
density used in the pairwise likelihood,

    f(z1, z2) = exp(-V) [Phi(w) Phi(v) / (z1^2 z2^2) + phi(w) / (a z1^2 z2)].
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, special

from .distance import project_local
from .geometry import median_center

logger = logging.getLogger(__name__)

GUMBEL_EPS = 1e-6
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class SmithError(ValueError):
    pass


class DegeneratePairError(SmithError):
    pass


class GevFitError(RuntimeError):
    def __init__(self, message: str, best: "GevParams | None" = None):
        super().__init__(message)
        self.best = best


def norm_cdf(x):
    return special.ndtr(x)


# --------------------------------------------------------------------------- GEV


@dataclass(frozen=True)
class GevParams:
    loc: float
    scale: float
    shape: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"GEV scale must be positive, got {self.scale}")

    def as_dict(self) -> dict:
        return {"loc": self.loc, "scale": self.scale, "shape": self.shape}


def _gev_t(z, g: GevParams):
    y = (np.asarray(z, dtype=float) - g.loc) / g.scale
    if abs(g.shape) < GUMBEL_EPS:
        return y, None
    return y, 1.0 + g.shape * y


def gev_cdf(z, g: GevParams):
    y, t = _gev_t(z, g)
    if t is None:
        return np.exp(-np.exp(-y))
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = np.where(t > 0, np.maximum(t, 0.0) ** (-1.0 / g.shape), np.where(g.shape > 0, np.inf, 0.0))
    return np.exp(-inner)


def gev_quantile(p, g: GevParams):
    p = np.asarray(p, dtype=float)
    if abs(g.shape) < GUMBEL_EPS:
        return g.loc - g.scale * np.log(-np.log(p))
    return g.loc + g.scale * ((-np.log(p)) ** (-g.shape) - 1.0) / g.shape


def gev_nll(z, g: GevParams) -> float:
    """Negative log-likelihood; inf outside the support. |shape| < 1e-6 uses the Gumbel form."""
    z = np.asarray(z, dtype=float)
    n = z.size
    y, t = _gev_t(z, g)
    if t is None:
        return float(n * np.log(g.scale) + y.sum() + np.exp(-y).sum())
    if np.any(t <= 0):
        return np.inf
    logt = np.log(t)
    return float(n * np.log(g.scale) + (1.0 + 1.0 / g.shape) * logt.sum() + np.exp(-logt / g.shape).sum())


def gumbel_nll(z, loc: float, scale: float) -> float:
    """Closed-form Gumbel negative log-likelihood (independent of `gev_nll`)."""
    y = (np.asarray(z, dtype=float) - loc) / scale
    return float(np.sum(np.log(scale) + y + np.exp(-y)))


def gev_fit(z, tol: float = 1e-8, max_eval: int = 4000) -> GevParams:
    """Maximum likelihood GEV fit by Nelder-Mead on (loc, log scale, shape).

    Starts from the Gumbel moment estimates, where the support constraint
    cannot bind. Raises GevFitError (carrying the best iterate) if the
    simplex does not converge or the optimum violates the support.
    """
    z = np.asarray(z, dtype=float)
    if z.size < 2 or not np.all(np.isfinite(z)):
        raise GevFitError("need at least two finite values")
    sd = float(np.std(z))
    if sd <= 0:
        raise GevFitError("constant sample: scale is degenerate")
    scale0 = np.sqrt(6.0) * sd / np.pi
    loc0 = float(np.mean(z)) - np.euler_gamma * scale0
    n = z.size

    def objective(p):
        scale = np.exp(p[1])
        if not np.isfinite(scale) or scale <= 0:
            return np.inf
        return gev_nll(z, GevParams(p[0], scale, p[2])) / n

    x0 = np.array([loc0, np.log(scale0), 0.0])
    simplex = np.vstack([x0, x0 + [0.2 * scale0, 0, 0], x0 + [0, 0.2, 0], x0 + [0, 0, 0.1]])
    res = None
    for _ in range(3):
        res = optimize.minimize(
            objective, x0, method="Nelder-Mead",
            options={"xatol": tol, "fatol": tol, "maxfev": max_eval, "initial_simplex": simplex},
        )
        if res.success and np.allclose(res.x, x0, atol=10 * tol, rtol=0):
            break
        # restart from the optimum with a fresh simplex to escape collapse
        x0 = res.x
        simplex = np.vstack([x0, x0 + [0.05 * np.exp(x0[1]), 0, 0], x0 + [0, 0.05, 0], x0 + [0, 0, 0.02]])
    best = GevParams(float(res.x[0]), float(np.exp(res.x[1])), float(res.x[2]))
    if not np.isfinite(res.fun):
        raise GevFitError("support constraint violated at optimum", best)
    if not res.success:
        raise GevFitError(f"GEV fit did not converge: {res.message}", best)
    return best


def to_frechet(z, g: GevParams, eps: float = 1e-12) -> np.ndarray:
    """Map GEV-distributed values to the unit Frechet scale, t = -1 / log F(z)."""
    p = np.asarray(gev_cdf(z, g), dtype=float)
    if np.any((p <= eps) | (p >= 1 - eps)):
        warnings.warn("GEV probabilities at 0 or 1 clamped before Frechet transform", RuntimeWarning, stacklevel=2)
        p = np.clip(p, eps, 1 - eps)
    return -1.0 / np.log(p)


# ----------------------------------------------------------------- Smith model


@dataclass(frozen=True)
class SmithParams:
    sigma: np.ndarray
    units: str = "km"

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float)
        if s.shape != (2, 2):
            raise SmithError("Smith covariance must be 2x2")
        if not np.isclose(s[0, 1], s[1, 0], rtol=1e-12, atol=0):
            raise SmithError("Smith covariance must be symmetric")
        if not (s[0, 0] > 0 and s[1, 1] > 0 and np.linalg.det(s) > 0):
            raise SmithError(f"Smith covariance is not positive definite: {s.tolist()}")
        object.__setattr__(self, "sigma", s)

    @classmethod
    def from_entries(cls, s11: float, s12: float, s22: float, units: str = "km") -> "SmithParams":
        return cls(np.array([[s11, s12], [s12, s22]], dtype=float), units)

    @property
    def entries(self) -> tuple[float, float, float]:
        return float(self.sigma[0, 0]), float(self.sigma[0, 1]), float(self.sigma[1, 1])

    def as_dict(self) -> dict:
        s11, s12, s22 = self.entries
        return {"s11": s11, "s12": s12, "s22": s22, "units": self.units}


def _as_cov(s) -> np.ndarray:
    cov = np.atleast_2d(np.asarray(getattr(s, "sigma", s), dtype=float))
    if cov.shape[0] != cov.shape[1] or cov.shape[0] not in (1, 2):
        raise SmithError("covariance must be 1x1 or 2x2")
    if not np.allclose(cov, cov.T) or np.any(np.linalg.eigvalsh(cov) <= 0):
        raise SmithError("covariance is not positive definite")
    return cov


def mahalanobis_a(h, s) -> np.ndarray | float:
    """a(h) = sqrt(h' Sigma^-1 h); broadcasts over leading axes of h."""
    cov = _as_cov(s)
    h = np.asarray(h, dtype=float)
    q = np.einsum("...i,ij,...j->...", h, np.linalg.inv(cov), h)
    a = np.sqrt(np.maximum(q, 0.0))
    return float(a) if np.ndim(a) == 0 else a


def extremal_coefficient(h, s):
    """theta(h) = 2 Phi(a(h) / 2)."""
    out = 2.0 * norm_cdf(np.asarray(mahalanobis_a(h, s)) / 2.0)
    return float(out) if np.ndim(out) == 0 else out


def smith_cdf(z1, z2, a):
    """Bivariate Smith CDF at unit-Frechet levels for Mahalanobis separation a > 0."""
    z1, z2, a = (np.asarray(v, dtype=float) for v in (z1, z2, a))
    r = np.log(z2 / z1) / a
    w, v = a / 2 + r, a / 2 - r
    return np.exp(-norm_cdf(w) / z1 - norm_cdf(v) / z2)


def smith_logpdf(z1, z2, a):
    """Log bivariate Smith density (see module docstring); requires a > 0."""
    z1, z2, a = (np.asarray(v, dtype=float) for v in (z1, z2, a))
    lz1, lz2 = np.log(z1), np.log(z2)
    r = (lz2 - lz1) / a
    w, v = a / 2 + r, a / 2 - r
    V = norm_cdf(w) / z1 + norm_cdf(v) / z2
    term1 = special.log_ndtr(w) + special.log_ndtr(v) - lz2
    term2 = -0.5 * w * w - LOG_SQRT_2PI - np.log(a)
    return -V - 2.0 * lz1 - lz2 + np.logaddexp(term1, term2)


def frechet_logpdf(z):
    z = np.asarray(z, dtype=float)
    return -2.0 * np.log(z) - 1.0 / z


@dataclass
class PairData:
    """Flattened (pair, common year) observations for the composite likelihood."""

    z1: np.ndarray
    z2: np.ndarray
    h: np.ndarray  # (m, 2) separation per observation
    pair: np.ndarray  # (m, 2) station indices
    ids: list[str] = field(default_factory=list)

    @property
    def n_obs(self) -> int:
        return len(self.z1)

    @property
    def n_pairs(self) -> int:
        return len({tuple(p) for p in self.pair.tolist()})


def build_pairs(
    frechet: Mapping[str, Mapping[int, float]],
    xy: Mapping[str, Sequence[float]],
    max_pair_distance: float | None = None,
    ids: Sequence[str] | None = None,
) -> PairData:
    """Collect all within-region station pairs (i < j) over their common years.

    Ids default to sorted order; observations are ordered by (i, j, year).
    """
    ids = sorted(frechet) if ids is None else list(ids)
    z1, z2, hs, pairs = [], [], [], []
    pos = {s: np.asarray(xy[s], dtype=float) for s in ids}
    for i, a in enumerate(ids):
        for j in range(i + 1, len(ids)):
            b = ids[j]
            h = pos[b] - pos[a]
            if max_pair_distance is not None and np.hypot(*h) > max_pair_distance:
                continue
            common = sorted(set(frechet[a]) & set(frechet[b]))
            for y in common:
                z1.append(frechet[a][y])
                z2.append(frechet[b][y])
                hs.append(h)
                pairs.append((i, j))
    return PairData(
        np.asarray(z1, dtype=float), np.asarray(z2, dtype=float),
        np.asarray(hs, dtype=float).reshape(-1, 2), np.asarray(pairs, dtype=int).reshape(-1, 2), ids,
    )


def pairwise_nll(pairs: PairData, s) -> float:
    """Negative pairwise log-likelihood of the Smith model.

    Coincident sites (a = 0) contribute a univariate Frechet term when the
    two values agree and raise DegeneratePairError otherwise.
    """
    if pairs.n_obs == 0:
        return 0.0
    if np.any(pairs.z1 <= 0) or np.any(pairs.z2 <= 0) or not np.all(np.isfinite(pairs.z1 + pairs.z2)):
        raise SmithError("pairwise likelihood needs positive unit-Frechet values")
    a = np.asarray(mahalanobis_a(pairs.h, s))
    zero = a == 0
    if zero.any():
        if np.any(pairs.z1[zero] != pairs.z2[zero]):
            raise DegeneratePairError("coincident sites with differing values")
        ll = frechet_logpdf(pairs.z1[zero]).sum()
        keep = ~zero
        ll += smith_logpdf(pairs.z1[keep], pairs.z2[keep], a[keep]).sum()
    else:
        ll = smith_logpdf(pairs.z1, pairs.z2, a).sum()
    return float(-ll)


def _sigma_from_theta(p) -> np.ndarray:
    L = np.array([[np.exp(p[0]), 0.0], [p[1], np.exp(p[2])]])
    return L @ L.T


def _theta_from_sigma(sigma) -> np.ndarray:
    L = np.linalg.cholesky(np.asarray(sigma, dtype=float))
    return np.array([np.log(L[0, 0]), L[1, 0], np.log(L[1, 1])])


@dataclass
class SigmaFit:
    params: SmithParams
    nll: float
    converged: bool
    n_evaluations: int
    initial_nll: float
    start: SmithParams
    message: str = ""


def default_starts(pairs: PairData, units: str = "km") -> list[SmithParams]:
    """Isotropic starts at s^2 and (2s)^2, s the median station separation."""
    seps = np.hypot(pairs.h[:, 0], pairs.h[:, 1]) if pairs.n_obs else np.array([1.0])
    uniq = np.unique(seps[seps > 0]) if np.any(seps > 0) else np.array([1.0])
    s = float(np.median(uniq))
    return [SmithParams.from_entries(s * s, 0.0, s * s, units), SmithParams.from_entries(4 * s * s, 0.0, 4 * s * s, units)]


def fit_sigma(
    pairs: PairData,
    init: SmithParams | Sequence[SmithParams] | None = None,
    units: str = "km",
    tol: float = 1e-8,
    max_eval: int = 2000,
) -> SigmaFit:
    """Minimise the pairwise negative log-likelihood over Sigma = L L'.

    L is lower triangular with log-parameterised diagonal, so every
    iterate is positive definite. The mean per-observation nll is what the
    simplex sees (so the function tolerance is scale free); the reported
    nll is the total. Each start is tried and the lowest nll kept.
    """
    if pairs.n_obs == 0:
        raise SmithError("no station pairs with common years in region")
    if init is None:
        starts = default_starts(pairs, units)
    elif isinstance(init, SmithParams):
        starts = [init]
    else:
        starts = list(init)
    m = pairs.n_obs

    def objective(p):
        try:
            val = pairwise_nll(pairs, _sigma_from_theta(p)) / m
        except (SmithError, np.linalg.LinAlgError):
            return np.inf
        return val if np.isfinite(val) else np.inf

    best: SigmaFit | None = None
    for start in starts:
        x0 = _theta_from_sigma(start.sigma)
        scale = np.exp(0.5 * (x0[0] + x0[2]))
        simplex = np.vstack([x0, x0 + [0.5, 0, 0], x0 + [0, 0.5 * scale, 0], x0 + [0, 0, 0.5]])
        f0 = objective(x0) * m
        res = optimize.minimize(
            objective, x0, method="Nelder-Mead",
            options={"xatol": tol, "fatol": tol, "maxfev": max_eval, "initial_simplex": simplex},
        )
        x, fx = res.x, res.fun
        if not fx <= objective(x0):  # keep the start if the simplex never beat it
            x, fx = x0, objective(x0)
        fit = SigmaFit(
            SmithParams(_sigma_from_theta(x), units), float(fx * m), bool(res.success),
            int(res.nfev), float(f0), start, str(res.message),
        )
        if best is None or fit.nll < best.nll:
            best = fit
    if not best.converged:
        logger.warning("composite likelihood did not converge from any start: %s", best.message)
    return best


# ------------------------------------------------------------------ simulation


def simulate_smith(
    points,
    s,
    n_sims: int = 1,
    seed: int | np.random.Generator | None = None,
    kappa: float = 6.0,
    batch: int = 64,
) -> np.ndarray:
    """Exact simulation of the Smith process at `points` (shape (m,) or (m, d), d in {1, 2}).

    Storm intensities are A / Gamma_i with Gamma_i the arrival times of a
    unit Poisson process, and centres are uniform on the bounding box of
    the points padded by `kappa` kernel standard deviations (area A).
    Storms arrive in decreasing intensity, so once A * sup(W) / Gamma_i
    drops below the current minimum of Z no later storm can matter.
    Returns an (n_sims, m) array with unit-Frechet margins up to the
    kernel truncation at the window edge.
    """
    cov = _as_cov(s)
    dim = cov.shape[0]
    x = np.asarray(points, dtype=float).reshape(-1, dim) if np.ndim(points) <= 1 else np.asarray(points, dtype=float)
    if x.ndim != 2 or x.shape[1] != dim or len(x) == 0:
        raise SmithError(f"points must be a non-empty (m, {dim}) array")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    prec = np.linalg.inv(cov)
    pad = kappa * np.sqrt(np.diag(cov))
    lo, hi = x.min(axis=0) - pad, x.max(axis=0) + pad
    area = float(np.prod(hi - lo))
    sup_w = 1.0 / np.sqrt((2 * np.pi) ** dim * np.linalg.det(cov))
    scale = area * sup_w

    out = np.empty((n_sims, len(x)))
    for k in range(n_sims):
        z = np.zeros(len(x))
        gamma = 0.0
        while True:
            g = gamma + np.cumsum(rng.exponential(size=batch))
            gamma = g[-1]
            u = rng.uniform(lo, hi, size=(batch, dim))
            diff = x[None, :, :] - u[:, None, :]
            q = np.einsum("bmi,ij,bmj->bm", diff, prec, diff)
            storms = (scale / g)[:, None] * np.exp(-0.5 * q)
            np.maximum(z, storms.max(axis=0), out=z)
            if scale / gamma < z.min():
                break
        out[k] = z
    return out


def grid_points(bbox: Sequence[float], step: float) -> np.ndarray:
    lon0, lat0, lon1, lat1 = bbox
    lons = lon0 + step * np.arange(int(np.floor((lon1 - lon0) / step + 1e-9)) + 1)
    lats = lat0 + step * np.arange(int(np.floor((lat1 - lat0) / step + 1e-9)) + 1)
    lon, lat = np.meshgrid(lons, lats)
    return np.column_stack([lon.ravel(), lat.ravel()])


# ------------------------------------------------------------- regional fits


@dataclass
class SmithFit:
    region: str
    units: str
    origin: tuple[float, float]
    center: tuple[float, float]
    gev: dict[str, GevParams]
    params: SmithParams
    nll: float
    converged: bool
    n_pairs: int
    n_evaluations: int = 0
    initial_nll: float = float("nan")
    dropped: list[str] = field(default_factory=list)
    bootstrap: list[SmithParams] = field(default_factory=list)
    bootstrap_failures: int = 0

    @property
    def status(self) -> str:
        return "converged" if self.converged else "not_converged"

    def to_json(self) -> dict:
        return {
            "region": self.region,
            "units": self.units,
            "origin": list(self.origin),
            "center": list(self.center),
            "gev": {k: v.as_dict() for k, v in self.gev.items()},
            "sigma": self.params.as_dict(),
            "nll": self.nll,
            "initial_nll": self.initial_nll,
            "status": self.status,
            "n_pairs": self.n_pairs,
            "n_evaluations": self.n_evaluations,
            "dropped_stations": self.dropped,
            "bootstrap": [b.as_dict() for b in self.bootstrap],
            "bootstrap_failures": self.bootstrap_failures,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SmithFit":
        def params(d):
            return SmithParams.from_entries(d["s11"], d["s12"], d["s22"], d.get("units", obj["units"]))

        return cls(
            region=str(obj["region"]),
            units=obj["units"],
            origin=tuple(obj["origin"]),
            center=tuple(obj["center"]),
            gev={k: GevParams(**v) for k, v in obj["gev"].items()},
            params=params(obj["sigma"]),
            nll=float(obj["nll"]),
            converged=obj["status"] == "converged",
            n_pairs=int(obj.get("n_pairs", 0)),
            n_evaluations=int(obj.get("n_evaluations", 0)),
            initial_nll=float(obj.get("initial_nll", float("nan"))),
            dropped=list(obj.get("dropped_stations", [])),
            bootstrap=[params(b) for b in obj.get("bootstrap", [])],
            bootstrap_failures=int(obj.get("bootstrap_failures", 0)),
        )


def station_frame(coords: Mapping[str, Sequence[float]], units: str = "km") -> tuple[dict[str, np.ndarray], tuple[float, float]]:
    """Planar station positions for fitting: km about the median centre, or raw degrees."""
    ids = sorted(coords)
    lonlat = np.array([coords[s] for s in ids], dtype=float).reshape(len(ids), 2)
    origin = median_center(lonlat)
    if units == "km":
        xy = project_local(lonlat, origin)
    elif units == "deg":
        xy = lonlat
    else:
        raise ValueError(f"units must be 'km' or 'deg', got {units!r}")
    return dict(zip(ids, xy)), origin


def bootstrap_sigma(
    frechet: Mapping[str, Mapping[int, float]],
    xy: Mapping[str, Sequence[float]],
    start: SmithParams,
    n_boot: int,
    seed: int | None = None,
    resample: bool = True,
    max_pair_distance: float | None = None,
    tol: float = 1e-8,
    max_eval: int = 2000,
) -> tuple[list[SmithParams], int]:
    """Station bootstrap of the dependence fit.

    Each replicate resamples stations with replacement, drops repeats, and
    refits from `start`. Failed replicates are skipped and counted.
    """
    ids = sorted(frechet)
    if n_boot <= 0:
        return [], 0
    if len(ids) < 3:
        raise SmithError("bootstrap needs at least 3 stations in the region")
    rng = np.random.default_rng(seed)
    reps: list[SmithParams] = []
    failures = 0
    for _ in range(n_boot):
        chosen = sorted({ids[k] for k in rng.integers(0, len(ids), size=len(ids))}) if resample else ids
        if len(chosen) < 2:
            failures += 1
            continue
        pairs = build_pairs(frechet, xy, max_pair_distance, chosen)
        try:
            fit = fit_sigma(pairs, start, start.units, tol, max_eval)
        except SmithError:
            failures += 1
            continue
        if not fit.converged:
            failures += 1
            continue
        reps.append(fit.params)
    return reps, failures


def fit_region(
    maxima: Mapping[str, Mapping[int, float]],
    coords: Mapping[str, Sequence[float]],
    region: str = "1",
    units: str = "km",
    n_boot: int = 0,
    seed: int | None = None,
    max_pair_distance: float | None = None,
    init: SmithParams | None = None,
    tol: float = 1e-8,
    max_eval: int = 2000,
) -> SmithFit:
    """Station-wise GEV margins, Frechet standardisation, then the composite-likelihood Sigma.

    Stations whose GEV fit fails are dropped with a warning.
    """
    gev: dict[str, GevParams] = {}
    frechet: dict[str, dict[int, float]] = {}
    dropped = []
    for sid in sorted(maxima):
        years = sorted(maxima[sid])
        values = np.array([maxima[sid][y] for y in years])
        try:
            g = gev_fit(values)
        except GevFitError as exc:
            logger.warning("station %s dropped: %s", sid, exc)
            dropped.append(sid)
            continue
        gev[sid] = g
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            frechet[sid] = dict(zip(years, to_frechet(values, g).tolist()))
    if len(frechet) < 2:
        raise SmithError(f"region {region} has fewer than 2 usable stations")

    xy, origin = station_frame({s: coords[s] for s in frechet}, units)
    pairs = build_pairs(frechet, xy, max_pair_distance)
    starts = default_starts(pairs, units)
    if init is not None:
        starts.insert(0, init)
    fit = fit_sigma(pairs, starts, units, tol, max_eval)
    reps, fails = [], 0
    if n_boot > 0:
        reps, fails = bootstrap_sigma(frechet, xy, fit.params, n_boot, seed, True, max_pair_distance, tol, max_eval)
    center = median_center([coords[s] for s in sorted(maxima)])
    return SmithFit(
        region=str(region), units=units, origin=origin, center=center, gev=gev, params=fit.params,
        nll=fit.nll, converged=fit.converged, n_pairs=pairs.n_pairs, n_evaluations=fit.n_evaluations,
        initial_nll=fit.initial_nll, dropped=dropped, bootstrap=reps, bootstrap_failures=fails,
    )
