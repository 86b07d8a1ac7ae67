"""Latin hypercube designs and inverse-CDF transforms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special


@dataclass(frozen=True)
class LhsDesign:
    points: np.ndarray  # (n, d) in [0, 1)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


def lhs(n: int, d: int, seed=None, *, centered: bool = False) -> LhsDesign:
    """Jittered Latin hypercube: one point per stratum ``[k/n, (k+1)/n)`` in every column."""
    if n < 1 or d < 1:
        raise ValueError(f"lhs needs n >= 1 and d >= 1, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    strata = np.stack([rng.permutation(n) for _ in range(d)], axis=1)
    offset = 0.5 if centered else rng.random((n, d))
    pts = (strata + offset) / n
    # (k + u)/n can round up to (k+1)/n for u close to 1
    pts = np.minimum(pts, np.nextafter((strata + 1) / n, 0.0))
    return LhsDesign(pts)


# Acklam's rational approximation to the standard normal quantile
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(p: np.ndarray) -> np.ndarray:
    x = np.empty_like(p)
    lo = p < _P_LOW
    hi = p > 1.0 - _P_LOW
    mid = ~(lo | hi)

    q = p[mid] - 0.5
    r = q * q
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    x[mid] = num / den

    for mask, sign, tail in ((lo, 1.0, p[lo]), (hi, -1.0, 1.0 - p[hi])):
        q = np.sqrt(-2.0 * np.log(tail))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        x[mask] = sign * num / den
    return x


def norm_ppf(u):
    """Standard normal quantile.

    Acklam's approximation (relative error ~1e-9) followed by one Halley
    step against ``erfc``, which brings the error to rounding level.
    """
    p = np.asarray(u, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)) or np.any(np.isnan(p)):
        raise ValueError("normal quantile requires 0 < u < 1")
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    # refine on the lower half only; erfc keeps full precision there
    upper = p > 0.5
    q = np.where(upper, 1.0 - p, p)
    x = _acklam(q)
    e = 0.5 * special.erfc(-x / np.sqrt(2.0)) - q
    g = e * np.sqrt(2.0 * np.pi) * np.exp(0.5 * x * x)
    x = x - g / (1.0 + 0.5 * x * g)
    x = np.where(upper, -x, x)
    return float(x[0]) if scalar else x


def transform_normal(u, mu: float, sigma: float):
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return mu + sigma * norm_ppf(u)


def transform_uniform(u, a: float, b: float):
    if not a < b:
        raise ValueError(f"uniform bounds need a < b, got [{a}, {b}]")
    return a + np.asarray(u, dtype=float) * (b - a)


def beta_params_from_moments(mean: float, std: float) -> tuple[float, float]:
    """Moment-matched Beta(alpha, beta) for a given mean and standard deviation."""
    if not 0.0 < mean < 1.0:
        raise ValueError("beta mean must lie in (0, 1)")
    var = std * std
    if std <= 0 or var >= mean * (1.0 - mean):
        raise ValueError(f"std={std} infeasible for a beta law with mean {mean}")
    common = mean * (1.0 - mean) / var - 1.0
    return mean * common, (1.0 - mean) * common


class BetaInversionError(RuntimeError):
    pass


def transform_beta(u, alpha: float, beta: float, *, tol: float = 1e-12, max_iter: int = 200):
    """Inverse regularized incomplete beta via safeguarded Newton inside a bracket."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("beta parameters must be positive")
    p = np.asarray(u, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)) or np.any(np.isnan(p)):
        raise ValueError("beta quantile requires 0 < u < 1")
    scalar = p.ndim == 0
    p = np.atleast_1d(p).astype(float)

    lo = np.zeros_like(p)
    hi = np.ones_like(p)
    # start from the moment-matched normal approximation
    mean = alpha / (alpha + beta)
    sd = np.sqrt(alpha * beta / ((alpha + beta) ** 2 * (alpha + beta + 1.0)))
    x = np.clip(mean + sd * norm_ppf(p), 1e-3 * mean, 1.0 - 1e-3 * (1.0 - mean))
    log_norm = special.betaln(alpha, beta)
    active = np.ones(p.shape, dtype=bool)

    for _ in range(max_iter):
        xa = x[active]
        f = special.betainc(alpha, beta, xa) - p[active]
        # keep the bracket [lo, hi] around the root
        below = f < 0
        lo_a, hi_a = lo[active], hi[active]
        lo_a = np.where(below, xa, lo_a)
        hi_a = np.where(below, hi_a, xa)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            logpdf = ((alpha - 1) * np.log(xa) + (beta - 1) * np.log1p(-xa) - log_norm)
            step = f / np.exp(logpdf)
        x_new = xa - step
        bad = ~np.isfinite(x_new) | (x_new <= lo_a) | (x_new >= hi_a)
        converged = (np.abs(step) <= tol) | (f == 0)
        x_new = np.where(bad, np.where(converged, xa, 0.5 * (lo_a + hi_a)), x_new)

        done = converged | (hi_a - lo_a <= tol)
        lo[active], hi[active], x[active] = lo_a, hi_a, x_new
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        if not active.any():
            break
    else:
        bad_u = p[active][:5]
        raise BetaInversionError(
            f"beta inversion did not converge for alpha={alpha}, beta={beta}, u={bad_u}")
    return float(x[0]) if scalar else x


@dataclass(frozen=True)
class DistributionSpec:
    """One marginal law: ``normal(mu, sigma)``, ``uniform(a, b)`` or ``beta(alpha, beta)``."""

    kind: str
    p1: float
    p2: float

    def __post_init__(self):
        if self.kind == "normal" and self.p2 <= 0:
            raise ValueError("normal sigma must be positive")
        elif self.kind == "uniform" and not self.p1 < self.p2:
            raise ValueError("uniform needs a < b")
        elif self.kind == "beta" and (self.p1 <= 0 or self.p2 <= 0):
            raise ValueError("beta parameters must be positive")
        elif self.kind not in ("normal", "uniform", "beta"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    @classmethod
    def beta_from_moments(cls, mean: float, std: float) -> "DistributionSpec":
        return cls("beta", *beta_params_from_moments(mean, std))

    def transform(self, u):
        if self.kind == "normal":
            return transform_normal(u, self.p1, self.p2)
        if self.kind == "uniform":
            return transform_uniform(u, self.p1, self.p2)
        return transform_beta(u, self.p1, self.p2)


def sample_lhs(dists: list[DistributionSpec], n: int, seed=None) -> np.ndarray:
    """``n`` joint realizations (n x len(dists)) of independent marginals via LHS."""
    design = lhs(n, len(dists), seed)
    pts = design.points
    # a jittered point can be exactly 0; shift it into the open interval
    pts = np.where(pts <= 0.0, np.nextafter(0.0, 1.0), pts)
    return np.column_stack([d.transform(pts[:, j]) for j, d in enumerate(dists)])
