"""Statistical comparison of simulated and surrogate strain fields."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cvae import Cvae


@dataclass
class FieldStats:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class ErrorSample:
    e_mu: float
    e_sigma: float
    rep: int
    seed: int


@dataclass
class KdeCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float


@dataclass
class ProbePdf:
    location: tuple[float, float]
    pixel: tuple[int, int]
    grid: np.ndarray
    exact: np.ndarray
    predicted: np.ndarray
    exact_skewness: float


@dataclass
class EvalReport:
    exact: FieldStats
    predicted: FieldStats
    errors: list[ErrorSample]
    probes: list[ProbePdf] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def e_mu(self) -> np.ndarray:
        return np.array([e.e_mu for e in self.errors])

    def e_sigma(self) -> np.ndarray:
        return np.array([e.e_sigma for e in self.errors])


def field_stats(fields) -> FieldStats:
    """Element-wise mean and population (divisor N) standard deviation."""
    f = np.asarray(fields, dtype=np.float64)
    if f.ndim < 1 or f.shape[0] == 0:
        raise ValueError("field_stats needs at least one field")
    # shifted two-pass: exact for identical fields, no cancellation for large offsets
    d = f - f[0]
    dm = d.mean(axis=0)
    std = np.sqrt(np.mean((d - dm) ** 2, axis=0))
    return FieldStats(f[0] + dm, std)


def predicted_stats(model: Cvae, conditions, seed=None, *, z=None, batch: int = 512) -> FieldStats:
    """Stats over one decoded sample per test condition, ``z_i`` drawn from the prior."""
    if model.scaler is None:
        raise RuntimeError("model is untrained (no fitted scaler)")
    cond = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
    if z is None:
        z = np.random.default_rng(seed).standard_normal((len(cond), model.config.latent_dim))
    out = np.concatenate([model.generate(cond[s:s + batch], z[s:s + batch])
                          for s in range(0, len(cond), batch)])
    return field_stats(out)


def normalized_errors(exact: FieldStats, pred: FieldStats, rep: int = 0, seed: int = 0) -> ErrorSample:
    """Relative L2 discrepancy of the mean and of the std fields (flattened)."""
    if exact.mean.shape != pred.mean.shape or exact.std.shape != pred.std.shape:
        raise ValueError("exact and predicted statistics differ in shape")
    n_mu = np.linalg.norm(exact.mean.ravel())
    n_sigma = np.linalg.norm(exact.std.ravel())
    if n_mu == 0 or n_sigma == 0:
        raise ZeroDivisionError("exact mean or std field has zero norm")
    e_mu = np.linalg.norm((exact.mean - pred.mean).ravel()) / n_mu
    e_sigma = np.linalg.norm((exact.std - pred.std).ravel()) / n_sigma
    return ErrorSample(float(e_mu), float(e_sigma), rep, seed)


def error_mc(model: Cvae, test_fields, test_conditions, n_mc: int, seed: int = 0,
             exact: FieldStats | None = None) -> list[ErrorSample]:
    """``n_mc`` independent latent redraws, each giving one ``(e_mu, e_sigma)``.

    Repetition ``r`` draws its latents from ``default_rng([seed, r])`` so any
    subset of repetitions can be recomputed independently.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be at least 1")
    exact = exact if exact is not None else field_stats(test_fields)
    out = []
    for rep in range(n_mc):
        pred = predicted_stats(model, test_conditions, [seed, rep])
        out.append(normalized_errors(exact, pred, rep, seed))
    return out


# --- kernel density ------------------------------------------------------------

def silverman_bandwidth(x: np.ndarray) -> float:
    std = np.std(x)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(std, (q75 - q25) / 1.34) if q75 > q25 else std
    return 0.9 * spread * len(x) ** (-0.2)


def _adaptive_grid(x: np.ndarray, bw: float, n_grid: int) -> np.ndarray:
    """At least ``n_grid`` points and a spacing of at most bw/4 wherever density lives."""
    lo, hi = x.min() - 5 * bw, x.max() + 5 * bw
    needed = int(np.ceil((hi - lo) / (0.25 * bw))) + 1
    if needed <= max(n_grid, 8192):
        return np.linspace(lo, hi, max(n_grid, needed))
    # widely separated clusters: local grids around each distinct sample
    local = np.unique(x)[:, None] + bw * np.linspace(-12.0, 12.0, 97)[None, :]
    return np.unique(local.ravel())


def kde_pdf(samples, bandwidth="silverman", grid=None, n_grid: int = 512) -> KdeCurve:
    """Gaussian KDE; the default grid reaches 5 bandwidths past the data."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("kde needs at least two samples")
    if bandwidth == "silverman":
        bw = silverman_bandwidth(x)
        # near-ties can shrink the rule below the float spacing of the data
        bw = max(bw, 1e-6 * float(np.abs(x).max()), 1e-300)
    else:
        bw = float(bandwidth)
    if not bw > 0 or (bandwidth == "silverman" and np.ptp(x) == 0):
        # all samples equal: one kernel with a width tied to the value's magnitude
        bw = 1e-3 * max(abs(float(x[0])), 1.0)
    if grid is None:
        grid = _adaptive_grid(x, bw, n_grid)
    grid = np.asarray(grid, dtype=np.float64)
    dens = np.zeros_like(grid)
    with np.errstate(over="ignore"):
        for chunk in np.array_split(x, max(1, x.size // 2048)):
            u = (grid[:, None] - chunk[None, :]) / bw
            dens += np.exp(-0.5 * u * u).sum(axis=1)
    dens /= x.size * bw * np.sqrt(2.0 * np.pi)
    return KdeCurve(grid, dens, bw)


def nearest_pixel(location, length_x: float, length_y: float, shape) -> tuple[int, int]:
    """Element containing ``(x, y)`` given relative to the plate centre."""
    x, y = location
    nx, ny = shape
    if abs(x) > length_x / 2 or abs(y) > length_y / 2:
        raise ValueError(f"location {location} outside the plate")
    i = min(int((x + length_x / 2) / (length_x / nx)), nx - 1)
    j = min(int((y + length_y / 2) / (length_y / ny)), ny - 1)
    return i, j


def _skewness(v: np.ndarray) -> float:
    s = v.std()
    return float(np.mean((v - v.mean()) ** 3) / s**3) if s > 0 else 0.0


def probe_pdfs(exact_fields, predicted_fields, locations, length_x: float, length_y: float,
               n_grid: int = 256) -> list[ProbePdf]:
    """Exact-vs-surrogate marginal densities at each probe location, on a shared grid."""
    exact_fields = np.asarray(exact_fields, dtype=np.float64)
    predicted_fields = np.asarray(predicted_fields, dtype=np.float64)
    out = []
    for loc in locations:
        i, j = nearest_pixel(loc, length_x, length_y, exact_fields.shape[1:])
        a, b = exact_fields[:, i, j], predicted_fields[:, i, j]
        ka, kb = kde_pdf(a), kde_pdf(b)
        lo = min(ka.grid[0], kb.grid[0])
        hi = max(ka.grid[-1], kb.grid[-1])
        grid = np.linspace(lo, hi, n_grid)
        out.append(ProbePdf(tuple(loc), (i, j), grid,
                            kde_pdf(a, ka.bandwidth, grid).density,
                            kde_pdf(b, kb.bandwidth, grid).density, _skewness(a)))
    return out


def evaluate(model: Cvae, test_fields, test_conditions, n_mc: int = 1000, seed: int = 0,
             probes=(), plate_extent=(1.0, 1.0)) -> EvalReport:
    """Full statistical comparison on a test split (fields in dataset units)."""
    t0 = time.perf_counter()
    test_fields = np.asarray(test_fields, dtype=np.float64)
    exact = field_stats(test_fields)
    errors = error_mc(model, test_fields, test_conditions, n_mc, seed, exact)
    # first repetition's draws define the reported prediction fields
    z = np.random.default_rng([seed, 0]).standard_normal((len(test_fields), model.config.latent_dim))
    pred_fields = np.concatenate([
        model.generate(np.atleast_2d(test_conditions)[s:s + 512], z[s:s + 512])
        for s in range(0, len(test_fields), 512)])
    predicted = field_stats(pred_fields)
    probe_list = probe_pdfs(test_fields, pred_fields, probes, *plate_extent) if probes else []
    meta = {"n_test": len(test_fields), "n_mc": n_mc, "seed": seed,
            "seconds": time.perf_counter() - t0}
    return EvalReport(exact, predicted, errors, probe_list, meta)


def summarize(errors: list[ErrorSample]) -> dict:
    out = {}
    for name in ("e_mu", "e_sigma"):
        v = np.array([getattr(e, name) for e in errors])
        q25, q50, q75 = np.percentile(v, [25, 50, 75])
        out[name] = {"median": float(q50), "iqr": float(q75 - q25), "mean": float(v.mean()),
                     "min": float(v.min()), "max": float(v.max())}
    return out


def write_report(report: EvalReport, out_dir, title: str = "") -> Path:
    """CSV tables plus ``summary.txt``; the CSVs are a pure function of the report data."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, w = report.exact.mean.shape
    with open(out / "fields.csv", "w") as fh:
        fh.write("i,j,mean_exact,mean_pred,std_exact,std_pred\n")
        for i in range(h):
            for j in range(w):
                fh.write(f"{i},{j},{report.exact.mean[i, j]!r},{report.predicted.mean[i, j]!r},"
                         f"{report.exact.std[i, j]!r},{report.predicted.std[i, j]!r}\n")
    with open(out / "errors.csv", "w") as fh:
        fh.write("rep,seed,e_mu,e_sigma\n")
        for e in report.errors:
            fh.write(f"{e.rep},{e.seed},{e.e_mu!r},{e.e_sigma!r}\n")
    with open(out / "error_kde.csv", "w") as fh:
        fh.write("metric,x,pdf\n")
        if len(report.errors) >= 2:
            for name, vals in (("e_mu", report.e_mu()), ("e_sigma", report.e_sigma())):
                k = kde_pdf(vals, n_grid=128)
                for x, p in zip(k.grid, k.density):
                    fh.write(f"{name},{x!r},{p!r}\n")
    with open(out / "probes.csv", "w") as fh:
        fh.write("probe,x,y,i,j,value,pdf_exact,pdf_pred\n")
        for n, p in enumerate(report.probes):
            for v, a, b in zip(p.grid, p.exact, p.predicted):
                fh.write(f"{n},{p.location[0]!r},{p.location[1]!r},{p.pixel[0]},{p.pixel[1]},"
                         f"{v!r},{a!r},{b!r}\n")
    s = summarize(report.errors)
    lines = [title] if title else []
    lines += [f"n_test = {report.meta.get('n_test')}", f"n_mc = {report.meta.get('n_mc')}",
              f"seed = {report.meta.get('seed')}"]
    for name in ("e_mu", "e_sigma"):
        d = s[name]
        lines.append(f"{name}: median={d['median']:.6g} iqr={d['iqr']:.6g} mean={d['mean']:.6g} "
                     f"min={d['min']:.6g} max={d['max']:.6g}")
    for n, p in enumerate(report.probes):
        lines.append(f"probe {n} at {p.location} pixel {p.pixel}: exact skewness {p.exact_skewness:.4g}")
    if "seconds" in report.meta:
        lines.append(f"evaluation time: {report.meta['seconds']:.2f} s")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return out
