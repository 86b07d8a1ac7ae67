"""Ground-truth strain fields from a clamped Kirchhoff plate.

The plate occupies ``[-Lx/2, Lx/2] x [-Ly/2, Ly/2]`` (origin at the centre)
and is discretised into ``grid_nx x grid_ny`` square-ish elements.  Deflection
lives on the ``(grid_nx + 1) x (grid_ny + 1)`` nodes, strains on the element
centres.  Arrays are indexed ``[ix, iy]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

COMPONENTS = ("xx", "yy", "xy")


class PlateSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle ``[x0, x1] x [y0, y1]`` (m, centre origin)."""

    x0: float
    x1: float
    y0: float
    y1: float
    base_thickness_mm: float

    def contains(self, x, y):
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)


@dataclass(frozen=True)
class PlateSpec:
    length_x: float = 1.0
    length_y: float = 1.0
    grid_nx: int = 50
    grid_ny: int = 50
    youngs_modulus: float = 206e9
    poisson_ratio: float = 0.3
    yield_stress: float = 235e6
    regions: tuple[Region, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.grid_nx < 4 or self.grid_ny < 4:
            raise ValueError("grid must have at least 4 elements per side")
        if not 0.0 < self.poisson_ratio < 0.5:
            raise ValueError("poisson_ratio must lie in (0, 0.5)")
        if self.youngs_modulus <= 0 or self.yield_stress <= 0:
            raise ValueError("youngs_modulus and yield_stress must be positive")
        if self.length_x <= 0 or self.length_y <= 0:
            raise ValueError("plate lengths must be positive")
        if not self.regions:
            object.__setattr__(
                self,
                "regions",
                (Region(-self.length_x / 2, self.length_x / 2,
                        -self.length_y / 2, self.length_y / 2, 10.0),),
            )
        for r in self.regions:
            if r.base_thickness_mm <= 0:
                raise ValueError("region thickness must be positive")
        area = sum((r.x1 - r.x0) * (r.y1 - r.y0) for r in self.regions)
        if not math.isclose(area, self.length_x * self.length_y, rel_tol=1e-9):
            raise ValueError("regions do not tile the plate (area mismatch)")
        counts = sum(r.contains(*self.element_centers()).astype(int) for r in self.regions)
        if np.any(counts != 1):
            raise ValueError("regions overlap or leave elements uncovered")

    @property
    def hx(self) -> float:
        return self.length_x / self.grid_nx

    @property
    def hy(self) -> float:
        return self.length_y / self.grid_ny

    @property
    def shear_modulus(self) -> float:
        return self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))

    def node_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        x = -self.length_x / 2 + self.hx * np.arange(self.grid_nx + 1)
        y = -self.length_y / 2 + self.hy * np.arange(self.grid_ny + 1)
        return np.meshgrid(x, y, indexing="ij")

    def element_centers(self) -> tuple[np.ndarray, np.ndarray]:
        x = -self.length_x / 2 + self.hx * (np.arange(self.grid_nx) + 0.5)
        y = -self.length_y / 2 + self.hy * (np.arange(self.grid_ny) + 0.5)
        return np.meshgrid(x, y, indexing="ij")

    def region_index(self) -> np.ndarray:
        """Region id of every element, shape ``(grid_nx, grid_ny)``."""
        xc, yc = self.element_centers()
        idx = np.full(xc.shape, -1, dtype=int)
        for k, r in enumerate(self.regions):
            idx[r.contains(xc, yc)] = k
        return idx

    def element_thickness(self, thickness_mm: Sequence[float] | None = None) -> np.ndarray:
        """Per-element thickness in metres; ``thickness_mm`` holds one value per region."""
        if thickness_mm is None:
            thickness_mm = [r.base_thickness_mm for r in self.regions]
        t = np.asarray(thickness_mm, dtype=float).reshape(-1)
        if t.size != len(self.regions):
            raise ValueError(f"expected {len(self.regions)} region thicknesses, got {t.size}")
        if not np.all(np.isfinite(t)) or np.any(t <= 0):
            raise ValueError("thickness must be finite and positive")
        return t[self.region_index()] * 1e-3


def uniform_square_plate(side: float = 1.0, n: int = 50, thickness_mm: float = 10.0,
                         **material) -> PlateSpec:
    region = Region(-side / 2, side / 2, -side / 2, side / 2, thickness_mm)
    return PlateSpec(side, side, n, n, regions=(region,), **material)


def strip_plate(length_x: float = 1.0, length_y: float = 3.0, grid_nx: int = 8,
                grid_ny: int = 24, n_strips: int = 4, base_thickness_mm: float = 12.0,
                **material) -> PlateSpec:
    """Plate split into ``n_strips`` equal strips running along y."""
    edges = np.linspace(-length_x / 2, length_x / 2, n_strips + 1)
    regions = tuple(
        Region(float(edges[i]), float(edges[i + 1]), -length_y / 2, length_y / 2,
               base_thickness_mm)
        for i in range(n_strips)
    )
    return PlateSpec(length_x, length_y, grid_nx, grid_ny, regions=regions, **material)


# --- loads -----------------------------------------------------------------

@dataclass(frozen=True)
class GaussianLoad:
    q0: float
    x0: float
    y0: float
    s: float

    def __post_init__(self):
        vals = (self.q0, self.x0, self.y0, self.s)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite load parameters {vals}")
        if self.s <= 0:
            raise ValueError("shape parameter s must be positive")


@dataclass(frozen=True)
class FillLoad:
    p_nominal: float
    fill_rate: float

    def __post_init__(self):
        if not 0.0 <= self.fill_rate <= 1.0:
            raise ValueError(f"fill_rate {self.fill_rate} outside [0, 1]")


def gaussian_pressure(load: GaussianLoad, x, y):
    """Bell-shaped lateral pressure (Pa) at coordinates relative to the plate centre."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite coordinates")
    gx = np.exp(-0.5 * ((x - load.x0) / load.s) ** 2)
    gy = np.exp(-0.5 * ((y - load.y0) / load.s) ** 2)
    return load.q0 * gx * gy


def fill_pressure(load: FillLoad) -> float:
    return load.p_nominal * load.fill_rate


# --- solver ----------------------------------------------------------------

def flexural_rigidity(E: float, nu: float, t):
    """Plate bending stiffness ``E t^3 / (12 (1 - nu^2))`` in N*m."""
    if E <= 0:
        raise ValueError("E must be positive")
    if not 0.0 < nu < 0.5:
        raise ValueError("nu must lie in (0, 0.5)")
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("thickness must be positive")
    D = E * t**3 / (12.0 * (1.0 - nu**2))
    return float(D) if D.ndim == 0 else D


def _second_difference(n: int, h: float, clamped_ghost: bool) -> sp.csr_matrix:
    """(n+1) x (n+1) second difference on nodes 0..n.

    With ``clamped_ghost`` the boundary rows use the mirror node implied by a
    zero edge slope, ``w[-1] = w[1]``.
    """
    main = -2.0 * np.ones(n + 1)
    off = np.ones(n)
    A = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    if clamped_ghost:
        A[0, 1] = 2.0
        A[n, n - 1] = 2.0
    else:
        A[0, :] = 0.0
        A[n, :] = 0.0
    return (A / h**2).tocsr()


def _forward_difference(n: int, h: float) -> sp.csr_matrix:
    """n x (n+1): node values to element (midpoint) differences."""
    return sp.diags([-np.ones(n), np.ones(n)], [0, 1], shape=(n, n + 1), format="csr") / h


def _node_average(values_elem: np.ndarray) -> np.ndarray:
    """Average element values onto the nodes (1, 2 or 4 neighbours)."""
    nx, ny = values_elem.shape
    acc = np.zeros((nx + 1, ny + 1))
    cnt = np.zeros((nx + 1, ny + 1))
    for dx in (0, 1):
        for dy in (0, 1):
            acc[dx:dx + nx, dy:dy + ny] += values_elem
            cnt[dx:dx + nx, dy:dy + ny] += 1
    return acc / cnt


def plate_operator(spec: PlateSpec, D_elem: np.ndarray) -> sp.csc_matrix:
    """Discrete variable-rigidity clamped-plate operator on interior nodes."""
    nx, ny, nu = spec.grid_nx, spec.grid_ny, spec.poisson_ratio
    Ix, Iy = sp.identity(nx + 1), sp.identity(ny + 1)

    # curvatures at nodes (ghost-node clamped rows) and their divergence
    Kxx = sp.kron(_second_difference(nx, spec.hx, True), Iy, format="csr")
    Kyy = sp.kron(Ix, _second_difference(ny, spec.hy, True), format="csr")
    Lxx = sp.kron(_second_difference(nx, spec.hx, False), Iy, format="csr")
    Lyy = sp.kron(Ix, _second_difference(ny, spec.hy, False), format="csr")
    # twist at element centres
    C = sp.kron(_forward_difference(nx, spec.hx), _forward_difference(ny, spec.hy), format="csr")

    Dn = sp.diags(_node_average(D_elem).ravel())
    De = sp.diags(D_elem.ravel())
    K = (Lxx @ Dn @ (Kxx + nu * Kyy)
         + Lyy @ Dn @ (Kyy + nu * Kxx)
         + 2.0 * (1.0 - nu) * (C.T @ De @ C))

    interior = _interior_mask(nx, ny).ravel()
    return K[interior][:, interior].tocsc()


def _interior_mask(nx: int, ny: int) -> np.ndarray:
    mask = np.zeros((nx + 1, ny + 1), dtype=bool)
    mask[1:-1, 1:-1] = True
    return mask


def solve_plate(spec: PlateSpec, thickness_mm, load_field: np.ndarray) -> np.ndarray:
    """Deflection (m) on the node grid for a clamped plate under ``load_field`` (Pa on nodes)."""
    q = np.asarray(load_field, dtype=float)
    shape = (spec.grid_nx + 1, spec.grid_ny + 1)
    if q.shape != shape:
        raise ValueError(f"load field shape {q.shape} != node grid {shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("load field must be finite")
    t = spec.element_thickness(thickness_mm)
    D = flexural_rigidity(spec.youngs_modulus, spec.poisson_ratio, t)
    K = plate_operator(spec, np.asarray(D))

    interior = _interior_mask(spec.grid_nx, spec.grid_ny)
    w = np.zeros(shape)
    rhs = q[interior]
    if not np.any(rhs):
        return w
    try:
        sol = spla.spsolve(K, rhs)
    except RuntimeError as exc:  # singular factor
        raise PlateSolveError(f"plate system is singular: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise PlateSolveError("plate solve produced non-finite deflections")
    w[interior] = sol
    return w


def _nodal_second_derivative(w: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second derivative at every node; one-sided (exact for cubics) at the ends."""
    w = np.moveaxis(w, axis, 0)
    d2 = np.empty_like(w)
    d2[1:-1] = w[:-2] - 2 * w[1:-1] + w[2:]
    d2[0] = 2 * w[0] - 5 * w[1] + 4 * w[2] - w[3]
    d2[-1] = 2 * w[-1] - 5 * w[-2] + 4 * w[-3] - w[-4]
    return np.moveaxis(d2 / h**2, 0, axis)


def _to_centers(nodal: np.ndarray) -> np.ndarray:
    return 0.25 * (nodal[:-1, :-1] + nodal[1:, :-1] + nodal[:-1, 1:] + nodal[1:, 1:])


def strain_fields(w: np.ndarray, thickness_mm, spec: PlateSpec):
    """Top-surface strains ``(exx, eyy, exy)`` at element centres."""
    w = np.asarray(w, dtype=float)
    if w.shape != (spec.grid_nx + 1, spec.grid_ny + 1):
        raise ValueError(f"deflection shape {w.shape} does not match the node grid")
    half_t = 0.5 * spec.element_thickness(thickness_mm)
    wxx = _to_centers(_nodal_second_derivative(w, spec.hx, 0))
    wyy = _to_centers(_nodal_second_derivative(w, spec.hy, 1))
    wxy = (w[1:, 1:] - w[1:, :-1] - w[:-1, 1:] + w[:-1, :-1]) / (spec.hx * spec.hy)
    return -half_t * wxx, -half_t * wyy, -half_t * wxy


@dataclass
class StrainField:
    component: str
    values: np.ndarray

    def __post_init__(self):
        if self.component not in COMPONENTS:
            raise ValueError(f"unknown strain component {self.component!r}")
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("strain field contains non-finite values")


def yield_strains(spec: PlateSpec) -> tuple[float, float]:
    """Normal yield strain and von Mises shear yield strain."""
    eps_y = spec.yield_stress / spec.youngs_modulus
    gamma_y = spec.yield_stress / (math.sqrt(3.0) * spec.shear_modulus)
    return eps_y, gamma_y


def normalize_by_yield(field: StrainField, spec: PlateSpec) -> StrainField:
    eps_y, gamma_y = yield_strains(spec)
    scale = gamma_y if field.component == "xy" else eps_y
    return StrainField(field.component, field.values / scale)


def simulate(spec: PlateSpec, thickness_mm, load_field: np.ndarray) -> np.ndarray:
    """Solve, recover strains and normalise; returns a ``(3, nx, ny)`` array."""
    w = solve_plate(spec, thickness_mm, load_field)
    raw = strain_fields(w, thickness_mm, spec)
    return np.stack([
        normalize_by_yield(StrainField(c, v), spec).values for c, v in zip(COMPONENTS, raw)
    ])


def write_field_csv(path, component: str, values: np.ndarray) -> None:
    """Debug dump: header ``component,nx,ny`` then row-major values."""
    values = np.asarray(values)
    with open(path, "w") as fh:
        fh.write("component,nx,ny\n")
        fh.write(f"{component},{values.shape[0]},{values.shape[1]}\n")
        for row in values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
