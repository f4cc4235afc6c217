"""Tensor-product grids, quadrature, relaxed densities and the bathtub oracle.

Densities are piecewise constant per cell; the relaxed feasible set
{0 <= a <= 1, mean = L} is closed under that discretization, which makes
the bathtub tie-splitting and the box/mean projection exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .spectral import DomainSpec


@dataclass(frozen=True)
class Grid:
    domain: DomainSpec
    shape: tuple[int, ...]        # cells per axis
    gauss_order: int
    centers: np.ndarray           # (ncells, dim), cell-major C order
    cell_measures: np.ndarray     # (ncells,)
    quad_x: np.ndarray            # (npts, dim), cell-major blocks of pts_per_cell
    quad_w: np.ndarray            # (npts,)

    @property
    def ncells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def pts_per_cell(self) -> int:
        return self.gauss_order ** self.dim

    @property
    def measure(self) -> float:
        return self.domain.measure


@dataclass
class DensityField:
    grid: Grid
    values: np.ndarray            # (ncells,) in [0, 1]

    def mean(self) -> float:
        return float(self.values @ self.grid.cell_measures) / self.grid.measure

    def mass(self) -> float:
        return float(self.values @ self.grid.cell_measures)


@dataclass
class SpatialFunction:
    grid: Grid
    values: np.ndarray            # (ncells,) cellwise values (cell averages)


def make_grid(domain: DomainSpec, cells_per_axis, gauss_order: int = 3) -> Grid:
    """Uniform tensor grid with per-cell Gauss-Legendre nodes."""
    if not 1 <= gauss_order <= 5:
        raise ValueError("gauss_order must be in 1..5")
    if np.isscalar(cells_per_axis):
        cells_per_axis = (int(cells_per_axis),) * domain.dim
    shape = tuple(int(c) for c in cells_per_axis)
    if len(shape) != domain.dim or min(shape) < 2:
        raise ValueError("need >= 2 cells per axis, one count per domain axis")

    gx, gw = np.polynomial.legendre.leggauss(gauss_order)
    axes_centers, axes_h, axes_nodes, axes_wts = [], [], [], []
    for (lo, hi), n in zip(domain.bounds, shape):
        h = (hi - lo) / n
        c = lo + h * (np.arange(n) + 0.5)
        axes_centers.append(c)
        axes_h.append(h)
        axes_nodes.append(c[:, None] + (h / 2) * gx[None, :])   # (n, g)
        axes_wts.append(np.full(n, 1.0)[:, None] * (h / 2) * gw[None, :])

    mesh = np.meshgrid(*axes_centers, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=1)
    cell_meas = np.full(int(np.prod(shape)), float(np.prod(axes_h)))

    # quadrature points cell-major: for each cell, the g^dim tensor nodes
    node_mesh = np.meshgrid(*[nd.reshape(-1) for nd in axes_nodes], indexing="ij")
    # reshape so per-cell blocks are contiguous: axis order (cells..., gauss...)
    dim = len(shape)
    g = gauss_order
    full_shape = tuple(s * g for s in shape)
    pts = []
    for nm in node_mesh:
        arr = nm.reshape(full_shape)
        # split each axis (n*g) -> (n, g), then move all g-axes last
        arr = arr.reshape(sum(([s, g] for s in shape), []))
        order = list(range(0, 2 * dim, 2)) + list(range(1, 2 * dim, 2))
        pts.append(arr.transpose(order).reshape(-1))
    w_mesh = np.meshgrid(*[w.reshape(-1) for w in axes_wts], indexing="ij")
    warr = np.ones(full_shape)
    for wm in w_mesh:
        warr = warr * wm.reshape(full_shape)
    warr = warr.reshape(sum(([s, g] for s in shape), []))
    order = list(range(0, 2 * dim, 2)) + list(range(1, 2 * dim, 2))
    wts = warr.transpose(order).reshape(-1)

    return Grid(domain, shape, gauss_order, centers, cell_meas,
                np.stack(pts, axis=1), wts)


def integrate(grid: Grid, f) -> complex | float:
    """Quadrature integral over the domain.

    f may be a SpatialFunction / cellwise array (summed against cell
    measures) or a callable evaluated at the Gauss nodes. Summation
    order is fixed (cell index ascending), so results are deterministic.
    """
    if callable(f):
        vals = f(grid.quad_x)
        return np.asarray(vals).reshape(-1) @ grid.quad_w
    vals = f.values if isinstance(f, SpatialFunction) else np.asarray(f)
    return vals @ grid.cell_measures


def cell_average(grid: Grid, fn) -> np.ndarray:
    """Cell averages of a callable via the per-cell Gauss rule."""
    vals = np.asarray(fn(grid.quad_x)).reshape(grid.ncells, grid.pts_per_cell)
    w = grid.quad_w.reshape(grid.ncells, grid.pts_per_cell)
    return (vals * w).sum(axis=1) / grid.cell_measures


def bathtub(grid: Grid, f, L: float) -> tuple[DensityField, float]:
    """Maximize integral(a*f) over {0 <= a <= 1, mean = L}.

    Returns the superlevel-set density (1 above the threshold, 0 below,
    a uniform fraction on the tie set {f == mu}) and the threshold mu,
    the L-quantile of f under the cell measure.
    """
    if not 0.0 < L < 1.0:
        raise ValueError("L must be in (0,1)")
    f = f.values if isinstance(f, SpatialFunction) else np.asarray(f, dtype=float)
    w = grid.cell_measures
    target = L * grid.measure
    order = np.argsort(-f, kind="stable")
    cum = np.cumsum(w[order])
    k = int(np.searchsorted(cum, target * (1 - 1e-15)))
    mu = float(f[order[k]]) if k < grid.ncells else float(f[order[-1]])
    a = np.zeros(grid.ncells)
    a[f > mu] = 1.0
    filled = float(w[f > mu].sum())
    tie = f == mu
    tie_meas = float(w[tie].sum())
    if tie_meas > 0:
        a[tie] = (target - filled) / tie_meas
    return DensityField(grid, a), mu


def project_box_mean(grid: Grid, v, L: float) -> DensityField:
    """Measure-weighted Euclidean projection onto {0 <= a <= 1, mean = L}.

    KKT form a = clip(v + s, 0, 1) with the scalar shift s found by
    bisection to 1e-12 on the mean residual.
    """
    if not 0.0 < L < 1.0:
        raise ValueError("L must be in (0,1)")
    v = v.values if isinstance(v, DensityField) else np.asarray(v, dtype=float)
    w = grid.cell_measures
    vol = grid.measure

    def mean_at(s):
        return float(np.clip(v + s, 0.0, 1.0) @ w) / vol

    lo, hi = float(-v.max()), float(1.0 - v.min())
    if mean_at(lo) > L or mean_at(hi) < L:      # safety; cannot happen for L in (0,1)
        raise ValueError("projection bracket failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        m = mean_at(mid)
        if abs(m - L) <= 1e-13:
            lo = hi = mid
            break
        if m < L:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-16 * max(1.0, abs(lo)):
            break
    s = 0.5 * (lo + hi)
    return DensityField(grid, np.clip(v + s, 0.0, 1.0))


def l1_distance(a: DensityField, b: DensityField) -> float:
    """L1(Omega) distance between two cellwise densities on one grid."""
    if a.grid is not b.grid and (a.grid.shape != b.grid.shape
                                 or a.grid.domain != b.grid.domain):
        raise ValueError("grid mismatch")
    return float(np.abs(a.values - b.values) @ a.grid.cell_measures)


def _corner_values(grid: Grid, vals: np.ndarray) -> np.ndarray:
    """Nodal values at cell corners by averaging adjacent cell values."""
    arr = vals.reshape(grid.shape)
    for ax in range(grid.dim):
        padded = np.concatenate([arr.take([0], axis=ax), arr,
                                 arr.take([-1], axis=ax)], axis=ax)
        lo = padded.take(range(0, padded.shape[ax] - 1), axis=ax)
        hi = padded.take(range(1, padded.shape[ax]), axis=ax)
        arr = 0.5 * (lo + hi)
    return arr


def _cell_value_ranges(grid: Grid, vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell (min, max) of the corner-interpolated profile."""
    if grid.dim == 1:
        c = _corner_values(grid, vals)
        return np.minimum(c[:-1], c[1:]), np.maximum(c[:-1], c[1:])
    arr = _corner_values(grid, vals)
    slices = np.stack([arr[tuple(slice(o, o + s) for o, s in zip(off, grid.shape))]
                       for off in np.ndindex(*(2,) * grid.dim)], axis=-1)
    flat = slices.reshape(grid.ncells, -1)
    return flat.min(axis=1), flat.max(axis=1)


def _measure_below(grid: Grid, lo: np.ndarray, hi: np.ndarray, t: float) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        fr = (t - lo) / (hi - lo)
    fr = np.where(hi > lo, fr, np.where(lo < t, 1.0, 0.0))
    return float(np.clip(fr, 0.0, 1.0) @ grid.cell_measures)


def level_threshold(grid: Grid, psi, L: float) -> float:
    """Threshold mu with |{Psi > mu}| = L |Omega| under cellwise linear
    interpolation of Psi (sub-cell refinement of the bathtub quantile)."""
    if not 0.0 < L < 1.0:
        raise ValueError("L must be in (0,1)")
    vals = psi.values if isinstance(psi, SpatialFunction) else np.asarray(psi, dtype=float)
    lo, hi = _cell_value_ranges(grid, vals)
    target = (1.0 - L) * grid.measure       # measure below the threshold
    a, b = float(lo.min()), float(hi.max())
    for _ in range(100):
        mid = 0.5 * (a + b)
        if _measure_below(grid, lo, hi, mid) < target:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def tube_measure(grid: Grid, psi, mu_star: float, delta: float) -> float:
    """Measure of {|Psi - mu*| < delta} with fractional boundary cells.

    Within each cell Psi is treated as linear between its corner values
    (first-order accurate in the cell size); exact in 1D for piecewise
    linear interpolants.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    vals = psi.values if isinstance(psi, SpatialFunction) else np.asarray(psi, dtype=float)
    lo, hi = _cell_value_ranges(grid, vals)
    return (_measure_below(grid, lo, hi, mu_star + delta)
            - _measure_below(grid, lo, hi, mu_star - delta))


def write_density_csv(path, field: DensityField) -> None:
    """CSV layout shared by all density outputs: index, center coords, value."""
    g = field.grid
    cols = ["cell"] + [f"center_{ax}" for ax in ("x", "y", "z")[:g.dim]] + ["value"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for i in range(g.ncells):
            wr.writerow([i, *(f"{c:.16g}" for c in g.centers[i]),
                         f"{field.values[i]:.16g}"])


def read_density_csv(path, grid: Grid) -> DensityField:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    vals = np.array([float(r[-1]) for r in rows[1:]])
    if len(vals) != grid.ncells:
        raise ValueError("density CSV does not match grid size")
    return DensityField(grid, vals)
