#!/usr/bin/env python3
"""Benchmark the numba hot kernels against the pure-numpy fallback.

The kernels dominate assembly time on 2D grids: mass_from_points reduces
mode values over quadrature points into the Hermitian mass matrix,
form_from_points evaluates the supergradient's pointwise quadratic form.
Run:

    python3 benchmarks/bench_kernels.py [--cells 128] [--modes 25] [--repeat 5]

The backend is selected per process; this script times the in-process
backend functions directly, so both columns come from one run.
"""

import argparse
import timeit

import numpy as np

from obsgrid import _kernels
from obsgrid.geometry import make_grid
from obsgrid.gram import ModeBasis
from obsgrid.spectral import build_model


def build_case(cells, modes):
    model = build_model("dirichlet_rect_2d", modes)
    grid = make_grid(model.domain, (cells, cells), 3)
    basis = ModeBasis(model, grid, tuple(range(1, modes + 1)))
    rng = np.random.default_rng(0)
    a = rng.uniform(0.0, 1.0, grid.ncells)
    wa = basis.point_weights(a)
    b = rng.standard_normal(modes) + 1j * rng.standard_normal(modes)
    W = np.outer(b, b.conj())
    return basis.V, wa, W


def bench(fn, repeat, number=3):
    times = timeit.repeat(fn, repeat=repeat, number=number)
    return min(times) / number


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cells", type=int, default=128)
    ap.add_argument("--modes", type=int, default=25)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    V, wa, W = build_case(args.cells, args.modes)
    npts = V.shape[1]
    print(f"grid {args.cells}x{args.cells} ({npts} quadrature points), "
          f"{args.modes} modes; best of {args.repeat}, seconds per call\n")

    rows = []
    rows.append(("mass (numpy)", bench(lambda: _kernels._mass_numpy(V, wa), args.repeat)))
    rows.append(("form (numpy)", bench(lambda: _kernels._form_numpy(V, W), args.repeat)))
    if _kernels.NUMBA_AVAILABLE:
        Vc = np.ascontiguousarray(V)
        Wc = np.ascontiguousarray(W.astype(np.complex128))
        _kernels._mass_numba(Vc, wa)     # JIT warm-up
        _kernels._form_numba(Vc, Wc)
        rows.append(("mass (numba)", bench(lambda: _kernels._mass_numba(Vc, wa), args.repeat)))
        rows.append(("form (numba)", bench(lambda: _kernels._form_numba(Vc, Wc), args.repeat)))
    else:
        print("numba not importable: only the numpy fallback is timed")

    width = max(len(name) for name, _ in rows)
    for name, t in rows:
        print(f"  {name:<{width}}  {t * 1e3:9.3f} ms")
    if _kernels.NUMBA_AVAILABLE:
        m_np = dict(rows)["mass (numpy)"]
        m_nb = dict(rows)["mass (numba)"]
        f_np = dict(rows)["form (numpy)"]
        f_nb = dict(rows)["form (numba)"]
        print(f"\n  speedup: mass x{m_np / m_nb:.2f}, form x{f_np / f_nb:.2f}")


if __name__ == "__main__":
    main()
