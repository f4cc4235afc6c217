"""Hot numeric kernels: numba @njit versions with pure-numpy fallbacks.

The backend is chosen once at import from the OBSGRID_BACKEND environment
variable ("numba" or "numpy"); default is numba when importable. Both
backends are deterministic run-to-run: the numba kernels parallelize over
matrix rows / quadrature points with a fixed sequential reduction per
entry, the numpy path uses single BLAS calls.

Kernel inputs: V is the mode-value table of shape (nmodes, npts, q)
(eigenfunction components at every Gauss node, cell-major point order),
wa the per-point weight a(cell(p)) * w_p.
"""

from __future__ import annotations

import os

import numpy as np

_env = os.environ.get("OBSGRID_BACKEND", "").strip().lower()
if _env not in ("", "numba", "numpy"):
    raise ValueError(f"OBSGRID_BACKEND must be 'numba' or 'numpy', got {_env!r}")

NUMBA_AVAILABLE = False
if _env != "numpy":
    try:
        from numba import njit, prange
        NUMBA_AVAILABLE = True
    except ImportError:
        if _env == "numba":
            raise
BACKEND = "numba" if (NUMBA_AVAILABLE and _env != "numpy") else "numpy"


def _mass_numpy(V: np.ndarray, wa: np.ndarray) -> np.ndarray:
    n, p, q = V.shape
    Vw = (V * wa[None, :, None]).reshape(n, p * q)
    return Vw @ V.conj().reshape(n, p * q).T


def _form_numpy(V: np.ndarray, W: np.ndarray) -> np.ndarray:
    # F_p = Re sum_ij W_ij <V_i(p), V_j(p)>
    Z = np.einsum("ij,ipc->jpc", W, V)
    return np.einsum("jpc,jpc->p", np.conj(V), Z).real


if NUMBA_AVAILABLE:

    @njit(parallel=True, cache=True)
    def _mass_numba(V, wa):  # pragma: no cover - exercised via dispatch
        n, p, q = V.shape
        M = np.zeros((n, n), dtype=np.complex128)
        for i in prange(n):
            for j in range(i + 1):
                acc = 0.0 + 0.0j
                for k in range(p):
                    dot = 0.0 + 0.0j
                    for c in range(q):
                        dot += V[i, k, c] * np.conj(V[j, k, c])
                    acc += wa[k] * dot
                M[i, j] = acc
                M[j, i] = np.conj(acc)
        return M

    @njit(parallel=True, cache=True)
    def _form_numba(V, W):  # pragma: no cover - exercised via dispatch
        n, p, q = V.shape
        F = np.zeros(p)
        for k in prange(p):
            acc = 0.0
            for i in range(n):
                for j in range(n):
                    dot = 0.0 + 0.0j
                    for c in range(q):
                        dot += V[i, k, c] * np.conj(V[j, k, c])
                    acc += (W[i, j] * dot).real
            F[k] = acc
        return F


def mass_from_points(V: np.ndarray, wa: np.ndarray) -> np.ndarray:
    """Hermitian matrix M_ij = sum_p wa_p <V_i(p), V_j(p)>."""
    if BACKEND == "numba":
        return _mass_numba(np.ascontiguousarray(V), np.ascontiguousarray(wa))
    return _mass_numpy(V, wa)


def form_from_points(V: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Pointwise real quadratic form F_p = Re sum_ij W_ij V_i(p) conj(V_j(p))."""
    if BACKEND == "numba":
        return _form_numba(np.ascontiguousarray(V),
                           np.ascontiguousarray(W.astype(np.complex128)))
    return _form_numpy(V, W)
