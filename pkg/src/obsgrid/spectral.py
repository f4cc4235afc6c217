"""Explicit spectral models for the example parabolic systems.

Each model carries a closed-form spectrum (complex eigenvalues with
nondecreasing real parts), vectorized orthonormal eigenfunction
evaluators, and the metadata that drives the large-time analysis:
the lowest-real-part index set J1, the first index p0 beyond it, and
the spectral gap Re(lambda_p0 - lambda_1).

Time weights are exposed in two forms: plain floats (`gamma`) for the
well-scaled regime and mantissa/exponent pairs (`FactoredScalar`,
`gamma_factored`, `tau`) that never overflow, used by the Gram
assembly for stiff modes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# Real exponents above this are not reconstructed as plain floats
# (double overflow near 709; margin for products of two factors).
OVERFLOW_THETA = 600.0

MODEL_NAMES = ("dirichlet_1d", "dirichlet_rect_2d", "torus_1d", "coupled_rect_2d")


class ConfigurationError(ValueError):
    """Model parameters violate a documented precondition."""


@dataclass(frozen=True)
class DomainSpec:
    kind: str                                # "interval" | "rectangle"
    bounds: tuple[tuple[float, float], ...]  # per-axis (lo, hi)

    def __post_init__(self):
        if self.kind not in ("interval", "rectangle"):
            raise ConfigurationError(f"unknown domain kind {self.kind!r}")
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ConfigurationError(f"degenerate axis bounds ({lo}, {hi})")

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def measure(self) -> float:
        out = 1.0
        for lo, hi in self.bounds:
            out *= hi - lo
        return out


@dataclass
class SpectralModel:
    """Spectrum + eigenfunctions of one named example system.

    `evaluator(j, x)` maps a 1-based mode index and an (npts, dim) array
    of points to an (npts, q) complex array of eigenfunction values.
    """

    name: str
    q: int
    domain: DomainSpec
    eigenvalues: np.ndarray          # complex, nondecreasing real parts
    evaluator: Callable[[int, np.ndarray], np.ndarray]
    J1: tuple[int, ...] = field(default=())
    p0: int = 0
    gap: float = 0.0

    def __post_init__(self):
        lams = np.asarray(self.eigenvalues, dtype=complex)
        re = lams.real
        if np.any(np.diff(re) < -1e-12):
            raise ConfigurationError("eigenvalue real parts must be nondecreasing")
        if not self.J1:
            j1 = tuple(int(i) + 1 for i in np.flatnonzero(re <= re[0] + 1e-12))
            object.__setattr__(self, "J1", j1)
        if self.p0 == 0:
            p0 = len(self.J1) + 1
            if p0 > len(lams):
                raise ConfigurationError("need N_max > #J1 so that p0 exists")
            object.__setattr__(self, "p0", p0)
            object.__setattr__(self, "gap", float(re[p0 - 1] - re[0]))
        if self.gap <= 0:
            raise ConfigurationError("spectral gap must be positive")
        self.eigenvalues = lams

    @property
    def n_max(self) -> int:
        return len(self.eigenvalues)

    def phi(self, j: int, x: np.ndarray) -> np.ndarray:
        """Values of eigenfunction j at points x, shape (npts, q)."""
        if not 1 <= j <= self.n_max:
            raise IndexError(f"mode index {j} outside 1..{self.n_max}")
        return self.evaluator(j, np.atleast_2d(np.asarray(x, dtype=float)))


def _dirichlet_1d(n_max: int) -> SpectralModel:
    dom = DomainSpec("interval", ((0.0, np.pi),))
    lams = np.array([j * j for j in range(1, n_max + 1)], dtype=complex)
    c = np.sqrt(2.0 / np.pi)

    def ev(j, x):
        return (c * np.sin(j * x[:, 0]))[:, None].astype(complex)

    return SpectralModel("dirichlet_1d", 1, dom, lams, ev)


def _dirichlet_rect_2d(n_max: int) -> SpectralModel:
    dom = DomainSpec("rectangle", ((0.0, 1.0), (0.0, 1.0)))
    # enough (m, n) candidates to cover the n_max lowest eigenvalues
    kmax = int(np.ceil(np.sqrt(n_max))) + 2
    pairs = [(m, n) for m in range(1, kmax + 1) for n in range(1, kmax + 1)]
    pairs.sort(key=lambda mn: (mn[0] ** 2 + mn[1] ** 2, mn))  # lexicographic tie-break
    pairs = pairs[:n_max]
    lams = np.array([np.pi ** 2 * (m * m + n * n) for m, n in pairs], dtype=complex)

    def ev(j, x):
        m, n = pairs[j - 1]
        return (2.0 * np.sin(m * np.pi * x[:, 0]) * np.sin(n * np.pi * x[:, 1]))[:, None].astype(complex)

    model = SpectralModel("dirichlet_rect_2d", 1, dom, lams, ev)
    model.mode_pairs = pairs  # exposed for reports
    return model


def _torus_1d(n_max: int) -> SpectralModel:
    # constant mode excluded so lambda_1 = 1 with the cos/sin pair;
    # modes: (cos kx, sin kx)/sqrt(pi), lambda = k^2
    dom = DomainSpec("interval", ((0.0, 2.0 * np.pi),))
    ks = [(k, trig) for k in range(1, n_max // 2 + 2) for trig in ("cos", "sin")]
    ks = ks[:n_max]
    lams = np.array([k * k for k, _ in ks], dtype=complex)
    c = 1.0 / np.sqrt(np.pi)

    def ev(j, x):
        k, trig = ks[j - 1]
        f = np.cos if trig == "cos" else np.sin
        return (c * f(k * x[:, 0]))[:, None].astype(complex)

    return SpectralModel("torus_1d", 1, dom, lams, ev)


def _coupled_rect_2d(n_max: int, mu, u) -> SpectralModel:
    """Three coupled heat equations; spatial factor sin(pi x) sin(pi y).

    mu: three complex coupling eigenvalues, Re mu_1 = Re mu_2 < Re mu_3.
    u: orthonormal triple in C^3 (rows u[i] span the coupling eigenspaces).
    """
    mu = np.asarray(mu, dtype=complex)
    u = np.asarray(u, dtype=complex)
    if mu.shape != (3,) or u.shape != (3, 3):
        raise ConfigurationError("coupled model needs 3 eigenvalues and a 3x3 eigenvector triple")
    if abs(mu[0].real - mu[1].real) > 1e-12 or not mu[1].real < mu[2].real - 1e-12:
        raise ConfigurationError("need Re mu_1 = Re mu_2 < Re mu_3")
    lam_space = 2.0 * np.pi ** 2  # lowest eigenvalue of the (0,1)^2 Dirichlet Laplacian
    if mu[0].real <= -lam_space:
        raise ConfigurationError("need Re mu_1 > -(first spatial eigenvalue)")
    gram = u @ u.conj().T
    if np.max(np.abs(gram - np.eye(3))) > 1e-12:
        raise ConfigurationError("coupling eigenvector triple must be orthonormal")

    dom = DomainSpec("rectangle", ((0.0, 1.0), (0.0, 1.0)))
    kmax = int(np.ceil(np.sqrt(n_max))) + 2
    pairs = [(m, n) for m in range(1, kmax + 1) for n in range(1, kmax + 1)]
    modes = [(m, n, i) for (m, n) in pairs for i in range(3)]
    modes.sort(key=lambda t: (np.pi ** 2 * (t[0] ** 2 + t[1] ** 2) + mu[t[2]].real, t))
    modes = modes[:n_max]
    lams = np.array([np.pi ** 2 * (m * m + n * n) + mu[i] for m, n, i in modes])

    def ev(j, x):
        m, n, i = modes[j - 1]
        s = 2.0 * np.sin(m * np.pi * x[:, 0]) * np.sin(n * np.pi * x[:, 1])
        return s[:, None] * u[i][None, :]

    model = SpectralModel("coupled_rect_2d", 3, dom, lams, ev)
    model.mode_triples = modes
    return model


def build_model(name: str, n_max: int, **params) -> SpectralModel:
    """Construct a named spectral model with n_max modes."""
    if n_max < 1:
        raise ConfigurationError("n_max must be >= 1")
    if name == "dirichlet_1d":
        return _dirichlet_1d(n_max)
    if name == "dirichlet_rect_2d":
        return _dirichlet_rect_2d(n_max)
    if name == "torus_1d":
        return _torus_1d(n_max)
    if name == "coupled_rect_2d":
        return _coupled_rect_2d(n_max, params["mu"], params["u"])
    raise ConfigurationError(f"unknown model {name!r}; choose from {MODEL_NAMES}")


@dataclass(frozen=True)
class FactoredScalar:
    """Scalar stored as mantissa * e^exponent; the mantissa stays bounded."""

    exponent: float
    mantissa: complex

    def value(self) -> complex:
        # deliberate overflow to inf if the exponent is out of range
        with np.errstate(over="ignore"):
            return self.mantissa * np.exp(self.exponent)

    def log_abs(self) -> float:
        m = abs(self.mantissa)
        return self.exponent + np.log(m) if m > 0 else -np.inf


def _stable_ratio(z: complex, t: float) -> complex:
    """(1 - exp(-z*t)) / z, series branch near z = 0."""
    zt = z * t
    if abs(zt) < 1e-8:
        return t * (1.0 - zt / 2.0 + zt * zt / 6.0)
    return (1.0 - np.exp(-zt)) / z


def gamma_factored(lam: complex, T: float) -> FactoredScalar:
    """gamma(T) for one eigenvalue as exponent/mantissa; total (never overflows)."""
    r = lam.real if isinstance(lam, complex) else float(lam)
    return FactoredScalar(2.0 * r * T, complex(_stable_ratio(complex(2.0 * r), T)).real)


def gamma_from_lambda(lam: complex, T: float, theta: float = OVERFLOW_THETA) -> float:
    """gamma(T) = (e^{2 Re(lam) T} - 1) / (2 Re lam), or T when Re lam = 0.

    Raises OverflowError once 2 Re(lam) T exceeds theta; use
    gamma_factored for the stiff regime.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    fac = gamma_factored(complex(lam), T)
    if fac.exponent > theta:
        raise OverflowError(
            f"2*Re(lambda)*T = {fac.exponent:.3g} exceeds theta = {theta:.3g}; "
            "use gamma_factored")
    return float(fac.value().real)


def gamma(model: SpectralModel, j: int, T: float, theta: float = OVERFLOW_THETA) -> float:
    """Time weight gamma_j(T) of mode j of a model."""
    return gamma_from_lambda(complex(model.eigenvalues[j - 1]), T, theta)


def tau(lam_i: complex, lam_j: complex, T: float) -> FactoredScalar:
    """Time kernel integral_0^T e^{(lam_i + conj(lam_j)) t} dt, factored.

    exponent = (Re lam_i + Re lam_j) T; the mantissa carries the bounded
    oscillatory part e^{i Im(lam_i - lam_j) T} (1 - e^{-sT})/s with
    s = lam_i + conj(lam_j), and equals T when s = 0.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    lam_i = complex(lam_i)
    lam_j = complex(lam_j)
    s = lam_i + lam_j.conjugate()
    expo = (lam_i.real + lam_j.real) * T
    if s == 0:
        return FactoredScalar(0.0, complex(T))
    phase = np.exp(1j * (lam_i.imag - lam_j.imag) * T)
    return FactoredScalar(expo, phase * _stable_ratio(s, T))
