"""Fourier representation of scalar fields on the 2-torus.

Fields are truncated Fourier series u(x) = sum_{|k_i| <= n_max} u_hat(k) e^{i k.x}
stored as dense complex coefficient arrays. Pointwise products are evaluated on a
collocation grid of at least 3*n_max + 1 points per axis, which makes quadratic
nonlinearities alias-free, and re-truncated to the lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import LatticeMismatchError, NonZeroMeanError

_MEAN_TOL = 1e-13


@dataclass(frozen=True)
class Lattice:
    """Square frequency lattice {k : |k_i| <= n_max} with its collocation grid."""

    n_max: int
    collocation_size: int = 0

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if self.collocation_size == 0:
            object.__setattr__(self, "collocation_size", 3 * self.n_max + 1)
        if self.collocation_size < 3 * self.n_max + 1:
            raise ValueError(
                "collocation_size %d < 3*n_max + 1 = %d: quadratic products alias"
                % (self.collocation_size, 3 * self.n_max + 1)
            )

    @property
    def size(self) -> int:
        return 2 * self.n_max + 1

    def modes(self) -> tuple[np.ndarray, np.ndarray]:
        """Mode index arrays K1, K2 with K1[i, j] = i - n_max, K2[i, j] = j - n_max."""
        r = np.arange(-self.n_max, self.n_max + 1)
        return np.meshgrid(r, r, indexing="ij")

    def abs_k_sq(self) -> np.ndarray:
        k1, k2 = self.modes()
        return (k1 * k1 + k2 * k2).astype(float)

    def jap_k_sq(self) -> np.ndarray:
        """<k>^2 = 1 + |k|^2 on the lattice."""
        return 1.0 + self.abs_k_sq()


# per-lattice cache of multiplier arrays
_mult_cache: dict[int, dict[str, np.ndarray]] = {}


def _mult(lat: Lattice) -> dict[str, np.ndarray]:
    key = lat.n_max
    got = _mult_cache.get(key)
    if got is None:
        k1, k2 = lat.modes()
        absq = (k1 * k1 + k2 * k2).astype(float)
        inv = np.zeros_like(absq)
        nz = absq > 0
        inv[nz] = 1.0 / absq[nz]
        got = {
            "ik1": 1j * k1.astype(float),
            "ik2": 1j * k2.astype(float),
            "absq": absq,
            "inv_absq": inv,
            "japsq": 1.0 + absq,
        }
        _mult_cache[key] = got
    return got


@dataclass
class TorusField:
    """Scalar field on T^2 held as its truncated Fourier coefficients.

    coeffs[i, j] is u_hat(k) for k = (i - n_max, j - n_max). Real fields satisfy
    u_hat(-k) = conj(u_hat(k)).
    """

    lattice: Lattice
    coeffs: np.ndarray
    zero_average: bool = False

    def __post_init__(self):
        n = self.lattice.size
        if self.coeffs.shape != (n, n):
            raise ValueError("coefficient array shape %s does not match lattice size %d"
                             % (self.coeffs.shape, n))
        if self.coeffs.dtype != np.complex128:
            self.coeffs = self.coeffs.astype(np.complex128)
        if self.zero_average:
            c0 = self.coeffs[self.lattice.n_max, self.lattice.n_max]
            if abs(c0) > _MEAN_TOL * max(1.0, float(np.abs(self.coeffs).max())):
                raise NonZeroMeanError("field flagged zero_average has u_hat(0) = %r" % c0)

    @classmethod
    def zeros(cls, lattice: Lattice, zero_average: bool = False) -> "TorusField":
        n = lattice.size
        return cls(lattice, np.zeros((n, n), dtype=np.complex128), zero_average)

    @classmethod
    def from_modes(cls, lattice: Lattice, modes: dict, zero_average: bool = False,
                   make_real: bool = False) -> "TorusField":
        """Build a field from {(k1, k2): amplitude}. With make_real the conjugate
        modes are filled in so the field is real."""
        f = cls.zeros(lattice)
        n = lattice.n_max
        for (k1, k2), a in modes.items():
            if abs(k1) > n or abs(k2) > n:
                raise ValueError("mode (%d, %d) outside lattice n_max=%d" % (k1, k2, n))
            f.coeffs[k1 + n, k2 + n] += a
            if make_real:
                f.coeffs[-k1 + n, -k2 + n] += np.conj(a)
        f.zero_average = zero_average
        return f

    def get(self, k1: int, k2: int) -> complex:
        n = self.lattice.n_max
        return complex(self.coeffs[k1 + n, k2 + n])

    def copy(self) -> "TorusField":
        return TorusField(self.lattice, self.coeffs.copy(), self.zero_average)

    def reality_defect(self) -> float:
        """max_k |u_hat(-k) - conj(u_hat(k))|."""
        return float(np.abs(self.coeffs[::-1, ::-1] - np.conj(self.coeffs)).max())

    def mean(self) -> complex:
        n = self.lattice.n_max
        return complex(self.coeffs[n, n])

    def __add__(self, other: "TorusField") -> "TorusField":
        _check_same_lattice(self, other)
        return TorusField(self.lattice, self.coeffs + other.coeffs,
                          self.zero_average and other.zero_average)

    def __sub__(self, other: "TorusField") -> "TorusField":
        _check_same_lattice(self, other)
        return TorusField(self.lattice, self.coeffs - other.coeffs,
                          self.zero_average and other.zero_average)

    def __mul__(self, scalar) -> "TorusField":
        return TorusField(self.lattice, self.coeffs * scalar, self.zero_average)

    __rmul__ = __mul__

    def __neg__(self) -> "TorusField":
        return TorusField(self.lattice, -self.coeffs, self.zero_average)


@dataclass
class VectorField2:
    """Pair of scalar fields forming a vector field on T^2."""

    c1: TorusField
    c2: TorusField

    def __post_init__(self):
        if self.c1.lattice != self.c2.lattice:
            raise LatticeMismatchError("vector components live on different lattices")

    @property
    def lattice(self) -> Lattice:
        return self.c1.lattice

    def __add__(self, other: "VectorField2") -> "VectorField2":
        return VectorField2(self.c1 + other.c1, self.c2 + other.c2)

    def __sub__(self, other: "VectorField2") -> "VectorField2":
        return VectorField2(self.c1 - other.c1, self.c2 - other.c2)

    def __mul__(self, scalar) -> "VectorField2":
        return VectorField2(self.c1 * scalar, self.c2 * scalar)

    __rmul__ = __mul__


@dataclass
class StatePair:
    """The unknown (vorticity, current density); both real, zero-average."""

    omega_field: TorusField
    current_field: TorusField

    def __post_init__(self):
        if self.omega_field.lattice != self.current_field.lattice:
            raise LatticeMismatchError("state components live on different lattices")

    @property
    def lattice(self) -> Lattice:
        return self.omega_field.lattice

    @classmethod
    def zeros(cls, lattice: Lattice) -> "StatePair":
        return cls(TorusField.zeros(lattice, True), TorusField.zeros(lattice, True))

    def copy(self) -> "StatePair":
        return StatePair(self.omega_field.copy(), self.current_field.copy())

    def __add__(self, other: "StatePair") -> "StatePair":
        return StatePair(self.omega_field + other.omega_field,
                         self.current_field + other.current_field)

    def __sub__(self, other: "StatePair") -> "StatePair":
        return StatePair(self.omega_field - other.omega_field,
                         self.current_field - other.current_field)

    def __mul__(self, scalar) -> "StatePair":
        return StatePair(self.omega_field * scalar, self.current_field * scalar)

    __rmul__ = __mul__


def _check_same_lattice(u, v):
    if u.lattice != v.lattice:
        raise LatticeMismatchError("operands live on different lattices")


# ---------------------------------------------------------------------------
# norms and projectors
# ---------------------------------------------------------------------------

def sobolev_norm(u, s: float) -> float:
    """H^s norm (sum_k <k>^{2s} |u_hat(k)|^2)^{1/2}.

    Accepts TorusField, VectorField2 or StatePair (componentwise sum of squares).
    Large s is handled in log space so indices like s0 + b do not overflow.
    """
    if s < 0:
        raise ValueError("s must be >= 0")
    if isinstance(u, VectorField2):
        return math.hypot(sobolev_norm(u.c1, s), sobolev_norm(u.c2, s))
    if isinstance(u, StatePair):
        return math.hypot(sobolev_norm(u.omega_field, s), sobolev_norm(u.current_field, s))
    japsq = _mult(u.lattice)["japsq"]
    if s * math.log(japsq.max()) < 500.0:
        val = np.sum(japsq ** s * np.abs(u.coeffs) ** 2)
        return float(np.sqrt(val))
    # log-stable path for very large s
    mag = np.abs(u.coeffs)
    nz = mag > 0
    if not nz.any():
        return 0.0
    logterm = s * np.log(japsq[nz]) + 2.0 * np.log(mag[nz])
    m = logterm.max()
    acc = np.exp((logterm - m).astype(np.longdouble)).sum()
    out = np.exp(np.longdouble(0.5) * m) * np.sqrt(acc)
    return float(out) if out < np.longdouble(1e308) else float("inf")


def l2_inner(u: TorusField, v: TorusField) -> complex:
    """Coefficient-space L^2 pairing sum_k u_hat(k) conj(v_hat(k))."""
    _check_same_lattice(u, v)
    return complex(np.sum(u.coeffs * np.conj(v.coeffs)))


def project_low(u: TorusField, N: float) -> TorusField:
    """Keep modes with |k| <= N (Euclidean)."""
    mask = _mult(u.lattice)["absq"] <= float(N) ** 2
    return TorusField(u.lattice, np.where(mask, u.coeffs, 0.0), u.zero_average)


def project_high(u: TorusField, N: float) -> TorusField:
    """Id - project_low: keep modes with |k| > N."""
    mask = _mult(u.lattice)["absq"] > float(N) ** 2
    return TorusField(u.lattice, np.where(mask, u.coeffs, 0.0), True)


def zero_mean_project(u: TorusField) -> TorusField:
    out = u.coeffs.copy()
    n = u.lattice.n_max
    out[n, n] = 0.0
    return TorusField(u.lattice, out, True)


def zero_mean_pair(h: StatePair) -> StatePair:
    return StatePair(zero_mean_project(h.omega_field), zero_mean_project(h.current_field))


# ---------------------------------------------------------------------------
# differential calculus (exact Fourier multipliers)
# ---------------------------------------------------------------------------

def dx1(u: TorusField) -> TorusField:
    return TorusField(u.lattice, _mult(u.lattice)["ik1"] * u.coeffs, True)


def dx2(u: TorusField) -> TorusField:
    return TorusField(u.lattice, _mult(u.lattice)["ik2"] * u.coeffs, True)


def grad(u: TorusField) -> VectorField2:
    return VectorField2(dx1(u), dx2(u))


def perp_grad(u: TorusField) -> VectorField2:
    """(d_{x2} u, -d_{x1} u)."""
    return VectorField2(dx2(u), -dx1(u))


def laplacian(u: TorusField) -> TorusField:
    return TorusField(u.lattice, -_mult(u.lattice)["absq"] * u.coeffs, True)


def inv_laplacian(u: TorusField) -> TorusField:
    """Solve -Delta v = -u i.e. v = Delta^{-1} u on zero-average fields."""
    m = _mult(u.lattice)
    scale = max(1.0, float(np.abs(u.coeffs).max()))
    if abs(u.mean()) > _MEAN_TOL * scale:
        raise NonZeroMeanError("inv_laplacian requires a zero-average field")
    return TorusField(u.lattice, -m["inv_absq"] * u.coeffs, True)


def neg_inv_laplacian(u: TorusField) -> TorusField:
    """(-Delta)^{-1} u on zero-average fields."""
    return -inv_laplacian(u)


def curl(V: VectorField2) -> TorusField:
    """d_{x1} V2 - d_{x2} V1."""
    return dx1(V.c2) - dx2(V.c1)


def div(V: VectorField2) -> TorusField:
    return dx1(V.c1) + dx2(V.c2)


def directional(b: tuple[float, float], u: TorusField) -> TorusField:
    """Constant-coefficient directional derivative (b . grad) u."""
    m = _mult(u.lattice)
    return TorusField(u.lattice, (b[0] * m["ik1"] + b[1] * m["ik2"]) * u.coeffs, True)


def biot_savart(omega_field: TorusField) -> VectorField2:
    """Divergence-free velocity with the given curl: grad^perp (-Delta)^{-1} omega."""
    return perp_grad(neg_inv_laplacian(omega_field))


# ---------------------------------------------------------------------------
# collocation grid and dealiased products
# ---------------------------------------------------------------------------

def to_grid(u: TorusField) -> np.ndarray:
    """Sample u on the collocation grid (real part discarded only by caller choice)."""
    g = u.lattice.collocation_size
    n = u.lattice.n_max
    buf = np.zeros((g, g), dtype=np.complex128)
    idx = np.arange(-n, n + 1) % g
    buf[np.ix_(idx, idx)] = u.coeffs
    return np.fft.ifft2(buf) * (g * g)


def from_grid(lattice: Lattice, values: np.ndarray, zero_average: bool = False) -> TorusField:
    """Project collocation samples back onto the lattice."""
    g = lattice.collocation_size
    n = lattice.n_max
    buf = np.fft.fft2(values) / (g * g)
    idx = np.arange(-n, n + 1) % g
    out = buf[np.ix_(idx, idx)].copy()
    if zero_average:
        out[n, n] = 0.0
    return TorusField(lattice, out, zero_average)


def grid_points(lattice: Lattice) -> tuple[np.ndarray, np.ndarray]:
    g = lattice.collocation_size
    x = 2.0 * np.pi * np.arange(g) / g
    return np.meshgrid(x, x, indexing="ij")


def pointwise_product(u: TorusField, v: TorusField) -> TorusField:
    """Dealiased product: alias-free for inputs supported within n_max."""
    _check_same_lattice(u, v)
    return from_grid(u.lattice, to_grid(u) * to_grid(v))


def advect(V: VectorField2, u: TorusField) -> TorusField:
    """(V . grad) u with dealiased products."""
    if V.lattice != u.lattice:
        raise LatticeMismatchError("advect operands live on different lattices")
    return pointwise_product(V.c1, dx1(u)) + pointwise_product(V.c2, dx2(u))
