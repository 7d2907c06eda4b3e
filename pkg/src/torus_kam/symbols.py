"""Pseudo-differential symbols on the torus, sampled on the integer frequency
lattice: quantization, weighted norms, the exact Fourier composition formula,
truncated asymptotic expansion, smooth cut-offs, homological-equation solvers,
and exponential maps.

A symbol a(x, xi) is stored by its x-Fourier modes: data[(k1, k2)] is the array
of a_hat(k, xi) over xi in [-X, X]^2, X = xi_extent. Symbols arising here have
small x-support (the spectrum of the coefficient fields), so the dict
representation keeps compositions cheap. Collocation samples of a(x, xi) are
available on demand for the diagnostic weighted norms.

The exact composition sigma(x, xi) = sum_k a(x, xi + k) b_hat(k, xi) e^{i k.x}
needs a's values at shifted frequencies, so each composition shrinks the usable
xi extent by the x-support reach of the right factor; build symbols with enough
padding for the pipeline depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractionError, ResonanceError, TorusKamError
from .spectral import Lattice, StatePair, TorusField, VectorField2, sobolev_norm

_PRUNE_TOL = 1e-15


class XiExtentError(TorusKamError):
    """Composition would need symbol values beyond the stored xi grid."""


@dataclass
class SymbolGrid:
    lattice: Lattice
    order_m: float
    xi_extent: int
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.xi_extent < self.lattice.n_max:
            raise XiExtentError("xi_extent %d below lattice n_max %d"
                                % (self.xi_extent, self.lattice.n_max))

    # -- basic structure ----------------------------------------------------
    @property
    def grid_size(self) -> int:
        return 2 * self.xi_extent + 1

    def xi_range(self) -> np.ndarray:
        return np.arange(-self.xi_extent, self.xi_extent + 1)

    def xi_mesh(self) -> tuple[np.ndarray, np.ndarray]:
        r = self.xi_range()
        return np.meshgrid(r, r, indexing="ij")

    def support(self) -> list[tuple[int, int]]:
        return sorted(self.data.keys())

    def reach(self) -> int:
        """Max sup-norm of the x-support."""
        if not self.data:
            return 0
        return max(max(abs(k[0]), abs(k[1])) for k in self.data)

    def amax(self) -> float:
        if not self.data:
            return 0.0
        return max(float(np.abs(v).max()) for v in self.data.values())

    def copy(self) -> "SymbolGrid":
        return SymbolGrid(self.lattice, self.order_m, self.xi_extent,
                          {k: v.copy() for k, v in self.data.items()})

    def prune(self, rel_tol: float = _PRUNE_TOL) -> "SymbolGrid":
        top = self.amax()
        if top == 0.0:
            self.data = {}
            return self
        self.data = {k: v for k, v in self.data.items()
                     if float(np.abs(v).max()) > rel_tol * top}
        return self

    def restrict(self, xi_extent: int) -> "SymbolGrid":
        """View of the symbol on a smaller xi grid (arrays are shared views:
        symbol data is treated as immutable throughout)."""
        if xi_extent == self.xi_extent:
            return self
        if xi_extent > self.xi_extent:
            raise XiExtentError("cannot grow xi_extent from %d to %d"
                                % (self.xi_extent, xi_extent))
        lo = self.xi_extent - xi_extent
        hi = lo + 2 * xi_extent + 1
        return SymbolGrid(self.lattice, self.order_m, xi_extent,
                          {k: v[lo:hi, lo:hi] for k, v in self.data.items()})

    # -- arithmetic ---------------------------------------------------------
    def _aligned(self, other: "SymbolGrid") -> tuple["SymbolGrid", "SymbolGrid"]:
        X = min(self.xi_extent, other.xi_extent)
        return self.restrict(X), other.restrict(X)

    def __add__(self, other: "SymbolGrid") -> "SymbolGrid":
        a, b = self._aligned(other)
        out = SymbolGrid(a.lattice, max(self.order_m, other.order_m), a.xi_extent,
                         dict(a.data))
        for k, v in b.data.items():
            got = out.data.get(k)
            out.data[k] = v if got is None else got + v
        return out

    def __sub__(self, other: "SymbolGrid") -> "SymbolGrid":
        return self + (-1.0) * other

    def __mul__(self, scalar) -> "SymbolGrid":
        return SymbolGrid(self.lattice, self.order_m, self.xi_extent,
                          {k: v * scalar for k, v in self.data.items()})

    __rmul__ = __mul__

    def scale_xi(self, g: np.ndarray, order_shift: float = 0.0) -> "SymbolGrid":
        """Multiply every x-mode by the xi-grid array g."""
        return SymbolGrid(self.lattice, self.order_m + order_shift, self.xi_extent,
                          {k: v * g for k, v in self.data.items()})

    # -- views --------------------------------------------------------------
    def mode(self, k) -> np.ndarray:
        z = self.data.get((int(k[0]), int(k[1])))
        if z is None:
            return np.zeros((self.grid_size, self.grid_size), dtype=np.complex128)
        return z

    def x_average(self) -> np.ndarray:
        """<a>_x(xi) = a_hat(0, xi)."""
        return self.mode((0, 0)).copy()

    def value_at(self, x: tuple[float, float], xi: tuple[int, int]) -> complex:
        i = int(xi[0]) + self.xi_extent
        j = int(xi[1]) + self.xi_extent
        acc = 0.0 + 0.0j
        for (k1, k2), v in self.data.items():
            acc += v[i, j] * np.exp(1j * (k1 * x[0] + k2 * x[1]))
        return complex(acc)

    def collocation_values(self, xi: tuple[int, int]) -> np.ndarray:
        """a(x, xi) sampled on the collocation grid for a fixed xi."""
        f = TorusField.zeros(self.lattice)
        n = self.lattice.n_max
        i = int(xi[0]) + self.xi_extent
        j = int(xi[1]) + self.xi_extent
        for (k1, k2), v in self.data.items():
            if abs(k1) <= n and abs(k2) <= n:
                f.coeffs[k1 + n, k2 + n] = v[i, j]
        from .spectral import to_grid
        return to_grid(f)

    def reality_defect(self) -> float:
        """Max deviation from a_hat(k, -xi) = conj(a_hat(-k, xi))."""
        worst = 0.0
        for (k1, k2), v in self.data.items():
            w = self.mode((-k1, -k2))
            worst = max(worst, float(np.abs(v[::-1, ::-1] - np.conj(w)).max()))
        return worst

    def x_sobolev_norm(self, s: float) -> np.ndarray:
        """||a(., xi)||_{H^s_x} over the xi grid."""
        out = np.zeros((self.grid_size, self.grid_size), dtype=float)
        for (k1, k2), v in self.data.items():
            out += (1.0 + k1 * k1 + k2 * k2) ** s * np.abs(v) ** 2
        return np.sqrt(out)


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def multiplier_symbol(lattice: Lattice, fn, order_m: float, xi_extent: int) -> SymbolGrid:
    """x-independent symbol g(xi); fn acts on integer mesh arrays (X1, X2)."""
    s = SymbolGrid(lattice, order_m, xi_extent)
    X1, X2 = s.xi_mesh()
    s.data[(0, 0)] = np.asarray(fn(X1, X2), dtype=np.complex128)
    return s


def field_times_multiplier(c: TorusField, fn, order_m: float, xi_extent: int,
                           prune_tol: float = _PRUNE_TOL) -> SymbolGrid:
    """Symbol a(x, xi) = c(x) g(xi)."""
    s = SymbolGrid(c.lattice, order_m, xi_extent)
    X1, X2 = s.xi_mesh()
    g = np.asarray(fn(X1, X2), dtype=np.complex128)
    n = c.lattice.n_max
    top = float(np.abs(c.coeffs).max())
    for i in range(c.lattice.size):
        for j in range(c.lattice.size):
            cc = c.coeffs[i, j]
            if abs(cc) > prune_tol * max(top, 1e-300):
                s.data[(i - n, j - n)] = cc * g
    return s


def vector_dot_xi_symbol(d: VectorField2, xi_extent: int,
                         scale: complex = 1j) -> SymbolGrid:
    """Symbol scale * d(x).xi of the transport operator d.grad (scale=i)."""
    s1 = field_times_multiplier(d.c1, lambda X1, X2: X1.astype(float), 1.0, xi_extent)
    s2 = field_times_multiplier(d.c2, lambda X1, X2: X2.astype(float), 1.0, xi_extent)
    out = s1 + s2
    return scale * out


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------

def quantize(a: SymbolGrid, u: TorusField) -> TorusField:
    """Op(a) u (x) = sum_k a(x, k) u_hat(k) e^{i k.x}, truncated to the lattice."""
    if a.lattice != u.lattice:
        raise TorusKamError("symbol and field lattices differ")
    n = u.lattice.n_max
    X = a.xi_extent
    size = u.lattice.size
    lo = X - n
    out = np.zeros((size, size), dtype=np.complex128)
    for (k1, k2), v in a.data.items():
        block = v[lo:lo + size, lo:lo + size] * u.coeffs
        # shift by the symbol's x-mode k; clip to the lattice
        s1a, s1b = max(0, k1), size + min(0, k1)
        s2a, s2b = max(0, k2), size + min(0, k2)
        out[s1a:s1b, s2a:s2b] += block[s1a - k1:s1b - k1, s2a - k2:s2b - k2]
    return TorusField(u.lattice, out, False)


def op_closure(a: SymbolGrid):
    return lambda u: quantize(a, u)


@dataclass
class BlockSymbol:
    """2x2 matrix of optional symbols acting on state pairs."""

    b11: SymbolGrid | None = None
    b12: SymbolGrid | None = None
    b21: SymbolGrid | None = None
    b22: SymbolGrid | None = None

    def __mul__(self, scalar) -> "BlockSymbol":
        f = lambda s: None if s is None else scalar * s
        return BlockSymbol(f(self.b11), f(self.b12), f(self.b21), f(self.b22))

    __rmul__ = __mul__

    def is_off_diagonal(self) -> bool:
        return self.b11 is None and self.b22 is None

    def is_diagonal(self) -> bool:
        return self.b12 is None and self.b21 is None


def quantize_block(B: BlockSymbol, h: StatePair) -> StatePair:
    o = TorusField.zeros(h.lattice)
    j = TorusField.zeros(h.lattice)
    if B.b11 is not None:
        o = o + quantize(B.b11, h.omega_field)
    if B.b12 is not None:
        o = o + quantize(B.b12, h.current_field)
    if B.b21 is not None:
        j = j + quantize(B.b21, h.omega_field)
    if B.b22 is not None:
        j = j + quantize(B.b22, h.current_field)
    return StatePair(o, j)


# ---------------------------------------------------------------------------
# weighted norms and xi differences
# ---------------------------------------------------------------------------

def xi_difference(a: SymbolGrid, axis: int) -> SymbolGrid:
    """Centered lattice difference (a(xi + e) - a(xi - e)) / 2 along the axis;
    usable extent shrinks by one."""
    X = a.xi_extent - 1
    out = SymbolGrid(a.lattice, a.order_m - 1.0, X)
    for k, v in a.data.items():
        if axis == 0:
            d = (v[2:, 1:-1] - v[:-2, 1:-1]) / 2.0
        else:
            d = (v[1:-1, 2:] - v[1:-1, :-2]) / 2.0
        out.data[k] = d
    return out


def _xi_diff_multi(a: SymbolGrid, beta: tuple[int, int]) -> SymbolGrid:
    out = a
    for _ in range(beta[0]):
        out = xi_difference(out, 0)
    for _ in range(beta[1]):
        out = xi_difference(out, 1)
    return out


def weighted_norm(a: SymbolGrid, m: float, s: float, alpha: int) -> float:
    """sup_{|beta| <= alpha, xi} ||D_xi^beta a(., xi)||_{H^s_x} <xi>^{-m + |beta|},
    with D_xi realized as centered lattice differences."""
    worst = 0.0
    for b1 in range(alpha + 1):
        for b2 in range(alpha + 1 - b1):
            d = _xi_diff_multi(a, (b1, b2))
            X1, X2 = d.xi_mesh()
            jap = np.sqrt(1.0 + X1.astype(float) ** 2 + X2 ** 2)
            w = d.x_sobolev_norm(s) * jap ** (-(m) + (b1 + b2))
            if w.size:
                worst = max(worst, float(w.max()))
    return worst


# ---------------------------------------------------------------------------
# composition
# ---------------------------------------------------------------------------

def compose_exact(a: SymbolGrid, b: SymbolGrid, out_extent: int | None = None) -> SymbolGrid:
    """Exact symbol of Op(a) Op(b):
    sigma_hat(j, xi) = sum_k a_hat(j - k, xi + k) b_hat(k, xi)."""
    if a.lattice != b.lattice:
        raise TorusKamError("symbol lattices differ")
    reach_b = b.reach()
    avail = min(a.xi_extent - reach_b, b.xi_extent)
    if out_extent is None:
        out_extent = avail
    if out_extent > avail:
        raise XiExtentError("composition needs extent %d, only %d available"
                            % (out_extent, avail))
    if out_extent < a.lattice.n_max:
        raise XiExtentError("composed symbol extent %d fell below n_max %d"
                            % (out_extent, a.lattice.n_max))
    out = SymbolGrid(a.lattice, a.order_m + b.order_m, out_extent)
    G = 2 * out_extent + 1
    keys_a = list(a.data.keys())
    stack_a = np.stack([a.data[k] for k in keys_a]) if keys_a else None
    lob = b.xi_extent - out_extent
    for (kb1, kb2), vb in b.data.items():
        vb_c = vb[lob:lob + G, lob:lob + G]
        loa1 = a.xi_extent - out_extent + kb1
        loa2 = a.xi_extent - out_extent + kb2
        # a's values at xi + k_b on the output grid, all x-modes at once
        block = stack_a[:, loa1:loa1 + G, loa2:loa2 + G] * vb_c
        for i, (ka1, ka2) in enumerate(keys_a):
            key = (ka1 + kb1, ka2 + kb2)
            got = out.data.get(key)
            if got is None:
                out.data[key] = block[i].copy()
            else:
                got += block[i]
    return out.prune()


def commutator_exact(a: SymbolGrid, b: SymbolGrid) -> SymbolGrid:
    return compose_exact(a, b) - compose_exact(b, a)


def pointwise_symbol_product(a: SymbolGrid, b: SymbolGrid) -> SymbolGrid:
    """sigma(x, xi) = a(x, xi) b(x, xi): x-convolution of the mode arrays."""
    a2, b2 = a._aligned(b)
    out = SymbolGrid(a.lattice, a.order_m + b.order_m, a2.xi_extent)
    for (ka1, ka2), va in a2.data.items():
        for (kb1, kb2), vb in b2.data.items():
            key = (ka1 + kb1, ka2 + kb2)
            term = va * vb
            if key in out.data:
                out.data[key] += term
            else:
                out.data[key] = term
    return out.prune()


def x_derivative_symbol(a: SymbolGrid, beta: tuple[int, int]) -> SymbolGrid:
    out = a.copy()
    out.data = {}
    for (k1, k2), v in a.data.items():
        out.data[(k1, k2)] = v * (1j * k1) ** beta[0] * (1j * k2) ** beta[1]
    return out


def compose_expand(a: SymbolGrid, b: SymbolGrid, N_terms: int) -> tuple[SymbolGrid, float]:
    """Truncated expansion sum_{|beta| < N} (1 / i^{|beta|} beta!) D_xi^beta a d_x^beta b
    plus the weighted norm of (exact - expansion) at order m + m' - N."""
    acc = None
    for total in range(N_terms):
        for b1 in range(total + 1):
            b2 = total - b1
            coef = 1.0 / ((1j) ** total * math.factorial(b1) * math.factorial(b2))
            term = coef * pointwise_symbol_product(
                _xi_diff_multi(a, (b1, b2)), x_derivative_symbol(b, (b1, b2)))
            acc = term if acc is None else acc + term
    exact = compose_exact(a, b)
    diff = exact - acc
    rem = weighted_norm(diff, a.order_m + b.order_m - N_terms, 0, 0)
    acc.order_m = a.order_m + b.order_m
    return acc, rem


# ---------------------------------------------------------------------------
# cut-off and homological equations
# ---------------------------------------------------------------------------

def smooth_step(t: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, exponentially flat at both
    ends (ratio of exp(-1/t)-type bumps)."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    out[t >= 1.0] = 1.0
    ramp = (t > 0.0) & (t < 1.0)
    tr = t[ramp]
    e1 = np.exp(-1.0 / tr)
    e2 = np.exp(-1.0 / (1.0 - tr))
    out[ramp] = e1 / (e1 + e2)
    return out


def chi_lambda_values(lam: float, delta: float, X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    """Radial cut-off chi(|xi| / lam^{6 delta}): 0 for |xi| <= lam^{6d}/2,
    1 for |xi| >= lam^{6d}."""
    r = np.hypot(X1, X2) / lam ** (6.0 * delta)
    return smooth_step(2.0 * r - 1.0)


def cutoff_chi_lambda(lam: float, delta: float, lattice: Lattice,
                      xi_extent: int) -> SymbolGrid:
    return multiplier_symbol(lattice,
                             lambda X1, X2: chi_lambda_values(lam, delta, X1, X2),
                             0.0, xi_extent)


def solve_parabolic_homological(a: SymbolGrid, sign: int, lam: float, omega,
                                delta: float) -> SymbolGrid:
    """psi with (lam w.grad + sign |xi|^2) psi + chi_lam a = 0:
    psi_hat(k, xi) = -chi(xi) a_hat(k, xi) / (i lam w.k + sign |xi|^2)."""
    if sign not in (+1, -1):
        raise ValueError("sign must be +1 or -1")
    X1, X2 = a.xi_mesh()
    chi = chi_lambda_values(lam, delta, X1, X2)
    abssq = (X1.astype(float) ** 2 + X2 ** 2)
    out = SymbolGrid(a.lattice, a.order_m - 1.5, a.xi_extent)
    for (k1, k2), v in a.data.items():
        denom = 1j * lam * (omega[0] * k1 + omega[1] * k2) + sign * abssq
        # chi vanishes near xi = 0, so the denominator never vanishes on the support
        safe = np.where(np.abs(denom) == 0.0, 1.0, denom)
        out.data[(k1, k2)] = -chi * v / safe
    return out.prune()


def parabolic_residual(psi: SymbolGrid, a: SymbolGrid, sign: int, lam: float,
                       omega, delta: float) -> float:
    """Max relative residual of (lam w.grad + sign |xi|^2) psi + chi a over samples."""
    X1, X2 = psi.xi_mesh()
    chi = chi_lambda_values(lam, delta, X1, X2)
    abssq = X1.astype(float) ** 2 + X2 ** 2
    worst = 0.0
    scale = max(a.amax(), 1e-300)
    for (k1, k2), v in psi.data.items():
        lhs = (1j * lam * (omega[0] * k1 + omega[1] * k2) + sign * abssq) * v \
            + chi * a.mode((k1, k2))
        worst = max(worst, float(np.abs(lhs).max()) / scale)
    return worst


def solve_transport_homological(a: SymbolGrid, lam: float, omega,
                                divisor_floor: float = 1e-300):
    """f with lam w.grad f + a = <a>_x: f_hat(k, xi) = -a_hat(k, xi)/(i lam w.k),
    f_hat(0, .) = 0. Returns (f, <a>_x array over the xi grid)."""
    out = SymbolGrid(a.lattice, a.order_m, a.xi_extent)
    avg = a.x_average()
    for (k1, k2), v in a.data.items():
        if (k1, k2) == (0, 0):
            continue
        div = 1j * lam * (omega[0] * k1 + omega[1] * k2)
        if abs(div) <= divisor_floor:
            raise ResonanceError("transport divisor vanished at k=(%d,%d)" % (k1, k2))
        out.data[(k1, k2)] = -v / div
    return out.prune(), avg


# ---------------------------------------------------------------------------
# exponential maps
# ---------------------------------------------------------------------------

def exp_closure(apply_fn, n_terms: int = 80, tol: float = 1e-16):
    """u -> sum_n A^n u / n! for a linear closure A, with a geometric tail bound.

    Raises if the series has not met the tolerance within n_terms."""

    def run(u):
        acc = u
        term = u
        base = max(sobolev_norm(u, 0.0), 1e-300)
        for n in range(1, n_terms + 1):
            term = apply_fn(term) * (1.0 / n)
            acc = acc + term
            tn = sobolev_norm(term, 0.0)
            if tn <= tol * base:
                return acc
        raise ContractionError("exponential series not converged in %d terms "
                               "(last term %.3e)" % (n_terms, tn))

    return run


def exp_symbol_series(m: SymbolGrid, n_terms: int = 40,
                      tol: float = 1e-15) -> SymbolGrid:
    """Symbol of exp(Op(m)) under exact composition: sum m^{#n} / n!."""
    ident = multiplier_symbol(m.lattice, lambda X1, X2: np.ones_like(X1, dtype=float),
                              0.0, m.xi_extent)
    acc = ident
    term = ident
    for n in range(1, n_terms + 1):
        term = compose_exact(term, m) * (1.0 / n)
        acc = acc + term
        if term.amax() <= tol * max(acc.amax(), 1e-300):
            return acc.prune()
    raise ContractionError("symbol exponential not converged in %d terms" % n_terms)
