"""Linearization of the vorticity-current map at a state, applied in block form,
validated against finite differences, and a dense Galerkin inverse used as the
ground-truth oracle for the reduction pipeline.

The derivative at (Omega, J) acts on (hO, hJ) as

    row1 = (lam w.grad - Delta) hO + a.grad hO + d.grad hJ + R1[hO] + R2[hJ]
    row2 =  lam w.grad hJ        + a.grad hJ + d.grad hO + R3[hO] + R4[hJ]

with a = lam^delta U, d = -b - lam^delta B and the one-smoothing remainders

    R1[hO] =  lam^delta (U hO . grad) Omega
    R2[hJ] = -lam^delta (U hJ . grad) J
    R3[hO] =  lam^delta (U hO . grad) J     - 2 lam^delta H(U hO, B)
    R4[hJ] = -lam^delta (U hJ . grad) Omega - 2 lam^delta H(U, U hJ)

where U g is the Biot-Savart field of g. The signs follow by differentiating
the residual map; finite differences (taylor_check) pin them down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diophantine import heat_eigenvalue
from .errors import ConfigError, ResonanceError
from .mhd import PhysParams, bilinear_H, evaluate_F
from .spectral import (
    Lattice, StatePair, TorusField, VectorField2,
    advect, biot_savart, directional, laplacian, sobolev_norm,
    zero_mean_project,
)


@dataclass
class LinearizedOperator:
    a_field: VectorField2
    d_field: VectorField2
    params: PhysParams
    omega: tuple[float, float]
    base_state: StatePair

    @property
    def lattice(self) -> Lattice:
        return self.base_state.lattice

    def grids(self) -> dict:
        """Collocation samples of the coefficient fields, built once per
        operator; apply_linearized reuses them across many applications."""
        if not hasattr(self, "_grids"):
            from .spectral import biot_savart, dx1, dx2, to_grid

            Om, J = self.base_state.omega_field, self.base_state.current_field
            U = biot_savart(Om)
            B = biot_savart(J)
            g = {
                "a1": to_grid(self.a_field.c1), "a2": to_grid(self.a_field.c2),
                "d1": to_grid(self.d_field.c1), "d2": to_grid(self.d_field.c2),
                "dOm1": to_grid(dx1(Om)), "dOm2": to_grid(dx2(Om)),
                "dJ1": to_grid(dx1(J)), "dJ2": to_grid(dx2(J)),
                "dU": [[to_grid(dx1(U.c1)), to_grid(dx2(U.c1))],
                       [to_grid(dx1(U.c2)), to_grid(dx2(U.c2))]],
                "dB": [[to_grid(dx1(B.c1)), to_grid(dx2(B.c1))],
                       [to_grid(dx1(B.c2)), to_grid(dx2(B.c2))]],
            }
            self._grids = g
        return self._grids


def assemble(state: StatePair, params: PhysParams, omega) -> LinearizedOperator:
    lam_d = params.lam ** params.delta
    U = biot_savart(state.omega_field)
    B = biot_savart(state.current_field)
    a_field = lam_d * U
    b1, b2 = params.b_avg
    lat = state.lattice
    d1 = TorusField.from_modes(lat, {(0, 0): -b1}) - lam_d * B.c1
    d2 = TorusField.from_modes(lat, {(0, 0): -b2}) - lam_d * B.c2
    return LinearizedOperator(a_field, VectorField2(d1, d2), params,
                              (float(omega[0]), float(omega[1])), state.copy())


def apply_linearized_reference(L: LinearizedOperator, h: StatePair) -> StatePair:
    """Straightforward composition of the spectral primitives; the production
    path below reuses cached coefficient grids and must agree with this."""
    if h.lattice != L.lattice:
        raise ConfigError("lattice mismatch between operator and argument")
    lam, delta = L.params.lam, L.params.delta
    lam_d = lam ** delta
    w = (lam * L.omega[0], lam * L.omega[1])
    hO, hJ = h.omega_field, h.current_field
    Om, J = L.base_state.omega_field, L.base_state.current_field
    U = biot_savart(Om)
    B = biot_savart(J)
    UhO = biot_savart(zero_mean_project(hO))
    UhJ = biot_savart(zero_mean_project(hJ))

    r1 = (directional(w, hO) - laplacian(hO)
          + advect(L.a_field, hO) + advect(L.d_field, hJ)
          + lam_d * advect(UhO, Om)
          - lam_d * advect(UhJ, J))
    r2 = (directional(w, hJ)
          + advect(L.a_field, hJ) + advect(L.d_field, hO)
          + lam_d * (advect(UhO, J) - 2.0 * bilinear_H(UhO, B))
          - lam_d * (advect(UhJ, Om) + 2.0 * bilinear_H(U, UhJ)))
    return StatePair(zero_mean_project(r1), zero_mean_project(r2))


def apply_linearized(L: LinearizedOperator, h: StatePair) -> StatePair:
    if h.lattice != L.lattice:
        raise ConfigError("lattice mismatch between operator and argument")
    from .spectral import _mult, from_grid, to_grid

    g = L.grids()
    lat = L.lattice
    lam, delta = L.params.lam, L.params.delta
    lam_d = lam ** delta
    w = (lam * L.omega[0], lam * L.omega[1])
    hO, hJ = h.omega_field, h.current_field
    m = _mult(lat)
    n = lat.n_max

    def grid_of(coeffs):
        return to_grid(TorusField(lat, coeffs, False))

    # per-apply grids: derivatives and Biot-Savart multipliers of the argument
    cO, cJ = hO.coeffs.copy(), hJ.coeffs.copy()
    cO[n, n] = 0.0
    cJ[n, n] = 0.0
    dx1_O, dx2_O = grid_of(m["ik1"] * cO), grid_of(m["ik2"] * cO)
    dx1_J, dx2_J = grid_of(m["ik1"] * cJ), grid_of(m["ik2"] * cJ)
    uo = m["inv_absq"] * cO   # (-Delta)^{-1} hO coefficients
    uj = m["inv_absq"] * cJ
    UhO1, UhO2 = grid_of(m["ik2"] * uo), grid_of(-m["ik1"] * uo)
    UhJ1, UhJ2 = grid_of(m["ik2"] * uj), grid_of(-m["ik1"] * uj)
    # d_i (U h)_j grids for the stretching terms
    dUhO = [[grid_of(m["ik1"] * m["ik2"] * uo), grid_of(m["ik2"] * m["ik2"] * uo)],
            [grid_of(-m["ik1"] * m["ik1"] * uo), grid_of(-m["ik2"] * m["ik1"] * uo)]]
    dUhJ = [[grid_of(m["ik1"] * m["ik2"] * uj), grid_of(m["ik2"] * m["ik2"] * uj)],
            [grid_of(-m["ik1"] * m["ik1"] * uj), grid_of(-m["ik2"] * m["ik1"] * uj)]]

    grid1 = (g["a1"] * dx1_O + g["a2"] * dx2_O + g["d1"] * dx1_J + g["d2"] * dx2_J
             + lam_d * (UhO1 * g["dOm1"] + UhO2 * g["dOm2"])
             - lam_d * (UhJ1 * g["dJ1"] + UhJ2 * g["dJ2"]))
    # H(U hO, B) = d1 B . grad (U hO)_2 - d2 B . grad (U hO)_1
    H_O = (g["dB"][0][0] * dUhO[1][0] + g["dB"][1][0] * dUhO[1][1]
           - g["dB"][0][1] * dUhO[0][0] - g["dB"][1][1] * dUhO[0][1])
    # H(U, U hJ) = d1 (U hJ) . grad U2 - d2 (U hJ) . grad U1
    H_J = (dUhJ[0][0] * g["dU"][1][0] + dUhJ[1][0] * g["dU"][1][1]
           - dUhJ[0][1] * g["dU"][0][0] - dUhJ[1][1] * g["dU"][0][1])
    grid2 = (g["a1"] * dx1_J + g["a2"] * dx2_J + g["d1"] * dx1_O + g["d2"] * dx2_O
             + lam_d * (UhO1 * g["dJ1"] + UhO2 * g["dJ2"])
             - 2.0 * lam_d * H_O
             - lam_d * (UhJ1 * g["dOm1"] + UhJ2 * g["dOm2"])
             - 2.0 * lam_d * H_J)

    r1 = from_grid(lat, grid1, True)
    r2 = from_grid(lat, grid2, True)
    wmult = w[0] * m["ik1"] + w[1] * m["ik2"]
    r1 = TorusField(lat, r1.coeffs + (wmult + m["absq"]) * cO, True)
    r2 = TorusField(lat, r2.coeffs + wmult * cJ, True)
    return StatePair(zero_mean_project(r1), zero_mean_project(r2))


def linearized_closure(state: StatePair, params: PhysParams, omega):
    L = assemble(state, params, omega)
    return lambda h: apply_linearized(L, h)


def taylor_check(state: StatePair, h: StatePair, eps_list, params: PhysParams,
                 omega, forcing=None, s: float = 5.5) -> dict:
    """Quadratic-remainder check: r(eps) = ||F(I+eps h) - F(I) - eps L h||_s
    should scale like eps^2, i.e. r(eps)/r(eps/2) = 4."""
    L = assemble(state, params, omega)
    F0 = evaluate_F(state, params, omega, forcing)
    Lh = apply_linearized(L, h)
    rem = {}
    for eps in eps_list:
        Fe = evaluate_F(state + eps * h, params, omega, forcing)
        rem[eps] = sobolev_norm(Fe - F0 - eps * Lh, s)
    ratios = []
    for eps in eps_list:
        half = eps / 2.0
        if half in rem:
            ratios.append(rem[eps] / rem[half] if rem[half] > 0 else float("nan"))
    return {"remainders": rem, "halving_ratios": ratios}


# ---------------------------------------------------------------------------
# dense Galerkin oracle
# ---------------------------------------------------------------------------

def ball_modes(lattice: Lattice, N: float) -> list[tuple[int, int]]:
    """Nonzero modes with |k| <= N, in a deterministic (|k|^2, k1, k2) order."""
    n = lattice.n_max
    out = []
    for k1 in range(-n, n + 1):
        for k2 in range(-n, n + 1):
            if 0 < k1 * k1 + k2 * k2 <= N * N:
                out.append((k1, k2))
    out.sort(key=lambda k: (k[0] * k[0] + k[1] * k[1], k[0], k[1]))
    return out


@dataclass
class GalerkinMatrix:
    n_trunc: float
    modes: list[tuple[int, int]]
    entries: np.ndarray
    lattice: Lattice
    condition: float = float("nan")
    _lu: tuple | None = None
    _idx: tuple | None = None

    @property
    def dim(self) -> int:
        return 2 * len(self.modes)

    def index_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if self._idx is None:
            n = self.lattice.n_max
            i = np.array([k[0] + n for k in self.modes])
            j = np.array([k[1] + n for k in self.modes])
            self._idx = (i, j)
        return self._idx


def _mode_basis_field(lattice: Lattice, k) -> TorusField:
    return TorusField.from_modes(lattice, {k: 1.0}, zero_average=True)


def pack_state(state: StatePair, M: "GalerkinMatrix") -> np.ndarray:
    i, j = M.index_arrays()
    return np.concatenate([state.omega_field.coeffs[i, j],
                           state.current_field.coeffs[i, j]])


def unpack_state(M: "GalerkinMatrix", v: np.ndarray) -> StatePair:
    i, j = M.index_arrays()
    m = len(M.modes)
    out = StatePair.zeros(M.lattice)
    out.omega_field.coeffs[i, j] = v[:m]
    out.current_field.coeffs[i, j] = v[m:]
    return out


def galerkin_matrix(apply_op, lattice: Lattice, N: float,
                    cond_threshold: float = 1e12) -> GalerkinMatrix:
    """Column-by-column assembly of Pi_N L Pi_N over the stacked (Omega, J) basis.

    apply_op is any StatePair -> StatePair closure (the linearized operator or a
    pipeline stage). The matrix is LU-factorized once; the condition number is
    a 1-norm LAPACK estimate from the factorization."""
    import scipy.linalg as sla
    from scipy.linalg import lapack

    modes = ball_modes(lattice, N)
    m = len(modes)
    g = GalerkinMatrix(N, modes, np.empty((2 * m, 2 * m), dtype=np.complex128), lattice)
    zero = TorusField.zeros(lattice, True)
    for idx, k in enumerate(modes):
        e = _mode_basis_field(lattice, k)
        g.entries[:, idx] = pack_state(apply_op(StatePair(e, zero)), g)
        g.entries[:, m + idx] = pack_state(apply_op(StatePair(zero, e)), g)
    anorm = float(np.linalg.norm(g.entries, 1))
    lu, piv = sla.lu_factor(g.entries)
    rcond, info = lapack.zgecon(lu, anorm, norm="1")
    g._lu = (lu, piv)
    g.condition = float(1.0 / rcond) if rcond > 0 else float("inf")
    if not np.isfinite(g.condition) or g.condition > cond_threshold:
        raise ResonanceError("Galerkin matrix numerically resonant: cond = %.3e"
                             % g.condition)
    return g


def galerkin_solve(M: GalerkinMatrix, rhs: StatePair) -> StatePair:
    import scipy.linalg as sla

    v = pack_state(rhs, M)
    if M._lu is not None:
        sol = sla.lu_solve(M._lu, v)
    else:
        sol = np.linalg.solve(M.entries, v)
    return unpack_state(M, sol)


def galerkin_matrix_to_bytes(M: GalerkinMatrix) -> bytes:
    """Simple binary container: magic, dims, mode list, row-major complex entries."""
    import struct

    head = b"TKGM" + struct.pack("<II", len(M.modes), M.lattice.n_max)
    kbuf = np.asarray(M.modes, dtype=np.int32).tobytes()
    return head + kbuf + np.ascontiguousarray(M.entries).tobytes()


def base_state_block_inverse(lattice: Lattice, params: PhysParams, omega,
                             rhs: StatePair) -> StatePair:
    """Closed-form inverse at the zero state: per-mode 2x2 solve of
    [[Lambda(k), i b.k'], [i b.k', i lam w.k]] with b.k' = -b.k."""
    n = lattice.n_max
    lam = params.lam
    b = params.b_avg
    out = StatePair.zeros(lattice)
    for k1 in range(-n, n + 1):
        for k2 in range(-n, n + 1):
            if k1 == 0 and k2 == 0:
                continue
            lam_k = heat_eigenvalue((k1, k2), omega, lam)
            tr = 1j * lam * (omega[0] * k1 + omega[1] * k2)
            off = -1j * (b[0] * k1 + b[1] * k2)
            det = lam_k * tr - off * off
            if det == 0:
                raise ResonanceError("singular 2x2 block at k=(%d,%d)" % (k1, k2))
            g1 = rhs.omega_field.coeffs[k1 + n, k2 + n]
            g2 = rhs.current_field.coeffs[k1 + n, k2 + n]
            out.omega_field.coeffs[k1 + n, k2 + n] = (tr * g1 - off * g2) / det
            out.current_field.coeffs[k1 + n, k2 + n] = (-off * g1 + lam_k * g2) / det
    return out
