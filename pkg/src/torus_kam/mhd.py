"""The vorticity-current system: forcing construction, the rescaled nonlinear
map, the bilinear magnetic stretching term, pressure recovery, and
reconstruction of the physical fields with their large-speed scalings.

With U, B the divergence-free fields recovered from (Omega, J) by the
Biot-Savart operator, the residual map is

    r1 = lam w.grad Omega - Delta Omega - b.grad J
         + lam^delta [U.grad Omega - B.grad J] - lam^{1 - 2 delta/3} F
    r2 = lam w.grad J - b.grad Omega
         + lam^delta [U.grad J - B.grad Omega - 2 H(U, B)]

where F = curl f and H(U,B) = d1 B . grad U2 - d2 B . grad U1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import AssumptionError, ConfigError, NonZeroMeanError
from .spectral import (
    Lattice, StatePair, TorusField, VectorField2,
    advect, biot_savart, curl, directional, div, dx1, dx2, inv_laplacian,
    laplacian, sobolev_norm, zero_mean_project,
)

DEFAULT_B_AVG = (1.0, math.sqrt(2.0) - 1.0)


@dataclass(frozen=True)
class PhysParams:
    lam: float
    eta: float
    b_avg: tuple[float, float] = DEFAULT_B_AVG
    # soft asymptotic-regime bound checked against the Nash-Moser constants
    delta_cap: float = 1.0 / 12.0

    def __post_init__(self):
        if self.lam <= 1.0:
            raise ConfigError("lam must exceed 1")
        if not (0.0 < self.eta < 1.0 / 3.0):
            raise ConfigError("eta must lie in (0, 1/3)")
        if self.b_avg == (0.0, 0.0):
            raise ConfigError("b_avg must be nonzero")
        if self.delta >= self.delta_cap:
            raise ConfigError("delta = 3*eta = %g exceeds the hard cap %g"
                              % (self.delta, self.delta_cap))

    @property
    def delta(self) -> float:
        return 3.0 * self.eta

    def asymptotic_regime(self, m_const: int = 42, tau: float = 2.0) -> bool:
        """Whether delta < 1/((M+1)(tau+2)); recorded, not enforced at desk scale."""
        return self.delta < 1.0 / ((m_const + 1) * (tau + 2))

    @property
    def forcing_exponent(self) -> float:
        """Exponent of the rescaled forcing amplitude lam^{1 - 2 delta / 3}."""
        return 1.0 - 2.0 * self.delta / 3.0

    @property
    def original_forcing_exponent(self) -> float:
        """Exponent 1 + eta of the unrescaled forcing amplitude."""
        return 1.0 + self.eta


@dataclass
class ForcingSpec:
    f: VectorField2
    F_curl: TorusField
    kbar: tuple[int, int]

    @property
    def lattice(self) -> Lattice:
        return self.f.lattice


def build_forcing(mode_list: dict, params: PhysParams, lattice: Lattice) -> ForcingSpec:
    """Assemble f from {(k1,k2): (c1, c2)} complex component pairs.

    Requires zero average, reality pairs, and a witness mode kbar with
    b.kbar != 0 and F_hat(kbar) != 0.
    """
    comp1, comp2 = {}, {}
    for k, pair in mode_list.items():
        k = (int(k[0]), int(k[1]))
        if k == (0, 0):
            raise NonZeroMeanError("forcing may not carry a k=0 mode")
        c1, c2 = complex(pair[0]), complex(pair[1])
        comp1[k] = comp1.get(k, 0.0) + c1
        comp2[k] = comp2.get(k, 0.0) + c2
    f1 = TorusField.from_modes(lattice, comp1, zero_average=True)
    f2 = TorusField.from_modes(lattice, comp2, zero_average=True)
    for g in (f1, f2):
        if g.reality_defect() > 1e-13 * max(1.0, float(np.abs(g.coeffs).max())):
            raise ConfigError("forcing mode list lacks reality pairs")
    f = VectorField2(f1, f2)
    F = curl(f)
    kbar = _find_witness(F, params.b_avg)
    return ForcingSpec(f, F, kbar)


def _find_witness(F: TorusField, b_avg) -> tuple[int, int]:
    n = F.lattice.n_max
    scale = float(np.abs(F.coeffs).max())
    if scale == 0.0:
        raise AssumptionError("curl of forcing vanishes identically")
    best = None
    best_val = 0.0
    for i in range(F.lattice.size):
        for j in range(F.lattice.size):
            k1, k2 = i - n, j - n
            amp = abs(F.coeffs[i, j])
            if amp <= 1e-12 * scale:
                continue
            bk = b_avg[0] * k1 + b_avg[1] * k2
            val = abs(bk) * amp
            better = val > best_val * (1.0 + 1e-12)
            tie = best is not None and abs(val - best_val) <= 1e-12 * best_val
            if better or (tie and (k1, k2) > best):
                best_val = val
                best = (k1, k2)
    if best is None or best_val <= 1e-12 * scale:
        raise AssumptionError("no mode kbar with b.kbar != 0 and F_hat(kbar) != 0")
    return best


def default_forcing(params: PhysParams, lattice: Lattice) -> ForcingSpec:
    """Six-monomial real trigonometric forcing with witness kbar = (1, 0)
    and nonzero divergence."""
    modes = {
        # f1 = cos x1 + 0.6 sin(x1+x2) + 0.3 cos(2 x1 - x2)
        (1, 0): (0.5, -0.5j),            # also f2 = sin x1 + ...
        (-1, 0): (0.5, 0.5j),
        (1, 1): (-0.3j, 0.0),
        (-1, -1): (0.3j, 0.0),
        (2, -1): (0.15, 0.0),
        (-2, 1): (0.15, 0.0),
        # f2 += 0.5 cos x2 + 0.25 sin(x1 + 2 x2)
        (0, 1): (0.0, 0.25),
        (0, -1): (0.0, 0.25),
        (1, 2): (0.0, -0.125j),
        (-1, -2): (0.0, 0.125j),
    }
    return build_forcing(modes, params, lattice)


def forcing_to_json_obj(spec: ForcingSpec) -> dict:
    def comp(g: TorusField):
        n = g.lattice.n_max
        out = []
        for i in range(g.lattice.size):
            for j in range(g.lattice.size):
                c = g.coeffs[i, j]
                if c != 0:
                    out.append({"k": [i - n, j - n], "re": c.real, "im": c.imag})
        return out

    return {"n_max": spec.lattice.n_max, "f1": comp(spec.f.c1), "f2": comp(spec.f.c2)}


def forcing_from_json_obj(obj: dict, params: PhysParams,
                          lattice: Lattice | None = None) -> ForcingSpec:
    lat = lattice if lattice is not None else Lattice(int(obj["n_max"]))
    modes: dict = {}
    for name, idx in (("f1", 0), ("f2", 1)):
        for entry in obj.get(name, []):
            if not isinstance(entry, dict) or "k" not in entry:
                raise ConfigError("malformed forcing entry %r" % (entry,))
            k = (int(entry["k"][0]), int(entry["k"][1]))
            pair = list(modes.get(k, (0.0, 0.0)))
            pair[idx] += complex(float(entry.get("re", 0.0)), float(entry.get("im", 0.0)))
            modes[k] = tuple(pair)
    return build_forcing(modes, params, lat)


def load_forcing(path, params: PhysParams, lattice: Lattice | None = None) -> ForcingSpec:
    with open(path) as fh:
        return forcing_from_json_obj(json.load(fh), params, lattice)


# ---------------------------------------------------------------------------
# the nonlinear map and its ingredients
# ---------------------------------------------------------------------------

def bilinear_H(U: VectorField2, B: VectorField2) -> TorusField:
    """H(U, B) = d_{x1} B . grad U2 - d_{x2} B . grad U1 (dealiased)."""
    d1B = VectorField2(dx1(B.c1), dx1(B.c2))
    d2B = VectorField2(dx2(B.c1), dx2(B.c2))
    return advect(d1B, U.c2) - advect(d2B, U.c1)


def evaluate_F(state: StatePair, params: PhysParams, omega,
               forcing: ForcingSpec | None = None) -> StatePair:
    """Residual of the rescaled vorticity-current system at the given state."""
    lam, delta, b = params.lam, params.delta, params.b_avg
    Om, J = state.omega_field, state.current_field
    U = biot_savart(Om)
    B = biot_savart(J)
    lam_d = lam ** delta

    r1 = (directional((lam * omega[0], lam * omega[1]), Om)
          - laplacian(Om)
          - directional(b, J)
          + lam_d * (advect(U, Om) - advect(B, J)))
    if forcing is not None:
        r1 = r1 - (lam ** params.forcing_exponent) * forcing.F_curl

    r2 = (directional((lam * omega[0], lam * omega[1]), J)
          - directional(b, Om)
          + lam_d * (advect(U, J) - advect(B, Om) - 2.0 * bilinear_H(U, B)))
    return StatePair(zero_mean_project(r1), zero_mean_project(r2))


def recover_pressure(U: VectorField2, B: VectorField2, f: VectorField2,
                     params: PhysParams) -> TorusField:
    """Zero-average P with Delta P = lam^{1+eta} div f + div[(B.grad)B] - div[(U.grad)U]."""
    rhs = ((params.lam ** params.original_forcing_exponent) * div(f)
           + div(VectorField2(advect(B, B.c1), advect(B, B.c2)))
           - div(VectorField2(advect(U, U.c1), advect(U, U.c2))))
    scale = max(1.0, float(np.abs(rhs.coeffs).max()))
    if abs(rhs.mean()) > 1e-12 * scale:
        raise NonZeroMeanError("pressure right-hand side has nonzero mean %r" % rhs.mean())
    rhs = zero_mean_project(rhs)
    return inv_laplacian(rhs)


def reconstruct_physical(state: StatePair, params: PhysParams,
                         forcing: ForcingSpec, s_report: float = 9.0):
    """Physical fields U = lam^delta UOmega, B = lam^delta UJ, P by pressure
    recovery; returns (U, B, P, norm report)."""
    lam_d = params.lam ** params.delta
    U = lam_d * biot_savart(state.omega_field)
    B = lam_d * biot_savart(state.current_field)
    P = recover_pressure(U, B, forcing.f, params)
    report = {
        "lam": params.lam,
        "eta": params.eta,
        "norm_U": sobolev_norm(U, s_report),
        "norm_B": sobolev_norm(B, s_report),
        "norm_P": sobolev_norm(P, s_report),
        "norm_Omega": sobolev_norm(state.omega_field, s_report),
        "norm_J": sobolev_norm(state.current_field, s_report),
        "div_U": sobolev_norm(div(U), 0.0),
        "div_B": sobolev_norm(div(B), 0.0),
        "s": s_report,
    }
    return U, B, P, report
