"""Diophantine frequencies, the diagonal heat-transport operator and its inverse,
Melnikov membership, and Monte Carlo measure estimation over frequency boxes.

Membership checks are finite-k certificates: the condition |omega.k| >= gamma/|k|^tau
is verified exhaustively for 0 < |k| <= k_check and is only claimed at that
truncation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonZeroMeanError, ResonanceError
from .spectral import Lattice, TorusField, _mult

_DEFAULT_TAU = 2.0


@dataclass(frozen=True)
class DioParams:
    gamma: float
    tau: float = _DEFAULT_TAU
    k_check: int = 200

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0,1)")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


@dataclass
class FrequencyWitness:
    omega: tuple[float, float]
    dio_ok: bool
    melnikov_ok: bool
    min_divisor: float

    def to_record(self, p: DioParams) -> dict:
        return {
            "omega": list(self.omega),
            "gamma": p.gamma,
            "tau": p.tau,
            "k_check": p.k_check,
            "min_divisor": self.min_divisor,
            "ok": self.dio_ok,
        }


def _k_lattice(k_check: int) -> np.ndarray:
    """All k with 0 < |k| <= k_check, as an (m, 2) int array."""
    r = np.arange(-k_check, k_check + 1)
    K1, K2 = np.meshgrid(r, r, indexing="ij")
    K = np.stack([K1.ravel(), K2.ravel()], axis=1)
    normsq = (K ** 2).sum(axis=1)
    keep = (normsq > 0) & (normsq <= k_check * k_check)
    return K[keep]


_k_cache: dict[int, np.ndarray] = {}


def _k_points(k_check: int) -> np.ndarray:
    if k_check not in _k_cache:
        _k_cache[k_check] = _k_lattice(k_check)
    return _k_cache[k_check]


def is_diophantine(omega, p: DioParams) -> tuple[bool, float]:
    """Exhaustive check of |omega.k| |k|^tau / gamma >= 1 over 0 < |k| <= k_check.

    Returns (ok, attained minimum of the normalized divisor).
    """
    w = np.asarray(omega, dtype=float)
    if not np.any(w):
        raise ValueError("omega must be nonzero")
    K = _k_points(p.k_check)
    dots = K @ w
    norm = np.sqrt((K ** 2).sum(axis=1))
    ratios = np.abs(dots) * norm ** p.tau / p.gamma
    m = float(ratios.min())
    return m >= 1.0, m


def witness(omega, p: DioParams) -> FrequencyWitness:
    ok, m = is_diophantine(omega, p)
    return FrequencyWitness(tuple(float(x) for x in omega), ok, ok, m)


def invert_directional(omega, lam: float, u: TorusField,
                       divisor_floor: float = 1e-300) -> TorusField:
    """Solve (lam omega . grad) v = u for zero-average u; diagonal division."""
    scale = max(1.0, float(np.abs(u.coeffs).max()))
    if abs(u.mean()) > 1e-13 * scale:
        raise NonZeroMeanError("invert_directional requires zero-average input")
    lat = u.lattice
    m = _mult(lat)
    denom = lam * (omega[0] * m["ik1"] + omega[1] * m["ik2"])
    n = lat.n_max
    mask = np.ones_like(denom.imag, dtype=bool)
    mask[n, n] = False
    small = mask & (np.abs(denom) <= divisor_floor) & (np.abs(u.coeffs) > 0)
    if small.any():
        i, j = np.argwhere(small)[0]
        raise ResonanceError("zero divisor at k = (%d, %d)" % (i - n, j - n))
    out = np.zeros_like(u.coeffs)
    np.divide(u.coeffs, denom, out=out, where=mask)
    out[n, n] = 0.0
    return TorusField(lat, out, True)


def heat_eigenvalue(k, omega, lam: float) -> complex:
    """Lambda(k) = i lam omega.k + |k|^2, the heat-transport diagonal."""
    k1, k2 = k
    return 1j * lam * (omega[0] * k1 + omega[1] * k2) + float(k1 * k1 + k2 * k2)


def heat_multiplier(lat: Lattice, omega, lam: float) -> np.ndarray:
    m = _mult(lat)
    return lam * (omega[0] * m["ik1"] + omega[1] * m["ik2"]) + m["absq"]


def apply_L_lambda(u: TorusField, omega, lam: float) -> TorusField:
    return TorusField(u.lattice, heat_multiplier(u.lattice, omega, lam) * u.coeffs, True)


def invert_L_lambda(u: TorusField, omega, lam: float) -> TorusField:
    """Exact inverse of lam omega.grad - Delta on zero-average fields.

    |Lambda(k)| >= |k|^2 > 0 for k != 0, so the division is always defined;
    this is asserted rather than assumed.
    """
    scale = max(1.0, float(np.abs(u.coeffs).max()))
    if abs(u.mean()) > 1e-13 * scale:
        raise NonZeroMeanError("invert_L_lambda requires zero-average input")
    lat = u.lattice
    n = lat.n_max
    mult = heat_multiplier(lat, omega, lam)
    mask = np.ones(mult.shape, dtype=bool)
    mask[n, n] = False
    absq = _mult(lat)["absq"]
    assert np.all(np.abs(mult[mask]) >= absq[mask]), "heat eigenvalue below |k|^2"
    out = np.zeros_like(u.coeffs)
    np.divide(u.coeffs, mult, out=out, where=mask)
    return TorusField(lat, out, True)


def l_lambda_gain_sup(lat_or_kcheck, omega, lam: float) -> float:
    """sup_k <k>/|Lambda(k)| over the lattice (gain-of-one-derivative bound)."""
    if isinstance(lat_or_kcheck, Lattice):
        K = _k_points(lat_or_kcheck.n_max)
    else:
        K = _k_points(int(lat_or_kcheck))
    dots = lam * (K @ np.asarray(omega, dtype=float))
    normsq = (K ** 2).sum(axis=1).astype(float)
    lam_abs = np.hypot(dots, normsq)
    jap = np.sqrt(1.0 + normsq)
    return float((jap / lam_abs).max())


def l_lambda_loss_sup(k_check: int, omega, lam: float, tau: float) -> float:
    """sup_k |k|^{-tau}/|Lambda(k)| (loss-of-derivatives bound)."""
    K = _k_points(k_check)
    dots = lam * (K @ np.asarray(omega, dtype=float))
    normsq = (K ** 2).sum(axis=1).astype(float)
    lam_abs = np.hypot(dots, normsq)
    return float((normsq ** (-tau / 2.0) / lam_abs).max())


def melnikov_ok(omega, lam: float, p: DioParams, z_table=None) -> bool:
    """Check |i lam omega.k + z(k)| >= lam gamma / |k|^tau over 0 < |k| <= k_check.

    z_table maps k tuples to complex corrections; missing entries count as 0.
    """
    K = _k_points(p.k_check)
    w = np.asarray(omega, dtype=float)
    dots = lam * (K @ w)
    z = np.zeros(len(K), dtype=np.complex128)
    if z_table:
        for idx, (k1, k2) in enumerate(map(tuple, K)):
            zv = z_table.get((k1, k2))
            if zv is not None:
                z[idx] = zv
    norm = np.sqrt((K ** 2).sum(axis=1))
    lhs = np.abs(1j * dots + z)
    rhs = lam * p.gamma / norm ** p.tau
    return bool(np.all(lhs >= rhs))


def melnikov_margin(omega, lam: float, p: DioParams, z_table=None) -> tuple[float, tuple]:
    """Worst ratio lhs/rhs of the Melnikov inequality and the k attaining it."""
    K = _k_points(p.k_check)
    w = np.asarray(omega, dtype=float)
    dots = lam * (K @ w)
    z = np.zeros(len(K), dtype=np.complex128)
    if z_table:
        for idx, (k1, k2) in enumerate(map(tuple, K)):
            zv = z_table.get((k1, k2))
            if zv is not None:
                z[idx] = zv
    norm = np.sqrt((K ** 2).sum(axis=1))
    ratio = np.abs(1j * dots + z) * norm ** p.tau / (lam * p.gamma)
    i = int(np.argmin(ratio))
    return float(ratio[i]), (int(K[i, 0]), int(K[i, 1]))


# ---------------------------------------------------------------------------
# Monte Carlo measure estimation
# ---------------------------------------------------------------------------

def measure_estimate(predicate, region, n_samples: int, seed: int,
                     chunk: int = 50_000) -> tuple[float, float]:
    """Lebesgue measure of the predicate's FAILURE set inside an axis-aligned box.

    predicate takes an (m, 2) array of omega samples and returns a boolean
    array (True = pass). Returns (estimate, 95% binomial CI half-width).
    Deterministic given the seed.
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be >= 1000")
    (a1, b1), (a2, b2) = region
    area = (b1 - a1) * (b2 - a2)
    rng = np.random.default_rng(seed)
    fails = 0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        pts = rng.random((m, 2))
        pts[:, 0] = a1 + (b1 - a1) * pts[:, 0]
        pts[:, 1] = a2 + (b2 - a2) * pts[:, 1]
        ok = np.asarray(predicate(pts), dtype=bool)
        fails += int(m - ok.sum())
        done += m
    p = fails / n_samples
    ci = 1.959963984540054 * np.sqrt(max(p * (1.0 - p), 0.0) / n_samples)
    return area * p, area * float(ci)


def dc_predicate(p: DioParams):
    """Vectorized membership test for DC(gamma, tau) at truncation k_check."""
    K = _k_points(p.k_check).astype(float)
    order = np.argsort((K ** 2).sum(axis=1))
    K = K[order]
    norm_tau = ((K ** 2).sum(axis=1)) ** (p.tau / 2.0)

    def pred(samples: np.ndarray) -> np.ndarray:
        alive = np.ones(len(samples), dtype=bool)
        # visit shells small-|k| first; most failures happen early
        step = 64
        for lo in range(0, len(K), step):
            live = np.flatnonzero(alive)
            if live.size == 0:
                break
            Kc = K[lo:lo + step]
            thr = p.gamma / norm_tau[lo:lo + step]
            dots = samples[live] @ Kc.T
            np.abs(dots, out=dots)
            good = np.all(dots >= thr[None, :], axis=1)
            alive[live[~good]] = False
        return alive

    return pred


def strip_predicate(k, p: DioParams, lam: float = 1.0, z: complex = 0.0):
    """Membership test for the single-k Melnikov condition
    |i lam omega.k + z| >= lam gamma / |k|^tau."""
    kv = np.asarray(k, dtype=float)
    thr = lam * p.gamma / float(np.hypot(*kv)) ** p.tau

    def pred(samples: np.ndarray) -> np.ndarray:
        return np.abs(1j * lam * (samples @ kv) + z) >= thr

    return pred
