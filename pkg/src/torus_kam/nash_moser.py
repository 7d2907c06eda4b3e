"""Approximate solution and the Nash-Moser iteration with frequency truncations
N_n = N0^{chi^n}, chi = 3/2, including the convergence monitors and the
nondegeneracy checks that guarantee nontrivial vorticity and current.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass

import numpy as np

from .diophantine import DioParams, invert_L_lambda, is_diophantine, melnikov_margin
from .errors import ConfigError, DivergenceError, ResonanceError, SmallnessError
from .linearization import assemble, galerkin_matrix, galerkin_solve, linearized_closure
from .mhd import ForcingSpec, PhysParams, evaluate_F
from .reduction import ReductionInverse, PipelineConfig
from .spectral import (
    StatePair, TorusField, directional, project_low, sobolev_norm,
    zero_mean_pair,
)

CHI = 1.5
TAU = 2.0
N_SMOOTH = 6            # 2 tau + 2
M_CONST = 42            # 6 (N_SMOOTH + 1)


@dataclass
class NMConfig:
    n0: float = 4.0
    chi: float = CHI
    tau: float = TAU
    n_smooth: int = N_SMOOTH
    m_const: int = M_CONST
    a_const: float = 0.0
    b_const: float = 0.0
    s0: float = 5.5
    sigma_bar: float = 8.0
    max_steps: int = 12
    target_residual: float = 1e-10
    gamma: float | None = None        # default lam^{-delta/8}
    smallness_eps: float = 0.99
    k_check: int = 64
    inverse_backend: str = "galerkin"  # or "reduction"
    pipeline: PipelineConfig | None = None

    def __post_init__(self):
        if self.chi != 1.5:
            raise ConfigError("chi is fixed at 3/2")
        if self.tau != 2.0:
            raise ConfigError("tau is fixed at 2")
        if self.n_smooth != 2 * int(self.tau) + 2:
            raise ConfigError("n_smooth must equal 2 tau + 2")
        if self.m_const != 6 * (self.n_smooth + 1):
            raise ConfigError("m_const must equal 6 (n_smooth + 1)")
        mu_bar = 3.0 * self.sigma_bar + 3.0
        a_req = max(3.0 * mu_bar + 1.0, 2.0 * (2.0 * self.sigma_bar + self.tau + 1.0))
        if self.a_const == 0.0:
            self.a_const = a_req
        if self.b_const == 0.0:
            self.b_const = mu_bar + self.a_const + 1.0
        if abs(self.b_const - (mu_bar + self.a_const + 1.0)) > 1e-9:
            raise ConfigError("b_const must equal mu_bar + a_const + 1")
        if self.inverse_backend not in ("galerkin", "reduction"):
            raise ConfigError("inverse_backend must be galerkin or reduction")

    @property
    def mu_bar(self) -> float:
        return 3.0 * self.sigma_bar + 3.0

    def delta_asymptotic_bound(self) -> float:
        return 1.0 / ((self.m_const + 1) * (self.tau + 2))

    def resolved_gamma(self, params: PhysParams) -> float:
        if self.gamma is not None:
            return self.gamma
        return params.lam ** (-params.delta / 8.0)

    def truncation(self, n: int) -> float:
        """N_n = N0^{chi^n}; N_{-1} = 1."""
        if n < 0:
            return 1.0
        return self.n0 ** (self.chi ** n)


@dataclass
class IterationRecord:
    step: int
    n_trunc: float
    gamma_n: float
    residual_s0: float
    residual_high: float
    step_norm: float
    melnikov_pass: bool
    wallclock: float = 0.0

    def to_json_obj(self) -> dict:
        def safe(x):
            return x if math.isfinite(x) else None
        return {
            "step": self.step,
            "n_trunc": self.n_trunc,
            "gamma_n": self.gamma_n,
            "residual_s0": safe(self.residual_s0),
            "residual_high": safe(self.residual_high),
            "residual_high_log10": safe(math.log10(self.residual_high))
            if self.residual_high > 0 else None,
            "step_norm": safe(self.step_norm),
            "melnikov_pass": self.melnikov_pass,
            # wallclock is emitted as null so traces are byte-reproducible
            "wallclock": None,
        }


def build_approx_solution(forcing: ForcingSpec, params: PhysParams, omega,
                          dio: DioParams | None = None) -> StatePair:
    """Omega_app = lam^{1 - 2 delta/3} L_lam^{-1} F, J_app = 0."""
    if dio is not None:
        ok, m = is_diophantine(omega, dio)
        if not ok:
            raise ResonanceError("omega fails the diophantine check (min divisor %.3e)" % m)
    amp = params.lam ** params.forcing_exponent
    om = invert_L_lambda(amp * forcing.F_curl, omega, params.lam)
    return StatePair(om, TorusField.zeros(forcing.lattice, True))


def sample_diophantine_omega(p: DioParams, seed: int, region=((1.0, 2.0), (1.0, 2.0)),
                             max_tries: int = 10_000) -> tuple[float, float]:
    """Rejection-sample omega from the box until is_diophantine passes."""
    rng = np.random.default_rng(seed)
    (a1, b1), (a2, b2) = region
    for _ in range(max_tries):
        w = (a1 + (b1 - a1) * rng.random(), a2 + (b2 - a2) * rng.random())
        ok, _m = is_diophantine(w, p)
        if ok:
            return (float(w[0]), float(w[1]))
    raise ResonanceError("no diophantine omega found in %d draws at gamma=%g"
                         % (max_tries, p.gamma))


def _truncate_pair(h: StatePair, N: float) -> StatePair:
    return StatePair(project_low(h.omega_field, N), project_low(h.current_field, N))


def nm_step(I_n: StatePair, n: int, cfg: NMConfig, params: PhysParams, omega,
            forcing: ForcingSpec, z_table=None) -> tuple[StatePair, IterationRecord]:
    """One Newton step with smoothing: h = -Pi_n L_n^{-1} Pi_n F(I_n)."""
    t0 = time.perf_counter()
    lam = params.lam
    gamma = cfg.resolved_gamma(params)
    gamma_n = gamma * (1.0 + 2.0 ** (-n))
    if gamma_n >= 1.0:
        gamma_n_check = None    # outside DioParams validity; recorded below
    else:
        gamma_n_check = DioParams(gamma=gamma_n, tau=cfg.tau, k_check=cfg.k_check)

    mel_pass = True
    if gamma_n_check is not None:
        margin, kworst = melnikov_margin(omega, lam, gamma_n_check, z_table)
        mel_pass = margin >= 1.0
        if not mel_pass:
            raise ResonanceError("Melnikov membership fails at step %d, k=%s "
                                 "(margin %.3e)" % (n, kworst, margin))

    N_cap = math.hypot(I_n.lattice.n_max, I_n.lattice.n_max) + 1.0
    N_n = min(cfg.truncation(n), N_cap)
    Fn = evaluate_F(I_n, params, omega, forcing)
    rhs = _truncate_pair(Fn, N_n)

    if cfg.inverse_backend == "galerkin":
        lin = linearized_closure(I_n, params, omega)
        G = galerkin_matrix(lin, I_n.lattice, N_n)
        h = galerkin_solve(G, rhs)
    else:
        import dataclasses

        L = assemble(I_n, params, omega)
        pcfg = cfg.pipeline or PipelineConfig()
        if pcfg.dio is None:
            pcfg = dataclasses.replace(
                pcfg, dio=DioParams(gamma=min(gamma_n, 0.999), tau=cfg.tau,
                                    k_check=cfg.k_check))
        pipe = ReductionInverse(L, pcfg)
        h, _rep = pipe.invert(rhs)
    h = _truncate_pair(h, N_n) * (-1.0)
    I_next = zero_mean_pair(I_n + h)

    F_next = evaluate_F(I_next, params, omega, forcing)
    rec = IterationRecord(
        step=n + 1,
        n_trunc=N_n,
        gamma_n=gamma_n,
        residual_s0=sobolev_norm(F_next, cfg.s0),
        residual_high=sobolev_norm(F_next, cfg.s0 + cfg.b_const),
        step_norm=sobolev_norm(h, cfg.s0 + cfg.sigma_bar),
        melnikov_pass=mel_pass,
        wallclock=time.perf_counter() - t0,
    )
    return I_next, rec


def run_iteration(forcing: ForcingSpec, params: PhysParams, omega,
                  cfg: NMConfig) -> tuple[StatePair, list[IterationRecord]]:
    """Iterate until residual_s0 <= target or max_steps; abort on divergence
    (residual increasing on two consecutive steps)."""
    gamma = cfg.resolved_gamma(params)
    smallness = params.lam ** (-params.delta / 3.0) / gamma ** 2
    if smallness > cfg.smallness_eps:
        raise SmallnessError("smallness lam^{-delta/3} gamma^{-2} = %.3f exceeds "
                             "eps = %.3f" % (smallness, cfg.smallness_eps))
    I = build_approx_solution(forcing, params, omega)
    trace: list[IterationRecord] = []
    res_prev = sobolev_norm(evaluate_F(I, params, omega, forcing), cfg.s0)
    increases = 0
    for n in range(cfg.max_steps):
        I, rec = nm_step(I, n, cfg, params, omega, forcing)
        trace.append(rec)
        if rec.residual_s0 <= cfg.target_residual:
            break
        if rec.residual_s0 >= res_prev:
            increases += 1
            if increases >= 2:
                raise DivergenceError("residual increased on consecutive steps "
                                      "(%.3e -> %.3e)" % (res_prev, rec.residual_s0),
                                      trace=trace)
        else:
            increases = 0
        res_prev = rec.residual_s0
    return I, trace


def trace_to_jsonl(trace) -> str:
    return "\n".join(json.dumps(rec.to_json_obj(), sort_keys=True) for rec in trace) + "\n"


def superexponential_fit(trace, chi: float = CHI, n0: float = 4.0,
                         a_const: float = 0.0) -> dict:
    """Fit log10(residual) against chi^n; the envelope of the quadratic scheme
    should be affine decreasing.

    Also records the per-step implied envelope constants log10(C*_n) =
    log10(residual_n) + a log10(N_{n-1}): the theoretical envelope needs these
    non-increasing, which holds only asymptotically, so they are reported, not
    asserted."""
    xs, ys, cstar = [], [], []
    for rec in trace:
        if rec.residual_s0 > 0 and math.isfinite(rec.residual_s0):
            xs.append(chi ** rec.step)
            ys.append(math.log10(rec.residual_s0))
            if a_const > 0:
                n_prev = max(n0 ** (chi ** (rec.step - 1)), 1.0)
                cstar.append(math.log10(rec.residual_s0)
                             + a_const * math.log10(n_prev))
    if len(xs) < 2:
        return {"slope": float("nan"), "points": list(zip(xs, ys)),
                "envelope_log10_cstar": cstar}
    slope, intercept = np.polyfit(xs, ys, 1)
    monotone = all(y2 < y1 for y1, y2 in zip(ys, ys[1:]))
    return {"slope": float(slope), "intercept": float(intercept),
            "monotone_decreasing": monotone, "points": list(zip(xs, ys)),
            "envelope_log10_cstar": cstar}


def nondegeneracy_constant(forcing: ForcingSpec, b_avg,
                           omega_sup: float = 2.0 * math.sqrt(2.0)) -> dict:
    """Computable lower-bound constant for ||b.grad Omega_app||_{L^2} lam^{2 delta/3}.

    The single witness mode contributes |b.kbar| |F_hat(kbar)| / |Lambda(kbar)/lam|
    and |Lambda(kbar)| <= (|omega| |kbar| + |kbar|^2/lam) lam <= 3 sqrt(2) |kbar| lam
    for lam >= |kbar|^2 and omega in the unit-offset box."""
    kb = forcing.kbar
    F_amp = abs(forcing.F_curl.get(*kb))
    bk = abs(b_avg[0] * kb[0] + b_avg[1] * kb[1])
    kn = math.hypot(*kb)
    K = bk * F_amp / ((omega_sup + 1.0) * kn)
    squared_form = bk ** 2 * F_amp ** 2 / kn ** 2
    return {"K": K, "squared_form": squared_form, "kbar": list(kb),
            "F_hat_kbar": F_amp, "b_dot_kbar": bk}


def nondegeneracy_check(final: StatePair, forcing: ForcingSpec,
                        params: PhysParams, s_report: float = 9.0) -> dict:
    """Report the lower-bound quantities of the nondegeneracy argument."""
    lam = params.lam
    scale = lam ** (2.0 * params.delta / 3.0)
    bgrad = directional(params.b_avg, final.omega_field)
    consts = nondegeneracy_constant(forcing, params.b_avg)
    return {
        "norm_Omega_S": sobolev_norm(final.omega_field, s_report),
        "norm_Omega_S_scaled": sobolev_norm(final.omega_field, s_report) * scale,
        "norm_J_S": sobolev_norm(final.current_field, s_report),
        "norm_J_S_scaled": sobolev_norm(final.current_field, s_report)
        * lam ** (2.0 * params.delta),
        "b_grad_Omega_L2": sobolev_norm(bgrad, 0.0),
        "b_grad_Omega_L2_scaled": sobolev_norm(bgrad, 0.0) * scale,
        "K_threshold_half": consts["K"] / 2.0,
        "K": consts["K"],
        "J_nonzero": sobolev_norm(final.current_field, 0.0) > 0.0,
        "s": s_report,
    }
