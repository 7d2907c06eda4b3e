import json
import math

import numpy as np
import pytest

from torus_kam.diophantine import DioParams, heat_eigenvalue
from torus_kam.errors import ConfigError, DivergenceError, ResonanceError
from torus_kam.linearization import apply_linearized, assemble, galerkin_matrix, galerkin_solve
from torus_kam.mhd import PhysParams, default_forcing, evaluate_F
from torus_kam.nash_moser import (
    NMConfig, build_approx_solution, nm_step, nondegeneracy_check,
    nondegeneracy_constant, run_iteration, sample_diophantine_omega,
    superexponential_fit, trace_to_jsonl,
)
from torus_kam.spectral import (
    project_high, sobolev_norm, zero_mean_pair,
)

from conftest import OMEGA, smooth_state

SOLVE_NM = dict(gamma=0.1, smallness_eps=100.0, max_steps=10, k_check=64)


def test_nmconfig_constants():
    cfg = NMConfig()
    assert cfg.chi == 1.5 and cfg.tau == 2.0
    assert cfg.n_smooth == 6 and cfg.m_const == 42
    assert cfg.delta_asymptotic_bound() == pytest.approx(1.0 / 172.0)
    mu_bar = 3 * cfg.sigma_bar + 3
    assert cfg.a_const == max(3 * mu_bar + 1, 2 * (2 * cfg.sigma_bar + cfg.tau + 1))
    assert cfg.b_const == mu_bar + cfg.a_const + 1
    with pytest.raises(ConfigError):
        NMConfig(chi=2.0)
    with pytest.raises(ConfigError):
        NMConfig(b_const=3.0)
    with pytest.raises(ConfigError):
        NMConfig(inverse_backend="lu")


def test_truncation_schedule():
    cfg = NMConfig(n0=4.0)
    assert cfg.truncation(-1) == 1.0
    assert cfg.truncation(0) == 4.0
    assert cfg.truncation(2) == pytest.approx(4.0 ** 2.25)


def test_approx_solution_formula(lat16, phys, forcing16):
    I = build_approx_solution(forcing16, phys, OMEGA)
    amp = phys.lam ** phys.forcing_exponent
    for k in [(1, 0), (2, -1), (1, 1)]:
        want = amp * forcing16.F_curl.get(*k) / heat_eigenvalue(k, OMEGA, phys.lam)
        assert I.omega_field.get(*k) == pytest.approx(want, rel=1e-13)
    assert sobolev_norm(I.current_field, 0.0) == 0.0


def test_approx_solution_resonance_guard(lat16, phys, forcing16):
    with pytest.raises(ResonanceError):
        build_approx_solution(forcing16, phys, (1.0, 1.0),
                              DioParams(gamma=0.1, tau=2.0, k_check=10))


# frozen across lam in {1e2..1e5}: ||Omega_app||_{s0} lam^{2 delta/3} in [lo, hi]
APPROX_SCALED_LO = 15.0
APPROX_SCALED_HI = 40.0


def test_approx_solution_two_sided_bounds(lat16):
    for lam in (100.0, 1000.0, 10000.0, 100000.0):
        p = PhysParams(lam=lam, eta=0.02)
        spec = default_forcing(p, lat16)
        I = build_approx_solution(spec, p, OMEGA)
        scaled = sobolev_norm(I.omega_field, 5.5) * lam ** (2.0 * p.delta / 3.0)
        assert APPROX_SCALED_LO <= scaled <= APPROX_SCALED_HI


def test_one_step_reduces_residual(lat16, phys, forcing16):
    cfg = NMConfig(**SOLVE_NM)
    I0 = build_approx_solution(forcing16, phys, OMEGA)
    r0 = sobolev_norm(evaluate_F(I0, phys, OMEGA, forcing16), cfg.s0)
    I1, rec = nm_step(I0, 0, cfg, phys, OMEGA, forcing16)
    assert rec.residual_s0 <= r0 / 10.0


def test_step_support_property(lat16, phys, forcing16):
    cfg = NMConfig(**SOLVE_NM)
    I0 = build_approx_solution(forcing16, phys, OMEGA)
    I1, rec = nm_step(I0, 0, cfg, phys, OMEGA, forcing16)
    diff = I1 - I0
    N0 = cfg.truncation(0)
    assert sobolev_norm(project_high(diff.omega_field, N0), 0.0) == 0.0
    assert sobolev_norm(project_high(diff.current_field, N0), 0.0) == 0.0


def test_galerkin_solve_is_exact_on_linear_problem(lat16, phys):
    # a Newton step with the dense inverse is exact when the map is linear:
    # the full-lattice solve leaves no residual beyond roundoff
    rng = np.random.default_rng(0)
    state = smooth_state(lat16, rng, 0.3, 4)
    L = assemble(state, phys, OMEGA)
    G = galerkin_matrix(lambda x: apply_linearized(L, x), lat16,
                        math.hypot(16, 16) + 1.0)
    rhs = zero_mean_pair(smooth_state(lat16, rng, 0.5, 6))
    h = galerkin_solve(G, rhs)
    res = apply_linearized(L, h) - rhs
    assert sobolev_norm(res, 0.0) <= 1e-12 * sobolev_norm(rhs, 0.0)


def test_gamma_schedule(lat16, phys, forcing16):
    cfg = NMConfig(**SOLVE_NM)
    omega = sample_diophantine_omega(DioParams(gamma=0.2, tau=2.0, k_check=64), 7)
    final, trace = run_iteration(forcing16, phys, omega, cfg)
    gammas = [rec.gamma_n for rec in trace]
    assert all(cfg.gamma <= g <= 2.0 * cfg.gamma for g in gammas)
    assert all(g2 < g1 for g1, g2 in zip(gammas, gammas[1:]))
    # residual monotone along the successful trace
    res = [rec.residual_s0 for rec in trace]
    assert all(r2 < r1 for r1, r2 in zip(res, res[1:]))
    assert res[-1] <= cfg.target_residual
    fit = superexponential_fit(trace)
    assert fit["slope"] < 0.0 and fit["monotone_decreasing"]


def test_smallness_gate(lat16, phys, forcing16):
    from torus_kam.errors import SmallnessError
    cfg = NMConfig(gamma=0.1, smallness_eps=0.5)
    with pytest.raises(SmallnessError):
        run_iteration(forcing16, phys, OMEGA, cfg)


def test_melnikov_abort_reports_k(lat16, phys, forcing16):
    cfg = NMConfig(gamma=0.4, smallness_eps=100.0, k_check=32)
    # omega = (1, 1) resonates along the k1 = -k2 line: the run halts and
    # reports a mode on that line
    with pytest.raises(ResonanceError) as exc:
        nm_step(build_approx_solution(forcing16, phys, OMEGA), 0, cfg, phys,
                (1.0, 1.0), forcing16)
    msg = str(exc.value)
    inside = msg.split("k=(")[1].split(")")[0]
    k1, k2 = (int(t) for t in inside.split(","))
    assert k1 == -k2 and k1 != 0


def test_divergence_error(lat8):
    # a forcing far above the perturbative regime throws Newton out of its
    # basin; the run must abort with the trace attached
    from torus_kam.mhd import build_forcing
    p = PhysParams(lam=10.0, eta=0.02)
    modes = {(1, 0): (0.0, 300.0), (-1, 0): (0.0, 300.0),
             (0, 1): (200.0, 0.0), (0, -1): (200.0, 0.0),
             (1, 1): (0.0, -150.0j), (-1, -1): (0.0, 150.0j)}
    spec = build_forcing(modes, p, lat8)
    omega = sample_diophantine_omega(DioParams(gamma=0.2, tau=2.0, k_check=32), 7)
    cfg = NMConfig(gamma=0.1, smallness_eps=1e9, max_steps=12,
                   target_residual=1e-10, k_check=32)
    with pytest.raises(DivergenceError) as exc:
        run_iteration(spec, p, omega, cfg)
    assert exc.value.trace


def test_trace_jsonl_deterministic(lat16, phys, forcing16):
    cfg = NMConfig(**SOLVE_NM)
    omega = sample_diophantine_omega(DioParams(gamma=0.2, tau=2.0, k_check=64), 7)
    _, t1 = run_iteration(forcing16, phys, omega, cfg)
    _, t2 = run_iteration(forcing16, phys, omega, cfg)
    assert trace_to_jsonl(t1) == trace_to_jsonl(t2)
    rec = json.loads(trace_to_jsonl(t1).splitlines()[0])
    assert rec["wallclock"] is None  # timings never enter the trace bytes


def test_nondegeneracy_report(lat16, phys, forcing16):
    cfg = NMConfig(**SOLVE_NM)
    omega = sample_diophantine_omega(DioParams(gamma=0.2, tau=2.0, k_check=64), 7)
    final, _ = run_iteration(forcing16, phys, omega, cfg)
    nd = nondegeneracy_check(final, forcing16, phys)
    assert nd["J_nonzero"]
    assert nd["b_grad_Omega_L2_scaled"] >= nd["K_threshold_half"]
    consts = nondegeneracy_constant(forcing16, phys.b_avg)
    assert consts["K"] > 0 and consts["b_dot_kbar"] > 0


def test_backends_agree_on_one_step(lat16, phys, forcing16):
    # the analysis-chain inverse and the dense solve produce the same Newton
    # step where both succeed
    from torus_kam.reduction import PipelineConfig
    omega = sample_diophantine_omega(DioParams(gamma=0.2, tau=2.0, k_check=64), 7)
    I0 = build_approx_solution(forcing16, phys, omega)
    base = dict(gamma=0.1, smallness_eps=100.0, k_check=64)
    cfg_g = NMConfig(inverse_backend="galerkin", **base)
    cfg_p = NMConfig(inverse_backend="reduction", **base,
                     pipeline=PipelineConfig(
                         dio=DioParams(gamma=0.05, tau=2.0, k_check=64)))
    I_g, rec_g = nm_step(I0, 0, cfg_g, phys, omega, forcing16)
    I_p, rec_p = nm_step(I0, 0, cfg_p, phys, omega, forcing16)
    diff = sobolev_norm(I_g - I_p, 0.0) / sobolev_norm(I_g, 0.0)
    assert diff <= 1e-6
    assert rec_p.residual_s0 <= 10.0 * max(rec_g.residual_s0, 1e-12)
