"""Experiment orchestration: lambda-scaling studies, omega sweeps, measure
scans, and check suites, each emitting deterministic CSV tables plus a JSON
summary embedding the resolved config and a content hash.

Exit codes: 0 success, 2 validation error, 3 numerical-precondition failure
(resonance / contraction / assumption), 4 divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .diophantine import (
    DioParams, dc_predicate, is_diophantine, measure_estimate, strip_predicate,
    witness,
)
from .errors import (
    AssumptionError, ConfigError, ContractionError, DivergenceError,
    ResonanceError, SmallnessError,
)
from .field_io import save_field_json, save_state
from .linearization import (
    apply_linearized, assemble,
    galerkin_matrix, galerkin_solve, taylor_check,
)
from .mhd import (
    PhysParams, default_forcing, forcing_to_json_obj, load_forcing,
    reconstruct_physical,
)
from .nash_moser import (
    NMConfig, build_approx_solution, nondegeneracy_check, nondegeneracy_constant,
    run_iteration, sample_diophantine_omega, superexponential_fit, trace_to_jsonl,
)
from .reduction import (
    ReductionInverse, PipelineConfig, measured_block_order,
)
from .spectral import (
    Lattice, StatePair, TorusField, directional, sobolev_norm, zero_mean_project,
)

RUN_KINDS = ("approx", "solve", "linearize-check", "reduce-check", "measure", "scaling")

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "run_kind": {"enum": list(RUN_KINDS)},
        "lattice": {
            "type": "object",
            "properties": {
                "n_max": {"type": "integer", "minimum": 1},
                "collocation_size": {"type": "integer", "minimum": 0},
            },
            "required": ["n_max"],
        },
        "phys": {
            "type": "object",
            "properties": {
                "lam": {"type": "number", "exclusiveMinimum": 1},
                "eta": {"type": "number", "exclusiveMinimum": 0},
                "b_avg": {"type": "array", "items": {"type": "number"},
                          "minItems": 2, "maxItems": 2},
            },
            "required": ["eta"],
        },
        "nm": {"type": "object"},
        "dio": {
            "type": "object",
            "properties": {
                "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "k_check": {"type": "integer", "minimum": 1},
            },
        },
        "pipeline": {"type": "object"},
        "forcing_file": {"type": ["string", "null"]},
        "omega": {"type": ["array", "null"], "items": {"type": "number"},
                  "minItems": 2, "maxItems": 2},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "lam_grid": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "gamma_grid": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "n_samples": {"type": "integer", "minimum": 1000},
        "s_report": {"type": "number", "minimum": 0},
        "n_pairs": {"type": "integer", "minimum": 1},
        "strip_k_max": {"type": "integer", "minimum": 1},
        "region": {"type": "array"},
    },
    "required": ["lattice", "phys", "seed"],
    "additionalProperties": True,
}

DEFAULTS = {
    "forcing_file": None,
    "omega": None,
    "s_report": 9.0,
    "n_samples": 100_000,
    "n_pairs": 10,
    "strip_k_max": 10,
    "region": [[1.0, 2.0], [1.0, 2.0]],
    "nm": {},
    "dio": {"gamma": 0.1, "tau": 2.0, "k_check": 64},
    "pipeline": {},
}


def load_config(path) -> dict:
    import jsonschema

    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("config %s: invalid JSON at line %d column %d: %s"
                          % (path, exc.lineno, exc.colno, exc.msg))
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError("config %s: at %s: %s" % (path, loc, exc.message))
    out = dict(DEFAULTS)
    out.update(cfg)
    return out


def resolved_phys(cfg: dict, lam: float | None = None) -> PhysParams:
    p = cfg["phys"]
    b = tuple(p.get("b_avg", (1.0, math.sqrt(2.0) - 1.0)))
    if lam is None:
        if "lam" not in p:
            raise ConfigError("phys.lam is required when no lam_grid is given")
        lam = p["lam"]
    return PhysParams(lam=float(lam), eta=float(p["eta"]), b_avg=b)


def resolved_lattice(cfg: dict) -> Lattice:
    lt = cfg["lattice"]
    return Lattice(int(lt["n_max"]), int(lt.get("collocation_size", 0)))


def resolved_dio(cfg: dict) -> DioParams:
    d = dict(DEFAULTS["dio"])
    d.update(cfg.get("dio", {}))
    return DioParams(gamma=float(d["gamma"]), tau=float(d["tau"]),
                     k_check=int(d["k_check"]))


def resolved_nm(cfg: dict) -> NMConfig:
    d = cfg.get("nm", {})
    kwargs = {k: d[k] for k in (
        "n0", "s0", "sigma_bar", "max_steps", "target_residual", "gamma",
        "smallness_eps", "k_check", "inverse_backend") if k in d}
    return NMConfig(**kwargs)


def resolved_forcing(cfg: dict, params: PhysParams, lattice: Lattice):
    if cfg.get("forcing_file"):
        return load_forcing(cfg["forcing_file"], params, lattice)
    return default_forcing(params, lattice)


def resolved_omega(cfg: dict, dio: DioParams, seed: int):
    if cfg.get("omega"):
        w = (float(cfg["omega"][0]), float(cfg["omega"][1]))
        ok, m = is_diophantine(w, dio)
        if not ok:
            raise ResonanceError("configured omega fails the diophantine check "
                                 "(min divisor %.3e)" % m)
        return w
    region = tuple(tuple(float(x) for x in r) for r in cfg["region"])
    return sample_diophantine_omega(dio, seed, region)


# ---------------------------------------------------------------------------
# deterministic output helpers
# ---------------------------------------------------------------------------

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_csv(path, header, rows, config_hash: str) -> str:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(header) + ["config_hash"])
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating))
                        else x for x in row] + [config_hash])
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def emit_outputs(out_dir, cfg, results: dict, csv_files: dict) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    cfg_clean = _sanitize(cfg)
    config_hash = hashlib.sha256(canonical_json(cfg_clean).encode()).hexdigest()
    file_hashes = {}
    for name, (header, rows) in csv_files.items():
        file_hashes[name] = write_csv(os.path.join(out_dir, name), header, rows,
                                      config_hash)
    doc = {
        "config": cfg_clean,
        "config_hash": config_hash,
        "results": _sanitize(results),
        "csv_sha256": file_hashes,
    }
    doc["content_hash"] = hashlib.sha256(canonical_json(doc).encode()).hexdigest()
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return doc


def _slope(xs, ys) -> float:
    if len(xs) < 2:
        return float("nan")
    xs = np.log10(np.asarray(xs, dtype=float))
    ys = np.log10(np.asarray(ys, dtype=float))
    return float(np.polyfit(xs, ys, 1)[0])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_approx(cfg: dict, out_dir: str) -> dict:
    lat = resolved_lattice(cfg)
    lam_grid = sorted(cfg.get("lam_grid") or [resolved_phys(cfg).lam])
    if not lam_grid:
        raise ConfigError("lam_grid must be nonempty")
    s0 = resolved_nm(cfg).s0
    # gamma = lam^{-delta/8} per grid point; omega must pass the most
    # stringent (largest) gamma so one frequency serves the whole grid
    eta = float(cfg["phys"]["eta"])
    delta = 3.0 * eta
    gammas = {lam: lam ** (-delta / 8.0) for lam in lam_grid}
    dio_sel = DioParams(gamma=max(gammas.values()), tau=2.0,
                        k_check=resolved_dio(cfg).k_check)
    omega = resolved_omega(cfg, dio_sel, int(cfg["seed"]))
    rows = []
    for lam in lam_grid:
        params = resolved_phys(cfg, lam)
        forcing = resolved_forcing(cfg, params, lat)
        I = build_approx_solution(forcing, params, omega)
        from .mhd import evaluate_F
        F = evaluate_F(I, params, omega, forcing)
        bgrad = directional(params.b_avg, I.omega_field)
        rows.append((lam, gammas[lam], sobolev_norm(I.omega_field, s0),
                     sobolev_norm(F, s0), sobolev_norm(bgrad, 0.0),
                     sobolev_norm(bgrad, 0.0) * lam ** (2.0 * delta / 3.0)))
    consts = nondegeneracy_constant(resolved_forcing(cfg, resolved_phys(cfg, lam_grid[0]), lat),
                                    tuple(cfg["phys"].get("b_avg", (1.0, math.sqrt(2) - 1))))
    results = {
        "omega": list(omega),
        "asymptotic_regime": resolved_phys(cfg, lam_grid[0]).asymptotic_regime(),
        "slope_norm_Omega_app": _slope([r[0] for r in rows], [r[2] for r in rows]),
        "slope_norm_F_app": _slope([r[0] for r in rows], [r[3] for r in rows]),
        "expected_slope_Omega": -2.0 * delta / 3.0,
        "expected_slope_F_upper": -delta / 3.0,
        "b_grad_scaled_min": min(r[5] for r in rows),
        "K": consts["K"],
        "K_half": consts["K"] / 2.0,
        "lower_bound_ok": bool(min(r[5] for r in rows) >= consts["K"] / 2.0),
    }
    csvs = {"approx_scaling.csv": (
        ["lam", "gamma", "norm_Omega_app_s0", "norm_F_app_s0",
         "norm_b_grad_Omega_L2", "norm_b_grad_Omega_L2_scaled"], rows)}
    return emit_outputs(out_dir, cfg, results, csvs)


def cmd_solve(cfg: dict, out_dir: str) -> dict:
    lat = resolved_lattice(cfg)
    params = resolved_phys(cfg)
    nm = resolved_nm(cfg)
    dio = resolved_dio(cfg)
    forcing = resolved_forcing(cfg, params, lat)
    omega = resolved_omega(cfg, dio, int(cfg["seed"]))
    final, trace = run_iteration(forcing, params, omega, nm)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "trace.jsonl"), "w") as fh:
        fh.write(trace_to_jsonl(trace))
    save_state(os.path.join(out_dir, "final_state.bin"), final)
    save_field_json(os.path.join(out_dir, "final_omega.json"), final.omega_field)
    save_field_json(os.path.join(out_dir, "final_current.json"), final.current_field)
    nd = nondegeneracy_check(final, forcing, params, cfg["s_report"])
    fit = superexponential_fit(trace, n0=nm.n0, a_const=nm.a_const)
    rows = [(r.step, r.n_trunc, r.gamma_n, r.residual_s0, r.step_norm)
            for r in trace]
    results = {
        "omega": list(omega),
        "omega_witness": witness(omega, dio).to_record(dio),
        "asymptotic_regime": params.asymptotic_regime(),
        "steps": len(trace),
        "final_residual_s0": trace[-1].residual_s0 if trace else None,
        "superexponential_fit": {k: v for k, v in fit.items() if k != "points"},
        "nondegeneracy": nd,
        "forcing": forcing_to_json_obj(forcing),
    }
    csvs = {"solve_trace.csv": (
        ["step", "n_trunc", "gamma_n", "residual_s0", "step_norm"], rows)}
    return emit_outputs(out_dir, cfg, results, csvs)


def _canonical_states(lat: Lattice, params: PhysParams, omega, forcing, seed: int,
                      n_pairs: int):
    """Deterministic random smooth state/direction pairs for check suites."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_pairs):
        out.append((_smooth_state(lat, rng, 0.3, 4), _smooth_state(lat, rng, 1.0, 5)))
    return out


def _smooth_field(lat: Lattice, rng, amp: float, kmax: int) -> TorusField:
    f = TorusField.zeros(lat, True)
    n = lat.n_max
    kmax = min(kmax, n)
    for k1 in range(-kmax, kmax + 1):
        for k2 in range(-kmax, kmax + 1):
            if (k1, k2) == (0, 0):
                continue
            c = (rng.standard_normal() + 1j * rng.standard_normal()) \
                * amp * math.exp(-1.0 * math.hypot(k1, k2))
            f.coeffs[k1 + n, k2 + n] += c
            f.coeffs[-k1 + n, -k2 + n] += np.conj(c)
    return f


def _smooth_state(lat: Lattice, rng, amp: float, kmax: int) -> StatePair:
    return StatePair(_smooth_field(lat, rng, amp, kmax),
                     _smooth_field(lat, rng, amp, kmax))


def nontrivial_test_state(lat: Lattice, params: PhysParams, omega, forcing,
                          seed: int = 42) -> StatePair:
    """Approximate solution plus a fixed smooth perturbation with J != 0."""
    I = build_approx_solution(forcing, params, omega)
    rng = np.random.default_rng(seed)
    return StatePair(zero_mean_project(I.omega_field + _smooth_field(lat, rng, 0.1, 3)),
                     _smooth_field(lat, rng, 0.08, 3))


def cmd_linearize_check(cfg: dict, out_dir: str) -> dict:
    lat = resolved_lattice(cfg)
    params = resolved_phys(cfg)
    dio = resolved_dio(cfg)
    forcing = resolved_forcing(cfg, params, lat)
    omega = resolved_omega(cfg, dio, int(cfg["seed"]))
    pairs = _canonical_states(lat, params, omega, forcing, int(cfg["seed"]) + 1,
                              int(cfg["n_pairs"]))
    rows = []
    worst = 0.0
    for idx, (state, h) in enumerate(pairs):
        rep = taylor_check(state, h, [1e-2, 5e-3, 2.5e-3], params, omega, forcing)
        for ratio in rep["halving_ratios"]:
            rows.append((idx, ratio, abs(ratio - 4.0) / 4.0))
            worst = max(worst, abs(ratio - 4.0) / 4.0)
    results = {"omega": list(omega), "worst_ratio_deviation": worst,
               "pass_15pct": bool(worst <= 0.15)}
    csvs = {"taylor_ratios.csv": (["pair", "halving_ratio", "rel_dev_from_4"], rows)}
    return emit_outputs(out_dir, cfg, results, csvs)


def cmd_reduce_check(cfg: dict, out_dir: str) -> dict:
    lat = resolved_lattice(cfg)
    params = resolved_phys(cfg)
    dio = resolved_dio(cfg)
    forcing = resolved_forcing(cfg, params, lat)
    omega = resolved_omega(cfg, dio, int(cfg["seed"]))
    state = nontrivial_test_state(lat, params, omega, forcing, int(cfg["seed"]) + 2)
    L = assemble(state, params, omega)
    pcfg = PipelineConfig(dio=dio, **cfg.get("pipeline", {}))
    pipe = ReductionInverse(L, pcfg)

    cut = params.lam ** (6.0 * params.delta)
    radii = [r for r in range(max(2, int(math.ceil(cut))), lat.n_max + 1)]
    slope_before, _ = measured_block_order(
        lambda u: apply_linearized(L, StatePair(TorusField.zeros(lat, True), u)).omega_field,
        lat, radii)
    slope_after, _ = measured_block_order(pipe.decoupled.offdiag_12, lat, radii)

    rng = np.random.default_rng(int(cfg["seed"]) + 3)
    rhs = _smooth_state(lat, rng, 0.5, 4)
    h, rep = pipe.invert(rhs)
    G = galerkin_matrix(lambda x: apply_linearized(L, x), lat,
                        math.hypot(lat.n_max, lat.n_max) + 1.0)
    hg = galerkin_solve(G, rhs)
    agree = sobolev_norm(h - hg, 0.0) / max(sobolev_norm(hg, 0.0), 1e-300)

    zrows = sorted(((k1, k2, z.real, z.imag)
                    for (k1, k2), z in pipe.tr.z_table.items()))
    results = {
        "omega": list(omega),
        "omega_witness": witness(omega, dio).to_record(dio),
        "offdiag_slope_before": slope_before,
        "offdiag_slope_after": slope_after,
        "cut_radius": cut,
        "invert_report": rep,
        "galerkin_agreement_rel": agree,
        "galerkin_condition": G.condition,
        "straighten": pipe.tr.info,
    }
    csvs = {"z_table.csv": (["k1", "k2", "z_re", "z_im"], zrows)}
    return emit_outputs(out_dir, cfg, results, csvs)


def _measure_point(args):
    gamma, tau, k_check, region, n_samples, seed = args
    p = DioParams(gamma=gamma, tau=tau, k_check=k_check)
    est, ci = measure_estimate(dc_predicate(p), region, n_samples, seed)
    return gamma, est, ci


def cmd_measure(cfg: dict, out_dir: str, threads: int = 1) -> dict:
    dio = resolved_dio(cfg)
    region = tuple(tuple(float(x) for x in r) for r in cfg["region"])
    gamma_grid = sorted(cfg.get("gamma_grid") or [0.1, 0.05, 0.025, 0.0125],
                        reverse=True)
    n_samples = int(cfg["n_samples"])
    seed = int(cfg["seed"])
    jobs = [(g, dio.tau, dio.k_check, region, n_samples, seed + i)
            for i, g in enumerate(gamma_grid)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            rows = sorted(ex.map(_measure_point, jobs), reverse=True)
    else:
        rows = [_measure_point(j) for j in jobs]
    slope = _slope([r[0] for r in rows], [max(r[1], 1e-12) for r in rows])

    # per-k resonant strips at the calibration and a halved gamma
    strips = []
    kmax = int(cfg["strip_k_max"])
    for gam in (gamma_grid[0], gamma_grid[0] / 2.0):
        for k1 in range(0, kmax + 1):
            for k2 in range(-kmax, kmax + 1):
                if (k1, k2) == (0, 0) or (k1 == 0 and k2 < 0):
                    continue
                kn = math.hypot(k1, k2)
                if kn > kmax:
                    continue
                p = DioParams(gamma=gam, tau=dio.tau, k_check=dio.k_check)
                est, ci = measure_estimate(strip_predicate((k1, k2), p), region,
                                           max(20_000, n_samples // 10),
                                           seed + 1000 + k1 * 97 + k2)
                strips.append((gam, k1, k2, kn, est, ci, est * kn ** 3 / gam))
    strip_const = max(s[6] for s in strips)
    results = {
        "slope_measure_vs_gamma": slope,
        "strip_constant_max": strip_const,
        "gamma_grid": gamma_grid,
        "n_samples": n_samples,
    }
    csvs = {
        "dc_measure.csv": (["gamma", "measure_estimate", "ci95"], rows),
        "strip_measure.csv": (["gamma", "k1", "k2", "abs_k", "measure_estimate",
                               "ci95", "normalized_const"], strips),
    }
    return emit_outputs(out_dir, cfg, results, csvs)


def pressure_residual(U, B, P, forcing, params: PhysParams) -> float:
    """Relative defect of Delta P against its divergence right-hand side."""
    from .spectral import VectorField2, advect, div, laplacian

    rhs = ((params.lam ** params.original_forcing_exponent) * div(forcing.f)
           + div(VectorField2(advect(B, B.c1), advect(B, B.c2)))
           - div(VectorField2(advect(U, U.c1), advect(U, U.c2))))
    rhs = zero_mean_project(rhs)
    lhs = laplacian(P)
    return sobolev_norm(lhs - rhs, 0.0) / max(sobolev_norm(rhs, 0.0), 1e-300)


def _scaling_point(args):
    cfg, lam = args
    lat = resolved_lattice(cfg)
    params = resolved_phys(cfg, lam)
    nm = resolved_nm(cfg)
    dio = resolved_dio(cfg)
    forcing = resolved_forcing(cfg, params, lat)
    omega = resolved_omega(cfg, dio, int(cfg["seed"]))
    final, trace = run_iteration(forcing, params, omega, nm)
    U, B, P, rep = reconstruct_physical(final, params, forcing, cfg["s_report"])
    prel = pressure_residual(U, B, P, forcing, params)
    return (lam, rep["norm_U"], rep["norm_B"], rep["norm_P"],
            rep["norm_Omega"], rep["norm_J"], prel, len(trace))


def cmd_scaling(cfg: dict, out_dir: str, threads: int = 1) -> dict:
    lam_grid = sorted(cfg.get("lam_grid") or [100.0, 1000.0, 10000.0])
    jobs = [(cfg, lam) for lam in lam_grid]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            rows = sorted(ex.map(_scaling_point, jobs))
    else:
        rows = sorted(_scaling_point(j) for j in jobs)
    eta = float(cfg["phys"]["eta"])
    results = {
        "asymptotic_regime": resolved_phys(cfg, lam_grid[0]).asymptotic_regime(),
        "slope_U": _slope([r[0] for r in rows], [r[1] for r in rows]),
        "slope_B": _slope([r[0] for r in rows], [r[2] for r in rows]),
        "slope_P": _slope([r[0] for r in rows], [r[3] for r in rows]),
        "expected_slope_U": 3.0 * eta,
        "expected_slope_B_upper": -3.0 * eta,
        "expected_slope_P": 1.0 + eta,
        "pressure_residual_max": max(r[6] for r in rows),
    }
    csvs = {"physical_scaling.csv": (
        ["lam", "norm_U_S", "norm_B_S", "norm_P_S", "norm_Omega_S", "norm_J_S",
         "pressure_residual_rel", "nm_steps"], rows)}
    return emit_outputs(out_dir, cfg, results, csvs)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="torus-kam",
        description="Pseudo-spectral traveling-wave experiments for 2D "
                    "non-resistive MHD on the torus.")
    parser.add_argument("subcommand", choices=list(RUN_KINDS))
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)

    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config)
        if cfg.get("run_kind") and cfg["run_kind"] != args.subcommand:
            raise ConfigError("config run_kind %r does not match subcommand %r"
                              % (cfg["run_kind"], args.subcommand))
        cfg["run_kind"] = args.subcommand
        if args.seed is not None:
            cfg["seed"] = args.seed
        out_dir = args.out or cfg.get("output_dir") or "torus-kam-out"
        threads = args.threads or int(os.environ.get("TORUS_KAM_THREADS", "1"))

        if args.subcommand == "approx":
            doc = cmd_approx(cfg, out_dir)
        elif args.subcommand == "solve":
            doc = cmd_solve(cfg, out_dir)
        elif args.subcommand == "linearize-check":
            doc = cmd_linearize_check(cfg, out_dir)
        elif args.subcommand == "reduce-check":
            doc = cmd_reduce_check(cfg, out_dir)
        elif args.subcommand == "measure":
            doc = cmd_measure(cfg, out_dir, threads)
        else:
            doc = cmd_scaling(cfg, out_dir, threads)
    except ConfigError as exc:
        print("validation error: %s" % exc, file=sys.stderr)
        return 2
    except (ResonanceError, ContractionError, AssumptionError,
            SmallnessError) as exc:
        stage = getattr(exc, "stage", None)
        tag = " [stage: %s]" % stage if stage else ""
        print("numerical precondition failed%s: %s" % (tag, exc), file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print("divergence: %s" % exc, file=sys.stderr)
        return 4

    with open(os.path.join(out_dir, "run.log"), "w") as fh:
        fh.write("subcommand=%s elapsed=%.3fs\n" % (args.subcommand,
                                                    time.perf_counter() - t0))
    print("wrote %s (content hash %s)" % (out_dir, doc["content_hash"][:16]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
