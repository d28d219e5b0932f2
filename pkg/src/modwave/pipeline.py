"""Config-driven experiment runs: stages execute in declared order, each
writing its own outputs, and a manifest records inputs, versions, timings,
results and assertion verdicts."""
from __future__ import annotations

import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .bloch import check_diffusive_stability, default_xi_grid, fit_critical_expansion, spectrum
from .config import ExperimentConfig
from .errors import ModwaveError
from .evolve import compare_to_whitham, decay_rate, integrate_pde, modulated_initial_data, tile
from .io import ProfileStore, digest, read_json, save_profile, write_csv, write_json
from .model import get_model
from .profile import FamilyInterpolant, build_family, check_profile, initial_guess, march, solve_profile
from .whitham import whitham_data

OUTPUT_ENV = "MODWAVE_OUTPUT"
MANIFEST = "manifest.json"


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "modwave_runs"))


@dataclass
class _Context:
    config: ExperimentConfig
    out: Path
    store: ProfileStore
    model: object = None
    profile: object = None
    profile_key: str = ""
    spectrum: object = None
    fits: Optional[list] = None
    whitham: object = None
    results: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)


def _profile_summary(p) -> dict:
    chk = check_profile(p, np.inf)
    return {"k": p.k, "c": p.c, "M": p.M, "q": p.q, "residual": p.residual_norm, "amplitude": p.amplitude(),
            "periodicity": chk["periodicity"], "N": p.N}


def _write_profile(ctx: _Context, name: str) -> list[str]:
    p = ctx.profile
    save_profile(ctx.out / f"{name}.npz", p)
    write_csv(ctx.out / f"{name}.csv", ["y"] + [f"u{i}" for i in range(p.model.n)],
              np.column_stack([p.grid, p.U.T]))
    return [f"{name}.npz", f"{name}.csv"]


def _stage_profile(ctx: _Context, st) -> list[str]:
    cfg = ctx.config
    key = digest({"model": cfg.model.model_dump(), "profile": st.model_dump()})
    prof = ctx.store.get(key)
    if prof is None:
        guess = initial_guess(ctx.model, st.k, st.amplitude,
                              N=st.N, M=st.M, shape=st.shape)
        prof = solve_profile(ctx.model, guess, tol=st.tol)
        ctx.store.put(key, prof)
    ctx.profile, ctx.profile_key = prof, key
    ctx.results["profile"] = dict(_profile_summary(prof), hash=key)
    return _write_profile(ctx, "profile")


def _stage_continue(ctx: _Context, st) -> list[str]:
    key = digest({"from": ctx.profile_key, "continue": st.model_dump()})
    prof = ctx.store.get(key)
    if prof is None:
        prof = march(ctx.model, ctx.profile, st.k_target, steps=st.steps, M=st.M_target, tol=st.tol)
        ctx.store.put(key, prof)
    ctx.profile, ctx.profile_key = prof, key
    ctx.results["continue"] = dict(_profile_summary(prof), hash=key)
    return _write_profile(ctx, "continued")


def _stage_spectrum(ctx: _Context, st) -> list[str]:
    grid = default_xi_grid(st.n_global, st.xi_fit, st.n_fit)
    sp = spectrum(ctx.profile, grid, N_f=st.N_f, xi_track=st.xi_fit)
    rep = check_diffusive_stability(sp)
    res = {"stability": rep.as_dict()}
    try:
        fits = fit_critical_expansion(sp, st.xi_fit, st.degree)
    except ModwaveError as exc:
        fits, res["fit_error"] = None, str(exc)
    ctx.spectrum, ctx.fits = sp, fits
    if fits:
        res["a"] = [f["a"] for f in fits]
        res["b"] = [f["b"] for f in fits]
    ctx.results["spectrum"] = res
    top = max(1, min(4, min(e.size for e in sp.eigenvalues)))
    rows = [[xi] + [v for lam in e[:top] for v in (lam.real, lam.imag)] for xi, e in zip(sp.xi_grid, sp.eigenvalues)]
    write_csv(ctx.out / "spectrum.csv", ["xi"] + [f"{p}{i}" for i in range(top) for p in ("re", "im")], rows)
    outs = ["spectrum.csv"]
    if sp.curves.size:
        rows = [[xi] + [v for lam in col for v in (lam.real, lam.imag)] for xi, col in zip(sp.curve_xi, sp.curves.T)]
        write_csv(ctx.out / "critical_curves.csv",
                  ["xi"] + [f"{p}{i}" for i in range(sp.curves.shape[0]) for p in ("re", "im")], rows)
        outs.append("critical_curves.csv")
    return outs


def _stage_whitham(ctx: _Context, st) -> list[str]:
    deltas = None if st.deltas is None else np.asarray(st.deltas, float)
    fam = build_family(ctx.model, ctx.profile, deltas=deltas, half_widths=tuple(st.half_widths))
    data = whitham_data(fam, ctx.fits, route=st.route, coupling_tol=st.coupling_tol)
    ctx.whitham = data
    res = {"coupling": data.coupling, "a": np.real(data.a), "b": None if data.b is None else np.real(data.b),
           "A_star": data.A_star, "diffusion_route": data.diffusion_route, "grad_c": data.grad_c,
           "warnings": list(data.warnings)}
    if ctx.fits:
        fitted = np.sort([f["a"] for f in ctx.fits])
        a = np.sort(np.real(data.a))
        if fitted.size == a.size:
            res["a_route_gap"] = float(np.max(np.abs(fitted - a)) / max(1.0, np.max(np.abs(a))))
    ctx.results["whitham"] = res
    write_json(ctx.out / "whitham.json", data.as_dict())
    return ["whitham.json"]


def _initial_data(ctx: _Context, st):
    W, N = st.W, st.N_x
    y = np.arange(W * N) / N
    center = W / 2 if st.center is None else st.center
    bump = np.exp(-(y - center) ** 2 / (2 * st.width ** 2))
    d0 = np.zeros((ctx.model.n, y.size))
    d0[st.component] = st.amplitude * bump
    h0 = st.phase_amplitude * np.exp(-(y - center) ** 2 / (2 * st.phase_width ** 2))
    return modulated_initial_data(ctx.profile, h0, d0, W, N), h0


def _save_times(st) -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(min(10.0, st.T), st.T, st.n_saves)])


def _stage_simulate(ctx: _Context, st) -> list[str]:
    u0, _ = _initial_data(ctx, st)
    p = ctx.profile
    traj = integrate_pde(ctx.model, u0, st.T, st.dt, k=p.k, frame_speed=p.c, save_times=_save_times(st),
                         scheme=st.scheme, norm_every=max(1, int(round(1.0 / st.dt))),
                         reference=tile(p, st.W, st.N_x))
    res = {}
    for q in (1, 2, np.inf):
        try:
            res[f"rate_L{q}"] = decay_rate(traj.norm_times, traj.norms["v"][q], st.window)
        except ValueError:
            res[f"rate_L{q}"] = None
    ctx.results["simulate"] = res
    write_csv(ctx.out / "simulate_norms.csv", ["t", "L1", "L2", "Linf"],
              np.column_stack([traj.norm_times] + [traj.norms["v"][q] for q in (1, 2, np.inf)]))
    np.savez_compressed(ctx.out / "simulate_snapshots.npz", times=traj.times, snapshots=traj.snapshots,
                        W=st.W, N_x=st.N_x)
    return ["simulate_norms.csv", "simulate_snapshots.npz"]


def _stage_compare(ctx: _Context, st) -> list[str]:
    if ctx.whitham is None:
        raise ModwaveError("missing-stage", "compare needs Whitham data")
    deltas = None if st.extraction_deltas is None else np.asarray(st.extraction_deltas, float)
    fam = build_family(ctx.model, ctx.profile, deltas=deltas, half_widths=tuple(st.extraction_half_widths))
    interp = FamilyInterpolant(fam)
    u0, h0 = _initial_data(ctx, st)
    p = ctx.profile
    traj = integrate_pde(ctx.model, u0, st.T, st.dt, k=p.k, frame_speed=p.c, save_times=_save_times(st),
                         scheme=st.scheme, norm_every=max(1, int(round(st.T / st.dt))))
    cmp = compare_to_whitham(traj, interp, ctx.whitham, u0, h0, system=st.system, dt=st.dt, window=st.window)
    ctx.results["compare"] = {"system": st.system, "gap_rate": cmp.gap_rate, "signal_rate": cmp.signal_rate,
                              "margin": cmp.signal_rate[0] - cmp.gap_rate[0]}
    write_csv(ctx.out / "compare.csv", ["t", "gap_L2", "signal_L2", "gap_Linf", "signal_Linf"],
              np.column_stack([cmp.times, cmp.gap[2], cmp.signal[2], cmp.gap[np.inf], cmp.signal[np.inf]]))
    return ["compare.csv"]


def _stage_diffwave(ctx: _Context, st) -> list[str]:
    from .diffwave import (Solution, burgers_residual, diffusion_wave_superposition, equivalence_gap,
                           first_moment_shifts, integrate_approximant, integrate_full, series_norms,
                           system_from_model)
    state = np.zeros(ctx.model.n) if st.state is None else np.asarray(st.state, float)
    S = system_from_model(ctx.model, state)
    W, N = st.W, st.N_x
    x = np.arange(W * N) / N
    bump = np.exp(-(x - W / 2) ** 2 / (2 * st.width ** 2))
    z0 = np.asarray(st.amplitude, float)[:, None] * bump
    times = _save_times(st)
    full = integrate_full(ctx.model, state, z0, st.T, st.dt, W, N, times, st.scheme)
    quad = integrate_approximant(S, "quadratic", z0, st.T, st.dt, W, N, times, st.scheme)
    dec = integrate_approximant(S, "decoupled", z0, st.T, st.dt, W, N, times, st.scheme)
    m0 = z0.sum(axis=1) / N
    mom = (S.L_star @ z0 * (x - W / 2)).sum(axis=1) / N
    shifts = first_moment_shifts(S, m0, mom)
    sup = Solution(times, np.array([diffusion_wave_superposition(S, m0, x, t, center=W / 2, shifts=shifts)
                                    for t in times]), W, N)
    signal = series_norms(full, 2, st.window)
    g_fd = equivalence_gap(full, dec, 2, st.window)
    g_fq = equivalence_gap(full, quad, 2, st.window)
    g_ds = equivalence_gap(dec, sup, 1, st.window)
    ctx.results["diffwave"] = {
        "a": S.a, "b": S.b, "gamma": S.gamma,
        "hopf_cole_residual": max(burgers_residual(g, m, 1.0) for g, m in zip(S.gamma, S.L_star @ m0)),
        "signal_rate": signal.rate, "decoupled_rate": series_norms(dec, 2, st.window).rate,
        "gap_full_decoupled": g_fd.rate, "gap_full_quadratic": g_fq.rate, "gap_decoupled_waves_L1": g_ds.rate,
        "margin_decoupled": signal.rate[0] - g_fd.rate[0], "margin_quadratic": signal.rate[0] - g_fq.rate[0],
    }
    write_csv(ctx.out / "diffwave.csv", ["t", "signal_L2", "gap_full_decoupled", "gap_full_quadratic",
                                         "gap_decoupled_waves_L1"],
              np.column_stack([times, signal.gap, g_fd.gap, g_fq.gap, g_ds.gap]))
    return ["diffwave.csv"]


_STAGES = {"profile": _stage_profile, "continue": _stage_continue, "spectrum": _stage_spectrum,
           "whitham": _stage_whitham, "simulate": _stage_simulate, "compare": _stage_compare,
           "diffwave": _stage_diffwave}


def lookup(results: dict, key: str):
    node = results
    for part in key.split("."):
        if isinstance(node, dict) and part in node:
            node = node[part]
        elif isinstance(node, (list, tuple, np.ndarray)) and part.lstrip("-").isdigit() and -len(node) <= int(part) < len(node):
            node = node[int(part)]
        else:
            raise KeyError(key)
    return node


def _check(assertion, results) -> dict:
    out = {"key": assertion.key, "passed": False}
    try:
        val = lookup(results, assertion.key)
    except KeyError:
        out["error"] = "missing"
        return out
    if isinstance(val, (list, tuple)) and len(val) == 2 and assertion.equals is None:
        val = val[0]  # (estimate, stderr) pairs compare by the estimate
    out["value"] = val
    ok = True
    if assertion.equals is not None:
        ok &= val == assertion.equals
    if assertion.min is not None:
        ok &= float(val) >= assertion.min
    if assertion.max is not None:
        ok &= float(val) <= assertion.max
    out["passed"] = bool(ok)
    return out


def run_dir(config: ExperimentConfig) -> Path:
    if config.output_dir:
        return Path(config.output_dir)
    return output_root() / f"{config.name}-{digest(config.model_dump(mode='json'))[:8]}"


def run(config: ExperimentConfig, out: Optional[Path] = None) -> Path:
    """Execute all stages of ``config`` and return the artifact directory."""
    out = Path(out) if out is not None else run_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    store = ProfileStore((out.parent if out.parent != out else out) / "profiles")
    ctx = _Context(config=config, out=out, store=store)
    np.random.seed(config.seed)
    manifest = {
        "name": config.name, "config": config.model_dump(mode="json"),
        "versions": {"modwave": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "stages": [], "results": ctx.results, "assertions": [],
    }
    t0 = time.perf_counter()
    failure = None
    try:
        ctx.model = get_model(config.model.name, **config.model.params)
        for st in config.stages:
            ts = time.perf_counter()
            entry = {"kind": st.kind, "status": "running"}
            manifest["stages"].append(entry)
            try:
                entry["outputs"] = _STAGES[st.kind](ctx, st)
                entry["status"] = "ok"
            except Exception as exc:
                entry["status"] = "failed"
                entry["error"] = str(exc)
                code = exc.code if isinstance(exc, ModwaveError) else type(exc).__name__
                failure = ModwaveError(code, f"stage {st.kind}: {exc}")
                raise failure from exc
            finally:
                entry["wall_time"] = time.perf_counter() - ts
    finally:
        manifest["assertions"] = [_check(a, ctx.results) for a in config.assertions]
        manifest["passed"] = failure is None and all(a["passed"] for a in manifest["assertions"])
        manifest["wall_time"] = time.perf_counter() - t0
        write_json(out / MANIFEST, manifest)
    return out


# ----------------------------------------------------------------------------
# reporting


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.6g}"
    if isinstance(x, list):
        return "[" + ", ".join(_fmt(v) for v in x) + "]"
    return str(x)


def _rate(pair) -> str:
    if pair is None:
        return "n/a"
    return f"{pair[0]:+.4f} +/- {pair[1]:.4f}"


def report(artifact_dir) -> str:
    """Condensed text summary of an artifact directory; also writes
    report.txt and summary.csv next to the manifest."""
    d = Path(artifact_dir)
    path = d / MANIFEST
    if not path.exists():
        raise ModwaveError("no-manifest", f"{d} has no {MANIFEST}")
    man = read_json(path)
    res = man.get("results", {})
    lines = [f"run: {man['name']}  (modwave {man['versions']['modwave']}, {man.get('wall_time', 0):.1f} s)"]
    rows = []
    for st in man["stages"]:
        lines.append(f"  stage {st['kind']:<9} {st['status']:<7} {st.get('wall_time', 0):8.2f} s"
                     + (f"  {st['error']}" if "error" in st else ""))
    if "spectrum" in res:
        s = res["spectrum"]["stability"]
        lines.append("stability:")
        lines.append(f"  (D1) {'pass' if s['D1'] else 'FAIL'}  max Re lambda off xi=0: {_fmt(s['max_real_nonzero_xi'])},"
                     f" noncritical at xi=0: {_fmt(s['max_real_noncritical_zero'])}")
        lines.append(f"  (D2) {'pass' if s['D2'] else 'FAIL'}  quadratic margin theta: {_fmt(s['theta'])}")
        lines.append(f"  (D3) {'pass' if s['D3'] else 'FAIL'}  eigenvalues near 0: {_fmt(s['zero_count'])}"
                     f" (expected {s['expected_count']})")
        for key in ("D1", "D2", "D3", "theta"):
            rows.append((f"stability.{key}", s[key]))
        if "a" in res["spectrum"]:
            lines.append(f"  fitted a = {_fmt(res['spectrum']['a'])}, b = {_fmt(res['spectrum']['b'])}")
    if "whitham" in res:
        w = res["whitham"]
        lines.append(f"whitham: coupling {w['coupling']}, a = {_fmt(w['a'])}, b = {_fmt(w['b'])}"
                     f" (diffusion route {w['diffusion_route']})")
        rows.append(("whitham.coupling", w["coupling"]))
        if "a_route_gap" in w:
            lines.append(f"  characteristic speeds, matrix vs spectrum: relative gap {_fmt(w['a_route_gap'])}")
            rows.append(("whitham.a_route_gap", w["a_route_gap"]))
    if "simulate" in res:
        s = res["simulate"]
        lines.append("simulate: decay exponents " + ", ".join(f"{k[5:]} {_rate(v)}" for k, v in s.items()))
    if "compare" in res:
        c = res["compare"]
        lines.append(f"compare ({c['system']}):")
        lines.append(f"  {'series':<10} {'exponent':>20}")
        lines.append(f"  {'gap L2':<10} {_rate(c['gap_rate']):>20}")
        lines.append(f"  {'signal L2':<10} {_rate(c['signal_rate']):>20}")
        lines.append(f"  margin {c['margin']:+.4f}")
        rows += [("compare.gap_rate", c["gap_rate"][0]), ("compare.signal_rate", c["signal_rate"][0])]
    if "diffwave" in res:
        dw = res["diffwave"]
        lines.append("diffwave:")
        for key in ("signal_rate", "decoupled_rate", "gap_full_decoupled", "gap_full_quadratic",
                    "gap_decoupled_waves_L1"):
            lines.append(f"  {key:<24} {_rate(dw[key])}")
            rows.append((f"diffwave.{key}", dw[key][0]))
        lines.append(f"  margins: decoupled {dw['margin_decoupled']:+.4f}, quadratic {dw['margin_quadratic']:+.4f}")
    if man.get("assertions"):
        lines.append("assertions:")
        for a in man["assertions"]:
            lines.append(f"  {'pass' if a['passed'] else 'FAIL'}  {a['key']} = {_fmt(a.get('value', a.get('error')))}")
    lines.append(f"overall: {'pass' if man.get('passed') else 'FAIL'}")
    text = "\n".join(lines)
    (d / "report.txt").write_text(text + "\n")
    write_csv(d / "summary.csv", ["key", "value"], rows)
    return text
