"""Experiment drivers: build the pipeline from a config and emit reports."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import report
from .action import el_residual, minimize_action
from .config import ExperimentConfig
from .errors import ConfigError, QuasipathError, ValidityWarning
from .escape import escape_ensemble
from .geometry import TubeSpec, write_curve_csv
from .manifold import lyapunov_type_numbers, relax_to_invariant_curve
from .model import make_builtin, verify_stationary_curve
from .reduced import reduced_profile, reduced_qp_offset

log = logging.getLogger(__name__)

C0_GRID = (1.0, 2.0, 4.0, 8.0)


def build_system(cfg):
    params = {k: v for k, v in cfg.system.items() if k != "name"}
    try:
        return make_builtin(str(cfg.system["name"]), **params)
    except TypeError as exc:
        raise ConfigError(f"bad system parameters {params}: {exc}") from exc


def build_manifold(sys, delta, cfg):
    return relax_to_invariant_curve(
        sys, delta, nodes=cfg.manifold_nodes, tol=cfg.manifold_tol, max_steps=cfg.manifold_max_steps
    )


def sup_reduced(pm, phi_A, delta1, delta2, n=32):
    """Largest reduced cost from ``phi_A`` over the phase window."""
    offs = np.concatenate([-delta1 * np.arange(1, n + 1) / n, delta2 * np.arange(1, n + 1) / n])
    return max(reduced_qp_offset(pm, phi_A, float(u)) for u in offs)


@dataclass(frozen=True)
class C0Choice:
    C0: float
    ok: bool
    inf_V: float
    bound: float
    note: str = ""


def choose_c0(sys, pm, delta1, delta2, C0="auto"):
    """Tube constant: explicit, or the smallest grid value with ``inf V >= 2 sup W_red`` on the boundary.

    Grid values whose radius exceeds the injectivity radius of M^delta are
    inadmissible. When no admissible value satisfies the inequality the
    largest admissible one is used (or the injectivity radius itself when
    none is admissible) and ``ok`` is False.
    """
    phi_A = pm.stable.phi_A
    curve = pm.curve_delta
    delta = pm.delta
    bound = 2.0 * sup_reduced(pm, phi_A, delta1, delta2)
    inj = curve.injectivity_radius

    def inf_V(c):
        tube = TubeSpec(curve, delta, c, delta1, delta2, phi_A)
        return float(np.min(sys.V(tube.boundary_sample(256))))

    if C0 != "auto":
        v = inf_V(float(C0))
        return C0Choice(float(C0), v >= bound, v, bound, "explicit")
    admissible = [c for c in C0_GRID if c * np.sqrt(delta) < inj]
    for c in admissible:
        v = inf_V(c)
        if v >= bound:
            return C0Choice(c, True, v, bound, "grid")
    c = admissible[-1] if admissible else inj / np.sqrt(delta) * (1.0 - 1e-6)
    v = inf_V(c)
    msg = f"no admissible C0 gives inf V >= 2 sup W_red at delta={delta} ({v:.3g} < {bound:.3g}); using C0={c:.4g}"
    warnings.warn(msg, ValidityWarning, stacklevel=2)
    return C0Choice(c, False, v, bound, "fallback")


# -- theorem check ---------------------------------------------------------------
SCALING_HEADER = [
    "delta", "target", "kind", "phase_offset", "W_mam", "W_red", "gap", "abs_gap", "head_cost",
    "sup_speed", "speed_ratio", "sup_dist", "tube_excess", "tau1", "tau0", "el_rms_over_delta",
    "T", "iterations", "C0", "c0_ok", "error",
]


@dataclass
class ScalingFit:
    deltas: np.ndarray
    gaps: dict
    slopes: dict
    intercepts: dict
    residuals: dict


def fit_loglog(deltas, gaps):
    """Least-squares fit of ``log|gap| = slope log delta + intercept``."""
    x = np.log(np.asarray(deltas, float))
    y = np.log(np.abs(np.asarray(gaps, float)))
    ok = np.isfinite(y)
    if ok.sum() < 2:
        return float("nan"), float("nan"), np.full(len(x), np.nan)
    A = np.vstack([x[ok], np.ones(ok.sum())]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y[ok], rcond=None)
    res = np.full(len(x), np.nan)
    res[ok] = y[ok] - (slope * x[ok] + icpt)
    return float(slope), float(icpt), res


@dataclass
class TheoremReport:
    rows: list
    fit: ScalingFit
    checks: dict
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return all(self.checks.values()) and not self.failures


def _targets(cfg):
    out = [("end_minus", "face", -cfg.delta1), ("end_plus", "face", cfg.delta2)]
    for f in cfg.mam_interior:
        u = f * (cfg.delta2 if f >= 0 else cfg.delta1)
        out.append((f"interior_{f:+g}", "point", u))
    return out


def _one_delta(sys, cfg, delta):
    pm = build_manifold(sys, delta, cfg)
    phi_A = pm.stable.phi_A
    c0 = choose_c0(sys, pm, cfg.delta1, cfg.delta2, cfg.C0)
    tube = TubeSpec(pm.curve_delta, delta, c0.C0, cfg.delta1, cfg.delta2, phi_A)
    T_factor = None if cfg.mam_T_factor == "auto" else float(cfg.mam_T_factor)
    rows = []
    for label, end, u in _targets(cfg):
        end_mode = "face" if end == "face" and cfg.mam_end == "face" else "point"
        W_red = reduced_qp_offset(pm, phi_A, u)
        try:
            res = minimize_action(
                sys, pm, tube, tube.point(u), N=cfg.mam_N, T_factor=T_factor,
                gtol=cfg.mam_gtol, max_iters=cfg.mam_max_iters, end=end_mode,
            )
        except QuasipathError as exc:
            log.warning("delta=%g target %s failed: %s", delta, label, exc)
            rows.append([delta, label, end_mode, u, np.nan, W_red] + [np.nan] * 12 + [c0.C0, c0.ok, type(exc).__name__])
            continue
        d = res.path.diagnostics
        el = el_residual(res.path, sys)
        gap = res.W_mam - W_red
        rows.append([
            delta, label, end_mode, u, res.W_mam, W_red, gap, abs(gap), res.head_cost,
            d["sup_speed"], d["sup_speed"] / np.sqrt(delta), d["sup_dist_manifold"],
            d["sup_dist_manifold"] / tube.radius, d["tau1_estimate"], d["tau0_phase"],
            el.rms / delta, res.T, res.iterations, c0.C0, c0.ok, "",
        ])
    return rows


def run_theorem_check(cfg):
    """Gap between the minimum action and the reduced quasipotential across ``delta_list``."""
    if not cfg.delta_list:
        raise ConfigError("delta_list is empty")
    sys = build_system(cfg)
    rows, failures = [], []
    for delta in cfg.delta_list:
        try:
            rows.extend(_one_delta(sys, cfg, float(delta)))
        except QuasipathError as exc:
            log.warning("delta=%g failed: %s", delta, exc)
            failures.append((delta, repr(exc)))
    col = {h: i for i, h in enumerate(SCALING_HEADER)}
    labels = [t[0] for t in _targets(cfg)]
    deltas = np.array([float(d) for d in cfg.delta_list])
    gaps, slopes, icpts, resid = {}, {}, {}, {}
    for lab in labels:
        g = []
        for d in deltas:
            match = [r for r in rows if r[col["target"]] == lab and r[col["delta"]] == d]
            g.append(match[0][col["gap"]] if match else np.nan)
        gaps[lab] = np.array(g, float)
        slopes[lab], icpts[lab], resid[lab] = fit_loglog(deltas, gaps[lab])
    fit = ScalingFit(deltas, gaps, slopes, icpts, resid)

    checks = {}
    if cfg.theorem_expect == "slope":
        checks["slope_ends"] = all(slopes[l] >= cfg.slope_threshold for l in labels if l.startswith("end"))
        checks["slope_interior"] = all(slopes[l] >= cfg.slope_threshold for l in labels if l.startswith("interior"))
    else:
        checks["gap_floor"] = all(np.all(np.abs(gaps[l]) <= cfg.floor) for l in labels)
    checks.update(_confinement_checks(rows, deltas, col))
    return TheoremReport(rows, fit, checks, failures)


def _confinement_checks(rows, deltas, col):
    """Path diagnostics across the delta grid."""
    by_delta = {}
    for r in rows:
        by_delta.setdefault(r[col["delta"]], []).append(r)
    inside, dist, speed = [], [], []
    for d in deltas:
        rs = [r for r in by_delta.get(d, []) if np.isfinite(r[col["W_mam"]])]
        if not rs:
            return {"confined": False, "dist_shrinks": False, "speed_bounded": False}
        inside.append(max(r[col["tube_excess"]] for r in rs))
        dist.append(max(r[col["sup_dist"]] for r in rs))
        speed.append(max(r[col["speed_ratio"]] for r in rs))
    dist = np.array(dist)
    speed = np.array(speed)
    ratio = dist[:-1] / dist[1:]
    halving = np.isclose(deltas[:-1] / deltas[1:], 2.0, rtol=0.05)
    escaped = any(r[col["error"]] == "PathEscapedTube" for r in rows)
    return {
        "confined": bool(np.max(inside) <= 1.0) and not escaped,
        "dist_shrinks": bool(np.all(ratio[halving] >= 1.6)),
        "speed_bounded": bool(np.max(speed) <= 2.0 * speed[0]),
    }


# -- escape check ----------------------------------------------------------------
ESCAPE_RUN_HEADER = ["seed", "epsilon", "exit_time", "exit_phase", "phase_offset", "class", "truncated"]
ESCAPE_STATS_HEADER = [
    "epsilon", "n", "mean_exit_time", "eps_log_mean", "ci_low", "ci_high", "W_ref", "rel_err",
    "truncated_fraction", "frac_lateral", "frac_end_minus", "frac_end_plus", "near_end_fraction", "reliable",
]


@dataclass
class EscapeReport:
    delta: float
    C0: C0Choice
    W_ends: dict
    W_ref: float
    stats: list
    checks: dict
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return all(self.checks.values())


def run_escape_check(cfg):
    """Compare ``eps log E tau`` with the minimum action to the tube ends."""
    if not cfg.escape_epsilons:
        raise ConfigError("escape.epsilons is empty")
    sys = build_system(cfg)
    delta = float(cfg.delta_list[0] if cfg.escape_delta == "auto" else cfg.escape_delta)
    pm = build_manifold(sys, delta, cfg)
    phi_A = pm.stable.phi_A
    c0 = choose_c0(sys, pm, cfg.delta1, cfg.delta2, cfg.C0)
    tube = TubeSpec(pm.curve_delta, delta, c0.C0, cfg.delta1, cfg.delta2, phi_A)
    T_factor = None if cfg.mam_T_factor == "auto" else float(cfg.mam_T_factor)
    W_ends = {}
    for lab, u in (("end_minus", -cfg.delta1), ("end_plus", cfg.delta2)):
        res = minimize_action(
            sys, pm, tube, tube.point(u), N=cfg.mam_N, T_factor=T_factor,
            gtol=cfg.mam_gtol, max_iters=cfg.mam_max_iters, end="face",
        )
        W_ends[lab] = res.W_mam
    W_ref = min(W_ends.values())
    dt = None if cfg.escape_dt == "auto" else float(cfg.escape_dt)
    stats = escape_ensemble(
        sys, pm, tube, [float(e) for e in cfg.escape_epsilons], cfg.escape_samples, cfg.master_seed,
        dt=dt, max_time=cfg.escape_max_time, W_ref=W_ref, workers=int(cfg.escape_workers),
        start=tube.point(float(cfg.escape_start_offset)) if cfg.escape_start_offset else None,
    )
    exps = np.array([s.eps_log_mean for s in stats])
    rel = np.abs(exps - W_ref) / W_ref
    spread = (np.max(exps) - np.min(exps)) / np.max(np.abs(exps)) if len(exps) > 1 else 0.0
    ends_dominate = all(
        s.class_fractions["end_minus"] + s.class_fractions["end_plus"] > s.class_fractions["lateral_boundary"]
        for s in stats
    )
    checks = {
        "exponent_vs_W": bool(np.all(rel <= 0.25)),
        "exponent_spread": bool(spread <= 0.25),
        "near_end": bool(all(s.near_end_fraction >= 0.8 for s in stats)),
        "ends_dominate": bool(ends_dominate),
        "reliable": bool(all(s.reliable for s in stats)),
    }
    notes = [m for s in stats for m in s.warnings]
    if not c0.ok:
        notes.append(f"C0={c0.C0:.4g} violates inf V >= 2 sup W_red ({c0.inf_V:.3g} < {c0.bound:.3g})")
    return EscapeReport(delta, c0, W_ends, W_ref, stats, checks, notes)


# -- report emission --------------------------------------------------------------
def _fmt_checks(checks):
    return [f"  {k}: {'PASS' if v else 'FAIL'}" for k, v in checks.items()]


def emit_theorem_report(rep, out, cfg):
    out = report.ensure_dir(out)
    report.write_csv(out / "scaling.csv", SCALING_HEADER, rep.rows)
    f = rep.fit
    fit_rows = [[lab, f.slopes[lab], f.intercepts[lab]] + list(f.gaps[lab]) for lab in f.gaps]
    report.write_csv(out / "scaling_fit.csv", ["target", "slope", "intercept"] + [f"gap_{d!r}" for d in f.deltas], fit_rows)
    report.line_plot_svg(
        out / "scaling.svg",
        {lab: (f.deltas, np.abs(f.gaps[lab])) for lab in f.gaps},
        title=f"|W_mam - W_red| vs delta ({cfg.system.get('name')})",
        xlabel="delta", ylabel="|gap|", logx=True, logy=True,
    )
    lines = [f"theorem-check: system {_system_str(cfg)}", f"deltas: {', '.join(repr(float(d)) for d in f.deltas)}"]
    for lab in f.gaps:
        lines.append(f"  {lab}: slope {f.slopes[lab]:.4g}, gaps {', '.join(f'{g:.3e}' for g in f.gaps[lab])}")
    lines.append("checks:")
    lines += _fmt_checks(rep.checks)
    for d, msg in rep.failures:
        lines.append(f"  delta={d}: {msg}")
    lines.append(f"result: {'PASS' if rep.passed else 'FAIL'}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return out


def emit_escape_report(rep, out, cfg):
    out = report.ensure_dir(out)
    runs = [
        [r.seed, r.epsilon, r.exit_time, r.exit_phase, r.phase_offset, r.boundary_class, r.truncated]
        for s in rep.stats for r in s.records
    ]
    report.write_csv(out / "escape_runs.csv", ESCAPE_RUN_HEADER, runs)
    srows = []
    for s in rep.stats:
        cf = s.class_fractions
        srows.append([
            s.epsilon, s.n, s.mean_exit_time, s.eps_log_mean, s.ci_eps_log_mean[0], s.ci_eps_log_mean[1],
            rep.W_ref, abs(s.eps_log_mean - rep.W_ref) / rep.W_ref, s.truncated_fraction,
            cf["lateral_boundary"], cf["end_minus"], cf["end_plus"], s.near_end_fraction, s.reliable,
        ])
    report.write_csv(out / "escape_stats.csv", ESCAPE_STATS_HEADER, srows)
    hrows = [
        [s.epsilon, a, b, c]
        for s in rep.stats for a, b, c in zip(s.hist_edges[:-1], s.hist_edges[1:], s.hist_counts)
    ]
    report.write_csv(out / "escape_hist.csv", ["epsilon", "offset_lo", "offset_hi", "count"], hrows)
    if rep.stats:
        s0 = rep.stats[-1]
        report.histogram_svg(
            out / "escape_hist.svg", s0.hist_edges, s0.hist_counts,
            title=f"exit phase offset, eps={s0.epsilon}", xlabel="phase offset from phi_A",
        )
    lines = [
        f"escape-check: system {_system_str(cfg)}, delta={rep.delta}",
        f"C0={rep.C0.C0:.6g} ({rep.C0.note}, inequality {'holds' if rep.C0.ok else 'violated'})",
        f"W_mam end_minus={rep.W_ends['end_minus']:.6g} end_plus={rep.W_ends['end_plus']:.6g}",
    ]
    for r in srows:
        lines.append(
            f"  eps={r[0]}: eps*log(mean tau)={r[3]:.4g} [{r[4]:.4g}, {r[5]:.4g}], rel err {r[7]:.3g}, "
            f"lateral {r[9]:.3f}, near-end {r[12]:.3f}, truncated {r[8]:.3f}"
        )
    lines.append("checks:")
    lines += _fmt_checks(rep.checks)
    lines += [f"note: {n}" for n in rep.notes]
    lines.append(f"result: {'PASS' if rep.passed else 'FAIL'}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return out


def _system_str(cfg):
    return ", ".join(f"{k}={v}" for k, v in cfg.system.items())


# -- smaller drivers ---------------------------------------------------------------
def run_manifold(cfg, out):
    out = report.ensure_dir(out)
    sys = build_system(cfg)
    rep = verify_stationary_curve(sys)
    n = sys.n
    rows = []
    for delta in cfg.delta_list:
        delta = float(delta)
        pm = build_manifold(sys, delta, cfg)
        th = pm.thetas
        norm = np.linalg.norm(pm.offset, axis=1)
        report.write_csv(
            out / f"manifold_delta_{delta!r}.csv",
            ["theta"] + [f"phi{i}" for i in range(n)] + ["phi_norm", "b", "b_tilde"],
            ([t] + list(o) + [m, b, bt] for t, o, m, b, bt in zip(th, pm.offset, norm, pm.b(th), pm.b_tilde(th))),
        )
        phis, bd = pm.b_delta_table()
        report.write_csv(out / f"b_delta_{delta!r}.csv", ["phase", "b_delta"], zip(phis, bd))
        write_curve_csv(pm.curve_delta, out / f"curve_delta_{delta!r}.csv")
        phi_A = pm.stable.phi_A if delta > 0 else float("nan")
        rows.append([delta, pm.length, pm.invariance_residual, pm.steps, phi_A, float(np.max(norm))])
    report.write_csv(out / "manifold.csv", ["delta", "length", "residual", "steps", "phi_A", "sup_offset"], rows)
    (out / "summary.txt").write_text(
        f"stationary curve check: max_grad={rep.max_grad:.3e} max_V={rep.max_V:.3e} "
        f"tangent_hess={rep.max_tangent_hess:.3e}: {'PASS' if rep.passed else 'FAIL'}\n"
    )
    return rep.passed


def run_reduced(cfg, out):
    out = report.ensure_dir(out)
    sys = build_system(cfg)
    rows = []
    for delta in cfg.delta_list:
        pm = build_manifold(sys, float(delta), cfg)
        prof = reduced_profile(pm)
        report.write_csv(
            out / f"reduced_delta_{float(delta)!r}.csv", ["phase", "U", "W_cw", "W_ccw", "W_min"],
            zip(prof.phases, prof.U, prof.W_cw, prof.W_ccw, prof.W_min),
        )
        phi_A = pm.stable.phi_A
        rows.append([delta, phi_A, reduced_qp_offset(pm, phi_A, -cfg.delta1), reduced_qp_offset(pm, phi_A, cfg.delta2)])
    report.write_csv(out / "reduced.csv", ["delta", "phi_A", "W_red_minus", "W_red_plus"], rows)
    return True


MAM_HEADER = ["delta", "target", "W_mam", "W_red", "gap", "sup_speed", "tau1", "head_cost", "T", "iterations"]


def run_mam(cfg, out):
    out = report.ensure_dir(out)
    sys = build_system(cfg)
    rows = []
    ok = True
    T_factor = None if cfg.mam_T_factor == "auto" else float(cfg.mam_T_factor)
    for delta in cfg.delta_list:
        delta = float(delta)
        pm = build_manifold(sys, delta, cfg)
        phi_A = pm.stable.phi_A
        c0 = choose_c0(sys, pm, cfg.delta1, cfg.delta2, cfg.C0)
        tube = TubeSpec(pm.curve_delta, delta, c0.C0, cfg.delta1, cfg.delta2, phi_A)
        for lab, u in (("end_minus", -cfg.delta1), ("end_plus", cfg.delta2)):
            res = minimize_action(
                sys, pm, tube, tube.point(u), N=cfg.mam_N, T_factor=T_factor,
                gtol=cfg.mam_gtol, max_iters=cfg.mam_max_iters, end=cfg.mam_end,
            )
            W_red = reduced_qp_offset(pm, phi_A, u)
            ok &= res.W_mam <= W_red + cfg.mam_gtol * max(1.0, W_red)
            P = res.path.points
            phase, dist = pm.curve_delta.project_many(P)
            report.write_csv(
                out / f"path_delta_{delta!r}_{lab}.csv",
                ["t"] + [f"x{i}" for i in range(P.shape[1])] + ["dist", "phase"],
                ([t] + list(p) + [dd, ph] for t, p, dd, ph in zip(res.path.times, P, dist, phase)),
            )
            d = res.path.diagnostics
            rows.append([
                delta, lab, res.W_mam, W_red, res.W_mam - W_red, d["sup_speed"], d["tau1_estimate"],
                res.head_cost, res.T, res.iterations,
            ])
            log.info("delta=%g %s W_mam=%.8g W_red=%.8g gap=%.3g", delta, lab, res.W_mam, W_red, res.W_mam - W_red)
    report.write_csv(out / "mam.csv", MAM_HEADER, rows)
    return bool(ok)


def run_lyapunov(cfg, out):
    out = report.ensure_dir(out)
    sys = build_system(cfg)
    pm = build_manifold(sys, 0.0, cfg)
    horizon = None if cfg.lyapunov_horizon == "auto" else float(cfg.lyapunov_horizon)
    ly = lyapunov_type_numbers(sys, pm, horizon=horizon, n_seeds=cfg.lyapunov_seeds)
    report.write_csv(
        out / "lyapunov.csv", ["nu_rate", "tangential", "lambda"],
        [[ly.nu_rate, ly.tangential_rate, sys.lam]],
    )
    return ly.nu_rate < 0 and abs(ly.tangential_rate) < abs(ly.nu_rate)


def load_config(path, seed=None):
    return ExperimentConfig.load(path).with_seed(seed)
