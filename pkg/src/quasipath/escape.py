"""Euler-Maruyama exit simulations from the tube around M^delta.

Noise for trajectory ``seed`` at step ``k`` is drawn from a Philox stream
keyed on ``seed`` with counter block ``k // CHUNK``, so a record depends only
on ``(seed, epsilon, dt, max_time)`` and never on batching or scheduling.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter, ValidityWarning
from .geometry import TubeClass

CHUNK = 4096
END_WINDOW = 0.15
BOOTSTRAP = 1000


@dataclass(frozen=True)
class EscapeRecord:
    seed: int
    epsilon: float
    exit_time: float
    exit_point: np.ndarray
    exit_phase: float
    phase_offset: float
    boundary_class: str
    truncated: bool

    def same_as(self, other):
        return (
            self.seed == other.seed
            and self.epsilon == other.epsilon
            and self.exit_time == other.exit_time
            and np.array_equal(self.exit_point, other.exit_point)
            and self.exit_phase == other.exit_phase
            and self.boundary_class == other.boundary_class
            and self.truncated == other.truncated
        )


def _noise_block(seed, block, n):
    bitgen = np.random.Philox(key=int(seed), counter=[0, int(block), 0, 0])
    return np.random.Generator(bitgen).standard_normal((CHUNK, n))


def derive_seeds(master_seed, eps_index, n):
    """64-bit trajectory seeds for one noise level, derived by index from ``master_seed``."""
    return [
        int(np.random.SeedSequence(master_seed, spawn_key=(eps_index, i)).generate_state(1, np.uint64)[0])
        for i in range(n)
    ]


def _check_dt(sys, dt):
    lam = sys.lam
    dt = 0.01 / lam if dt is None else float(dt)
    if not (0 < dt <= 0.1 / lam):
        raise InvalidParameter(f"dt={dt} must lie in (0, 0.1/lambda]")
    return dt


def simulate_batch(sys, pm, tube, epsilon, seeds, dt=None, max_time=1e4, start=None):
    """Simulate independent trajectories (vectorized) until each leaves the tube interior."""
    dt = _check_dt(sys, dt)
    if epsilon < 0:
        raise InvalidParameter("epsilon must be nonnegative")
    seeds = [int(s) for s in seeds]
    B, n = len(seeds), sys.n
    delta = pm.delta
    curve = tube.manifold
    x0 = tube.point(0.0) if start is None else np.asarray(start, float)
    X = np.tile(x0, (B, 1))
    phase = np.full(B, curve.project_many(x0[None])[0][0])
    alive = np.arange(B)
    n_steps = int(np.ceil(max_time / dt))
    sq = np.sqrt(epsilon * dt)
    out = [None] * B
    noise = None
    for k in range(n_steps):
        j = k % CHUNK
        if j == 0:
            blk = k // CHUNK
            noise = np.stack([_noise_block(seeds[i], blk, n) for i in alive]) if epsilon > 0 else None
        step = sys.drift(X, delta) * dt
        if noise is not None:
            step += sq * noise[:, j]
        X = X + step
        phase, dist = curve.project_many(X, guess=phase)
        u = tube.phase_offset(phase)
        band = 1e-9
        done = (u <= -tube.delta1 + band) | (u >= tube.delta2 - band) | (dist >= tube.radius - band)
        if np.any(done):
            t_exit = (k + 1) * dt
            for loc in np.flatnonzero(done):
                i = alive[loc]
                cls = tube.exit_class(u[loc], dist[loc])
                out[i] = EscapeRecord(
                    seeds[i], float(epsilon), t_exit, X[loc].copy(), float(phase[loc]), float(u[loc]), cls.value, False
                )
            keep = ~done
            alive, X, phase = alive[keep], X[keep], phase[keep]
            if noise is not None:
                noise = noise[keep]
            if len(alive) == 0:
                break
    for loc, i in enumerate(alive):
        u = float(tube.phase_offset(phase[loc]))
        out[i] = EscapeRecord(
            seeds[i], float(epsilon), n_steps * dt, X[loc].copy(), float(phase[loc]), u, TubeClass.INTERIOR.value, True
        )
    return out


def simulate_until_exit(sys, pm, tube, epsilon, seed, dt=None, max_time=1e4, start=None):
    """One Euler-Maruyama trajectory from A^delta (or ``start``) until it leaves the tube."""
    return simulate_batch(sys, pm, tube, epsilon, [seed], dt, max_time, start)[0]


@dataclass
class EscapeStats:
    epsilon: float
    n: int
    mean_exit_time: float
    eps_log_mean: float
    ci_eps_log_mean: tuple
    truncated_fraction: float
    class_fractions: dict
    near_end_fraction: float
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    records: list = field(repr=False, default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def reliable(self):
        return self.truncated_fraction <= 0.05


def _stats(records, tube, epsilon, rng, W_ref=None, bins=48):
    n = len(records)
    times = np.array([r.exit_time for r in records])
    trunc = np.array([r.truncated for r in records])
    ok = times[~trunc]
    msgs = []
    if trunc.mean() > 0.05:
        msgs.append(f"truncation fraction {trunc.mean():.1%} exceeds 5%; exponent unreliable")
        warnings.warn(msgs[-1], ValidityWarning, stacklevel=3)
    if W_ref is not None and epsilon >= W_ref / 2:
        msgs.append(f"epsilon={epsilon} >= W/2={W_ref / 2:.3g}; exponent estimate meaningless")
        warnings.warn(msgs[-1], ValidityWarning, stacklevel=3)
    if len(ok):
        mean = float(ok.mean())
        boot = ok[rng.integers(0, len(ok), size=(BOOTSTRAP, len(ok)))].mean(axis=1)
        ci = tuple(float(epsilon * np.log(v)) for v in np.percentile(boot, [2.5, 97.5]))
        elm = float(epsilon * np.log(mean))
    else:
        mean, elm, ci = float("nan"), float("nan"), (float("nan"), float("nan"))
    classes = [r.boundary_class for r in records if not r.truncated]
    fr = {c.value: (classes.count(c.value) / len(classes) if classes else 0.0)
          for c in (TubeClass.LATERAL, TubeClass.END_MINUS, TubeClass.END_PLUS)}
    u = np.array([r.phase_offset for r in records if not r.truncated])
    near = np.minimum(np.abs(u + tube.delta1), np.abs(u - tube.delta2)) <= END_WINDOW if len(u) else np.array([])
    edges = np.linspace(-tube.delta1, tube.delta2, bins + 1)
    counts = np.histogram(np.clip(u, -tube.delta1, tube.delta2), bins=edges)[0] if len(u) else np.zeros(bins, int)
    return EscapeStats(
        epsilon, n, mean, elm, ci, float(trunc.mean()), fr,
        float(near.mean()) if len(u) else 0.0, edges, counts, list(records), msgs,
    )


def _run_chunk(args):
    sys, pm, tube, eps, seeds, dt, max_time, start = args
    return simulate_batch(sys, pm, tube, eps, seeds, dt, max_time, start)


def escape_ensemble(
    sys, pm, tube, epsilons, n_samples, master_seed, dt=None, max_time=1e4, W_ref=None, batch=256, workers=1,
    start=None,
):
    """Independent exit simulations for each noise level with bootstrap confidence intervals.

    Trajectory ``i`` at noise level index ``j`` uses the seed derived from
    ``(master_seed, j, i)``; batches may run in worker processes without
    changing any result. ``start`` replaces A^delta as the initial state.
    """
    if len(epsilons) == 0:
        raise InvalidParameter("empty epsilon list")
    if n_samples < 100:
        raise InvalidParameter("need at least 100 samples per epsilon")
    out = []
    for j, eps in enumerate(epsilons):
        seeds = derive_seeds(master_seed, j, n_samples)
        jobs = [(sys, pm, tube, eps, seeds[a:a + batch], dt, max_time, start) for a in range(0, n_samples, batch)]
        if workers > 1:
            with ProcessPoolExecutor(workers) as ex:
                parts = list(ex.map(_run_chunk, jobs))
        else:
            parts = [_run_chunk(job) for job in jobs]
        records = [r for p in parts for r in p]
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(j, 2**32))))
        out.append(_stats(records, tube, eps, rng, W_ref))
    return out
