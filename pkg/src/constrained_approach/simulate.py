"""Repeated play, run traces and Monte Carlo aggregation.

Runs are advanced in lockstep batches: one policy state holds every run of a
batch and each stage is a handful of vectorized operations.  Each run draws
from its own counter-based stream (see :mod:`.rng`), so a trace depends only
on its seed, never on the batch it was computed in.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .game import GameError, VectorPayoffGame
from .geometry import ConvexBody, Region, distance_to_body, region_contains
from .rng import StageUniforms, sample_index
from .strategies import PublicHistory, adversary_step

SCHEMA_VERSION = 1
DEFAULT_EPSILONS = (0.5, 0.2, 0.1, 0.05)


class SimulationError(RuntimeError):
    def __init__(self, message, seed=None):
        super().__init__(message if seed is None else f"{message} (seed {seed})")
        self.seed = seed


def default_stride(horizon):
    return 1 if horizon <= 10_000 else 10


def recorded_stages(horizon, stride):
    stages = np.arange(stride, horizon + 1, stride)
    if stages.size == 0 or stages[-1] != horizon:
        stages = np.append(stages, horizon)
    return stages


# ---------------------------------------------------------------------------
# traces


@dataclass(frozen=True, eq=False)
class RunTrace:
    """One realized run.  ``averages``/``dist_to_target`` are sampled at ``recorded``; the rest is per stage."""

    seed: int
    stages: int
    actions: np.ndarray
    recorded: np.ndarray
    averages: np.ndarray
    in_region_flags: np.ndarray
    dist_to_target: np.ndarray
    safe_count_curve: np.ndarray | None = None
    audit: dict = field(default_factory=dict)

    @property
    def stayed_in_region(self):
        return bool(np.all(self.in_region_flags))

    @property
    def exit_stage(self):
        bad = np.flatnonzero(~self.in_region_flags)
        return int(bad[0]) + 1 if bad.size else None

    def full_averages(self, game: VectorPayoffGame):
        """``g_t`` for every stage, rebuilt from the actions with the simulator's arithmetic."""
        pay = game.payoff[self.actions[:, 0], self.actions[:, 1]]
        sums = np.cumsum(pay, axis=0)
        return sums / np.arange(1, self.stages + 1)[:, None]


def write_trace_csv(trace: RunTrace, game: VectorPayoffGame, target: ConvexBody, region: Region, path):
    """Per-stage CSV: ``stage,i,j,g_1..g_n,in_D,dist_A,f`` with 17 significant digits."""
    g = trace.full_averages(game)
    dist = distance_to_body(g, target)
    inside = region_contains(region, g)
    header = ["stage", "i", "j"] + [f"g_{k + 1}" for k in range(game.dim)] + ["in_D", "dist_A", "f"]
    f = trace.safe_count_curve
    rows = []
    for t in range(trace.stages):
        rows.append(
            [t + 1, int(trace.actions[t, 0]), int(trace.actions[t, 1])]
            + [f"{v:.17g}" for v in g[t]]
            + [int(inside[t]), f"{dist[t]:.17g}", "" if f is None else int(f[t])]
        )
    atomic_write(path, lambda fh: _write_rows(fh, header, rows))


def _write_rows(fh, header, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)


def atomic_write(path, writer):
    """Write through a temporary file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# the engine


@dataclass(frozen=True, eq=False)
class BatchResult:
    seeds: np.ndarray
    horizon: int
    recorded: np.ndarray
    actions: np.ndarray | None
    in_region: np.ndarray
    averages: np.ndarray
    dist: np.ndarray
    safe_counts: np.ndarray | None
    recorded_safe_counts: np.ndarray | None
    audit: dict

    def trace(self, k) -> RunTrace:
        return RunTrace(
            seed=int(self.seeds[k]),
            stages=self.horizon,
            actions=None if self.actions is None else self.actions[k],
            recorded=self.recorded,
            averages=self.averages[k],
            in_region_flags=self.in_region[k],
            dist_to_target=self.dist[k],
            safe_count_curve=None if self.safe_counts is None else self.safe_counts[k],
            audit={name: float(v[k]) for name, v in self.audit.items()},
        )


def _check_policy(game, strategy):
    own = getattr(strategy, "game", None)
    if own is None:
        return
    if own.payoff.shape != game.payoff.shape or not np.array_equal(own.payoff, game.payoff):
        raise GameError("strategy was built for a different game")


def simulate_batch(game: VectorPayoffGame, strategy, adversary, horizon, seeds, region: Region,
                   target: ConvexBody, stride=None, keep_actions=True, keep_safe_curve=True):
    """Play ``len(seeds)`` independent runs in lockstep."""
    horizon = int(horizon)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    _check_policy(game, strategy)
    seeds = np.asarray(seeds, dtype=np.int64)
    runs = seeds.shape[0]
    stride = default_stride(horizon) if stride is None else int(stride)
    if stride < 1:
        raise ValueError("trace stride must be >= 1")
    rec = recorded_stages(horizon, stride)
    rec_index = np.full(horizon + 1, -1)
    rec_index[rec] = np.arange(rec.size)

    state = strategy.start(runs)
    history = PublicHistory.start(game.dim, runs)
    uniforms = StageUniforms(seeds)
    payoff = game.payoff
    small = max(game.num_actions_p1, game.num_actions_p2) < 127

    actions = np.empty((runs, horizon, 2), dtype=np.int8 if small else np.int32) if keep_actions else None
    inside = np.empty((runs, horizon), dtype=bool)
    averages = np.empty((runs, rec.size, game.dim))
    dist = np.empty((runs, rec.size))
    tracks = strategy.tracks_safe_count
    curve = np.empty((runs, horizon), dtype=np.int32) if tracks and keep_safe_curve else None
    rec_f = np.empty((runs, rec.size), dtype=np.int64) if tracks else None
    audit = {}
    sums = np.zeros((runs, game.dim))

    for t in range(horizon):
        mix1, decision = strategy.act(state)
        mix2 = adversary_step(adversary, history)
        u = uniforms.stage(t)
        i = sample_index(np.broadcast_to(mix1, (runs, game.num_actions_p1)), u[:, 0])
        j = sample_index(np.broadcast_to(mix2, (runs, game.num_actions_p2)), u[:, 1])
        pay = payoff[i, j]
        sums += pay
        g = sums / (t + 1)
        state = strategy.update(state, decision, pay, j)
        history = PublicHistory(t + 1, g, j)
        inside[:, t] = region_contains(region, g)
        if actions is not None:
            actions[:, t, 0] = i
            actions[:, t, 1] = j
        f = strategy.safe_counts(state) if tracks else None
        if curve is not None:
            curve[:, t] = f
        k = rec_index[t + 1]
        if k >= 0:
            averages[:, k] = g
            dist[:, k] = distance_to_body(g, target)
            if rec_f is not None:
                rec_f[:, k] = f
        for name, vals in strategy.audit(state, decision).items():
            prev = audit.get(name)
            vals = np.broadcast_to(vals, (runs,))
            audit[name] = vals.copy() if prev is None else np.fmax(prev, vals)
    return BatchResult(seeds, horizon, rec, actions, inside, averages, dist, curve, rec_f, audit)


def run(game, strategy, adversary, horizon, seed, region, target, stride=None) -> RunTrace:
    """One run; deterministic in ``seed``."""
    return simulate_batch(game, strategy, adversary, horizon, [seed], region, target, stride).trace(0)


# ---------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    points: int
    zeros_excluded: int

    def as_dict(self):
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2,
                "points": self.points, "zeros_excluded": self.zeros_excluded}


def fit_rate_curves(stages, dist, t_min=100, quantile=0.95, t_max=None) -> RateFit:
    """Least squares of ``log q_t`` on ``log t``, ``q_t`` the across-run quantile of the distances."""
    if not 0 < quantile < 1:
        raise ValueError("quantile must lie in (0, 1)")
    if t_min < 1:
        raise ValueError("t_min must be >= 1")
    stages = np.asarray(stages)
    dist = np.atleast_2d(np.asarray(dist, dtype=float))
    keep = stages >= t_min
    if t_max is not None:
        keep &= stages <= t_max
    q = np.quantile(dist[:, keep], quantile, axis=0)
    t = stages[keep]
    positive = q > 0
    zeros = int(np.sum(~positive))
    x, y = np.log(t[positive]), np.log(q[positive])
    if x.size < 10:
        raise ValueError(f"only {x.size} fit points (need at least 10)")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res <= 1e-24 else 0.0)
    return RateFit(float(slope), float(intercept), float(r2), int(x.size), zeros)


def fit_rate(traces, t_min=100, quantile=0.95, t_max=None) -> RateFit:
    if not traces:
        raise ValueError("no traces")
    stages = traces[0].recorded
    if any(not np.array_equal(tr.recorded, stages) for tr in traces):
        raise ValueError("traces are recorded at different stages")
    return fit_rate_curves(stages, np.stack([tr.dist_to_target for tr in traces]), t_min, quantile, t_max)


@dataclass(frozen=True)
class SafeFrequencyStats:
    """``f(h_t)/sqrt(t)`` per run and checkpoint, and doubling ratios ``f(2t) / max(f(t), 1)``."""

    checkpoints: tuple
    normalized: np.ndarray
    doubling_stages: tuple
    doubling_ratios: np.ndarray

    @property
    def exceeds_sqrt_growth(self):
        """Flag: the typical doubling ratio is clearly above ``sqrt(2)``."""
        if self.doubling_ratios.size == 0:
            return False
        return bool(np.median(self.doubling_ratios) > 1.7)

    def as_dict(self):
        def summary(a):
            return {"mean": float(np.mean(a)), "median": float(np.median(a)),
                    "q95": float(np.quantile(a, 0.95)), "max": float(np.max(a))}

        return {
            "normalized": {str(t): summary(self.normalized[:, k]) for k, t in enumerate(self.checkpoints)},
            "doubling": {str(t): summary(self.doubling_ratios[:, k]) for k, t in enumerate(self.doubling_stages)},
            "exceeds_sqrt_growth": self.exceeds_sqrt_growth,
        }


def safe_frequency_from_counts(stages, counts, checkpoints) -> SafeFrequencyStats:
    stages = np.asarray(stages)
    counts = np.atleast_2d(counts)
    pos = {int(s): k for k, s in enumerate(stages)}
    cps = tuple(int(c) for c in checkpoints if int(c) in pos)
    if not cps:
        raise ValueError("no checkpoint falls on a recorded stage")
    norm = np.stack([counts[:, pos[c]] / math.sqrt(c) for c in cps], axis=1)
    dbl = tuple(c for c in cps if 2 * c in pos)
    ratios = np.stack(
        [counts[:, pos[2 * c]] / np.maximum(counts[:, pos[c]], 1) for c in dbl], axis=1
    ) if dbl else np.empty((counts.shape[0], 0))
    return SafeFrequencyStats(cps, norm, dbl, ratios)


def safe_frequency_growth(traces, checkpoints) -> SafeFrequencyStats:
    if any(tr.safe_count_curve is None for tr in traces):
        raise ValueError("trace has no safe-count curve (not produced by the constrained strategy)")
    horizon = traces[0].stages
    counts = np.stack([tr.safe_count_curve for tr in traces])
    return safe_frequency_from_counts(np.arange(1, horizon + 1), counts, checkpoints)


def epsilon_attainment(stages, dist, epsilons=DEFAULT_EPSILONS):
    """Earliest recorded ``T`` with empirical ``P[d(g_t, A) < eps for all t >= T] > 1 - eps``.

    Only recorded stages are inspected; ``None`` means no such ``T`` within the horizon.
    """
    stages = np.asarray(stages)
    dist = np.atleast_2d(dist)
    runs = dist.shape[0]
    out = {}
    for eps in epsilons:
        bad = dist >= eps
        last_bad = np.where(bad.any(axis=1), bad.shape[1] - 1 - np.argmax(bad[:, ::-1], axis=1), -1)
        entry = np.full(runs, np.inf)
        ok = last_bad < stages.size - 1
        entry[ok] = stages[last_bad[ok] + 1]
        entry.sort()
        need = math.floor((1 - eps) * runs) + 1
        val = entry[need - 1] if need <= runs else np.inf
        out[float(eps)] = None if not np.isfinite(val) else int(val)
    return out


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True, eq=False)
class RunSummaries:
    """Per-run results of a Monte Carlo experiment, sorted by seed."""

    seeds: np.ndarray
    recorded: np.ndarray
    stayed: np.ndarray
    exit_stage: np.ndarray
    dist: np.ndarray
    safe_counts: np.ndarray | None
    audit: dict


def _summarize(batch: BatchResult) -> RunSummaries:
    exits = np.where(batch.in_region.all(axis=1), 0, np.argmax(~batch.in_region, axis=1) + 1)
    return RunSummaries(batch.seeds, batch.recorded, batch.in_region.all(axis=1), exits, batch.dist,
                        batch.recorded_safe_counts, batch.audit)


def _merge(parts):
    order = np.argsort(np.concatenate([p.seeds for p in parts]), kind="stable")

    def cat(get):
        vals = [get(p) for p in parts]
        if any(v is None for v in vals):
            return None
        return np.concatenate(vals)[order]

    names = sorted(set().union(*(p.audit.keys() for p in parts)))
    audit = {}
    for name in names:
        audit[name] = np.concatenate(
            [p.audit.get(name, np.full(p.seeds.shape, -np.inf)) for p in parts]
        )[order]
    return RunSummaries(
        seeds=cat(lambda p: p.seeds),
        recorded=parts[0].recorded,
        stayed=cat(lambda p: p.stayed),
        exit_stage=cat(lambda p: p.exit_stage),
        dist=cat(lambda p: p.dist),
        safe_counts=cat(lambda p: p.safe_counts),
        audit=audit,
    )


def _run_chunk(args):
    game, strategy_factory, adversary_factory, horizon, seeds, region, target, stride = args
    try:
        batch = simulate_batch(game, strategy_factory(), adversary_factory(), horizon, seeds, region,
                               target, stride, keep_actions=False, keep_safe_curve=False)
    except (GameError, SimulationError):
        raise
    except Exception as exc:  # noqa: BLE001 - report which seeds were affected
        raise SimulationError(f"run failed: {exc!r}", int(seeds[0])) from exc
    return _summarize(batch)


@dataclass(frozen=True, eq=False)
class MonteCarloReport:
    runs: int
    horizon: int
    base_seed: int
    stay_in_region_rate: float
    exit_stage_histogram: dict
    rate_fit: RateFit | None
    rate_fit_error: str | None
    safe_frequency: SafeFrequencyStats | None
    epsilon_attainment: dict
    final_distance: dict
    audit: dict
    labels: dict = field(default_factory=dict)
    details: RunSummaries | None = field(default=None, repr=False)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "labels": dict(self.labels),
            "runs": self.runs,
            "horizon": self.horizon,
            "base_seed": self.base_seed,
            "seeds": [self.base_seed, self.base_seed + self.runs - 1],
            "stay_in_region_rate": self.stay_in_region_rate,
            "exit_stage_histogram": {str(k): v for k, v in sorted(self.exit_stage_histogram.items())},
            "rate_fit": None if self.rate_fit is None else self.rate_fit.as_dict(),
            "rate_fit_error": self.rate_fit_error,
            "safe_frequency": None if self.safe_frequency is None else self.safe_frequency.as_dict(),
            "epsilon_attainment": {str(k): v for k, v in self.epsilon_attainment.items()},
            "final_distance": self.final_distance,
            "audit": self.audit,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_float)


def _json_float(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def default_safe_checkpoints(horizon):
    return tuple(horizon // d for d in (16, 8, 4, 2) if horizon // d >= 1)


def monte_carlo(game, strategy_factory, adversary_factory, horizon, runs, base_seed, region, target, *,
                stride=None, chunk_size=500, workers=1, t_min=100, quantile=0.95, safe_checkpoints=None,
                epsilons=DEFAULT_EPSILONS, labels=None) -> MonteCarloReport:
    """Aggregate ``runs`` independent runs with seeds ``base_seed .. base_seed + runs - 1``.

    Factories build fresh strategy and adversary values; with ``workers > 1``
    they must be picklable.  The report does not depend on chunking or on the
    order in which chunks finish.
    """
    runs = int(runs)
    if runs < 1:
        raise ValueError("runs must be >= 1")
    stride = default_stride(horizon) if stride is None else int(stride)
    seeds = np.arange(base_seed, base_seed + runs, dtype=np.int64)
    chunks = [seeds[k : k + chunk_size] for k in range(0, runs, chunk_size)]
    jobs = [(game, strategy_factory, adversary_factory, horizon, c, region, target, stride) for c in chunks]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(job) for job in jobs]
    s = _merge(parts)
    return build_report(s, horizon, base_seed, t_min, quantile, safe_checkpoints, epsilons, labels)


def build_report(s: RunSummaries, horizon, base_seed, t_min=100, quantile=0.95, safe_checkpoints=None,
                 epsilons=DEFAULT_EPSILONS, labels=None) -> MonteCarloReport:
    runs = s.seeds.shape[0]
    exits = s.exit_stage[s.exit_stage > 0]
    hist = {int(k): int(v) for k, v in zip(*np.unique(exits, return_counts=True))}
    fit, fit_err = None, None
    try:
        fit = fit_rate_curves(s.recorded, s.dist, t_min, quantile)
    except ValueError as exc:
        fit_err = str(exc)
    safe = None
    if s.safe_counts is not None:
        cps = safe_checkpoints or default_safe_checkpoints(horizon)
        try:
            safe = safe_frequency_from_counts(s.recorded, s.safe_counts, cps)
        except ValueError:
            safe = None
    final = s.dist[:, -1]
    final_distance = {"mean": float(final.mean()), "median": float(np.median(final)),
                      "q95": float(np.quantile(final, 0.95)), "max": float(final.max())}
    audit = {name: float(np.max(v)) for name, v in s.audit.items()}
    return MonteCarloReport(
        runs=runs,
        horizon=int(horizon),
        base_seed=int(base_seed),
        stay_in_region_rate=float(np.mean(s.stayed)),
        exit_stage_histogram=hist,
        rate_fit=fit,
        rate_fit_error=fit_err,
        safe_frequency=safe,
        epsilon_attainment=epsilon_attainment(s.recorded, s.dist, epsilons),
        final_distance=final_distance,
        audit=audit,
        labels=dict(labels or {}),
        details=s,
    )
