"""Structural summaries of a bound: where it first exceeds 1, its worst
case over bins, bootstrap uncertainty for both, sensitivity to the merge
threshold, and an upper-tail jump diagnostic on the raw ratios.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .bounds import (BoundConfig, BoundFunction, build_bound,
                     order_statistic_quantile)
from .dynamics import Trajectory, collect_pairs
from .errors import DegenerateRange, EmptySample, InsufficientData

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StructuralSummary:
    """First-crossing data of one bound.

    b_star is the 1-based index of the first merged bin whose value exceeds
    1 (None when every bin value is <= 1), delta_star the geometric mean of
    that bin's edges, envelope_sup the maximum bin value.
    """

    n: int | None
    level: float
    b_star: int | None
    delta_star: float | None
    envelope_sup: float
    bound_at_threshold: float | None


@dataclass(frozen=True)
class BootstrapConfig:
    n_resamples: int = 1000
    seed: int = 0
    interval_levels: tuple[float, float] = (0.025, 0.975)

    def __post_init__(self):
        if self.n_resamples < 2:
            raise ValueError("n_resamples must be at least 2")
        lo, hi = self.interval_levels
        if not 0 < lo < hi <= 1:
            raise ValueError("interval_levels must satisfy 0 < lo < hi <= 1")


@dataclass(frozen=True)
class BootstrapSummary:
    statistic: str
    point_estimate: float | None
    median: float | None
    ci_low: float | None
    ci_high: float | None


@dataclass(frozen=True)
class BootstrapResult:
    """Summaries plus bookkeeping: how many resamples failed to build a
    bound, and how many built one with no crossing (those contribute to the
    envelope statistic but not to delta_star).  samples keeps the
    per-resample statistic lists when requested."""

    summaries: tuple[BootstrapSummary, ...]
    n_resamples: int
    n_failed: int
    n_no_crossing: int
    samples: dict[str, tuple[float, ...]] | None = None


def expansion_threshold(bound: BoundFunction) -> StructuralSummary:
    """Scan merged bins in increasing delta order for the first value > 1."""
    values = bound.bin_values
    edges = bound.partition.edges
    b_star = None
    for i, v in enumerate(values):
        if v > 1:
            b_star = i + 1
            break
    if b_star is None:
        delta_star = bound_at = None
    else:
        delta_star = math.sqrt(edges[b_star - 1] * edges[b_star])
        bound_at = values[b_star - 1]
    return StructuralSummary(n=bound.provenance.n, level=bound.level,
                             b_star=b_star, delta_star=delta_star,
                             envelope_sup=max(values),
                             bound_at_threshold=bound_at)


def _resample_stream(seed: int, r: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(r,))
    return np.random.Generator(np.random.Philox(seq))


def _unique_dim(trials: Sequence[Trajectory]) -> int | None:
    dims = {t.n for t in trials}
    return dims.pop() if len(dims) == 1 else None


def bootstrap_structural(trials: Sequence[Trajectory],
                         bound_cfg: BoundConfig,
                         boot_cfg: BootstrapConfig, *,
                         k_post: int = 2,
                         jobs: int | None = None,
                         index_sampler: Callable[[np.random.Generator, int],
                                                 np.ndarray] | None = None,
                         return_samples: bool = False) -> BootstrapResult:
    """Resample entire trajectories with replacement and redo the
    bound + threshold analysis per resample.

    Each resample r has its own counter-based stream keyed by (seed, r), so
    results do not depend on scheduling.  Interval endpoints are type-1
    order statistics of the resampled statistics: the ceil(alpha * B)-th
    smallest of the B successful values.  index_sampler replaces the
    with-replacement draw (given the stream and the trajectory count it
    returns index arrays); the default is rng.integers(0, N, N).
    """
    if not trials:
        raise InsufficientData("no trajectories to resample")
    n_dim = _unique_dim(trials)
    per_traj = [collect_pairs([t], k_post) for t in trials]
    full_pairs = np.column_stack([
        np.concatenate([p[1] for p in per_traj]),
        np.concatenate([p[2] for p in per_traj])])
    point_bound = build_bound(full_pairs, bound_cfg, n=n_dim, k_post=k_post)
    point = expansion_threshold(point_bound)

    def one(r: int) -> tuple[float | None, float | None]:
        """(delta_star, envelope) of resample r; (None, None) on failure."""
        rng = _resample_stream(boot_cfg.seed, r)
        if index_sampler is None:
            idx = rng.integers(0, len(trials), size=len(trials))
        else:
            idx = index_sampler(rng, len(trials))
        pairs = np.column_stack([
            np.concatenate([per_traj[i][1] for i in idx]),
            np.concatenate([per_traj[i][2] for i in idx])])
        try:
            b = build_bound(pairs, bound_cfg, n=n_dim, k_post=k_post)
        except (InsufficientData, DegenerateRange):
            return None, None
        s = expansion_threshold(b)
        return s.delta_star, s.envelope_sup

    rs = range(1, boot_cfg.n_resamples + 1)
    if jobs is not None and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, rs))
    else:
        outcomes = [one(r) for r in rs]

    n_failed = sum(1 for d, e in outcomes if e is None)
    envs = [e for _, e in outcomes if e is not None]
    dstars = [d for d, e in outcomes if e is not None and d is not None]
    n_no_crossing = len(envs) - len(dstars)
    if n_failed:
        logger.warning("%d of %d resamples failed bound construction",
                       n_failed, boot_cfg.n_resamples)
    lo, hi = boot_cfg.interval_levels

    def summarize(name: str, point_val: float | None,
                  stats: list[float]) -> BootstrapSummary:
        if not stats:
            return BootstrapSummary(name, point_val, None, None, None)
        return BootstrapSummary(
            statistic=name, point_estimate=point_val,
            median=order_statistic_quantile(stats, 0.5),
            ci_low=order_statistic_quantile(stats, lo),
            ci_high=order_statistic_quantile(stats, hi))

    summaries = (summarize("delta_star", point.delta_star, dstars),
                 summarize("envelope_sup", point.envelope_sup, envs))
    samples = ({"delta_star": tuple(dstars), "envelope_sup": tuple(envs)}
               if return_samples else None)
    return BootstrapResult(summaries=summaries,
                           n_resamples=boot_cfg.n_resamples,
                           n_failed=n_failed, n_no_crossing=n_no_crossing,
                           samples=samples)


@dataclass(frozen=True)
class SensitivityRow:
    n: int | None
    c_min: int
    delta_star: float | None
    envelope_sup: float
    min_count: int


def sensitivity_cmin(trials: Sequence[Trajectory], bound_cfg: BoundConfig,
                     cmin_values: Sequence[int], *,
                     k_post: int = 2) -> list[SensitivityRow]:
    """Rebuild the bound at each minimum merged-bin count."""
    if not trials:
        raise InsufficientData("no trajectories")
    n_dim = _unique_dim(trials)
    _, deltas, rhos = collect_pairs(trials, k_post)
    pairs = np.column_stack([deltas, rhos])
    rows = []
    for c in cmin_values:
        cfg = replace(bound_cfg, c_min=int(c))
        b = build_bound(pairs, cfg, n=n_dim, k_post=k_post)
        s = expansion_threshold(b)
        counts = b.partition.counts
        assert counts is not None
        rows.append(SensitivityRow(n=n_dim, c_min=int(c),
                                   delta_star=s.delta_star,
                                   envelope_sup=s.envelope_sup,
                                   min_count=min(counts)))
    return rows


@dataclass(frozen=True)
class JumpReport:
    """Largest consecutive-quantile ratio over a level grid, where it
    occurs, and how much mass sits strictly above the pre-jump quantile."""

    n_pairs: int
    max_ratio: float
    p_low: float
    p_high: float
    q_low: float
    q_high: float
    tail_count: int
    tail_fraction: float
    n_tail_trajectories: int | None


def quantile_jump_scan(pairs, grid: Sequence[float], *,
                       trial_ids: Sequence[int] | None = None) -> JumpReport:
    """Scan empirical quantiles of the pooled ratios at consecutive grid
    levels and report the sharpest jump.

    Ratios <= 0 are dropped (counted in the log) like at bound ingestion.
    trial_ids, when given, must parallel `pairs`; the report then counts
    distinct trajectories contributing tail observations.
    """
    arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs,
                     dtype=float).reshape(-1, 2)
    if arr.size == 0:
        raise EmptySample("no pairs to scan")
    grid = [float(g) for g in grid]
    if len(grid) < 2:
        raise ValueError("grid needs at least two levels")
    if any(not 0 < g <= 1 for g in grid):
        raise ValueError("grid levels must be in (0, 1]")
    if any(a >= b for a, b in zip(grid, grid[1:])):
        raise ValueError("grid levels must be strictly increasing")
    rhos = arr[:, 1]
    ids = None if trial_ids is None else np.asarray(trial_ids)
    keep = rhos > 0
    n_dropped = int((~keep).sum())
    if n_dropped:
        logger.warning("dropped %d non-positive ratios", n_dropped)
        rhos = rhos[keep]
        ids = ids[keep] if ids is not None else None
    if rhos.size == 0:
        raise EmptySample("no positive ratios to scan")
    srt = np.sort(rhos)
    m = srt.size
    qs = [float(srt[min(math.ceil(g * m), m) - 1]) for g in grid]
    ratios = [qs[i + 1] / qs[i] for i in range(len(qs) - 1)]
    i_max = int(np.argmax(ratios))
    q_low = qs[i_max]
    tail_mask = rhos > q_low
    tail_count = int(tail_mask.sum())
    n_tail_traj = (int(np.unique(ids[tail_mask]).size)
                   if ids is not None else None)
    return JumpReport(n_pairs=m, max_ratio=float(ratios[i_max]),
                      p_low=grid[i_max], p_high=grid[i_max + 1],
                      q_low=q_low, q_high=qs[i_max + 1],
                      tail_count=tail_count, tail_fraction=tail_count / m,
                      n_tail_trajectories=n_tail_traj)
