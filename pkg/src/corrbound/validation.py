"""Trajectory-level data splitting and empirical coverage of a bound.

Coverage of a bound B on held-out observations is the fraction of (delta,
rho) pairs with rho <= B(delta) — pooled over all pairs, or averaged over
trajectories so each trajectory counts equally.  Scoring refuses to run
when the data overlaps the bound's training set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bounds import BoundFunction, EnlargementParams, evaluate_batch, hash_ids
from .dynamics import CONVERGED, HIT_CAP, Trajectory, post_transient_pairs
from .errors import EmptyValidationSet, TooFewTrajectories, TrainingOverlap

WEIGHTINGS = ("pooled", "trajectory_weighted")


@dataclass(frozen=True)
class SplitSpec:
    construction_fraction: float = 0.7
    split_seed: int = 0

    def __post_init__(self):
        if not 0 < self.construction_fraction < 1:
            raise ValueError("construction_fraction must be in (0, 1)")
        if not 0 <= self.split_seed < 2**64:
            raise ValueError("split_seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class CoverageReport:
    """Coverage of one bound variant on one validation set.

    covered and n_pairs are raw pair counts; for pooled weighting
    coverage == covered / n_pairs exactly, while trajectory_weighted stores
    the mean of per-trajectory fractions in coverage (the integer counts are
    kept for reference).  stratum is the matrix dimension when the report is
    restricted to one dimension, else None.
    """

    bound_id: str
    level: float
    variant: str
    n_pairs: int
    covered: int
    coverage: float
    weighting: str
    stratum: int | None = None

    def __post_init__(self):
        if not 0 <= self.covered <= self.n_pairs:
            raise ValueError("covered must be between 0 and n_pairs")
        if (self.weighting == "pooled"
                and self.coverage != self.covered / self.n_pairs):
            raise ValueError("pooled coverage must equal covered / n_pairs")


def split_trajectories(trials: Sequence[Trajectory],
                       spec: SplitSpec) -> tuple[list[Trajectory], list[Trajectory]]:
    """Deterministic trajectory-level split.

    Each trajectory lands wholly on one side.  The construction side gets
    round(fraction * total) trajectories (clamped so neither side is
    empty); assignment comes from a seeded shuffle, so the same spec always
    produces the same partition.
    """
    total = len(trials)
    if total < 2:
        raise TooFewTrajectories(f"need at least 2 trajectories, got {total}")
    k = round(spec.construction_fraction * total)
    k = min(max(k, 1), total - 1)
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=spec.split_seed)))
    perm = rng.permutation(total)
    construction = [trials[i] for i in perm[:k]]
    validation = [trials[i] for i in perm[k:]]
    return construction, validation


def _check_disjoint(bound: BoundFunction, trials: Sequence[Trajectory]) -> None:
    ids = {t.trial_id for t in trials}
    prov = bound.provenance
    if prov.training_ids is not None:
        overlap = ids & prov.training_ids
        if overlap:
            raise TrainingOverlap(
                f"{len(overlap)} trajectory ids appear in the training set "
                f"(e.g. {sorted(overlap)[:5]})")
    elif hash_ids(ids) == prov.training_hash:
        raise TrainingOverlap(
            "validation ids hash to the bound's training hash")


def coverage(bound: BoundFunction, trials: Sequence[Trajectory], *,
             variant: str = "q",
             params: EnlargementParams | None = None,
             weighting: str = "pooled",
             k_post: int | None = None,
             stratum: int | None = None) -> CoverageReport:
    """Empirical coverage of `bound` on the post-transient pairs of `trials`.

    pooled: fraction of all pairs with rho <= B(delta).
    trajectory_weighted: mean over trajectories of each trajectory's own
    fraction (trajectories with an empty post-transient set are skipped).
    """
    if weighting not in WEIGHTINGS:
        raise ValueError(f"weighting must be one of {WEIGHTINGS}")
    _check_disjoint(bound, trials)
    if k_post is None:
        k_post = bound.provenance.k_post
    covered_total = 0
    n_total = 0
    fractions = []
    for t in trials:
        if t.status not in (CONVERGED, HIT_CAP):
            continue
        pairs = post_transient_pairs(t, k_post)
        if not pairs:
            continue
        arr = np.asarray(pairs)
        vals = evaluate_batch(bound, arr[:, 0], params, variant)
        hits = int((arr[:, 1] <= vals).sum())
        covered_total += hits
        n_total += len(pairs)
        fractions.append(hits / len(pairs))
    if n_total == 0:
        raise EmptyValidationSet("no scorable pairs in the validation data")
    if weighting == "pooled":
        cov = covered_total / n_total
    else:
        cov = float(np.mean(fractions))
    return CoverageReport(bound_id=bound.provenance.training_hash,
                          level=bound.level, variant=variant,
                          n_pairs=n_total, covered=covered_total,
                          coverage=cov, weighting=weighting, stratum=stratum)


def coverage_by_dimension(bound: BoundFunction, trials: Sequence[Trajectory],
                          **kwargs) -> list[CoverageReport]:
    """One coverage report per matrix dimension present in `trials`."""
    dims = sorted({t.n for t in trials})
    return [coverage(bound, [t for t in trials if t.n == d],
                     stratum=d, **kwargs)
            for d in dims]
