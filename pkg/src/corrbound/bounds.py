"""Conditional quantile bounds on contraction ratios.

Given (delta, rho) observations, the bound at level p is built by binning
delta on a logarithmic grid, merging adjacent bins left to right until each
merged bin holds at least c_min observations, and taking the per-bin
ceil(p*m)-th order statistic of log rho.  Evaluation is piecewise constant
in delta, clamped to the first/last bin outside the trimmed range.

Two deterministic enlargements are available on top of the baseline bound:
a log-scale inflation by exp(tau^2/2) and a linear dilation by
(1 + lambda*(1 - alpha)).  Both are uniform multiplicative factors, so the
pointwise ordering baseline <= inflated <= dilated holds exactly.
"""

from __future__ import annotations

import bisect
import hashlib
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateRange, EmptySample, InsufficientData

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
VARIANTS = ("q", "tc", "tol")


@dataclass(frozen=True)
class BoundConfig:
    """Construction parameters: level p, initial bin count m, minimum
    merged-bin count c_min, and trimming quantile q_trim."""

    p: float
    m: int = 30
    c_min: int = 200
    q_trim: float = 0.005

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError("p must be in (0, 1)")
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.c_min < 1:
            raise ValueError("c_min must be at least 1")
        if not 0 < self.q_trim < 0.5:
            raise ValueError("q_trim must be in (0, 0.5)")


@dataclass(frozen=True)
class EnlargementParams:
    """Enlargement knobs: tau (log-scale inflation), lam (dilation
    magnitude, the flag/column name is "lambda"), alpha (dilation
    attenuation)."""

    tau: float = 0.35
    lam: float = 0.25
    alpha: float = 0.9

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must be in [0, 1]")


DEFAULT_ENLARGEMENT = EnlargementParams()


@dataclass(frozen=True)
class BinPartition:
    """Merged-bin edges (length M+1, strictly increasing) and per-bin
    observation counts.  counts is None for bounds loaded from disk (the
    serialized form does not keep them)."""

    edges: tuple[float, ...]
    counts: tuple[int, ...] | None

    def __post_init__(self):
        if len(self.edges) < 2:
            raise ValueError("need at least one bin")
        for a, b in zip(self.edges, self.edges[1:]):
            if not a < b:
                raise ValueError("edges must be strictly increasing")
        if self.counts is not None and len(self.counts) != len(self.edges) - 1:
            raise ValueError("one count per bin required")

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1


@dataclass(frozen=True)
class Provenance:
    """What a bound was built from: config snapshot, data dimension (None if
    mixed or unknown), post-transient cutoff, and a hash identifying the
    training set.  training_ids is populated for bounds built in this
    process and None for loaded ones."""

    config: BoundConfig
    n: int | None
    k_post: int
    training_hash: str
    training_ids: frozenset[int] | None = None


@dataclass(frozen=True)
class BoundFunction:
    """Piecewise-constant bound over merged log-delta bins.

    bin_values holds the per-bin bound values on the linear scale; for
    bounds built in memory these are exact elements of the training sample
    (so within-bin training coverage is exact), while log_quantiles = log of
    those values is what gets serialized.  Bounds loaded from disk
    reconstruct bin_values as exp(log_quantiles), which may differ from the
    original sample element by one ulp.
    """

    partition: BinPartition
    log_quantiles: tuple[float, ...]
    bin_values: tuple[float, ...]
    level: float
    provenance: Provenance

    def __post_init__(self):
        if len(self.log_quantiles) != self.partition.n_bins:
            raise ValueError("one quantile per bin required")
        if len(self.bin_values) != self.partition.n_bins:
            raise ValueError("one value per bin required")

    def __call__(self, delta: float) -> float:
        return evaluate(self, delta)


def hash_ids(ids: Iterable[int]) -> str:
    """Deterministic identifier of a trajectory-id set (order-insensitive)."""
    payload = ",".join(str(i) for i in sorted(set(int(i) for i in ids)))
    return hashlib.sha256(payload.encode("ascii")).hexdigest()[:16]


def hash_pairs(deltas: np.ndarray, rhos: np.ndarray) -> str:
    """Fallback training identifier when trajectory ids are unavailable."""
    payload = ";".join(f"{d:.17g},{r:.17g}" for d, r in zip(deltas, rhos))
    return hashlib.sha256(payload.encode("ascii")).hexdigest()[:16]


def order_statistic_quantile(sample: Sequence[float], level: float) -> float:
    """The ceil(level * len(sample))-th smallest element (no interpolation),
    with the index capped at the sample size."""
    if not 0 < level <= 1:
        raise ValueError("level must be in (0, 1]")
    arr = np.sort(np.asarray(sample, dtype=float))
    if arr.size == 0:
        raise EmptySample("order statistic of an empty sample")
    idx = min(math.ceil(level * arr.size), arr.size)
    return float(arr[idx - 1])


def _log_grid(d_lo: float, d_hi: float, m: int) -> np.ndarray:
    """m+1 log-equispaced edges with exact endpoints."""
    edges = np.exp(np.linspace(math.log(d_lo), math.log(d_hi), m + 1))
    edges[0] = d_lo
    edges[-1] = d_hi
    return edges


def _bin_index(edges: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Half-open bins [a_j, a_{j+1}) with the last bin closed on the right."""
    j = np.searchsorted(edges, deltas, side="right") - 1
    return np.clip(j, 0, len(edges) - 2)


def build_partition(deltas, cfg: BoundConfig) -> BinPartition:
    """Trim, grid, and merge.

    The range is [q_trim, 1-q_trim] empirical quantiles of delta (order
    statistics, so both ends are sample elements).  Original bins are
    accumulated left to right; a merged bin closes as soon as it holds at
    least c_min observations.  A leftover tail with fewer than c_min points
    is folded into the last closed bin, so every merged-bin count is
    >= c_min.
    """
    deltas = np.asarray(deltas, dtype=float)
    if deltas.size == 0:
        raise InsufficientData("no observations")
    if np.any(deltas <= 0):
        raise ValueError("deltas must be positive")
    d_lo = order_statistic_quantile(deltas, cfg.q_trim)
    d_hi = order_statistic_quantile(deltas, 1 - cfg.q_trim)
    if d_lo == d_hi:
        raise DegenerateRange(f"trimmed range collapsed at {d_lo}")
    in_range = deltas[(deltas >= d_lo) & (deltas <= d_hi)]
    if in_range.size < cfg.c_min:
        raise InsufficientData(
            f"{in_range.size} in-range observations < c_min={cfg.c_min}")
    edges = _log_grid(d_lo, d_hi, cfg.m)
    counts = np.bincount(_bin_index(edges, in_range), minlength=cfg.m)
    runs: list[list[int]] = []  # [first_orig_bin, last_orig_bin] per merged bin
    start, acc = 0, 0
    for j in range(cfg.m):
        acc += int(counts[j])
        if acc >= cfg.c_min:
            runs.append([start, j])
            start, acc = j + 1, 0
    if start <= cfg.m - 1:
        runs[-1][1] = cfg.m - 1  # tail fold: keeps every count >= c_min
    merged_edges = tuple(float(edges[a]) for a, _ in runs) + (float(edges[-1]),)
    merged_counts = tuple(int(counts[a:b + 1].sum()) for a, b in runs)
    return BinPartition(edges=merged_edges, counts=merged_counts)


def build_bound(pairs, cfg: BoundConfig, *, n: int | None = None,
                k_post: int = 2,
                training_ids: Iterable[int] | None = None) -> BoundFunction:
    """Construct the level-p bound from (delta, rho) observations.

    Pairs with delta <= 0 or rho <= 0 are dropped up front with a counted
    warning.  Within each merged bin the bound value is the ceil(p*m_b)-th
    smallest rho, taken directly from the sample, and the stored log
    quantile is its natural log.
    """
    arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs,
                     dtype=float)
    if arr.size == 0:
        raise InsufficientData("no observations")
    arr = arr.reshape(-1, 2)
    deltas, rhos = arr[:, 0], arr[:, 1]
    keep = (deltas > 0) & (rhos > 0)
    n_dropped = int((~keep).sum())
    if n_dropped:
        logger.warning("dropped %d pairs with non-positive delta or rho",
                       n_dropped)
        deltas, rhos = deltas[keep], rhos[keep]
    partition = build_partition(deltas, cfg)
    edges = np.asarray(partition.edges)
    d_lo, d_hi = partition.edges[0], partition.edges[-1]
    mask = (deltas >= d_lo) & (deltas <= d_hi)
    din, rin = deltas[mask], rhos[mask]
    which = _bin_index(edges, din)
    values = []
    for b in range(partition.n_bins):
        members = np.sort(rin[which == b])
        idx = min(math.ceil(cfg.p * members.size), members.size)
        values.append(float(members[idx - 1]))
    if training_ids is not None:
        tids: frozenset[int] | None = frozenset(int(i) for i in training_ids)
        thash = hash_ids(tids)
    else:
        thash = hash_pairs(deltas, rhos)
        tids = None
    prov = Provenance(config=cfg, n=n, k_post=k_post, training_hash=thash,
                      training_ids=tids)
    return BoundFunction(partition=partition,
                         log_quantiles=tuple(math.log(v) for v in values),
                         bin_values=tuple(values),
                         level=cfg.p,
                         provenance=prov)


def inflation_factor(tau: float) -> float:
    """Log-scale inflation factor exp(tau^2 / 2); >= 1 for all tau."""
    return math.exp(0.5 * tau * tau)


def dilation_factor(lam: float, alpha: float) -> float:
    """Linear dilation factor 1 + lambda*(1 - alpha); >= 1 on the admissible
    range, decreasing in alpha."""
    return 1.0 + lam * (1.0 - alpha)


def evaluate(bound: BoundFunction, delta: float,
             params: EnlargementParams | None = None,
             variant: str = "q") -> float:
    """Bound value at delta for variant "q", "tc" (inflated), or "tol"
    (inflated then dilated).  delta below the first edge uses the first bin,
    above the last edge the last bin, so the function is total on (0, inf).
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    b = bisect.bisect_right(bound.partition.edges, delta) - 1
    b = min(max(b, 0), bound.partition.n_bins - 1)
    base = bound.bin_values[b]
    if variant == "q":
        return base
    if params is None:
        params = DEFAULT_ENLARGEMENT
    out = inflation_factor(params.tau) * base
    if variant == "tol":
        out = dilation_factor(params.lam, params.alpha) * out
    return out


def evaluate_batch(bound: BoundFunction, deltas: np.ndarray,
                   params: EnlargementParams | None = None,
                   variant: str = "q") -> np.ndarray:
    """Vectorized evaluate() over an array of positive deltas."""
    deltas = np.asarray(deltas, dtype=float)
    if np.any(deltas <= 0):
        raise ValueError("deltas must be positive")
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    edges = np.asarray(bound.partition.edges)
    b = np.clip(np.searchsorted(edges, deltas, side="right") - 1,
                0, bound.partition.n_bins - 1)
    vals = np.asarray(bound.bin_values)[b]
    if variant == "q":
        return vals
    if params is None:
        params = DEFAULT_ENLARGEMENT
    vals = inflation_factor(params.tau) * vals
    if variant == "tol":
        vals = dilation_factor(params.lam, params.alpha) * vals
    return vals
