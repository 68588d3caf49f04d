"""Trajectory generation for the iterated row-correlation map.

The map replaces an n-by-n matrix P with the matrix of Pearson correlations
of its rows: out[i, j] = corr(P[i, :], P[j, :]).  From the second iterate on,
every matrix is an exact correlation matrix (symmetric, unit diagonal,
entries in [-1, 1]); block matrices with entries +/-1 are exact fixed points.

Per iteration step k we record the Frobenius step size delta_k =
||P_{k+1} - P_k||_F, the contraction ratio rho_k = delta_{k+1}/delta_k
(when defined), and the per-entry RMS change delta_k / n.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateRow

CONVERGED = "converged"
HIT_CAP = "hit_cap"
DEGENERATE_ROW = "degenerate_row"
STATUSES = (CONVERGED, HIT_CAP, DEGENERATE_ROW)

#: Default floor below which a centered row's squared norm counts as zero.
VARIANCE_FLOOR = 1e-300


@dataclass(frozen=True)
class SimulationConfig:
    """Parameters of one simulation run.

    epsilon is the max-norm convergence tolerance, k_max the iteration cap,
    k_post the first iteration index considered past the initial transient,
    and master_seed the root of all per-trial random streams.
    """

    n: int
    master_seed: int = 0
    epsilon: float = 1e-12
    k_max: int = 1000
    k_post: int = 2

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.k_post < 0:
            raise ValueError("k_post must be non-negative")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class StepRecord:
    """Observables of one iteration step.

    rho is None when undefined: the step has no successor, or delta_raw is 0.
    """

    k: int
    delta_raw: float
    rho: float | None
    delta_norm: float


@dataclass(frozen=True)
class Trajectory:
    trial_id: int
    n: int
    stop_index: int
    steps: tuple[StepRecord, ...]
    status: str


def trial_stream(master_seed: int, trial_id: int) -> np.random.Generator:
    """Counter-based random stream for one trial.

    Streams are a pure function of (master_seed, trial_id), so simulation
    order and parallelism never change results.
    """
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(trial_id,))
    return np.random.Generator(np.random.Philox(seq))


def pearson_corr(x, y, floor: float = VARIANCE_FLOOR) -> float:
    """Pearson correlation of two equal-length vectors, clamped to [-1, 1].

    Raises DegenerateRow if either centered vector has squared norm below
    `floor` (index 0 for x, 1 for y).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    cx = x - x.mean()
    cy = y - y.mean()
    ssx = float(cx @ cx)
    ssy = float(cy @ cy)
    if ssx < floor:
        raise DegenerateRow(0)
    if ssy < floor:
        raise DegenerateRow(1)
    r = float(cx @ cy) / np.sqrt(ssx * ssy)
    return min(1.0, max(-1.0, r))


def iterate_once(p: np.ndarray, floor: float = VARIANCE_FLOOR) -> np.ndarray:
    """One application of the row-correlation map.

    The result is exactly symmetric with unit diagonal and entries in
    [-1, 1]: the upper triangle is computed and mirrored, the diagonal is
    set to 1, and entries are clamped after the division.  Row sums of
    squares come from the same matrix product as the cross terms, which
    keeps block +/-1 matrices exact fixed points.
    """
    p = np.asarray(p, dtype=float)
    x = p - p.mean(axis=1, keepdims=True)
    g = x @ x.T
    ss = np.diagonal(g).copy()
    bad = np.nonzero(ss < floor)[0]
    if bad.size:
        raise DegenerateRow(int(bad[0]))
    c = g / np.sqrt(np.outer(ss, ss))
    np.clip(c, -1.0, 1.0, out=c)
    iu = np.triu_indices(p.shape[0], 1)
    c[(iu[1], iu[0])] = c[iu]
    np.fill_diagonal(c, 1.0)
    return c


def simulate_trajectory(cfg: SimulationConfig, trial_id: int) -> Trajectory:
    """Run one trajectory from a random start.

    The initial matrix has i.i.d. Uniform[-1, 1] entries drawn from the
    trial's own stream.  Iteration stops at the first index T >= 1 with
    ||P_T - P_{T-1}||_max < epsilon, capped at k_max.  Step records cover
    k = 0 .. T-1.  If a degenerate row is hit, the trajectory is returned
    with status "degenerate_row" and the steps completed so far (stop_index
    is then the number of recorded steps).
    """
    rng = trial_stream(cfg.master_seed, trial_id)
    p_prev = rng.uniform(-1.0, 1.0, size=(cfg.n, cfg.n))
    deltas: list[float] = []
    status = HIT_CAP
    for _ in range(cfg.k_max):
        try:
            p_curr = iterate_once(p_prev)
        except DegenerateRow:
            status = DEGENERATE_ROW
            break
        diff = p_curr - p_prev
        deltas.append(float(np.linalg.norm(diff)))
        if float(np.max(np.abs(diff))) < cfg.epsilon:
            status = CONVERGED
            break
        p_prev = p_curr
    stop_index = len(deltas)
    steps = []
    for k, d in enumerate(deltas):
        rho = deltas[k + 1] / d if (k + 1 < stop_index and d > 0) else None
        steps.append(StepRecord(k=k, delta_raw=d, rho=rho, delta_norm=d / cfg.n))
    return Trajectory(trial_id=trial_id, n=cfg.n, stop_index=stop_index,
                      steps=tuple(steps), status=status)


def simulate_many(cfg: SimulationConfig, n_trials: int,
                  jobs: int | None = None) -> list[Trajectory]:
    """Simulate trials 0 .. n_trials-1.

    Results are identical for any `jobs` value; trajectories come back
    ordered by trial id.  Degenerate trajectories are included — callers
    decide whether to drop them (the CLI drops and logs).
    """
    ids = range(n_trials)
    if jobs is not None and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda t: simulate_trajectory(cfg, t), ids))
    return [simulate_trajectory(cfg, t) for t in ids]


def post_transient_pairs(t: Trajectory, k_post: int) -> list[tuple[float, float]]:
    """(delta_norm, rho) pairs for k in {k_post, ..., T-2} with rho > 0.

    The record at k = T-1 has no successor and is always excluded.  Only
    convergent or capped trajectories have a well-defined post-transient
    set; degenerate ones are rejected.
    """
    if t.status not in (CONVERGED, HIT_CAP):
        raise ValueError(f"trajectory {t.trial_id} has status {t.status}")
    out = []
    for k in range(k_post, t.stop_index - 1):
        rec = t.steps[k]
        if rec.rho is not None and rec.rho > 0:
            out.append((rec.delta_norm, rec.rho))
    return out


def collect_pairs(trials: Sequence[Trajectory], k_post: int):
    """Flatten post-transient pairs across trajectories.

    Returns (trial_ids, deltas, rhos) as parallel numpy arrays.  Degenerate
    trajectories are skipped.
    """
    ids: list[int] = []
    ds: list[float] = []
    rs: list[float] = []
    for t in trials:
        if t.status not in (CONVERGED, HIT_CAP):
            continue
        for d, r in post_transient_pairs(t, k_post):
            ids.append(t.trial_id)
            ds.append(d)
            rs.append(r)
    return (np.asarray(ids, dtype=np.int64),
            np.asarray(ds, dtype=float),
            np.asarray(rs, dtype=float))
