import numpy as np
import pytest

from corrbound import SimulationConfig, simulate_many


@pytest.fixture(scope="session")
def ds30():
    """300 converged-or-capped trajectories at n=30; shared read-only."""
    return simulate_many(SimulationConfig(n=30, master_seed=1234), 300)


@pytest.fixture(scope="session")
def ds10():
    """200 trajectories at n=10; shared read-only."""
    return simulate_many(SimulationConfig(n=10, master_seed=3), 200)


@pytest.fixture(scope="session")
def pairs30(ds30):
    from corrbound import collect_pairs
    ids, deltas, rhos = collect_pairs(ds30, 2)
    return ids, deltas, rhos


@pytest.fixture(scope="session")
def bound30(pairs30):
    from corrbound import BoundConfig, build_bound
    _, deltas, rhos = pairs30
    return build_bound(np.column_stack([deltas, rhos]),
                       BoundConfig(p=0.95, c_min=50), n=30, k_post=2)
