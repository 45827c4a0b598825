import numpy as np
import pytest

from tempering_lab.kernels import StochasticMatrix


def random_reversible_chain(seed: int, n: int, lazy: float = 0.0) -> StochasticMatrix:
    """Random walk on a random positively-weighted complete graph.

    Reversible by construction (P = D^-1 W with symmetric W); ``lazy`` mixes
    in holding mass.
    """
    rng = np.random.default_rng(seed)
    W = rng.uniform(0.1, 1.0, size=(n, n))
    W = 0.5 * (W + W.T)
    deg = W.sum(axis=1)
    P = W / deg[:, None]
    if lazy > 0:
        P = lazy * np.eye(n) + (1 - lazy) * P
    pi = deg / deg.sum()
    return StochasticMatrix(P, pi)


def batch_means_sigma(series: np.ndarray, n_batches: int = 50) -> float:
    """Std error of the mean of an autocorrelated 0/1 (or real) series."""
    series = np.asarray(series, dtype=float)
    usable = len(series) - len(series) % n_batches
    batches = series[:usable].reshape(n_batches, -1).mean(axis=1)
    return float(batches.std(ddof=1) / np.sqrt(n_batches))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
