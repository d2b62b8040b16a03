import numpy as np
import pytest

from safesteer.grid import EdfDataset
from safesteer.svr import SvrHyperparams, SvrModel, train


def brute_force_edf(occupied: np.ndarray, resolution: float) -> np.ndarray:
    """O(n^2) oracle: min over occupied cell centers, exact integer squared
    distances, same final sqrt * resolution as the production path."""
    h, w = occupied.shape
    rr, cc = np.nonzero(occupied)
    out = np.empty((h, w))
    for r in range(h):
        for c in range(w):
            sq = (rr - r) ** 2 + (cc - c) ** 2
            out[r, c] = np.sqrt(np.min(sq)) * resolution
    return out


def random_grid(rng, max_side=20):
    """Random occupancy array with at least one free and one occupied cell."""
    h = int(rng.integers(2, max_side + 1))
    w = int(rng.integers(2, max_side + 1))
    occ = rng.random((h, w)) < rng.uniform(0.05, 0.6)
    occ[tuple(rng.integers(0, (h, w)))] = True
    free = tuple(rng.integers(0, (h, w)))
    occ[free] = False
    return occ


def make_direct_model(seed=0, n_sv=12, gamma=1.5, span=5.0, coord_scale=1.0) -> SvrModel:
    """Model built directly from random support vectors (no training)."""
    rng = np.random.default_rng(seed)
    sv = rng.uniform(0.0, span, (n_sv, 2))
    kap = rng.uniform(-2.0, 2.0, n_sv)
    return SvrModel(support_vectors=sv, dual_coeffs=kap,
                    bias=float(rng.uniform(0.5, 2.0)), gamma=gamma,
                    coord_scale=coord_scale)


def smooth_target(points: np.ndarray) -> np.ndarray:
    """Smooth positive synthetic field used for small training fixtures."""
    x, y = points[:, 0], points[:, 1]
    return 2.0 + np.sin(0.9 * x) * np.cos(0.7 * y) + 0.15 * x


def make_training_dataset(seed=0, n=64, span=5.0) -> EdfDataset:
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, span, (n, 2))
    return EdfDataset(points=pts, distances=smooth_target(pts))


@pytest.fixture(scope="session")
def trained_small_model() -> SvrModel:
    """Deterministic SVR trained on a small smooth dataset (moderate gamma,
    so finite-difference oracles are well conditioned)."""
    ds = make_training_dataset(seed=3)
    return train(ds, SvrHyperparams(G=10.0, epsilon=0.01, gamma=0.8))


@pytest.fixture(scope="session")
def trained_small_dataset() -> EdfDataset:
    return make_training_dataset(seed=3)
