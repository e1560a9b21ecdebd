"""Covariance-based exhaustive measurement: Step I at every evaluation pose, no Step II."""
from __future__ import annotations

import numpy as np

from .estimator import EstimatorConfig, estimate_all
from .pipeline import ChannelRealisation, realise_channels, simulate_blocks
from .scenario import Scenario


def exhaustive_measurement(sc: Scenario, X: np.ndarray, sigma2: float, cfg: EstimatorConfig,
                           rng: np.random.Generator, channels: ChannelRealisation | None = None,
                           trace: list | None = None) -> np.ndarray:
    """Measure all grid poses directly and return the fitted (n_grid, K) power matrix.

    ``rng`` is split into a noise stream and an estimator stream.
    """
    ch = realise_channels(sc) if channels is None or channels.H_grid is None else channels
    noise_rng, est_rng = rng.spawn(2)
    blocks = simulate_blocks(X, ch.H_grid, ch.Z_grid, sigma2, noise_rng)
    P, _ = estimate_all(blocks, X, sigma2, cfg, est_rng, trace)
    return P
