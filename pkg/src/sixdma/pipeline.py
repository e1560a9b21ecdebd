"""End-to-end estimation: simulate pilot blocks, fit powers, reconstruct on the grid."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import channel_tensor, sparsity_indicator
from .estimator import EstimatorConfig, estimate_all
from .measurement import MeasurementBlock, complex_normal, receive_block
from .reconstructor import ReconstructionModel, fit_users, reconstruct_power
from .scenario import Scenario

# spawn-key tags for the independent random streams of one trial
PILOT_STREAM = 1
MEASUREMENT_NOISE = 2
GRID_NOISE = 3
ESTIMATOR_STREAM = 4
BASELINE_ESTIMATOR = 5


def stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tag,)))


@dataclass
class ChannelRealisation:
    """Channels and true sparsity of one trial at the measurement and grid poses."""

    H_meas: np.ndarray  # (M, N, K)
    Z_meas: np.ndarray  # (M, K)
    H_grid: np.ndarray | None = None
    Z_grid: np.ndarray | None = None


def realise_channels(sc: Scenario, grid: bool = True) -> ChannelRealisation:
    args = (sc.layout, sc.pattern, sc.cfg.wavelength)
    if grid:
        H_grid = channel_tensor(sc.users, sc.grid, *args)
        Z_grid = sparsity_indicator(sc.users, sc.grid, sc.pattern)
    else:
        H_grid = Z_grid = None
    if grid and not sc.cfg.random_rotations:
        idx = sc.measurement_index
        return ChannelRealisation(H_grid[idx], Z_grid[idx], H_grid, Z_grid)
    return ChannelRealisation(channel_tensor(sc.users, sc.measurement, *args),
                              sparsity_indicator(sc.users, sc.measurement, sc.pattern),
                              H_grid, Z_grid)


def simulate_blocks(X: np.ndarray, H: np.ndarray, Z: np.ndarray, sigma2: float,
                    rng: np.random.Generator) -> list[MeasurementBlock]:
    """Received blocks for every pose; pose m draws noise from the m-th child of ``rng``.

    Per-pose child streams make a shorter pilot's noise a prefix of a longer
    one and keep results independent of evaluation order.
    """
    L = X.shape[0]
    N = H.shape[1]
    blocks = []
    for m, child in enumerate(rng.spawn(H.shape[0])):
        noise = complex_normal((L, N), child)
        blocks.append(receive_block(X, H[m], Z[m], sigma2, pose_index=m, noise=noise))
    return blocks


@dataclass
class ProposedResult:
    P_hat: np.ndarray  # reconstructed power on the query poses
    P_bar: np.ndarray  # measured power at the M measurement poses
    Z: np.ndarray
    models: list[ReconstructionModel]


def reconstruct_from_blocks(blocks: Sequence[MeasurementBlock], X, sigma2: float, sc: Scenario,
                            est_cfg: EstimatorConfig, G: int, rng: np.random.Generator,
                            query_poses=None, trace: list | None = None) -> ProposedResult:
    """Step I on the measurement blocks followed by Step II and grid reconstruction."""
    N = sc.cfg.n_antennas
    P_bar, Z = estimate_all(blocks, X, sigma2, est_cfg, rng, trace)
    models = fit_users(P_bar, Z, sc.measurement, sc.pattern, N, G)
    query = sc.grid if query_poses is None else query_poses
    return ProposedResult(reconstruct_power(models, query, sc.pattern, N), P_bar, Z, models)


def run_proposed(sc: Scenario, X: np.ndarray, sigma2: float, est_cfg: EstimatorConfig, G: int,
                 seed: int, channels: ChannelRealisation | None = None,
                 trace: list | None = None) -> ProposedResult:
    """Full proposed pipeline for one trial with streams derived from ``seed``."""
    ch = realise_channels(sc, grid=False) if channels is None else channels
    blocks = simulate_blocks(X, ch.H_meas, ch.Z_meas, sigma2, stream(seed, MEASUREMENT_NOISE))
    return reconstruct_from_blocks(blocks, X, sigma2, sc, est_cfg, G,
                                   stream(seed, ESTIMATOR_STREAM), trace=trace)
