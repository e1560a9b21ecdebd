"""Estimation error and ergodic sum-rate quantities."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .channel import UserChannel, path_responses
from .geometry import AntennaPattern, Pose, SurfaceLayout


@dataclass(frozen=True)
class RateConfig:
    p: float = 1.0
    sigma2: float = 1.0
    mc_samples: int = 1000

    def __post_init__(self):
        if self.p <= 0 or self.sigma2 <= 0:
            raise ValueError("transmit and noise power must be positive")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")


class RateEstimate(NamedTuple):
    mean: float
    stderr: float
    samples: np.ndarray


def nmse(P_true, P_hat) -> float:
    """``||P_true - P_hat||_F^2 / ||P_true||_F^2`` for one realisation."""
    P = np.asarray(P_true, dtype=float)
    Q = np.asarray(P_hat, dtype=float)
    if P.shape != Q.shape:
        raise ValueError(f"shape mismatch: {P.shape} vs {Q.shape}")
    ref = np.sum(P ** 2)
    if ref <= 0:
        raise ValueError("ground truth has zero norm")
    return float(np.sum((P - Q) ** 2) / ref)


def sum_rate_upper_bound(P, cfg: RateConfig) -> float:
    """Jensen bound ``sum_k log2(1 + p/sigma2 * sum_b P[b, k])`` in bits per channel use."""
    P = np.asarray(P, dtype=float)
    if np.any(P < 0):
        raise ValueError("powers must be non-negative")
    return float(np.sum(np.log2(1.0 + cfg.p / cfg.sigma2 * P.sum(axis=0))))


def sum_rate(H: np.ndarray, cfg: RateConfig) -> float:
    """``log2 det(I_K + p/sigma2 H^H H)`` for one BN x K channel realisation."""
    H = np.asarray(H)
    K = H.shape[1]
    G = np.eye(K) + cfg.p / cfg.sigma2 * (H.conj().T @ H)
    sign, logdet = np.linalg.slogdet(G)
    return float(logdet / np.log(2.0))


def ergodic_sum_rate_mc(users: Sequence[UserChannel], poses: Sequence[Pose], layout: SurfaceLayout,
                        pattern: AntennaPattern, lam: float, cfg: RateConfig,
                        rng: np.random.Generator) -> RateEstimate:
    """Monte Carlo ergodic sum rate over independent path-phase draws."""
    A = path_responses(users, poses, layout, pattern, lam).reshape(-1, len(users),
                                                                    max(u.n_paths for u in users))
    active = np.array([[i < u.n_paths for i in range(A.shape[2])] for u in users])
    samples = np.empty(cfg.mc_samples)
    for i in range(cfg.mc_samples):
        E = np.exp(-1j * rng.uniform(0.0, 2 * np.pi, size=active.shape)) * active
        samples[i] = sum_rate(np.einsum("jkg,kg->jk", A, E), cfg)
    se = float(np.std(samples, ddof=1) / np.sqrt(samples.size)) if samples.size > 1 else 0.0
    return RateEstimate(float(samples.mean()), se, samples)
