"""Multi-path channel synthesis and ground-truth average channel powers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import (
    AntennaPattern,
    Pose,
    SurfaceLayout,
    antenna_positions,
    gain_matrix,
    rotation_stack,
)


@dataclass(frozen=True)
class PathComponent:
    gain: float  # linear path power
    phase: float
    doa: np.ndarray


@dataclass
class UserChannel:
    """Scattering cluster of one user.

    Path quantities are stored as arrays: ``path_gains`` (G,), ``path_phases``
    (G,), ``path_doas`` (G, 3).  ``multipath_power`` is the sum of the path
    gains and ``center_doa`` points from the BS origin to the cluster centre.
    """

    path_gains: np.ndarray
    path_phases: np.ndarray
    path_doas: np.ndarray
    center_doa: np.ndarray
    multipath_power: float

    def __post_init__(self):
        self.path_gains = np.asarray(self.path_gains, dtype=float).reshape(-1)
        self.path_phases = np.asarray(self.path_phases, dtype=float).reshape(-1)
        self.path_doas = np.asarray(self.path_doas, dtype=float).reshape(-1, 3)
        self.center_doa = np.asarray(self.center_doa, dtype=float).reshape(3)
        n = self.path_gains.size
        if n < 1:
            raise ValueError("a user needs at least one path")
        if self.path_phases.size != n or self.path_doas.shape[0] != n:
            raise ValueError("path gains, phases and DOAs must have equal length")
        if np.any(self.path_gains < 0):
            raise ValueError("path gains must be non-negative")
        if self.multipath_power < 0:
            raise ValueError("multipath power must be non-negative")

    @property
    def n_paths(self) -> int:
        return self.path_gains.size

    @property
    def paths(self) -> list[PathComponent]:
        return [PathComponent(float(m), float(p), d.copy())
                for m, p, d in zip(self.path_gains, self.path_phases, self.path_doas)]

    def with_phases(self, phases) -> "UserChannel":
        return UserChannel(self.path_gains, phases, self.path_doas, self.center_doa,
                           self.multipath_power)


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def path_power(distance, ref_gain: float, exponent: float = 2.0, ref_distance: float = 1.0):
    """Large-scale power ``ref_gain * (d / d0) ** -exponent``."""
    return ref_gain * (np.asarray(distance, dtype=float) / ref_distance) ** (-exponent)


def make_user_channel(user_pos, scatterers, ref_gain: float, exponent: float,
                      rng: np.random.Generator) -> UserChannel:
    """Build a user's cluster from its position and scatterer points.

    Total power follows the user's distance to the BS centre and is split
    equally across the scatterer paths.  Path phases are uniform on [0, 2*pi).
    """
    user_pos = np.asarray(user_pos, dtype=float)
    scatterers = np.asarray(scatterers, dtype=float).reshape(-1, 3)
    s = float(path_power(np.linalg.norm(user_pos), ref_gain, exponent))
    n = scatterers.shape[0]
    gains = np.full(n, s / n)
    phases = rng.uniform(0.0, 2 * np.pi, size=n)
    return UserChannel(gains, phases, _unit(scatterers), _unit(user_pos), s)


def steering_vector(pose: Pose, layout: SurfaceLayout, f, lam: float) -> np.ndarray:
    """Per-antenna far-field phase response ``exp(-j 2 pi f.r_n / lambda)``."""
    if lam <= 0:
        raise ValueError("wavelength must be positive")
    r = antenna_positions(pose, layout)
    return np.exp(-2j * np.pi * (r @ np.asarray(f, dtype=float)) / lam)


def exact_channel(user: UserChannel, pose: Pose, layout: SurfaceLayout,
                  pattern: AntennaPattern, lam: float) -> np.ndarray:
    """Channel from ``user`` to the N antennas of a surface at ``pose``."""
    return channel_tensor([user], [pose], layout, pattern, lam)[0, :, 0]


def path_responses(users: Sequence[UserChannel], poses: Sequence[Pose], layout: SurfaceLayout,
                   pattern: AntennaPattern, lam: float) -> np.ndarray:
    """Phase-free per-path responses ``sqrt(mu g) a``, shape (M, N, K, paths).

    Users with fewer paths are zero-padded.  Contracting the last axis with
    ``exp(-j phases)`` gives the channel, so phase redraws are cheap.
    """
    if lam <= 0:
        raise ValueError("wavelength must be positive")
    R = rotation_stack(poses)
    pos = np.array([antenna_positions(p, layout) for p in poses]).reshape(R.shape[0], -1, 3)
    n_paths = max(u.n_paths for u in users)
    A = np.zeros((R.shape[0], layout.n_antennas, len(users), n_paths), dtype=complex)
    for k, user in enumerate(users):
        g = gain_matrix(pattern, R, user.path_doas)  # (M, paths)
        amp = np.sqrt(user.path_gains * g)
        phase = np.einsum("mnc,gc->mng", pos, user.path_doas)
        A[:, :, k, :user.n_paths] = amp[:, None, :] * np.exp(-2j * np.pi * phase / lam)
    return A


def phase_matrix(users: Sequence[UserChannel]) -> np.ndarray:
    """``exp(-j phase)`` per user and path, zero-padded, shape (K, paths)."""
    n_paths = max(u.n_paths for u in users)
    E = np.zeros((len(users), n_paths), dtype=complex)
    for k, u in enumerate(users):
        E[k, :u.n_paths] = np.exp(-1j * u.path_phases)
    return E


def channel_tensor(users: Sequence[UserChannel], poses: Sequence[Pose], layout: SurfaceLayout,
                   pattern: AntennaPattern, lam: float) -> np.ndarray:
    """Exact multi-path channels for every pose and user, shape (M, N, K)."""
    A = path_responses(users, poses, layout, pattern, lam)
    return np.einsum("mnkg,kg->mnk", A, phase_matrix(users))


def approx_channel(user: UserChannel, pose: Pose, layout: SurfaceLayout, pattern: AntennaPattern,
                   lam: float, rng: np.random.Generator) -> np.ndarray:
    """Single-DOA approximation: all paths share the cluster-centre gain and phase front.

    The residual per-path phases are drawn fresh, uniform on [0, 2*pi).
    """
    g = gain_matrix(pattern, [pose], user.center_doa[None, :])[0, 0]
    a = steering_vector(pose, layout, user.center_doa, lam)
    phases = rng.uniform(0.0, 2 * np.pi, size=user.n_paths)
    coeff = np.sum(np.sqrt(user.path_gains) * np.exp(-1j * phases))
    return np.sqrt(g) * a * coeff


def sparsity_indicator(users: Sequence[UserChannel], poses: Sequence[Pose],
                       pattern: AntennaPattern) -> np.ndarray:
    """Binary (M, K) matrix: 1 where at least one path of user k reaches pose m."""
    R = rotation_stack(poses)
    Z = np.zeros((R.shape[0], len(users)), dtype=np.int8)
    for k, user in enumerate(users):
        g = gain_matrix(pattern, R, user.path_doas)
        Z[:, k] = np.any(g > 0, axis=1)
    return Z


def ground_truth_power(users: Sequence[UserChannel], poses: Sequence[Pose], layout: SurfaceLayout,
                       pattern: AntennaPattern) -> np.ndarray:
    """Average channel power summed over a surface's antennas, ``N g(u_m, f_k) s_k``."""
    centers = np.array([u.center_doa for u in users]).reshape(-1, 3)
    s = np.array([u.multipath_power for u in users])
    g = gain_matrix(pattern, rotation_stack(poses), centers)
    return layout.n_antennas * g * s[None, :]


def expected_exact_power(users: Sequence[UserChannel], poses: Sequence[Pose], layout: SurfaceLayout,
                         pattern: AntennaPattern) -> np.ndarray:
    """Phase-averaged power of the exact channel, ``N sum_i mu_i g_i(u_m, f_i)``."""
    R = rotation_stack(poses)
    P = np.zeros((R.shape[0], len(users)))
    for k, user in enumerate(users):
        P[:, k] = gain_matrix(pattern, R, user.path_doas) @ user.path_gains
    return layout.n_antennas * P
