"""Rotation algebra, antenna coordinates, DOA vectors and effective antenna gain.

Conventions
-----------
A surface pose is a centre position ``q`` (global frame, metres) and three
rotation angles ``(alpha, beta, gamma)`` about the x-, y- and z-axes.  The
rotation matrix maps local offsets into the global frame, ``r = q + R @ r_bar``.

Incidence coordinates of a DOA ``f`` are taken from ``-R.T @ f``; the surface
boresight (incidence elevation pi/2) in the global frame is therefore
``-R[:, 2]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

TWO_PI = 2.0 * np.pi


def _wrap(angle: float) -> float:
    a = float(np.mod(angle, TWO_PI))
    # np.mod can return exactly 2*pi for tiny negative inputs
    return 0.0 if a >= TWO_PI else a


@dataclass(frozen=True)
class RotationAngles:
    """Rotation angles in radians, each reduced into [0, 2*pi)."""

    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise ValueError(f"rotation angle {name} must be finite, got {value}")
            object.__setattr__(self, name, _wrap(value))

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma])

    @property
    def matrix(self) -> np.ndarray:
        return rotation_matrix(self)


@dataclass(frozen=True)
class Pose:
    """Position (metres, global frame) and rotation of one surface placement."""

    position: tuple[float, float, float]
    rotation: RotationAngles = field(default_factory=RotationAngles)

    def __post_init__(self):
        pos = tuple(float(c) for c in np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "position", pos)
        if not isinstance(self.rotation, RotationAngles):
            object.__setattr__(self, "rotation", RotationAngles(*self.rotation))

    @property
    def q(self) -> np.ndarray:
        return np.array(self.position)

    @property
    def matrix(self) -> np.ndarray:
        return rotation_matrix(self.rotation)

    @property
    def boresight(self) -> np.ndarray:
        return boresight(self.rotation)


@dataclass(frozen=True)
class SurfaceLayout:
    """Antenna offsets in the surface's local frame, shape (N, 3)."""

    local_offsets: np.ndarray

    def __post_init__(self):
        offsets = np.array(self.local_offsets, dtype=float).reshape(-1, 3)
        if offsets.shape[0] < 1:
            raise ValueError("a surface needs at least one antenna")
        offsets.setflags(write=False)
        object.__setattr__(self, "local_offsets", offsets)

    @property
    def n_antennas(self) -> int:
        return self.local_offsets.shape[0]

    @classmethod
    def upa(cls, rows: int, cols: int, spacing: float) -> "SurfaceLayout":
        """Uniform planar array in the local x'-y' plane, centred on the origin."""
        xs = (np.arange(rows) - (rows - 1) / 2.0) * spacing
        ys = (np.arange(cols) - (cols - 1) / 2.0) * spacing
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        offsets = np.stack([gx.ravel(), gy.ravel(), np.zeros(rows * cols)], axis=1)
        return cls(offsets)

    def __eq__(self, other):
        if not isinstance(other, SurfaceLayout):
            return NotImplemented
        return np.array_equal(self.local_offsets, other.local_offsets)

    def __hash__(self):
        return hash(self.local_offsets.tobytes())


class AntennaPattern:
    """Element radiation pattern A(theta, phi) in dBi over local incidence angles.

    Subclasses override :meth:`gain` (linear scale, vectorised).  Incidence
    elevation ``theta <= 0`` is the back half-space and always yields zero.
    """

    name = "custom"

    def __init__(self, dbi: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
                 name: str | None = None):
        self._dbi = dbi
        if name is not None:
            self.name = name

    def dbi(self, theta, phi):
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(self.gain(theta, phi))

    def gain(self, theta, phi):
        if self._dbi is None:
            raise NotImplementedError
        theta = np.asarray(theta, dtype=float)
        phi = np.asarray(phi, dtype=float)
        g = np.power(10.0, np.asarray(self._dbi(theta, phi), dtype=float) / 10.0)
        return np.where(theta > 0, g, 0.0)

    def __call__(self, theta, phi):
        return self.gain(theta, phi)


class HalfSpacePattern(AntennaPattern):
    """Directive half-space pattern ``g = 4 sin(theta)`` for theta in (0, pi/2].

    Azimuth independent and normalised so the gain integrates to 4*pi over
    the sphere.
    """

    name = "half_space"

    def __init__(self):
        super().__init__()

    def gain(self, theta, phi=None):
        theta = np.asarray(theta, dtype=float)
        return np.where(theta > 0, 4.0 * np.sin(np.clip(theta, 0.0, np.pi / 2)), 0.0)


class IsotropicHalfSpacePattern(AntennaPattern):
    """Flat gain of 2 (about 3 dBi) over the front half-space."""

    name = "flat_half_space"

    def __init__(self):
        super().__init__()

    def gain(self, theta, phi=None):
        theta = np.asarray(theta, dtype=float)
        return np.where(theta > 0, 2.0, 0.0)


PATTERNS = {
    HalfSpacePattern.name: HalfSpacePattern,
    IsotropicHalfSpacePattern.name: IsotropicHalfSpacePattern,
}


def get_pattern(name: str) -> AntennaPattern:
    try:
        return PATTERNS[name]()
    except KeyError:
        raise ValueError(f"unknown antenna pattern {name!r}; choose from {sorted(PATTERNS)}") from None


def rotation_matrix(u) -> np.ndarray:
    """Rotation matrix for angles ``u = (alpha, beta, gamma)``.

    Accepts a :class:`RotationAngles` or any length-3 sequence.  A trailing
    batch is also supported: ``u`` of shape (..., 3) returns (..., 3, 3).
    """
    if isinstance(u, RotationAngles):
        u = u.as_array()
    u = np.asarray(u, dtype=float)
    a, b, g = u[..., 0], u[..., 1], u[..., 2]
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cg, sg = np.cos(g), np.sin(g)
    R = np.empty(u.shape[:-1] + (3, 3))
    R[..., 0, 0] = cb * cg
    R[..., 0, 1] = cb * sg
    R[..., 0, 2] = -sb
    R[..., 1, 0] = sb * sa * cg - ca * sg
    R[..., 1, 1] = sb * sa * sg + ca * cg
    R[..., 1, 2] = cb * sa
    R[..., 2, 0] = ca * sb * cg + sa * sg
    R[..., 2, 1] = ca * sb * sg - sa * cg
    R[..., 2, 2] = ca * cb
    return R


def angles_from_matrix(R: np.ndarray) -> RotationAngles:
    """Recover (alpha, beta, gamma) from a rotation matrix of the form above.

    Picks the branch with cos(beta) >= 0.  At gimbal lock (cos(beta) == 0)
    gamma is set to zero.
    """
    R = np.asarray(R, dtype=float)
    sb = -R[0, 2]
    cb = np.hypot(R[1, 2], R[2, 2])
    beta = np.arctan2(sb, cb)
    if cb > 1e-12:
        alpha = np.arctan2(R[1, 2], R[2, 2])
        gamma = np.arctan2(R[0, 1], R[0, 0])
    else:
        gamma = 0.0
        # with gamma = 0: R[1,0] = sb*sa, R[1,1] = ca
        alpha = np.arctan2(R[1, 0] * sb, R[1, 1])
    return RotationAngles(alpha, beta, gamma)


def boresight(u) -> np.ndarray:
    """Global direction of maximum incidence elevation for rotation ``u``."""
    return -rotation_matrix(u)[..., :, 2]


def outward_rotation(direction) -> RotationAngles:
    """Rotation whose boresight points along ``direction`` (gamma fixed at 0)."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    # need R[:, 2] = (-sin b, cos b sin a, cos a cos b) = -d
    beta = np.arcsin(np.clip(d[0], -1.0, 1.0))
    if np.cos(beta) > 1e-12:
        alpha = np.arctan2(-d[1], -d[2])
    else:
        alpha = 0.0
    return RotationAngles(alpha, beta, 0.0)


def antenna_positions(pose: Pose, layout: SurfaceLayout) -> np.ndarray:
    """Global positions of all antennas on a surface, shape (N, 3)."""
    return pose.q[None, :] + layout.local_offsets @ pose.matrix.T


def antenna_position(pose: Pose, layout: SurfaceLayout, n: int) -> np.ndarray:
    """Global position of antenna ``n`` (zero-based) on the surface at ``pose``."""
    if not 0 <= n < layout.n_antennas:
        raise IndexError(f"antenna index {n} out of range for N={layout.n_antennas}")
    return pose.q + pose.matrix @ layout.local_offsets[n]


def doa_vector(theta, phi) -> np.ndarray:
    """Unit DOA vector for elevation ``theta`` and azimuth ``phi`` (radians)."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    tol = 1e-12
    if np.any(np.abs(theta) > np.pi / 2 + tol) or np.any(np.abs(phi) > np.pi + tol):
        raise ValueError("elevation must lie in [-pi/2, pi/2] and azimuth in [-pi, pi]")
    ct = np.cos(theta)
    return np.stack([ct * np.cos(phi), ct * np.sin(phi), np.sin(theta)], axis=-1)


def doa_angles(f) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`doa_vector`: (elevation, azimuth) of unit vector(s)."""
    f = np.asarray(f, dtype=float)
    theta = np.arctan2(f[..., 2], np.hypot(f[..., 0], f[..., 1]))
    phi = np.arctan2(f[..., 1], f[..., 0])
    return theta, phi


class Incidence(NamedTuple):
    theta: np.ndarray
    phi: np.ndarray
    boresight: np.ndarray  # True where the azimuth is undefined (set to 0)


def _local_incidence(R: np.ndarray, f: np.ndarray) -> Incidence:
    # R: (..., 3, 3), f: (..., 3) broadcast together; returns angles of -R^T f
    local = -np.einsum("...ji,...j->...i", R, f)
    x, y, z = local[..., 0], local[..., 1], local[..., 2]
    theta = np.pi / 2 - np.arccos(np.clip(z, -1.0, 1.0))
    rho = np.hypot(x, y)
    degenerate = rho <= 1e-15
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.arccos(np.clip(x / rho, -1.0, 1.0)) * np.where(y >= 0, 1.0, -1.0)
    phi = np.where(degenerate, 0.0, phi)
    return Incidence(theta, phi, degenerate)


def incidence_angles(u, f) -> Incidence:
    """Local incidence elevation/azimuth of DOA ``f`` on a surface rotated by ``u``.

    The azimuth is undefined at boresight (x~ = y~ = 0); it is reported as 0 and
    flagged in the ``boresight`` field.
    """
    return _local_incidence(rotation_matrix(u), np.asarray(f, dtype=float))


def effective_gain(pattern: AntennaPattern, u, f):
    """Linear effective gain of a surface with rotation ``u`` towards DOA ``f``."""
    inc = incidence_angles(u, f)
    return pattern.gain(inc.theta, inc.phi)


def gain_matrix(pattern: AntennaPattern, rotations, doas) -> np.ndarray:
    """Effective gains for every (rotation, DOA) pair.

    ``rotations`` is a sequence of M rotations (angles or Pose objects) or an
    (M, 3, 3) matrix stack; ``doas`` has shape (G, 3).  Returns (M, G).
    """
    R = rotation_stack(rotations)
    f = np.asarray(doas, dtype=float).reshape(-1, 3)
    inc = _local_incidence(R[:, None, :, :], f[None, :, :])
    return pattern.gain(inc.theta, inc.phi)


def rotation_stack(rotations) -> np.ndarray:
    if isinstance(rotations, np.ndarray) and rotations.ndim == 3:
        return rotations
    mats = []
    for r in rotations:
        if isinstance(r, Pose):
            r = r.rotation
        mats.append(rotation_matrix(r))
    return np.array(mats).reshape(-1, 3, 3)


def fibonacci_sphere(n: int) -> np.ndarray:
    """Near-uniform unit vectors on the sphere, shape (n, 3).

    Golden-angle spiral with the first point at the north pole; ``n == 1``
    returns only the pole.
    """
    if n < 1:
        raise ValueError("need at least one point")
    if n == 1:
        return np.array([[0.0, 0.0, 1.0]])
    i = np.arange(n)
    z = 1.0 - 2.0 * (i + 0.5) / n
    z[0], z[-1] = 1.0, -1.0
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    phi = golden * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
