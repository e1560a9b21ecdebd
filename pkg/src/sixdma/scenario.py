"""Simulation world: users with hotspots, scatterer clusters and candidate surface poses."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .channel import UserChannel, ground_truth_power, make_user_channel
from .geometry import (
    Pose,
    RotationAngles,
    SurfaceLayout,
    fibonacci_sphere,
    get_pattern,
    outward_rotation,
)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    kind: str  # "spherical_annulus" or "sphere"
    center: tuple[float, float, float]
    inner_radius: float
    outer_radius: float

    def __post_init__(self):
        if self.kind not in ("spherical_annulus", "sphere"):
            raise ScenarioError(f"unknown region kind {self.kind!r}")
        if not 0 <= self.inner_radius < self.outer_radius:
            raise ScenarioError("need 0 <= inner_radius < outer_radius")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def volume(self) -> float:
        return 4.0 / 3.0 * np.pi * (self.outer_radius ** 3 - self.inner_radius ** 3)

    def contains(self, points) -> np.ndarray:
        d = np.linalg.norm(np.asarray(points, dtype=float) - np.array(self.center), axis=-1)
        return (d >= self.inner_radius) & (d <= self.outer_radius)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Points uniform in the region's volume, shape (n, 3)."""
        return np.array(self.center) + uniform_shell(n, self.inner_radius, self.outer_radius, rng)


def uniform_directions(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def uniform_shell(n: int, r_in: float, r_out: float, rng: np.random.Generator) -> np.ndarray:
    """Points uniform in the volume between two concentric spheres about the origin."""
    u = rng.uniform(size=n)
    r = np.cbrt(r_in ** 3 + u * (r_out ** 3 - r_in ** 3))
    return uniform_directions(n, rng) * r[:, None]


@dataclass(frozen=True)
class ScenarioConfig:
    n_users: int = 50
    n_paths: int = 20
    scatter_radius: float = 3.0
    inner_radius: float = 30.0
    outer_radius: float = 200.0
    hotspot_distances: tuple[float, ...] = (100.0, 60.0, 40.0)
    hotspot_radii: tuple[float, ...] = (15.0, 10.0, 5.0)
    # fixed hotspot centre directions, or empty to draw them per scenario
    hotspot_directions: tuple[tuple[float, float, float], ...] = ()
    regular_fraction: float = 0.3
    wavelength: float = 0.125
    array_rows: int = 2
    array_cols: int = 2
    # element spacing in wavelengths
    element_spacing: float = 0.5
    site_radius: float = 1.0
    n_surfaces: int = 16
    n_measurement: int = 32
    n_grid: int = 350
    ref_gain_db: float = -40.0
    pathloss_exponent: float = 2.0
    pattern: str = "half_space"
    random_rotations: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hotspot_distances", tuple(float(x) for x in self.hotspot_distances))
        object.__setattr__(self, "hotspot_radii", tuple(float(x) for x in self.hotspot_radii))
        object.__setattr__(self, "hotspot_directions",
                           tuple(tuple(float(c) for c in d) for d in self.hotspot_directions))
        self.validate()

    def validate(self):
        if self.n_users < 1:
            raise ScenarioError("n_users must be >= 1")
        if self.n_paths < 1:
            raise ScenarioError("n_paths must be >= 1")
        if not 0.0 <= self.regular_fraction <= 1.0:
            raise ScenarioError("regular_fraction must lie in [0, 1]")
        if self.n_measurement < 1 or self.n_grid < 1:
            raise ScenarioError("n_measurement and n_grid must be >= 1")
        if self.n_measurement > self.n_grid:
            raise ScenarioError(f"n_measurement={self.n_measurement} exceeds n_grid={self.n_grid}")
        if len(self.hotspot_distances) != len(self.hotspot_radii):
            raise ScenarioError("hotspot_distances and hotspot_radii differ in length")
        if self.hotspot_directions and len(self.hotspot_directions) != len(self.hotspot_radii):
            raise ScenarioError("hotspot_directions must match the number of hotspots")
        if self.regular_fraction < 1.0 and not self.hotspot_radii:
            raise ScenarioError("regular_fraction < 1 requires at least one hotspot")
        if self.wavelength <= 0 or self.site_radius <= 0 or self.scatter_radius < 0:
            raise ScenarioError("wavelength and site_radius must be positive, scatter_radius >= 0")
        Region("spherical_annulus", (0, 0, 0), self.inner_radius, self.outer_radius)

    @property
    def layout(self) -> SurfaceLayout:
        return SurfaceLayout.upa(self.array_rows, self.array_cols,
                                 self.element_spacing * self.wavelength)

    @property
    def n_antennas(self) -> int:
        return self.array_rows * self.array_cols

    @property
    def ref_gain(self) -> float:
        return 10.0 ** (self.ref_gain_db / 10.0)

    @property
    def coverage(self) -> Region:
        return Region("spherical_annulus", (0.0, 0.0, 0.0), self.inner_radius, self.outer_radius)


class UserPlacement(NamedTuple):
    positions: np.ndarray  # (K, 3)
    hotspot: np.ndarray  # (K,) hotspot index, -1 for regular users
    hotspot_centers: np.ndarray  # (V, 3)


def sample_users(cfg: ScenarioConfig, rng: np.random.Generator,
                 max_attempts: int = 1000) -> UserPlacement:
    """Place ``cfg.n_users`` users: a regular share uniform over the coverage
    annulus, the rest uniform over the union of hotspot spheres.

    Hotspot users pick a hotspot with probability proportional to its volume.
    Points falling outside the annulus are redrawn up to ``max_attempts`` times.
    """
    K = cfg.n_users
    n_regular = int(round(cfg.regular_fraction * K))
    coverage = cfg.coverage
    radii = np.array(cfg.hotspot_radii)
    if cfg.hotspot_directions:
        dirs = np.array(cfg.hotspot_directions, dtype=float)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    else:
        dirs = uniform_directions(len(radii), rng)
    centers = dirs * np.array(cfg.hotspot_distances)[:, None]

    positions = np.empty((K, 3))
    label = np.full(K, -1, dtype=int)
    positions[:n_regular] = coverage.sample(n_regular, rng)
    n_hot = K - n_regular
    if n_hot:
        weights = radii ** 3 / np.sum(radii ** 3)
        label[n_regular:] = rng.choice(len(radii), size=n_hot, p=weights)
        for i in range(n_regular, K):
            v = label[i]
            sphere = Region("sphere", centers[v], 0.0, radii[v])
            for _ in range(max_attempts):
                p = sphere.sample(1, rng)[0]
                if coverage.contains(p):
                    positions[i] = p
                    break
            else:
                raise ScenarioError(
                    f"hotspot {v} could not place a user inside the coverage region "
                    f"after {max_attempts} attempts")
    return UserPlacement(positions, label, centers)


def sample_scatterers(user_pos, n_paths: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """``n_paths`` points uniform in the ball of ``radius`` around ``user_pos``."""
    if radius < 0:
        raise ScenarioError("scatter radius must be non-negative")
    return np.asarray(user_pos, dtype=float) + uniform_shell(n_paths, 0.0, radius, rng)


def evaluation_grid(cfg: ScenarioConfig) -> list[Pose]:
    """Fibonacci-sphere poses on the site sphere with boresight pointing outward."""
    dirs = fibonacci_sphere(cfg.n_grid)
    return [Pose(cfg.site_radius * d, outward_rotation(d)) for d in dirs]


def measurement_indices(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.n_measurement > cfg.n_grid:
        raise ScenarioError(f"cannot pick {cfg.n_measurement} poses from a grid of {cfg.n_grid}")
    return rng.choice(cfg.n_grid, size=cfg.n_measurement, replace=False)


def measurement_poses(cfg: ScenarioConfig, rng: np.random.Generator,
                      grid: list[Pose] | None = None) -> list[Pose]:
    """M grid poses drawn without replacement (random rotations if configured)."""
    grid = evaluation_grid(cfg) if grid is None else grid
    idx = measurement_indices(cfg, rng)
    if not cfg.random_rotations:
        return [grid[i] for i in idx]
    angles = rng.uniform(0.0, 2 * np.pi, size=(idx.size, 3))
    return [Pose(grid[i].position, RotationAngles(*a)) for i, a in zip(idx, angles)]


@dataclass
class Scenario:
    """One realised simulation world."""

    cfg: ScenarioConfig
    seed: int
    user_positions: np.ndarray
    user_hotspot: np.ndarray
    hotspot_centers: np.ndarray
    scatterers: np.ndarray  # (K, paths, 3)
    users: list[UserChannel]
    measurement: list[Pose]
    measurement_index: np.ndarray
    grid: list[Pose] = field(default=None, repr=False)

    def __post_init__(self):
        if self.grid is None:
            self.grid = evaluation_grid(self.cfg)

    @property
    def layout(self) -> SurfaceLayout:
        return self.cfg.layout

    @cached_property
    def pattern(self):
        return get_pattern(self.cfg.pattern)

    @cached_property
    def grid_power(self) -> np.ndarray:
        """Ground-truth average power on the evaluation grid, (n_grid, K)."""
        return ground_truth_power(self.users, self.grid, self.layout, self.pattern)

    @cached_property
    def measurement_power(self) -> np.ndarray:
        return ground_truth_power(self.users, self.measurement, self.layout, self.pattern)

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "config": config_to_dict(self.cfg),
            "hotspot_centers": self.hotspot_centers.tolist(),
            "users": [
                {
                    "position": self.user_positions[k].tolist(),
                    "hotspot": int(self.user_hotspot[k]),
                    "scatterers": self.scatterers[k].tolist(),
                    "path_gains": u.path_gains.tolist(),
                    "path_phases": u.path_phases.tolist(),
                    "multipath_power": u.multipath_power,
                }
                for k, u in enumerate(self.users)
            ],
            "measurement_index": [int(i) for i in self.measurement_index],
            "measurement_poses": [pose_to_dict(p) for p in self.measurement],
        }

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        cfg = config_from_dict(d["config"])
        positions = np.array([u["position"] for u in d["users"]], dtype=float).reshape(-1, 3)
        scat = np.array([u["scatterers"] for u in d["users"]], dtype=float)
        users = []
        for k, u in enumerate(d["users"]):
            sc = np.asarray(u["scatterers"], dtype=float)
            users.append(UserChannel(
                u["path_gains"], u["path_phases"],
                sc / np.linalg.norm(sc, axis=1, keepdims=True),
                positions[k] / np.linalg.norm(positions[k]),
                float(u["multipath_power"]),
            ))
        return cls(
            cfg=cfg,
            seed=int(d["seed"]),
            user_positions=positions,
            user_hotspot=np.array([u["hotspot"] for u in d["users"]], dtype=int),
            hotspot_centers=np.array(d["hotspot_centers"], dtype=float).reshape(-1, 3),
            scatterers=scat,
            users=users,
            measurement=[pose_from_dict(p) for p in d["measurement_poses"]],
            measurement_index=np.array(d["measurement_index"], dtype=int),
        )

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))


def pose_to_dict(p: Pose) -> dict:
    r = p.rotation
    return {"position": list(p.position), "rotation": [r.alpha, r.beta, r.gamma]}


def pose_from_dict(d: dict) -> Pose:
    return Pose(tuple(d["position"]), RotationAngles(*d["rotation"]))


def config_to_dict(cfg: ScenarioConfig) -> dict:
    d = asdict(cfg)
    d["hotspot_distances"] = list(cfg.hotspot_distances)
    d["hotspot_radii"] = list(cfg.hotspot_radii)
    d["hotspot_directions"] = [list(x) for x in cfg.hotspot_directions]
    return d


def config_from_dict(d: dict) -> ScenarioConfig:
    known = ScenarioConfig.__dataclass_fields__
    unknown = set(d) - set(known)
    if unknown:
        raise ScenarioError(f"unknown scenario field(s): {', '.join(sorted(unknown))}")
    d = dict(d)
    for key in ("hotspot_distances", "hotspot_radii"):
        if key in d:
            d[key] = tuple(d[key])
    if "hotspot_directions" in d:
        d["hotspot_directions"] = tuple(tuple(x) for x in d["hotspot_directions"])
    return ScenarioConfig(**d)


def generate_scenario(cfg: ScenarioConfig, seed: int) -> Scenario:
    """Realise a scenario; independent sub-streams keep each part stable under config edits."""
    ss = np.random.SeedSequence(seed)
    user_ss, scat_ss, phase_ss, meas_ss = ss.spawn(4)
    placement = sample_users(cfg, np.random.default_rng(user_ss))
    scat_rng = np.random.default_rng(scat_ss)
    phase_rng = np.random.default_rng(phase_ss)
    scatterers = np.empty((cfg.n_users, cfg.n_paths, 3))
    users = []
    for k, pos in enumerate(placement.positions):
        scatterers[k] = sample_scatterers(pos, cfg.n_paths, cfg.scatter_radius, scat_rng)
        users.append(make_user_channel(pos, scatterers[k], cfg.ref_gain, cfg.pathloss_exponent,
                                       phase_rng))
    grid = evaluation_grid(cfg)
    meas_rng = np.random.default_rng(meas_ss)
    idx = measurement_indices(cfg, meas_rng)
    if cfg.random_rotations:
        angles = meas_rng.uniform(0.0, 2 * np.pi, size=(idx.size, 3))
        meas = [Pose(grid[i].position, RotationAngles(*a)) for i, a in zip(idx, angles)]
    else:
        meas = [grid[i] for i in idx]
    return Scenario(cfg, int(seed), placement.positions, placement.hotspot,
                    placement.hotspot_centers, scatterers, users, meas, idx, grid)
