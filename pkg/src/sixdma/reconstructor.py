"""Per-user multi-path power and DOA recovery, and power reconstruction at any pose."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import AntennaPattern, Pose, fibonacci_sphere, gain_matrix, rotation_stack


@dataclass(frozen=True)
class Dictionary:
    grid_doas: np.ndarray  # (G, 3)
    atoms: np.ndarray  # (M_k, G) gains of the supported poses towards each grid DOA
    support: np.ndarray  # pose indices the rows refer to


@dataclass(frozen=True)
class ReconstructionModel:
    s_hat: float
    f_hat: np.ndarray | None
    grid_index: int  # -1 when the user had no estimated support
    residual: float = 0.0

    @property
    def valid(self) -> bool:
        return self.grid_index >= 0


def support_set(Z_col) -> np.ndarray:
    """Sorted pose indices where the user's sparsity column is non-zero."""
    return np.flatnonzero(np.asarray(Z_col))


def dictionary_grid(G: int) -> np.ndarray:
    return fibonacci_sphere(G)


def build_dictionary(support, poses: Sequence[Pose], pattern: AntennaPattern, G: int = 500,
                     grid_doas: np.ndarray | None = None) -> Dictionary:
    """Gain dictionary of the supported poses against G candidate DOAs."""
    support = np.asarray(support, dtype=int).reshape(-1)
    if support.size == 0:
        raise ValueError("empty support: the user was not observed at any pose")
    if grid_doas is None:
        if G < 1:
            raise ValueError("dictionary needs at least one grid point")
        grid_doas = dictionary_grid(G)
    R = rotation_stack(poses)[support]
    return Dictionary(grid_doas, gain_matrix(pattern, R, grid_doas), support)


def atom_fits(p: np.ndarray, atoms: np.ndarray, N: int):
    """Best non-negative coefficient and squared residual for every atom.

    For atom v the coefficient is ``max(0, <v, p> / (N ||v||^2))``; an all-zero
    atom gets coefficient 0.
    """
    p = np.asarray(p, dtype=float)
    A = N * np.asarray(atoms, dtype=float)
    norms = np.einsum("mg,mg->g", A, A)
    corr = A.T @ p
    with np.errstate(invalid="ignore", divide="ignore"):
        coef = np.where(norms > 0, np.maximum(corr, 0.0) / norms, 0.0)
    resid = np.sum((p[:, None] - A * coef[None, :]) ** 2, axis=0)
    return coef, resid


def estimate_user(p_bar_col, support, dictionary: Dictionary, N: int) -> ReconstructionModel:
    """Single-atom non-negative fit of a user's measured powers on its support.

    With exactly one active atom a single pursuit iteration is the global
    optimum over the grid, so every atom is scored and the lowest residual
    wins (ties go to the lowest grid index).
    """
    support = np.asarray(support, dtype=int).reshape(-1)
    if support.size == 0:
        return ReconstructionModel(0.0, None, -1, 0.0)
    if not np.array_equal(support, dictionary.support):
        raise ValueError("dictionary was built for a different support set")
    p = np.asarray(p_bar_col, dtype=float)[support]
    coef, resid = atom_fits(p, dictionary.atoms, N)
    g = int(np.argmin(resid))
    return ReconstructionModel(float(coef[g]), dictionary.grid_doas[g].copy(), g, float(resid[g]))


def fit_users(P_bar: np.ndarray, Z: np.ndarray, poses: Sequence[Pose], pattern: AntennaPattern,
              N: int, G: int = 500) -> list[ReconstructionModel]:
    """Run :func:`estimate_user` for every column of ``P_bar``."""
    grid = dictionary_grid(G)
    all_atoms = gain_matrix(pattern, rotation_stack(poses), grid)
    models = []
    for k in range(P_bar.shape[1]):
        sup = support_set(Z[:, k])
        if sup.size == 0:
            models.append(ReconstructionModel(0.0, None, -1, 0.0))
            continue
        d = Dictionary(grid, all_atoms[sup], sup)
        models.append(estimate_user(P_bar[:, k], sup, d, N))
    return models


def reconstruct_power(models: Sequence[ReconstructionModel], query_poses: Sequence[Pose],
                      pattern: AntennaPattern, N: int) -> np.ndarray:
    """``N g(u_b, f_hat_k) s_hat_k`` for every query pose b and user k."""
    R = rotation_stack(query_poses)
    P = np.zeros((R.shape[0], len(models)))
    for k, m in enumerate(models):
        if not m.valid or m.s_hat <= 0:
            continue
        P[:, k] = N * gain_matrix(pattern, R, m.f_hat[None, :])[:, 0] * m.s_hat
    return P


def models_to_json(models: Sequence[ReconstructionModel], indent: int | None = 2) -> str:
    rows = []
    for k, m in enumerate(models):
        rows.append({
            "user": k,
            "s_hat": m.s_hat,
            "f_hat": None if m.f_hat is None else [float(c) for c in m.f_hat],
            "grid_index": m.grid_index,
            "residual": m.residual,
        })
    return json.dumps({"users": rows}, indent=indent)


def models_from_json(text: str) -> list[ReconstructionModel]:
    out = []
    for r in json.loads(text)["users"]:
        f = None if r["f_hat"] is None else np.array(r["f_hat"], dtype=float)
        out.append(ReconstructionModel(float(r["s_hat"]), f, int(r["grid_index"]),
                                       float(r.get("residual", 0.0))))
    return out
