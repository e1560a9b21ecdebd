"""Covariance-fitting ML estimation of per-pose power state vectors.

Each pose m is fitted independently: the columns of the received block are
modelled as CN(0, X diag(eta) X^H + sigma2 I) and the negative log-likelihood

    f(eta) = ln det(Sigma) + tr(Sigma^-1 Sigma_hat)

is minimised over eta >= 0 by coordinate descent.  A coordinate step has a
closed form and the inverse covariance is carried along with rank-one
(Sherman-Morrison) updates, so a step costs O(L^2).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .measurement import MeasurementBlock, model_covariance


class EstimationError(ArithmeticError):
    """Numerically invalid state (singular covariance, non-positive quadratic form)."""


@dataclass(frozen=True)
class EstimatorConfig:
    sweeps: int = 50
    # stop once a sweep lowers the objective by less than tol * |f|
    tol: float = 1e-8
    # sweeps between dense re-inversions of Sigma; 0 disables refreshing
    refresh_period: int = 1
    # re-invert a pose's Sigma right after a step with 1 + nu q below this value;
    # such near-cancelling downdates are where Sherman-Morrison loses accuracy
    downdate_guard: float = 1e-3
    threshold: float = 0.01
    threshold_mode: str = "relative"  # or "absolute"

    def __post_init__(self):
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.threshold_mode not in ("relative", "absolute"):
            raise ValueError(f"unknown threshold_mode {self.threshold_mode!r}")
        if self.refresh_period < 0 or self.tol < 0 or self.downdate_guard < 0:
            raise ValueError("refresh_period, tol and downdate_guard must be non-negative")


@dataclass
class PowerState:
    eta: np.ndarray  # (K,)
    cov: np.ndarray  # (L, L)
    cov_inv: np.ndarray  # (L, L)

    @classmethod
    def initial(cls, L: int, K: int, sigma2: float) -> "PowerState":
        if sigma2 <= 0:
            raise EstimationError("noise power must be positive for a non-singular start")
        return cls(np.zeros(K), sigma2 * np.eye(L, dtype=complex), np.eye(L, dtype=complex) / sigma2)

    @classmethod
    def from_eta(cls, X, eta, sigma2: float) -> "PowerState":
        cov = model_covariance(X, eta, sigma2)
        return cls(np.array(eta, dtype=float), cov, _hermitian_inv(cov))

    def copy(self) -> "PowerState":
        return PowerState(self.eta.copy(), self.cov.copy(), self.cov_inv.copy())


def _hermitian_inv(A: np.ndarray) -> np.ndarray:
    inv = np.linalg.inv(A)
    return 0.5 * (inv + np.conj(np.swapaxes(inv, -1, -2)))


def _objective_batch(cov: np.ndarray, S: np.ndarray) -> np.ndarray:
    lam = np.linalg.eigvalsh(cov)
    # numerically singular once the spread exceeds what double precision resolves
    floor = cov.shape[-1] * np.finfo(float).eps * np.abs(lam[..., -1:])
    if not np.all(np.isfinite(lam)) or np.any(lam[..., :1] <= floor):
        raise EstimationError("model covariance is singular or not positive definite")
    logdet = np.sum(np.log(lam), axis=-1)
    tr = np.real(np.trace(np.linalg.solve(cov, S), axis1=-2, axis2=-1))
    return logdet + tr


def objective(state: PowerState, sample_cov: np.ndarray) -> float:
    """Negative log-likelihood ``ln det(Sigma) + tr(Sigma^-1 Sigma_hat)``."""
    return float(_objective_batch(state.cov, np.asarray(sample_cov)))


def _quadratic_forms(cov_inv, sample_cov, x):
    a = cov_inv @ x
    q = float(np.real(np.vdot(x, a)))
    b = float(np.real(np.vdot(a, sample_cov @ a)))
    return a, q, b


def coordinate_gradient(state: PowerState, sample_cov, x_k, nu: float) -> float:
    """Derivative of ``f(eta + nu e_k)`` with respect to ``nu``."""
    _, q, b = _quadratic_forms(state.cov_inv, sample_cov, np.asarray(x_k))
    d = 1.0 + nu * q
    return q / d - b / d ** 2


def coordinate_objective(state: PowerState, sample_cov, x_k, nu: float) -> float:
    """``f(eta + nu e_k)`` via the rank-one determinant and inverse identities."""
    _, q, b = _quadratic_forms(state.cov_inv, sample_cov, np.asarray(x_k))
    d = 1.0 + nu * q
    return objective(state, sample_cov) + np.log(d) - nu * b / d


def unconstrained_step(state: PowerState, sample_cov, x_k) -> float:
    """Stationary point of the coordinate objective, ignoring eta >= 0."""
    _, q, b = _quadratic_forms(state.cov_inv, sample_cov, np.asarray(x_k))
    if q <= 0:
        raise EstimationError("x^H Sigma^-1 x <= 0: inverse covariance is corrupted")
    return (b - q) / q ** 2


def coordinate_step(state: PowerState, sample_cov, k: int, x_k) -> tuple[float, PowerState]:
    """One projected coordinate update of ``eta[k]``; returns ``(nu_star, new_state)``.

    The input state is left untouched.
    """
    x = np.asarray(x_k, dtype=complex)
    a, q, b = _quadratic_forms(state.cov_inv, sample_cov, x)
    if q <= 0:
        raise EstimationError("x^H Sigma^-1 x <= 0: inverse covariance is corrupted")
    nu_bar = (b - q) / q ** 2
    nu = max(nu_bar, -state.eta[k])
    new = state.copy()
    if nu != 0.0:
        new.eta[k] = state.eta[k] + nu
        new.cov += nu * np.outer(x, x.conj())
        new.cov_inv -= (nu / (1.0 + nu * q)) * np.outer(a, a.conj())
    return nu, new


def _descend(S: np.ndarray, X: np.ndarray, sigma2: float, cfg: EstimatorConfig,
             rngs: Sequence[np.random.Generator], trace: list | None = None,
             pose_ids: Sequence[int] | None = None):
    """Coordinate descent for a stack of poses at once.

    Poses are updated in lock-step but never interact: each pose draws its
    own visiting order from its own generator, so results do not depend on
    how poses are batched.  Works on data scaled by 1/sigma2.
    """
    M, L, _ = S.shape
    K = X.shape[1]
    if sigma2 <= 0:
        raise EstimationError("noise power must be positive for a non-singular start")
    Sn = S / sigma2
    XT = np.ascontiguousarray(X.T)  # (K, L)
    eye = np.eye(L)
    eta = np.zeros((M, K))
    cov = np.broadcast_to(np.eye(L, dtype=complex), (M, L, L)).copy()
    inv = cov.copy()
    f_prev = _objective_batch(cov, Sn)
    active = np.arange(M)
    sweeps_done = np.zeros(M, dtype=int)
    ids = list(range(M)) if pose_ids is None else list(pose_ids)
    if trace is not None:
        for m in range(M):
            trace.append((ids[m], 0, f_prev[m] + L * np.log(sigma2)))

    for t in range(1, cfg.sweeps + 1):
        if active.size == 0:
            break
        perms = np.stack([rngs[m].permutation(K) for m in active])
        e, c, iv, s = eta[active], cov[active], inv[active], Sn[active]
        rows = np.arange(active.size)
        for i in range(K):
            k = perms[:, i]
            x = XT[k]  # (A, L)
            a = np.matmul(iv, x[:, :, None])[:, :, 0]
            q = np.real(np.einsum("al,al->a", x.conj(), a))
            if np.any(q <= 0):
                raise EstimationError("x^H Sigma^-1 x <= 0: inverse covariance is corrupted")
            sa = np.matmul(s, a[:, :, None])[:, :, 0]
            b = np.real(np.einsum("al,al->a", a.conj(), sa))
            nu = np.maximum((b - q) / q ** 2, -e[rows, k])
            e[rows, k] += nu
            d = 1.0 + nu * q
            iv -= ((nu / d)[:, None] * a)[:, :, None] * a.conj()[:, None, :]
            bad = np.flatnonzero(d < cfg.downdate_guard)
            if bad.size:
                iv[bad] = _hermitian_inv((X[None, :, :] * e[bad][:, None, :]) @ X.conj().T + eye)
        # Sigma itself is only needed per sweep: rebuild it from eta
        c = (X[None, :, :] * e[:, None, :]) @ X.conj().T + eye
        if cfg.refresh_period and t % cfg.refresh_period == 0:
            iv = _hermitian_inv(c)
        eta[active], cov[active], inv[active] = e, c, iv
        sweeps_done[active] = t
        f = _objective_batch(c, s)
        if trace is not None:
            for j, m in enumerate(active):
                trace.append((ids[m], t, f[j] + L * np.log(sigma2)))
        done = (f_prev[active] - f) < cfg.tol * np.abs(f)
        f_prev[active] = f
        active = active[~done]

    states = [PowerState(eta[m] * sigma2, cov[m] * sigma2, inv[m] / sigma2) for m in range(M)]
    return states, sweeps_done


def _spawn(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    return list(rng.spawn(n))


def estimate_pose(sample_cov: np.ndarray, X: np.ndarray, sigma2: float, cfg: EstimatorConfig,
                  rng: np.random.Generator, trace: list | None = None) -> PowerState:
    """Fit the power state vector of one pose, starting from eta = 0.

    Each sweep visits all K coordinates in a fresh random order.  ``eta`` is
    the per-antenna power of each user at this pose.
    """
    S = np.asarray(sample_cov)[None]
    states, _ = _descend(S, np.asarray(X), sigma2, cfg, [rng], trace)
    return states[0]


def estimate_states(blocks: Sequence[MeasurementBlock], X, sigma2: float, cfg: EstimatorConfig,
                    rng: np.random.Generator, trace: list | None = None,
                    batch_size: int = 32) -> list[PowerState]:
    """Fit every block; pose m uses the m-th generator spawned from ``rng``."""
    rngs = _spawn(rng, len(blocks))
    X = np.asarray(X)
    out = []
    for start in range(0, len(blocks), batch_size):
        chunk = blocks[start:start + batch_size]
        S = np.array([b.sample_cov for b in chunk])
        states, _ = _descend(S, X, sigma2, cfg, rngs[start:start + batch_size], trace,
                             [b.pose_index for b in chunk])
        out.extend(states)
    return out


def threshold_support(P: np.ndarray, cfg: EstimatorConfig) -> np.ndarray:
    """Binary support of a pose x user power matrix under the configured rule.

    Relative rule: entry (m, k) is kept when it exceeds ``threshold`` times the
    largest value in column k.  Absolute rule: when it exceeds ``threshold``.
    """
    P = np.asarray(P, dtype=float)
    if cfg.threshold_mode == "relative":
        ref = cfg.threshold * P.max(axis=0, initial=0.0)
        Z = (P > ref[None, :]) & (P > 0)
    else:
        Z = P > cfg.threshold
    return Z.astype(np.int8)


def estimate_all(blocks: Sequence[MeasurementBlock], X, sigma2: float, cfg: EstimatorConfig,
                 rng: np.random.Generator, trace: list | None = None):
    """Average channel power matrix and directional sparsity estimate.

    Returns ``(P_bar, Z)``, both M x K.  ``P_bar`` is summed over the N
    antennas of a surface (N times the fitted per-antenna power), matching
    :func:`sixdma.channel.ground_truth_power`.
    """
    if len(blocks) < 1:
        raise ValueError("need at least one measurement block")
    N = blocks[0].received.shape[1]
    states = estimate_states(blocks, X, sigma2, cfg, rng, trace)
    P_bar = N * np.array([s.eta for s in states])
    return P_bar, threshold_support(P_bar, cfg)

