"""Pilot phase: pilot sequences, received blocks and sample covariances."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class MeasurementBlock:
    pose_index: int
    received: np.ndarray  # (L, N)
    sample_cov: np.ndarray  # (L, L)


def complex_normal(shape, rng: np.random.Generator, var: float = 1.0) -> np.ndarray:
    """i.i.d. circularly-symmetric complex Gaussian entries with variance ``var``.

    Real and imaginary parts are drawn interleaved in C order, so the leading
    rows of a taller draw coincide with a shorter one from the same state.
    """
    shape = tuple(np.atleast_1d(shape))
    z = rng.standard_normal(shape + (2,))
    return np.sqrt(var / 2.0) * (z[..., 0] + 1j * z[..., 1])


def generate_pilots(L: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """L x K pilot matrix with i.i.d. CN(0, 1) entries, one column per user."""
    if L < 1 or K < 1:
        raise ValueError("pilot length and user count must be >= 1")
    return complex_normal((L, K), rng)


def sample_covariance(Y: np.ndarray) -> np.ndarray:
    """``Y Y^H / N`` for an L x N received block."""
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.shape[1] < 1:
        raise ValueError("received block must be L x N with N >= 1")
    S = Y @ Y.conj().T / Y.shape[1]
    return 0.5 * (S + S.conj().T)


def receive_block(X: np.ndarray, H: np.ndarray, z_row, sigma2: float,
                  rng: np.random.Generator | None = None, pose_index: int = 0,
                  noise: np.ndarray | None = None) -> MeasurementBlock:
    """Received pilot block at one pose.

    ``H`` is N x K (column k is user k's channel to the N antennas) and
    ``z_row`` masks users without a channel to this pose.  Noise is drawn from
    ``rng`` unless a unit-variance ``noise`` realisation (L x N) is supplied.
    """
    X = np.asarray(X)
    H = np.asarray(H)
    z = np.asarray(z_row).reshape(-1)
    L, K = X.shape
    if H.ndim != 2 or H.shape[1] != K or z.size != K:
        raise ValueError(f"dimension mismatch: X is {X.shape}, H is {H.shape}, z has {z.size}")
    N = H.shape[0]
    if noise is None:
        noise = complex_normal((L, N), rng) if sigma2 > 0 else np.zeros((L, N), dtype=complex)
    elif noise.shape != (L, N):
        raise ValueError(f"noise must be {(L, N)}, got {noise.shape}")
    Y = (X * z[None, :]) @ H.T + np.sqrt(sigma2) * noise
    return MeasurementBlock(pose_index, Y, sample_covariance(Y))


def model_covariance(X: np.ndarray, eta, sigma2: float) -> np.ndarray:
    """``X diag(eta) X^H + sigma2 I``."""
    X = np.asarray(X)
    eta = np.asarray(eta, dtype=float)
    return (X * eta[None, :]) @ X.conj().T + sigma2 * np.eye(X.shape[0])


def noise_power_for_snr(power, snr_db: float, n_antennas: int | None = None) -> float:
    """Noise power giving the requested SNR.

    SNR is the mean per-antenna received power over (pose, user) pairs with
    non-zero power, divided by the noise power.  ``power`` is a pose x user
    matrix of average powers summed over a surface's antennas; a
    :class:`~sixdma.scenario.Scenario` is also accepted and its evaluation-grid
    ground truth is used.
    """
    if hasattr(power, "grid_power"):
        n_antennas = power.cfg.n_antennas
        power = power.grid_power
    if n_antennas is None:
        raise ValueError("n_antennas is required when passing a power matrix")
    P = np.asarray(power, dtype=float)
    supported = P > 0
    if not np.any(supported):
        raise ValueError("no user reaches any pose; SNR is undefined")
    signal = float(np.mean(P[supported])) / n_antennas
    return signal / 10.0 ** (snr_db / 10.0)


_MAGIC = b"SDMAMAT1"


def dump_blocks(path, blocks: list[MeasurementBlock], which: str = "both") -> None:
    """Write blocks to a binary container.

    Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON
    header, then each array as little-endian float64 with real and imaginary
    parts interleaved, row-major, in header order.
    """
    entries, payload = [], []
    for b in blocks:
        arrays = []
        if which in ("both", "received"):
            arrays.append(("received", b.received))
        if which in ("both", "sample_cov"):
            arrays.append(("sample_cov", b.sample_cov))
        for name, a in arrays:
            a = np.ascontiguousarray(a, dtype="<c16")
            entries.append({"pose_index": int(b.pose_index), "name": name, "shape": list(a.shape)})
            payload.append(a.view("<f8").tobytes())
    header = json.dumps({"dtype": "complex128-le-interleaved", "order": "row-major",
                         "arrays": entries}).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for chunk in payload:
            fh.write(chunk)


def load_blocks(path) -> list[dict]:
    """Read a container written by :func:`dump_blocks` as a list of entries with ``data``."""
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not a measurement container")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    offset = 16 + hlen
    out = []
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"]))
        data = np.frombuffer(raw, dtype="<f8", count=2 * count, offset=offset)
        offset += 16 * count
        out.append(dict(entry, data=data.view("<c16").reshape(entry["shape"]).copy()))
    return out
