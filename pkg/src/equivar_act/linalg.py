"""Complex vector helpers, Haar-random unitaries and the interleaved real embedding.

Vectors are plain complex128 numpy arrays whose last axis is the vector
dimension ``n``; any leading axes are treated as batch axes.
"""

from __future__ import annotations

import zlib

import numpy as np

UNITARY_TOL = 1e-12


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


def as_vector(u, name: str = "u") -> np.ndarray:
    """Return ``u`` as a complex128 array, rejecting empty or non-finite input."""
    arr = np.asarray(u, dtype=np.complex128)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1] < 1:
        raise DomainError(f"{name} must have dimension n >= 1")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    return arr


def norm(u) -> np.ndarray | float:
    """Euclidean norm over the last axis; exactly 0 for the zero vector."""
    u = as_vector(u)
    r = np.sqrt(np.sum(u.real**2 + u.imag**2, axis=-1))
    return float(r) if r.ndim == 0 else r


def _norm_unchecked(u: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(u.real**2 + u.imag**2, axis=-1))


def derive_seed(seed: int, *keys) -> int:
    """Deterministic 64-bit child seed for the substream named by ``keys``.

    String keys are hashed with CRC32, integers are used as-is, so a case
    such as ``("audit", "u", 8, 17)`` can be regenerated in isolation.
    """
    spawn_key = tuple(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) % 2**32 for k in keys)
    ss = np.random.SeedSequence(int(seed) % 2**64, spawn_key=spawn_key)
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def random_stream(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))


def random_vector(rng: np.random.Generator, shape, scale=1.0) -> np.ndarray:
    """Complex standard-normal entries (unit variance per complex entry)."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    z = rng.standard_normal(shape + (2,)) / np.sqrt(2.0)
    return (z[..., 0] + 1j * z[..., 1]) * scale


def unitarity_error(U) -> float:
    """Frobenius norm of U^H U - I."""
    U = np.asarray(U, dtype=np.complex128)
    n = U.shape[-1]
    return float(np.linalg.norm(U.conj().T @ U - np.eye(n)))


def as_unitary(U, tol: float = UNITARY_TOL) -> np.ndarray:
    U = np.asarray(U, dtype=np.complex128)
    if U.ndim != 2 or U.shape[0] != U.shape[1] or U.shape[0] < 1:
        raise DomainError(f"unitary must be a non-empty square matrix, got shape {U.shape}")
    err = unitarity_error(U)
    if not err <= tol:
        raise DomainError(f"matrix is not unitary: ||U^H U - I||_F = {err:.3e} > {tol:.0e}")
    return U


def haar_unitary(n: int, seed: int) -> np.ndarray:
    """Sample an n x n unitary from the Haar measure.

    A complex Ginibre matrix is QR-factorised and each column of Q is
    multiplied by the phase of the matching diagonal entry of R, which
    removes the bias of the QR sign convention.
    """
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n}")
    n = int(n)
    rng = random_stream(seed, "haar", n)
    z = random_vector(rng, (n, n))
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    # A zero diagonal has probability zero; treat it as phase 1.
    mag = np.abs(d)
    phase = np.where(mag > 0, d / np.where(mag > 0, mag, 1.0), 1.0)
    return as_unitary(q * phase)


def apply_unitary(U, u) -> np.ndarray:
    """Matrix-vector product U u over the last axis of ``u`` (broadcasts over batch axes)."""
    U = np.asarray(U, dtype=np.complex128)
    u = as_vector(u)
    if U.ndim < 2 or U.shape[-1] != U.shape[-2]:
        raise DomainError(f"U must be square, got shape {U.shape}")
    if U.shape[-1] != u.shape[-1]:
        raise DomainError(f"dimension mismatch: U is {U.shape[-1]}x{U.shape[-1]}, u has n={u.shape[-1]}")
    return np.einsum("...ij,...j->...i", U, u)


def to_real(u) -> np.ndarray:
    """Interleaved real embedding (re0, im0, re1, im1, ...) of the last axis."""
    u = np.asarray(u, dtype=np.complex128)
    return np.stack([u.real, u.imag], axis=-1).reshape(u.shape[:-1] + (2 * u.shape[-1],))


def from_real(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] % 2:
        raise DomainError(f"real embedding must have even length, got {v.shape[-1]}")
    pairs = v.reshape(v.shape[:-1] + (v.shape[-1] // 2, 2))
    out = np.empty(pairs.shape[:-1], dtype=np.complex128)
    out.real = pairs[..., 0]
    out.imag = pairs[..., 1]
    return out
