"""Complex Hermitian linear algebra helpers.

Operators are plain ``numpy`` arrays of dtype ``complex128``. The constructors
in this module validate Hermiticity, symmetrize, and return read-only arrays so
that values can be shared freely.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

HERMITIAN_TOL = 1e-12


class NotHermitianError(ValueError):
    """Raised when a matrix is not Hermitian within tolerance."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def hermitian(data, tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Validate ``data`` as a Hermitian matrix and return ``(A + A^dag)/2``.

    Raises NotHermitianError if any entry differs from the conjugate of its
    transpose partner by more than ``tol``, or if an entry is not finite.
    """
    a = np.array(data, dtype=np.complex128)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise NotHermitianError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotHermitianError("matrix has non-finite entries")
    dev = np.max(np.abs(a - a.conj().T))
    if dev > tol:
        raise NotHermitianError(f"matrix deviates from Hermitian by {dev:.3e}")
    return _freeze(0.5 * (a + a.conj().T))


def pure_state(amplitudes, tol: float = 1e-12) -> np.ndarray:
    """Return a read-only ket; the squared norm must equal 1 within ``tol``."""
    v = np.array(amplitudes, dtype=np.complex128).reshape(-1)
    if v.size < 1 or not np.all(np.isfinite(v)):
        raise ValueError("state needs at least one finite amplitude")
    norm2 = float(np.vdot(v, v).real)
    if abs(norm2 - 1.0) > tol:
        raise ValueError(f"state is not normalized (|psi|^2 = {norm2!r})")
    return _freeze(v)


def projector(ket) -> np.ndarray:
    """|psi><psi| for a ket (normalization is not checked)."""
    v = np.asarray(ket, dtype=np.complex128).reshape(-1)
    return _freeze(np.outer(v, v.conj()))


def _check(a: np.ndarray, tol: float) -> np.ndarray:
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotHermitianError(f"expected a square matrix, got shape {a.shape}")
    if np.max(np.abs(a - a.conj().T), initial=0.0) > tol * max(1.0, np.max(np.abs(a), initial=0.0)):
        raise NotHermitianError("matrix is not Hermitian within tolerance")
    return a


def eigh(a: np.ndarray, tol: float = HERMITIAN_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and eigenvectors of a Hermitian matrix."""
    a = _check(a, tol)
    return np.linalg.eigh(0.5 * (a + a.conj().T))


def min_eigenvalue(a: np.ndarray, tol: float = HERMITIAN_TOL) -> float:
    a = _check(a, tol)
    return float(np.linalg.eigvalsh(0.5 * (a + a.conj().T))[0])


def max_eigenvalue(a: np.ndarray, tol: float = HERMITIAN_TOL) -> float:
    a = _check(a, tol)
    return float(np.linalg.eigvalsh(0.5 * (a + a.conj().T))[-1])


def is_psd(a: np.ndarray, tol: float = 1e-9) -> bool:
    """True iff the smallest eigenvalue of ``a`` is at least ``-tol``."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    return min_eigenvalue(a) >= -tol


def trace_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Re tr(A B) for Hermitian A, B."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    # tr(AB) = sum_ij A_ij B_ji = sum_ij A_ij conj(B_ij) for Hermitian B
    val = np.vdot(b, a)
    return float(val.real)


@lru_cache(maxsize=None)
def _basis(d: int) -> np.ndarray:
    out = np.zeros((d * d, d, d), dtype=np.complex128)
    k = 0
    for i in range(d):
        out[k, i, i] = 1.0
        k += 1
    s = 1.0 / np.sqrt(2.0)
    for i in range(d):
        for j in range(i + 1, d):
            out[k, i, j] = out[k, j, i] = s
            k += 1
            out[k, i, j] = -1j * s
            out[k, j, i] = 1j * s
            k += 1
    return _freeze(out)


def hermitian_basis(d: int) -> np.ndarray:
    """Trace-orthonormal basis of the d*d-dimensional real space of Hermitian matrices.

    Returned as a read-only array of shape ``(d*d, d, d)``: the diagonal units
    first, then the symmetric and antisymmetric off-diagonal pairs.
    """
    if d < 1:
        raise ValueError("d must be a positive integer")
    return _basis(int(d))


@lru_cache(maxsize=None)
def _traceless(d: int) -> np.ndarray:
    full = _basis(d)
    # orthonormal complement of (1,...,1) inside the diagonal units
    q, _ = np.linalg.qr(np.eye(d) - np.full((d, d), 1.0 / d))
    diag = np.einsum("ik,kab->iab", q[:, : d - 1].T, full[:d]) if d > 1 else full[:0]
    return _freeze(np.concatenate([diag, full[d:]]))


def traceless_basis(d: int) -> np.ndarray:
    """Trace-orthonormal basis of the traceless Hermitian matrices, shape ``(d*d-1, d, d)``."""
    if d < 1:
        raise ValueError("d must be a positive integer")
    return _traceless(int(d))


def hermitian_coords(a: np.ndarray) -> np.ndarray:
    """Real coordinates of a Hermitian matrix in :func:`hermitian_basis`."""
    a = np.asarray(a, dtype=np.complex128)
    basis = hermitian_basis(a.shape[0])
    return np.einsum("kij,ji->k", basis, a).real


def from_hermitian_coords(x: np.ndarray, d: int) -> np.ndarray:
    return np.einsum("k,kij->ij", np.asarray(x, dtype=float), hermitian_basis(d))


def random_hermitian(d: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * 0.5 * (g + g.conj().T)


def random_density(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random density matrix (Ginibre ensemble of the given rank)."""
    r = d if rank is None else rank
    g = rng.normal(size=(d, r)) + 1j * rng.normal(size=(d, r))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real
