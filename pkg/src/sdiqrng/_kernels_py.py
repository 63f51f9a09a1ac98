"""Pure numpy implementations of the interior-point inner kernels.

Shapes: ``A`` is ``(m, nb, d, d)`` (one Hermitian operator per constraint and
block), ``X``/``Zinv``/``W`` are ``(nb, d, d)``, ``y`` is ``(m,)``.
"""

import numpy as np


def schur(A, X, Zinv):
    """M[e, f] = Re sum_b tr(A[e,b] X[b] A[f,b] Zinv[b])."""
    m = A.shape[0]
    G = X[None] @ A @ Zinv[None]
    # tr(A_e G_f) = sum_ij conj(A_e)_ij G_f_ij because A_e is Hermitian
    M = (A.conj().reshape(m, -1) @ G.reshape(m, -1).T).real
    return 0.5 * (M + M.T)


def apply_ops(A, W):
    """v[e] = Re sum_b tr(A[e,b] W[b])."""
    m = A.shape[0]
    return (A.conj().reshape(m, -1) @ W.reshape(-1)).real


def adjoint(A, y):
    """sum_e y[e] A[e]."""
    return np.tensordot(y, A, axes=(0, 0))
