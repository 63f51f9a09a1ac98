"""Small dense semidefinite programs over complex Hermitian blocks.

A problem is::

    maximize (or minimize)  sum_b tr(C_b X_b)
    subject to              sum_b tr(A_eb X_b) = rhs_e   for every constraint e
                            X_b >= 0

The solver is an infeasible-start primal-dual interior-point method (HKM search
direction, Mehrotra predictor-corrector). Dual multipliers ``y`` are reported in
the sense of the problem: for a maximization the dual reads
``minimize rhs . y  s.t.  sum_e y_e A_e - C >= 0``; for a minimization it reads
``maximize rhs . y  s.t.  C - sum_e y_e A_e >= 0``.

Initialization is fixed: ``X_b = xi I`` with ``xi`` the least-squares scale
fitting the equality constraints (clipped to ``[1e-3, 1e3]``), ``Z_b = zeta I``
with ``zeta = 1 + max_b ||C_b||_F`` and ``y = 0``. Two solves of the same
problem therefore return identical results.
"""

from __future__ import annotations

import io
import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from . import kernels, matcore

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"


class RedundantConstraintWarning(UserWarning):
    """Linearly dependent equality constraints were dropped before solving."""


class SolverError(RuntimeError):
    """Raised by callers that need an optimal solution and did not get one."""

    def __init__(self, status: str, message: str = ""):
        super().__init__(f"SDP solve ended with status {status!r}: {message}")
        self.status = status


@dataclass(frozen=True)
class SdpProblem:
    block_dims: tuple[int, ...]
    objective: tuple[np.ndarray, ...]
    constraint_ops: tuple[tuple[np.ndarray, ...], ...]
    rhs: np.ndarray
    sense: str = "maximize"
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.sense not in ("maximize", "minimize"):
            raise ValueError(f"unknown sense {self.sense!r}")
        if len(self.objective) != len(self.block_dims):
            raise ValueError("one objective operator per block is required")
        for d, c in zip(self.block_dims, self.objective):
            if c.shape != (d, d):
                raise ValueError("objective operator does not match block dimension")
        if len(self.constraint_ops) != len(self.rhs):
            raise ValueError("one rhs value per constraint is required")
        for ops in self.constraint_ops:
            if len(ops) != len(self.block_dims):
                raise ValueError("constraint must list one operator per block")
            for d, a in zip(self.block_dims, ops):
                if a.shape != (d, d):
                    raise ValueError("constraint operator does not match block dimension")

    @classmethod
    def build(
        cls,
        block_dims: Sequence[int],
        objective: Mapping[int, np.ndarray],
        constraints: Sequence[tuple[Mapping[int, np.ndarray], float]],
        sense: str = "maximize",
        labels: Sequence[str] = (),
    ) -> "SdpProblem":
        """Assemble a problem from sparse block maps; missing blocks are zero."""
        dims = tuple(int(d) for d in block_dims)
        if any(d < 1 for d in dims):
            raise ValueError("block dimensions must be positive")

        def dense(mapping):
            out = []
            for b, d in enumerate(dims):
                if b in mapping:
                    out.append(matcore.hermitian(mapping[b]))
                else:
                    out.append(np.zeros((d, d), dtype=np.complex128))
            return tuple(out)

        for mapping, _ in constraints:
            bad = [b for b in mapping if not 0 <= b < len(dims)]
            if bad:
                raise ValueError(f"constraint references unknown blocks {bad}")
        ops = tuple(dense(mapping) for mapping, _ in constraints)
        rhs = np.array([float(r) for _, r in constraints], dtype=float)
        return cls(dims, dense(objective), ops, rhs, sense, tuple(labels))

    @property
    def n_constraints(self) -> int:
        return len(self.rhs)

    def constraint_matrix(self) -> np.ndarray:
        """Real coordinates of every constraint, one row per constraint."""
        rows = []
        for ops in self.constraint_ops:
            rows.append(np.concatenate([matcore.hermitian_coords(a) for a in ops]))
        return np.array(rows).reshape(self.n_constraints, -1)

    def scaled(self, s: float) -> "SdpProblem":
        """Same feasible set, objective multiplied by ``s``."""
        return SdpProblem(
            self.block_dims,
            tuple(s * c for c in self.objective),
            self.constraint_ops,
            self.rhs,
            self.sense,
            self.labels,
        )


@dataclass(frozen=True)
class SdpSolution:
    status: str
    blocks: tuple[np.ndarray, ...]
    y: np.ndarray
    primal_value: float
    dual_value: float
    gap: float
    iterations: int = 0
    dropped: tuple[int, ...] = ()
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass(frozen=True)
class SolutionReport:
    max_primal_residual: float
    min_block_eigenvalue: float
    dual_slack_margin: float
    gap: float


def dual_slacks(problem: SdpProblem, y: np.ndarray) -> list[np.ndarray]:
    """Dual slack operators; PSD slacks mean ``y`` is dual feasible."""
    sign = 1.0 if problem.sense == "maximize" else -1.0
    out = []
    for b in range(len(problem.block_dims)):
        s = sum((y[e] * problem.constraint_ops[e][b] for e in range(problem.n_constraints)),
                np.zeros_like(problem.objective[b]))
        out.append(sign * (s - problem.objective[b]))
    return out


def check_solution(problem: SdpProblem, sol: SdpSolution) -> SolutionReport:
    """Recompute residuals, eigenvalues, dual slack and gap from scratch."""
    if len(sol.blocks) != len(problem.block_dims) or len(sol.y) != problem.n_constraints:
        raise ValueError("solution does not match the problem dimensions")
    for d, x in zip(problem.block_dims, sol.blocks):
        if x.shape != (d, d):
            raise ValueError("solution block does not match block dimension")
    resid = 0.0
    for e in range(problem.n_constraints):
        val = sum(matcore.trace_inner(problem.constraint_ops[e][b], sol.blocks[b])
                  for b in range(len(problem.block_dims)))
        resid = max(resid, abs(val - problem.rhs[e]))
    min_eig = min(matcore.min_eigenvalue(x, tol=1e-9) for x in sol.blocks)
    slack = min(matcore.min_eigenvalue(s, tol=1e-9) for s in dual_slacks(problem, sol.y))
    pval = sum(matcore.trace_inner(c, x) for c, x in zip(problem.objective, sol.blocks))
    dval = float(problem.rhs @ sol.y)
    gap = dval - pval if problem.sense == "maximize" else pval - dval
    return SolutionReport(resid, min_eig, slack, gap)


def independent_rows(mat: np.ndarray, tol: float = 1e-10) -> list[int]:
    """Greedy in-order rank-revealing selection (modified Gram-Schmidt)."""
    basis: list[np.ndarray] = []
    keep = []
    scale = max(1.0, float(np.max(np.abs(mat), initial=0.0)))
    for i, row in enumerate(mat):
        v = row.astype(float).copy()
        for _ in range(2):
            for q in basis:
                v -= (q @ v) * q
        nv = np.linalg.norm(v)
        if nv > tol * max(scale, np.linalg.norm(row)):
            basis.append(v / nv)
            keep.append(i)
    return keep


def constraint_dependencies(problem: SdpProblem, tol: float = 1e-10) -> np.ndarray:
    """Basis (rows) of all ``g`` with ``sum_e g_e A_e = 0``."""
    mat = problem.constraint_matrix()
    if mat.size == 0:
        return np.zeros((0, problem.n_constraints))
    u, s, vt = np.linalg.svd(mat.T, full_matrices=True)
    rank = int(np.sum(s > tol * max(1.0, s[0] if s.size else 1.0)))
    return vt[rank:].copy()


# ---------------------------------------------------------------------------
# interior point method


def _group(problem: SdpProblem, keep: list[int], c_sign: float):
    groups = {}
    for b, d in enumerate(problem.block_dims):
        groups.setdefault(d, []).append(b)
    out = []
    for d, idx in sorted(groups.items()):
        A = np.ascontiguousarray(
            [[problem.constraint_ops[e][b] for b in idx] for e in keep], dtype=np.complex128
        ).reshape(len(keep), len(idx), d, d)
        C = np.ascontiguousarray([c_sign * problem.objective[b] for b in idx], dtype=np.complex128)
        out.append((idx, A, C))
    return out


def _inner(X, Z):
    return float(np.vdot(Z.reshape(-1), X.reshape(-1)).real)


def _herm(W):
    return 0.5 * (W + np.conj(np.swapaxes(W, -1, -2)))


def _max_step(X, dX):
    """Largest alpha with X + alpha dX >= 0 (inf if unbounded)."""
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(X)
        w = np.maximum(w, 1e-300)
        L = v * np.sqrt(w)[:, None, :]
    Li = np.linalg.inv(L)
    T = Li @ dX @ np.conj(np.swapaxes(Li, -1, -2))
    lam = float(np.min(np.linalg.eigvalsh(_herm(T))))
    return np.inf if lam >= 0 else -1.0 / lam


def _solve_spd(M, r):
    try:
        cf = scipy.linalg.cho_factor(M, check_finite=False)
        return scipy.linalg.cho_solve(cf, r, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return np.linalg.lstsq(M, r, rcond=None)[0]


def solve(
    problem: SdpProblem,
    gap_tol: float = 1e-8,
    feas_tol: float = 1e-10,
    max_iter: int = 120,
) -> SdpSolution:
    """Solve ``problem``; never reports a non-converged point as optimal.

    Convergence requires ``|dual - primal| <= gap_tol * max(1, |primal|)``,
    equality residuals below ``feas_tol * max(1, |rhs|)`` and a dual residual
    norm below ``10 * feas_tol``.
    """
    m_all = problem.n_constraints
    dims = problem.block_dims
    maximize = problem.sense == "maximize"
    c_sign = -1.0 if maximize else 1.0  # internal form is a minimization

    def result(status, Xs=None, y_red=None, it=0, dropped=(), msg=""):
        y_full = np.zeros(m_all)
        if y_red is not None:
            y_full[keep] = y_red
        y_out = -y_full if maximize else y_full
        blocks = []
        for b, d in enumerate(dims):
            blocks.append(np.zeros((d, d), dtype=np.complex128) if Xs is None else Xs[b])
        pval = sum(matcore.trace_inner(c, x) for c, x in zip(problem.objective, blocks))
        dval = float(problem.rhs @ y_out)
        gap = dval - pval if maximize else pval - dval
        return SdpSolution(status, tuple(blocks), y_out, pval, dval, gap, it, tuple(dropped), msg)

    # rank filter
    mat = problem.constraint_matrix() if m_all else np.zeros((0, 1))
    keep = independent_rows(mat) if m_all else []
    dropped = [e for e in range(m_all) if e not in keep]
    if dropped:
        coef, *_ = np.linalg.lstsq(mat[keep].T, mat[dropped].T, rcond=None)
        implied = coef.T @ problem.rhs[keep]
        bad = np.abs(implied - problem.rhs[dropped]) > 1e-10 * np.maximum(1.0, np.abs(problem.rhs[dropped]))
        if np.any(bad):
            return result(INFEASIBLE, dropped=dropped,
                          msg="dependent constraints with inconsistent right-hand sides")
        warnings.warn(
            f"dropped {len(dropped)} linearly dependent constraint(s) {dropped}",
            RedundantConstraintWarning,
            stacklevel=2,
        )

    groups = _group(problem, keep, c_sign)
    b = problem.rhs[keep].astype(float)
    m = len(keep)
    n_total = sum(dims)
    b_scale = max(1.0, float(np.max(np.abs(b), initial=0.0)))
    c_norm = max(float(np.max([np.linalg.norm(C.reshape(len(C), -1), axis=1).max() for _, _, C in groups])), 0.0)

    # fixed initialization
    AI = sum(kernels.apply_ops(A, np.ascontiguousarray(np.broadcast_to(np.eye(A.shape[2]), A.shape[1:]), dtype=np.complex128))
             for _, A, _ in groups) if m else np.zeros(0)
    xi = float(AI @ b / (AI @ AI)) if m and AI @ AI > 0 else 1.0
    xi = float(np.clip(xi, 1e-3, 1e3)) if xi > 0 else 1.0
    zeta = 1.0 + c_norm
    X = [xi * np.broadcast_to(np.eye(A.shape[2]), A.shape[1:]).astype(np.complex128) for _, A, _ in groups]
    Z = [zeta * np.broadcast_to(np.eye(A.shape[2]), A.shape[1:]).astype(np.complex128) for _, A, _ in groups]
    y = np.zeros(m)
    # Gram matrix of the kept constraints; used to keep primal steps on A dX = r_p
    gram = scipy.linalg.cho_factor(mat[keep] @ mat[keep].T, check_finite=False) if m else None

    def A_of(Ws):
        if not m:
            return np.zeros(0)
        return sum(kernels.apply_ops(A, np.ascontiguousarray(W)) for (_, A, _), W in zip(groups, Ws))

    def AT_of(v):
        return [kernels.adjoint(A, np.ascontiguousarray(v, dtype=float)) if m
                else np.zeros(A.shape[1:], dtype=np.complex128) for _, A, _ in groups]

    def unpack(Xg):
        out = [None] * len(dims)
        for (idx, _, _), Xb in zip(groups, Xg):
            for k, bi in enumerate(idx):
                out[bi] = _herm(Xb[k])
        return out

    msg = ""
    for it in range(1, max_iter + 1):
        ATy = AT_of(y)
        rp = b - A_of(X)
        Rd = [C - Zg - T for (_, _, C), Zg, T in zip(groups, Z, ATy)]
        pobj = sum(_inner(C, Xg) for (_, _, C), Xg in zip(groups, X))
        dobj = float(b @ y)
        mu = sum(_inner(Xg, Zg) for Xg, Zg in zip(X, Z)) / n_total
        pinf = float(np.max(np.abs(rp) / np.maximum(1.0, np.abs(b)), initial=0.0))
        dinf = max(float(np.linalg.norm(R.reshape(len(R), -1), axis=1).max()) for R in Rd)
        gap = abs(pobj - dobj)

        if pinf <= feas_tol and dinf <= 10 * feas_tol and gap <= gap_tol * max(1.0, abs(pobj)):
            return result(OPTIMAL, unpack(X), y, it, dropped)

        # infeasibility certificates
        if m and dobj > 1e9 * (1.0 + c_norm):
            lam = max(float(np.linalg.eigvalsh(_herm(T)).max()) for T in ATy)
            if lam <= 1e-8 * dobj:
                return result(INFEASIBLE, unpack(X), y, it, dropped, "primal infeasible (Farkas)")
        if pobj < -1e9 * b_scale:
            aX = A_of(X)
            if np.linalg.norm(aX) <= 1e-8 * abs(pobj):
                return result(UNBOUNDED, unpack(X), y, it, dropped, "dual infeasible")

        Zi = [np.linalg.inv(Zg) for Zg in Z]
        M = sum(kernels.schur(A, np.ascontiguousarray(Xg), np.ascontiguousarray(Zig))
                for (_, A, _), Xg, Zig in zip(groups, X, Zi)) if m else np.zeros((0, 0))
        XRZ = [Xg @ R @ Zig for Xg, R, Zig in zip(X, Rd, Zi)]
        AX = A_of(X)
        AZi = A_of(Zi)
        AXRZ = A_of(XRZ)

        def direction(sigma_mu, corr):
            r = rp + AX - sigma_mu * AZi + AXRZ
            if corr is not None:
                r = r + A_of(corr)
            dy = _solve_spd(M, r) if m else np.zeros(0)
            ATdy = AT_of(dy)
            dZ = [R - T for R, T in zip(Rd, ATdy)]
            dX = []
            for k in range(len(groups)):
                W = sigma_mu * Zi[k] - X[k] - X[k] @ dZ[k] @ Zi[k]
                if corr is not None:
                    W = W - corr[k]
                dX.append(_herm(W))
            if m:
                fix = AT_of(scipy.linalg.cho_solve(gram, rp - A_of(dX), check_finite=False))
                dX = [_herm(a + f) for a, f in zip(dX, fix)]
            return dX, dy, dZ

        def steps(dX, dZ):
            ap = min(_max_step(Xg, d) for Xg, d in zip(X, dX))
            ad = min(_max_step(Zg, d) for Zg, d in zip(Z, dZ))
            return ap, ad

        # predictor
        dX, dy, dZ = direction(0.0, None)
        ap, ad = steps(dX, dZ)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = sum(_inner(Xg + ap * a, Zg + ad * c) for Xg, Zg, a, c in zip(X, Z, dX, dZ)) / n_total
        sigma = float(np.clip((mu_aff / mu) ** 3, 0.0, 1.0)) if mu > 0 else 0.0
        corr = [a @ c @ Zig for a, c, Zig in zip(dX, dZ, Zi)]
        # corrector
        dX, dy, dZ = direction(sigma * mu, corr)
        ap, ad = steps(dX, dZ)
        tau = 0.9 if it < 4 else 0.98
        ap, ad = min(1.0, tau * ap), min(1.0, tau * ad)
        if not (np.isfinite(ap) and np.isfinite(ad)) or max(ap, ad) < 1e-12:
            msg = f"stalled at iteration {it}"
            break
        X = [Xg + ap * d for Xg, d in zip(X, dX)]
        y = y + ad * dy
        Z = [Zg + ad * d for Zg, d in zip(Z, dZ)]
        if not all(np.all(np.isfinite(Xg)) for Xg in X) or not np.all(np.isfinite(y)):
            msg = "non-finite iterate"
            break
    else:
        msg = f"no convergence in {max_iter} iterations"
    log.debug("sdp solve failed: %s", msg)
    return result(NUMERICAL_FAILURE, unpack(X), y, it, dropped, msg)


# ---------------------------------------------------------------------------
# text dump


def dumps_problem(problem: SdpProblem) -> str:
    """Serialize a problem to the plain-text debug format (see README)."""
    out = io.StringIO()
    out.write("sdiqrng-sdp 1\n")
    out.write(f"sense {problem.sense}\n")
    out.write("blocks " + " ".join(str(d) for d in problem.block_dims) + "\n")

    def write_ops(ops):
        for b, a in enumerate(ops):
            if not np.any(a):
                continue
            vals = " ".join(f"{float(z.real)!r} {float(z.imag)!r}" for z in a.reshape(-1))
            out.write(f"block {b} {vals}\n")

    out.write("objective\n")
    write_ops(problem.objective)
    for e, ops in enumerate(problem.constraint_ops):
        label = problem.labels[e] if e < len(problem.labels) else ""
        out.write(f"constraint {e} {float(problem.rhs[e])!r} {label}".rstrip() + "\n")
        write_ops(ops)
    out.write("end\n")
    return out.getvalue()


def loads_problem(text: str) -> SdpProblem:
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0][0] != "sdiqrng-sdp":
        raise ValueError("not an sdiqrng SDP dump")
    sense = lines[1][1]
    dims = [int(t) for t in lines[2][1:]]
    objective: dict[int, np.ndarray] = {}
    constraints: list[tuple[dict[int, np.ndarray], float]] = []
    labels: list[str] = []
    current = objective
    for tok in lines[3:]:
        if tok[0] == "objective":
            current = objective
        elif tok[0] == "constraint":
            current = {}
            constraints.append((current, float(tok[2])))
            labels.append(" ".join(tok[3:]))
        elif tok[0] == "block":
            bi = int(tok[1])
            vals = np.array([float(t) for t in tok[2:]])
            d = dims[bi]
            current[bi] = (vals[0::2] + 1j * vals[1::2]).reshape(d, d)
        elif tok[0] == "end":
            break
    return SdpProblem.build(dims, objective, constraints, sense, labels if any(labels) else ())
