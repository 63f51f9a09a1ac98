"""Source-independent QRNG: guessing-probability SDP and its dual certificate.

The measurement is trusted and described by a POVM ``{M_j}``; the source is
arbitrary. Eve's strategy is a split of the source state into sub-normalized
pieces ``rho_k`` (piece ``k`` is the one for which she guesses outcome ``k``).

A certificate is a vector ``lam`` of ``n + 1`` reals satisfying the operator
inequalities ``M_k + sum_j lam_j M_j + lam_{n+1} I <= 0`` for every ``k``. It
bounds Eve's per-round score for any source, so it can be fixed from nominal
statistics before any data is taken.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import matcore, sdp

REPAIR_SLACK = 1e-13
REPAIR_ROUNDS = 8
EPS = float(np.finfo(float).eps)


@dataclass(frozen=True)
class SiModel:
    povm: tuple[np.ndarray, ...]

    def __post_init__(self):
        povm = tuple(matcore.hermitian(m, tol=1e-9) for m in self.povm)
        object.__setattr__(self, "povm", povm)
        if len(povm) < 2:
            raise ValueError("a randomness question needs at least two outcomes")
        d = povm[0].shape[0]
        for m in povm:
            if m.shape != (d, d):
                raise ValueError("all POVM elements must share one dimension")
            if not matcore.is_psd(m, tol=1e-9):
                raise ValueError("POVM element is not positive semidefinite")
        if np.max(np.abs(sum(povm) - np.eye(d))) > 1e-9:
            raise ValueError("POVM elements do not sum to the identity")

    @property
    def dim(self) -> int:
        return self.povm[0].shape[0]

    @property
    def n_outcomes(self) -> int:
        return len(self.povm)

    def fingerprint(self) -> str:
        h = hashlib.sha256(b"si")
        for m in self.povm:
            h.update(np.ascontiguousarray(m, dtype=np.complex128).tobytes())
        return h.hexdigest()


def check_frequencies(model: SiModel, nu) -> np.ndarray:
    nu = np.asarray(nu, dtype=float).reshape(-1)
    if nu.shape != (model.n_outcomes,):
        raise ValueError(f"expected {model.n_outcomes} frequencies, got {nu.shape}")
    if np.any(nu < -1e-12) or np.any(nu > 1 + 1e-12) or abs(nu.sum() - 1.0) > 1e-9:
        raise ValueError("frequencies must lie in [0, 1] and sum to 1")
    return nu


def build_si_primal(model: SiModel, nu) -> sdp.SdpProblem:
    """n blocks (one sub-normalized state per guess), n statistics rows, one trace row."""
    nu = check_frequencies(model, nu)
    n, d = model.n_outcomes, model.dim
    blocks = range(n)
    constraints = [({k: model.povm[j] for k in blocks}, nu[j]) for j in range(n)]
    constraints.append(({k: np.eye(d) for k in blocks}, 1.0))
    labels = [f"stat[{j}]" for j in range(n)] + ["trace"]
    return sdp.SdpProblem.build([d] * n, {k: model.povm[k] for k in blocks}, constraints,
                                "maximize", labels)


def build_si_dual(model: SiModel, nu) -> sdp.SdpProblem:
    """The explicit dual, written as an LMI feasibility problem in ``lam``.

    ``minimize c . lam  s.t.  F0_k + sum_t lam_t F_t <= 0`` with ``c = (-nu, -1)``,
    ``F0_k = M_k``, ``F_t = M_t`` and ``F_{n+1} = I`` is passed to the solver in
    its conjugate standard form; the solver's multipliers are ``lam``.
    """
    nu = check_frequencies(model, nu)
    n, d = model.n_outcomes, model.dim
    c = np.concatenate([-nu, [-1.0]])
    F0 = [model.povm[k] for k in range(n)]
    Ft = list(model.povm) + [np.eye(d)]
    return lmi_problem(c, F0, [[f] * n for f in Ft])


def lmi_problem(c, F0, Ft) -> sdp.SdpProblem:
    """Standard-form problem whose dual is ``min c.x s.t. F0[k] + sum_t x_t Ft[t][k] <= 0``.

    The conjugate reads ``max sum_k tr(F0_k X_k) s.t. sum_k tr(Ft_k X_k) = -c_t``;
    its multipliers ``y`` (maximize convention) give ``x = -y``.
    """
    K = len(F0)
    dims = [F0[k].shape[0] for k in range(K)]
    constraints = [({k: Ft[t][k] for k in range(K)}, -c[t]) for t in range(len(c))]
    return sdp.SdpProblem.build(dims, {k: F0[k] for k in range(K)}, constraints, "maximize")


@dataclass(frozen=True)
class SiDualCertificate:
    lam: np.ndarray
    repaired: bool
    worst_margin: float
    model_hash: str = ""

    def dual_objective(self, nu) -> float:
        nu = np.asarray(nu, dtype=float)
        return float(-self.lam[:-1] @ nu - self.lam[-1])

    def to_json(self) -> str:
        return json.dumps({
            "kind": "si",
            "lambda": [float(x) for x in self.lam],
            "repaired": self.repaired,
            "worst_margin": self.worst_margin,
            "model_hash": self.model_hash,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SiDualCertificate":
        data = json.loads(text)
        if data.get("kind") != "si":
            raise ValueError("not an SI certificate")
        return cls(np.array(data["lambda"], dtype=float), bool(data["repaired"]),
                   float(data["worst_margin"]), data.get("model_hash", ""))


def inequality_operators(model: SiModel, lam) -> list[np.ndarray]:
    lam = np.asarray(lam, dtype=float)
    base = sum(l * m for l, m in zip(lam[:-1], model.povm)) + lam[-1] * np.eye(model.dim)
    return [m + base for m in model.povm]


def verify_si_inequalities(model: SiModel, cert_or_lam) -> float:
    """Largest eigenvalue over all ``n`` operator inequalities (<= 0 means valid)."""
    lam = cert_or_lam.lam if isinstance(cert_or_lam, SiDualCertificate) else cert_or_lam
    if len(lam) != model.n_outcomes + 1:
        raise ValueError("certificate length does not match the model")
    return max(matcore.max_eigenvalue(op, tol=1e-9) for op in inequality_operators(model, lam))


def repair(model: SiModel, lam, repaired: bool = False) -> SiDualCertificate:
    """Shift ``lam_{n+1}`` down until every inequality holds.

    The shift moves all inequality operators by the same multiple of ``I`` and
    raises the dual objective by the same amount, so the bound only loosens.
    """
    lam = np.array(lam, dtype=float)
    margin = verify_si_inequalities(model, lam)
    # eigenvalues of operators with large entries carry rounding of order eps * scale
    scale = 1.0 + float(np.abs(lam).sum())
    for attempt in range(REPAIR_ROUNDS):
        if margin <= 0:
            break
        lam[-1] -= margin * (1 + 1e-9) + REPAIR_SLACK + 16 * EPS * scale * 4**attempt
        repaired = True
        margin = verify_si_inequalities(model, lam)
    if margin > 0:
        raise sdp.SolverError(sdp.NUMERICAL_FAILURE, f"repair left a margin of {margin:.3e}")
    return SiDualCertificate(lam, repaired, margin, model.fingerprint())


def _solve_quiet(problem: sdp.SdpProblem, gap_tol: float) -> sdp.SdpSolution:
    with warnings.catch_warnings():
        # a complete POVM always makes the trace row a sum of statistics rows
        warnings.simplefilter("ignore", sdp.RedundantConstraintWarning)
        return sdp.solve(problem, gap_tol=gap_tol)


def solve_si(model: SiModel, nu, gap_tol: float = 1e-8) -> tuple[sdp.SdpProblem, sdp.SdpSolution]:
    problem = build_si_primal(model, nu)
    return problem, _solve_quiet(problem, gap_tol)


def si_guessing_probability(model: SiModel, nu, gap_tol: float = 1e-8) -> tuple[float, float]:
    """(p_guess upper bound, min-entropy) from the primal optimum."""
    _, sol = solve_si(model, nu, gap_tol)
    if not sol.optimal:
        raise sdp.SolverError(sol.status, sol.message)
    p = min(1.0, sol.primal_value)
    return p, max(0.0, float(-np.log2(p)))


def extract_si_certificate(model: SiModel, nu_nominal, solution: sdp.SdpSolution | None = None,
                           gap_tol: float = 1e-8) -> SiDualCertificate:
    """Certificate from the primal solve's multipliers, repaired to exact feasibility."""
    if solution is None:
        _, solution = solve_si(model, nu_nominal, gap_tol)
    if not solution.optimal:
        raise sdp.SolverError(solution.status, solution.message)
    return repair(model, -np.asarray(solution.y, dtype=float))


def extract_si_certificate_explicit(model: SiModel, nu_nominal, gap_tol: float = 1e-8) -> SiDualCertificate:
    """Certificate from solving the explicitly written dual."""
    sol = _solve_quiet(build_si_dual(model, nu_nominal), gap_tol)
    if not sol.optimal:
        raise sdp.SolverError(sol.status, sol.message)
    # conjugate multipliers y solve min (-c).y s.t. sum y F_t - F0 >= 0, i.e. lam = -y
    return repair(model, -np.asarray(sol.y, dtype=float))


def gauge_directions(model: SiModel) -> np.ndarray:
    """Multiplier shifts that leave every inequality operator unchanged.

    Rows ``g`` satisfy ``sum_j g_j M_j + g_{n+1} I = 0``; adding any of them to a
    certificate changes neither its operators nor its nominal objective.
    """
    d = model.dim
    ops = list(model.povm) + [np.eye(d)]
    mat = np.array([matcore.hermitian_coords(a) for a in ops])
    u, s, vt = np.linalg.svd(mat.T, full_matrices=True)
    rank = int(np.sum(s > 1e-10 * max(1.0, s[0])))
    return vt[rank:].copy()


def regrouped_objective(model: SiModel, blocks) -> tuple[float, float]:
    """(objective as given, objective after reassigning each piece to its best guess)."""
    orig = sum(matcore.trace_inner(model.povm[k], b) for k, b in enumerate(blocks))
    best = sum(max(matcore.trace_inner(m, b) for m in model.povm) for b in blocks)
    return orig, best

