"""Measurement-device-independent QRNG: group-indexed POVM SDP and its certificate.

The source is trusted: ``m`` pure test states ``|psi_i>`` sent with
probabilities ``p_i``. The measurement is arbitrary. Its extremal components
are grouped by the outcome Eve would guess for every test state, giving one
sub-POVM ``{Lambda_j^l}`` per group index ``l = (l_1, ..., l_m)``. Since a
group collects whole POVMs, its elements sum to a multiple of the identity:
``sum_j Lambda_j^l = q_l I``. That per-group condition is part of the primal
here; dropping it leaves a relaxation that is still sound but can be loose
enough to certify nothing.

Certificate form. With ``C_j^l = sum_i p_i delta(l_i, j) psi_i`` a
certificate consists of reals ``eta_ij`` and one operator ``H^l`` per group
such that

    K_j^l = C_j^l + sum_i eta_ij psi_i + H^l - tr(H^l) I <= 0

for every ``(l, j)``. For any grouped measurement the per-round score is then
bounded by ``-sum eta_ij nu_ij + (d - 1) max_l tr(H^l)``. Certificates are
normalized to ``tr(H^l) = 0`` whenever possible, so the trace term vanishes
unless a repair or a gauge move put it there.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import matcore, sdp

REPAIR_SLACK = 1e-13
REPAIR_ROUNDS = 8
EPS = float(np.finfo(float).eps)
ZERO_FREQ = 1e-15
ZERO_EVENT_SLACK = 1e-7


class GroupBoundWarning(UserWarning):
    """More test states than the group reduction is stated for."""


@dataclass(frozen=True)
class MdiModel:
    states: tuple[np.ndarray, ...]
    probs: np.ndarray
    n_outcomes: int

    def __post_init__(self):
        states = tuple(matcore.pure_state(s) for s in self.states)
        probs = np.array(self.probs, dtype=float).reshape(-1)
        probs.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "probs", probs)
        if len(states) < 1:
            raise ValueError("at least one test state is required")
        if len({s.shape for s in states}) != 1:
            raise ValueError("test states must share one dimension")
        if probs.shape != (len(states),):
            raise ValueError("one probability per test state is required")
        if np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("state probabilities must be positive and sum to 1")
        if int(self.n_outcomes) < 2:
            raise ValueError("a randomness question needs at least two outcomes")
        object.__setattr__(self, "n_outcomes", int(self.n_outcomes))

    @property
    def dim(self) -> int:
        return self.states[0].shape[0]

    @property
    def m(self) -> int:
        return len(self.states)

    @property
    def n_groups(self) -> int:
        return self.n_outcomes ** self.m

    def projectors(self) -> list[np.ndarray]:
        return [matcore.projector(s) for s in self.states]

    def groups(self) -> list[tuple[int, ...]]:
        """All ``n^m`` group indices in lexicographic order (0-based)."""
        return list(itertools.product(range(self.n_outcomes), repeat=self.m))

    def fingerprint(self) -> str:
        h = hashlib.sha256(b"mdi")
        h.update(str(self.n_outcomes).encode())
        h.update(self.probs.tobytes())
        for s in self.states:
            h.update(np.ascontiguousarray(s, dtype=np.complex128).tobytes())
        return h.hexdigest()


def group_bound_ok(model: MdiModel) -> bool:
    n, d = model.n_outcomes, model.dim
    bound = 2 * math.log(d, n) + 1 if d > 1 else 1.0
    return model.m <= bound + 1e-12


def check_frequencies(model: MdiModel, nu) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (model.m, model.n_outcomes):
        raise ValueError(f"expected a {model.m}x{model.n_outcomes} table, got {nu.shape}")
    if np.any(nu < -1e-12) or np.any(nu > 1 + 1e-12):
        raise ValueError("frequencies must lie in [0, 1]")
    if np.any(np.abs(nu.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("each frequency row must sum to 1")
    return nu


def block_index(model: MdiModel, group_pos: int, j: int) -> int:
    return group_pos * model.n_outcomes + j


def objective_operators(model: MdiModel) -> list[np.ndarray]:
    """``C_j^l`` for every block, in block order."""
    psi = model.projectors()
    d = model.dim
    out = []
    for l in model.groups():
        for j in range(model.n_outcomes):
            c = np.zeros((d, d), dtype=np.complex128)
            for i, li in enumerate(l):
                if li == j:
                    c = c + model.probs[i] * psi[i]
            out.append(c)
    return out


def build_mdi_primal(model: MdiModel, nu) -> sdp.SdpProblem:
    """``n^(m+1)`` blocks of dimension ``d``.

    Rows, in order: ``m n`` statistics, ``d^2`` identity rows, then
    ``d^2 - 1`` traceless rows per group (group sums proportional to ``I``).
    """
    nu = check_frequencies(model, nu)
    if not group_bound_ok(model):
        warnings.warn(f"m={model.m} exceeds 2 log_n(d) + 1 for n={model.n_outcomes}, d={model.dim}",
                      GroupBoundWarning, stacklevel=2)
    n, d = model.n_outcomes, model.dim
    n_blocks = model.n_groups * n
    psi = model.projectors()
    objective = dict(enumerate(objective_operators(model)))
    constraints, labels = [], []
    for i in range(model.m):
        for j in range(n):
            ops = {block_index(model, g, j): psi[i] for g in range(model.n_groups)}
            constraints.append((ops, nu[i, j]))
            labels.append(f"stat[{i},{j}]")
    for k, b in enumerate(matcore.hermitian_basis(d)):
        constraints.append(({blk: b for blk in range(n_blocks)}, float(np.trace(b).real)))
        labels.append(f"identity[{k}]")
    for g in range(model.n_groups):
        for k, t in enumerate(matcore.traceless_basis(d)):
            constraints.append(({block_index(model, g, j): t for j in range(n)}, 0.0))
            labels.append(f"group[{g}][{k}]")
    return sdp.SdpProblem.build([d] * n_blocks, objective, constraints, "maximize", labels)


@dataclass(frozen=True)
class Reduction:
    """Outcome-wise restriction forced by zero frequencies.

    ``nu_{j|i} = 0`` together with ``Lambda_j^l >= 0`` forces
    ``Lambda_j^l psi_i = 0``, so every outcome-``j`` block lives on the
    orthogonal complement of those test states. ``bases[j]`` is an isometry
    onto that complement (``None`` when nothing is removed; zero columns when
    the outcome is impossible).
    """

    zero_events: tuple[tuple[int, ...], ...]
    bases: tuple[np.ndarray | None, ...]

    @property
    def trivial(self) -> bool:
        return all(b is None for b in self.bases)


def zero_event_reduction(model: MdiModel, nu, zero_tol: float = ZERO_FREQ) -> Reduction:
    nu = check_frequencies(model, nu)
    zeros, bases = [], []
    for j in range(model.n_outcomes):
        idx = tuple(i for i in range(model.m) if nu[i, j] <= zero_tol)
        zeros.append(idx)
        if not idx:
            bases.append(None)
            continue
        kets = np.array([model.states[i] for i in idx]).T
        u, sv, _ = np.linalg.svd(kets, full_matrices=True)
        rank = int(np.sum(sv > 1e-12))
        bases.append(u[:, rank:].copy())
    return Reduction(tuple(zeros), tuple(bases))


def _restrict(op, V):
    return op if V is None else V.conj().T @ op @ V


def build_mdi_reduced(model: MdiModel, nu, zero_tol: float = ZERO_FREQ):
    """Primal with zero-frequency directions removed; returns ``(problem, reduction)``.

    Same rows as :func:`build_mdi_primal` (rows that vanish are left for the
    rank filter); blocks of impossible outcomes are omitted.
    """
    red = zero_event_reduction(model, nu, zero_tol)
    full = build_mdi_primal(model, nu)
    if red.trivial:
        return full, red
    n = model.n_outcomes
    keep = [b for b in range(len(full.block_dims))
            if red.bases[b % n] is None or red.bases[b % n].shape[1] > 0]
    Vs = [red.bases[b % n] for b in keep]
    dims = tuple(model.dim if V is None else V.shape[1] for V in Vs)
    objective = tuple(matcore.hermitian(_restrict(full.objective[b], V)) for b, V in zip(keep, Vs))
    ops = tuple(tuple(matcore.hermitian(_restrict(row[b], V)) for b, V in zip(keep, Vs))
                for row in full.constraint_ops)
    problem = sdp.SdpProblem(dims, objective, ops, full.rhs, full.sense, full.labels)
    return problem, red


def _solve_quiet(problem: sdp.SdpProblem, gap_tol: float) -> sdp.SdpSolution:
    with warnings.catch_warnings():
        # the grouped rows are linearly dependent by construction
        warnings.simplefilter("ignore", sdp.RedundantConstraintWarning)
        return sdp.solve(problem, gap_tol=gap_tol)


def solve_mdi(model: MdiModel, nu, gap_tol: float = 1e-8) -> tuple[sdp.SdpProblem, sdp.SdpSolution]:
    """Solve the (zero-reduced) primal; the value equals that of :func:`build_mdi_primal`."""
    problem, _ = build_mdi_reduced(model, nu)
    return problem, _solve_quiet(problem, gap_tol)


def mdi_guessing_probability(model: MdiModel, nu, gap_tol: float = 1e-8) -> tuple[float, float]:
    """(p_guess upper bound, min-entropy) from the primal optimum."""
    _, sol = solve_mdi(model, nu, gap_tol)
    if not sol.optimal:
        raise sdp.SolverError(sol.status, sol.message)
    p = min(1.0, sol.primal_value)
    return p, max(0.0, float(-np.log2(p)))


@dataclass(frozen=True)
class MdiDualCertificate:
    eta: np.ndarray
    H: tuple[np.ndarray, ...]
    repaired: bool
    worst_margin: float
    model_hash: str = ""

    def dual_objective(self, nu) -> float:
        """``-sum eta_ij nu_ij``, the objective without the trace term."""
        return float(-np.sum(self.eta * np.asarray(nu, dtype=float)))

    def offset(self) -> float:
        """``(d - 1) max_l tr(H^l)``: per-round constant added to the objective."""
        d = self.H[0].shape[0]
        return float((d - 1) * max(np.trace(h).real for h in self.H))

    def bound(self, nu) -> float:
        """Certified upper bound on the per-round guessing score."""
        return self.dual_objective(nu) + self.offset()

    def to_json(self) -> str:
        def enc(h):
            return {"re": np.real(h).tolist(), "im": np.imag(h).tolist()}
        return json.dumps({
            "kind": "mdi",
            "eta": np.asarray(self.eta, dtype=float).tolist(),
            "H": [enc(h) for h in self.H],
            "repaired": self.repaired,
            "worst_margin": self.worst_margin,
            "model_hash": self.model_hash,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MdiDualCertificate":
        data = json.loads(text)
        if data.get("kind") != "mdi":
            raise ValueError("not an MDI certificate")
        H = tuple(np.array(h["re"], dtype=float) + 1j * np.array(h["im"], dtype=float)
                  for h in data["H"])
        return cls(np.array(data["eta"], dtype=float), H, bool(data["repaired"]),
                   float(data["worst_margin"]), data.get("model_hash", ""))


def inequality_operators(model: MdiModel, eta, H) -> list[np.ndarray]:
    """``K_j^l`` in block order."""
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (model.m, model.n_outcomes):
        raise ValueError("eta does not match the model")
    if len(H) != model.n_groups:
        raise ValueError("one H operator per group is required")
    psi = model.projectors()
    eye = np.eye(model.dim)
    cs = objective_operators(model)
    n = model.n_outcomes
    eta_terms = [sum(eta[i, j] * psi[i] for i in range(model.m)) for j in range(n)]
    out = []
    for g, h in enumerate(H):
        shift = h - np.trace(h).real * eye
        for j in range(n):
            out.append(cs[g * n + j] + eta_terms[j] + shift)
    return out


def verify_mdi_inequalities(model: MdiModel, cert_or_parts) -> float:
    """Largest eigenvalue over all ``n^m * n`` inequality operators (<= 0 means valid)."""
    if isinstance(cert_or_parts, MdiDualCertificate):
        eta, H = cert_or_parts.eta, cert_or_parts.H
    else:
        eta, H = cert_or_parts
    return max(matcore.max_eigenvalue(k, tol=1e-9) for k in inequality_operators(model, eta, H))


def repair(model: MdiModel, eta, H, repaired: bool = False) -> MdiDualCertificate:
    """Shift every ``H^l`` by ``s/(d-1) I`` so that each ``K_j^l`` moves by ``-s I``.

    ``-sum eta nu`` does not move; the certified bound rises by ``d s``
    through the trace term.
    """
    eta = np.array(eta, dtype=float)
    H = tuple(np.array(h, dtype=np.complex128) for h in H)
    margin = verify_mdi_inequalities(model, (eta, H))
    d = model.dim
    scale = 1.0 + float(np.abs(eta).sum()) + d * max(float(np.abs(h).max()) for h in H)
    for attempt in range(REPAIR_ROUNDS):
        if margin <= 0:
            break
        if d == 1:
            raise sdp.SolverError(sdp.NUMERICAL_FAILURE, "cannot repair a d=1 certificate")
        s = margin * (1 + 1e-9) + REPAIR_SLACK + 16 * EPS * scale * 4**attempt
        H = tuple(h + (s / (d - 1)) * np.eye(d) for h in H)
        repaired = True
        margin = verify_mdi_inequalities(model, (eta, H))
    if margin > 0:
        raise sdp.SolverError(sdp.NUMERICAL_FAILURE, f"repair left a margin of {margin:.3e}")
    return MdiDualCertificate(eta, H, repaired, margin, model.fingerprint())


def shifts(cert: MdiDualCertificate) -> list[np.ndarray]:
    """``S^l = H^l - tr(H^l) I`` for every group."""
    d = cert.H[0].shape[0]
    return [h - np.trace(h).real * np.eye(d) for h in cert.H]


def certificate_from_shifts(model: MdiModel, eta, S, normalize: bool = True,
                            repaired: bool = False) -> MdiDualCertificate:
    """Build ``H^l`` from operator shifts ``S^l`` (``K = C + sum eta psi + S``) and repair.

    With ``normalize`` the common trace of the shifts is first moved into
    ``eta`` (``eta_i. += p_i t`` together with ``S^l -= p_i t psi_i`` keeps
    every ``K`` fixed), leaving ``tr(H^l) = 0``. For ``d >= 2``,
    ``H = S - tr(S)/(d-1) I`` inverts ``S = H - tr(H) I``.
    """
    eta = np.array(eta, dtype=float)
    S = [np.array(s, dtype=np.complex128) for s in S]
    d = model.dim
    if normalize:
        t = max(float(np.trace(s).real) for s in S)
        psi = model.projectors()
        for i in range(model.m):
            a = model.probs[i] * t
            eta[i, :] += a
            S = [s - a * psi[i] for s in S]
    if d == 1:
        if max(abs(float(s[0, 0].real)) for s in S) > 1e-9:
            raise ValueError("a d=1 certificate needs zero shifts")
        H = tuple(np.zeros((1, 1), dtype=np.complex128) for _ in S)
    else:
        H = tuple(s - (np.trace(s).real / (d - 1)) * np.eye(d) for s in S)
    return repair(model, eta, H, repaired)


def split_multipliers(model: MdiModel, y) -> tuple[np.ndarray, list[np.ndarray]]:
    """Primal multipliers to ``(eta, S^l)``.

    The dual of the primal reads ``C - sum y_stat psi - Y - G^l <= 0`` with
    ``Y`` from the identity rows and traceless ``G^l`` from the group rows.
    """
    y = np.asarray(y, dtype=float)
    mn, d = model.m * model.n_outcomes, model.dim
    eta = -y[:mn].reshape(model.m, model.n_outcomes)
    Y = np.tensordot(y[mn:mn + d * d], matcore.hermitian_basis(d), axes=1)
    tl = matcore.traceless_basis(d)
    k = d * d - 1
    rest = y[mn + d * d:].reshape(model.n_groups, k)
    S = [-Y - (np.tensordot(rest[g], tl, axes=1) if k else 0.0) for g in range(model.n_groups)]
    return eta, S


def extract_mdi_certificate(model: MdiModel, nu_nominal, solution: sdp.SdpSolution | None = None,
                            gap_tol: float = 1e-8) -> MdiDualCertificate:
    """Certificate from the primal solve's Lagrange multipliers."""
    if solution is None:
        _, solution = solve_mdi(model, nu_nominal, gap_tol)
    if not solution.optimal:
        raise sdp.SolverError(solution.status, solution.message)
    eta, S = split_multipliers(model, solution.y)
    eta, S = complete_zero_events(model, zero_event_reduction(model, nu_nominal), eta, S)
    return certificate_from_shifts(model, eta, S)


def complete_zero_events(model: MdiModel, red: Reduction, eta, S,
                         slack: float = ZERO_EVENT_SLACK) -> tuple[np.ndarray, list[np.ndarray]]:
    """Extend a certificate of the reduced problem to the full space.

    A reduced certificate only controls ``V_j^dag K_j^l V_j``. All operators
    are first lowered by ``slack * I`` (raising the bound by ``d * slack``);
    then the zero-frequency multipliers ``eta_ij`` (which carry no weight in
    the objective) are lowered just enough, by a Schur-complement bound, for
    each full ``K_j^l`` to be negative semidefinite.
    """
    eta = np.array(eta, dtype=float)
    S = [np.array(s, dtype=np.complex128) for s in S]
    if red.trivial:
        return eta, S
    d, n = model.dim, model.n_outcomes
    S = [s - slack * np.eye(d) for s in S]
    psi = model.projectors()
    cs = objective_operators(model)
    for j, idx in enumerate(red.zero_events):
        if not idx:
            continue
        P = sum(psi[i] for i in idx)
        w, v = np.linalg.eigh(P)
        U = v[:, w > 1e-12]
        Pz = U.conj().T @ P @ U
        wz, vz = np.linalg.eigh(Pz)
        Pz_isqrt = (vz / np.sqrt(wz)) @ vz.conj().T
        V = red.bases[j]
        t = 0.0
        for g in range(model.n_groups):
            K = cs[g * n + j] + sum(eta[i, j] * psi[i] for i in range(model.m)) + S[g]
            schur = U.conj().T @ K @ U
            if V.shape[1]:
                Kvv = V.conj().T @ K @ V
                if matcore.max_eigenvalue(Kvv, tol=1e-9) >= 0:
                    raise sdp.SolverError(sdp.NUMERICAL_FAILURE, "reduced certificate is not strict")
                Kzv = U.conj().T @ K @ V
                schur = schur - Kzv @ np.linalg.solve(Kvv, Kzv.conj().T)
            t = max(t, matcore.max_eigenvalue(matcore.hermitian(Pz_isqrt @ schur @ Pz_isqrt, tol=1e-6),
                                              tol=1e-9))
        t = max(t, 0.0) * (1 + 1e-6) + 1e-12
        for i in idx:
            eta[i, j] -= t
    return eta, S


def build_mdi_dual(model: MdiModel, nu) -> sdp.SdpProblem:
    """Explicit dual as an LMI problem in ``x = (eta, sigma, T^l)``, zero-reduced like the primal.

    ``minimize -sum eta nu + d sigma  s.t.  C_j^l + sum_i eta_ij psi_i + T^l - sigma I <= 0``
    with traceless ``T^l``. In the grouped form ``H^l = T^l + sigma/(d-1) I``,
    so that ``d sigma = (d - 1) tr(H^l)`` is exactly the trace term.
    """
    from .si import lmi_problem

    nu = check_frequencies(model, nu)
    n, m, d = model.n_outcomes, model.m, model.dim
    psi = model.projectors()
    red = zero_event_reduction(model, nu)
    n_blocks = model.n_groups * n
    keep = [b for b in range(n_blocks)
            if red.bases[b % n] is None or red.bases[b % n].shape[1] > 0]

    def per_block(op_of):
        return [matcore.hermitian(_restrict(op_of(b), red.bases[b % n])) for b in keep]

    cs = objective_operators(model)
    zero = np.zeros((d, d), dtype=np.complex128)
    eye = np.eye(d, dtype=np.complex128)
    F0 = per_block(lambda b: cs[b])
    Ft, c = [], []
    for i in range(m):
        for j in range(n):
            Ft.append(per_block(lambda b: psi[i] if b % n == j else zero))
            c.append(-nu[i, j])
    Ft.append(per_block(lambda b: -eye))
    c.append(float(d))
    for g in range(model.n_groups):
        for t in matcore.traceless_basis(d):
            Ft.append(per_block(lambda b: t if b // n == g else zero))
            c.append(0.0)
    return lmi_problem(np.array(c), F0, Ft)


def extract_mdi_certificate_explicit(model: MdiModel, nu_nominal, gap_tol: float = 1e-8) -> MdiDualCertificate:
    """Certificate from solving the explicitly written dual."""
    sol = _solve_quiet(build_mdi_dual(model, nu_nominal), gap_tol)
    if not sol.optimal:
        raise sdp.SolverError(sol.status, sol.message)
    x = -np.asarray(sol.y, dtype=float)
    mn, d = model.m * model.n_outcomes, model.dim
    eta = x[:mn].reshape(model.m, model.n_outcomes)
    sigma = x[mn]
    k = d * d - 1
    T = x[mn + 1:].reshape(model.n_groups, k)
    tl = matcore.traceless_basis(d)
    S = [(np.tensordot(T[g], tl, axes=1) if k else 0.0) - sigma * np.eye(d) for g in range(model.n_groups)]
    eta, S = complete_zero_events(model, zero_event_reduction(model, nu_nominal), eta, S)
    return certificate_from_shifts(model, eta, S)


def random_grouped_povm(rng: np.random.Generator, model: MdiModel) -> list[np.ndarray]:
    """Random ``{Lambda_j^l}`` with every group summing to ``q_l I`` and ``sum q_l = 1``."""
    n, d = model.n_outcomes, model.dim
    q = rng.dirichlet(np.ones(model.n_groups))
    out = []
    for ql in q:
        raw = [matcore.random_density(d, rng) * rng.exponential() for _ in range(n)]
        w, v = np.linalg.eigh(sum(raw))
        s = (v / np.sqrt(w)) @ v.conj().T
        out.extend(ql * (s @ r @ s) for r in raw)
    return out


def expected_score(model: MdiModel, cert: MdiDualCertificate, povm) -> float:
    """Per-round expectation of the weighted score minus the certificate offset."""
    psi = model.projectors()
    n = model.n_outcomes
    total = 0.0
    for b, (c, lam) in enumerate(zip(objective_operators(model), povm)):
        j = b % n
        total += matcore.trace_inner(c, lam)
        total += sum(cert.eta[i, j] * matcore.trace_inner(psi[i], lam) for i in range(model.m))
    return total - cert.offset()


def monte_carlo_check(model: MdiModel, cert: MdiDualCertificate, samples: int = 1000,
                      seed: int = 0) -> float:
    """Largest sampled score over random grouped measurements (should stay <= margin)."""
    rng = np.random.default_rng(seed)
    return max(expected_score(model, cert, random_grouped_povm(rng, model)) for _ in range(samples))


def gauge_directions(model: MdiModel) -> tuple[np.ndarray, list[list[np.ndarray]]]:
    """Moves of ``(eta, S^l)`` that leave every inequality operator unchanged.

    Returns ``(d_eta, d_S)`` with ``d_eta`` of shape ``(k, m, n)`` and ``d_S[k]``
    the matching list of per-group shift changes.
    """
    nu = np.full((model.m, model.n_outcomes), 1.0 / model.n_outcomes)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GroupBoundWarning)
        problem = build_mdi_primal(model, nu)
    g = sdp.constraint_dependencies(problem)
    d_eta, d_S = [], []
    for row in g:
        e, S = split_multipliers(model, row)
        d_eta.append(e)
        d_S.append(S)
    return np.array(d_eta).reshape(len(g), model.m, model.n_outcomes), d_S
