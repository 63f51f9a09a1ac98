"""Finite-size bound: per-round weights, Azuma deviation, guess count, output length.

Each round ``u`` gets a score ``chi_u``: ``1/p_sig`` for a generation round
Eve guesses correctly, a certificate weight ``w_e`` for a test round with
event ``e``, and 0 otherwise. The certificate's operator inequalities give
``E(chi_u | past) <= offset`` for every device. Azuma's inequality then gives,
with probability at least ``1 - eps``,

    N_guess / p_sig + sum_e w_e N_e <= N_tot * offset + Delta,

so that ``N_guess <= p_sig (-sum_e w_e N_e + N_tot offset + Delta)``. This is
the derived form; the ``paper`` mode keeps the form in which ``Delta`` is
scaled by ``N_tot`` (and, for MDI, the test sum enters with a plus sign).

Weights follow the certificate multipliers: ``lambda_j / (1 - p_sig)`` for SI
with ``offset = -lambda_{n+1}``, and ``eta_ij / ((1 - p_sig) p_i)`` for MDI
with the certificate's trace term as offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import mdi, si

C_MODES = ("conservative", "paper")
DELTA_MODES = ("derived", "paper")


@dataclass(frozen=True)
class RoundWeightTable:
    p_sig: float
    test_weights: np.ndarray
    offset: float = 0.0
    protocol: str = "si"

    def __post_init__(self):
        if not 0.0 < self.p_sig < 1.0:
            raise ValueError("p_sig must lie strictly between 0 and 1")
        w = np.array(self.test_weights, dtype=float).reshape(-1)
        if not np.all(np.isfinite(w)) or not math.isfinite(self.offset):
            raise ValueError("weights must be finite")
        if self.protocol not in ("si", "mdi"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        w.setflags(write=False)
        object.__setattr__(self, "test_weights", w)

    @property
    def guess_weight(self) -> float:
        return 1.0 / self.p_sig

    def values(self) -> np.ndarray:
        """Every value the per-round score can take."""
        return np.concatenate([[0.0, self.guess_weight], self.test_weights])


def si_table(cert: si.SiDualCertificate, p_sig: float) -> RoundWeightTable:
    lam = np.asarray(cert.lam, dtype=float)
    return RoundWeightTable(p_sig, lam[:-1] / (1.0 - p_sig), float(-lam[-1]), "si")


def mdi_table(cert: mdi.MdiDualCertificate, probs, p_sig: float) -> RoundWeightTable:
    """Weights in state-major order, matching ``counts.reshape(-1)`` of an ``m x n`` table."""
    probs = np.asarray(probs, dtype=float)
    w = np.asarray(cert.eta, dtype=float) / ((1.0 - p_sig) * probs[:, None])
    return RoundWeightTable(p_sig, w.reshape(-1), cert.offset(), "mdi")


def bounded_difference(table: RoundWeightTable, mode: str = "conservative") -> float:
    """Bound ``c`` on ``|chi_u - E(chi_u | past)|``.

    ``conservative`` is the full value span, which always covers the
    increment. ``paper`` is ``2 max(1/p_sig, w_1, ..., w_n)`` with signed
    weights, which can fall short when weights are large and negative.
    """
    g = table.guess_weight
    w = table.test_weights
    if mode == "paper":
        return 2.0 * max(g, float(w.max(initial=-math.inf)))
    if mode == "conservative":
        return max(g, float(w.max(initial=0.0)), 0.0) - min(0.0, float(w.min(initial=0.0)))
    raise ValueError(f"unknown bounded-difference mode {mode!r}")


def azuma_delta(n_tot: float, epsilon: float, c: float) -> float:
    """``sqrt(-2 N_tot c^2 ln eps)``."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if n_tot <= 0 or c <= 0:
        raise ValueError("N_tot and c must be positive")
    return math.sqrt(-2.0 * n_tot * c * c * math.log(epsilon))


def generation_rounds(counts, n_tot: float) -> float:
    total = float(np.sum(counts))
    if np.any(np.asarray(counts) < 0):
        raise ValueError("counts must be nonnegative")
    if total > n_tot * (1 + 1e-12):
        raise ValueError("test counts exceed N_tot")
    return max(0.0, n_tot - total)


def n_guess_upper(table: RoundWeightTable, counts, n_tot: float, delta: float,
                  mode: str = "derived") -> float:
    """Upper bound on successful guesses, clamped to ``[0, generation rounds]``."""
    counts = np.asarray(counts, dtype=float).reshape(-1)
    if counts.shape != table.test_weights.shape:
        raise ValueError("one count per test event is required")
    G = generation_rounds(counts, n_tot)
    score = float(table.test_weights @ counts)
    if mode == "derived":
        val = table.p_sig * (-score + n_tot * table.offset + delta)
    elif mode == "paper":
        sign = 1.0 if table.protocol == "mdi" else -1.0
        val = table.p_sig * n_tot * (sign * score / n_tot + table.offset + delta)
    else:
        raise ValueError(f"unknown delta-placement mode {mode!r}")
    return float(min(max(val, 0.0), G))


def final_length(n_guess: float, generation: float) -> int:
    """``floor(-G log2(N_guess / G))`` clamped to ``[0, G]``; ``N_guess`` floored at 1."""
    if generation < 0:
        raise ValueError("generation rounds must be nonnegative")
    if generation == 0:
        return 0
    ng = max(float(n_guess), 1.0)
    if ng >= generation:
        return 0
    bits = -generation * math.log2(ng / generation)
    return int(min(math.floor(bits), math.floor(generation)))


@dataclass(frozen=True)
class FiniteSizeResult:
    c: float
    delta: float
    n_guess_upper: float
    generation_rounds: float
    n_fin: int
    n_tot: float
    epsilon: float

    @property
    def per_round_rate(self) -> float:
        return self.n_fin / self.n_tot


def finite_size(table: RoundWeightTable, counts, n_tot: float, epsilon: float,
                mode_c: str = "conservative", mode_delta: str = "derived",
                delta: float | None = None) -> FiniteSizeResult:
    """Compose the steps above; ``delta`` overrides the Azuma term when given."""
    c = bounded_difference(table, mode_c)
    dlt = azuma_delta(n_tot, epsilon, c) if delta is None else float(delta)
    ng = n_guess_upper(table, counts, n_tot, dlt, mode_delta)
    G = generation_rounds(counts, n_tot)
    return FiniteSizeResult(c, dlt, ng, G, final_length(ng, G), float(n_tot), float(epsilon))


# ---------------------------------------------------------------------------
# gauge balancing


def minimize_span(weights, directions, lower: float) -> np.ndarray:
    """Coefficients ``t`` minimizing the span of ``[0, lower] U {w + D^T t}``.

    Solved as an LP in ``(t, U, L)``: minimize ``U - L`` with
    ``L <= w + D^T t <= U``, ``U >= lower`` and ``L <= 0``; a tiny l1 penalty
    on ``t`` picks the smallest move among equal spans.
    """
    w = np.asarray(weights, dtype=float).reshape(-1)
    D = np.asarray(directions, dtype=float).reshape(-1, w.size)
    k = D.shape[0]
    if k == 0:
        return np.zeros(0)
    scale = max(1.0, float(np.abs(w).max()), lower)
    # variables: t_plus (k), t_minus (k), U, L
    cost = np.concatenate([np.full(2 * k, 1e-9), [1.0, -1.0]])
    A_ub, b_ub = [], []
    for e in range(w.size):
        A_ub.append(np.concatenate([D[:, e], -D[:, e], [-1.0, 0.0]]) / scale)
        b_ub.append(-w[e] / scale)
        A_ub.append(np.concatenate([-D[:, e], D[:, e], [0.0, 1.0]]) / scale)
        b_ub.append(w[e] / scale)
    bounds = [(0, None)] * (2 * k) + [(lower, None), (None, 0.0)]
    res = linprog(cost, A_ub=np.array(A_ub), b_ub=np.array(b_ub), bounds=bounds, method="highs")
    if res.status != 0:
        return np.zeros(k)
    return res.x[:k] - res.x[k:2 * k]


def _span(w, lower):
    return max(lower, float(np.max(w, initial=0.0))) - min(0.0, float(np.min(w, initial=0.0)))


def balance_si(model: si.SiModel, cert: si.SiDualCertificate, p_sig: float,
               directions=None) -> si.SiDualCertificate:
    """Equivalent certificate (same operators) with the smallest weight span at ``p_sig``."""
    g = si.gauge_directions(model) if directions is None else directions
    lam = np.asarray(cert.lam, dtype=float)
    w = lam[:-1] / (1.0 - p_sig)
    t = minimize_span(w, g[:, :-1] / (1.0 - p_sig), 1.0 / p_sig)
    if t.size == 0:
        return cert
    new = lam + g.T @ t
    if _span(new[:-1] / (1.0 - p_sig), 1.0 / p_sig) >= _span(w, 1.0 / p_sig):
        return cert
    return si.repair(model, new, cert.repaired)


def balance_mdi(model: mdi.MdiModel, cert: mdi.MdiDualCertificate, p_sig: float,
                directions=None) -> mdi.MdiDualCertificate:
    """As :func:`balance_si`; moves may leave a nonzero trace term (``d >= 2``)."""
    if model.dim < 2:
        return cert
    d_eta, d_S = mdi.gauge_directions(model) if directions is None else directions
    if len(d_eta) == 0:
        return cert
    norm = (1.0 - p_sig) * model.probs[:, None]
    w = (cert.eta / norm).reshape(-1)
    t = minimize_span(w, (d_eta / norm).reshape(len(d_eta), -1), 1.0 / p_sig)
    eta = cert.eta + np.tensordot(t, d_eta, axes=1)
    if _span((eta / norm).reshape(-1), 1.0 / p_sig) >= _span(w, 1.0 / p_sig):
        return cert
    S = mdi.shifts(cert)
    S = [s + sum(tk * ds[g] for tk, ds in zip(t, d_S)) for g, s in enumerate(S)]
    return mdi.certificate_from_shifts(model, eta, S, normalize=False, repaired=cert.repaired)
