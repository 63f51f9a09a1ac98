"""Time-bin phase-encoding example: coherent sources, lossy channel, squashed POVM.

All probability formulas accept numpy arrays and broadcast, so parameter grids
can be evaluated in one call. ``mu`` is the total source intensity over the two
time bins (``mu = 2 |alpha|^2``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import matcore

# Deviations from the printed model, reported in run metadata.
MODEL_NOTES = (
    "M4 is (1-p_z)|-><-|, so that the four elements sum to the identity",
    "psi_2 carries exp(-(2-sqrt2)|alpha|^2), the coefficient that normalizes it",
)


@dataclass(frozen=True)
class OpticalParams:
    mu: float
    eta_ch: float = 1.0
    p_d: float = 1e-8
    p_z: float = 0.5
    p_s: float = 0.5

    def __post_init__(self):
        if not self.mu >= 0:
            raise ValueError("mu must be >= 0")
        if not 0.0 <= self.eta_ch <= 1.0:
            raise ValueError("eta_ch must lie in [0, 1]")
        if not 0.0 <= self.p_d < 1.0:
            raise ValueError("p_d must lie in [0, 1)")
        if not 0.0 < self.p_z < 1.0:
            raise ValueError("p_z must lie in (0, 1)")
        if not 0.0 < self.p_s < 1.0:
            raise ValueError("p_s must lie in (0, 1)")

    @classmethod
    def from_loss_db(cls, mu, loss_db, **kw) -> "OpticalParams":
        return cls(mu=mu, eta_ch=db_to_transmittance(loss_db), **kw)


@dataclass(frozen=True)
class NominalStatistics:
    si: np.ndarray
    mdi: np.ndarray
    params: OpticalParams
    notes: tuple[str, ...] = field(default=MODEL_NOTES)


def db_to_transmittance(loss_db):
    return 10.0 ** (-np.asarray(loss_db, dtype=float) / 10.0)


def coherent_overlap(alpha, beta) -> complex:
    """<alpha|beta> for multimode coherent states given per-mode amplitudes."""
    a = np.atleast_1d(np.asarray(alpha, dtype=np.complex128))
    b = np.atleast_1d(np.asarray(beta, dtype=np.complex128))
    if a.shape != b.shape:
        raise ValueError("mode counts differ")
    expo = -0.5 * np.abs(a) ** 2 - 0.5 * np.abs(b) ** 2 + np.conj(a) * b
    return complex(np.exp(np.sum(expo)))


def apply_loss(alpha, eta_ch):
    if np.any(np.asarray(eta_ch) < 0) or np.any(np.asarray(eta_ch) > 1):
        raise ValueError("eta_ch must lie in [0, 1]")
    return np.sqrt(eta_ch) * np.asarray(alpha, dtype=np.complex128)


def si_povm(p_z: float) -> list[np.ndarray]:
    """Squashed five-outcome POVM on qubit + vacuum (d = 3)."""
    if not 0.0 < p_z < 1.0:
        raise ValueError("p_z must lie in (0, 1)")
    s = 1.0 / np.sqrt(2.0)
    kets = [
        (p_z, np.array([1.0, 0.0, 0.0])),
        (p_z, np.array([0.0, 1.0, 0.0])),
        (1.0 - p_z, np.array([s, s, 0.0])),
        (1.0 - p_z, np.array([s, -s, 0.0])),
    ]
    ops = [w * np.outer(k, k).astype(np.complex128) for w, k in kets]
    ops.append(np.eye(3, dtype=np.complex128) - sum(ops))
    return [matcore.hermitian(a) for a in ops]


def _click_terms(mu, eta_ch, p_d):
    mu_eta = np.asarray(mu, dtype=float) * np.asarray(eta_ch, dtype=float)
    keep = 1.0 - np.asarray(p_d, dtype=float)
    full = np.exp(-mu_eta)
    half = np.exp(-mu_eta / 2.0)
    return keep, full, half


def si_conditional(mu, eta_ch, p_d, p_z):
    """p(j|rho_i) as an array of shape ``(2, 5, ...)`` (state, outcome)."""
    q, e, f = _click_terms(mu, eta_ch, p_d)
    p_d = np.asarray(p_d, dtype=float)
    p_z = np.asarray(p_z, dtype=float)
    # one bin carries all light / two bins carry half each
    bright = (1 - q * e) * q + 0.5 * p_d * (1 - q * e)
    dark = p_d * q * e + 0.5 * p_d * (1 - q * e)
    split = (1 - q * f) * q * f + 0.5 * (1 - q * f) ** 2
    none = q ** 2 * e
    rho1 = [p_z * bright, p_z * dark, (1 - p_z) * split, (1 - p_z) * split,
            p_z * none + (1 - p_z) * none]
    rho2 = [p_z * split, p_z * split, (1 - p_z) * dark, (1 - p_z) * bright,
            p_z * none + (1 - p_z) * none]
    return np.array([np.broadcast_arrays(*rho1), np.broadcast_arrays(*rho2)])


def si_nominal_from(mu, eta_ch, p_d, p_z, p_s):
    cond = si_conditional(mu, eta_ch, p_d, p_z)
    p_s = np.asarray(p_s, dtype=float)
    return p_s * cond[0] + (1 - p_s) * cond[1]


def mdi_nominal_from(mu, eta_ch, p_d, p_z):
    """q_{j|i} as an array of shape ``(2, 3, ...)``."""
    q, e, f = _click_terms(mu, eta_ch, p_d)
    p_d = np.asarray(p_d, dtype=float)
    p_z = np.asarray(p_z, dtype=float)
    major = p_z * (1 - q * e) * q + (1 - p_z) * ((1 - q * f) * q * f)
    minor = p_z * p_d * q * e + (1 - p_z) * ((1 - q * f) * q * f)
    row1 = [major, minor, 1 - major - minor]
    row2 = [minor, major, 1 - minor - major]
    return np.array([np.broadcast_arrays(*row1), np.broadcast_arrays(*row2)])


def si_nominal_stats(params: OpticalParams) -> np.ndarray:
    return si_nominal_from(params.mu, params.eta_ch, params.p_d, params.p_z, params.p_s)


def mdi_nominal_stats(params: OpticalParams) -> np.ndarray:
    return mdi_nominal_from(params.mu, params.eta_ch, params.p_d, params.p_z)


def nominal_statistics(params: OpticalParams) -> NominalStatistics:
    si = si_nominal_stats(params)
    mdi = mdi_nominal_stats(params)
    si.setflags(write=False)
    mdi.setflags(write=False)
    return NominalStatistics(si, mdi, params)


def canonical_overlap(mu: float) -> float:
    """<phi|psi_2> for the two source states written in the canonical basis."""
    return float(np.exp(-(2.0 - np.sqrt(2.0)) * mu / 2.0))


def mdi_states(mu: float) -> list[np.ndarray]:
    if not mu > 0:
        raise ValueError("mu must be > 0")
    o = canonical_overlap(mu)
    return [matcore.pure_state([1.0, 0.0]), matcore.pure_state([o, np.sqrt(1.0 - o * o)])]


def expected_si_counts(q_nom, n_tot: float, p_sig: float) -> np.ndarray:
    return n_tot * (1.0 - p_sig) * np.asarray(q_nom, dtype=float)


def expected_mdi_counts(q_nom, probs, n_tot: float, p_sig: float) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    return n_tot * (1.0 - p_sig) * probs[:, None] * np.asarray(q_nom, dtype=float)


def si_model(p_z: float):
    from .si import SiModel

    return SiModel(tuple(si_povm(p_z)))


def mdi_model(mu: float, p_s: float = 0.5):
    """Two canonical-basis test states, three coarse-grained outcomes."""
    from .mdi import MdiModel

    return MdiModel(tuple(mdi_states(mu)), (p_s, 1.0 - p_s), 3)
