"""End-to-end certification for the optical example: single points, optimization, sweeps.

Per point: nominal statistics from the optical model, primal solve (reported
guessing probability), certificate fixed from the nominal statistics,
expected counts, finite-size bound and output length. The certificate is
balanced for the chosen ``p_sig`` before the bound is taken.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields, replace

import numpy as np

from . import finitesize as fs
from . import mdi, optics, sdp, si
from .config import OPTIMIZE, RunConfig

MU_GRID = tuple(np.logspace(-3.0, 0.0, 20))
P_SIG_GRID = tuple(np.linspace(0.5, 1.0 - 1e-3, 20))
REFINE_POINTS = 9


@dataclass(frozen=True)
class SweepRecord:
    loss_db: float
    eta_ch: float
    mu_used: float
    p_sig_used: float
    p_guess_nominal: float
    dual_objective: float
    delta: float
    n_guess_upper: float
    n_fin: int
    rate_total: float
    rate_per_signal: float
    repaired: bool
    epsilon: float
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def csv_row(self) -> list[str]:
        out = []
        for v in astuple(self):
            if isinstance(v, bool):
                out.append("true" if v else "false")
            elif isinstance(v, float):
                out.append(repr(float(v)))
            else:
                out.append(str(v))
        return out

    def summary(self) -> str:
        if not self.ok:
            return (f"loss={self.loss_db:g} dB  mu={self.mu_used:.4g}  p_sig={self.p_sig_used:.4g}  "
                    f"{self.status}")
        return (f"loss={self.loss_db:g} dB  mu={self.mu_used:.4g}  p_sig={self.p_sig_used:.4g}  "
                f"p_guess={self.p_guess_nominal:.6f}  N_fin={self.n_fin}  "
                f"rate={self.rate_total:.4e}/round  {self.rate_per_signal:.4e}/signal")


CSV_HEADER = tuple(f.name for f in fields(SweepRecord))


def failed_record(config: RunConfig, loss_db, mu, p_sig, stage: str) -> SweepRecord:
    nan = math.nan
    eta = float(optics.db_to_transmittance(loss_db))
    return SweepRecord(float(loss_db), eta, float(mu), float(p_sig), nan, nan, nan, nan, 0,
                       0.0, 0.0, False, config.epsilon, f"failed:{stage}")


class StageError(RuntimeError):
    def __init__(self, stage: str, detail: str = ""):
        super().__init__(f"{stage}: {detail}")
        self.stage = stage


@dataclass
class Prepared:
    """Everything fixed before data at one ``(mu, loss)``."""

    protocol: str
    params: optics.OpticalParams
    model: object
    nu: np.ndarray
    p_guess: float
    cert: object
    directions: object


def prepare(config: RunConfig, mu: float, loss_db: float) -> Prepared:
    try:
        params = optics.OpticalParams.from_loss_db(mu, loss_db, p_d=config.p_d, p_z=config.p_z,
                                                   p_s=config.p_s)
        if config.protocol == "si":
            model = optics.si_model(config.p_z)
            nu = optics.si_nominal_stats(params)
        else:
            model = optics.mdi_model(mu, config.p_s)
            nu = optics.mdi_nominal_stats(params)
    except ValueError as exc:
        raise StageError("optics", str(exc)) from None
    solve = si.solve_si if config.protocol == "si" else mdi.solve_mdi
    try:
        _, sol = solve(model, nu)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise StageError("primal", str(exc)) from None
    if not sol.optimal:
        raise StageError("primal", sol.message or sol.status)
    try:
        if config.protocol == "si":
            cert = si.extract_si_certificate(model, nu, sol)
            directions = si.gauge_directions(model)
        else:
            cert = mdi.extract_mdi_certificate(model, nu, sol)
            directions = mdi.gauge_directions(model)
    except (sdp.SolverError, ValueError, np.linalg.LinAlgError) as exc:
        raise StageError("certificate", str(exc)) from None
    return Prepared(config.protocol, params, model, nu, min(1.0, sol.primal_value), cert, directions)


def balanced(prep: Prepared, p_sig: float):
    if prep.protocol == "si":
        return fs.balance_si(prep.model, prep.cert, p_sig, prep.directions)
    return fs.balance_mdi(prep.model, prep.cert, p_sig, prep.directions)


def weight_table(prep: Prepared, cert, p_sig: float) -> fs.RoundWeightTable:
    if prep.protocol == "si":
        return fs.si_table(cert, p_sig)
    return fs.mdi_table(cert, prep.model.probs, p_sig)


def certified_bound(prep: Prepared, cert) -> float:
    if prep.protocol == "si":
        return cert.dual_objective(prep.nu)
    return cert.bound(prep.nu)


def expected_counts(prep: Prepared, n_tot: float, p_sig: float) -> np.ndarray:
    if prep.protocol == "si":
        return optics.expected_si_counts(prep.nu, n_tot, p_sig)
    return optics.expected_mdi_counts(prep.nu, prep.model.probs, n_tot, p_sig)


def evaluate(config: RunConfig, prep: Prepared, p_sig: float, loss_db: float,
             counts=None, cert=None) -> tuple[SweepRecord, object]:
    """Finite-size record at ``p_sig``; ``counts`` default to the nominal expectation."""
    try:
        cert = balanced(prep, p_sig) if cert is None else cert
        table = weight_table(prep, cert, p_sig)
        counts = expected_counts(prep, config.n_tot, p_sig) if counts is None else counts
        res = fs.finite_size(table, counts, config.n_tot, config.epsilon, config.mode_c,
                             config.mode_delta)
    except (ValueError, sdp.SolverError) as exc:
        raise StageError("finite-size", str(exc)) from None
    rec = SweepRecord(
        loss_db=float(loss_db),
        eta_ch=float(prep.params.eta_ch),
        mu_used=float(prep.params.mu),
        p_sig_used=float(p_sig),
        p_guess_nominal=float(prep.p_guess),
        dual_objective=float(certified_bound(prep, cert)),
        delta=float(res.delta),
        n_guess_upper=float(res.n_guess_upper),
        n_fin=int(res.n_fin),
        rate_total=float(res.n_fin / config.n_tot),
        rate_per_signal=float(res.n_fin / (p_sig * config.n_tot)),
        repaired=bool(cert.repaired),
        epsilon=float(config.epsilon),
    )
    return rec, cert


def certify_point(config: RunConfig, mu: float, p_sig: float, loss_db: float):
    """(record, certificate); the certificate is ``None`` when a stage failed."""
    try:
        prep = prepare(config, mu, loss_db)
        return evaluate(config, prep, p_sig, loss_db)
    except StageError as exc:
        return failed_record(config, loss_db, mu, p_sig, exc.stage), None


def certify_once(config: RunConfig, mu: float | None = None, p_sig: float | None = None,
                 loss_db: float | None = None) -> SweepRecord:
    mu = config.mu if mu is None else mu
    p_sig = config.p_sig if p_sig is None else p_sig
    if loss_db is None:
        pts = config.loss_points()
        if len(pts) != 1:
            raise ValueError("certify_once needs a single loss value")
        loss_db = pts[0]
    if OPTIMIZE in (mu, p_sig):
        raise ValueError("certify_once needs fixed mu and p_sig")
    return certify_point(config, float(mu), float(p_sig), float(loss_db))[0]


def _better(rec: SweepRecord, best: SweepRecord | None) -> bool:
    return rec.ok and (best is None or rec.n_fin > best.n_fin)


def _refine(grid, idx, log):
    lo = grid[max(idx - 1, 0)]
    hi = grid[min(idx + 1, len(grid) - 1)]
    if log:
        return tuple(np.logspace(math.log10(lo), math.log10(hi), REFINE_POINTS))
    return tuple(np.linspace(lo, hi, REFINE_POINTS))


def optimize_point(config: RunConfig, loss_db: float) -> tuple[float, float, SweepRecord]:
    """Grid search plus one refinement pass; maximizes ``N_fin``.

    Free parameters use ``MU_GRID`` (log-spaced on ``[1e-3, 1]``) and
    ``P_SIG_GRID`` (uniform on ``[0.5, 1 - 1e-3]``). Around the best coarse
    point a finer grid spans the neighbouring coarse nodes. Ties go to the
    smaller ``mu``, then the smaller ``p_sig``.
    """
    mus = MU_GRID if config.mu == OPTIMIZE else (float(config.mu),)
    sigs = P_SIG_GRID if config.p_sig == OPTIMIZE else (float(config.p_sig),)
    cache: dict[float, Prepared | None] = {}

    def prep_for(mu):
        if mu not in cache:
            try:
                cache[mu] = prepare(config, mu, loss_db)
            except StageError:
                cache[mu] = None
        return cache[mu]

    def search(mu_vals, sig_vals):
        results = {}
        for mu in mu_vals:
            prep = prep_for(mu)
            for ps in sig_vals:
                if prep is None:
                    continue
                try:
                    results[(mu, ps)] = evaluate(config, prep, ps, loss_db)[0]
                except StageError:
                    pass
        return results

    coarse = search(mus, sigs)
    best_key, best = None, None
    for key in sorted(coarse):
        if _better(coarse[key], best):
            best_key, best = key, coarse[key]
    if best is None:
        return mus[0], sigs[0], failed_record(config, loss_db, mus[0], sigs[0], "optimize")
    i, k = mus.index(best_key[0]), sigs.index(best_key[1])
    fine_mu = _refine(mus, i, log=True) if len(mus) > 1 else mus
    fine_sig = _refine(sigs, k, log=False) if len(sigs) > 1 else sigs
    merged = dict(coarse)
    if len(mus) > 1 or len(sigs) > 1:
        merged.update(search(fine_mu, fine_sig))
    best_key, best = None, None
    for key in sorted(merged):
        if _better(merged[key], best):
            best_key, best = key, merged[key]
    return best_key[0], best_key[1], best


def run_point(config: RunConfig, loss_db: float) -> SweepRecord:
    if OPTIMIZE in (config.mu, config.p_sig):
        return optimize_point(config, loss_db)[2]
    return certify_point(config, float(config.mu), float(config.p_sig), loss_db)[0]


def _worker(args):
    config, loss = args
    return run_point(config, loss)


def sweep(config: RunConfig, jobs: int = 1) -> list[SweepRecord]:
    """One record per loss point, in loss order."""
    points = config.loss_points()
    if jobs > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_worker, [(config, p) for p in points]))
    return [run_point(config, p) for p in points]


def format_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.csv_row())
    return buf.getvalue()


def read_csv(text: str) -> list[SweepRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError("unexpected CSV header")
    out = []
    for row in rows[1:]:
        vals = {}
        for f, v in zip(fields(SweepRecord), row):
            if f.name == "n_fin":
                vals[f.name] = int(v)
            elif f.name == "repaired":
                vals[f.name] = v == "true"
            elif f.name == "status":
                vals[f.name] = v
            else:
                vals[f.name] = float(v)
        out.append(SweepRecord(**vals))
    return out


# ---------------------------------------------------------------------------
# measured counts with a previously fixed certificate


def certify_counts(config: RunConfig, cert, counts, loss_db: float | None = None) -> SweepRecord:
    """Finite-size record for measured ``counts`` under a saved certificate.

    The certificate is re-verified against the model rebuilt from ``config``
    (fingerprint and operator inequalities) before it is used.
    """
    if OPTIMIZE in (config.mu, config.p_sig):
        raise ValueError("a fixed mu and p_sig are required with measured counts")
    mu, p_sig = float(config.mu), float(config.p_sig)
    loss_db = config.loss_points()[0] if loss_db is None else loss_db
    params = optics.OpticalParams.from_loss_db(mu, loss_db, p_d=config.p_d, p_z=config.p_z,
                                               p_s=config.p_s)
    if config.protocol == "si":
        model = optics.si_model(config.p_z)
        margin = si.verify_si_inequalities(model, cert)
        nu = optics.si_nominal_stats(params)
    else:
        model = optics.mdi_model(mu, config.p_s)
        margin = mdi.verify_mdi_inequalities(model, cert)
        nu = optics.mdi_nominal_stats(params)
    if cert.model_hash and cert.model_hash != model.fingerprint():
        raise StageError("certificate", "certificate was made for a different model")
    if margin > 1e-12:
        raise StageError("certificate", f"operator inequality violated by {margin:.3e}")
    prep = Prepared(config.protocol, params, model, nu, math.nan, cert, None)
    counts = np.asarray(counts, dtype=float)
    rec, _ = evaluate(config, prep, p_sig, loss_db, counts=counts, cert=cert)
    return replace(rec, dual_objective=math.nan)
