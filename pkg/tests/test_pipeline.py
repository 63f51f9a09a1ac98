import math

import numpy as np
import pytest

from sdiqrng import finitesize as fs
from sdiqrng import mdi, optics, pipeline, si
from sdiqrng.config import RunConfig

SI_FIXED = RunConfig(protocol="si", mu=0.1, p_sig=0.9)
SI_PINNED_N_FIN = 63252654216  # 0 dB, mu = 0.1, p_sig = 0.9, reference parameters


def test_certify_once_si_pinned():
    r = pipeline.certify_once(SI_FIXED, loss_db=0.0)
    assert r.ok and r.n_fin > 0
    assert r.n_fin == pytest.approx(SI_PINNED_N_FIN, rel=1e-6)
    assert r.rate_total == r.n_fin / 10**12
    assert r.rate_per_signal == pytest.approx(r.n_fin / (0.9 * 10**12))
    assert r.dual_objective >= r.p_guess_nominal - 1e-7


def test_certify_once_deterministic():
    a = pipeline.certify_once(SI_FIXED, loss_db=3.0)
    b = pipeline.certify_once(SI_FIXED, loss_db=3.0)
    assert a == b


@pytest.mark.parametrize("protocol", ["si", "mdi"])
def test_no_click_limit(protocol):
    r = pipeline.certify_once(RunConfig(protocol=protocol, mu=0.1, p_sig=0.9), loss_db=200.0)
    assert r.ok
    assert r.p_guess_nominal == pytest.approx(1.0, abs=1e-6)
    assert r.n_fin == 0


def test_larger_epsilon_never_gives_fewer_bits():
    strict = pipeline.certify_once(SI_FIXED, loss_db=5.0)
    loose = pipeline.certify_once(SI_FIXED.with_updates(epsilon=0.999999), loss_db=5.0)
    assert loose.n_fin >= strict.n_fin


def test_certify_once_needs_fixed_parameters():
    with pytest.raises(ValueError):
        pipeline.certify_once(RunConfig(), loss_db=0.0)
    with pytest.raises(ValueError):
        pipeline.certify_once(SI_FIXED.with_updates(loss_db=(0, 2, 1)))


def _coarse_grid(config, loss):
    out = {}
    for mu in pipeline.MU_GRID:
        prep = pipeline.prepare(config, mu, loss)
        for ps in pipeline.P_SIG_GRID:
            out[(mu, ps)] = pipeline.evaluate(config, prep, ps, loss)[0].n_fin
    return out


@pytest.mark.parametrize("protocol", ["si", "mdi"])
def test_optimize_point_is_grid_argmax(protocol):
    cfg = RunConfig(protocol=protocol)
    loss = 5.0
    mu, ps, rec = pipeline.optimize_point(cfg, loss)
    assert rec.ok
    assert 1e-3 <= mu <= 1.0 and 0.5 <= ps <= 1 - 1e-3
    assert (rec.mu_used, rec.p_sig_used) == (mu, ps)
    grid = _coarse_grid(cfg, loss)
    assert rec.n_fin >= max(grid.values())
    fixed = pipeline.certify_once(cfg.with_updates(mu=0.1, p_sig=0.5), loss_db=loss)
    assert rec.n_fin >= fixed.n_fin


def test_optimize_one_free_parameter():
    mu, ps, rec = pipeline.optimize_point(RunConfig(mu=0.1), 0.0)
    assert mu == 0.1 and rec.ok
    assert rec.n_fin >= pipeline.certify_once(RunConfig(mu=0.1, p_sig=0.9), loss_db=0.0).n_fin


def test_optimize_dominates_reference_point_at_zero_loss():
    for protocol in ("si", "mdi"):
        cfg = RunConfig(protocol=protocol)
        _, _, rec = pipeline.optimize_point(cfg, 0.0)
        fixed = pipeline.certify_once(cfg.with_updates(mu=0.1, p_sig=0.5), loss_db=0.0)
        assert rec.n_fin >= fixed.n_fin > 0


def test_tie_break_prefers_smaller_parameters(monkeypatch):
    def flat(config, prep, p_sig, loss_db, counts=None, cert=None):
        return pipeline.SweepRecord(loss_db, 1.0, prep.params.mu, p_sig, 0.5, 0.5, 0, 0, 7, 0, 0,
                                    False, config.epsilon), None
    monkeypatch.setattr(pipeline, "evaluate", flat)
    mu, ps, rec = pipeline.optimize_point(RunConfig(), 0.0)
    assert mu == pipeline.MU_GRID[0] and ps == pipeline.P_SIG_GRID[0]


def test_failed_stage_is_recorded_and_sweep_continues(monkeypatch):
    real = si.solve_si

    def flaky(model, nu, gap_tol=1e-8):
        if abs(nu[4] - optics.si_nominal_stats(optics.OpticalParams.from_loss_db(0.1, 1.0))[4]) < 1e-15:
            raise np.linalg.LinAlgError("injected")
        return real(model, nu, gap_tol)

    monkeypatch.setattr(si, "solve_si", flaky)
    recs = pipeline.sweep(SI_FIXED.with_updates(loss_db=(0, 2, 1)))
    assert [r.status for r in recs] == ["ok", "failed:primal", "ok"]
    assert recs[1].n_fin == 0 and math.isnan(recs[1].delta)


def test_all_candidates_failed(monkeypatch):
    def broken(config, mu, loss_db):
        raise pipeline.StageError("optics", "injected")
    monkeypatch.setattr(pipeline, "prepare", broken)
    _, _, rec = pipeline.optimize_point(RunConfig(), 0.0)
    assert rec.status == "failed:optimize"


def test_csv_header_and_roundtrip():
    recs = pipeline.sweep(SI_FIXED.with_updates(loss_db=(0, 2, 1)))
    text = pipeline.format_csv(recs)
    lines = text.splitlines()
    assert lines[0] == ",".join(pipeline.CSV_HEADER)
    assert pipeline.CSV_HEADER == (
        "loss_db", "eta_ch", "mu_used", "p_sig_used", "p_guess_nominal", "dual_objective", "delta",
        "n_guess_upper", "n_fin", "rate_total", "rate_per_signal", "repaired", "epsilon", "status")
    assert len(lines) == 4
    assert pipeline.read_csv(text) == recs
    assert "np." not in text


def test_rows_recomputable_from_their_inputs():
    cfg = RunConfig(protocol="si", loss_db=(0, 20, 10))
    text = pipeline.format_csv(pipeline.sweep(cfg))
    for r in pipeline.read_csv(text):
        again = pipeline.certify_once(cfg.with_updates(mu=r.mu_used, p_sig=r.p_sig_used), loss_db=r.loss_db)
        assert again.n_fin == pytest.approx(r.n_fin, rel=1e-9)


def test_parallel_sweep_matches_serial():
    cfg = SI_FIXED.with_updates(loss_db=(0, 6, 2))
    assert pipeline.format_csv(pipeline.sweep(cfg, jobs=2)) == pipeline.format_csv(pipeline.sweep(cfg))


@pytest.mark.parametrize("protocol", ["si", "mdi"])
def test_measured_counts_with_saved_certificate(protocol):
    cfg = RunConfig(protocol=protocol, mu=0.1, p_sig=0.9)
    rec, cert = pipeline.certify_point(cfg, 0.1, 0.9, 0.0)
    kind = si.SiDualCertificate if protocol == "si" else mdi.MdiDualCertificate
    cert = kind.from_json(cert.to_json())
    prep = pipeline.prepare(cfg, 0.1, 0.0)
    counts = pipeline.expected_counts(prep, cfg.n_tot, 0.9)
    again = pipeline.certify_counts(cfg, cert, counts)
    assert again.n_fin == rec.n_fin
    fewer = pipeline.certify_counts(cfg, cert, counts * 0.999)
    assert fewer.ok


def test_measured_counts_reject_foreign_certificate():
    cfg = RunConfig(protocol="mdi", mu=0.1, p_sig=0.9)
    _, cert = pipeline.certify_point(cfg, 0.1, 0.9, 0.0)
    with pytest.raises(pipeline.StageError):
        pipeline.certify_counts(cfg.with_updates(mu=0.3), cert, np.full((2, 3), 1e9))
    bad = mdi.MdiDualCertificate(cert.eta, tuple(h - 0.1 * np.eye(2) for h in cert.H), False, 0.0,
                                 cert.model_hash)
    with pytest.raises(pipeline.StageError):
        pipeline.certify_counts(cfg, bad, np.full((2, 3), 1e9))


def test_balanced_certificate_lowers_c():
    cfg = RunConfig(protocol="si", mu=0.1, p_sig=0.9)
    prep = pipeline.prepare(cfg, 0.1, 0.0)
    raw = fs.bounded_difference(fs.si_table(prep.cert, 0.9))
    bal = fs.bounded_difference(fs.si_table(pipeline.balanced(prep, 0.9), 0.9))
    assert bal <= raw
