import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdiqrng import finitesize as fs
from sdiqrng import mdi, optics, si


def lam_table(lams, p_sig=0.5, offset=0.0, protocol="si"):
    return fs.RoundWeightTable(p_sig, np.asarray(lams, dtype=float) / (1 - p_sig), offset, protocol)


def test_bounded_difference_examples():
    assert fs.bounded_difference(lam_table([0.1, 0.2]), "paper") == pytest.approx(4.0)
    t = lam_table([-0.2, 0.1])
    assert fs.bounded_difference(t, "conservative") == pytest.approx(2.4)
    assert fs.bounded_difference(t, "paper") == pytest.approx(4.0)
    z = lam_table([0.0, 0.0])
    assert fs.bounded_difference(z, "conservative") == pytest.approx(2.0)
    assert fs.bounded_difference(z, "paper") == pytest.approx(4.0)
    with pytest.raises(ValueError):
        fs.bounded_difference(z, "other")


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 0.99), st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_conservative_covers_span(p_sig, weights):
    t = fs.RoundWeightTable(p_sig, weights)
    vals = t.values()
    assert fs.bounded_difference(t) >= vals.max() - vals.min() - 1e-12


def test_azuma_delta():
    assert fs.azuma_delta(10**6, 1e-10, 4.0) == pytest.approx(2.7145e4, rel=1e-4)
    assert fs.azuma_delta(10**6, 1 - 1e-15, 4.0) < 1e-3
    assert fs.azuma_delta(4 * 10**6, 1e-10, 4.0) == pytest.approx(2 * fs.azuma_delta(10**6, 1e-10, 4.0))
    assert fs.azuma_delta(10**6, 1e-5, 4.0) < fs.azuma_delta(10**6, 1e-10, 4.0)
    for bad in (0.0, 1.0, 2.0):
        with pytest.raises(ValueError):
            fs.azuma_delta(10**6, bad, 4.0)


def test_final_length_examples():
    assert fs.final_length(1000, 1000) == 0
    assert fs.final_length(500, 1000) == 1000
    assert fs.final_length(1e8, 10**9) == 10**9
    assert fs.final_length(0.0, 1000) == fs.final_length(1.0, 1000) == 1000
    assert fs.final_length(5.0, 0) == 0
    assert fs.final_length(2000, 1000) == 0
    G = 10**6
    assert fs.final_length(0.7 * G, G) == math.floor(-G * math.log2(0.7))


def test_n_guess_upper_clamps():
    t = lam_table([-0.1, -0.1], p_sig=0.9, offset=0.5)
    counts = [10.0, 10.0]
    assert fs.n_guess_upper(t, counts, 1000, 1e9) == pytest.approx(980)
    assert fs.n_guess_upper(fs.RoundWeightTable(0.9, [50.0, 50.0]), counts, 1000, 0.0) == 0.0
    with pytest.raises(ValueError):
        fs.n_guess_upper(t, [1.0], 1000, 0.0)
    with pytest.raises(ValueError):
        fs.n_guess_upper(t, [600.0, 600.0], 1000, 0.0)


def test_zero_test_counts():
    lam = np.array([-0.3, -0.2, -0.5])
    t = fs.si_table(si.SiDualCertificate(lam, False, 0.0), 0.99)
    delta = 7.0
    expected = 0.99 * (-1000 * lam[-1] + delta)
    assert fs.n_guess_upper(t, [0.0, 0.0], 1000, delta) == pytest.approx(min(expected, 1000))


def _si_setup(p_sig=0.5, loss=0.0):
    params = optics.OpticalParams.from_loss_db(0.1, loss)
    model, nu = optics.si_model(0.5), optics.si_nominal_stats(params)
    cert = si.extract_si_certificate(model, nu)
    return model, nu, cert


def _mdi_setup(loss=0.0):
    params = optics.OpticalParams.from_loss_db(0.1, loss)
    model, nu = optics.mdi_model(0.1), optics.mdi_nominal_stats(params)
    return model, nu, mdi.extract_mdi_certificate(model, nu)


@pytest.mark.parametrize("p_sig", [0.5, 0.9])
def test_asymptotic_consistency_si(p_sig):
    model, nu, cert = _si_setup()
    n_tot = 10**12
    counts = optics.expected_si_counts(nu, n_tot, p_sig)
    ng = fs.n_guess_upper(fs.si_table(cert, p_sig), counts, n_tot, 0.0)
    assert ng / (p_sig * n_tot) == pytest.approx(cert.dual_objective(nu), abs=1e-6)
    assert ng / (p_sig * n_tot) == pytest.approx(si.si_guessing_probability(model, nu)[0], abs=1e-6)


def test_asymptotic_consistency_mdi():
    model, nu, cert = _mdi_setup()
    n_tot, p_sig = 10**12, 0.7
    counts = optics.expected_mdi_counts(nu, model.probs, n_tot, p_sig)
    ng = fs.n_guess_upper(fs.mdi_table(cert, model.probs, p_sig), counts, n_tot, 0.0)
    assert ng / (p_sig * n_tot) == pytest.approx(cert.bound(nu), abs=1e-6)


def test_paper_placement_and_sign():
    t = fs.RoundWeightTable(0.5, [-1.0, 2.0], 0.25, "mdi")
    counts = np.array([10.0, 20.0])
    score = -10 + 40
    assert fs.n_guess_upper(t, counts, 1000, 0.01, "paper") == pytest.approx(
        min(0.5 * 1000 * (score / 1000 + 0.25 + 0.01), 970))
    t_si = fs.RoundWeightTable(0.5, [-1.0, 2.0], 0.25, "si")
    assert fs.n_guess_upper(t_si, counts, 1000, 0.01, "paper") == pytest.approx(
        0.5 * 1000 * (-score / 1000 + 0.25 + 0.01))
    assert fs.n_guess_upper(t_si, counts, 1000, 3.0, "derived") == pytest.approx(0.5 * (-score + 250 + 3.0))


def test_security_monotonicity():
    model, nu, cert = _si_setup()
    p_sig = 0.8
    table = fs.si_table(cert, p_sig)
    for n_tot in (10**8, 10**10):
        counts = optics.expected_si_counts(nu, n_tot, p_sig)
        prev = None
        for delta in (0.0, 1e3, 1e5, 1e7):
            r = fs.finite_size(table, counts, n_tot, 1e-10, delta=delta)
            assert prev is None or r.n_fin <= prev
            prev = r.n_fin
    fins = [fs.finite_size(table, optics.expected_si_counts(nu, n, p_sig), n, 1e-10).n_fin
            for n in (10**8, 10**9, 10**10, 10**11)]
    assert fins == sorted(fins)


def test_huge_delta_gives_nothing():
    model, nu, cert = _si_setup()
    table = fs.si_table(cert, 0.5)
    counts = optics.expected_si_counts(nu, 1000, 0.5)
    r = fs.finite_size(table, counts, 1000, 1e-300)
    assert r.n_guess_upper == pytest.approx(r.generation_rounds)
    assert r.n_fin == 0


def test_result_invariants():
    model, nu, cert = _si_setup()
    table = fs.si_table(cert, 0.9)
    counts = optics.expected_si_counts(nu, 10**11, 0.9)
    r = fs.finite_size(table, counts, 10**11, 1e-10)
    assert 0 <= r.n_fin <= r.generation_rounds
    assert r.per_round_rate == r.n_fin / 10**11


def test_table_validation():
    with pytest.raises(ValueError):
        fs.RoundWeightTable(1.0, [0.0])
    with pytest.raises(ValueError):
        fs.RoundWeightTable(0.5, [np.inf])
    with pytest.raises(ValueError):
        fs.RoundWeightTable(0.5, [0.0], protocol="di")


@pytest.mark.parametrize("p_sig", [0.5, 0.95])
def test_balancing_si_keeps_validity_and_shrinks_span(p_sig):
    model, nu, cert = _si_setup()
    bal = fs.balance_si(model, cert, p_sig)
    assert bal.worst_margin <= 1e-12
    c0 = fs.bounded_difference(fs.si_table(cert, p_sig))
    c1 = fs.bounded_difference(fs.si_table(bal, p_sig))
    assert c1 <= c0 + 1e-12
    assert bal.dual_objective(nu) == pytest.approx(cert.dual_objective(nu), abs=1e-8)


def test_balancing_mdi_keeps_validity_and_shrinks_span():
    model, nu, cert = _mdi_setup()
    for p_sig in (0.5, 0.9):
        bal = fs.balance_mdi(model, cert, p_sig)
        assert mdi.verify_mdi_inequalities(model, bal) <= 1e-12
        c0 = fs.bounded_difference(fs.mdi_table(cert, model.probs, p_sig))
        c1 = fs.bounded_difference(fs.mdi_table(bal, model.probs, p_sig))
        assert c1 <= c0 + 1e-12
        assert bal.bound(nu) == pytest.approx(cert.bound(nu), abs=1e-6)


def test_minimize_span_simple():
    # one direction that moves the two weights toward each other
    w, d = np.array([5.0, -5.0]), np.array([-1.0, 1.0])
    t = fs.minimize_span(w, [d], 1.0)
    assert fs._span(w + t[0] * d, 1.0) == pytest.approx(1.0, abs=1e-7)
    assert fs.minimize_span(w, np.zeros((0, 2)), 1.0).size == 0
