from __future__ import annotations

import math

import numpy as np
import pytest

from src.channel import SessionCounts, expected_session_counts
from src.finitekey import (
    EPS_SPLIT,
    DecoyBounds,
    InsufficientStatistics,
    binary_entropy,
    build_key_report,
    decoy_bounds_analytic,
    delta_v1,
    delta_v2,
    gamma_correction,
    hoeffding_delta,
    key_rate_bps,
    lambda_ec,
    secure_key_length_v1,
    secure_key_length_v2,
)
from src.params import LinkModel, SecurityParams, replace_section

SEC = SecurityParams(eps_sec=1e-10, eps_cor=1e-15)


def _bounds(**kw) -> DecoyBounds:
    fields = dict(n0_low=1000.0, n1_low=50000.0, n1_up=52000.0, eph_up=0.05,
                  s_x1_low=1.0, v_x1_up=0.0, method="analytic")
    fields.update(kw)
    return DecoyBounds(**fields)


def test_binary_entropy():
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    assert binary_entropy(0.5) == pytest.approx(1.0)
    assert binary_entropy(0.05) == pytest.approx(0.286397, abs=1e-6)
    with pytest.raises(ValueError):
        binary_entropy(1.2)


def test_hoeffding_delta():
    assert hoeffding_delta(1e6, 1.0) == 0.0
    assert hoeffding_delta(0, 1e-12) == 0.0
    assert hoeffding_delta(1e6, 1e-10 / EPS_SPLIT) == pytest.approx(3610.4, abs=0.1)


def test_gamma_correction():
    assert gamma_correction(1e-10, 0.0, 1e4, 1e4) == 0.0
    value = gamma_correction(1e-10, 0.05, 1e4, 1e4)
    assert 0 < value < 0.5
    assert value == pytest.approx(0.0303779132, rel=1e-5)
    assert gamma_correction(1e-10, 0.05, 1e4, 3e5) == pytest.approx(
        gamma_correction(1e-10, 0.05, 3e5, 1e4), rel=1e-12)
    assert gamma_correction(1e-10, 0.05, 0.0, 1e4) == 0.5


def test_lambda_ec():
    assert lambda_ec(1e4, 0.0, 1.16) == 0.0
    assert lambda_ec(1e4, 0.05, 1.0) == pytest.approx(2863.97, abs=0.01)
    assert lambda_ec(1e4, 0.05, 1.16) == pytest.approx(3322.2, abs=0.1)


def test_deltas():
    assert delta_v1(SEC) == pytest.approx(276.5, abs=0.1)
    assert delta_v2(SEC) == pytest.approx(283.3, abs=0.1)
    for eps in (1e-6, 1e-10, 1e-14):
        sec = SecurityParams(eps_sec=eps, eps_cor=eps)
        assert delta_v2(sec) > delta_v1(sec)


def test_secure_lengths_on_fixture():
    assert secure_key_length_v1(_bounds(), 30000.0, SEC) == 6403
    assert secure_key_length_v2(_bounds(), 30000.0, SEC) == 5824


def test_secure_length_edge_cases():
    zero = DecoyBounds.zero("analytic")
    assert secure_key_length_v1(zero, 0.0, SEC) == math.floor(-delta_v1(SEC))
    b = _bounds(eph_up=0.5)
    assert secure_key_length_v1(b, 0.0, SEC) == math.floor(1000.0 - delta_v1(SEC))
    b = _bounds(eph_up=0.0)
    assert secure_key_length_v2(b, 30000.0, SEC) == math.floor(51000.0 - 30000.0 - delta_v2(SEC))


def test_lengths_agree_when_single_photon_bounds_coincide():
    """With n1_up = n1_low the two formulas differ only by their security terms."""
    b = _bounds(n1_up=50000.0, eph_up=0.0)
    v1 = secure_key_length_v1(b, 30000.0, SEC) + delta_v1(SEC)
    v2 = secure_key_length_v2(b, 30000.0, SEC) + delta_v2(SEC)
    assert v1 == pytest.approx(v2, abs=1.0)


@pytest.mark.parametrize("field, step, direction", [
    ("n0_low", 500.0, +1), ("n1_low", 500.0, +1), ("eph_up", 0.01, -1), ("n1_up", 500.0, -1),
])
def test_length_monotonicity(field, step, direction):
    base = _bounds()
    moved = _bounds(**{field: getattr(base, field) + step})
    for fn in (secure_key_length_v1, secure_key_length_v2):
        diff = fn(moved, 30000.0, SEC) - fn(base, 30000.0, SEC)
        assert diff * direction >= 0
    assert secure_key_length_v1(base, 31000.0, SEC) <= secure_key_length_v1(base, 30000.0, SEC)
    loose = SecurityParams(eps_sec=1e-6, eps_cor=1e-10)
    assert secure_key_length_v2(base, 30000.0, loose) >= secure_key_length_v2(base, 30000.0, SEC)


def test_key_rate_bps():
    link = LinkModel(clock_hz=1e9, session_pulses=10**12)
    assert key_rate_bps(-5, link) == 0.0
    assert key_rate_bps(8400, link) == pytest.approx(8.4)
    assert key_rate_bps(16800, link) == pytest.approx(2 * key_rate_bps(8400, link))


# -----------------------------
# Analytic decoy bounds
# -----------------------------
def test_all_zero_counts_give_zero_bounds(params):
    empty = np.zeros((2, 3), dtype=np.int64)
    counts = SessionCounts(sent=empty + 10**6, detected=empty, errors=empty)
    bounds = decoy_bounds_analytic(counts, params)
    assert bounds.n0_low == bounds.n1_low == bounds.n1_up == 0.0


def test_analytic_bounds_sandwich_truth(asymptotic):
    p = replace_section(asymptotic, "link", length_km=100.0)
    counts = expected_session_counts(p)
    b = decoy_bounds_analytic(counts, p)
    truth_1 = counts.true_events("Z", 1)
    assert b.n0_low <= counts.true_events("Z", 0)
    assert b.n1_low <= truth_1 <= b.n1_up
    assert b.n1_low == pytest.approx(truth_1, rel=0.05)
    assert 0.0 <= b.eph_up <= 0.5


def test_finite_deviations_loosen_bounds(params, asymptotic):
    p = replace_section(params, "link", length_km=150.0)
    counts = expected_session_counts(p)
    finite = decoy_bounds_analytic(counts, p)
    exact = decoy_bounds_analytic(counts, replace_section(p, "estimation", finite_size=False))
    assert finite.n1_low <= exact.n1_low
    assert finite.n1_up >= exact.n1_up
    assert finite.eph_up >= exact.eph_up


def test_insufficient_statistics_far_out(params):
    counts = expected_session_counts(replace_section(params, "link", length_km=400.0,
                                                     session_pulses=10**9))
    with pytest.raises(InsufficientStatistics):
        decoy_bounds_analytic(counts, params)


def test_report_uses_each_variant_distillation_set(params):
    p = replace_section(params, "link", length_km=100.0)
    counts = expected_session_counts(p)
    b = decoy_bounds_analytic(counts, p)
    report = build_key_report(counts, p, b, b, 19.2)
    assert report.lambda_ec_v1 == pytest.approx(
        lambda_ec(counts.total_detected_z, counts.qber("Z"), p.epsilons.f_ec))
    assert report.lambda_ec_v2 == pytest.approx(
        lambda_ec(counts.n("Z", "u"), counts.qber("Z", "u"), p.epsilons.f_ec))
    assert report.lambda_ec_v2 < report.lambda_ec_v1
    assert report.rate_v1_bps == key_rate_bps(report.secure_length_v1, p.link)
    assert report.secure_length_v1 <= counts.total_detected_z


def test_failed_variant_yields_zero_key(params):
    counts = expected_session_counts(replace_section(params, "link", length_km=100.0))
    report = build_key_report(counts, params, None, None, 19.2, ("v1: estimation failed",))
    assert report.secure_length_v1 == report.secure_length_v2 == 0
    assert report.rate("v2") == 0.0
    assert report.to_dict()["failures"] == ["v1: estimation failed"]
