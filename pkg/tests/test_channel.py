from __future__ import annotations

import math

import numpy as np
import pytest

from src.channel import (
    NoDetections,
    SessionCounts,
    attenuation_db,
    background_click_prob,
    channel_raman_prob,
    expected_error_rate,
    expected_gain,
    expected_session_counts,
    link_budget,
    raman_click_prob,
    receive_power_dbm,
    sample_session_counts,
    session_counts,
    system_transmittance,
)
from src.params import (
    DetectorModel,
    LinkModel,
    MuxChannel,
    MuxConfig,
    replace_section,
)


def test_system_transmittance():
    lossless = LinkModel(length_km=0.0, extra_loss_db=0.0)
    assert system_transmittance(lossless, DetectorModel(efficiency=1.0)) == 1.0
    link = LinkModel(length_km=240.0, extra_loss_db=0.0)
    eta = system_transmittance(link, DetectorModel(efficiency=1.0))
    assert -10.0 * math.log10(eta) == pytest.approx(43.2)
    assert system_transmittance(LinkModel(), DetectorModel()) == pytest.approx(3.63e-6, rel=1e-3)


def test_drop_filter_adds_to_quantum_path(params, mux_params):
    assert attenuation_db(params) == pytest.approx(44.4)
    assert attenuation_db(mux_params) == pytest.approx(22.2)
    plain = system_transmittance(mux_params.link, mux_params.detector)
    muxed = system_transmittance(mux_params.link, mux_params.detector, mux_params.mux)
    assert muxed / plain == pytest.approx(10 ** -0.3)


def test_background_click_prob():
    link = LinkModel()
    assert background_click_prob(DetectorModel(dark_cps=0.0), link, 0.0) == 0.0
    assert background_click_prob(DetectorModel(), link, 0.0) == pytest.approx(2.0e-8, rel=1e-6)
    assert background_click_prob(DetectorModel(), link, 1.0) == 1.0
    low = background_click_prob(DetectorModel(), link, 1e-7)
    high = background_click_prob(DetectorModel(), link, 1e-6)
    assert 0 < low < high < 1


def test_expected_gain():
    assert expected_gain(0.0, 1e-3, 0.0) == 0.0
    assert expected_gain(0.0, 1e-3, 2e-6) == 2e-6
    assert expected_gain(0.5, 1e-3, 2e-6) == pytest.approx(5.02e-4, rel=1e-3)
    assert expected_gain(0.5, 1e-3, 2e-6) < expected_gain(0.6, 1e-3, 2e-6)


def test_expected_error_rate():
    assert expected_error_rate(0.5, 1e-3, 2e-6, 0.015) == pytest.approx(0.0170, abs=2e-4)
    assert expected_error_rate(0.5, 1e-3, 0.0, 0.015) == pytest.approx(0.015)
    assert expected_error_rate(1e-12, 1e-6, 1e-6, 0.015) == pytest.approx(0.5, abs=1e-6)
    with pytest.raises(NoDetections):
        expected_error_rate(0.0, 1e-3, 0.0, 0.015)


def test_receive_power():
    link = LinkModel(length_km=100.0, extra_loss_db=0.0)
    assert receive_power_dbm(MuxChannel(launch_power_dbm=0.0), link) == pytest.approx(-18.0)
    long_link = LinkModel(length_km=200.0, extra_loss_db=1.9)
    clock = MuxChannel(role="clock", launch_power_dbm=-8.7)
    assert receive_power_dbm(clock, long_link) == pytest.approx(-46.6)
    assert receive_power_dbm(MuxChannel(launch_power_dbm=None), link) == -math.inf
    assert receive_power_dbm(MuxChannel(launch_power_dbm=-math.inf), link) == -math.inf


def test_raman_is_linear_and_additive(mux_params):
    mux, link, det = mux_params.mux, mux_params.link, mux_params.detector
    assert raman_click_prob(None, link, det) == 0.0
    assert raman_click_prob(MuxConfig(), link, det) == 0.0

    clock, data = mux.channels
    doubled = data.model_copy(update={"launch_power_dbm": data.launch_power_dbm + 10 * math.log10(2)})
    assert channel_raman_prob(doubled, mux, link, det) == pytest.approx(
        2 * channel_raman_prob(data, mux, link, det), rel=1e-12)
    total = raman_click_prob(mux, link, det)
    assert total == pytest.approx(channel_raman_prob(clock, mux, link, det)
                                  + channel_raman_prob(data, mux, link, det))
    assert 0 < total < 1


def test_raman_sum_is_not_clamped(mux_params):
    """At a unit coefficient the per-gate term exceeds 1 and must stay additive."""
    channels = tuple(ch.model_copy(update={"raman_coeff_per_km_nm": 1.0})
                     for ch in mux_params.mux.channels)
    mux = mux_params.mux.model_copy(update={"channels": channels})
    link, det = mux_params.link, mux_params.detector
    parts = [channel_raman_prob(ch, mux, link, det) for ch in channels]
    total = raman_click_prob(mux, link, det)
    assert total > 1.0
    assert total == pytest.approx(sum(parts), rel=1e-12)
    doubled = mux.model_copy(update={"channels": tuple(
        ch.model_copy(update={"raman_coeff_per_km_nm": 2.0}) for ch in channels)})
    assert raman_click_prob(doubled, link, det) == pytest.approx(2 * total, rel=1e-12)
    assert background_click_prob(det, link, total) == 1.0


def test_counter_propagating_and_off_channels_add_nothing(mux_params):
    mux, link, det = mux_params.mux, mux_params.link, mux_params.detector
    backward = mux.channels[0].model_copy(update={"copropagating": False})
    off = mux.channels[1].model_copy(update={"launch_power_dbm": None})
    assert channel_raman_prob(backward, mux, link, det) == 0.0
    assert channel_raman_prob(off, mux, link, det) == 0.0


def test_link_budget_override(mux_params):
    budget = link_budget(mux_params)
    assert budget.p_raman > 0
    quiet = link_budget(mux_params, p_raman=0.0)
    assert quiet.p_raman == 0.0
    assert quiet.y0 < budget.y0
    assert quiet.eta == budget.eta


# -----------------------------
# Session counts
# -----------------------------
def _check_count_invariants(counts: SessionCounts) -> None:
    assert (counts.errors >= 0).all()
    assert (counts.errors <= counts.detected).all()
    assert (counts.detected <= counts.sent).all()


def test_expected_counts_are_consistent(params):
    counts = expected_session_counts(replace_section(params, "link", length_km=100.0))
    _check_count_invariants(counts)
    total = counts.sent.sum() + counts.discarded
    assert total == params.link.session_pulses
    # detections split by photon number add back up, up to rounding per cell
    np.testing.assert_allclose(counts.truth.sum(axis=1), counts.detected, rtol=1e-6,
                               atol=params.estimation.n_cut + 2)
    assert counts.observed_qber_z == pytest.approx(params.detector.e_misalign, rel=0.1)


def test_expected_counts_with_no_pulses(params):
    counts = expected_session_counts(replace_section(params, "link", session_pulses=0))
    assert counts.sent.sum() == 0
    assert counts.detected.sum() == 0
    assert counts.qber("Z") == 0.0


def test_expected_counts_closed_form(params):
    """Lossless, noiseless channel: the signal gain is 1 - e^-u."""
    p = replace_section(params, "link", length_km=0.0, extra_loss_db=0.0)
    p = replace_section(p, "detector", efficiency=1.0, dark_cps=0.0)
    counts = expected_session_counts(p)
    sent = counts.s("Z", "u")
    assert counts.n("Z", "u") == pytest.approx(sent * (1 - math.exp(-0.5)), abs=1.0)


def test_sampling_is_deterministic(params):
    p = replace_section(params, "link", length_km=100.0, session_pulses=10**9)
    a = sample_session_counts(p, 7)
    b = sample_session_counts(p, 7)
    np.testing.assert_array_equal(a.detected, b.detected)
    np.testing.assert_array_equal(a.errors, b.errors)
    np.testing.assert_array_equal(a.truth, b.truth)
    _check_count_invariants(a)
    assert a.sent.sum() + a.discarded == p.link.session_pulses


def test_sampling_with_nothing_to_detect(params):
    p = replace_section(params, "detector", efficiency=0.0, dark_cps=0.0)
    p = replace_section(p, "link", session_pulses=10**8)
    counts = sample_session_counts(p, 0)
    assert counts.detected.sum() == 0
    assert counts.truth.sum() == 0


def test_sampled_mean_matches_expectation(params):
    p = replace_section(params, "link", length_km=100.0, session_pulses=10**8)
    expected = expected_session_counts(p).n("Z", "u")
    draws = np.array([sample_session_counts(p, s).n("Z", "u") for s in range(100)])
    stderr = draws.std(ddof=1) / math.sqrt(len(draws))
    assert abs(draws.mean() - expected) < 5 * stderr


def test_session_counts_dispatch(params):
    p = replace_section(params, "link", session_pulses=10**8)
    assert session_counts(p, "expectation").detected.sum() > 0
    assert session_counts(p, "stochastic", seed=3).detected.sum() > 0
    with pytest.raises(ValueError):
        session_counts(p, "bogus")


def test_counts_frame(params):
    counts = expected_session_counts(params)
    frame = counts.to_frame()
    assert list(frame.columns) == ["basis", "intensity", "sent", "detected", "errors"]
    assert len(frame) == 6
    assert frame["detected"].sum() == counts.detected.sum()
