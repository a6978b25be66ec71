# src/channel.py
"""
Fiber, detector and Raman-noise model.

Turns a ProtocolParams into detection statistics per basis and intensity, either
as rounded expectation values or as a seeded stochastic session. Both carry the
per-photon-number detections (hidden truth) so the estimation paths can be
checked against what really happened; the estimators themselves never read it.

Noise floor per gate, Bob has two detectors:
    Y0 = 1 - (1 - p_dark)^2 (1 - p_raman)^2
Photon-number yields:
    Y_n = 1 - (1 - Y0)(1 - eta)^n
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from .params import (
    BASES,
    INTENSITY_NAMES,
    DetectorModel,
    LinkModel,
    MuxChannel,
    MuxConfig,
    ProtocolParams,
    detector_for_distance,
    fixed_loss_db,
    photon_number_matrix,
)

log = logging.getLogger(__name__)

H_PLANCK = 6.62607015e-34
C_LIGHT = 299_792_458.0
WAVELENGTH_M = 1550e-9
PHOTON_ENERGY_J = H_PLANCK * C_LIGHT / WAVELENGTH_M
LN10_OVER_10 = math.log(10.0) / 10.0


class NoDetections(ValueError):
    pass


# -----------------------------
# Types
# -----------------------------
@dataclass(frozen=True)
class LinkBudget:
    eta: float
    p_dark: float
    p_raman: float
    y0: float
    attenuation_db: float


@dataclass(frozen=True)
class YieldCurve:
    gains: np.ndarray   # Q_k for (u, v, w)
    errors: np.ndarray  # E_k for (u, v, w)


@dataclass(frozen=True)
class SessionCounts:
    """Sifted tallies; arrays are indexed [basis, intensity] with basis (Z, X)."""

    sent: np.ndarray
    detected: np.ndarray
    errors: np.ndarray
    discarded: int = 0
    # detections by photon number, [basis, n, intensity]; oracle use only
    truth: Optional[np.ndarray] = None

    @staticmethod
    def index(basis: str, intensity: Optional[str] = None):
        b = BASES.index(basis)
        if intensity is None:
            return b
        return b, INTENSITY_NAMES.index(intensity)

    def n(self, basis: str, intensity: str) -> int:
        return int(self.detected[self.index(basis, intensity)])

    def m(self, basis: str, intensity: str) -> int:
        return int(self.errors[self.index(basis, intensity)])

    def s(self, basis: str, intensity: str) -> int:
        return int(self.sent[self.index(basis, intensity)])

    def detected_in(self, basis: str) -> int:
        return int(self.detected[self.index(basis)].sum())

    def errors_in(self, basis: str) -> int:
        return int(self.errors[self.index(basis)].sum())

    @property
    def total_detected_z(self) -> int:
        return self.detected_in("Z")

    @property
    def observed_qber_z(self) -> float:
        return self.qber("Z")

    def qber(self, basis: str, intensity: Optional[str] = None) -> float:
        if intensity is None:
            n, m = self.detected_in(basis), self.errors_in(basis)
        else:
            n, m = self.n(basis, intensity), self.m(basis, intensity)
        return m / n if n > 0 else 0.0

    def true_events(self, basis: str, photons: int, intensity: Optional[str] = None) -> int:
        """Hidden truth: detections caused by `photons`-photon pulses."""
        if self.truth is None:
            raise ValueError("session carries no photon-number truth")
        row = self.truth[self.index(basis), photons]
        if intensity is None:
            return int(row.sum())
        return int(row[INTENSITY_NAMES.index(intensity)])

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for b, basis in enumerate(BASES):
            for k, name in enumerate(INTENSITY_NAMES):
                rows.append({
                    "basis": basis,
                    "intensity": name,
                    "sent": int(self.sent[b, k]),
                    "detected": int(self.detected[b, k]),
                    "errors": int(self.errors[b, k]),
                })
        return pd.DataFrame(rows)


# -----------------------------
# Loss and noise
# -----------------------------
def system_transmittance(link: LinkModel, det: DetectorModel,
                         mux: Optional[MuxConfig] = None) -> float:
    loss_db = link.loss_coeff_db_per_km * link.length_km + link.extra_loss_db
    if mux is not None:
        loss_db += mux.drop_filter_loss_db
    return det.efficiency * 10.0 ** (-loss_db / 10.0)


def attenuation_db(params: ProtocolParams) -> float:
    link = params.link
    return link.loss_coeff_db_per_km * link.length_km + fixed_loss_db(params)


def dbm_to_watts(p_dbm: float) -> float:
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def filter_bandwidth_nm(bandwidth_ghz: float) -> float:
    """Optical width of a filter at 1550 nm."""
    return WAVELENGTH_M ** 2 * bandwidth_ghz * 1e9 / C_LIGHT * 1e9


def receive_power_dbm(ch: MuxChannel, link: LinkModel) -> float:
    if not ch.is_on:
        return -math.inf
    return ch.launch_power_dbm - link.loss_coeff_db_per_km * link.length_km - link.extra_loss_db


def channel_raman_prob(ch: MuxChannel, mux: MuxConfig, link: LinkModel,
                       det: DetectorModel) -> float:
    """Per-gate click probability from one channel's forward Raman scattering."""
    if not ch.is_on:
        return 0.0
    if not ch.copropagating:
        log.debug("channel %r is counter-propagating; backward Raman is not modelled", ch.name)
        return 0.0
    length = link.length_km
    alpha = link.loss_coeff_db_per_km * LN10_OVER_10
    p_ram = (dbm_to_watts(ch.launch_power_dbm) * ch.raman_coeff_per_km_nm
             * filter_bandwidth_nm(mux.filter_bandwidth_ghz) * length * math.exp(-alpha * length))
    p_ram *= 10.0 ** (-(mux.drop_filter_loss_db + link.extra_loss_db) / 10.0)
    return p_ram / PHOTON_ENERGY_J * det.efficiency * det.gate_width_s


def raman_click_prob(mux: Optional[MuxConfig], link: LinkModel, det: DetectorModel) -> float:
    """Summed per-gate Raman term; not clamped, background_click_prob saturates it."""
    if mux is None or not mux.channels:
        return 0.0
    return sum(channel_raman_prob(ch, mux, link, det) for ch in mux.channels)


def background_click_prob(det: DetectorModel, link: LinkModel, p_raman: float) -> float:
    p_dark = det.dark_cps / link.clock_hz
    if p_dark >= 1.0 or p_raman >= 1.0:
        return 1.0
    return -math.expm1(2.0 * math.log1p(-p_dark) + 2.0 * math.log1p(-p_raman))


def link_budget(params: ProtocolParams, p_raman: Optional[float] = None) -> LinkBudget:
    """Transmittance and noise floor at the configured distance.

    `p_raman` overrides the Raman term computed from the mux config.
    """
    det = detector_for_distance(params.detector, params.link.length_km)
    if p_raman is None:
        p_raman = raman_click_prob(params.mux, params.link, det)
    return LinkBudget(
        eta=system_transmittance(params.link, det, params.mux),
        p_dark=det.dark_cps / params.link.clock_hz,
        p_raman=p_raman,
        y0=background_click_prob(det, params.link, p_raman),
        attenuation_db=attenuation_db(params),
    )


# -----------------------------
# Expectation model
# -----------------------------
def expected_gain(mu: float, eta: float, y0: float) -> float:
    return y0 + (1.0 - y0) * -math.expm1(-eta * mu)


def expected_error_rate(mu: float, eta: float, y0: float, e_misalign: float) -> float:
    q = expected_gain(mu, eta, y0)
    if q <= 0:
        raise NoDetections("no detections")
    signal = -math.expm1(-eta * mu) * (1.0 - y0)
    return (0.5 * y0 + e_misalign * signal) / q


def photon_yields(eta: float, y0: float, n_cut: int) -> np.ndarray:
    """Y_n for n = 0..n_cut."""
    ns = np.arange(n_cut + 1)
    if eta >= 1.0:
        lost = np.where(ns == 0, 1.0, 0.0)
    else:
        lost = np.exp(ns * math.log1p(-eta))
    return 1.0 - (1.0 - y0) * lost


def photon_error_yields(eta: float, y0: float, e_misalign: float, n_cut: int) -> np.ndarray:
    """Probability that an n-photon pulse gives an erroneous click."""
    signal = photon_yields(eta, 0.0, n_cut)
    return 0.5 * y0 + e_misalign * signal * (1.0 - y0)


def yield_curve(params: ProtocolParams, budget: Optional[LinkBudget] = None) -> YieldCurve:
    budget = budget or link_budget(params)
    det = detector_for_distance(params.detector, params.link.length_km)
    gains, errors = [], []
    for mu in params.intensities.as_array():
        gains.append(expected_gain(mu, budget.eta, budget.y0))
        try:
            errors.append(expected_error_rate(mu, budget.eta, budget.y0, det.e_misalign))
        except NoDetections:
            errors.append(0.0)
    return YieldCurve(gains=np.array(gains), errors=np.array(errors))


def _sent_fractions(params: ProtocolParams) -> np.ndarray:
    probs = params.probabilities
    sift = np.array([probs.sift(b) for b in BASES])
    return sift[:, None] * probs.as_array()[None, :]


def expected_session_counts(params: ProtocolParams,
                            budget: Optional[LinkBudget] = None) -> SessionCounts:
    budget = budget or link_budget(params)
    n_cut = params.estimation.n_cut
    total = params.link.session_pulses

    sent = np.rint(total * _sent_fractions(params))
    curve = yield_curve(params, budget)
    raw_detected = sent * curve.gains[None, :]
    detected = np.rint(raw_detected)
    errors = np.minimum(np.rint(raw_detected * curve.errors[None, :]), detected)

    pn = photon_number_matrix(params.intensities, n_cut)
    yn = photon_yields(budget.eta, budget.y0, n_cut)
    truth = np.rint(sent[:, None, :] * pn[None, :, :] * yn[None, :, None])

    return SessionCounts(
        sent=sent.astype(np.int64),
        detected=detected.astype(np.int64),
        errors=errors.astype(np.int64),
        discarded=int(total - sent.sum()),
        truth=truth.astype(np.int64),
    )


# -----------------------------
# Stochastic sessions
# -----------------------------
def sample_session_counts(params: ProtocolParams, seed: int | np.random.SeedSequence,
                          budget: Optional[LinkBudget] = None) -> SessionCounts:
    """One simulated session, reproducible from `seed`.

    Pulses are split over (basis, intensity) multinomially, then over photon
    number; clicks and errors are binomial per photon-number group. Pulses above
    n_cut photons are detected with the (n_cut + 1)-photon yield and left out of
    the truth table.
    """
    rng = np.random.default_rng(seed)
    budget = budget or link_budget(params)
    det = detector_for_distance(params.detector, params.link.length_km)
    n_cut = params.estimation.n_cut

    fractions = _sent_fractions(params).ravel()
    categories = np.append(fractions, max(0.0, 1.0 - fractions.sum()))
    alloc = rng.multinomial(params.link.session_pulses, categories)
    sent = alloc[:-1].reshape(len(BASES), len(INTENSITY_NAMES))

    pn = photon_number_matrix(params.intensities, n_cut)
    yn = photon_yields(budget.eta, budget.y0, n_cut + 1)
    en = photon_error_yields(budget.eta, budget.y0, det.e_misalign, n_cut + 1)
    err_given_click = np.divide(en, yn, out=np.zeros_like(en), where=yn > 0)
    err_given_click = np.clip(err_given_click, 0.0, 1.0)

    detected = np.zeros_like(sent)
    errors = np.zeros_like(sent)
    truth = np.zeros((len(BASES), n_cut + 1, len(INTENSITY_NAMES)), dtype=np.int64)
    for k in range(len(INTENSITY_NAMES)):
        split = np.append(pn[:, k], max(0.0, 1.0 - pn[:, k].sum()))
        for b in range(len(BASES)):
            photons = rng.multinomial(sent[b, k], split)
            clicks = rng.binomial(photons, yn)
            wrong = rng.binomial(clicks, err_given_click)
            truth[b, :, k] = clicks[:-1]
            detected[b, k] = clicks.sum()
            errors[b, k] = wrong.sum()

    return SessionCounts(
        sent=sent.astype(np.int64),
        detected=detected.astype(np.int64),
        errors=errors.astype(np.int64),
        discarded=int(alloc[-1]),
        truth=truth,
    )


def session_counts(params: ProtocolParams, mode: str = "expectation", seed: int = 0,
                   budget: Optional[LinkBudget] = None) -> SessionCounts:
    if mode == "expectation":
        return expected_session_counts(params, budget)
    if mode == "stochastic":
        return sample_session_counts(params, seed, budget)
    raise ValueError(f"unknown mode {mode!r}")
