# src/finitekey.py
"""
Finite-size key lengths for efficient decoy-state BB84.

Two variants are evaluated from the same session:

  v1  distils from Z-basis clicks of all three intensities
        S1 = n0_low + n1_low (1 - h(eph_up)) - lambda_ec - D1
        D1 = 6 log2(21/eps_sec) + log2(2/eps_cor)

  v2  distils from Z-basis clicks of the signal intensity u only
        S2 = n0_low + n1_low - n1_up h(eph_up) - lambda_ec - D2
        D2 = 6 log2(46/eps_sec) + log2(2/eps_cor)

Statistical fluctuations use a Hoeffding deviation with eps_sec/21 per term.
The analytic decoy bounds below feed v1; the linear-programming bounds in
src.lp feed v2.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.special import entr

from .channel import SessionCounts
from .params import LinkModel, ProtocolParams, SecurityParams, photon_number_matrix, tau_n

log = logging.getLogger(__name__)

EPS_SPLIT = 21.0
EPS_SPLIT_V2 = 46.0


class EstimationError(RuntimeError):
    """Decoy-state estimation could not produce bounds."""


class InsufficientStatistics(EstimationError):
    pass


@dataclass(frozen=True)
class DecoyBounds:
    n0_low: float
    n1_low: float
    n1_up: float
    eph_up: float
    s_x1_low: float
    v_x1_up: float
    method: str
    # single-photon yield implied by n1_low / n1_up
    y1_low: float = 0.0
    y1_up: float = 0.0

    @classmethod
    def zero(cls, method: str) -> "DecoyBounds":
        return cls(0.0, 0.0, 0.0, 0.5, 0.0, 0.0, method)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# -----------------------------
# Scalar helpers
# -----------------------------
def binary_entropy(x: float) -> float:
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"binary entropy is defined on [0, 1], got {x!r}")
    return float((entr(x) + entr(1.0 - x)) / math.log(2.0))


def hoeffding_delta(n: float, eps: float) -> float:
    if n <= 0 or eps >= 1.0:
        return 0.0
    return math.sqrt(n / 2.0 * math.log(1.0 / eps))


def gamma_correction(a: float, b: float, c: float, d: float) -> float:
    """Random-sampling correction to the phase-error ratio `b`."""
    if b <= 0.0:
        return 0.0
    if b >= 1.0 or c <= 0.0 or d <= 0.0 or a <= 0.0:
        return 0.5
    spread = (c + d) * (1.0 - b) * b
    arg = (c + d) / (c * d * (1.0 - b) * b) * (EPS_SPLIT / a) ** 2
    if arg <= 1.0:
        return 0.5
    return math.sqrt(spread / (c * d * math.log(2.0)) * math.log2(arg))


def lambda_ec(n_z: float, qber_z: float, f_ec: float) -> float:
    return f_ec * n_z * binary_entropy(qber_z)


def delta_v1(sec: SecurityParams) -> float:
    return 6.0 * math.log2(EPS_SPLIT / sec.eps_sec) + math.log2(2.0 / sec.eps_cor)


def delta_v2(sec: SecurityParams) -> float:
    return 6.0 * math.log2(EPS_SPLIT_V2 / sec.eps_sec) + math.log2(2.0 / sec.eps_cor)


def _clamp_phase(x: float) -> float:
    return min(max(x, 0.0), 0.5)


def phase_error_bound(errors_up: float, singles_low: float, key_singles_low: float,
                      eps_sec: float) -> float:
    """Upper bound on the key-basis single-photon phase error rate."""
    if singles_low <= 0:
        return 0.5
    ratio = errors_up / singles_low
    if ratio >= 0.5:
        return 0.5
    return _clamp_phase(ratio + gamma_correction(eps_sec, ratio, singles_low, key_singles_low))


def secure_key_length_v1(bounds: DecoyBounds, lam: float, sec: SecurityParams) -> int:
    single = bounds.n1_low * (1.0 - binary_entropy(bounds.eph_up))
    return math.floor(bounds.n0_low + single - lam - delta_v1(sec))


def secure_key_length_v2(bounds: DecoyBounds, lam: float, sec: SecurityParams) -> int:
    phase = bounds.n1_up * binary_entropy(bounds.eph_up)
    return math.floor(bounds.n0_low + bounds.n1_low - phase - lam - delta_v2(sec))


def key_rate_bps(length: float, link: LinkModel) -> float:
    return max(length, 0) / link.duration_s


# -----------------------------
# Analytic three-intensity bounds
# -----------------------------
def _scaled(counts: np.ndarray, dev: float, mus: np.ndarray, ps: np.ndarray, sign: float) -> np.ndarray:
    return np.exp(mus) / ps * (counts + sign * dev)


def decoy_bounds_analytic(counts: SessionCounts, params: ProtocolParams) -> DecoyBounds:
    """Closed-form vacuum + weak decoy bounds over all intensities of a basis."""
    if counts.detected.sum() == 0:
        return DecoyBounds.zero("analytic")

    mus = params.intensities.as_array()
    ps = params.probabilities.as_array()
    u, v, w = mus
    eps = params.epsilons.eps_sec / EPS_SPLIT
    finite = params.estimation.finite_size
    tau0 = tau_n(0, params.intensities, params.probabilities)
    tau1 = tau_n(1, params.intensities, params.probabilities)

    def deviation(total: float) -> float:
        return hoeffding_delta(total, eps) if finite else 0.0

    def singles(basis: str) -> Tuple[float, float, np.ndarray, np.ndarray]:
        b = SessionCounts.index(basis)
        dev = deviation(counts.detected[b].sum())
        lo = _scaled(counts.detected[b], dev, mus, ps, -1.0)
        hi = _scaled(counts.detected[b], dev, mus, ps, +1.0)
        n0 = max(tau0 * (v * lo[2] - w * hi[1]) / (v - w), 0.0)
        num = lo[1] - hi[2] - (v * v - w * w) / (u * u) * (hi[0] - n0 / tau0)
        n1 = max(tau1 * u * num / (u * (v - w) - v * v + w * w), 0.0)
        return n0, n1, lo, hi

    n0_z, n1_z, lo_z, hi_z = singles("Z")
    _, s_x1, _, _ = singles("X")

    bx = SessionCounts.index("X")
    dev_m = deviation(counts.errors[bx].sum())
    m_lo = _scaled(counts.errors[bx], dev_m, mus, ps, -1.0)
    m_hi = _scaled(counts.errors[bx], dev_m, mus, ps, +1.0)
    v_x1 = max(tau1 * (m_hi[1] - m_lo[2]) / (v - w), 0.0)

    if n1_z <= 0 or s_x1 <= 0:
        raise InsufficientStatistics(
            f"insufficient statistics: n1_low(Z)={n1_z:.4g}, s_x1_low={s_x1:.4g}"
        )

    n1_up = tau1 * (hi_z[1] - lo_z[2]) / (v - w)
    n1_up = min(max(n1_up, n1_z), float(counts.total_detected_z))

    eph = phase_error_bound(v_x1, s_x1, n1_z, params.epsilons.eps_sec)
    singles_sent = tau1 * counts.sent[SessionCounts.index("Z")].sum()
    return DecoyBounds(
        n0_low=n0_z,
        n1_low=n1_z,
        n1_up=n1_up,
        eph_up=eph,
        s_x1_low=s_x1,
        v_x1_up=v_x1,
        method="analytic",
        y1_low=n1_z / singles_sent,
        y1_up=n1_up / singles_sent,
    )


# -----------------------------
# Report
# -----------------------------
@dataclass(frozen=True)
class KeyReport:
    secure_length_v1: int
    secure_length_v2: int
    rate_v1_bps: float
    rate_v2_bps: float
    lambda_ec_v1: float
    lambda_ec_v2: float
    delta_v1: float
    delta_v2: float
    bounds_v1: DecoyBounds
    bounds_v2: DecoyBounds
    qber_z: float
    detected_z: int
    attenuation_db: float
    inputs: Dict[str, Any] = field(default_factory=dict)
    failures: Tuple[str, ...] = ()

    def rate(self, variant: str) -> float:
        return self.rate_v1_bps if variant == "v1" else self.rate_v2_bps

    def estimated(self, variant: str) -> bool:
        """False when that variant's decoy estimation failed and its bounds are placeholders."""
        return not any(msg.startswith(f"{variant}:") for msg in self.failures)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["failures"] = list(self.failures)
        return out


def build_key_report(counts: SessionCounts, params: ProtocolParams,
                     bounds_v1: Optional[DecoyBounds], bounds_v2: Optional[DecoyBounds],
                     attenuation_db: float, failures: Tuple[str, ...] = ()) -> KeyReport:
    """Assemble both key lengths from already-estimated bounds.

    A missing bounds object stands for a failed estimation and yields zero key.
    """
    sec = params.epsilons
    lam_v1 = lambda_ec(counts.total_detected_z, min(counts.qber("Z"), 0.5), sec.f_ec)
    lam_v2 = lambda_ec(counts.n("Z", "u"), min(counts.qber("Z", "u"), 0.5), sec.f_ec)
    b1 = bounds_v1 or DecoyBounds.zero("analytic")
    b2 = bounds_v2 or DecoyBounds.zero("lp")
    len_v1 = secure_key_length_v1(b1, lam_v1, sec) if bounds_v1 else 0
    len_v2 = secure_key_length_v2(b2, lam_v2, sec) if bounds_v2 else 0
    return KeyReport(
        secure_length_v1=len_v1,
        secure_length_v2=len_v2,
        rate_v1_bps=key_rate_bps(len_v1, params.link),
        rate_v2_bps=key_rate_bps(len_v2, params.link),
        lambda_ec_v1=lam_v1,
        lambda_ec_v2=lam_v2,
        delta_v1=delta_v1(sec),
        delta_v2=delta_v2(sec),
        bounds_v1=b1,
        bounds_v2=b2,
        qber_z=counts.observed_qber_z,
        detected_z=counts.total_detected_z,
        attenuation_db=attenuation_db,
        inputs=params.model_dump(mode="json"),
        failures=tuple(failures),
    )


def single_photon_sent(counts: SessionCounts, params: ProtocolParams, basis: str) -> float:
    """Expected number of single-photon pulses among those sent in `basis`."""
    p1 = photon_number_matrix(params.intensities, 1)[1]
    return float(counts.sent[SessionCounts.index(basis)] @ p1)
