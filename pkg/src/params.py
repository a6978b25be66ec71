# src/params.py
"""
Protocol and physics configuration for the decoy-state BB84 link model.

Every section is an immutable pydantic model. Unknown keys are rejected when a
config is parsed; physical invariants (intensity ordering, probability sums,
ranges) are checked separately by validate(), which reports every violation at
once instead of stopping at the first one:

    params = load_config("link.json", overrides=["link.length_km=150"])

Defaults describe the 240 km dark-fibre deployment:

    intensities     u=0.5, v=0.11, w=0.0007 photons/pulse
    probabilities   p_u=0.5, p_v=p_w=0.25, unbiased basis choice (0.5 at both ends)
    epsilons        eps_sec=1e-10, eps_cor=1e-15, f_ec=1.16
    link            0.18 dB/km, 1.2 dB extra loss, 1 GHz clock, 7e12 pulses
    detector        10% efficiency, 10 cps at -60 C, 3.25% misalignment

This module also holds the photon-number statistics shared by the channel
simulator and both estimation paths.
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from scipy.special import gammaln
from scipy.stats import poisson

log = logging.getLogger(__name__)

INTENSITY_NAMES: Tuple[str, str, str] = ("u", "v", "w")
BASES: Tuple[str, str] = ("Z", "X")

_SUM_TOL = 1e-9


class ConfigError(ValueError):
    """Configuration could not be read, parsed or validated."""

    def __init__(self, problems: Sequence[str]):
        self.problems: List[str] = list(problems)
        super().__init__("; ".join(self.problems) or "invalid configuration")


# -----------------------------
# Config sections
# -----------------------------
class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class IntensitySet(_Section):
    u: float = 0.5
    v: float = 0.11
    w: float = 0.0007

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v, self.w], dtype=float)


class SelectionProbs(_Section):
    p_u: float = 0.5
    p_v: float = 0.25
    p_w: float = 0.25
    qz_alice: float = 0.5
    qz_bob: float = 0.5

    def as_array(self) -> np.ndarray:
        return np.array([self.p_u, self.p_v, self.p_w], dtype=float)

    def sift(self, basis: str) -> float:
        """Probability that both ends pick `basis`."""
        if basis == "Z":
            return self.qz_alice * self.qz_bob
        if basis == "X":
            return (1.0 - self.qz_alice) * (1.0 - self.qz_bob)
        raise ValueError(f"unknown basis {basis!r}")


class SecurityParams(_Section):
    eps_sec: float = 1e-10
    eps_cor: float = 1e-15
    f_ec: float = 1.16


class LinkModel(_Section):
    length_km: float = 240.0
    loss_coeff_db_per_km: float = 0.18
    extra_loss_db: float = 1.2
    clock_hz: float = 1e9
    session_pulses: int = 7_000_000_000_000

    @property
    def duration_s(self) -> float:
        return self.session_pulses / self.clock_hz


class DetectorModel(_Section):
    efficiency: float = 0.1
    dark_cps: float = 10.0
    e_misalign: float = 0.0325
    gate_width_s: float = 100e-12
    temperature_c: float = -60.0
    ref_dark_cps: float = 10.0
    ref_temperature_c: float = -60.0
    # (length_km, temperature_c), ascending in length
    temperature_schedule: Tuple[Tuple[float, float], ...] = ()

    def at_temperature(self, t_c: float) -> "DetectorModel":
        return self.model_copy(
            update={"temperature_c": t_c, "dark_cps": dark_rate_at_temperature(self, t_c)}
        )


class MuxChannel(_Section):
    name: str = ""
    role: Literal["clock", "data"] = "data"
    launch_power_dbm: Optional[float] = None  # None: channel off
    raman_coeff_per_km_nm: float = 2.15e-9
    copropagating: bool = True

    @property
    def is_on(self) -> bool:
        p = self.launch_power_dbm
        return p is not None and not (math.isinf(p) and p < 0)


class MuxConfig(_Section):
    channels: Tuple[MuxChannel, ...] = ()
    filter_bandwidth_ghz: float = 25.0
    drop_filter_loss_db: float = 3.0
    amp_noise_figure_db: float = 3.3  # recorded only

    def data_channels(self) -> List[int]:
        return [i for i, ch in enumerate(self.channels) if ch.role == "data"]


class EstimationSettings(_Section):
    n_cut: int = 9
    finite_size: bool = True


class ProtocolParams(_Section):
    intensities: IntensitySet = Field(default_factory=IntensitySet)
    probabilities: SelectionProbs = Field(default_factory=SelectionProbs)
    epsilons: SecurityParams = Field(default_factory=SecurityParams)
    link: LinkModel = Field(default_factory=LinkModel)
    detector: DetectorModel = Field(default_factory=DetectorModel)
    mux: Optional[MuxConfig] = None
    estimation: EstimationSettings = Field(default_factory=EstimationSettings)


def replace_section(params: ProtocolParams, section: str, **fields: Any) -> ProtocolParams:
    """Copy of `params` with some fields of one section replaced."""
    current = getattr(params, section)
    return params.model_copy(update={section: current.model_copy(update=fields)})


# -----------------------------
# Validation
# -----------------------------
def _problem(path: str, message: str, observed: Any) -> str:
    return f"{path}: {message} (observed={observed!r})"


def _check_range(problems: List[str], path: str, value: float, lo: float, hi: float,
                 lo_open: bool = False, hi_open: bool = False) -> None:
    ok_lo = value > lo if lo_open else value >= lo
    ok_hi = value < hi if hi_open else value <= hi
    if not (ok_lo and ok_hi):
        left = "(" if lo_open else "["
        right = ")" if hi_open else "]"
        problems.append(_problem(path, f"must lie in {left}{lo}, {hi}{right}", value))


def validate(params: ProtocolParams) -> List[str]:
    """Return every violated invariant; an empty list means the config is usable."""
    problems: List[str] = []

    it = params.intensities
    if not (it.u > it.v > it.w >= 0):
        problems.append(_problem("intensities", "ordering u > v > w >= 0 violated",
                                 {"u": it.u, "v": it.v, "w": it.w}))
    if not (it.v + it.w < it.u):
        problems.append(_problem("intensities", "decoy denominator constraint v + w < u violated",
                                 {"v+w": it.v + it.w, "u": it.u}))

    pr = params.probabilities
    for name in ("p_u", "p_v", "p_w"):
        value = getattr(pr, name)
        if not value > 0:
            problems.append(_problem(f"probabilities.{name}", "must be strictly positive", value))
    total = pr.p_u + pr.p_v + pr.p_w
    if not abs(total - 1.0) <= _SUM_TOL:
        problems.append(_problem("probabilities", "probabilities must sum to 1", total))
    _check_range(problems, "probabilities.qz_alice", pr.qz_alice, 0.0, 1.0, True, True)
    _check_range(problems, "probabilities.qz_bob", pr.qz_bob, 0.0, 1.0, True, True)

    sec = params.epsilons
    _check_range(problems, "epsilons.eps_sec", sec.eps_sec, 0.0, 1.0, True, True)
    _check_range(problems, "epsilons.eps_cor", sec.eps_cor, 0.0, 1.0, True, True)
    if not sec.f_ec >= 1.0:
        problems.append(_problem("epsilons.f_ec", "must be >= 1", sec.f_ec))

    link = params.link
    for name in ("length_km", "loss_coeff_db_per_km", "extra_loss_db"):
        value = getattr(link, name)
        if not (value >= 0 and math.isfinite(value)):
            problems.append(_problem(f"link.{name}", "must be finite and >= 0", value))
    if not (link.clock_hz > 0 and math.isfinite(link.clock_hz)):
        problems.append(_problem("link.clock_hz", "must be > 0", link.clock_hz))
    if not link.session_pulses >= 1:
        problems.append(_problem("link.session_pulses", "must be >= 1", link.session_pulses))

    det = params.detector
    _check_range(problems, "detector.efficiency", det.efficiency, 0.0, 1.0)
    _check_range(problems, "detector.e_misalign", det.e_misalign, 0.0, 0.5)
    for name in ("dark_cps", "gate_width_s", "ref_dark_cps"):
        value = getattr(det, name)
        if not (value >= 0 and math.isfinite(value)):
            problems.append(_problem(f"detector.{name}", "must be finite and >= 0", value))
    lengths = [entry[0] for entry in det.temperature_schedule]
    if any(x < 0 for x in lengths) or lengths != sorted(lengths):
        problems.append(_problem("detector.temperature_schedule",
                                 "lengths must be >= 0 and ascending", lengths))

    if params.mux is not None:
        mux = params.mux
        if not mux.filter_bandwidth_ghz > 0:
            problems.append(_problem("mux.filter_bandwidth_ghz", "must be > 0",
                                     mux.filter_bandwidth_ghz))
        for name in ("drop_filter_loss_db", "amp_noise_figure_db"):
            value = getattr(mux, name)
            if not value >= 0:
                problems.append(_problem(f"mux.{name}", "must be >= 0", value))
        for i, ch in enumerate(mux.channels):
            if not ch.raman_coeff_per_km_nm >= 0:
                problems.append(_problem(f"mux.channels[{i}].raman_coeff_per_km_nm",
                                         "must be >= 0", ch.raman_coeff_per_km_nm))
            p = ch.launch_power_dbm
            if p is not None and (math.isnan(p) or p == math.inf):
                problems.append(_problem(f"mux.channels[{i}].launch_power_dbm",
                                         "must be a number or null", p))

    if not params.estimation.n_cut >= 1:
        problems.append(_problem("estimation.n_cut", "must be >= 1", params.estimation.n_cut))

    return problems


def ensure_valid(params: ProtocolParams) -> ProtocolParams:
    problems = validate(params)
    if problems:
        raise ConfigError(problems)
    return params


# -----------------------------
# Loading + overrides
# -----------------------------
def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Apply `section.field=value` overrides to a raw config mapping (returns a copy)."""
    out = json.loads(json.dumps(raw))
    problems: List[str] = []
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            problems.append(_problem("--override", "expected key.path=value", item))
            continue
        parts = key.strip().split(".")
        node = out
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            if not isinstance(child, dict):
                problems.append(_problem(key, "path does not name a section", item))
                break
            node = child
        else:
            node[parts[-1]] = _parse_value(value)
    if problems:
        raise ConfigError(problems)
    return out


def _pydantic_problems(exc: ValidationError) -> List[str]:
    problems = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err.get("loc", ())) or "<root>"
        problems.append(_problem(path, err.get("msg", "invalid"), err.get("input")))
    return problems


def parse_config(raw: Dict[str, Any]) -> ProtocolParams:
    try:
        params = ProtocolParams.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_pydantic_problems(exc)) from exc
    return ensure_valid(params)


def load_config(path: Optional[str | Path] = None, overrides: Iterable[str] = ()) -> ProtocolParams:
    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except OSError as exc:
            raise ConfigError([_problem(str(path), "cannot read config", str(exc))]) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError([_problem(str(path), "not valid JSON", str(exc))]) from exc
        if not isinstance(raw, dict):
            raise ConfigError([_problem(str(path), "top level must be an object", type(raw).__name__)])
    params = parse_config(apply_overrides(raw, overrides))
    log.debug("loaded config from %s", path or "<defaults>")
    return params


def dump_config(params: ProtocolParams) -> Dict[str, Any]:
    return params.model_dump(mode="json")


# -----------------------------
# Photon-number statistics
# -----------------------------
def poisson_pn(n: int, mu: float) -> float:
    """P(n photons | mean mu), evaluated in log space."""
    if mu == 0:
        return 1.0 if n == 0 else 0.0
    return math.exp(-mu + n * math.log(mu) - gammaln(n + 1))


def photon_number_matrix(intensities: IntensitySet, n_cut: int) -> np.ndarray:
    """P(n | k) for n = 0..n_cut (rows) and k in (u, v, w) (columns)."""
    ns = np.arange(n_cut + 1)
    return np.stack([poisson.pmf(ns, mu) for mu in intensities.as_array()], axis=1)


def poisson_tail(intensities: IntensitySet, n_cut: int) -> np.ndarray:
    """Mass beyond n_cut photons, per intensity."""
    return np.array([poisson.sf(n_cut, mu) for mu in intensities.as_array()])


def tau_n(n: int, intensities: IntensitySet, probs: SelectionProbs) -> float:
    mus = intensities.as_array()
    ps = probs.as_array()
    return float(sum(p * poisson_pn(n, mu) for p, mu in zip(ps, mus)))


# -----------------------------
# Detector temperature law
# -----------------------------
def dark_rate_at_temperature(det: DetectorModel, t_c: float) -> float:
    """Dark count rate doubles every 10 C above the calibration anchor."""
    return det.ref_dark_cps * math.pow(2.0, (t_c - det.ref_temperature_c) / 10.0)


def detector_for_distance(det: DetectorModel, length_km: float) -> DetectorModel:
    schedule = det.temperature_schedule
    if not schedule:
        return det
    chosen = None
    for km, t_c in schedule:
        if km <= length_km:
            chosen = t_c
    if chosen is None:
        return det
    return det.at_temperature(chosen)


def fixed_loss_db(params: ProtocolParams) -> float:
    """Quantum-path loss that does not scale with length."""
    drop = params.mux.drop_filter_loss_db if params.mux is not None else 0.0
    return params.link.extra_loss_db + drop


def link_at_attenuation(params: ProtocolParams, attenuation_db: float) -> ProtocolParams:
    """Set the fiber length so the total quantum-path loss equals `attenuation_db`."""
    fixed = fixed_loss_db(params)
    coeff = params.link.loss_coeff_db_per_km
    if attenuation_db < fixed - 1e-12:
        raise ValueError(f"attenuation {attenuation_db} dB is below the fixed losses ({fixed} dB)")
    if coeff <= 0:
        raise ValueError("loss coefficient must be positive to place a link at a given attenuation")
    return replace_section(params, "link", length_km=max(attenuation_db - fixed, 0.0) / coeff)
