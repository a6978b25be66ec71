# src/optimize.py
"""
Sweeps, parameter optimisation and calibration.

Every point goes through evaluate_point(): session counts, analytic bounds for
v1, LP bounds for v2, then both key lengths. A failed estimation becomes a
zero-rate point with the reason kept in KeyReport.failures.

Sweeps may run in a process pool; results always come back ordered by the
independent variable. Stochastic sweeps derive one seed per point from the
run seed, so a sweep is reproducible regardless of the worker count.
"""

from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .channel import (
    LinkBudget,
    channel_raman_prob,
    link_budget,
    raman_click_prob,
    session_counts,
)
from .finitekey import EstimationError, KeyReport, build_key_report, decoy_bounds_analytic
from .lp import decoy_bounds_lp
from .params import (
    ProtocolParams,
    detector_for_distance,
    link_at_attenuation,
    replace_section,
    validate,
)

log = logging.getLogger(__name__)

VARIANTS = ("v1", "v2")
COORDINATES = ("u", "v", "p_u", "p_v", "qz")

INV_PHI = (math.sqrt(5) - 1) / 2
INV_PHI_SQ = (3 - math.sqrt(5)) / 2


class EmptyBoxError(ValueError):
    pass


# ------------------------------
# Single point
# ------------------------------
def evaluate_point(params: ProtocolParams, mode: str = "expectation", seed: int = 0,
                   budget: Optional[LinkBudget] = None) -> KeyReport:
    budget = budget or link_budget(params)
    counts = session_counts(params, mode, seed, budget)
    failures = []
    try:
        bounds_v1 = decoy_bounds_analytic(counts, params)
    except EstimationError as exc:
        bounds_v1 = None
        failures.append(f"v1: {exc}")
    try:
        bounds_v2 = decoy_bounds_lp(counts, params)
    except EstimationError as exc:
        bounds_v2 = None
        failures.append(f"v2: {exc}")
    for msg in failures:
        log.warning("zero key at %.2f dB: %s", budget.attenuation_db, msg)
    return build_key_report(counts, params, bounds_v1, bounds_v2, budget.attenuation_db,
                            tuple(failures))


def point_key(params: ProtocolParams, mode: str, seed: int) -> str:
    """Stable cache key for one evaluation."""
    blob = f"{params.model_dump_json()}|{mode}|{seed}"
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class SweepPoint:
    x: float
    unit: str
    rate_v1_bps: float
    rate_v2_bps: float
    qber: float
    attenuation_db: float
    report: Optional[KeyReport] = None

    @classmethod
    def from_report(cls, x: float, unit: str, report: KeyReport) -> "SweepPoint":
        return cls(x, unit, report.rate_v1_bps, report.rate_v2_bps, report.qber_z,
                   report.attenuation_db, report)

    def rate(self, variant: str) -> float:
        return self.rate_v1_bps if variant == "v1" else self.rate_v2_bps


# ------------------------------
# Sweeps
# ------------------------------
def grid(start: float, stop: float, step: float) -> List[float]:
    """Inclusive arithmetic grid; empty when start > stop."""
    if step <= 0:
        raise ValueError("step must be > 0")
    if start > stop:
        return []
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 10) for i in range(n)]


def _point_seeds(seed: int, n: int) -> List[int]:
    if n == 0:
        return []
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def _evaluate_task(args: Tuple[ProtocolParams, str, int]) -> KeyReport:
    params, mode, seed = args
    return evaluate_point(params, mode, seed)


def evaluate_many(items: Sequence[ProtocolParams], mode: str = "expectation", seed: int = 0,
                  workers: int = 1, cache=None) -> List[KeyReport]:
    seeds = _point_seeds(seed, len(items)) if mode == "stochastic" else [seed] * len(items)
    keys = [point_key(p, mode, s) for p, s in zip(items, seeds)]
    reports: Dict[int, KeyReport] = {}
    todo = []
    for i, key in enumerate(keys):
        hit = cache.get(key) if cache is not None else None
        if hit is not None:
            reports[i] = hit
        else:
            todo.append(i)

    tasks = [(items[i], mode, seeds[i]) for i in todo]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate_task, tasks))
    else:
        results = [_evaluate_task(t) for t in tasks]
    for i, report in zip(todo, results):
        reports[i] = report
        if cache is not None:
            cache.set(keys[i], report)
    return [reports[i] for i in range(len(items))]


def _sweep(items: Sequence[ProtocolParams], xs: Sequence[float], unit: str, mode: str,
           seed: int, workers: int, cache) -> List[SweepPoint]:
    log.info("sweeping %d points (%s, mode=%s)", len(xs), unit, mode)
    reports = evaluate_many(items, mode, seed, workers, cache)
    points = [SweepPoint.from_report(x, unit, r) for x, r in zip(xs, reports)]
    for p in points:
        log.debug("%s=%g: v1=%.4g bps v2=%.4g bps qber=%.4f", unit, p.x, p.rate_v1_bps,
                  p.rate_v2_bps, p.qber)
    return points


def sweep_distance(params: ProtocolParams, from_km: float, to_km: float, step_km: float,
                   mode: str = "expectation", seed: int = 0, workers: int = 1,
                   cache=None) -> List[SweepPoint]:
    xs = grid(from_km, to_km, step_km)
    items = [replace_section(params, "link", length_km=x) for x in xs]
    return _sweep(items, xs, "km", mode, seed, workers, cache)


def sweep_attenuation(params: ProtocolParams, from_db: float, to_db: float, step_db: float,
                      mode: str = "expectation", seed: int = 0, workers: int = 1,
                      cache=None) -> List[SweepPoint]:
    xs = grid(from_db, to_db, step_db)
    items = [link_at_attenuation(params, x) for x in xs]
    return _sweep(items, xs, "dB", mode, seed, workers, cache)


def data_channel_index(params: ProtocolParams) -> int:
    if params.mux is None:
        raise ValueError("receive-power sweeps need a mux section")
    data = params.mux.data_channels()
    if len(data) != 1:
        raise ValueError(f"expected exactly one data channel, found {len(data)}")
    return data[0]


def with_data_receive_power(params: ProtocolParams, power_dbm: Optional[float]) -> ProtocolParams:
    """Set the data channel's launch power so it arrives at `power_dbm` (None: off)."""
    idx = data_channel_index(params)
    link = params.link
    launch = None
    if power_dbm is not None:
        launch = power_dbm + link.loss_coeff_db_per_km * link.length_km + link.extra_loss_db
    channels = list(params.mux.channels)
    channels[idx] = channels[idx].model_copy(update={"launch_power_dbm": launch})
    return params.model_copy(update={"mux": params.mux.model_copy(update={"channels": tuple(channels)})})


def sweep_receive_power(params: ProtocolParams, link_km: float, power_from_dbm: float,
                        power_to_dbm: float, step_db: float, mode: str = "expectation",
                        seed: int = 0, workers: int = 1, cache=None) -> List[SweepPoint]:
    base = replace_section(params, "link", length_km=link_km)
    data_channel_index(base)
    xs = grid(power_from_dbm, power_to_dbm, step_db)
    items = [with_data_receive_power(base, x) for x in xs]
    return _sweep(items, xs, "dBm", mode, seed, workers, cache)


def attenuation_extrapolation(anchor: SweepPoint, attenuation_db: Sequence[float],
                              variant: str = "v2") -> List[SweepPoint]:
    """Rates scaled by fiber attenuation alone, starting from a simulated anchor."""
    if anchor.rate(variant) <= 0:
        raise ValueError("extrapolation needs an anchor with a positive rate")
    points = []
    for a in sorted(attenuation_db):
        factor = 10.0 ** (-(a - anchor.attenuation_db) / 10.0)
        points.append(SweepPoint(a, "dB", anchor.rate_v1_bps * factor,
                                 anchor.rate_v2_bps * factor, anchor.qber, a))
    return points


# ------------------------------
# Optimisation
# ------------------------------
@dataclass(frozen=True)
class SearchBox:
    u: Tuple[float, float] = (0.2, 0.9)
    v: Tuple[float, float] = (0.02, 0.3)
    p_u: Tuple[float, float] = (0.2, 0.9)
    p_v: Tuple[float, float] = (0.05, 0.6)
    qz: Tuple[float, float] = (0.5, 0.99)

    @classmethod
    def singleton(cls, params: ProtocolParams) -> "SearchBox":
        point = _point_of(params)
        return cls(**{name: (point[name], point[name]) for name in COORDINATES})

    def bounds(self, name: str) -> Tuple[float, float]:
        return getattr(self, name)

    def check(self) -> None:
        for name in COORDINATES:
            lo, hi = self.bounds(name)
            if not lo <= hi:
                raise EmptyBoxError(f"empty feasible box: {name} range [{lo}, {hi}]")

    def clip(self, point: Dict[str, float]) -> Dict[str, float]:
        return {n: min(max(point[n], self.bounds(n)[0]), self.bounds(n)[1]) for n in COORDINATES}

    def sample(self, rng: np.random.Generator) -> Dict[str, float]:
        return {n: float(rng.uniform(*self.bounds(n))) for n in COORDINATES}


@dataclass(frozen=True)
class OptimizationResult:
    params: ProtocolParams
    report: KeyReport
    objective: str
    start_rate: float
    evaluations: int
    history: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def rate(self) -> float:
        return self.report.rate(self.objective)


def _point_of(params: ProtocolParams) -> Dict[str, float]:
    return {
        "u": params.intensities.u,
        "v": params.intensities.v,
        "p_u": params.probabilities.p_u,
        "p_v": params.probabilities.p_v,
        "qz": params.probabilities.qz_alice,
    }


def apply_point(params: ProtocolParams, point: Dict[str, float]) -> ProtocolParams:
    p_w = 1.0 - point["p_u"] - point["p_v"]
    out = replace_section(params, "intensities", u=point["u"], v=point["v"])
    return replace_section(out, "probabilities", p_u=point["p_u"], p_v=point["p_v"], p_w=p_w,
                           qz_alice=point["qz"], qz_bob=point["qz"])


def golden_section_max(fn: Callable[[float], float], a: float, b: float, tol: float) -> float:
    """Maximiser of a unimodal function on [a, b]."""
    dist = b - a
    if dist <= tol:
        return (a + b) / 2
    n = int(math.ceil(math.log(tol / dist) / math.log(INV_PHI)))
    c = a + INV_PHI_SQ * dist
    d = a + INV_PHI * dist
    yc, yd = fn(c), fn(d)
    for _ in range(n - 1):
        if yc > yd:
            b, d, yd = d, c, yc
            dist *= INV_PHI
            c = a + INV_PHI_SQ * dist
            yc = fn(c)
        else:
            a, c, yc = c, d, yd
            dist *= INV_PHI
            d = a + INV_PHI * dist
            yd = fn(d)
    return (a + d) / 2 if yc > yd else (c + b) / 2


class _Objective:
    """Memoised rate over the search coordinates; infeasible points score -1."""

    def __init__(self, params: ProtocolParams, objective: str, cache=None):
        self.params = params
        self.objective = objective
        self.cache = cache
        self.memo: Dict[Tuple[float, ...], float] = {}

    def __call__(self, point: Dict[str, float]) -> float:
        key = tuple(round(point[n], 12) for n in COORDINATES)
        if key in self.memo:
            return self.memo[key]
        candidate = apply_point(self.params, point)
        if validate(candidate):
            score = -1.0
        else:
            score = evaluate_many([candidate], cache=self.cache)[0].rate(self.objective)
        self.memo[key] = score
        return score


def _starting_points(params: ProtocolParams, box: SearchBox,
                     seeds: Sequence[int]) -> List[Dict[str, float]]:
    starts = []
    configured = box.clip(_point_of(params))
    if not validate(apply_point(params, configured)):
        starts.append(configured)
    # the configured point takes the first seed's slot
    remaining = seeds[1:] if starts else seeds
    for seed in remaining:
        rng = np.random.default_rng(seed)
        for _ in range(1000):
            point = box.sample(rng)
            if not validate(apply_point(params, point)):
                starts.append(point)
                break
    if not starts:
        raise EmptyBoxError("empty feasible box: no point satisfies the parameter invariants")
    return starts


def _coordinate_descent(start: Dict[str, float], box: SearchBox, score: _Objective,
                        max_passes: int, rel_tol: float) -> Tuple[Dict[str, float], float]:
    current = dict(start)
    best = score(current)
    for _ in range(max_passes):
        before = best
        for name in COORDINATES:
            lo, hi = box.bounds(name)
            if hi <= lo:
                continue

            def along(x: float, name=name) -> float:
                return score({**current, name: x})

            x = golden_section_max(along, lo, hi, max(1e-4, 1e-3 * (hi - lo)))
            value = along(x)
            if value > best:
                current[name] = x
                best = value
        if best - before <= rel_tol * max(before, 0.0):
            break
    return current, best


def optimize_params(params: ProtocolParams, box: Optional[SearchBox] = None,
                    objective: str = "v2", seeds: Sequence[int] = (0, 1, 2),
                    max_passes: int = 50, rel_tol: float = 1e-3,
                    cache=None) -> OptimizationResult:
    """Coordinate descent with golden-section line searches, one run per start."""
    if objective not in VARIANTS:
        raise ValueError(f"objective must be one of {VARIANTS}")
    box = box or SearchBox()
    box.check()
    score = _Objective(params, objective, cache)
    start_rate = evaluate_point(params).rate(objective)

    best_point, best_rate, history = None, -math.inf, []
    for start in _starting_points(params, box, seeds):
        point, rate = _coordinate_descent(start, box, score, max_passes, rel_tol)
        history.append(rate)
        if rate > best_rate:
            best_point, best_rate = point, rate

    best_params = apply_point(params, best_point)
    report = evaluate_point(best_params)
    log.info("optimised %s rate %.4g -> %.4g bps after %d evaluations",
             objective, start_rate, report.rate(objective), len(score.memo))
    return OptimizationResult(best_params, report, objective, start_rate, len(score.memo),
                              tuple(history))


# ------------------------------
# Calibration
# ------------------------------
def _rate_with_raman(params: ProtocolParams, p_raman: float, variant: str) -> float:
    return evaluate_point(params, budget=link_budget(params, p_raman=p_raman)).rate(variant)


def critical_raman_prob(params: ProtocolParams, variant: str = "v2",
                        rel_tol: float = 1e-3) -> float:
    """Largest per-gate Raman probability that still leaves a positive rate."""
    lo, hi = 1e-12, 0.1
    if _rate_with_raman(params, lo, variant) <= 0:
        return 0.0
    if _rate_with_raman(params, hi, variant) > 0:
        return hi
    while hi / lo > 1.0 + rel_tol:
        mid = math.sqrt(lo * hi)
        if _rate_with_raman(params, mid, variant) > 0:
            lo = mid
        else:
            hi = mid
    return lo


def _data_raman_split(params: ProtocolParams) -> Tuple[float, float]:
    """(noise from non-data channels, data-channel noise per mW received)."""
    idx = data_channel_index(params)
    det = detector_for_distance(params.detector, params.link.length_km)
    unit = with_data_receive_power(params, 0.0)
    per_mw = channel_raman_prob(unit.mux.channels[idx], unit.mux, unit.link, det)
    others = sum(channel_raman_prob(ch, params.mux, params.link, det)
                 for i, ch in enumerate(params.mux.channels) if i != idx)
    return others, per_mw


def receive_power_threshold(params: ProtocolParams, variant: str = "v2") -> float:
    """Data-channel receive power (dBm) at which the rate drops to zero."""
    p_star = critical_raman_prob(params, variant)
    others, per_mw = _data_raman_split(params)
    if per_mw <= 0:
        return math.inf
    if p_star <= others:
        return -math.inf
    return 10.0 * math.log10((p_star - others) / per_mw)


def with_raman_coeff(params: ProtocolParams, rho: float) -> ProtocolParams:
    if params.mux is None:
        raise ValueError("no mux section to calibrate")
    channels = tuple(ch.model_copy(update={"raman_coeff_per_km_nm": rho}) for ch in params.mux.channels)
    return params.model_copy(update={"mux": params.mux.model_copy(update={"channels": channels})})


def calibrate_raman(params: ProtocolParams, link_km: float = 100.0, threshold_dbm: float = -23.0,
                    variant: str = "v2") -> ProtocolParams:
    """Fit one Raman coefficient so the zero-rate threshold at `link_km` is `threshold_dbm`."""
    anchor = with_raman_coeff(replace_section(params, "link", length_km=link_km), 1.0)
    p_star = critical_raman_prob(anchor, variant)
    if p_star <= 0:
        raise ValueError(f"no positive {variant} rate at {link_km} km even without Raman noise")
    at_threshold = with_data_receive_power(anchor, threshold_dbm)
    det = detector_for_distance(anchor.detector, link_km)
    p_unit = raman_click_prob(at_threshold.mux, at_threshold.link, det)
    if p_unit <= 0:
        raise ValueError("no co-propagating channel carries power; nothing to calibrate")
    rho = p_star / p_unit
    log.info("Raman coefficient calibrated to %.4g /(km nm) at %g km, %g dBm", rho, link_km,
             threshold_dbm)
    return with_raman_coeff(params, rho)


def calibrate_misalignment(params: ProtocolParams, target_bps: float, variant: str = "v2",
                           tol: float = 1e-5) -> ProtocolParams:
    """Intrinsic error probability at which the configured link delivers `target_bps`."""
    def rate(e: float) -> float:
        return evaluate_point(replace_section(params, "detector", e_misalign=e)).rate(variant)

    lo, hi = 0.0, 0.5
    if rate(lo) < target_bps:
        raise ValueError(f"{target_bps} bps is out of reach even without misalignment")
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if rate(mid) >= target_bps:
            lo = mid
        else:
            hi = mid
    log.info("misalignment calibrated to %.5f for %g bps", lo, target_bps)
    return replace_section(params, "detector", e_misalign=lo)
