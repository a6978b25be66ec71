# src/selftest.py
"""
Oracle suites behind `app.py selftest`.

  lp      random bounded programs, simplex against brute-force vertex enumeration
  bounds  seeded stochastic sessions at 30 dB; the hidden single-photon count
          must sit between n1_low and n1_up for both estimation paths
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .channel import link_budget, sample_session_counts
from .finitekey import EstimationError, decoy_bounds_analytic
from .lp import decoy_bounds_lp, lp_solve, random_lp, vertex_enumeration
from .params import ProtocolParams, link_at_attenuation

log = logging.getLogger(__name__)

OBJECTIVE_TOL = 1e-6


@dataclass
class SuiteResult:
    name: str
    total: int = 0
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> int:
        return self.total - len(self.failures)

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        return f"{self.name}: {self.passed}/{self.total} passed"


def run_lp_suite(cases: int = 200, seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    result = SuiteResult("lp")
    for i in range(cases):
        lp = random_lp(rng, int(rng.integers(1, 5)), int(rng.integers(1, 7)))
        got = lp_solve(lp)
        want = vertex_enumeration(lp)
        result.total += 1
        if got.status != want.status:
            result.failures.append(f"case {i}: status {got.status} != oracle {want.status}")
        elif got.optimal and abs(got.objective - want.objective) > OBJECTIVE_TOL * max(1.0, abs(want.objective)):
            result.failures.append(
                f"case {i}: objective {got.objective:.9g} != oracle {want.objective:.9g}"
            )
    return result


def run_bounds_suite(runs: int = 100, seed: int = 0, attenuation_db: float = 30.0,
                     params: Optional[ProtocolParams] = None) -> SuiteResult:
    params = link_at_attenuation(params or ProtocolParams(), attenuation_db)
    budget = link_budget(params)
    result = SuiteResult("bounds")
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(runs)):
        counts = sample_session_counts(params, child, budget)
        result.total += 1
        try:
            analytic = decoy_bounds_analytic(counts, params)
            lp = decoy_bounds_lp(counts, params)
        except EstimationError as exc:
            result.failures.append(f"run {i}: {exc}")
            continue
        truth_all = counts.true_events("Z", 1)
        truth_u = counts.true_events("Z", 1, "u")
        vacuum_all = counts.true_events("Z", 0)
        if not analytic.n1_low <= truth_all <= analytic.n1_up:
            result.failures.append(
                f"run {i}: analytic [{analytic.n1_low:.6g}, {analytic.n1_up:.6g}] misses {truth_all}"
            )
        if not lp.n1_low <= truth_u <= lp.n1_up:
            result.failures.append(
                f"run {i}: lp [{lp.n1_low:.6g}, {lp.n1_up:.6g}] misses {truth_u}"
            )
        if analytic.n0_low > vacuum_all:
            result.failures.append(f"run {i}: analytic n0_low {analytic.n0_low:.6g} > {vacuum_all}")
    return result


SUITES: Dict[str, Callable[[], SuiteResult]] = {
    "lp": run_lp_suite,
    "bounds": run_bounds_suite,
}


def run_suites(name: str = "all") -> List[SuiteResult]:
    names = list(SUITES) if name == "all" else [name]
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f"unknown suite {unknown[0]!r}, expected one of {sorted(SUITES)} or 'all'")
    results = []
    for n in names:
        res = SUITES[n]()
        log.info(res.summary())
        results.append(res)
    return results
