from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from src.channel import (
    SessionCounts,
    expected_session_counts,
    link_budget,
    photon_error_yields,
    photon_yields,
)
from src.finitekey import (
    EPS_SPLIT,
    EstimationError,
    InsufficientStatistics,
    decoy_bounds_analytic,
    hoeffding_delta,
)
from src.lp import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    Constraint,
    LinearProgram,
    build_decoy_lp,
    decoy_bounds_lp,
    lp_solve,
    random_lp,
    solve_decoy_lp,
    vertex_enumeration,
)
from src.params import photon_number_matrix, replace_section


def _lp(objective, constraints, bounds=(), sense="minimize"):
    return LinearProgram(
        objective=tuple(objective),
        constraints=tuple(Constraint(tuple(a), rel, rhs) for a, rel, rhs in constraints),
        bounds=tuple(bounds),
        sense=sense,
    )


# ------------------------------
# Solver
# ------------------------------
def test_box_maximum():
    lp = _lp([1, 1], [([1, 0], "<=", 1), ([0, 1], "<=", 1)], sense="maximize")
    sol = lp_solve(lp)
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(2.0)
    np.testing.assert_allclose(sol.point, [1.0, 1.0])


def test_contradictory_constraints_are_infeasible():
    lp = _lp([1], [([1], ">=", 2), ([1], "<=", 1)])
    assert lp_solve(lp).status == INFEASIBLE


def test_unbounded_direction():
    lp = _lp([1, 1], [([1, -1], "<=", 1)], sense="maximize")
    assert lp_solve(lp).status == UNBOUNDED


def test_equality_and_shifted_bounds():
    lp = _lp([1, 2], [([1, 1], "=", 3)], bounds=[(-1, 5), (0.5, 5)])
    sol = lp_solve(lp)
    assert sol.optimal
    assert sol.objective == pytest.approx(3.5)
    np.testing.assert_allclose(sol.point, [2.5, 0.5])
    assert lp.is_feasible(sol.point)


def test_redundant_equalities():
    lp = _lp([1, 1], [([1, 1], "=", 2), ([2, 2], "=", 4), ([1, 0], ">=", 0.5)])
    sol = lp_solve(lp)
    assert sol.optimal
    assert sol.objective == pytest.approx(2.0)


def test_degenerate_program_terminates():
    lp = _lp([-0.75, 150, -0.02, 6],
             [([0.25, -60, -0.04, 9], "<=", 0),
              ([0.5, -90, -0.02, 3], "<=", 0),
              ([0, 0, 1, 0], "<=", 1)])
    sol = lp_solve(lp)
    assert sol.optimal
    assert sol.objective == pytest.approx(-0.05)


@pytest.mark.parametrize("kwargs", [
    dict(objective=(1.0, 1.0), constraints=(Constraint((1.0,), "<=", 1.0),)),
    dict(objective=(1.0,), bounds=((2.0, 1.0),)),
    dict(objective=(1.0,), bounds=((-np.inf, 1.0),)),
    dict(objective=(1.0,), constraints=(Constraint((1.0,), "<", 1.0),)),
    dict(objective=(1.0,), sense="sideways"),
])
def test_malformed_programs_are_rejected(kwargs):
    with pytest.raises(ValueError):
        LinearProgram(**kwargs)


def test_random_programs_match_vertex_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(50):
        lp = random_lp(rng, int(rng.integers(1, 5)), int(rng.integers(1, 7)))
        got, want = lp_solve(lp), vertex_enumeration(lp)
        assert got.status == want.status == OPTIMAL
        assert got.objective == pytest.approx(want.objective, abs=1e-6 * max(1.0, abs(want.objective)))
        assert lp.is_feasible(got.point)


def test_solver_is_deterministic():
    lp = random_lp(np.random.default_rng(5), 4, 6)
    assert lp_solve(lp) == lp_solve(lp)


# ------------------------------
# Decoy programs
# ------------------------------
def test_decoy_lp_shape(params):
    counts = expected_session_counts(replace_section(params, "link", length_km=100.0))
    lp = build_decoy_lp(counts, params, "min_y1")
    n_cut = params.estimation.n_cut
    assert lp.n_vars == n_cut + 1 + 3
    assert lp.labels[1] == "y1" and lp.labels[-1] == "t_w"
    assert len(lp.constraints) == 6
    assert lp.sense == "minimize"
    assert build_decoy_lp(counts, params, "max_e1y1", "X").sense == "maximize"
    with pytest.raises(ValueError):
        build_decoy_lp(counts, params, "min_y7")


def test_true_yields_are_feasible(params):
    p = replace_section(params, "link", length_km=100.0)
    counts = expected_session_counts(p)
    budget = link_budget(p)
    lp = build_decoy_lp(counts, p, "min_y1")
    yields = photon_yields(budget.eta, budget.y0, p.estimation.n_cut)
    point = np.concatenate([yields, np.zeros(3)]) / lp.scale
    assert lp.is_feasible(point)


def test_error_program_is_coupled_to_yields(params):
    p = replace_section(params, "link", length_km=150.0)
    counts = expected_session_counts(p)
    budget = link_budget(p)
    n_y = p.estimation.n_cut + 1
    lp = build_decoy_lp(counts, p, "max_e1y1", "X")
    assert lp.n_vars == 2 * (n_y + 3)
    assert lp.labels[n_y + 3] == "h0" and lp.labels[-1] == "r_w"
    assert lp.objective[lp.index("h1")] == 1.0
    assert len(lp.constraints) == 12 + n_y

    yields = photon_yields(budget.eta, budget.y0, p.estimation.n_cut)
    errors = photon_error_yields(budget.eta, budget.y0, p.detector.e_misalign, p.estimation.n_cut)
    truth = np.concatenate([yields, np.zeros(3), errors, np.zeros(3)]) / lp.scale
    assert lp.is_feasible(truth)


def test_coupling_never_loosens_error_bound(params):
    for km in (100.0, 200.0, 240.0):
        p = replace_section(params, "link", length_km=km)
        counts = expected_session_counts(p)
        coupled = build_decoy_lp(counts, p, "max_e1y1", "X")
        # the first twelve rows are the count brackets; the rest tie h_n to y_n
        free = replace(coupled, constraints=coupled.constraints[:12])
        tight, loose = lp_solve(coupled), lp_solve(free)
        assert tight.optimal and loose.optimal
        assert tight.objective <= loose.objective * (1 + 1e-9)
        assert tight.objective * coupled.scale <= solve_decoy_lp(counts, p, "max_y1", "X") * (1 + 1e-9)


def test_min_never_exceeds_max(params):
    counts = expected_session_counts(replace_section(params, "link", length_km=150.0))
    lo = solve_decoy_lp(counts, params, "min_y1")
    hi = solve_decoy_lp(counts, params, "max_y1")
    assert 0 < lo <= hi
    assert solve_decoy_lp(counts, params, "min_y0") <= solve_decoy_lp(counts, params, "max_y0")


def test_lp_bounds_sandwich_truth(params):
    p = replace_section(params, "link", length_km=100.0)
    counts = expected_session_counts(p)
    b = decoy_bounds_lp(counts, p)
    truth = counts.true_events("Z", 1, "u")
    assert b.method == "lp"
    assert b.n1_low <= truth <= b.n1_up
    assert b.n0_low <= counts.true_events("Z", 0, "u")
    assert 0.0 <= b.eph_up <= 0.5


def test_wider_deviations_never_tighten(params):
    p = replace_section(params, "link", length_km=150.0)
    counts = expected_session_counts(p)
    tight = decoy_bounds_lp(counts, replace_section(p, "epsilons", eps_sec=1e-6))
    wide = decoy_bounds_lp(counts, replace_section(p, "epsilons", eps_sec=1e-14))
    assert wide.n1_low <= tight.n1_low
    assert wide.n1_up >= tight.n1_up


def test_photon_cutoff_sensitivity(params):
    p = replace_section(params, "link", length_km=100.0)
    counts = expected_session_counts(p)
    base = decoy_bounds_lp(counts, p)
    wider = decoy_bounds_lp(counts, replace_section(p, "estimation", n_cut=12))
    assert wider.n1_low == pytest.approx(base.n1_low, rel=1e-3)
    assert wider.n1_up == pytest.approx(base.n1_up, rel=1e-3)


def test_vacuum_pinned_by_two_variable_program(asymptotic):
    """With n_cut = 1 and a near-vacuum intensity, Y0 sits close to the vacuum gain."""
    p = replace_section(asymptotic, "estimation", n_cut=1)
    p = replace_section(p, "link", length_km=100.0)
    counts = expected_session_counts(p)
    q_w = counts.n("Z", "w") / counts.s("Z", "w")
    y0_lo = solve_decoy_lp(counts, p, "min_y0")
    y0_hi = solve_decoy_lp(counts, p, "max_y0")
    assert y0_lo <= q_w + 1e-12
    assert y0_hi >= y0_lo
    assert y0_hi <= q_w / photon_number_matrix(p.intensities, 1)[0, 2] * (1 + 1e-6)


def test_single_intensity_is_under_constrained(params):
    counts = expected_session_counts(replace_section(params, "link", length_km=100.0))
    lo = solve_decoy_lp(counts, params, "min_y1", use=("u",))
    hi = solve_decoy_lp(counts, params, "max_y1", use=("u",))
    assert lo == pytest.approx(0.0, abs=1e-12)
    n, sent = counts.n("Z", "u"), counts.s("Z", "u")
    q_hi = (n + hoeffding_delta(n, params.epsilons.eps_sec / EPS_SPLIT)) / sent
    assert hi == pytest.approx(q_hi / photon_number_matrix(params.intensities, 1)[1, 0], rel=1e-6)


def test_zero_counts_and_missing_pulses(params):
    empty = np.zeros((2, 3), dtype=np.int64)
    counts = SessionCounts(sent=empty + 10**6, detected=empty, errors=empty)
    assert decoy_bounds_lp(counts, params).n1_low == 0.0
    nothing_sent = SessionCounts(sent=empty, detected=empty + np.array([[0, 0, 1], [0, 0, 0]]),
                                 errors=empty)
    with pytest.raises(InsufficientStatistics):
        build_decoy_lp(nothing_sent, params, "min_y1")
    assert issubclass(InsufficientStatistics, EstimationError)


@pytest.mark.parametrize("attenuation", [20.0, 30.0, 40.0])
def test_methods_agree_on_single_photon_yield(at_db, attenuation):
    p = at_db(attenuation)
    counts = expected_session_counts(p)
    analytic = decoy_bounds_analytic(counts, p)
    lp = decoy_bounds_lp(counts, p)
    assert lp.y1_low == pytest.approx(analytic.y1_low, rel=0.10)
