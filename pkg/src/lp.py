# src/lp.py
"""
Dense two-phase simplex and the decoy-state linear programs.

The solver works on a full tableau with Bland's rule (smallest entering index,
smallest leaving basic index on ties), so pivoting is deterministic and cannot
cycle. Variables must have finite lower bounds; they are shifted to zero and
finite upper bounds become explicit rows. Each row is scaled by its largest
coefficient before the tableau is built.

Decoy programs: yields Y_0..Y_ncut and one tail slack per intensity, with the
observed gain of every intensity bracketed by its Hoeffding deviation:

    Q_k^- <= sum_n P(n|k) Y_n + t_k <= Q_k^+,    0 <= t_k <= P(n > n_cut | k)

The phase-error program solves for the error yields H_n jointly with the yields,
bracketing E_k Q_k the same way and adding H_n <= Y_n.

Variables are stored divided by the largest Q_k^+ (LinearProgram.scale) so the
tableau stays O(1) at long distances where gains are ~1e-7.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .channel import SessionCounts
from .finitekey import (
    EPS_SPLIT,
    DecoyBounds,
    EstimationError,
    InsufficientStatistics,
    hoeffding_delta,
    phase_error_bound,
    single_photon_sent,
)
from .params import INTENSITY_NAMES, ProtocolParams, photon_number_matrix, poisson_tail

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-11

RELATIONS = ("<=", "=", ">=")
TARGETS = ("min_y0", "max_y0", "min_y1", "max_y1", "max_e1y1")

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class Constraint:
    coefficients: Tuple[float, ...]
    relation: str
    rhs: float


@dataclass(frozen=True)
class LinearProgram:
    objective: Tuple[float, ...]
    constraints: Tuple[Constraint, ...] = ()
    # (lower, upper) per variable; empty means [0, inf) for all
    bounds: Tuple[Tuple[float, float], ...] = ()
    sense: str = "minimize"
    labels: Tuple[str, ...] = ()
    # physical value = scale * variable
    scale: float = 1.0

    def __post_init__(self):
        n = len(self.objective)
        object.__setattr__(self, "objective", tuple(float(c) for c in self.objective))
        bounds = tuple(self.bounds) or tuple((0.0, math.inf) for _ in range(n))
        object.__setattr__(self, "bounds", tuple((float(lo), float(hi)) for lo, hi in bounds))
        object.__setattr__(self, "constraints", tuple(
            Constraint(tuple(float(a) for a in c.coefficients), c.relation, float(c.rhs))
            for c in self.constraints
        ))
        if self.sense not in ("minimize", "maximize"):
            raise ValueError(f"unknown sense {self.sense!r}")
        if len(self.bounds) != n:
            raise ValueError(f"{len(self.bounds)} bounds for {n} variables")
        for i, (lo, hi) in enumerate(self.bounds):
            if not math.isfinite(lo):
                raise ValueError(f"variable {i}: lower bound must be finite")
            if lo > hi:
                raise ValueError(f"variable {i}: lower bound {lo} exceeds upper bound {hi}")
        for j, c in enumerate(self.constraints):
            if len(c.coefficients) != n:
                raise ValueError(f"constraint {j}: arity {len(c.coefficients)} != {n}")
            if c.relation not in RELATIONS:
                raise ValueError(f"constraint {j}: unknown relation {c.relation!r}")
        if self.labels and len(self.labels) != n:
            raise ValueError("labels must name every variable")

    @property
    def n_vars(self) -> int:
        return len(self.objective)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def is_feasible(self, point: Sequence[float], tol: float = 1e-7) -> bool:
        x = np.asarray(point, dtype=float)
        for (lo, hi), xi in zip(self.bounds, x):
            if xi < lo - tol * max(1.0, abs(lo)) or xi > hi + tol * max(1.0, abs(hi)):
                return False
        magnitude = max(1.0, float(np.abs(x).max(initial=0.0)))
        for c in self.constraints:
            a = np.asarray(c.coefficients)
            lhs = float(a @ x)
            slack = tol * max(1.0, float(np.abs(a).max(initial=0.0)) * magnitude, abs(c.rhs))
            if c.relation == "<=" and lhs > c.rhs + slack:
                return False
            if c.relation == ">=" and lhs < c.rhs - slack:
                return False
            if c.relation == "=" and abs(lhs - c.rhs) > slack:
                return False
        return True


@dataclass(frozen=True)
class LpSolution:
    status: str
    point: Tuple[float, ...] = ()
    objective: float = math.nan
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


# ------------------------------
# Standard form
# ------------------------------
def _standard_form(lp: LinearProgram):
    n = lp.n_vars
    lower = np.array([lo for lo, _ in lp.bounds])
    upper = np.array([hi for _, hi in lp.bounds])

    rows, rels, rhs = [], [], []
    for c in lp.constraints:
        a = np.asarray(c.coefficients)
        rows.append(a)
        rels.append(c.relation)
        rhs.append(c.rhs - float(a @ lower))
    for i in np.flatnonzero(np.isfinite(upper)):
        a = np.zeros(n)
        a[i] = 1.0
        rows.append(a)
        rels.append("<=")
        rhs.append(upper[i] - lower[i])

    A, b, kept = [], [], []
    for a, rel, r in zip(rows, rels, rhs):
        s = float(np.abs(a).max(initial=0.0))
        if s == 0.0:
            # empty row: either trivially true or the program is infeasible
            bad = (rel == "<=" and r < -FEAS_TOL) or (rel == ">=" and r > FEAS_TOL) \
                or (rel == "=" and abs(r) > FEAS_TOL)
            if bad:
                return None
            continue
        a, r = a / s, r / s
        if r < 0:
            a, r = -a, -r
            rel = {"<=": ">=", ">=": "<=", "=": "="}[rel]
        A.append(a)
        b.append(r)
        kept.append(rel)
    A = np.array(A, dtype=float).reshape(len(A), n)
    return A, np.array(b, dtype=float), kept, lower


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    factors = T[:, col].copy()
    factors[row] = 0.0
    T -= np.outer(factors, T[row])


def _run_simplex(T: np.ndarray, basis: np.ndarray, n_cols: int, limit: int,
                 iterations: int) -> Tuple[str, int]:
    m = T.shape[0] - 1
    while True:
        if iterations >= limit:
            return ITERATION_LIMIT, iterations
        entering = np.flatnonzero(T[-1, :n_cols] < -OPT_TOL)
        if entering.size == 0:
            return OPTIMAL, iterations
        col = int(entering[0])
        column = T[:m, col]
        positive = column > PIVOT_TOL
        if not positive.any():
            return UNBOUNDED, iterations
        ratios = np.full(m, math.inf)
        ratios[positive] = np.maximum(T[:m, -1][positive], 0.0) / column[positive]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, best))
        row = int(ties[np.argmin(basis[ties])])
        _pivot(T, row, col)
        basis[row] = col
        iterations += 1


def lp_solve(lp: LinearProgram) -> LpSolution:
    """Two-phase primal simplex. Never raises on a well-formed program."""
    n = lp.n_vars
    limit = 10000 * (n + len(lp.constraints))
    form = _standard_form(lp)
    if form is None:
        return LpSolution(INFEASIBLE)
    A, b, rels, lower = form
    m = A.shape[0]

    n_slack = sum(1 for r in rels if r != "=")
    n_art = sum(1 for r in rels if r != "<=")
    width = n + n_slack + n_art
    T = np.zeros((m + 1, width + 1))
    T[:m, :n] = A
    T[:m, -1] = b
    basis = np.zeros(m, dtype=int)
    slack_col, art_col = n, n + n_slack
    art_cols = []
    for i, rel in enumerate(rels):
        if rel == "<=":
            T[i, slack_col] = 1.0
            basis[i] = slack_col
            slack_col += 1
            continue
        if rel == ">=":
            T[i, slack_col] = -1.0
            slack_col += 1
        T[i, art_col] = 1.0
        basis[i] = art_col
        art_cols.append(art_col)
        art_col += 1

    iterations = 0
    if art_cols:
        T[-1, art_cols] = 1.0
        for i in range(m):
            if basis[i] >= n + n_slack:
                T[-1] -= T[i]
        status, iterations = _run_simplex(T, basis, width, limit, iterations)
        if status == ITERATION_LIMIT:
            return LpSolution(ITERATION_LIMIT, iterations=iterations)
        art_rhs = b[[i for i, rel in enumerate(rels) if rel != "<="]]
        if -T[-1, -1] > FEAS_TOL * max(1.0, float(art_rhs.max(initial=0.0))):
            return LpSolution(INFEASIBLE, iterations=iterations)

        # drive artificials out of the basis; rows with no other pivot are redundant
        redundant = []
        for i in range(m):
            if basis[i] < n + n_slack:
                continue
            magnitudes = np.abs(T[i, :n + n_slack])
            col = int(np.argmax(magnitudes))
            if magnitudes[col] > PIVOT_TOL:
                _pivot(T, i, col)
                basis[i] = col
            else:
                redundant.append(i)
        if redundant:
            keep = [i for i in range(m) if i not in redundant]
            T = np.vstack([T[keep], T[-1:]])
            basis = basis[keep]
            m = len(keep)
        T = np.delete(T, art_cols, axis=1)
        width = n + n_slack

    cost = np.zeros(width)
    cost[:n] = lp.objective
    if lp.sense == "maximize":
        cost[:n] *= -1.0
    T[-1, :] = 0.0
    T[-1, :width] = cost
    for i in range(m):
        if cost[basis[i]] != 0.0:
            T[-1] -= cost[basis[i]] * T[i]

    status, iterations = _run_simplex(T, basis, width, limit, iterations)
    if status != OPTIMAL:
        return LpSolution(status, iterations=iterations)

    y = np.zeros(width)
    y[basis] = T[:m, -1]
    x = lower + np.maximum(y[:n], 0.0)
    x = np.minimum(x, [hi for _, hi in lp.bounds])
    value = float(np.dot(lp.objective, x))
    return LpSolution(OPTIMAL, tuple(float(v) for v in x), value, iterations)


# ------------------------------
# Oracle
# ------------------------------
def vertex_enumeration(lp: LinearProgram) -> LpSolution:
    """Brute-force optimum over every basic solution; bounded programs only."""
    n = lp.n_vars
    rows, rhs = [], []
    for c in lp.constraints:
        rows.append(c.coefficients)
        rhs.append(c.rhs)
    for i, (lo, hi) in enumerate(lp.bounds):
        e = [0.0] * n
        e[i] = 1.0
        rows.append(tuple(e))
        rhs.append(lo)
        if math.isfinite(hi):
            rows.append(tuple(e))
            rhs.append(hi)
    A = np.array(rows, dtype=float)
    b = np.array(rhs, dtype=float)
    c = np.array(lp.objective)
    sign = 1.0 if lp.sense == "minimize" else -1.0

    best: Optional[np.ndarray] = None
    best_value = math.inf
    for combo in itertools.combinations(range(len(rows)), n):
        M = A[list(combo)]
        if np.linalg.matrix_rank(M) < n:
            continue
        x = np.linalg.solve(M, b[list(combo)])
        if not lp.is_feasible(x):
            continue
        value = sign * float(c @ x)
        if value < best_value - 1e-12:
            best, best_value = x, value
    if best is None:
        return LpSolution(INFEASIBLE)
    return LpSolution(OPTIMAL, tuple(float(v) for v in best), float(c @ best))


def random_lp(rng: np.random.Generator, n_vars: int, n_constraints: int,
              box: float = 10.0) -> LinearProgram:
    """Random bounded program that is feasible by construction."""
    anchor = rng.uniform(0.1 * box, 0.9 * box, size=n_vars)
    constraints = []
    for _ in range(n_constraints):
        a = rng.uniform(-1.0, 1.0, size=n_vars)
        relation = RELATIONS[rng.choice(3, p=[0.45, 0.1, 0.45])]
        level = float(a @ anchor)
        if relation == "<=":
            level += rng.uniform(0.0, 3.0)
        elif relation == ">=":
            level -= rng.uniform(0.0, 3.0)
        constraints.append(Constraint(tuple(a), relation, level))
    return LinearProgram(
        objective=tuple(rng.uniform(-1.0, 1.0, size=n_vars)),
        constraints=tuple(constraints),
        bounds=tuple((0.0, box) for _ in range(n_vars)),
        sense="maximize" if rng.random() < 0.5 else "minimize",
    )


# ------------------------------
# Decoy-state programs
# ------------------------------
def _brackets(counts: SessionCounts, params: ProtocolParams, observed: np.ndarray, basis: str,
              cols: Sequence[int]) -> List[Tuple[float, float]]:
    """Per-intensity [lo, hi] rates of `observed` events, widened by the Hoeffding deviation."""
    eps = params.epsilons.eps_sec / EPS_SPLIT
    b = SessionCounts.index(basis)
    brackets = []
    for k in cols:
        sent = float(counts.sent[b, k])
        if sent <= 0:
            raise InsufficientStatistics(
                f"insufficient statistics: nothing sent in basis {basis} at intensity {INTENSITY_NAMES[k]}"
            )
        obs = float(observed[b, k])
        dev = hoeffding_delta(obs, eps) if params.estimation.finite_size else 0.0
        brackets.append((min(max((obs - dev) / sent, 0.0), 1.0),
                         min(max((obs + dev) / sent, 0.0), 1.0)))
    return brackets


def build_decoy_lp(counts: SessionCounts, params: ProtocolParams, target: str,
                   basis: str = "Z", use: Sequence[str] = INTENSITY_NAMES) -> LinearProgram:
    """Program for one extremal yield.

    Yield targets carry y_0..y_ncut and one tail slack t_k per intensity. The
    error target adds error yields h_0..h_ncut with their own slacks r_k,
    bracketed by the error counts and held below the yields (h_n <= y_n), which
    are in turn bracketed by the detection counts.
    """
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}; expected one of {TARGETS}")
    n_cut = params.estimation.n_cut
    pn = photon_number_matrix(params.intensities, n_cut)
    tails = poisson_tail(params.intensities, n_cut)
    cols = [INTENSITY_NAMES.index(k) for k in use]
    n_y = n_cut + 1
    width = n_y + len(cols)

    blocks = [("y", "t", _brackets(counts, params, counts.detected, basis, cols))]
    if target == "max_e1y1":
        blocks.append(("h", "r", _brackets(counts, params, counts.errors, basis, cols)))
    scale = max(hi for _, hi in blocks[0][2]) or 1.0
    n_vars = width * len(blocks)

    labels, bounds, constraints = [], [], []
    for j, (name, slack, brackets) in enumerate(blocks):
        offset = j * width
        labels += [f"{name}{i}" for i in range(n_y)] + [f"{slack}_{INTENSITY_NAMES[k]}" for k in cols]
        bounds += [(0.0, 1.0 / scale)] * n_y + [(0.0, float(tails[k]) / scale) for k in cols]
        for c, (k, (lo, hi)) in enumerate(zip(cols, brackets)):
            coeffs = [0.0] * n_vars
            for i in range(n_y):
                coeffs[offset + i] = float(pn[i, k]) * scale
            coeffs[offset + n_y + c] = scale
            constraints.append(Constraint(tuple(coeffs), ">=", lo))
            constraints.append(Constraint(tuple(coeffs), "<=", hi))
    if len(blocks) == 2:
        for i in range(n_y):
            coeffs = [0.0] * n_vars
            coeffs[width + i] = 1.0
            coeffs[i] = -1.0
            constraints.append(Constraint(tuple(coeffs), "<=", 0.0))

    chosen = {"min_y0": "y0", "max_y0": "y0", "max_e1y1": "h1"}.get(target, "y1")
    objective = [0.0] * n_vars
    objective[labels.index(chosen)] = 1.0
    return LinearProgram(
        objective=tuple(objective),
        constraints=tuple(constraints),
        bounds=tuple(bounds),
        sense="minimize" if target.startswith("min") else "maximize",
        labels=tuple(labels),
        scale=scale,
    )


def solve_decoy_lp(counts: SessionCounts, params: ProtocolParams, target: str,
                   basis: str = "Z", use: Sequence[str] = INTENSITY_NAMES) -> float:
    """Extremal yield (physical units) for one target."""
    lp = build_decoy_lp(counts, params, target, basis, use)
    sol = lp_solve(lp)
    log.debug("decoy LP %s/%s: %s after %d pivots", target, basis, sol.status, sol.iterations)
    if not sol.optimal:
        raise EstimationError(f"estimation failed: {target} in basis {basis} returned {sol.status}")
    return max(sol.objective * lp.scale, 0.0)


def decoy_bounds_lp(counts: SessionCounts, params: ProtocolParams) -> DecoyBounds:
    """Signal-intensity Z-basis bounds plus the X-basis phase-error bound."""
    if counts.detected.sum() == 0:
        return DecoyBounds.zero("lp")

    y0_min = solve_decoy_lp(counts, params, "min_y0", "Z")
    y1_min = solve_decoy_lp(counts, params, "min_y1", "Z")
    y1_max = solve_decoy_lp(counts, params, "max_y1", "Z")
    y1_min_x = solve_decoy_lp(counts, params, "min_y1", "X")
    e1_max_x = solve_decoy_lp(counts, params, "max_e1y1", "X")

    pn = photon_number_matrix(params.intensities, 1)
    bz, u = SessionCounts.index("Z", "u")
    sent_zu = float(counts.sent[bz, u])
    n0_low = y0_min * sent_zu * pn[0, u]
    n1_low = y1_min * sent_zu * pn[1, u]
    n1_up = max(y1_max * sent_zu * pn[1, u], n1_low)
    s_x1_low = y1_min_x * single_photon_sent(counts, params, "X")
    v_x1_up = e1_max_x * single_photon_sent(counts, params, "X")

    if n1_low <= 0 or s_x1_low <= 0:
        raise InsufficientStatistics(
            f"insufficient statistics: n1_low={n1_low:.4g}, s_x1_low={s_x1_low:.4g}"
        )
    eph = phase_error_bound(v_x1_up, s_x1_low, n1_low, params.epsilons.eps_sec)
    return DecoyBounds(
        n0_low=n0_low,
        n1_low=n1_low,
        n1_up=n1_up,
        eph_up=eph,
        s_x1_low=s_x1_low,
        v_x1_up=v_x1_up,
        method="lp",
        y1_low=y1_min,
        y1_up=y1_max,
    )
