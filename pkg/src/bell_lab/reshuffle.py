"""Can four N x 2 pair sheets be reshuffled into one N x 4 quadruple sheet?

The question is an integer marginal problem on the 4-cycle A - B - A' - B'.
Cutting the cycle along (A, A') leaves two 2x2x2 tables (A, A', B) and
(A, A', B') glued on the (A, A') margin.  Each 2x2x2 table with fixed 2-d
margins has one free cell, and every other cell is that cell plus or minus an
integer, so its feasible set is an integer interval.  Scanning the single
free cell ``t = m(+,+)`` of the (A, A') margin therefore decides integer
feasibility exactly, and the per-(a, a') 2x2 transport step always succeeds.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InputError, InvariantViolation
from .sheets import PAIR_NAMES, CountTable, QuadrupleSheet

# quadruple types (a, a', b, b') with index 0 for +1 and 1 for -1; flat index
# is 8*a + 4*a' + 2*b + b'
QUAD_TYPES = np.array(list(itertools.product((0, 1), repeat=4)))
_VAL = np.array([1, -1])


@dataclass(frozen=True)
class ReshuffleResult:
    feasible: bool
    witness: np.ndarray | None
    violated: str | None
    max_slack: int

    def quadruple_sheet(self) -> QuadrupleSheet:
        if self.witness is None:
            raise InputError("no witness: tables are not reshufflable")
        rows = np.repeat(_VAL[QUAD_TYPES], self.witness, axis=0)
        return QuadrupleSheet.from_rows(rows)


def _check_tables(tables: CountTable) -> np.ndarray:
    if not isinstance(tables, CountTable):
        tables = CountTable(np.asarray(tables))
    totals = tables.totals
    if len(set(totals.tolist())) != 1:
        raise InputError(f"tables must have equal totals, got {totals.tolist()}")
    return tables.counts


def pair_marginals(witness: np.ndarray) -> np.ndarray:
    """Count table (4, 2, 2) implied by 16 quadruple-type counts."""
    w = np.asarray(witness).reshape(2, 2, 2, 2)  # a, a', b, b'
    return np.stack([w.sum(axis=(1, 3)), w.sum(axis=(1, 2)), w.sum(axis=(0, 3)), w.sum(axis=(0, 2))])


def marginal_inconsistencies(c: np.ndarray) -> list[str]:
    """Single-arm marginals that disagree between the two sheets sharing a setting."""
    out = []
    checks = (("A", c[0].sum(axis=1), c[1].sum(axis=1)),
              ("A'", c[2].sum(axis=1), c[3].sum(axis=1)),
              ("B", c[0].sum(axis=0), c[2].sum(axis=0)),
              ("B'", c[1].sum(axis=0), c[3].sum(axis=0)))
    for name, m1, m2 in checks:
        if not np.array_equal(m1, m2):
            out.append(f"marginal {name}: n(+)={m1[0]} vs {m2[0]}")
    return out


def chsh_count_slacks(c: np.ndarray) -> list[tuple[str, int]]:
    """The eight CHSH count inequalities as slacks (negative means violated).

    With ``nE_k = N * E_k`` for the four pairs, each inequality reads
    ``+-(nE_1 + nE_2 + nE_3 + nE_4 - 2 nE_k) <= 2N``.
    """
    c = np.asarray(c)
    N = int(c[0].sum())
    ne = (c[:, 0, 0] + c[:, 1, 1] - c[:, 0, 1] - c[:, 1, 0]).astype(np.int64)
    total = int(ne.sum())
    out = []
    for k, name in enumerate(PAIR_NAMES):
        val = total - 2 * int(ne[k])
        out.append((f"+S[{name} negated] <= 2N", 2 * N - val))
        out.append((f"-S[{name} negated] <= 2N", 2 * N + val))
    return out


def fine_conditions(tables: CountTable) -> tuple[bool, str | None, int]:
    """Marginal consistency plus the eight CHSH count inequalities.

    Returns (all hold, first violated condition, minimum inequality slack).
    """
    c = _check_tables(tables)
    slacks = chsh_count_slacks(c)
    min_slack = min(s for _, s in slacks)
    bad = marginal_inconsistencies(c)
    if bad:
        return False, bad[0], min_slack
    for name, slack in slacks:
        if slack < 0:
            return False, f"CHSH count inequality {name} violated by {-slack}", min_slack
    return True, None, min_slack


def _third_cell_bounds(m, t_ab, t_apb):
    """Interval for q(+,+,+) of a 2x2x2 table (a, a', b) with given 2-d margins.

    ``m`` is the (a, a') margin, ``t_ab`` the (a, b) margin, ``t_apb`` the
    (a', b) margin, all indexed [0|1, 0|1].  Arrays broadcast over ``m``.
    """
    shape = np.shape(m[0][0])
    lo = np.max(np.broadcast_arrays(0, t_ab[0][0] - m[0][1], t_apb[0][0] - m[1][0],
                                    t_apb[0][0] - t_ab[1][0], np.zeros(shape, dtype=np.int64)), axis=0)
    hi = np.min(np.broadcast_arrays(m[0][0], t_ab[0][0], t_apb[0][0],
                                    m[1][1] - t_ab[1][0] + t_apb[0][0]), axis=0)
    return lo, hi


def _fill_third(m, t_ab, t_apb, s) -> np.ndarray:
    """Cells q[a, a', b] for free cell value ``s``."""
    q = np.zeros((2, 2, 2), dtype=np.int64)
    q[0, 0, 0] = s
    q[0, 0, 1] = m[0][0] - s
    q[0, 1, 0] = t_ab[0][0] - s
    q[0, 1, 1] = m[0][1] - q[0, 1, 0]
    q[1, 0, 0] = t_apb[0][0] - s
    q[1, 0, 1] = m[1][0] - q[1, 0, 0]
    q[1, 1, 0] = t_ab[1][0] - q[1, 0, 0]
    q[1, 1, 1] = m[1][1] - q[1, 1, 0]
    return q


def _integer_witness(c: np.ndarray) -> np.ndarray | None:
    N = int(c[0].sum())
    nA0 = int(c[0].sum(axis=1)[0])
    nAp0 = int(c[2].sum(axis=1)[0])
    t = np.arange(max(0, nA0 + nAp0 - N), min(nA0, nAp0) + 1)
    if t.size == 0:
        return None
    m = [[t, nA0 - t], [nAp0 - t, N - nA0 - nAp0 + t]]
    lo1, hi1 = _third_cell_bounds(m, c[0], c[2])
    lo2, hi2 = _third_cell_bounds(m, c[1], c[3])
    ok = np.flatnonzero((lo1 <= hi1) & (lo2 <= hi2))
    if ok.size == 0:
        return None
    k = ok[0]
    mk = [[int(m[0][0][k]), int(m[0][1][k])], [int(m[1][0][k]), int(m[1][1][k])]]
    q = _fill_third(mk, c[0], c[2], int(lo1[k]))
    r = _fill_third(mk, c[1], c[3], int(lo2[k]))
    w = np.zeros((2, 2, 2, 2), dtype=np.int64)
    for a in range(2):
        for ap in range(2):
            # 2x2 transport with row sums q[a, ap, :] and column sums r[a, ap, :]
            n00 = min(q[a, ap, 0], r[a, ap, 0])
            w[a, ap, 0, 0] = n00
            w[a, ap, 0, 1] = q[a, ap, 0] - n00
            w[a, ap, 1, 0] = r[a, ap, 0] - n00
            w[a, ap, 1, 1] = q[a, ap, 1] - w[a, ap, 1, 0]
    return w.reshape(16)


def reshuffle_feasibility(tables: CountTable) -> ReshuffleResult:
    """Decide whether integer quadruple counts reproduce all four count tables.

    Feasible results carry a 16-entry witness (see ``QUAD_TYPES``); infeasible
    ones name a violated marginal equality or CHSH count inequality.
    ``max_slack`` is the smallest CHSH count-inequality slack (negative when
    violated), useful as a distance from feasibility.
    """
    c = _check_tables(tables)
    ok, violated, slack = fine_conditions(CountTable(c))
    if marginal_inconsistencies(c):
        return ReshuffleResult(False, None, violated, slack)
    witness = _integer_witness(c)
    if witness is None:
        return ReshuffleResult(False, None, violated or "no integer solution", slack)
    if np.any(witness < 0) or not np.array_equal(pair_marginals(witness), c):
        raise InvariantViolation("reshuffle witness does not reproduce the tables")
    return ReshuffleResult(True, witness, None, slack)


# ------------------------------------------------------------ exhaustive oracle

EXHAUSTIVE_MAX_N = 6


@lru_cache(maxsize=None)
def _reachable(N: int) -> frozenset:
    combos = np.array(list(itertools.combinations_with_replacement(range(16), N)), dtype=np.int64)
    w = np.zeros((len(combos), 16), dtype=np.int64)
    np.add.at(w, (np.repeat(np.arange(len(combos)), N), combos.reshape(-1)), 1)
    w = w.reshape(-1, 2, 2, 2, 2)
    marg = np.stack([w.sum(axis=(2, 4)), w.sum(axis=(2, 3)), w.sum(axis=(1, 4)), w.sum(axis=(1, 3))], axis=1)
    return frozenset(row.tobytes() for row in np.ascontiguousarray(marg))


def exhaustive_feasible(tables: CountTable) -> bool:
    """Brute force over all multisets of N quadruples (N <= 6)."""
    c = _check_tables(tables)
    N = int(c[0].sum())
    if N > EXHAUSTIVE_MAX_N:
        raise InputError(f"exhaustive search limited to N <= {EXHAUSTIVE_MAX_N}")
    return c.astype(np.int64).tobytes() in _reachable(N)
