"""Simulated Bell tests: spreadsheets, CHSH estimates, violation frequency, couplings."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ContractError, InputError, InvariantViolation, StatisticalError
from .models import LRHVM, HiddenVariableModel
from .sheets import (PAIR_INDEX, PAIR_NAMES, Design, PairSheet, QuadrupleSheet,
                     chsh_value)
from .quantum import CHSH_SIGNS
from .streams import blocks, parallel_map, substream

QUAD_BLOCK = 1 << 16


@dataclass(frozen=True)
class ChshReport:
    estimates: tuple[float, float, float, float]
    standard_errors: tuple[float, float, float, float]
    counts: tuple[int, int, int, int]
    S: float
    se_S: float

    @property
    def violated(self) -> bool:
        return abs(self.S) > 2

    def rows(self) -> list[list]:
        out = [[f"E({name})", e, se, n] for name, e, se, n in
               zip(PAIR_NAMES, self.estimates, self.standard_errors, self.counts)]
        out.append(["S", self.S, self.se_S, sum(self.counts)])
        return out


def _binomial_se(e: float, n: int) -> float:
    return math.sqrt(max(1.0 - e * e, 0.0) / n)


# ------------------------------------------------------------ pair experiments

def _pair_block(model: HiddenVariableModel, design: Design, seed: int, key: tuple, index: int,
                size: int):
    rng = substream(seed, "pairs", *key, index)
    x = rng.integers(0, 2, size=size).astype(np.int8)
    y = rng.integers(0, 2, size=size).astype(np.int8)
    a = np.empty(size, dtype=np.int8)
    b = np.empty(size, dtype=np.int8)
    for pair in design.pairs():
        mask = (x == pair.x) & (y == pair.y)
        k = int(mask.sum())
        if k:
            a[mask], b[mask], _ = model.sample(pair.theta_x, pair.theta_y, k, rng)
    return x, y, a, b


def run_pair_experiments(model: HiddenVariableModel, design: Design, n_per_pair: int, seed: int,
                         key: tuple = (), workers: int = 1) -> tuple[PairSheet, ...]:
    """Bell-test protocol: two fair label draws per trial, route to the matching sheet.

    Trials are generated in fixed-size blocks on their own substreams; a
    sheet stops accepting rows once it holds ``n_per_pair``.  The result
    depends only on ``(seed, key)``, never on ``workers``.
    """
    if n_per_pair < 1:
        raise InputError("n_per_pair must be >= 1")
    size = min(1 << 16, max(1024, 4 * n_per_pair + 512))
    filled = [0, 0, 0, 0]
    parts: list[list] = [[] for _ in range(4)]
    index = 0
    offset = 0
    while min(filled) < n_per_pair:
        batch = parallel_map(lambda i: _pair_block(model, design, seed, key, i, size),
                             range(index, index + max(1, workers)), workers)
        index += len(batch)
        for x, y, a, b in batch:
            trial = np.arange(offset, offset + size)
            offset += size
            for p, (i, j) in enumerate(PAIR_INDEX):
                need = n_per_pair - filled[p]
                if need <= 0:
                    continue
                sel = np.flatnonzero((x == i) & (y == j))[:need]
                parts[p].append((trial[sel], a[sel], b[sel]))
                filled[p] += len(sel)
            if min(filled) >= n_per_pair:
                break
    sheets = []
    for pair, chunks in zip(design.pairs(), parts):
        t = np.concatenate([c[0] for c in chunks])
        sheets.append(PairSheet(pair, np.concatenate([c[1] for c in chunks]),
                                np.concatenate([c[2] for c in chunks]), t))
    return tuple(sheets)


def run_counterfactual_experiment(model: HiddenVariableModel, design: Design, n: int, seed: int,
                                  workers: int = 1) -> QuadrupleSheet:
    """One lambda per row, all four setting outcomes evaluated on it."""
    if not getattr(model, "counterfactually_definite", False) or not isinstance(model, LRHVM):
        raise ContractError(f"quadruples undefined for this family ({model.family.value})")
    if n < 1:
        raise InputError("n must be >= 1")

    def block(args):
        k, (start, stop) = args
        lam = model.draw_lambda(stop - start, substream(seed, "quadruples", k))
        return model.quadruples(lam, *design.angles)

    parts = parallel_map(block, list(enumerate(blocks(n, QUAD_BLOCK))), workers)
    cols = [np.concatenate([p[c] for p in parts]) for c in range(4)]
    return QuadrupleSheet(*cols)


# ------------------------------------------------------------ CHSH estimates

def chsh_from_quadruples(sheet: QuadrupleSheet) -> ChshReport:
    """All four correlations from the same rows; |S| <= 2 holds identically."""
    if sheet.n < 1:
        raise InputError("empty quadruple sheet")
    a, ap, b, bp = (c.astype(np.int64) for c in (sheet.a, sheet.a_prime, sheet.b, sheet.b_prime))
    products = (a * b, a * bp, ap * b, ap * bp)
    # integer sums keep S exact
    sums = [int(p.sum()) for p in products]
    s_rows = sum(sgn * p for sgn, p in zip(CHSH_SIGNS, products))
    total = int(s_rows.sum())
    if abs(total) > 2 * sheet.n:
        raise InvariantViolation("quadruple CHSH sum exceeds 2N")
    e = tuple(v / sheet.n for v in sums)
    S = total / sheet.n
    se_s = float(np.std(s_rows) / math.sqrt(sheet.n))
    return ChshReport(e, tuple(_binomial_se(v, sheet.n) for v in e), (sheet.n,) * 4, S, se_s)


def _ordered_sheets(sheets) -> list[PairSheet]:
    sheets = list(sheets)
    if len(sheets) != 4:
        raise InputError(f"need exactly four pair sheets, got {len(sheets)}")
    by_index = {}
    for s in sheets:
        if s.setting.index in by_index:
            raise InputError(f"duplicate setting pair {s.setting.name}")
        by_index[s.setting.index] = s
    return [by_index[i] for i in range(4)]


def chsh_from_pairs(sheets) -> ChshReport:
    """One correlation per sheet; plug-in binomial errors combined in quadrature."""
    ordered = _ordered_sheets(sheets)
    for s in ordered:
        if s.n < 1:
            raise InputError(f"sheet {s.setting.name} is empty")
    e = tuple(s.mean_ab() for s in ordered)
    se = tuple(_binomial_se(v, s.n) for v, s in zip(e, ordered))
    S = chsh_value(e)
    return ChshReport(e, se, tuple(s.n for s in ordered), S, math.sqrt(sum(v * v for v in se)))


def bootstrap_se(sheets, resamples: int, seed: int) -> float:
    """Nonparametric bootstrap standard error of S from four pair sheets."""
    ordered = _ordered_sheets(sheets)
    rng = substream(seed, "bootstrap")
    draws = np.zeros(resamples)
    for sgn, s in zip(CHSH_SIGNS, ordered):
        prod = s.a.astype(np.int64) * s.b
        idx = rng.integers(0, s.n, size=(resamples, s.n))
        draws += sgn * prod[idx].mean(axis=1)
    return float(np.std(draws, ddof=1))


# ------------------------------------------------------------ violation frequency

def boundary_setup() -> tuple[LRHVM, Design]:
    """Sign model at the standard angles: |S_true| = 2 with nonzero per-sheet variance."""
    return LRHVM(), Design.standard()


def interior_setup() -> tuple[LRHVM, Design]:
    """Sign model at angles where |S_true| = 1."""
    return LRHVM(), Design(0.0, math.pi / 2, math.pi / 4, 5 * math.pi / 4)


@dataclass(frozen=True)
class ViolationReport:
    violations: int
    replications: int
    n_per_pair: int
    ci_low: float
    ci_high: float
    mean_S: float

    @property
    def fraction(self) -> float:
        return self.violations / self.replications


def violation_frequency(model: HiddenVariableModel, design: Design, n_per_pair: int,
                        replications: int, seed: int, workers: int = 1,
                        confidence: float = 0.95) -> ViolationReport:
    """Fraction of independent four-sheet experiments with |S-hat| > 2."""
    if replications < 100:
        raise InputError("replications must be >= 100")

    def one(r):
        sheets = run_pair_experiments(model, design, n_per_pair, seed, key=("violation", r))
        return chsh_from_pairs(sheets).S

    s_values = np.array(parallel_map(one, range(replications), workers))
    k = int(np.sum(np.abs(s_values) > 2))
    ci = stats.binomtest(k, replications).proportion_ci(confidence_level=confidence)
    return ViolationReport(k, replications, n_per_pair, float(ci.low), float(ci.high),
                           float(s_values.mean()))


# ------------------------------------------------------------ probabilistic coupling

@dataclass(frozen=True)
class EqualityTest:
    name: str
    setting_pair: str
    observed: float
    expected: float
    z: float
    p_value: float
    failed: bool


@dataclass(frozen=True)
class CouplingReport:
    alpha: float
    tests: tuple[EqualityTest, ...]
    reliable: bool = True
    annotation: str = ""

    @property
    def model_tests(self) -> tuple[EqualityTest, ...]:
        return tuple(t for t in self.tests if not t.name.startswith("cross"))

    @property
    def marginal_tests(self) -> tuple[EqualityTest, ...]:
        return tuple(t for t in self.tests if t.name.startswith("cross"))

    @property
    def failures(self) -> tuple[EqualityTest, ...]:
        return tuple(t for t in self.tests if t.failed)

    @property
    def passed(self) -> bool:
        return not self.failures


def _z_test(observed: float, expected: float, var: float) -> tuple[float, float]:
    if var <= 0:
        return (0.0, 1.0) if observed == expected else (math.copysign(math.inf, observed - expected), 0.0)
    z = (observed - expected) / math.sqrt(var)
    return z, float(2 * stats.norm.sf(abs(z)))


MIN_COUPLING_N = 30


def coupling_check(model: HiddenVariableModel, sheets, alpha: float = 0.01, guard=None,
                   mc_n: int = 1_000_000, seed: int = 0) -> CouplingReport:
    """Test the model's single-arm means and correlations against four pair sheets.

    Per setting pair: E(A), E(B), E(AB) against the model (12 equalities).
    Across contexts: E(A) on (x,y) vs (x,y'), E(A') on (x',y) vs (x',y'),
    E(B) on (x,y) vs (x',y), E(B') on (x,y') vs (x',y') (4 equalities).
    An equality fails when its two-sided p-value is below alpha/16
    (Bonferroni).  A failed homogeneity ``guard`` marks the report unreliable.
    """
    if not 0 < alpha < 1:
        raise InputError("alpha must lie in (0, 1)")
    ordered = _ordered_sheets(sheets)
    for s in ordered:
        if s.n < MIN_COUPLING_N:
            raise StatisticalError(f"sheet {s.setting.name} has {s.n} rows; normal tests at "
                                   f"alpha={alpha} are unreliable", required=MIN_COUPLING_N)
    m = 16
    level = alpha / m
    tests = []
    for k, s in enumerate(ordered):
        tx, ty = s.setting.theta_x, s.setting.theta_y
        if not (math.isfinite(tx) and math.isfinite(ty)):
            raise InputError(f"sheet {s.setting.name} carries no analyser angles")
        mom = model.moments(tx, ty)
        if mom is None:
            ea, eb, eab, mc_var = _mc_moments(model, tx, ty, mc_n, seed, k)
        else:
            (ea, eb, eab), mc_var = mom, (0.0, 0.0, 0.0)
        a = s.a.astype(np.int64)
        b = s.b.astype(np.int64)
        for name, obs, exp, extra in (("mean_A", a.mean(), ea, mc_var[0]),
                                      ("mean_B", b.mean(), eb, mc_var[1]),
                                      ("mean_AB", (a * b).mean(), eab, mc_var[2])):
            var = max(1 - exp * exp, 0.0) / s.n + extra
            z, p = _z_test(float(obs), float(exp), var)
            tests.append(EqualityTest(name, s.setting.name, float(obs), float(exp), z, p, p < level))

    for name, (i, j), arm in (("cross_A", (0, 1), "a"), ("cross_A'", (2, 3), "a"),
                              ("cross_B", (0, 2), "b"), ("cross_B'", (1, 3), "b")):
        s1, s2 = ordered[i], ordered[j]
        m1 = float(getattr(s1, arm).mean())
        m2 = float(getattr(s2, arm).mean())
        var = (1 - m1 * m1) / s1.n + (1 - m2 * m2) / s2.n
        z, p = _z_test(m1, m2, var)
        tests.append(EqualityTest(name, f"{s1.setting.name}|{s2.setting.name}", m1, m2, z, p, p < level))

    reliable, note = True, ""
    if guard is not None and not guard.passed:
        reliable = False
        note = "sample homogeneity guard failed: significance levels are unreliable"
    return CouplingReport(alpha, tuple(tests), reliable, note)


def _mc_moments(model, tx, ty, n, seed, k):
    a, b, _ = model.sample(tx, ty, n, substream(seed, "coupling-mc", k))
    a = a.astype(np.int64)
    b = b.astype(np.int64)
    means = (a.mean(), b.mean(), (a * b).mean())
    var = tuple(max(1 - v * v, 0.0) / n for v in means)
    return (*map(float, means), var)
