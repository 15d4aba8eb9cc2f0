"""Purity, homogeneity and fine-structure tests for outcome time series.

Repeated runs of an experiment are "pure" when they look like draws from one
statistical population: symbol and block frequencies agree across runs, large
sub-ensembles of one run agree with each other, and the waiting times between
symbol changes have one distribution.  Fine structure is looked for with the
sample autocorrelation, a normalised periodogram and the Wald-Wolfowitz runs
test.  Every verdict combines its p-values with a Bonferroni correction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import InputError, StatisticalError
from .streams import substream

SUBENSEMBLE_FRACTION = 0.2
SUBENSEMBLE_MIN = 500
GUARD_SEGMENTS = 5


@dataclass
class RunSeries:
    """One run's ordered outcomes over a declared finite alphabet."""

    outcomes: np.ndarray
    run_id: int = 0
    alphabet: tuple = (1, -1)
    experiment: str = ""
    system: str = ""

    def __post_init__(self):
        self.outcomes = np.asarray(self.outcomes)
        if self.outcomes.ndim != 1 or self.outcomes.size == 0:
            raise InputError("a run needs a non-empty one-dimensional outcome sequence")
        self.alphabet = tuple(self.alphabet)
        if len(set(self.alphabet)) != len(self.alphabet) or len(self.alphabet) < 2:
            raise InputError("alphabet must list at least two distinct symbols")
        if not np.all(np.isin(self.outcomes, self.alphabet)):
            bad = sorted(set(self.outcomes.tolist()) - set(self.alphabet))
            raise InputError(f"outcomes {bad[:5]} are not in the alphabet {self.alphabet}")

    def __len__(self) -> int:
        return len(self.outcomes)

    def codes(self) -> np.ndarray:
        """Outcomes as integer codes 0..len(alphabet)-1 in alphabet order."""
        lookup = {s: i for i, s in enumerate(self.alphabet)}
        return np.array([lookup[v] for v in self.outcomes.tolist()], dtype=np.int64)


def read_run_series(source, run_id: int = 0, alphabet=(1, -1)) -> RunSeries:
    """Parse a ``trial,outcome`` CSV (``#`` lines are comments)."""
    f = open(source, newline="") if not hasattr(source, "read") else source
    try:
        lines = [ln for ln in f if ln.strip() and not ln.lstrip().startswith("#")]
    finally:
        if f is not source:
            f.close()
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["trial", "outcome"]:
        raise InputError(f"expected CSV header trial,outcome, got {header}")
    rows = []
    for row in reader:
        try:
            rows.append((int(row[0]), int(row[1])))
        except (ValueError, IndexError):
            raise InputError(f"bad run series row {row}") from None
    rows.sort()
    return RunSeries(np.array([o for _, o in rows]), run_id, alphabet)


def run_series_rows(series: RunSeries) -> list[list]:
    return [[i, int(v)] for i, v in enumerate(series.outcomes)]


# ------------------------------------------------------------ test primitives

@dataclass(frozen=True)
class StatResult:
    name: str
    statistic: float
    p_value: float
    dof: float = math.nan
    detail: str = ""

    def rejects(self, level: float) -> bool:
        return self.p_value < level


def _table_chi2(table: np.ndarray) -> tuple[float, float, int]:
    """Chi-square homogeneity test on a rows x categories table (empty columns dropped)."""
    t = np.asarray(table, dtype=float)
    t = t[:, t.sum(axis=0) > 0]
    t = t[t.sum(axis=1) > 0]
    if t.shape[0] < 2 or t.shape[1] < 2:
        return 0.0, 1.0, 0
    chi2, p, dof, _ = stats.chi2_contingency(t, correction=False)
    return float(chi2), float(p), int(dof)


def _counts(codes: np.ndarray, k: int) -> np.ndarray:
    return np.bincount(codes, minlength=k)


def _block_codes(codes: np.ndarray, k: int, m: int) -> np.ndarray:
    n = len(codes) // m
    blocks = codes[: n * m].reshape(n, m)
    return blocks @ (k ** np.arange(m - 1, -1, -1))


def run_lengths(codes: np.ndarray) -> np.ndarray:
    """Lengths of maximal constant stretches (waiting times between symbol changes)."""
    change = np.flatnonzero(np.diff(codes) != 0)
    edges = np.concatenate([[0], change + 1, [len(codes)]])
    return np.diff(edges)


def _jittered(lengths: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # integer run lengths plus U(0, 1) noise: continuous, order-preserving between
    # distinct lengths, so the two-sample KS test is exact instead of conservative
    return lengths + rng.uniform(0.0, 1.0, size=len(lengths))


def _check_runs(runs: Sequence[RunSeries], min_len: int) -> None:
    if len(runs) < 2:
        raise StatisticalError("purity tests need at least two runs", required=2)
    alph = runs[0].alphabet
    for r in runs:
        if tuple(r.alphabet) != tuple(alph):
            raise InputError("all runs must share one alphabet")
        if len(r) < min_len:
            raise StatisticalError(f"run {r.run_id} has {len(r)} trials; runs are too short",
                                   required=min_len)


def subensemble_size(n: int) -> int:
    """Segment length used for the rich sub-ensemble comparison of an n-trial run."""
    size = max(math.ceil(SUBENSEMBLE_FRACTION * n), SUBENSEMBLE_MIN)
    if size > n // 2:
        size = n // 2
    return size


def subensemble_test(codes: np.ndarray, k: int, rng: np.random.Generator) -> StatResult:
    """Compare contiguous sub-ensembles of one run after a random circular shift.

    The run is rotated by a uniform random offset and cut into consecutive
    segments of ``subensemble_size(n)`` trials; the symbol counts of the
    segments are compared by chi-square.  Each segment is a rich sub-ensemble
    (>= 20% of the run and >= 500 trials when the run allows it).
    """
    n = len(codes)
    size = subensemble_size(n)
    parts = n // size
    shifted = np.roll(codes, -int(rng.integers(0, n)))
    table = np.stack([_counts(shifted[i * size:(i + 1) * size], k) for i in range(parts)])
    chi2, p, dof = _table_chi2(table)
    return StatResult("subensemble", chi2, p, dof, f"{parts} segments of {size}")


# ------------------------------------------------------------ purity

@dataclass
class PurityReport:
    alpha: float
    block_length: int
    resamples: int
    subensemble_size: dict
    tests: list = field(default_factory=list)

    @property
    def n_tests(self) -> int:
        return len(self.tests)

    @property
    def level(self) -> float:
        return self.alpha / self.n_tests

    @property
    def rejected(self) -> bool:
        return any(t.p_value < self.level for t in self.tests)

    @property
    def verdict(self) -> str:
        return "reject" if self.rejected else "pass"

    def test(self, name: str) -> StatResult:
        for t in self.tests:
            if t.name == name:
                return t
        raise KeyError(name)

    def rows(self) -> list[list]:
        return [[t.name, repr(t.statistic), repr(t.p_value), t.dof, t.detail, t.p_value < self.level]
                for t in self.tests]


PURITY_HEADER = ["test", "statistic", "p_value", "dof", "detail", "rejected_bonferroni"]


def purity_test(runs: Sequence[RunSeries], block_length: int = 2, resamples: int = 1,
                alpha: float = 0.01, seed: int = 0) -> PurityReport:
    """k-sample purity tests across runs plus sub-ensemble checks within runs.

    Tests: chi-square on symbol frequencies, chi-square on non-overlapping
    m-block frequencies, two-sample KS on run lengths (each pair of runs) and
    ``resamples`` sub-ensemble comparisons per run.  The verdict rejects when
    any p-value is below alpha / (number of tests).
    """
    m = int(block_length)
    if m < 1:
        raise InputError("block length must be >= 1")
    if resamples < 1:
        raise InputError("resamples must be >= 1")
    if not 0 < alpha < 1:
        raise InputError("alpha must lie in (0, 1)")
    _check_runs(runs, 100 * m)
    k = len(runs[0].alphabet)
    codes = [r.codes() for r in runs]

    report = PurityReport(alpha, m, resamples, {r.run_id: subensemble_size(len(r)) for r in runs})
    chi2, p, dof = _table_chi2(np.stack([_counts(c, k) for c in codes]))
    report.tests.append(StatResult("symbol", chi2, p, dof))
    if m > 1:
        table = np.stack([_counts(_block_codes(c, k, m), k ** m) for c in codes])
        chi2, p, dof = _table_chi2(table)
        report.tests.append(StatResult(f"block{m}", chi2, p, dof))
    for i in range(len(runs)):
        for j in range(i + 1, len(runs)):
            rng = substream(seed, "purity-ks", i, j)
            li = _jittered(run_lengths(codes[i]), rng)
            lj = _jittered(run_lengths(codes[j]), rng)
            res = stats.ks_2samp(li, lj)
            report.tests.append(StatResult(f"runlength_ks[{runs[i].run_id},{runs[j].run_id}]",
                                           float(res.statistic), float(res.pvalue)))
    for i, c in enumerate(codes):
        for r in range(resamples):
            t = subensemble_test(c, k, substream(seed, "purity-sub", i, r))
            report.tests.append(StatResult(f"subensemble[{runs[i].run_id}#{r}]", t.statistic,
                                           t.p_value, t.dof, t.detail))
    return report


# ------------------------------------------------------------ homogeneity guard

@dataclass(frozen=True)
class GuardResult:
    passed: bool
    statistic: float
    p_value: float
    dof: int
    alpha: float
    segments: int

    def lines(self) -> list[str]:
        state = "pass" if self.passed else "FAIL"
        return [f"homogeneity guard: {state} (chi2={self.statistic:.4g}, dof={self.dof}, "
                f"p={self.p_value:.4g}, alpha={self.alpha}, {self.segments} segments per run)"]


def homogeneity_guard(runs: Sequence[RunSeries], alpha: float = 0.01,
                      segments: int = GUARD_SEGMENTS) -> GuardResult:
    """Cheap frequency-only pre-test across runs and across contiguous stretches of each run.

    Every run is cut into ``segments`` consecutive pieces and the symbol counts
    of all pieces of all runs are compared in one chi-square table, so both
    run-to-run differences and drift inside a run fail the guard.
    """
    if not 0 < alpha < 1:
        raise InputError("alpha must lie in (0, 1)")
    _check_runs(runs, 100)
    k = len(runs[0].alphabet)
    rows = []
    for r in runs:
        for piece in np.array_split(r.codes(), segments):
            rows.append(_counts(piece, k))
    chi2, p, dof = _table_chi2(np.stack(rows))
    return GuardResult(p >= alpha, chi2, p, dof, alpha, segments)


# ------------------------------------------------------------ fine structure

def _exact_int_corr(x: list[int], y: list[int]) -> float:
    n = len(x)
    sx, sy = sum(x), sum(y)
    sxy = sum(a * b for a, b in zip(x, y))
    sxx = sum(a * a for a in x)
    syy = sum(b * b for b in y)
    num = n * sxy - sx * sy
    vx = n * sxx - sx * sx
    vy = n * syy - sy * sy
    if vx <= 0 or vy <= 0:
        return math.nan
    prod = vx * vy
    root = math.isqrt(prod)
    if root * root == prod:
        return float(Fraction(num, root))
    return num / math.sqrt(prod)


def lagged_correlation(x: np.ndarray, lag: int) -> float:
    """Pearson correlation of (x_t, x_{t+lag}); exact rational arithmetic for integer data."""
    if lag == 0:
        return 1.0
    a, b = x[:-lag], x[lag:]
    if np.issubdtype(x.dtype, np.integer):
        return _exact_int_corr(a.tolist(), b.tolist())
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return math.nan
    return float(np.corrcoef(a, b)[0, 1])


def runs_test(x: np.ndarray) -> tuple[float, float]:
    """Wald-Wolfowitz runs test; two-symbol series use the symbols, others split at the median."""
    values = np.unique(x)
    if len(values) == 2:
        hi = x == values[1]
    else:
        med = np.median(x)
        keep = x != med
        hi = x[keep] > med
    n1 = int(np.count_nonzero(hi))
    n2 = len(hi) - n1
    if n1 == 0 or n2 == 0:
        return math.nan, math.nan
    n = n1 + n2
    runs = 1 + int(np.count_nonzero(hi[1:] != hi[:-1]))
    mean = 2 * n1 * n2 / n + 1
    var = 2 * n1 * n2 * (2 * n1 * n2 - n) / (n * n * (n - 1))
    if var <= 0:
        return math.nan, math.nan
    z = (runs - mean) / math.sqrt(var)
    return z, float(2 * stats.norm.sf(abs(z)))


def periodogram(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fourier frequencies j/n (j = 1..floor((n-1)/2)) and power normalised by the variance.

    For white noise each normalised ordinate is approximately Exp(1).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    xc = x - x.mean()
    var = float(np.mean(xc * xc))
    j = np.arange(1, (n - 1) // 2 + 1)
    coef = np.fft.rfft(xc)[j]
    power = (coef.real ** 2 + coef.imag ** 2) / n / var
    return j / n, power


@dataclass
class FineStructureReport:
    n: int
    alpha: float
    max_lag: int
    degenerate: bool = False
    message: str = ""
    symbol_frequency: dict = field(default_factory=dict)
    acf: list = field(default_factory=list)
    acf_band: list = field(default_factory=list)
    acf_flags: list = field(default_factory=list)
    acf_p: float = math.nan
    frequencies: np.ndarray | None = None
    power: np.ndarray | None = None
    power_threshold: float = math.nan
    power_flags: list = field(default_factory=list)
    peak_frequency: float = math.nan
    periodogram_p: float = math.nan
    runs_z: float = math.nan
    runs_p: float = math.nan

    @property
    def acf_rejects(self) -> bool:
        return self.acf_p < self.alpha

    @property
    def periodogram_rejects(self) -> bool:
        return self.periodogram_p < self.alpha

    @property
    def runs_rejects(self) -> bool:
        return self.runs_p < self.alpha

    def lines(self) -> list[str]:
        if self.degenerate:
            return [f"n={self.n}: {self.message}"]
        out = [f"n={self.n} alpha={self.alpha} lags=1..{self.max_lag}",
               "symbol frequencies: " + ", ".join(f"{k}={v:.6g}" for k, v in self.symbol_frequency.items())]
        out.append(f"autocorrelation flags at lags {self.acf_flags} (Bonferroni p={self.acf_p:.4g})")
        out.append(f"periodogram peak at frequency {self.peak_frequency:.6g}, "
                   f"{len(self.power_flags)} ordinates above {self.power_threshold:.4g} (p={self.periodogram_p:.4g})")
        out.append(f"runs test z={self.runs_z:.4g} p={self.runs_p:.4g}")
        return out

    def rows(self) -> list[list]:
        if self.degenerate:
            return [["degenerate", "", "", "", self.message]]
        rows = [["acf", k, repr(self.acf[k]), repr(self.acf_band[k]), k in self.acf_flags]
                for k in range(len(self.acf))]
        rows += [["periodogram", repr(float(f)), repr(float(p)), repr(self.power_threshold),
                  bool(p > self.power_threshold)] for f, p in zip(self.frequencies, self.power)]
        rows.append(["runs", "", repr(self.runs_z), repr(self.runs_p), self.runs_rejects])
        return rows


FINE_HEADER = ["kind", "lag_or_frequency", "value", "threshold", "flagged"]


def fine_structure(series: RunSeries, max_lag: int = 20, alpha: float = 0.01) -> FineStructureReport:
    """Autocorrelation, periodogram and runs test for one run.

    Lag k is flagged when |r_k| exceeds z_{1-alpha/2} / sqrt(n - k); the
    autocorrelation verdict uses the Bonferroni level alpha / max_lag.  The
    periodogram threshold c = -ln(1 - (1 - alpha)^(1/K)) makes the largest of
    K white-noise ordinates exceed c with probability alpha.
    """
    if max_lag < 1:
        raise InputError("max_lag must be >= 1")
    if not 0 < alpha < 1:
        raise InputError("alpha must lie in (0, 1)")
    x = np.asarray(series.outcomes)
    n = len(x)
    if n < 10 * max_lag:
        raise StatisticalError(f"series of length {n} too short for {max_lag} lags", required=10 * max_lag)
    report = FineStructureReport(n, alpha, max_lag)
    report.symbol_frequency = {s: float(np.mean(x == s)) for s in series.alphabet}
    if np.all(x == x[0]):
        report.degenerate = True
        report.message = "constant series: autocorrelation, periodogram and runs test are undefined"
        return report

    z = stats.norm.ppf(1 - alpha / 2)
    acf, band, pvals = [1.0], [0.0], []
    for k in range(1, max_lag + 1):
        r = lagged_correlation(x, k)
        acf.append(r)
        band.append(z / math.sqrt(n - k))
        if math.isnan(r):
            pvals.append(1.0)
        else:
            pvals.append(float(2 * stats.norm.sf(abs(r) * math.sqrt(n - k))))
    report.acf = acf
    report.acf_band = band
    report.acf_flags = [k for k in range(1, max_lag + 1) if not math.isnan(acf[k]) and abs(acf[k]) > band[k]]
    report.acf_p = min(1.0, max_lag * min(pvals))

    freqs, power = periodogram(x)
    K = len(power)
    report.frequencies, report.power = freqs, power
    report.power_threshold = float(-math.log1p(-((1 - alpha) ** (1 / K))))
    report.power_flags = [float(f) for f, p in zip(freqs, power) if p > report.power_threshold]
    top = int(np.argmax(power))
    report.peak_frequency = float(freqs[top])
    # P(max of K Exp(1) ordinates > observed max)
    with np.errstate(divide="ignore"):
        report.periodogram_p = float(-np.expm1(K * np.log1p(-np.exp(-power[top]))))
    report.runs_z, report.runs_p = runs_test(x)
    return report
