"""Hidden-variable model families and the quantum sampler.

All samplers are vectorised: ``model.sample(theta_x, theta_y, n, rng)``
returns outcome arrays ``a, b`` (int8, values +1/-1) and, on request, a
hidden trace ``{"lambda1", "lambda2", "mu_x", "mu_y"}`` of per-trial arrays.

Reference instances (sign model, Malus model, shared-lambda rotational
kernel) are our own constructions chosen because each has a closed-form
correlation.  Custom instances are built by passing callables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, ClassVar, Literal, Protocol

import numpy as np
from scipy import stats

from . import quantum
from .errors import ConfigurationError, ContractError, InputError, StatisticalError
from .streams import substream

TWO_PI = 2 * math.pi

Arm = Literal["A", "B"]
HiddenTrace = dict[str, np.ndarray]


class Family(str, Enum):
    LRHVM = "lrhvm"
    SHVM = "shvm"
    CHVM = "chvm"
    ROT_CHVM = "rot_chvm"
    QUANTUM = "quantum"


def sign(x) -> np.ndarray:
    """Sign with sign(0) = +1."""
    return np.where(np.asarray(x) >= 0, 1, -1).astype(np.int8)


def _pm1(values, what: str) -> np.ndarray:
    arr = np.asarray(values)
    if not np.all((arr == 1) | (arr == -1)):
        raise ConfigurationError(f"{what} must return only +1 or -1")
    return arr.astype(np.int8)


# ------------------------------------------------------------ distributions

class Sampler(Protocol):
    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray: ...


@dataclass(frozen=True)
class Uniform:
    low: float = 0.0
    high: float = 1.0
    dim: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high) and self.high > self.low):
            raise ConfigurationError(f"bad uniform range [{self.low}, {self.high})")

    def sample(self, n, rng):
        shape = (n,) if self.dim == 1 else (n, self.dim)
        return rng.uniform(self.low, self.high, size=shape)


@dataclass(frozen=True)
class Discrete:
    """Finite distribution over rows of ``values``."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.shape[0] != probs.shape[0] or probs.ndim != 1:
            raise ConfigurationError("values and probs have different lengths")
        if np.any(probs < 0) or abs(probs.sum() - 1) > 1e-9:
            raise ConfigurationError(f"probabilities must be >= 0 and sum to 1 (sum={probs.sum()})")

    def sample(self, n, rng):
        values = np.asarray(self.values, dtype=float)
        idx = rng.choice(len(values), size=n, p=np.asarray(self.probs, dtype=float))
        return values[idx]


@dataclass(frozen=True)
class Shared:
    """Source emitting the same value to both arms: columns (lambda1, lambda2)."""

    base: Sampler

    def sample(self, n, rng):
        lam = np.asarray(self.base.sample(n, rng), dtype=float).reshape(n)
        return np.column_stack([lam, lam])


@dataclass(frozen=True)
class Fixed:
    """Point mass; ``value`` may be a scalar or a row."""

    value: tuple | float

    def sample(self, n, rng):
        v = np.atleast_1d(np.asarray(self.value, dtype=float))
        return np.tile(v, (n, 1)) if v.size > 1 else np.full(n, float(v[0]))


def _source_columns(source: Sampler, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    lam = np.asarray(source.sample(n, rng), dtype=float)
    if lam.shape != (n, 2):
        raise ConfigurationError(f"source must yield (n, 2) samples of (lambda1, lambda2), got {lam.shape}")
    return lam[:, 0], lam[:, 1]


# ------------------------------------------------------------ base class

@dataclass(frozen=True)
class TrialOutcome:
    a: int
    b: int
    hidden_trace: dict | None = None

    def __post_init__(self):
        if self.a not in (1, -1) or self.b not in (1, -1):
            raise InputError("outcomes must be +1 or -1")


class HiddenVariableModel:
    family: ClassVar[Family]
    counterfactually_definite: ClassVar[bool] = False

    def sample(self, theta_x: float, theta_y: float, n: int, rng: np.random.Generator,
               trace: bool = False) -> tuple[np.ndarray, np.ndarray, HiddenTrace | None]:
        raise NotImplementedError

    def expectation(self, theta_x: float, theta_y: float) -> float | None:
        """Closed-form E(A_x B_y), or None when unavailable."""
        return None

    def moments(self, theta_x: float, theta_y: float) -> tuple[float, float, float] | None:
        """Closed-form (E(A), E(B), E(AB)) for one setting pair, or None."""
        return None

    def trial(self, theta_x: float, theta_y: float, rng: np.random.Generator) -> TrialOutcome:
        a, b, tr = self.sample(theta_x, theta_y, 1, rng, trace=True)
        hidden = None if tr is None else {k: v[0] for k, v in tr.items()}
        return TrialOutcome(int(a[0]), int(b[0]), hidden)


def _fold(theta_xy: float) -> float:
    """|theta_xy| reduced to [0, pi]."""
    phi = abs(theta_xy) % TWO_PI
    return TWO_PI - phi if phi > math.pi else phi


# ------------------------------------------------------------ LRHVM

def lrhvm_outcomes(lam, theta, arm: Arm):
    """Reference sign model: A = sign cos(theta - lambda), B = -A at equal angles."""
    if arm == "A":
        out = sign(np.cos(np.asarray(theta) - lam))
    elif arm == "B":
        out = -sign(np.cos(np.asarray(theta) - lam))
    else:
        raise InputError(f"arm must be 'A' or 'B', got {arm!r}")
    return int(out) if np.ndim(out) == 0 else out.astype(np.int8)


def sawtooth(theta_xy: float) -> float:
    """Correlation of the reference sign model: -1 + 2|theta_xy|/pi on [0, pi]."""
    return -1 + 2 * _fold(theta_xy) / math.pi


@dataclass(frozen=True)
class LRHVM(HiddenVariableModel):
    """Outcomes fixed at the source by lambda.

    ``outcome_a(lam, theta)`` / ``outcome_b(lam, theta)`` default to the sign
    model; ``source`` defaults to lambda uniform on [0, 2 pi).
    """

    family: ClassVar[Family] = Family.LRHVM
    counterfactually_definite: ClassVar[bool] = True

    outcome_a: Callable | None = None
    outcome_b: Callable | None = None
    source: Sampler | None = None

    @property
    def is_reference(self) -> bool:
        return self.outcome_a is None and self.outcome_b is None and self.source is None

    def draw_lambda(self, n, rng):
        src = self.source or Uniform(0.0, TWO_PI)
        return np.asarray(src.sample(n, rng), dtype=float).reshape(n)

    def outcome(self, lam, theta, arm: Arm) -> np.ndarray:
        fn = self.outcome_a if arm == "A" else self.outcome_b
        if fn is None:
            return np.asarray(lrhvm_outcomes(lam, theta, arm), dtype=np.int8)
        return _pm1(fn(lam, theta), f"outcome_{arm.lower()}")

    def quadruples(self, lam, a, a_prime, b, b_prime):
        """All four setting outcomes for the same lambda values."""
        return (self.outcome(lam, a, "A"), self.outcome(lam, a_prime, "A"),
                self.outcome(lam, b, "B"), self.outcome(lam, b_prime, "B"))

    def sample(self, theta_x, theta_y, n, rng, trace=False):
        lam = self.draw_lambda(n, rng)
        a = self.outcome(lam, theta_x, "A")
        b = self.outcome(lam, theta_y, "B")
        tr = {"lambda1": lam, "lambda2": lam} if trace else None
        return a, b, tr

    def expectation(self, theta_x, theta_y):
        return sawtooth(theta_x - theta_y) if self.is_reference else None

    def moments(self, theta_x, theta_y):
        return (0.0, 0.0, sawtooth(theta_x - theta_y)) if self.is_reference else None


# ------------------------------------------------------------ SHVM

def shvm_outcome_probability(lam, theta, arm: Arm):
    """Malus-law probability of +1: cos^2 on arm A, sin^2 on arm B."""
    d = np.asarray(theta) - lam
    if arm == "A":
        return np.cos(d) ** 2
    if arm == "B":
        return np.sin(d) ** 2
    raise InputError(f"arm must be 'A' or 'B', got {arm!r}")


@dataclass(frozen=True)
class SHVM(HiddenVariableModel):
    """lambda fixes only outcome probabilities; outcomes conditionally independent."""

    family: ClassVar[Family] = Family.SHVM

    prob_a: Callable | None = None
    prob_b: Callable | None = None
    source: Sampler | None = None

    @property
    def is_reference(self) -> bool:
        return self.prob_a is None and self.prob_b is None and self.source is None

    def probability(self, lam, theta, arm: Arm) -> np.ndarray:
        fn = self.prob_a if arm == "A" else self.prob_b
        p = shvm_outcome_probability(lam, theta, arm) if fn is None else np.asarray(fn(lam, theta), float)
        if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
            raise ConfigurationError("outcome probabilities must lie in [0, 1]")
        return p

    def sample(self, theta_x, theta_y, n, rng, trace=False):
        src = self.source or Uniform(0.0, TWO_PI)
        lam = np.asarray(src.sample(n, rng), dtype=float).reshape(n)
        u = rng.random((2, n))
        a = np.where(u[0] < self.probability(lam, theta_x, "A"), 1, -1).astype(np.int8)
        b = np.where(u[1] < self.probability(lam, theta_y, "B"), 1, -1).astype(np.int8)
        tr = {"lambda1": lam, "lambda2": lam} if trace else None
        return a, b, tr

    def expectation(self, theta_x, theta_y):
        if not self.is_reference:
            return None
        return -math.cos(2 * (theta_x - theta_y)) / 2

    def moments(self, theta_x, theta_y):
        e = self.expectation(theta_x, theta_y)
        return None if e is None else (0.0, 0.0, e)


# ------------------------------------------------------------ contextual models

@dataclass(frozen=True)
class CHVM(HiddenVariableModel):
    """Contextual model: setting-independent source, setting-indexed instruments.

    ``source.sample`` yields (lambda1, lambda2) columns; ``instruments(theta_x,
    theta_y)`` returns a sampler of (mu_x, mu_y) columns; outcomes are
    ``outcome_a(theta_x, lambda1, mu_x)`` and ``outcome_b(theta_y, lambda2, mu_y)``.
    """

    family: ClassVar[Family] = Family.CHVM

    source: Sampler
    instruments: Callable[[float, float], Sampler]
    outcome_a: Callable
    outcome_b: Callable

    def sample(self, theta_x, theta_y, n, rng, trace=False):
        lam1, lam2 = _source_columns(self.source, n, rng)
        mu = np.asarray(self.instruments(theta_x, theta_y).sample(n, rng), dtype=float)
        if mu.shape != (n, 2):
            raise ConfigurationError(f"instrument sampler must yield (n, 2) samples, got {mu.shape}")
        mu_x, mu_y = mu[:, 0], mu[:, 1]
        a = _pm1(self.outcome_a(theta_x, lam1, mu_x), "outcome_a")
        b = _pm1(self.outcome_b(theta_y, lam2, mu_y), "outcome_b")
        tr = {"lambda1": lam1, "lambda2": lam2, "mu_x": mu_x, "mu_y": mu_y} if trace else None
        return a, b, tr


def chvm_trial(spec: CHVM, setting_pair: tuple[float, float], rng) -> TrialOutcome:
    if not isinstance(spec, CHVM):
        raise ContractError("chvm_trial requires a CHVM model")
    return spec.trial(*setting_pair, rng)


@dataclass(frozen=True)
class _ReferenceInstrumentX:
    theta_x: float

    def sample(self, n, rng):
        uv = rng.random((n, 2))
        return np.column_stack([np.full(n, self.theta_x), uv])


def reference_kernel(mu_x: np.ndarray, cos_xy: np.ndarray) -> np.ndarray:
    """Reference rotational kernel: carries (u, v) over and embeds cos(theta_xy)."""
    return np.column_stack([mu_x[:, 1], mu_x[:, 2], cos_xy])


def reference_outcome_a(theta_x, lam1, mu_x):
    return sign(mu_x[:, 1] - 0.5)


def reference_outcome_b(theta_y, lam2, mu_y):
    # mu_y = (theta_y, u, v, c)
    a_local = sign(mu_y[:, 1] - 0.5)
    flip = mu_y[:, 2] < (1 + mu_y[:, 3]) / 2
    return np.where(flip, -a_local, a_local).astype(np.int8)


REFERENCE_KERNEL_BOUNDS = ((0.0, 1.0), (0.0, 1.0), (-1.0, 1.0))


@dataclass(frozen=True)
class RotationalCHVM(HiddenVariableModel):
    """Contextual model with ``mu_y = f(mu_x, cos theta_xy)``.

    The instrument at B also records its own setting, so the trace column
    ``mu_y`` is ``(theta_y, f(mu_x, cos theta_xy))``.  ``mu_x`` comes from
    ``instrument_x(theta_x)``.  With all callables left as None the model is
    the reference instance: mu_x = (theta_x, u, v), a = sign(u - 1/2),
    b = -a when v < (1 + cos theta_xy)/2 else +a, which gives E = -cos theta_xy.
    """

    family: ClassVar[Family] = Family.ROT_CHVM

    kernel: Callable | None = None
    kernel_bounds: tuple | None = None
    instrument_x: Callable[[float], Sampler] | None = None
    outcome_a: Callable | None = None
    outcome_b: Callable | None = None
    source: Sampler | None = None

    @property
    def is_reference(self) -> bool:
        return all(v is None for v in (self.kernel, self.instrument_x, self.outcome_a,
                                       self.outcome_b, self.source))

    def _mu_y(self, mu_x, cos_xy):
        if self.kernel is None:
            out, bounds = reference_kernel(mu_x, cos_xy), REFERENCE_KERNEL_BOUNDS
        else:
            out, bounds = np.asarray(self.kernel(mu_x, cos_xy), dtype=float), self.kernel_bounds
        out = out.reshape(len(mu_x), -1)
        if not np.all(np.isfinite(out)):
            raise ConfigurationError("kernel returned non-finite values")
        if bounds is not None:
            if len(bounds) != out.shape[1]:
                raise ConfigurationError("kernel_bounds does not match kernel output width")
            for j, (lo, hi) in enumerate(bounds):
                if np.any((out[:, j] < lo) | (out[:, j] > hi)):
                    raise ConfigurationError(f"kernel output column {j} outside [{lo}, {hi}]")
        return out

    def sample(self, theta_x, theta_y, n, rng, trace=False):
        src = self.source or Shared(Uniform(0.0, TWO_PI))
        lam1, lam2 = _source_columns(src, n, rng)
        inst = (self.instrument_x or _ReferenceInstrumentX)(theta_x)
        mu_x = np.asarray(inst.sample(n, rng), dtype=float).reshape(n, -1)
        cos_xy = np.full(n, math.cos(theta_x - theta_y))
        mu_y = np.column_stack([np.full(n, float(theta_y)), self._mu_y(mu_x, cos_xy)])
        a = _pm1((self.outcome_a or reference_outcome_a)(theta_x, lam1, mu_x), "outcome_a")
        b = _pm1((self.outcome_b or reference_outcome_b)(theta_y, lam2, mu_y), "outcome_b")
        tr = {"lambda1": lam1, "lambda2": lam2, "mu_x": mu_x, "mu_y": mu_y} if trace else None
        return a, b, tr

    def expectation(self, theta_x, theta_y):
        return -math.cos(theta_x - theta_y) if self.is_reference else None

    def moments(self, theta_x, theta_y):
        e = self.expectation(theta_x, theta_y)
        return None if e is None else (0.0, 0.0, e)


def rotational_chvm_trial(spec: RotationalCHVM, setting_pair: tuple[float, float], rng) -> TrialOutcome:
    if not isinstance(spec, RotationalCHVM):
        raise ContractError("rotational_chvm_trial requires a RotationalCHVM model")
    return spec.trial(*setting_pair, rng)


# ------------------------------------------------------------ quantum sampler

_CELLS = ((1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass(frozen=True)
class QuantumModel(HiddenVariableModel):
    """Samples outcome pairs from the exact joint probabilities of ``state``."""

    family: ClassVar[Family] = Family.QUANTUM

    state: quantum.QuantumState = field(default_factory=quantum.singlet_state)

    def probabilities(self, theta_x, theta_y) -> np.ndarray:
        table = quantum.joint_probabilities(self.state, theta_x, theta_y)
        p = np.array([table[c] for c in _CELLS])
        return p / p.sum()

    def sample(self, theta_x, theta_y, n, rng, trace=False):
        idx = rng.choice(4, size=n, p=self.probabilities(theta_x, theta_y))
        cells = np.array(_CELLS, dtype=np.int8)
        return cells[idx, 0], cells[idx, 1], None

    def expectation(self, theta_x, theta_y):
        return quantum.correlation(self.state, theta_x, theta_y)

    def moments(self, theta_x, theta_y):
        p = self.probabilities(theta_x, theta_y)
        cells = np.array(_CELLS, dtype=float)
        return (float(p @ cells[:, 0]), float(p @ cells[:, 1]), self.expectation(theta_x, theta_y))


ModelSpec = LRHVM | SHVM | CHVM | RotationalCHVM | QuantumModel


def analytic_expectation(spec: HiddenVariableModel, theta_x: float, theta_y: float) -> float | None:
    """Closed-form correlation, or None ("unavailable") for custom instances."""
    return spec.expectation(theta_x, theta_y)


def monte_carlo_expectation(spec: HiddenVariableModel, theta_x: float, theta_y: float,
                            n: int, seed: int) -> tuple[float, float]:
    """(E-hat, standard error) from ``n`` simulated trials."""
    a, b, _ = spec.sample(theta_x, theta_y, n, substream(seed, "mc-expectation"))
    prod = a.astype(np.int64) * b
    e = float(prod.mean())
    return e, math.sqrt(max(1 - e * e, 0.0) / n)


def model_from_name(name: str) -> HiddenVariableModel:
    """Reference instance for a family name."""
    try:
        family = Family(name.lower().replace("-", "_"))
    except ValueError:
        raise ConfigurationError(f"unknown model family {name!r}") from None
    if family is Family.CHVM:
        raise ConfigurationError("CHVM has no reference instance; construct it in Python")
    return {Family.LRHVM: LRHVM, Family.SHVM: SHVM, Family.ROT_CHVM: RotationalCHVM,
            Family.QUANTUM: QuantumModel}[family]()


# ------------------------------------------------------------ statistical independence

@dataclass(frozen=True)
class VariableDivergence:
    name: str
    statistic: float
    dof: int
    p_value: float
    total_variation: float
    dependent: bool


@dataclass(frozen=True)
class IndependenceReport:
    family: Family
    settings: tuple
    n_per_pair: int
    bins: int
    alpha: float
    variables: tuple[VariableDivergence, ...]
    recovery_variables: tuple[str, ...]
    recovery_accuracy: float
    chance_accuracy: float

    @property
    def measurement_independent(self) -> bool:
        """No source variable lambda depends on the settings."""
        return not any(v.dependent for v in self.variables if v.name.startswith("lambda"))

    @property
    def setting_recoverable(self) -> bool:
        return self.recovery_accuracy == 1.0

    @property
    def taxonomy(self) -> str:
        contextual = any(v.dependent for v in self.variables)
        if not contextual:
            return "measurement-independent (LRHVM/SHVM/LHVM class)"
        if self.measurement_independent:
            return "contextual: instrument variables depend on settings"
        return "statistical independence violated: P(lambda | x, y) != P(lambda)"


def _trace_columns(trace: HiddenTrace) -> dict[str, np.ndarray]:
    cols = {}
    for key, arr in trace.items():
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 1:
            cols[key] = arr
        else:
            for j in range(arr.shape[1]):
                cols[f"{key}[{j}]"] = arr[:, j]
    return cols


def _discretize(values: np.ndarray, bins: int) -> np.ndarray:
    uniq = np.unique(values)
    if len(uniq) <= bins:
        return np.searchsorted(uniq, values)
    lo, hi = values.min(), values.max()
    edges = np.linspace(lo, hi, bins + 1)[1:-1]
    return np.searchsorted(edges, values, side="right")


def statistical_independence_check(spec: HiddenVariableModel, settings, n_per_pair: int = 100_000,
                                   seed: int = 0, bins: int = 16, alpha: float = 1e-3) -> IndependenceReport:
    """Compare hidden-variable distributions across setting pairs.

    Each trace component gets a chi-square homogeneity test over the setting
    pairs.  A naive-Bayes classifier trained on half of the trials tries to
    recover the setting pair from the instrument variables (or from lambda
    when the model has none); accuracy 1.0 means the settings are a
    deterministic function of the hidden event.
    """
    settings = tuple((float(x), float(y)) for x, y in settings)
    if len(settings) < 2:
        raise InputError("need at least two setting pairs")
    if n_per_pair < 5 * bins:
        raise StatisticalError(f"{n_per_pair} trials per pair is too few for {bins} bins",
                               required=5 * bins)
    traces = []
    for k, (tx, ty) in enumerate(settings):
        _, _, tr = spec.sample(tx, ty, n_per_pair, substream(seed, "independence", k), trace=True)
        if tr is None:
            raise ContractError(f"{spec.family.value} model exposes no hidden trace")
        traces.append(_trace_columns(tr))

    names = list(traces[0])
    labels = np.repeat(np.arange(len(settings)), n_per_pair)
    binned = {}
    variables = []
    for name in names:
        pooled = np.concatenate([t[name] for t in traces])
        codes = _discretize(pooled, bins)
        binned[name] = codes
        k = codes.max() + 1
        table = np.zeros((len(settings), k))
        np.add.at(table, (labels, codes), 1)
        table = table[:, table.sum(axis=0) > 0]
        if table.shape[1] < 2:
            stat, p, dof = 0.0, 1.0, 0
        else:
            stat, p, dof, _ = stats.chi2_contingency(table, correction=False)
        freq = table / table.sum(axis=1, keepdims=True)
        tv = max(0.5 * np.abs(freq[i] - freq[j]).sum()
                 for i in range(len(settings)) for j in range(i + 1, len(settings)))
        variables.append(VariableDivergence(name, float(stat), int(dof), float(p), float(tv), bool(p < alpha)))

    mu_names = [nm for nm in names if nm.startswith("mu_")]
    use = tuple(mu_names or names)
    train = np.tile(np.arange(n_per_pair) < n_per_pair // 2, len(settings))
    test = ~train
    score = np.zeros((test.sum(), len(settings)))
    eps = 1e-9
    for name in use:
        codes = binned[name]
        k = codes.max() + 1
        counts = np.zeros((len(settings), k))
        np.add.at(counts, (labels[train], codes[train]), 1)
        logp = np.log((counts + eps) / (counts.sum(axis=1, keepdims=True) + eps * k))
        score += logp[:, codes[test]].T
    predicted = np.argmax(score, axis=1)
    accuracy = float(np.mean(predicted == labels[test]))

    return IndependenceReport(spec.family, settings, n_per_pair, bins, alpha, tuple(variables),
                              use, accuracy, 1.0 / len(settings))
