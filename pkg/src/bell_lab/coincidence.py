"""Time-tagged detection streams and coincidence-window pairing.

The reference delay model is our own construction in the coincidence-time
family: a local sign model whose detection delay grows as the hidden angle
approaches the analyser's decision boundary,
``d = delta * (1 - |cos(theta - lambda)|) ** power``.  A narrow window then
keeps mostly trials far from both boundaries, and the post-selected
correlations break the CHSH bound even though every outcome and delay is
computed locally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .errors import ConfigurationError, InputError, InvariantViolation
from .experiment import ChshReport, chsh_from_pairs
from .models import LRHVM
from .sheets import PAIR_INDEX, X_LABELS, Y_LABELS, Design, PairSheet, SettingPair
from .streams import blocks, parallel_map, substream

STREAM_BLOCK = 1 << 16


@dataclass(frozen=True)
class PowerDelay:
    """Setting-dependent delay ``delta * (1 - |cos(theta - lambda)|) ** power``."""

    delta: float = 1e-6
    power: float = 2.0

    def __call__(self, lam, theta, outcome, rng):
        return self.delta * (1 - np.abs(np.cos(theta - lam))) ** self.power


@dataclass(frozen=True)
class JitterDelay:
    """Uniform [0, delta) delay drawn per event, blind to setting and outcome."""

    delta: float = 1e-6

    def __call__(self, lam, theta, outcome, rng):
        return rng.uniform(0.0, self.delta, size=np.shape(lam))


@dataclass(frozen=True)
class ZeroDelay:
    def __call__(self, lam, theta, outcome, rng):
        return np.zeros(np.shape(lam))


@dataclass(frozen=True)
class DelayModel:
    """Local hidden-variable source plus a per-arm detection delay.

    ``delay(lam, theta, outcome, rng)`` returns seconds; ``rate`` is the
    Poisson emission rate in pairs per second.
    """

    delay: Callable = field(default_factory=PowerDelay)
    max_delay: float = 1e-6
    rate: float = 1e4
    base: LRHVM = field(default_factory=LRHVM)

    def __post_init__(self):
        if not (self.max_delay >= 0 and math.isfinite(self.max_delay)):
            raise ConfigurationError("max_delay must be finite and >= 0")
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ConfigurationError("emission rate must be positive")


REFERENCE_DELTA = 1e-6
REFERENCE_WINDOW = 0.5 * REFERENCE_DELTA


def reference_delay_model() -> DelayModel:
    """Shipped setting-dependent model; use with ``REFERENCE_WINDOW``."""
    return DelayModel(PowerDelay(REFERENCE_DELTA, 2.0), REFERENCE_DELTA)


def setting_independent_delay_model() -> DelayModel:
    return DelayModel(JitterDelay(REFERENCE_DELTA), REFERENCE_DELTA)


def zero_delay_model() -> DelayModel:
    return DelayModel(ZeroDelay(), 0.0)


@dataclass
class EventStream:
    """Detections on one arm, sorted by time ``t`` (seconds)."""

    arm: Literal["A", "B"]
    t: np.ndarray
    outcome: np.ndarray
    setting: np.ndarray
    trial_id: np.ndarray

    def __post_init__(self):
        if self.arm not in ("A", "B"):
            raise InputError(f"arm must be 'A' or 'B', got {self.arm!r}")
        self.t = np.asarray(self.t, dtype=float)
        n = len(self.t)
        for name in ("outcome", "setting", "trial_id"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            if len(arr) != n:
                raise InputError(f"{name} column length differs from t")
            setattr(self, name, arr)
        if not np.all(np.isfinite(self.t)):
            raise InputError("event times must be finite")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.t) >= 0))

    def rows(self) -> list[list]:
        labels = X_LABELS if self.arm == "A" else Y_LABELS
        return [[repr(float(t)), self.arm, labels[s], int(o), int(i)]
                for t, s, o, i in zip(self.t, self.setting, self.outcome, self.trial_id)]


EVENT_HEADER = ["t", "arm", "setting", "outcome", "trial_id"]


def _stream_block(model: DelayModel, design: Design, seed: int, index: int, size: int, schedule):
    rng = substream(seed, "events", index)
    if schedule is None:
        x = rng.integers(0, 2, size=size)
        y = rng.integers(0, 2, size=size)
    else:
        x, y = schedule
    gaps = rng.exponential(1.0 / model.rate, size=size)
    lam = model.base.draw_lambda(size, rng)
    theta_a = np.where(x == 0, design.a, design.a_prime)
    theta_b = np.where(y == 0, design.b, design.b_prime)
    a = model.base.outcome(lam, theta_a, "A")
    b = model.base.outcome(lam, theta_b, "B")
    da = np.asarray(model.delay(lam, theta_a, a, rng), dtype=float)
    db = np.asarray(model.delay(lam, theta_b, b, rng), dtype=float)
    for d in (da, db):
        if np.any(~np.isfinite(d)) or np.any(d < 0) or np.any(d > model.max_delay):
            raise ConfigurationError(f"delay outside [0, {model.max_delay}] s")
    return x, y, gaps, a, b, da, db


def generate_event_streams(model: DelayModel, design: Design, n_trials: int, seed: int,
                           schedule=None, workers: int = 1) -> tuple[EventStream, EventStream]:
    """One emission per trial at Poisson times; detection = emission + local delay.

    ``schedule`` optionally fixes the per-trial setting labels as two integer
    arrays (x, y) in {0, 1}; by default both are fair coin flips.
    """
    if n_trials < 1:
        raise InputError("n_trials must be >= 1")
    if schedule is not None:
        sx, sy = (np.asarray(s, dtype=np.int64) for s in schedule)
        if len(sx) != n_trials or len(sy) != n_trials or not np.all(np.isin(sx, (0, 1))) \
                or not np.all(np.isin(sy, (0, 1))):
            raise InputError("schedule must hold n_trials labels in {0, 1} per arm")
    ranges = blocks(n_trials, STREAM_BLOCK)

    def one(k):
        start, stop = ranges[k]
        sched = None if schedule is None else (sx[start:stop], sy[start:stop])
        return _stream_block(model, design, seed, k, stop - start, sched)

    parts = parallel_map(one, range(len(ranges)), workers)
    x, y, gaps, a, b, da, db = (np.concatenate([p[i] for p in parts]) for i in range(7))
    emission = np.cumsum(gaps)
    trial = np.arange(n_trials)
    streams = []
    for arm, lab, out, d in (("A", x, a, da), ("B", y, b, db)):
        t = emission + d
        order = np.argsort(t, kind="stable")
        streams.append(EventStream(arm, t[order], out[order], lab[order], trial[order]))
    return streams[0], streams[1]


@dataclass(frozen=True)
class WindowPolicy:
    """``nearest``: greedy earliest-first match with |t_A - t_B| <= window/2.
    ``bins``: fixed bins [k W, (k+1) W); i-th A pairs with i-th B inside a bin.
    """

    window: float
    mode: Literal["nearest", "bins"] = "nearest"

    def __post_init__(self):
        if not self.window > 0:
            raise InputError("window must be > 0")
        if self.mode not in ("nearest", "bins"):
            raise InputError(f"unknown window mode {self.mode!r}")


@dataclass(frozen=True)
class DiscardReport:
    n_a: int
    n_b: int
    retained: int
    unpaired_a: dict
    unpaired_b: dict
    mismatched: int

    def lines(self) -> list[str]:
        return [f"events A={self.n_a} B={self.n_b}",
                f"coincidences={self.retained} (mismatched trial ids: {self.mismatched})",
                "unpaired A by setting: " + ", ".join(f"{k}={v}" for k, v in self.unpaired_a.items()),
                "unpaired B by setting: " + ", ".join(f"{k}={v}" for k, v in self.unpaired_b.items())]


@dataclass(frozen=True)
class Coincidences:
    sheets: tuple[PairSheet, ...]
    report: DiscardReport
    index_a: np.ndarray
    index_b: np.ndarray


def _match_nearest(ta: list, tb: list, half: float) -> tuple[list, list]:
    ia, ib = [], []
    j = 0
    nb = len(tb)
    for i, t in enumerate(ta):
        while j < nb and tb[j] < t - half:
            j += 1
        if j < nb and tb[j] <= t + half:
            ia.append(i)
            ib.append(j)
            j += 1
    return ia, ib


def _match_bins(ta: np.ndarray, tb: np.ndarray, width: float) -> tuple[np.ndarray, np.ndarray]:
    ka = np.floor(ta / width).astype(np.int64)
    kb = np.floor(tb / width).astype(np.int64)
    # rank of each event within its bin
    ra = np.arange(len(ka)) - np.searchsorted(ka, ka, side="left")
    rb = np.arange(len(kb)) - np.searchsorted(kb, kb, side="left")
    key_a = np.stack([ka, ra], axis=1)
    key_b = np.stack([kb, rb], axis=1)
    # both key lists are lexicographically sorted; intersect them
    va = key_a.view([("k", np.int64), ("r", np.int64)]).reshape(-1)
    vb = key_b.view([("k", np.int64), ("r", np.int64)]).reshape(-1)
    _, ia, ib = np.intersect1d(va, vb, assume_unique=True, return_indices=True)
    return ia, ib


def pair_coincidences(stream_a: EventStream, stream_b: EventStream, policy: WindowPolicy,
                      design: Design | None = None) -> Coincidences:
    """Greedy pairing of two sorted streams into per-setting pair sheets."""
    if stream_a.arm != "A" or stream_b.arm != "B":
        raise InputError("expected streams for arms A and B")
    if not stream_a.is_sorted or not stream_b.is_sorted:
        raise InputError("event streams must be sorted by time")
    if policy.mode == "nearest":
        ia, ib = _match_nearest(stream_a.t.tolist(), stream_b.t.tolist(), policy.window / 2)
        ia = np.asarray(ia, dtype=np.int64)
        ib = np.asarray(ib, dtype=np.int64)
    else:
        ia, ib = _match_bins(stream_a.t, stream_b.t, policy.window)
    if len(np.unique(ia)) != len(ia) or len(np.unique(ib)) != len(ib):
        raise InvariantViolation("pairing reused an event")

    sx = stream_a.setting[ia]
    sy = stream_b.setting[ib]
    pairs = design.pairs() if design else None
    sheets = []
    for p, (i, j) in enumerate(PAIR_INDEX):
        m = (sx == i) & (sy == j)
        setting = pairs[p] if pairs else SettingPair(i, j)
        sheets.append(PairSheet(setting, stream_a.outcome[ia[m]], stream_b.outcome[ib[m]],
                                stream_a.trial_id[ia[m]]))

    used_a = np.zeros(len(stream_a), dtype=bool)
    used_a[ia] = True
    used_b = np.zeros(len(stream_b), dtype=bool)
    used_b[ib] = True
    unpaired_a = {X_LABELS[k]: int(np.sum(~used_a & (stream_a.setting == k))) for k in (0, 1)}
    unpaired_b = {Y_LABELS[k]: int(np.sum(~used_b & (stream_b.setting == k))) for k in (0, 1)}
    mismatched = int(np.sum(stream_a.trial_id[ia] != stream_b.trial_id[ib]))
    report = DiscardReport(len(stream_a), len(stream_b), len(ia), unpaired_a, unpaired_b, mismatched)
    return Coincidences(tuple(sheets), report, ia, ib)


@dataclass(frozen=True)
class CurvePoint:
    window: float
    retained_fraction: float
    S: float
    se: float


def _chsh_or_nan(sheets) -> ChshReport | None:
    if any(s.n == 0 for s in sheets):
        return None
    return chsh_from_pairs(sheets)


def coincidence_chsh_scan(model: DelayModel, design: Design, n_trials: int, windows, seed: int,
                          mode: str = "nearest", workers: int = 1) -> list[CurvePoint]:
    """CHSH estimate and retained fraction for each coincidence window."""
    windows = [float(w) for w in windows]
    if not windows:
        raise InputError("window grid is empty")
    sa, sb = generate_event_streams(model, design, n_trials, seed, workers=workers)

    def one(w):
        co = pair_coincidences(sa, sb, WindowPolicy(w, mode), design)
        rep = _chsh_or_nan(co.sheets)
        frac = co.report.retained / n_trials
        if rep is None:
            return CurvePoint(w, frac, math.nan, math.nan)
        return CurvePoint(w, frac, rep.S, rep.se_S)

    return parallel_map(one, windows, workers)
