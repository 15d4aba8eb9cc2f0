"""Bertrand's chord paradox on two concentric circles of radii R and R/2.

A chord of the outer circle hits the inner circle exactly when its distance
to the centre is below R/2, which is the same event as the chord being longer
than the side of the inscribed equilateral triangle.  Three reasonable ways
of drawing "a random chord" give three different probabilities for it.

Chords are drawn on the unit circle and scaled by R afterwards, so the hit
indicators for a given seed do not depend on R.  A chord tangent to the inner
circle (distance exactly R/2) counts as a miss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np

from .errors import InputError
from .streams import blocks, parallel_map, substream


class Variant(str, Enum):
    PARALLEL = "parallel"
    ENDPOINTS = "endpoints"
    MIDPOINT = "midpoint"


@dataclass(frozen=True)
class ChordProtocol:
    variant: Variant
    radius: float = 1.0

    def __post_init__(self):
        try:
            object.__setattr__(self, "variant", Variant(self.variant))
        except ValueError:
            raise InputError(f"unknown chord protocol {self.variant!r}") from None
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise InputError("radius must be positive and finite")


@dataclass(frozen=True)
class ChordSample:
    p1: tuple[float, float]
    p2: tuple[float, float]
    hits_inner: bool


@dataclass(frozen=True)
class ChordBatch:
    """Vectorised chords: endpoint arrays of shape (n, 2) and unit-circle distances."""

    p1: np.ndarray
    p2: np.ndarray
    distance: np.ndarray  # distance of the chord from the centre, in units of R
    radius: float

    @property
    def hits_inner(self) -> np.ndarray:
        return self.distance < 0.5

    def __len__(self) -> int:
        return len(self.distance)


def _chords_unit(variant: Variant, n: int, rng: np.random.Generator):
    if variant is Variant.PARALLEL:
        s = rng.uniform(-1.0, 1.0, size=n)
        h = np.sqrt(1 - s * s)
        p1 = np.column_stack([-h, s])
        p2 = np.column_stack([h, s])
        return p1, p2, np.abs(s)
    if variant is Variant.ENDPOINTS:
        phi = rng.uniform(0.0, 2 * math.pi, size=(n, 2))
        p1 = np.column_stack([np.cos(phi[:, 0]), np.sin(phi[:, 0])])
        p2 = np.column_stack([np.cos(phi[:, 1]), np.sin(phi[:, 1])])
        return p1, p2, np.abs(np.cos((phi[:, 0] - phi[:, 1]) / 2))
    r = np.sqrt(rng.uniform(0.0, 1.0, size=n))
    phi = rng.uniform(0.0, 2 * math.pi, size=n)
    # chord through the midpoint, perpendicular to the radius; at r = 0 the
    # angle still fixes a direction and the chord is a diameter
    mx, my = r * np.cos(phi), r * np.sin(phi)
    h = np.sqrt(1 - r * r)
    ux, uy = -np.sin(phi), np.cos(phi)
    p1 = np.column_stack([mx - h * ux, my - h * uy])
    p2 = np.column_stack([mx + h * ux, my + h * uy])
    return p1, p2, r


def sample_chords(protocol: ChordProtocol, n: int, rng: np.random.Generator) -> ChordBatch:
    if n < 0:
        raise InputError("n must be >= 0")
    p1, p2, d = _chords_unit(protocol.variant, n, rng)
    R = protocol.radius
    return ChordBatch(p1 * R, p2 * R, d, R)


def sample_chord(protocol: ChordProtocol, rng: np.random.Generator) -> ChordSample:
    b = sample_chords(protocol, 1, rng)
    return ChordSample(tuple(b.p1[0]), tuple(b.p2[0]), bool(b.hits_inner[0]))


def chord_distance(p1, p2) -> np.ndarray:
    """Distance from the origin to the line through p1 and p2 (arrays of shape (n, 2))."""
    p1 = np.atleast_2d(np.asarray(p1, dtype=float))
    p2 = np.atleast_2d(np.asarray(p2, dtype=float))
    d = p2 - p1
    length = np.hypot(d[:, 0], d[:, 1])
    cross = np.abs(p1[:, 0] * p2[:, 1] - p1[:, 1] * p2[:, 0])
    with np.errstate(invalid="ignore", divide="ignore"):
        out = cross / length
    # a zero-length chord is a point on the circle
    return np.where(length > 0, out, np.hypot(p1[:, 0], p1[:, 1]))


def segment_hits_circle(p1, p2, r: float) -> np.ndarray:
    """Explicit intersection test: does the segment p1-p2 cross the open disk of radius r?

    Solves |p1 + t (p2 - p1)|^2 = r^2; two distinct real roots with an overlap
    of [t1, t2] and [0, 1] means the segment enters the disk.  A double root
    (tangency) is not a hit.
    """
    p1 = np.atleast_2d(np.asarray(p1, dtype=float))
    p2 = np.atleast_2d(np.asarray(p2, dtype=float))
    d = p2 - p1
    a = np.einsum("ij,ij->i", d, d)
    b = 2 * np.einsum("ij,ij->i", p1, d)
    c = np.einsum("ij,ij->i", p1, p1) - r * r
    disc = b * b - 4 * a * c
    ok = (a > 0) & (disc > 0)
    root = np.sqrt(np.where(ok, disc, 0.0))
    safe_a = np.where(ok, a, 1.0)
    t1 = (-b - root) / (2 * safe_a)
    t2 = (-b + root) / (2 * safe_a)
    return ok & (t2 > 0) & (t1 < 1)


HIT_BLOCK = 1 << 18


def hit_probability(protocol: ChordProtocol, n: int, seed: int, workers: int = 1) -> tuple[float, float]:
    """Monte Carlo hit fraction and its binomial standard error."""
    if n < 1:
        raise InputError("n must be >= 1")

    def one(k_range):
        k, (start, stop) = k_range
        rng = substream(seed, "bertrand", protocol.variant.value, k)
        return int(np.count_nonzero(sample_chords(protocol, stop - start, rng).hits_inner))

    hits = sum(parallel_map(one, list(enumerate(blocks(n, HIT_BLOCK))), workers))
    p = hits / n
    return p, math.sqrt(p * (1 - p) / n)


_EXACT = {
    Variant.PARALLEL: Fraction(1, 2),  # |s| < R/2 out of s in [-R, R]
    Variant.ENDPOINTS: Fraction(1, 3),  # second endpoint inside the 120 degree arc
    Variant.MIDPOINT: Fraction(1, 4),  # (R/2)^2 / R^2
}


def analytic_probability(protocol: ChordProtocol) -> Fraction:
    return _EXACT[protocol.variant]
