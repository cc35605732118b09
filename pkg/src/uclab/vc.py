"""Shatter coefficients, VC-dimension search, and uniform-deviation diagnostics.

Concept classes over continuous parameter spaces are probed with sampled
concepts (a lower bound on the shatter coefficient); one-dimensional
threshold and interval classes also carry exact combinatorial enumerators.
"""

import math
from dataclasses import dataclass

import numpy as np

from .rng import stream

LOG2E_TIMES_4 = 4.0 * math.e


@dataclass(frozen=True)
class ConceptClass:
    """A parametrized family of sets, given by a vectorized membership test.

    membership(points, concept) -> bool array over the points;
    sample_concept(rng) draws concept parameters;
    enumerate_concepts(points), when present, yields enough concepts to
    realize every achievable membership pattern on those points exactly.
    """

    description: str
    membership: callable
    sample_concept: callable
    enumerate_concepts: callable = None


@dataclass(frozen=True)
class ShatterReport:
    n: int
    distinct_patterns: int
    shattered: bool
    witness_points: tuple
    exact: bool


def half_lines() -> ConceptClass:
    return ConceptClass(
        description="half-lines {z <= t}",
        membership=lambda pts, t: np.asarray(pts) <= t,
        sample_concept=lambda rng: rng.normal(0.0, 3.0),
        enumerate_concepts=_half_line_enum,
    )


def _half_line_enum(points):
    pts = np.sort(np.unique(np.asarray(points, dtype=np.float64)))
    cuts = [pts[0] - 1.0]
    cuts.extend((pts[:-1] + pts[1:]) / 2.0)
    cuts.append(pts[-1] + 1.0)
    return cuts


def intervals() -> ConceptClass:
    return ConceptClass(
        description="closed intervals [a, b]",
        membership=lambda pts, ab: (np.asarray(pts) >= ab[0]) & (np.asarray(pts) <= ab[1]),
        sample_concept=_interval_sample,
        enumerate_concepts=_interval_enum,
    )


def _interval_sample(rng):
    a, b = np.sort(rng.normal(0.0, 3.0, size=2))
    return (a, b)


def _interval_enum(points):
    cuts = _half_line_enum(points)
    out = []
    for i, a in enumerate(cuts):
        for b in cuts[i:]:
            out.append((a, b))
    return out


def linear_halfplanes() -> ConceptClass:
    return ConceptClass(
        description="half-planes {w.z + b > 0}",
        membership=lambda pts, wb: np.asarray(pts) @ wb[0] + wb[1] > 0,
        sample_concept=lambda rng: (rng.normal(size=2), rng.normal()),
    )


def shatter_coefficient(cls: ConceptClass, points, concept_budget: int, seed: int) -> ShatterReport:
    """Count distinct membership patterns the class realizes on the points.

    Exact when the class carries an enumerator, otherwise a lower bound from
    concept_budget sampled concepts.
    """
    points = np.asarray(points)
    n = len(points)
    if concept_budget < 1:
        raise ValueError("concept budget must be >= 1")
    patterns = set()
    if cls.enumerate_concepts is not None:
        for concept in cls.enumerate_concepts(points):
            patterns.add(tuple(bool(v) for v in cls.membership(points, concept)))
        exact = True
    else:
        rng = stream(seed, "shatter")
        for _ in range(concept_budget):
            concept = cls.sample_concept(rng)
            patterns.add(tuple(bool(v) for v in cls.membership(points, concept)))
        exact = False
    count = len(patterns)
    return ShatterReport(
        n=n,
        distinct_patterns=count,
        shattered=count == 2**n,
        witness_points=tuple(map(tuple, points)) if points.ndim > 1 else tuple(points),
        exact=exact,
    )


def estimate_vc_dimension(
    cls: ConceptClass, point_sampler, max_n: int, trials: int, seed: int,
    concept_budget: int = 2000,
) -> int:
    """Largest n at which some sampled n-point set is fully shattered."""
    if max_n > 20:
        raise ValueError("max_n capped at 20")
    best = 0
    for n in range(1, max_n + 1):
        for t in range(trials):
            rng = stream(seed, "vcdim", n, t)
            points = point_sampler(rng, n)
            report = shatter_coefficient(cls, points, concept_budget, seed=int(rng.integers(1 << 30)))
            if report.shattered:
                best = n
                break
    return best


def km_vc_bound(k: int, s: int) -> float:
    """VC bound 2k log2(4es) for classes cut out by degree-s polynomial signs
    in k real parameters."""
    if k < 1 or s < 1:
        raise ValueError("k and s must be >= 1")
    return 2.0 * k * math.log2(LOG2E_TIMES_4 * s)


def vc_deviation_tail(n: int, v: float, delta: float) -> float:
    """Uniform-deviation tail 8 n^V exp(-n delta^2 / 32), clamped to [0, 1]."""
    if n < 1 or v < 2 or delta <= 0:
        raise ValueError("need n >= 1, V >= 2, delta > 0")
    log_value = math.log(8.0) + v * math.log(n) - n * delta * delta / 32.0
    if log_value >= 0.0:
        return 1.0
    return math.exp(log_value)


@dataclass(frozen=True)
class DeviationStats:
    mean: float
    max: float
    envelope_ratio: float
    per_trial: tuple


def empirical_sup_deviation(
    cls: ConceptClass, sampler, n: int, concept_budget: int, trials: int, seed: int,
    vc_hint: float = 2.0, reference_size: int = 200_000,
) -> DeviationStats:
    """Sup over sampled concepts of |empirical - true| probability, per trial.

    The true probability of each concept is itself estimated once from a large
    independent reference sample.  Reports the ratio of the mean deviation to
    sqrt(V log2 n / n).
    """
    rng = stream(seed, "supdev")
    concepts = [cls.sample_concept(rng) for _ in range(concept_budget)]
    reference = sampler(stream(seed, "reference"), reference_size)
    ref_probs = np.array([np.mean(cls.membership(reference, c)) for c in concepts])
    sups = []
    for t in range(trials):
        points = sampler(stream(seed, "trial", t), n)
        emp = np.array([np.mean(cls.membership(points, c)) for c in concepts])
        sups.append(float(np.max(np.abs(emp - ref_probs))))
    sups = np.asarray(sups)
    envelope = math.sqrt(vc_hint * math.log2(max(n, 2)) / n)
    return DeviationStats(
        mean=float(sups.mean()),
        max=float(sups.max()),
        envelope_ratio=float(sups.mean() / envelope),
        per_trial=tuple(sups),
    )
