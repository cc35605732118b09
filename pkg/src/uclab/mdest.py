"""Minimum-distance parameter estimation over density-comparison regions.

A finite candidate skeleton stands in for the continuous parameter space.
For candidates a != b, the decision region collects the blocks where a's
density strictly exceeds b's; the estimator picks the candidate whose model
probabilities of all such regions best match their empirical frequencies
over the extracted memory blocks.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import stream
from .sources import GaussianAR, GaussianIID, HiddenMarkov, ar_stability_check, parse_model_spec
from .vc import ConceptClass


@dataclass(frozen=True)
class YatracosSet:
    """Decision region {x^n : p_first(x^n) > p_second(x^n)} for two models."""

    first: object
    second: object

    def __post_init__(self):
        if self.first.family != self.second.family:
            raise ValueError("models must share a family")
        if self.first.coords == self.second.coords:
            raise ValueError("models must be distinct")


def yatracos_membership(region: YatracosSet, block) -> bool:
    """Exact membership by strict log-density comparison; ties are outside."""
    values = np.asarray(block, dtype=np.float64)[None, :]
    return bool(
        region.first.logpdf_blocks(values)[0] > region.second.logpdf_blocks(values)[0]
    )


@dataclass(frozen=True)
class BlockLayout:
    """Memory window of n sample blocks separated by discarded gap blocks.

    The window holds n periods of (block of length n, gap of length gap), so
    its total length is n * (n + gap) and the retained positions number n^2.
    """

    n: int
    gap: int

    def __post_init__(self):
        if self.n < 1 or self.gap < 0:
            raise ValueError("need n >= 1 and gap >= 0")

    @property
    def memory_length(self) -> int:
        return self.n * (self.n + self.gap)

    def block_slices(self) -> list:
        period = self.n + self.gap
        return [slice(j * period, j * period + self.n) for j in range(self.n)]

    def retained_indices(self) -> np.ndarray:
        return np.concatenate([np.arange(s.start, s.stop) for s in self.block_slices()])


def extract_blocks(path, layout: BlockLayout) -> np.ndarray:
    """Slice the estimation blocks out of a memory window; gaps are dropped."""
    values = np.asarray(path, dtype=np.float64)
    if values.shape[0] != layout.memory_length:
        raise ValueError(
            f"window length {values.shape[0]} != layout length {layout.memory_length}"
        )
    return np.stack([values[s] for s in layout.block_slices()])


@dataclass
class CandidateSet:
    """Finite skeleton of parameter vectors used as the estimation domain."""

    members: tuple
    generation: str = "grid"
    _tables: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self.members:
            raise ValueError("candidate set must be nonempty")
        family = self.members[0].family
        seen = set()
        for m in self.members:
            if m.family != family:
                raise ValueError("candidates must share a family")
            if m.coords in seen:
                raise ValueError(f"duplicate candidate {m.coords}")
            seen.add(m.coords)

    @property
    def family(self) -> str:
        return self.members[0].family

    def __len__(self):
        return len(self.members)

    def index_of(self, model) -> int | None:
        for i, m in enumerate(self.members):
            if m.coords == model.coords:
                return i
        return None

    def model_table(self, n: int, mc_samples: int, seed: int) -> "ModelProbabilityTable":
        key = (n, mc_samples, seed)
        if key not in self._tables:
            self._tables[key] = ModelProbabilityTable.build(self, n, mc_samples, seed)
        return self._tables[key]


class ModelProbabilityTable:
    """Monte Carlo region probabilities for every (candidate, region) pair.

    probs[t, a, b] estimates the probability, under candidate t's n-marginal,
    of the region where candidate a's density beats candidate b's.  One shared
    sample pool per t serves all regions (common random numbers).  These
    numbers do not depend on the observed data, so the table is reused across
    estimation calls.
    """

    def __init__(self, probs: np.ndarray, mc_error: float, mc_samples: int):
        self.probs = probs
        self.mc_error = mc_error
        self.mc_samples = mc_samples

    @staticmethod
    def build(candidates: CandidateSet, n: int, mc_samples: int, seed: int) -> "ModelProbabilityTable":
        if mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        members = candidates.members
        c = len(members)
        probs = np.empty((c, c, c))
        worst_se = 0.0
        for t, owner in enumerate(members):
            pool = owner.sample_blocks(mc_samples, n, stream(seed, "pool", t))
            dens = np.stack([m.logpdf_blocks(pool) for m in members])  # (c, mc)
            wins = dens[:, None, :] > dens[None, :, :]
            probs[t] = wins.mean(axis=2)
            off = ~np.eye(c, dtype=bool)
            p = probs[t][off]
            if p.size:
                worst_se = max(worst_se, float(np.sqrt(np.max(p * (1 - p)) / mc_samples)))
        return ModelProbabilityTable(probs, worst_se, mc_samples)


@dataclass(frozen=True)
class DeviationReport:
    value: float
    argmax_pair: tuple
    mc_error: float


def empirical_region_frequencies(blocks: np.ndarray, candidates: CandidateSet) -> np.ndarray:
    """emp[a, b] = fraction of blocks falling in region (a beats b)."""
    dens = np.stack([m.logpdf_blocks(blocks) for m in candidates.members])
    wins = dens[:, None, :] > dens[None, :, :]
    return wins.mean(axis=2)


def u_statistic(model, blocks, candidates: CandidateSet, mc_samples: int, seed: int) -> DeviationReport:
    """Largest gap between the model's region probabilities and the blocks'
    empirical region frequencies, over all candidate-pair regions."""
    blocks = np.atleast_2d(np.asarray(blocks, dtype=np.float64))
    if len(candidates) < 2:
        raise ValueError("need at least two candidates to form regions")
    emp = empirical_region_frequencies(blocks, candidates)
    idx = candidates.index_of(model)
    if idx is not None:
        table = candidates.model_table(blocks.shape[1], mc_samples, seed)
        probs = table.probs[idx]
        mc_error = table.mc_error
    else:
        pool = model.sample_blocks(mc_samples, blocks.shape[1], stream(seed, "pool", -1))
        dens = np.stack([m.logpdf_blocks(pool) for m in candidates.members])
        probs = (dens[:, None, :] > dens[None, :, :]).mean(axis=2)
        off = ~np.eye(len(candidates), dtype=bool)
        p = probs[off]
        mc_error = float(np.sqrt(np.max(p * (1 - p)) / mc_samples)) if p.size else 0.0
    gap = np.abs(probs - emp)
    np.fill_diagonal(gap, -1.0)
    a, b = np.unravel_index(int(np.argmax(gap)), gap.shape)
    return DeviationReport(float(gap[a, b]), (int(a), int(b)), mc_error)


def md_estimate_report(blocks, candidates: CandidateSet, mc_samples: int, seed: int) -> tuple:
    """(index, model, report) of the candidate with the smallest deviation."""
    blocks = np.atleast_2d(np.asarray(blocks, dtype=np.float64))
    if len(candidates) == 1:
        return 0, candidates.members[0], DeviationReport(0.0, (0, 0), 0.0)
    table = candidates.model_table(blocks.shape[1], mc_samples, seed)
    emp = empirical_region_frequencies(blocks, candidates)
    gaps = np.abs(table.probs - emp[None, :, :])
    c = len(candidates)
    off = ~np.eye(c, dtype=bool)
    values = np.array([g[off].max() for g in gaps])
    best = int(np.argmin(values))  # first index wins ties
    gap = gaps[best].copy()
    np.fill_diagonal(gap, -1.0)
    a, b = np.unravel_index(int(np.argmax(gap)), gap.shape)
    report = DeviationReport(float(values[best]), (int(a), int(b)), table.mc_error)
    return best, candidates.members[best], report


def md_estimate(blocks, candidates: CandidateSet, mc_samples: int, seed: int):
    """Minimum-distance estimate over the candidate skeleton."""
    return md_estimate_report(blocks, candidates, mc_samples, seed)[1]


def yatracos_concept_class(candidates: CandidateSet) -> ConceptClass:
    """The candidate pairs' decision regions as a shatter-countable class.

    Points are n-blocks (rows of a matrix); concepts are ordered index pairs
    (a, b) with a != b.  The class is finite, so shatter counting can
    enumerate it exactly, which makes the decision-region complexity bounds
    empirically checkable at small n.
    """
    members = candidates.members
    count = len(members)
    if count < 2:
        raise ValueError("need at least two candidates to form regions")
    pairs = [(a, b) for a in range(count) for b in range(count) if a != b]

    def membership(blocks, pair):
        blocks = np.atleast_2d(np.asarray(blocks, dtype=np.float64))
        a, b = pair
        return members[a].logpdf_blocks(blocks) > members[b].logpdf_blocks(blocks)

    def sample_concept(rng):
        return pairs[int(rng.integers(len(pairs)))]

    return ConceptClass(
        description=f"density-comparison regions over {count} candidates",
        membership=membership,
        sample_concept=sample_concept,
        enumerate_concepts=lambda points: pairs,
    )


# ---------------------------------------------------------------------------
# Default candidate grids
# ---------------------------------------------------------------------------


def gaussian_iid_grid(mean_lo: float, mean_hi: float, mean_count: int,
                      lnsigma_lo: float, lnsigma_hi: float, lnsigma_count: int) -> CandidateSet:
    members = []
    for m in np.linspace(mean_lo, mean_hi, mean_count):
        for ls in np.linspace(lnsigma_lo, lnsigma_hi, lnsigma_count):
            members.append(GaussianIID(float(m), float(math.exp(ls))))
    return CandidateSet(tuple(members), generation="grid")


def ar_grid(lo: float, hi: float, count: int, order: int = 1) -> CandidateSet:
    axes = [np.linspace(lo, hi, count)] * order
    members = []
    for coeffs in np.stack(np.meshgrid(*axes), axis=-1).reshape(-1, order):
        coeffs = tuple(float(c) for c in coeffs)
        if ar_stability_check(coeffs):
            members.append(GaussianAR(coeffs))
    return CandidateSet(tuple(members), generation="grid")


def hmm_grid(stay_values, emission_means, emission_sigma: float = 1.0,
             entry_floor: float = 0.02) -> CandidateSet:
    """Two-state transition grids parametrized by the two stay probabilities."""
    members = []
    for p_stay in stay_values:
        for q_stay in stay_values:
            rows = ((float(p_stay), float(1 - p_stay)), (float(1 - q_stay), float(q_stay)))
            if min(min(r) for r in rows) < entry_floor:
                continue
            members.append(HiddenMarkov(rows, tuple(emission_means), emission_sigma, entry_floor))
    return CandidateSet(tuple(members), generation="grid")


def candidate_specs(candidates: CandidateSet) -> list:
    """Candidate members in the structured-text model grammar."""
    from .sources import format_model_spec

    return [format_model_spec(m) for m in candidates.members]


def candidates_from_specs(specs, generation: str = "listed") -> CandidateSet:
    return CandidateSet(tuple(parse_model_spec(s) for s in specs), generation=generation)
