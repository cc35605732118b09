"""Variable-rate vector quantizers with Lagrangian cost D + lambda*R.

Codes pair reproduction blocks with canonical prefix-free binary strings.
Design is entropy-constrained alternating optimization (partition, Shannon
code lengths, medoid centroids) under a bounded per-letter distortion
rho(x, y) = min(|x - y|, rho_max).  Small exact tools (discrete optimal
transport, exhaustive Lagrangian search, memory-to-zero-memory conversion)
back the analytical bounds used in the tests.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .rng import stream


class CodeError(ValueError):
    """Structurally invalid code (Kraft violation, prefix clash, bad sizes)."""


@dataclass(frozen=True)
class DistortionSpec:
    rho_max: float = 1.0
    base_metric: str = "truncated_absolute"

    def __post_init__(self):
        if not self.rho_max > 0:
            raise ValueError("rho_max must be positive")
        if self.base_metric not in ("truncated_absolute", "truncated_euclidean"):
            raise ValueError(f"unknown base metric {self.base_metric!r}")


def block_distortion(x, xhat, spec: DistortionSpec) -> float:
    """Mean truncated per-letter distance; lies in [0, rho_max]."""
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise CodeError(f"length mismatch {x.shape} vs {xhat.shape}")
    return float(np.mean(np.minimum(np.abs(x - xhat), spec.rho_max)))


def distortion_matrix(xs, ys, spec: DistortionSpec) -> np.ndarray:
    """Pairwise mean truncated distances between two stacks of blocks."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    diff = np.abs(xs[:, None, :] - ys[None, :, :])
    return np.minimum(diff, spec.rho_max).mean(axis=2)


@dataclass(frozen=True)
class CodeEntry:
    vector: tuple
    word: str


@dataclass(frozen=True)
class VariableRateCode:
    n: int
    entries: tuple

    def __post_init__(self):
        if self.n < 1:
            raise CodeError("block length must be >= 1")
        if not self.entries:
            raise CodeError("code must have at least one entry")
        for e in self.entries:
            if len(e.vector) != self.n:
                raise CodeError("reproduction block length mismatch")
            if any(c not in "01" for c in e.word):
                raise CodeError(f"non-binary codeword {e.word!r}")
        validate_prefix_free([e.word for e in self.entries])

    @property
    def lengths(self) -> tuple:
        return tuple(len(e.word) for e in self.entries)

    def vectors(self) -> np.ndarray:
        return np.asarray([e.vector for e in self.entries], dtype=np.float64)

    def word_index(self) -> dict:
        return {e.word: i for i, e in enumerate(self.entries)}

    def serialize(self) -> bytes:
        """Flat layout: count u32 | n u32 | per entry: length u16 + n float64."""
        out = bytearray()
        out += len(self.entries).to_bytes(4, "big")
        out += self.n.to_bytes(4, "big")
        for e in self.entries:
            out += len(e.word).to_bytes(2, "big")
            out += np.asarray(e.vector, dtype=">f8").tobytes()
        return bytes(out)

    @staticmethod
    def deserialize(data: bytes) -> "VariableRateCode":
        count = int.from_bytes(data[0:4], "big")
        n = int.from_bytes(data[4:8], "big")
        lengths, vectors = [], []
        pos = 8
        for _ in range(count):
            lengths.append(int.from_bytes(data[pos : pos + 2], "big"))
            pos += 2
            vec = np.frombuffer(data[pos : pos + 8 * n], dtype=">f8")
            pos += 8 * n
            vectors.append(tuple(float(v) for v in vec))
        if pos != len(data):
            raise CodeError("trailing bytes in serialized code")
        words = canonical_code(lengths)
        return VariableRateCode(n, tuple(CodeEntry(v, w) for v, w in zip(vectors, words)))


def kraft_sum_exact(lengths) -> tuple:
    """Kraft sum as an exact integer pair (numerator, 2**Lmax denominator)."""
    if not lengths:
        return 0, 1
    top = max(lengths)
    return sum(2 ** (top - l) for l in lengths), 2**top


def validate_prefix_free(words) -> None:
    """Raise unless the words are distinct, prefix-free, and Kraft-feasible."""
    if len(words) == 1:
        num, den = kraft_sum_exact([len(words[0])])
        if num > den:
            raise CodeError("Kraft inequality violated")
        return
    if len(set(words)) != len(words):
        raise CodeError("duplicate codewords")
    ordered = sorted(words)
    for a, b in zip(ordered, ordered[1:]):
        if b.startswith(a):
            raise CodeError(f"codeword {a!r} is a prefix of {b!r}")
    num, den = kraft_sum_exact([len(w) for w in words])
    if num > den:
        raise CodeError("Kraft inequality violated")


def canonical_code(lengths) -> list:
    """Canonical prefix-free codewords for Kraft-feasible integer lengths."""
    lengths = [int(l) for l in lengths]
    if any(l < 0 for l in lengths):
        raise CodeError("negative codeword length")
    if len(lengths) == 1:
        return ["0" * lengths[0] if lengths[0] else ""]
    num, den = kraft_sum_exact(lengths)
    if num > den:
        raise CodeError("lengths are not Kraft-feasible")
    if min(lengths) == 0:
        raise CodeError("empty codeword allowed only in a one-entry code")
    order = sorted(range(len(lengths)), key=lambda i: (lengths[i], i))
    words = [None] * len(lengths)
    code = 0
    prev = lengths[order[0]]
    for idx in order:
        code <<= lengths[idx] - prev
        prev = lengths[idx]
        words[idx] = format(code, "b").zfill(prev)
        code += 1
    return words


def shannon_lengths(weights) -> list:
    """Integer lengths ceil(-log2 w); Kraft-feasible for any probability vector."""
    out = []
    for w in weights:
        if w <= 0:
            raise CodeError("weights must be positive")
        out.append(max(0, math.ceil(-math.log2(w) - 1e-12)))
    return out


def min_lagrangian_encode(code: VariableRateCode, x, lam: float, spec: DistortionSpec) -> int:
    """Index minimizing distortion + lambda * length / n; first index on ties."""
    dists = distortion_matrix(np.asarray(x)[None, :], code.vectors(), spec)[0]
    costs = dists + lam * np.asarray(code.lengths, dtype=np.float64) / code.n
    return int(np.argmin(costs))


@dataclass(frozen=True)
class LagrangianReport:
    distortion: float
    rate: float
    lagrangian: float
    lam: float
    lagrangian_se: float = 0.0


def lagrangian_performance(code: VariableRateCode, eval_blocks, lam: float,
                           spec: DistortionSpec) -> LagrangianReport:
    """Empirical distortion/rate/Lagrangian under min-Lagrangian encoding."""
    blocks = np.atleast_2d(np.asarray(eval_blocks, dtype=np.float64))
    if blocks.shape[0] < 1:
        raise CodeError("evaluation set must be nonempty")
    dists = distortion_matrix(blocks, code.vectors(), spec)
    lens = np.asarray(code.lengths, dtype=np.float64)
    costs = dists + lam * lens[None, :] / code.n
    chosen = np.argmin(costs, axis=1)
    rows = np.arange(blocks.shape[0])
    d = dists[rows, chosen]
    r = lens[chosen] / code.n
    per_block = d + lam * r
    se = float(np.std(per_block, ddof=1) / math.sqrt(len(per_block))) if len(per_block) > 1 else 0.0
    distortion = float(d.mean())
    rate = float(r.mean())
    return LagrangianReport(
        distortion=distortion,
        rate=rate,
        lagrangian=distortion + lam * rate,
        lam=lam,
        lagrangian_se=se,
    )


def _medoid(blocks_subset, spec: DistortionSpec) -> np.ndarray:
    dmat = distortion_matrix(blocks_subset, blocks_subset, spec)
    return blocks_subset[int(np.argmin(dmat.mean(axis=1)))]


def _training_lagrangian(blocks, vectors, lengths, lam, n, spec) -> float:
    dists = distortion_matrix(blocks, vectors, spec)
    costs = dists + lam * np.asarray(lengths, dtype=np.float64)[None, :] / n
    return float(costs.min(axis=1).mean())


def _design_once(blocks, n, lam, spec, init_size, rng, max_iters, history):
    length_cap = 2.0 * n * spec.rho_max / lam
    chosen = blocks[rng.choice(blocks.shape[0], size=init_size, replace=False)]
    vectors = np.unique(chosen, axis=0)
    max_entries = 2 ** int(min(length_cap, 60.0))  # keeps the length cap on every path
    vectors = vectors[:max_entries]
    lengths = [max(1, math.ceil(math.log2(len(vectors))))] * len(vectors) if len(vectors) > 1 else [0]
    current = _training_lagrangian(blocks, vectors, lengths, lam, n, spec)
    history.append(current)

    for _ in range(max_iters):
        dists = distortion_matrix(blocks, vectors, spec)
        costs = dists + lam * np.asarray(lengths, dtype=np.float64)[None, :] / n
        assign = np.argmin(costs, axis=1)
        counts = np.bincount(assign, minlength=len(vectors))
        keep = counts > 0
        weights = counts[keep] / blocks.shape[0]
        new_lengths = shannon_lengths(weights) if keep.sum() > 1 else [0]
        kept_ids = np.flatnonzero(keep)
        survivors = [i for i, l in zip(kept_ids, new_lengths) if l <= length_cap]
        if not survivors:
            break  # every cell wants a codeword longer than the cap: go zero-rate
        new_vectors = np.stack([_medoid(blocks[assign == i], spec) for i in survivors])
        new_lengths = [l for i, l in zip(kept_ids, new_lengths) if l <= length_cap]
        if len(new_lengths) == 1:
            new_lengths = [0]
        candidate = _training_lagrangian(blocks, new_vectors, new_lengths, lam, n, spec)
        if candidate > current + 1e-12:
            break
        improved = candidate < current - 1e-12
        vectors, lengths, current = new_vectors, new_lengths, candidate
        history.append(current)
        if not improved:
            break

    # Lemma-style guard: a single medoid at zero rate is always admissible
    zero_vec = _medoid(blocks, spec)
    zero_cost = _training_lagrangian(blocks, zero_vec[None, :], [0], lam, n, spec)
    if zero_cost < current - 1e-12 or len(vectors) == 0:
        vectors, lengths, current = zero_vec[None, :], [0], zero_cost
    return vectors, lengths, current, history


def design_ecvq(training, n: int, lam: float, spec: DistortionSpec,
                init_size: int, seed: int, max_iters: int = 25,
                restarts: int = 4, history: list | None = None) -> VariableRateCode:
    """Entropy-constrained quantizer design by alternating optimization.

    Alternates (i) min-Lagrangian partition, (ii) Shannon code lengths
    ceil(-log2 Q) of the induced cell distribution with empty cells pruned,
    (iii) medoid centroid update per cell.  A step is committed only if the
    training Lagrangian does not increase, so the objective is non-increasing
    across iterations.  Codewords longer than 2 n rho_max / lambda are pruned
    (the optimum is attainable within that cap), and the design never does
    worse than the best zero-rate code on the training set.

    The alternation only finds a local optimum, and single random starts were
    observed to scatter across local optima by more than evaluation noise;
    the search therefore runs `restarts` seeded initializations and keeps the
    best training Lagrangian.
    """
    blocks = np.atleast_2d(np.asarray(training, dtype=np.float64))
    if blocks.shape[0] < 1:
        raise CodeError("training set must be nonempty")
    if blocks.shape[1] != n:
        raise CodeError(f"training blocks have length {blocks.shape[1]}, expected {n}")
    if not 1 <= init_size <= blocks.shape[0]:
        raise CodeError("need training size >= init_size >= 1")
    if restarts < 1:
        raise CodeError("need at least one restart")

    best = None
    for r in range(restarts):
        result = _design_once(blocks, n, lam, spec, init_size,
                              stream(seed, "ecvq", r), max_iters, [])
        if best is None or result[2] < best[2] - 1e-12:
            best = result
    vectors, lengths, _, run_history = best
    if history is not None:
        history.extend(run_history)

    words = canonical_code(lengths)
    entries = tuple(
        CodeEntry(tuple(float(v) for v in vec), w) for vec, w in zip(vectors, words)
    )
    return VariableRateCode(n, entries)


# ---------------------------------------------------------------------------
# Discrete distributions, optimal transport, exhaustive Lagrangian search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteDistribution:
    support: tuple  # tuple of blocks (each a tuple of floats)
    weights: tuple

    def __post_init__(self):
        if len(self.support) != len(self.weights) or not self.support:
            raise ValueError("support and weights must be nonempty and aligned")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be nonnegative")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        object.__setattr__(
            self,
            "support",
            tuple(tuple(float(v) for v in np.atleast_1d(s)) for s in self.support),
        )
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    def as_arrays(self) -> tuple:
        return (
            np.asarray(self.support, dtype=np.float64),
            np.asarray(self.weights, dtype=np.float64),
        )


def wasserstein_exact_small(p: DiscreteDistribution, q: DiscreteDistribution,
                            spec: DistortionSpec) -> float:
    """Exact minimum expected block distortion over couplings of p and q.

    Solved as a transportation linear program; capped at 25 coupling variables
    so the solution is exact at negligible cost.
    """
    sup_p, w_p = p.as_arrays()
    sup_q, w_q = q.as_arrays()
    k1, k2 = len(w_p), len(w_q)
    if k1 * k2 > 25:
        raise ValueError("support product exceeds the 25-variable cap")
    cost = distortion_matrix(np.atleast_2d(sup_p), np.atleast_2d(sup_q), spec).reshape(-1)
    a_eq = []
    b_eq = []
    for i in range(k1):
        row = np.zeros(k1 * k2)
        row[i * k2 : (i + 1) * k2] = 1.0
        a_eq.append(row)
        b_eq.append(w_p[i])
    for j in range(k2 - 1):  # last column constraint is redundant
        row = np.zeros(k1 * k2)
        row[j::k2] = 1.0
        a_eq.append(row)
        b_eq.append(w_q[j])
    res = linprog(cost, A_eq=np.asarray(a_eq), b_eq=np.asarray(b_eq),
                  bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def variational_distance_discrete(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    """Sum over the union support of |p(z) - q(z)|; lies in [0, 2]."""
    pm = dict(zip(p.support, p.weights))
    qm = dict(zip(q.support, q.weights))
    return float(sum(abs(pm.get(z, 0.0) - qm.get(z, 0.0)) for z in set(pm) | set(qm)))


def brute_force_optimal_lagrangian(p: DiscreteDistribution, reproduction_points,
                                   lam: float, length_menu, spec: DistortionSpec) -> float:
    """Exhaustive optimum over codebook subsets and Kraft-feasible length menus."""
    points = [tuple(float(v) for v in np.atleast_1d(pt)) for pt in reproduction_points]
    if len(points) > 4:
        raise ValueError("at most 4 reproduction points")
    menu = sorted(set(int(l) for l in length_menu))
    if not menu or min(menu) < 0:
        raise ValueError("length menu must be nonempty and nonnegative")
    support, weights = p.as_arrays()
    n = support.shape[1] if support.ndim > 1 else 1
    best = math.inf
    for size in range(1, len(points) + 1):
        for subset in itertools.combinations(range(len(points)), size):
            dists = distortion_matrix(
                support, np.asarray([points[i] for i in subset]), spec
            )
            for lens in itertools.product(menu, repeat=size):
                if size > 1:
                    num, den = kraft_sum_exact(lens)
                    if num > den or min(lens) == 0:
                        continue
                costs = dists + lam * np.asarray(lens, dtype=np.float64)[None, :] / n
                value = float((costs.min(axis=1) * weights).sum())
                best = min(best, value)
    if not math.isfinite(best):
        raise ValueError("no Kraft-feasible length assignment in the menu")
    return best


# ---------------------------------------------------------------------------
# Toy codes with memory and their zero-memory conversion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToyMemoryCode:
    """Finite-alphabet block code whose encoder may consult m memory symbols.

    encoder maps (block tuple, memory tuple) -> codeword; decoder maps
    codeword -> reproduction block.  The codeword set must be prefix-free.
    """

    n: int
    m: int
    encoder: dict
    decoder: dict

    def __post_init__(self):
        validate_prefix_free(sorted(self.decoder.keys()))
        for (x, z), word in self.encoder.items():
            if len(x) != self.n or len(z) != self.m:
                raise CodeError("encoder key sizes do not match (n, m)")
            if word not in self.decoder:
                raise CodeError(f"encoder emits unknown word {word!r}")


@dataclass(frozen=True)
class ZeroMemoryTableCode:
    n: int
    encoder: dict
    decoder: dict


def convert_memory_to_zero_memory(code: ToyMemoryCode, lam: float,
                                  spec: DistortionSpec) -> ZeroMemoryTableCode:
    """Drop the memory input without ever increasing the Lagrangian cost.

    For each block x, the new encoder picks, among the words the original
    encoder could emit for x under some memory state, the one minimizing
    distortion + lambda * length / n.  The choice is pointwise at least as
    good as the original for every memory state, so the inequality holds for
    every evaluation distribution.
    """
    reachable = {}
    for (x, _z), word in code.encoder.items():
        reachable.setdefault(x, set()).add(word)
    table = {}
    for x, words in reachable.items():
        block = np.asarray(x, dtype=np.float64)
        best = min(
            sorted(words, key=lambda w: (len(w), w)),
            key=lambda w: (
                block_distortion(block, np.asarray(code.decoder[w]), spec)
                + lam * len(w) / code.n
            ),
        )
        table[x] = best
    return ZeroMemoryTableCode(code.n, table, dict(code.decoder))


def toy_code_lagrangian(code, blocks, memories, lam: float, spec: DistortionSpec) -> float:
    """Average Lagrangian of a toy code on aligned (block, memory) samples."""
    total = 0.0
    for x, z in zip(blocks, memories):
        if isinstance(code, ToyMemoryCode):
            word = code.encoder[(x, z)]
        else:
            word = code.encoder[x]
        xhat = np.asarray(code.decoder[word], dtype=np.float64)
        total += block_distortion(np.asarray(x), xhat, spec) + lam * len(word) / code.n
    return total / len(blocks)
