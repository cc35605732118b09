"""Two-stage universal codec with source identification.

The encoder estimates the active source from a memory window, searches a
seeded random parameter codebook for the first entry within a shrinking
variational-distance threshold of the estimate, and transmits the waiting
time with a universal integer code followed by the block coded under a
quantizer trained for that entry.  The decoder regenerates the codebook and
the trained quantizer from the shared seed, so only the index travels.
"""

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .mdest import BlockLayout, extract_blocks, md_estimate_report
from .quantizer import DistortionSpec, VariableRateCode, design_ecvq, min_lagrangian_encode
from .rng import child_seed, stream
from .sources import (
    GAUSSIAN_AR,
    GAUSSIAN_IID,
    HMM,
    DivergenceEstimate,
    GaussianAR,
    GaussianIID,
    HiddenMarkov,
    ar_stability_check,
    variational_distance_mc,
)
from .vc import km_vc_bound


class DecodeError(ValueError):
    """Malformed description or container."""


# ---------------------------------------------------------------------------
# Universal integer code (Elias delta)
# ---------------------------------------------------------------------------


def elias_encode(i: int) -> str:
    """Prefix-free binary representation of a positive integer.

    Length is floor(log2 i) + 2 floor(log2(floor(log2 i) + 1)) + 1 bits.
    """
    if i < 1:
        raise ValueError("can only encode integers >= 1")
    n = i.bit_length() - 1
    length_field = format(n + 1, "b")
    payload = format(i, "b")[1:]  # low n bits of i
    return "0" * (len(length_field) - 1) + length_field + payload


def elias_length(i: int) -> int:
    n = i.bit_length() - 1
    return n + 2 * ((n + 1).bit_length() - 1) + 1


def elias_decode(bits: str, start: int = 0) -> tuple:
    """Decode one integer; returns (value, bits consumed after start)."""
    pos = start
    zeros = 0
    while pos < len(bits) and bits[pos] == "0":
        zeros += 1
        pos += 1
    if pos >= len(bits):
        raise DecodeError(f"ran off the end scanning length prefix at bit {pos}")
    if pos + zeros + 1 > len(bits):
        raise DecodeError(f"truncated length field at bit {pos}")
    length_field = bits[pos : pos + zeros + 1]
    pos += zeros + 1
    n = int(length_field, 2) - 1
    if pos + n > len(bits):
        raise DecodeError(f"truncated payload at bit {pos}")
    payload = bits[pos : pos + n]
    value = (1 << n) + (int(payload, 2) if payload else 0)
    return value, pos + n - start


# ---------------------------------------------------------------------------
# Parameter priors (the shared distribution behind the random codebook)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianIIDPrior:
    mean_loc: float = 0.0
    mean_scale: float = 1.5
    lnsigma_loc: float = 0.0
    lnsigma_scale: float = 0.5

    family = GAUSSIAN_IID

    def draw(self, rng: np.random.Generator) -> GaussianIID:
        mean = self.mean_loc + self.mean_scale * rng.standard_normal()
        sigma = math.exp(self.lnsigma_loc + self.lnsigma_scale * rng.standard_normal())
        return GaussianIID(mean, sigma)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "mean_loc": self.mean_loc,
            "mean_scale": self.mean_scale,
            "lnsigma_loc": self.lnsigma_loc,
            "lnsigma_scale": self.lnsigma_scale,
        }


@dataclass(frozen=True)
class ARPrior:
    order: int = 1
    coeff_scale: float = 0.45

    family = GAUSSIAN_AR

    def draw(self, rng: np.random.Generator) -> GaussianAR:
        while True:
            coeffs = tuple(self.coeff_scale * rng.standard_normal(self.order))
            if ar_stability_check(coeffs):
                return GaussianAR(coeffs)

    def to_dict(self) -> dict:
        return {"family": self.family, "order": self.order, "coeff_scale": self.coeff_scale}


@dataclass(frozen=True)
class HMMPrior:
    states: int = 2
    concentration: float = 6.0
    entry_floor: float = 0.02
    emission_means: tuple = (0.0, 4.0)
    emission_sigma: float = 1.0

    family = HMM

    def draw(self, rng: np.random.Generator) -> HiddenMarkov:
        alpha = np.full(self.states, self.concentration)
        while True:
            rows = rng.dirichlet(alpha, size=self.states)
            if rows.min() >= self.entry_floor:
                return HiddenMarkov(
                    tuple(tuple(float(v) for v in row) for row in rows),
                    self.emission_means,
                    self.emission_sigma,
                    self.entry_floor,
                )

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "states": self.states,
            "concentration": self.concentration,
            "entry_floor": self.entry_floor,
            "emission_means": list(self.emission_means),
            "emission_sigma": self.emission_sigma,
        }


def prior_from_dict(data: dict):
    family = data.get("family")
    if family == GAUSSIAN_IID:
        return GaussianIIDPrior(
            data.get("mean_loc", 0.0),
            data.get("mean_scale", 1.5),
            data.get("lnsigma_loc", 0.0),
            data.get("lnsigma_scale", 0.5),
        )
    if family == GAUSSIAN_AR:
        return ARPrior(data.get("order", 1), data.get("coeff_scale", 0.45))
    if family == HMM:
        return HMMPrior(
            data.get("states", 2),
            data.get("concentration", 6.0),
            data.get("entry_floor", 0.02),
            tuple(data.get("emission_means", (0.0, 4.0))),
            data.get("emission_sigma", 1.0),
        )
    raise ValueError(f"unknown prior family {family!r}")


def default_vc_dim(prior, n: int) -> float:
    """Decision-region VC bound for the prior's family at block length n."""
    if prior.family == GAUSSIAN_IID:
        return km_vc_bound(6, 3)
    if prior.family == GAUSSIAN_AR:
        return km_vc_bound(2 * prior.order + 2, 2)
    if prior.family == HMM:
        return km_vc_bound(2 * prior.states**2, max(n, 1))
    raise ValueError(f"unknown family {prior.family!r}")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def deviation_radius(n: int, vc_dim: float, scale: float = 1.0) -> float:
    """Threshold sequence sqrt(2048 (V+1) ln n)/n + 6/n^1.5, times scale.

    With scale 1 the value exceeds the variational-distance range for any
    desk-scale n, so experiments drive it with a calibrated scale.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if vc_dim < 1:
        raise ValueError("vc_dim must be >= 1")
    base = math.sqrt(2048.0 * (vc_dim + 1.0) * math.log(n)) / n + 6.0 / n**1.5
    return scale * base


@dataclass(frozen=True)
class CodecConfig:
    n: int
    prior: object
    lam: float = 0.3
    eta: float = 1.0
    mixing_exponent: float = math.inf
    delta_scale: float = 1.0
    vc_dim: float | None = None
    codebook_seed: int = 0
    max_wait: int = 100_000
    mc_samples: int = 2000
    train_blocks: int = 256
    init_size: int = 16
    design_iters: int = 20
    distortion: DistortionSpec = field(default_factory=DistortionSpec)
    # off by default: the declared smoothness constants are loose enough that
    # the parameter-space filter rejects most entries the distance test accepts
    use_prefilter: bool = False
    # seed of the estimator's sample pools; only the encoder estimates, so this
    # may be decoupled from the codebook seed (e.g. shared across fresh
    # codebooks to reuse the candidate probability tables)
    estimator_seed: int | None = None

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("block length must be >= 2")
        if self.eta <= 0 or self.lam <= 0 or self.delta_scale <= 0:
            raise ValueError("eta, lambda, delta_scale must be positive")
        if not self.mixing_exponent > 0:
            raise ValueError("mixing exponent must be positive")
        if self.vc_dim is None:
            object.__setattr__(self, "vc_dim", default_vc_dim(self.prior, self.n))

    @property
    def gap_length(self) -> int:
        exponent = (2.0 + self.eta) / self.mixing_exponent
        return math.ceil(self.n**exponent)

    @property
    def memory_length(self) -> int:
        return self.n * (self.n + self.gap_length)

    @property
    def layout(self) -> BlockLayout:
        return BlockLayout(self.n, self.gap_length)

    @property
    def radius(self) -> float:
        return deviation_radius(self.n, self.vc_dim, self.delta_scale)

    @property
    def match_threshold(self) -> float:
        return math.sqrt(self.n) * self.radius

    def digest(self) -> bytes:
        payload = repr((
            self.n, sorted(self.prior.to_dict().items()), self.lam, self.eta,
            self.mixing_exponent, self.delta_scale, self.vc_dim,
            self.codebook_seed, self.max_wait, self.mc_samples,
            self.train_blocks, self.init_size, self.design_iters,
            self.distortion.rho_max, self.distortion.base_metric,
            self.use_prefilter,
        ))
        return hashlib.sha256(payload.encode()).digest()[:8]


def codec_config_from_dict(data: dict) -> CodecConfig:
    prior = prior_from_dict(data["prior"])
    kwargs = {}
    for key in ("lam", "eta", "mixing_exponent", "delta_scale", "vc_dim",
                "codebook_seed", "max_wait", "mc_samples", "train_blocks",
                "init_size", "design_iters", "use_prefilter"):
        if key in data:
            kwargs[key] = data[key]
    if "rho_max" in data:
        kwargs["distortion"] = DistortionSpec(rho_max=data["rho_max"])
    return CodecConfig(n=data["n"], prior=prior, **kwargs)


# ---------------------------------------------------------------------------
# Synchronized first-stage codebook
# ---------------------------------------------------------------------------


class FirstStageCodebook:
    """Lazily generated parameter database, identical for any holder of the seed.

    Entry i is drawn from the prior on its own derived stream; invalid draws
    are rejected and redrawn inside that stream, so entry i never depends on
    how many entries were generated before it.
    """

    def __init__(self, seed: int, prior):
        self.seed = seed
        self.prior = prior
        self._entries = []

    def entry(self, i: int):
        if i < 1:
            raise ValueError("entries are indexed from 1")
        while len(self._entries) < i:
            j = len(self._entries) + 1
            self._entries.append(self.prior.draw(stream(self.seed, "entry", j)))
        return self._entries[i - 1]

    def stream_bytes(self, count: int) -> bytes:
        """Big-endian float64 coordinates of entries 1..count, for byte-compare."""
        out = bytearray()
        for i in range(1, count + 1):
            out += np.asarray(self.entry(i).coords, dtype=">f8").tobytes()
        return bytes(out)


def entry_matches(model, target, config: CodecConfig, mc_seed: int) -> bool:
    """Shared acceptance predicate of the waiting-time search.

    A threshold at or above the variational-distance range accepts instantly;
    otherwise an optional parameter-space prefilter discards entries whose
    smoothness upper bound already exceeds the threshold, and the survivors
    are tested with the Monte Carlo distance estimate.
    """
    tau = config.match_threshold
    if tau >= 2.0:
        return True
    if (
        config.use_prefilter
        and getattr(target, "smoothness", None)
        and model.family == target.family
    ):
        radius, lipschitz = target.smoothness
        gap = math.dist(model.coords, target.coords)
        if gap > radius or lipschitz * math.sqrt(config.n) * gap > tau:
            return False
    est = variational_distance_mc(model, target, config.n, config.mc_samples, mc_seed)
    return est.point_estimate <= tau


def waiting_time(theta_tilde, cb: FirstStageCodebook, config: CodecConfig):
    """Index of the first codebook entry within the threshold, or None."""
    for i in range(1, config.max_wait + 1):
        if entry_matches(cb.entry(i), theta_tilde, config,
                         child_seed(config.codebook_seed, "wait", i)):
            return i
    return None


def estimate_hit_probability(theta_tilde, config: CodecConfig, draws: int, seed: int) -> float:
    """Fraction of fresh prior draws accepted by the waiting-time predicate."""
    if draws < 1:
        raise ValueError("draws must be >= 1")
    hits = 0
    for d in range(draws):
        model = config.prior.draw(stream(seed, "draw", d))
        hits += entry_matches(model, theta_tilde, config, child_seed(seed, "mc", d))
    return hits / draws


# ---------------------------------------------------------------------------
# Second-stage codes
# ---------------------------------------------------------------------------


def second_stage_code(index: int, model, config: CodecConfig, cache: dict) -> VariableRateCode:
    """Quantizer trained on data simulated from the indexed parameter.

    Training seeds derive from (codebook_seed, index), so encoder and decoder
    builds are identical and repeated calls hit the cache.
    """
    if index not in cache:
        training = model.sample_blocks(
            config.train_blocks, config.n, stream(config.codebook_seed, "train", index)
        )
        cache[index] = design_ecvq(
            training, config.n, config.lam, config.distortion,
            init_size=min(config.init_size, config.train_blocks),
            seed=child_seed(config.codebook_seed, "design", index),
            max_iters=config.design_iters,
        )
    return cache[index]


# ---------------------------------------------------------------------------
# Descriptions and the wire format
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoStageDescription:
    fallback: bool  # True: search failed, decoder uses the default entry
    index_bits: str
    payload_bits: str

    def __post_init__(self):
        if self.fallback and self.index_bits:
            raise ValueError("fallback descriptions carry no index bits")
        for bits in (self.index_bits, self.payload_bits):
            if any(c not in "01" for c in bits):
                raise ValueError("descriptions are binary strings")

    def bits(self) -> str:
        return ("1" if self.fallback else "0") + self.index_bits + self.payload_bits

    def bit_length(self) -> int:
        return 1 + len(self.index_bits) + len(self.payload_bits)


@dataclass(frozen=True)
class EncodeInfo:
    theta_tilde: object
    u_value: float
    u_mc_error: float
    waiting: int | None
    index: int
    theta_hat: object
    reproduction: tuple


@dataclass(frozen=True)
class IdentificationResult:
    theta_hat: object
    waiting_time: int | None
    d_n_estimate: DivergenceEstimate | None = None


DEFAULT_INDEX = 1


def encode_trace(x, memory, cb: FirstStageCodebook, candidates, config: CodecConfig,
                 cache: dict) -> tuple:
    """Full encoding pass; returns (description, diagnostics)."""
    x = np.asarray(x, dtype=np.float64)
    memory = np.asarray(memory, dtype=np.float64)
    if x.shape != (config.n,):
        raise ValueError(f"block must have length {config.n}")
    blocks = extract_blocks(memory, config.layout)
    estimator_seed = config.estimator_seed
    if estimator_seed is None:
        estimator_seed = child_seed(config.codebook_seed, "md")
    _, theta_tilde, report = md_estimate_report(
        blocks, candidates, config.mc_samples, estimator_seed
    )
    wait = waiting_time(theta_tilde, cb, config)
    if wait is None:
        fallback, index, index_bits = True, DEFAULT_INDEX, ""
    else:
        fallback, index, index_bits = False, wait, elias_encode(wait)
    theta_hat = cb.entry(index)
    code = second_stage_code(index, theta_hat, config, cache)
    entry = code.entries[min_lagrangian_encode(code, x, config.lam, config.distortion)]
    desc = TwoStageDescription(fallback, index_bits, entry.word)
    info = EncodeInfo(
        theta_tilde=theta_tilde,
        u_value=report.value,
        u_mc_error=report.mc_error,
        waiting=wait,
        index=index,
        theta_hat=theta_hat,
        reproduction=entry.vector,
    )
    return desc, info


def encode(x, memory, cb: FirstStageCodebook, candidates, config: CodecConfig,
           cache: dict) -> TwoStageDescription:
    return encode_trace(x, memory, cb, candidates, config, cache)[0]


def decode(desc: TwoStageDescription, cb: FirstStageCodebook, config: CodecConfig,
           cache: dict) -> tuple:
    """Reconstruct (parameter estimate, reproduction block) from a description."""
    if desc.fallback:
        index = DEFAULT_INDEX
    else:
        index, consumed = elias_decode(desc.index_bits)
        if consumed != len(desc.index_bits):
            raise DecodeError("trailing bits after the waiting-time field")
    theta_hat = cb.entry(index)
    code = second_stage_code(index, theta_hat, config, cache)
    entry_index = code.word_index().get(desc.payload_bits)
    if entry_index is None:
        raise DecodeError(f"payload {desc.payload_bits!r} is not a codeword")
    return theta_hat, np.asarray(code.entries[entry_index].vector)


def parse_description(bits: str, cb: FirstStageCodebook, config: CodecConfig,
                      cache: dict) -> tuple:
    """Parse one description off the front of a bit string.

    Returns (description, bits consumed).  The flag and the integer code are
    self-delimiting; the payload is resolved against the prefix-free
    second-stage code reconstructed from the parsed index.
    """
    if not bits:
        raise DecodeError("empty description")
    if bits[0] not in "01":
        raise DecodeError("descriptions are binary strings")
    if bits[0] == "1":
        fallback, index, pos = True, DEFAULT_INDEX, 1
        index_bits = ""
    else:
        index, consumed = elias_decode(bits, 1)
        index_bits = bits[1 : 1 + consumed]
        fallback, pos = False, 1 + consumed
        if index > config.max_wait:
            raise DecodeError(f"waiting time {index} exceeds the search cap")
    code = second_stage_code(index, cb.entry(index), config, cache)
    by_word = code.word_index()
    payload = None
    for length in sorted({len(e.word) for e in code.entries}):
        candidate = bits[pos : pos + length]
        if len(candidate) == length and candidate in by_word:
            payload = candidate
            break
    if payload is None:
        raise DecodeError(f"no codeword matches the payload at bit {pos}")
    return TwoStageDescription(fallback, index_bits, payload), pos + len(payload)


# ---------------------------------------------------------------------------
# Byte container
# ---------------------------------------------------------------------------

MAGIC = b"UCLB"
VERSION = 1


def _bits_to_bytes(bits: str) -> bytes:
    padded = bits + "0" * (-len(bits) % 8)
    return bytes(int(padded[i : i + 8], 2) for i in range(0, len(padded), 8))


def _bytes_to_bits(data: bytes, bit_length: int) -> str:
    bits = "".join(format(b, "08b") for b in data)
    return bits[:bit_length]


def pack_descriptions(descs, config: CodecConfig) -> bytes:
    """Container layout: magic, version, config digest, count, then per
    description a 32-bit bit-length header and the padded bits."""
    out = bytearray()
    out += MAGIC
    out += bytes([VERSION])
    out += config.digest()
    out += len(descs).to_bytes(4, "big")
    for desc in descs:
        bits = desc.bits()
        out += len(bits).to_bytes(4, "big")
        out += _bits_to_bytes(bits)
    return bytes(out)


def unpack_descriptions(data: bytes, config: CodecConfig) -> list:
    """Inverse of pack_descriptions; returns raw bit strings."""
    if data[:4] != MAGIC:
        raise DecodeError("bad magic bytes")
    if data[4] != VERSION:
        raise DecodeError(f"unsupported container version {data[4]}")
    if data[5:13] != config.digest():
        raise DecodeError("container was produced under a different configuration")
    count = int.from_bytes(data[13:17], "big")
    pos = 17
    out = []
    for _ in range(count):
        if pos + 4 > len(data):
            raise DecodeError("truncated description header")
        bit_length = int.from_bytes(data[pos : pos + 4], "big")
        pos += 4
        nbytes = (bit_length + 7) // 8
        if pos + nbytes > len(data):
            raise DecodeError("truncated description body")
        out.append(_bytes_to_bits(data[pos : pos + nbytes], bit_length))
        pos += nbytes
    if pos != len(data):
        raise DecodeError("trailing bytes in container")
    return out


def identification_error(theta0, theta_hat, n: int, mc_samples: int, seed: int) -> DivergenceEstimate:
    """Monte Carlo variational distance between the true and decoded sources."""
    return variational_distance_mc(theta0, theta_hat, n, mc_samples, seed)
