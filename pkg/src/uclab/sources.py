"""Parametric source families: Gaussian i.i.d., Gaussian AR(p), hidden Markov.

Each family provides exact stationary sampling, batched log-densities of
n-dimensional marginals, and declared mixing/smoothness diagnostics.
Divergences between families' n-marginals are estimated by Monte Carlo
in log space with a bounded integrand.
"""

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .rng import stream

LOG_2PI = math.log(2.0 * math.pi)

GAUSSIAN_IID = "gaussian_iid"
GAUSSIAN_AR = "gaussian_ar"
HMM = "hmm"


class ModelError(ValueError):
    """Invalid model specification (unstable filter, bad transition rows, ...)."""


@dataclass(frozen=True)
class ParamVector:
    family: str
    coords: tuple


@dataclass(frozen=True)
class MixingDecay:
    """Declared envelope for the absolute-regularity coefficients.

    kind "iid_zero":     beta(k) = 0 for all k >= 1
    kind "polynomial":   beta(k) = scale * k**(-rate)
    kind "exponential":  beta(k) = scale * rate**k   (0 < rate < 1)
    """

    kind: str
    rate: float = 0.0
    scale: float = 1.0

    def beta(self, k: int) -> float:
        if k < 1:
            raise ValueError("mixing lag must be >= 1")
        if self.kind == "iid_zero":
            return 0.0
        if self.kind == "polynomial":
            return self.scale * float(k) ** (-self.rate)
        if self.kind == "exponential":
            return self.scale * self.rate**k
        raise ValueError(f"unknown decay kind {self.kind!r}")


@dataclass(frozen=True)
class SampleBlock:
    values: tuple
    origin: tuple = ()

    def __len__(self):
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass(frozen=True)
class DivergenceEstimate:
    point_estimate: float
    std_error: float
    sample_count: int


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------


@dataclass
class GaussianIID:
    """I.i.d. Gaussian letters; parameters (mean, sigma)."""

    mean: float
    sigma: float
    smoothness: tuple | None = None  # (radius, lipschitz constant), declared
    mixing: MixingDecay = field(default=MixingDecay("iid_zero"), compare=False)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ModelError(f"sigma must be positive, got {self.sigma}")
        if self.smoothness is None:
            # local-linearity constants: within radius sigma/2 the per-letter
            # normalized distance obeys d_n/sqrt(n) <= 3/(sigma - radius)
            radius = self.sigma / 2.0
            self.smoothness = (radius, 3.0 / (self.sigma - radius))

    @property
    def family(self) -> str:
        return GAUSSIAN_IID

    @property
    def coords(self) -> tuple:
        return (float(self.mean), float(self.sigma))

    def param_vector(self) -> ParamVector:
        return ParamVector(self.family, self.coords)

    def replace_coords(self, coords) -> "GaussianIID":
        m, s = (float(c) for c in coords)
        return GaussianIID(m, s)

    def sample_blocks(self, count: int, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.sigma * rng.standard_normal((count, n))

    def sample_path(self, length: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_blocks(1, length, rng)[0]

    def logpdf_blocks(self, blocks: np.ndarray) -> np.ndarray:
        blocks = np.atleast_2d(np.asarray(blocks, dtype=np.float64))
        n = blocks.shape[1]
        z = (blocks - self.mean) / self.sigma
        out = -0.5 * np.sum(z * z, axis=1) - n * (0.5 * LOG_2PI + math.log(self.sigma))
        if not np.all(np.isfinite(out)):
            raise ModelError("non-finite log-density")
        return out


@dataclass
class GaussianAR:
    """Stationary Gaussian autoregression X_t = -sum_i a_i X_{t-i} + W_t, W_t ~ N(0,1).

    ``coeffs`` are (a_1, ..., a_p); the filter polynomial 1 + sum a_i z^i must
    have all roots strictly outside the unit circle.
    """

    coeffs: tuple
    smoothness: tuple | None = None
    mixing: MixingDecay | None = field(default=None, compare=False)
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        self.coeffs = tuple(float(a) for a in self.coeffs)
        if len(self.coeffs) < 1:
            raise ModelError("AR order must be >= 1")
        if not ar_stability_check(self.coeffs):
            raise ModelError(f"unstable AR coefficients {self.coeffs}")
        if self.mixing is None:
            comp = _companion_matrix(self.coeffs)
            radius = float(np.max(np.abs(np.linalg.eigvals(comp))))
            self.mixing = MixingDecay("exponential", rate=radius, scale=1.0)

    @property
    def family(self) -> str:
        return GAUSSIAN_AR

    @property
    def order(self) -> int:
        return len(self.coeffs)

    @property
    def coords(self) -> tuple:
        return self.coeffs

    def param_vector(self) -> ParamVector:
        return ParamVector(self.family, self.coords)

    def replace_coords(self, coords) -> "GaussianAR":
        return GaussianAR(tuple(float(c) for c in coords))

    def _covariance(self, n: int) -> np.ndarray:
        key = ("cov", n)
        if key not in self._cache:
            self._cache[key] = ar_autocorrelation(self.coeffs, n)
        return self._cache[key]

    def _cholesky(self, n: int) -> np.ndarray:
        key = ("chol", n)
        if key not in self._cache:
            self._cache[key] = np.linalg.cholesky(self._covariance(n))
        return self._cache[key]

    def _head_terms(self) -> tuple:
        # log-density of the first p letters under the stationary law
        key = "head"
        if key not in self._cache:
            p = self.order
            chol = self._cholesky(p)
            logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
            self._cache[key] = (chol, logdet)
        return self._cache[key]

    def sample_blocks(self, count: int, n: int, rng: np.random.Generator) -> np.ndarray:
        p = self.order
        head = min(n, p)
        out = np.empty((count, n))
        z = rng.standard_normal((count, head))
        out[:, :head] = z @ self._cholesky(head).T
        if n > p:
            a = np.asarray(self.coeffs)
            noise = rng.standard_normal((count, n - p))
            for t in range(p, n):
                out[:, t] = noise[:, t - p] - out[:, t - p : t] @ a[::-1]
        if not np.all(np.isfinite(out)):
            raise ModelError("non-finite sample")
        return out

    def sample_path(self, length: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_blocks(1, length, rng)[0]

    def logpdf_blocks(self, blocks: np.ndarray) -> np.ndarray:
        blocks = np.atleast_2d(np.asarray(blocks, dtype=np.float64))
        n = blocks.shape[1]
        p = self.order
        if n <= p:
            chol = self._cholesky(n)
            logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
            sol = np.linalg.solve(chol, blocks.T)
            quad = np.sum(sol * sol, axis=0)
            out = -0.5 * (n * LOG_2PI + logdet + quad)
        else:
            chol, logdet = self._head_terms()
            sol = np.linalg.solve(chol, blocks[:, :p].T)
            quad = np.sum(sol * sol, axis=0)
            head = -0.5 * (p * LOG_2PI + logdet + quad)
            # innovations: e_t = x_t + sum_i a_i x_{t-i} are i.i.d. N(0,1)
            a = np.asarray(self.coeffs)
            errs = blocks[:, p:].copy()
            for i, ai in enumerate(a, start=1):
                errs += ai * blocks[:, p - i : n - i]
            tail = -0.5 * ((n - p) * LOG_2PI + np.sum(errs * errs, axis=1))
            out = head + tail
        if not np.all(np.isfinite(out)):
            raise ModelError("non-finite log-density")
        return out


@dataclass
class HiddenMarkov:
    """Finite-state chain observed through fixed Gaussian emission densities.

    Parameters are the M*M transition probabilities; emission means and the
    common emission sigma are fixed configuration, not part of the parameter
    vector.  All transition entries must be >= entry_floor > 0 and rows must
    sum to one, which makes the chain geometrically ergodic.
    """

    transition: tuple
    emission_means: tuple
    emission_sigma: float = 1.0
    entry_floor: float = 0.02
    smoothness: tuple | None = None
    mixing: MixingDecay | None = field(default=None, compare=False)
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        mat = np.asarray(self.transition, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ModelError("transition matrix must be square")
        m = mat.shape[0]
        if len(self.emission_means) != m:
            raise ModelError("need one emission mean per state")
        if not self.emission_sigma > 0:
            raise ModelError("emission sigma must be positive")
        if not self.entry_floor > 0:
            raise ModelError("entry floor must be positive")
        if np.any(mat < self.entry_floor):
            raise ModelError(
                f"transition entries must be >= {self.entry_floor}, got min {mat.min()}"
            )
        if np.max(np.abs(mat.sum(axis=1) - 1.0)) > 1e-9:
            raise ModelError("transition rows must sum to 1")
        self.transition = tuple(tuple(float(v) for v in row) for row in mat)
        self.emission_means = tuple(float(v) for v in self.emission_means)
        if self.mixing is None:
            eig = np.sort(np.abs(np.linalg.eigvals(mat)))
            rate = float(eig[-2]) if m > 1 else 0.0
            self.mixing = MixingDecay("exponential", rate=min(rate, 0.999999), scale=float(m))

    @property
    def family(self) -> str:
        return HMM

    @property
    def num_states(self) -> int:
        return len(self.emission_means)

    @property
    def coords(self) -> tuple:
        return tuple(v for row in self.transition for v in row)

    def param_vector(self) -> ParamVector:
        return ParamVector(self.family, self.coords)

    def replace_coords(self, coords) -> "HiddenMarkov":
        m = self.num_states
        coords = tuple(float(c) for c in coords)
        if len(coords) != m * m:
            raise ModelError(f"need {m * m} transition entries, got {len(coords)}")
        rows = tuple(coords[i * m : (i + 1) * m] for i in range(m))
        return HiddenMarkov(
            rows, self.emission_means, self.emission_sigma, self.entry_floor
        )

    def _matrix(self) -> np.ndarray:
        if "mat" not in self._cache:
            self._cache["mat"] = np.asarray(self.transition, dtype=np.float64)
        return self._cache["mat"]

    def stationary(self) -> np.ndarray:
        if "pi" not in self._cache:
            self._cache["pi"] = stationary_distribution(self._matrix())
        return self._cache["pi"]

    def sample_blocks(self, count: int, n: int, rng: np.random.Generator) -> np.ndarray:
        mat = self._matrix()
        cum = np.cumsum(mat, axis=1)
        cum[:, -1] = 1.0
        pi_cum = np.cumsum(self.stationary())
        pi_cum[-1] = 1.0
        states = np.searchsorted(pi_cum, rng.random(count), side="right")
        means = np.asarray(self.emission_means)
        out = np.empty((count, n))
        noise = rng.standard_normal((count, n))
        for t in range(n):
            if t > 0:
                u = rng.random(count)
                states = (u[:, None] > cum[states]).sum(axis=1)
            out[:, t] = means[states] + self.emission_sigma * noise[:, t]
        return out

    def sample_path(self, length: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_blocks(1, length, rng)[0]

    def logpdf_blocks(self, blocks: np.ndarray) -> np.ndarray:
        blocks = np.atleast_2d(np.asarray(blocks, dtype=np.float64))
        count, n = blocks.shape
        mat = self._matrix()
        means = np.asarray(self.emission_means)
        sig = self.emission_sigma
        # scaled forward recursion; per-step emission max is factored out so the
        # linear-space pass cannot underflow for any finite observation
        out = np.zeros(count)
        alpha = np.broadcast_to(self.stationary(), (count, self.num_states)).copy()
        for t in range(n):
            z = (blocks[:, t, None] - means[None, :]) / sig
            logb = -0.5 * z * z - (0.5 * LOG_2PI + math.log(sig))
            top = logb.max(axis=1)
            alpha = alpha * np.exp(logb - top[:, None])
            scale = alpha.sum(axis=1)
            if np.any(scale <= 0.0) or not np.all(np.isfinite(scale)):
                raise ModelError("forward recursion lost all probability mass")
            out += np.log(scale) + top
            alpha = (alpha / scale[:, None]) @ mat
        if not np.all(np.isfinite(out)):
            raise ModelError("non-finite log-density")
        return out


# ---------------------------------------------------------------------------
# Module operations
# ---------------------------------------------------------------------------


def sample_path(model, length: int, seed: int) -> SampleBlock:
    """Deterministic stationary sample of the given length."""
    if length < 1:
        raise ValueError("length must be >= 1")
    values = model.sample_path(length, stream(seed, "path"))
    return SampleBlock(tuple(float(v) for v in values), origin=(seed, 0))


def log_density(model, block) -> float:
    """ln p(x^n) of the model's n-dimensional marginal at the block."""
    values = block.as_array() if isinstance(block, SampleBlock) else np.asarray(block)
    return float(model.logpdf_blocks(values[None, :])[0])


def kl_rate_gaussian_iid(theta, theta_prime) -> float:
    """Per-letter divergence between Gaussian i.i.d. sources.

    Evaluates (1/2)(ln(s/s')^2 + (s'/s)^2 + (m-m')^2/s'^2 - 1), which does not
    depend on the block length.
    """
    m, s = _iid_coords(theta)
    mp, sp = _iid_coords(theta_prime)
    if sp <= 0 or s <= 0:
        raise ValueError("sigma values must be positive")
    return 0.5 * (math.log((s / sp) ** 2) + (sp / s) ** 2 + (m - mp) ** 2 / sp**2 - 1.0)


def _iid_coords(theta) -> tuple:
    if isinstance(theta, GaussianIID):
        return theta.mean, theta.sigma
    if isinstance(theta, ParamVector):
        if theta.family != GAUSSIAN_IID:
            raise ValueError(f"expected {GAUSSIAN_IID}, got {theta.family}")
        return theta.coords
    return tuple(theta)


def variational_distance_mc(model, other, n: int, samples: int, seed: int) -> DivergenceEstimate:
    """Monte Carlo L1 distance between n-dimensional marginals.

    Uses the one-sided identity d = 2 E_model[(1 - q/p)_+] with the density
    ratio evaluated in log space, so the integrand is bounded in [0, 1].
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    blocks = model.sample_blocks(samples, n, stream(seed, "tvmc"))
    delta = other.logpdf_blocks(blocks) - model.logpdf_blocks(blocks)
    integrand = -np.expm1(np.minimum(delta, 0.0))
    point = 2.0 * float(np.mean(integrand))
    if samples > 1:
        se = 2.0 * float(np.std(integrand, ddof=1)) / math.sqrt(samples)
    else:
        se = 0.0
    return DivergenceEstimate(point, se, samples)


def _companion_matrix(coeffs) -> np.ndarray:
    # recursion X_t = -a_1 X_{t-1} - ... - a_p X_{t-p} + W_t
    p = len(coeffs)
    comp = np.zeros((p, p))
    comp[0, :] = [-a for a in coeffs]
    if p > 1:
        comp[1:, :-1] = np.eye(p - 1)
    return comp


def ar_stability_check(coeffs) -> bool:
    """True iff 1 + sum_i a_i z^i has all roots strictly outside the unit circle.

    Decided by the Schur-Cohn step-down recursion: the filter is stable iff
    every reflection coefficient has magnitude < 1.
    """
    a = [float(v) for v in coeffs]
    if len(a) < 1:
        raise ValueError("order must be >= 1")
    while a:
        k = a[-1]
        if abs(k) >= 1.0:
            return False
        if len(a) == 1:
            return True
        denom = 1.0 - k * k
        a = [(a[i] - k * a[len(a) - 2 - i]) / denom for i in range(len(a) - 1)]
    return True


def ar_autocorrelation(coeffs, n: int) -> np.ndarray:
    """n x n stationary covariance (Toeplitz) with unit innovation variance.

    Solves the Yule-Walker relations R(k) + sum_i a_i R(|k-i|) = 1{k=0} for
    k = 0..p and extends by the recursion for larger lags.
    """
    if not ar_stability_check(coeffs):
        raise ModelError(f"unstable AR coefficients {tuple(coeffs)}")
    if n < 1:
        raise ValueError("n must be >= 1")
    a = [float(v) for v in coeffs]
    p = len(a)
    system = np.zeros((p + 1, p + 1))
    rhs = np.zeros(p + 1)
    rhs[0] = 1.0
    for k in range(p + 1):
        system[k, k] += 1.0
        for i, ai in enumerate(a, start=1):
            system[k, abs(k - i)] += ai
    r = np.zeros(max(n, p + 1))
    r[: p + 1] = np.linalg.solve(system, rhs)
    for k in range(p + 1, len(r)):
        r[k] = -sum(ai * r[k - i] for i, ai in enumerate(a, start=1))
    from scipy.linalg import toeplitz

    return toeplitz(r[:n])


def stationary_distribution(transition) -> np.ndarray:
    """Fixed point pi = pi A of a strictly positive stochastic matrix."""
    mat = np.asarray(transition, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ModelError("transition matrix must be square")
    if np.any(mat <= 0.0):
        raise ModelError("transition entries must be strictly positive")
    if np.max(np.abs(mat.sum(axis=1) - 1.0)) > 1e-9:
        raise ModelError("transition rows must sum to 1")
    m = mat.shape[0]
    pi = np.full(m, 1.0 / m)
    for _ in range(100_000):
        nxt = pi @ mat
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) < 1e-13:
            pi = nxt
            break
        pi = nxt
    if np.max(np.abs(pi @ mat - pi)) >= 1e-12:
        raise ModelError("power iteration did not converge")
    return pi


def mixing_gap_bound(n: int, l_n: int, decay: MixingDecay, bound: float) -> float:
    """Coupling gap M (n-1) beta(l_n) between dependent blocks and i.i.d. copies."""
    if n < 1 or l_n < 1 or bound < 0:
        raise ValueError("arguments must be positive")
    if n == 1:
        return 0.0
    return bound * (n - 1) * decay.beta(l_n)


# ---------------------------------------------------------------------------
# Model specification grammar
# ---------------------------------------------------------------------------
#
#   gaussian_iid mean=<float> sigma=<float>
#   gaussian_ar coeffs=<a1>,<a2>,...
#   hmm rows=<r11>,<r12>;<r21>,<r22> means=<m1>,<m2> [sigma=<s>] [floor=<f>]


def parse_model_spec(text: str):
    parts = text.strip().split()
    if not parts:
        raise ModelError("empty model spec")
    family, fields = parts[0], {}
    for item in parts[1:]:
        m = re.fullmatch(r"([a-z_]+)=([^ ]+)", item)
        if not m:
            raise ModelError(f"bad field {item!r}")
        fields[m.group(1)] = m.group(2)
    try:
        if family == GAUSSIAN_IID:
            return GaussianIID(float(fields["mean"]), float(fields["sigma"]))
        if family == GAUSSIAN_AR:
            coeffs = tuple(float(v) for v in fields["coeffs"].split(","))
            return GaussianAR(coeffs)
        if family == HMM:
            rows = tuple(
                tuple(float(v) for v in row.split(","))
                for row in fields["rows"].split(";")
            )
            means = tuple(float(v) for v in fields["means"].split(","))
            sigma = float(fields.get("sigma", 1.0))
            floor = float(fields.get("floor", 0.02))
            return HiddenMarkov(rows, means, sigma, floor)
    except KeyError as exc:
        raise ModelError(f"missing field {exc} for family {family!r}") from exc
    raise ModelError(f"unknown family {family!r}")


def format_model_spec(model) -> str:
    if isinstance(model, GaussianIID):
        return f"{GAUSSIAN_IID} mean={model.mean!r} sigma={model.sigma!r}"
    if isinstance(model, GaussianAR):
        coeffs = ",".join(repr(a) for a in model.coeffs)
        return f"{GAUSSIAN_AR} coeffs={coeffs}"
    if isinstance(model, HiddenMarkov):
        rows = ";".join(",".join(repr(v) for v in row) for row in model.transition)
        means = ",".join(repr(v) for v in model.emission_means)
        return (
            f"{HMM} rows={rows} means={means} "
            f"sigma={model.emission_sigma!r} floor={model.entry_floor!r}"
        )
    raise ModelError(f"cannot format {type(model)!r}")
