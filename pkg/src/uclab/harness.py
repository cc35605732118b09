"""Experiment runner: redundancy and identification error versus block length.

Each trial simulates a memory window plus a block from the true source,
runs the full encode/decode pipeline, and compares the achieved Lagrangian
against a matched code trained directly on the true source with the same
design budget.  That baseline is an honest surrogate: the true operational
optimum is an infimum no training procedure certifies.
"""

import csv
import io
import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .codec import (
    ARPrior,
    CodecConfig,
    FirstStageCodebook,
    GaussianIIDPrior,
    HMMPrior,
    codec_config_from_dict,
    decode,
    default_vc_dim,
    encode_trace,
    identification_error,
    prior_from_dict,
)
from .mdest import CandidateSet, ar_grid, gaussian_iid_grid, hmm_grid
from .quantizer import DistortionSpec, block_distortion, design_ecvq, lagrangian_performance
from .rng import child_seed, stream
from .sources import GAUSSIAN_AR, GAUSSIAN_IID, HMM, parse_model_spec

CSV_SCHEMA = "uclab-records-v1"

CSV_COLUMNS = (
    "status", "family", "theta0", "n", "trial", "waiting_time", "desc_bits",
    "distortion", "rate", "lagrangian", "baseline_lagrangian", "redundancy",
    "d_n", "d_n_se", "u_value", "u_mc_error",
)


@dataclass(frozen=True)
class ExperimentRecord:
    status: str
    family: str
    theta0: str
    n: int
    trial: int
    waiting_time: int | None
    desc_bits: int
    distortion: float
    rate: float
    lagrangian: float
    baseline_lagrangian: float
    redundancy: float
    d_n: float
    d_n_se: float
    u_value: float
    u_mc_error: float
    runtime_s: float = field(default=0.0, compare=False)


@dataclass
class ExperimentConfig:
    theta0_spec: str
    n_list: tuple
    trials: int
    lam: float = 0.3
    delta_scale: float = 0.005
    eta: float = 1.0
    mixing_exponent: float | None = None  # default: inf for i.i.d., 6.0 otherwise
    seed: int = 0
    mc_samples: int = 1500
    ident_samples: int = 2000
    max_wait: int = 4000
    train_blocks: int = 256
    init_size: int = 16
    design_iters: int = 12
    rho_max: float = 1.0
    prior: dict | None = None
    grid: dict | None = None

    def __post_init__(self):
        self.n_list = tuple(int(n) for n in self.n_list)
        if sorted(self.n_list) != list(self.n_list):
            raise ValueError("n_list must be sorted ascending")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")

    @property
    def theta0(self):
        return parse_model_spec(self.theta0_spec)

    def resolved_mixing_exponent(self) -> float:
        if self.mixing_exponent is not None:
            return self.mixing_exponent
        return math.inf if self.theta0.family == GAUSSIAN_IID else 6.0

    def resolved_prior(self):
        if self.prior is not None:
            return prior_from_dict(self.prior)
        return default_prior_for(self.theta0)

    def resolved_candidates(self) -> CandidateSet:
        return candidates_from_dict(self.grid, self.theta0)

    def codec_config(self, n: int, trial: int = 0) -> CodecConfig:
        # one fresh codebook realization per trial: medians over trials then
        # average over the codebook prior instead of riding one draw's luck;
        # the estimator pools stay shared per n so candidate tables are reused
        return CodecConfig(
            n=n,
            prior=self.resolved_prior(),
            lam=self.lam,
            eta=self.eta,
            mixing_exponent=self.resolved_mixing_exponent(),
            delta_scale=self.delta_scale,
            codebook_seed=child_seed(self.seed, "codebook", n, trial),
            max_wait=self.max_wait,
            mc_samples=self.mc_samples,
            train_blocks=self.train_blocks,
            init_size=self.init_size,
            design_iters=self.design_iters,
            distortion=DistortionSpec(rho_max=self.rho_max),
            estimator_seed=child_seed(self.seed, "estimator", n),
        )

    def to_dict(self) -> dict:
        return {
            "theta0_spec": self.theta0_spec,
            "n_list": list(self.n_list),
            "trials": self.trials,
            "lam": self.lam,
            "delta_scale": self.delta_scale,
            "eta": self.eta,
            "mixing_exponent": self.mixing_exponent,
            "seed": self.seed,
            "mc_samples": self.mc_samples,
            "ident_samples": self.ident_samples,
            "max_wait": self.max_wait,
            "train_blocks": self.train_blocks,
            "init_size": self.init_size,
            "design_iters": self.design_iters,
            "rho_max": self.rho_max,
            "prior": self.prior,
            "grid": self.grid,
        }

    @staticmethod
    def from_dict(data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(ExperimentConfig)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        return ExperimentConfig(**data)


def default_prior_for(theta0):
    if theta0.family == GAUSSIAN_IID:
        return GaussianIIDPrior()
    if theta0.family == GAUSSIAN_AR:
        return ARPrior(order=theta0.order)
    if theta0.family == HMM:
        return HMMPrior(
            states=theta0.num_states,
            entry_floor=theta0.entry_floor,
            emission_means=theta0.emission_means,
            emission_sigma=theta0.emission_sigma,
        )
    raise ValueError(f"unknown family {theta0.family!r}")


def candidates_from_dict(grid: dict | None, theta0) -> CandidateSet:
    family = theta0.family
    if grid is None:
        grid = {}
    if family == GAUSSIAN_IID:
        mean = grid.get("mean", (-1.5, 1.5, 5))
        lnsigma = grid.get("lnsigma", (-0.75, 0.75, 5))
        return gaussian_iid_grid(mean[0], mean[1], int(mean[2]),
                                 lnsigma[0], lnsigma[1], int(lnsigma[2]))
    if family == GAUSSIAN_AR:
        rng = grid.get("range", (-0.75, 0.75, 7))
        return ar_grid(rng[0], rng[1], int(rng[2]), order=theta0.order)
    if family == HMM:
        stay = grid.get("stay", (0.6, 0.75, 0.9))
        return hmm_grid(stay, theta0.emission_means, theta0.emission_sigma,
                        theta0.entry_floor)
    raise ValueError(f"unknown family {family!r}")


def run_experiment(config: ExperimentConfig) -> list:
    """Deterministic sweep over (n, trial); errors become diagnostic rows."""
    theta0 = config.theta0
    candidates = config.resolved_candidates()
    records = []
    for n in config.n_list:
        baseline = design_ecvq(
            theta0.sample_blocks(config.train_blocks, n, stream(config.seed, "baseline", n)),
            n, config.lam, DistortionSpec(rho_max=config.rho_max),
            init_size=min(config.init_size, config.train_blocks),
            seed=child_seed(config.seed, "baseline-design", n),
            max_iters=config.design_iters,
        )
        for trial in range(config.trials):
            try:
                records.append(
                    _run_trial(config, theta0, candidates, baseline, n, trial)
                )
            except Exception as exc:  # recorded, not raised: one bad trial must not kill a sweep
                records.append(ExperimentRecord(
                    status=f"error:{type(exc).__name__}:{exc}",
                    family=theta0.family, theta0=config.theta0_spec, n=n, trial=trial,
                    waiting_time=None, desc_bits=0, distortion=math.nan, rate=math.nan,
                    lagrangian=math.nan, baseline_lagrangian=math.nan, redundancy=math.nan,
                    d_n=math.nan, d_n_se=math.nan, u_value=math.nan, u_mc_error=math.nan,
                ))
    return records


def _run_trial(config, theta0, candidates, baseline, n, trial):
    started = time.perf_counter()
    ccfg = config.codec_config(n, trial)
    cb = FirstStageCodebook(ccfg.codebook_seed, ccfg.prior)
    cache = {}
    trial_seed = child_seed(config.seed, "trial", n, trial)
    path = theta0.sample_blocks(1, ccfg.memory_length + n, stream(trial_seed, "data"))[0]
    memory, block = path[: ccfg.memory_length], path[ccfg.memory_length :]
    desc, info = encode_trace(block, memory, cb, candidates, ccfg, cache)
    theta_hat, xhat = decode(desc, cb, ccfg, cache)
    if theta_hat.coords != info.theta_hat.coords or tuple(xhat) != info.reproduction:
        raise RuntimeError("decoder disagreed with encoder")
    bits = desc.bit_length()
    distortion = block_distortion(block, xhat, ccfg.distortion)
    rate = bits / n
    lagrangian = distortion + config.lam * rate
    base = lagrangian_performance(baseline, block[None, :], config.lam, ccfg.distortion)
    ident = identification_error(theta0, theta_hat, n, config.ident_samples,
                                 child_seed(trial_seed, "ident"))
    return ExperimentRecord(
        status="ok",
        family=theta0.family,
        theta0=config.theta0_spec,
        n=n,
        trial=trial,
        waiting_time=info.waiting,
        desc_bits=bits,
        distortion=distortion,
        rate=rate,
        lagrangian=lagrangian,
        baseline_lagrangian=base.lagrangian,
        redundancy=lagrangian - base.lagrangian,
        d_n=ident.point_estimate,
        d_n_se=ident.std_error,
        u_value=info.u_value,
        u_mc_error=info.u_mc_error,
        runtime_s=time.perf_counter() - started,
    )


# ---------------------------------------------------------------------------
# Envelope fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    residuals: tuple
    medians: tuple  # ((n, median), ...)


def fit_rate_envelope(records, v_of_n, metric: str = "d_n") -> FitResult:
    """Least squares of log(median metric) against log sqrt(V(n) log2 n / n).

    A slope near one means the metric tracks the envelope; constant medians
    give slope zero.  Non-positive medians cannot be fit on a log scale.
    """
    by_n = {}
    for r in records:
        if r.status == "ok":
            by_n.setdefault(r.n, []).append(getattr(r, metric))
    if len(by_n) < 3:
        raise ValueError("need at least three distinct block lengths")
    ns = sorted(by_n)
    medians = [float(np.median(by_n[n])) for n in ns]
    if any(not math.isfinite(m) or m <= 0 for m in medians):
        raise ValueError("medians must be positive and finite for a log-log fit")
    xs = np.array([math.log(math.sqrt(v_of_n(n) * math.log2(n) / n)) for n in ns])
    ys = np.log(medians)
    design = np.stack([xs, np.ones_like(xs)], axis=1)
    coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
    residuals = ys - design @ coef
    return FitResult(
        slope=float(coef[0]),
        intercept=float(coef[1]),
        residuals=tuple(float(v) for v in residuals),
        medians=tuple(zip(ns, medians)),
    )


def envelope_from_prior(prior):
    return lambda n: default_vc_dim(prior, n)


# ---------------------------------------------------------------------------
# CSV and summaries
# ---------------------------------------------------------------------------


def _format_value(value):
    if value is None:
        return "inf"
    if isinstance(value, float):
        return repr(float(value))  # builtin repr: shortest exact roundtrip
    return str(value)


def emit_csv(records, path) -> None:
    """Schema-versioned CSV; shortest-roundtrip float formatting keeps the
    bytes deterministic and the parse exact.  Runtime is deliberately not a
    column: wall-clock would break byte-identical reruns."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(f"# {CSV_SCHEMA}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([_format_value(getattr(r, col)) for col in CSV_COLUMNS])


def parse_csv(path) -> list:
    with open(path, "r", encoding="utf-8", newline="") as handle:
        header = handle.readline().strip()
        if header != f"# {CSV_SCHEMA}":
            raise ValueError(f"unsupported CSV schema line {header!r}")
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames) != CSV_COLUMNS:
            raise ValueError("unexpected CSV columns")
        records = []
        for row in reader:
            records.append(ExperimentRecord(
                status=row["status"],
                family=row["family"],
                theta0=row["theta0"],
                n=int(row["n"]),
                trial=int(row["trial"]),
                waiting_time=None if row["waiting_time"] == "inf" else int(row["waiting_time"]),
                desc_bits=int(row["desc_bits"]),
                distortion=float(row["distortion"]),
                rate=float(row["rate"]),
                lagrangian=float(row["lagrangian"]),
                baseline_lagrangian=float(row["baseline_lagrangian"]),
                redundancy=float(row["redundancy"]),
                d_n=float(row["d_n"]),
                d_n_se=float(row["d_n_se"]),
                u_value=float(row["u_value"]),
                u_mc_error=float(row["u_mc_error"]),
            ))
    return records


def emit_summary(records) -> str:
    """Per-(family, n) medians and interquartile ranges as a text table."""
    groups = {}
    for r in records:
        groups.setdefault((r.family, r.n), []).append(r)
    out = io.StringIO()
    out.write(
        f"{'family':<14}{'n':>5}{'ok':>5}{'med redund':>12}{'iqr':>9}"
        f"{'med d_n':>10}{'iqr':>9}{'med wait':>10}{'mean bits':>11}  flags\n"
    )
    for (family, n), rows in sorted(groups.items()):
        ok = [r for r in rows if r.status == "ok"]
        flags = []
        errors = len(rows) - len(ok)
        if errors:
            flags.append(f"{errors} errors")
        if not ok:
            out.write(f"{family:<14}{n:>5}{0:>5}{'-':>12}{'-':>9}{'-':>10}{'-':>9}{'-':>10}{'-':>11}  {','.join(flags)}\n")
            continue
        red = np.array([r.redundancy for r in ok])
        dn = np.array([r.d_n for r in ok])
        waits = np.array([r.waiting_time if r.waiting_time is not None else np.inf for r in ok])
        bits = np.array([r.desc_bits for r in ok])
        if len(red) > 1:
            se = red.std(ddof=1) / math.sqrt(len(red))
            if red.mean() < -3.0 * se:
                flags.append("redundancy below -3se")
        out.write(
            f"{family:<14}{n:>5}{len(ok):>5}"
            f"{np.median(red):>12.5f}{_iqr(red):>9.5f}"
            f"{np.median(dn):>10.5f}{_iqr(dn):>9.5f}"
            f"{np.median(waits):>10.1f}{bits.mean():>11.2f}  {','.join(flags)}\n"
        )
    return out.getvalue()


def _iqr(values) -> float:
    return float(np.percentile(values, 75) - np.percentile(values, 25))
