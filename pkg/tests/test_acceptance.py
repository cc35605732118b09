"""End-to-end acceptance suite.

Each test covers one release criterion at its stated tolerance and prints a
single PASS line (visible under `pytest -s`).  Everything is seeded, so the
numbers are bit-reproducible in a fixed environment.
"""

import itertools
import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from oracles import hmm_logpdf_pathsum
from uclab.codec import (
    ARPrior,
    CodecConfig,
    FirstStageCodebook,
    GaussianIIDPrior,
    HMMPrior,
    elias_decode,
    elias_encode,
    elias_length,
    encode_trace,
    estimate_hit_probability,
    decode,
    waiting_time,
)
from uclab.harness import ExperimentConfig, envelope_from_prior, fit_rate_envelope, run_experiment
from uclab.mdest import ar_grid, extract_blocks, gaussian_iid_grid, hmm_grid, md_estimate, u_statistic, BlockLayout
from uclab.quantizer import (
    DiscreteDistribution,
    DistortionSpec,
    brute_force_optimal_lagrangian,
    convert_memory_to_zero_memory,
    design_ecvq,
    kraft_sum_exact,
    toy_code_lagrangian,
    validate_prefix_free,
    variational_distance_discrete,
    wasserstein_exact_small,
)
from uclab.rng import child_seed, stream
from uclab.sources import (
    GaussianAR,
    GaussianIID,
    HiddenMarkov,
    kl_rate_gaussian_iid,
    variational_distance_mc,
)
from uclab.vc import empirical_sup_deviation, half_lines, intervals, km_vc_bound, shatter_coefficient, vc_deviation_tail

from test_quantizer import random_toy_memory_code, toy_stream

SPEC = DistortionSpec(rho_max=1.0)


def report(criterion, detail=""):
    print(f"[acceptance] {criterion}: PASS {detail}")


def test_criterion_01_pinsker_suite():
    started = time.perf_counter()
    rng = stream(101, "pairs")
    for pair in range(100):
        a = GaussianIID(rng.uniform(-2, 2), rng.uniform(0.4, 2.5))
        b = GaussianIID(rng.uniform(-2, 2), rng.uniform(0.4, 2.5))
        kl = kl_rate_gaussian_iid(a, b)
        for n in (1, 2, 4, 8):
            est = variational_distance_mc(a, b, n=n, samples=2000,
                                          seed=child_seed(101, "mc", pair, n))
            assert est.point_estimate <= math.sqrt(2 * n * kl) + 3 * est.std_error, (
                f"pair {pair} n={n}: {est.point_estimate} vs bound"
            )
    elapsed = time.perf_counter() - started
    assert elapsed < 120.0
    report("criterion 1 (Pinsker suite, 100 pairs x n in {1,2,4,8})", f"[{elapsed:.1f}s]")


def test_criterion_02_closed_form_total_variation():
    started = time.perf_counter()
    est = variational_distance_mc(GaussianIID(0.0, 1.0), GaussianIID(1.0, 1.0),
                                  n=1, samples=1_000_000, seed=202)
    assert abs(est.point_estimate - 0.76584) <= 0.01
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0
    report("criterion 2 (unit mean shift TV = 0.76584 +- 0.01)",
           f"[estimate {est.point_estimate:.5f}, {elapsed:.1f}s]")


def test_criterion_03_hmm_density_oracle():
    rng = stream(303, "models")
    checked = 0
    for n in range(1, 7):
        for m in (1, 2, 3):
            for rep in range(2):
                rows = rng.dirichlet(np.full(m, 5.0), size=m)
                rows = 0.9 * rows + 0.1 / m  # keep entries off the floor
                means = np.linspace(0.0, 3.0 * (m - 1), m) + rng.normal(0, 0.2, m)
                model = HiddenMarkov(
                    tuple(tuple(float(v) for v in r) for r in rows),
                    tuple(float(v) for v in means),
                )
                block = model.sample_path(n, stream(303, "block", n, m, rep))
                expected = hmm_logpdf_pathsum(
                    model.transition, model.emission_means, model.emission_sigma,
                    model.stationary(), block,
                )
                got = float(model.logpdf_blocks(block[None, :])[0])
                assert got == pytest.approx(expected, rel=1e-10)
                checked += 1
    report("criterion 3 (HMM forward = path enumeration, n<=6, M<=3)",
           f"[{checked} cases at rel 1e-10]")


def test_criterion_04_appendix_lemma_suite():
    rng = stream(404, "instances")
    lam_menu = [1, 2, 3]
    for instance in range(200):
        k = int(rng.integers(2, 4))
        support = tuple((float(v),) for v in rng.normal(0, 1.2, size=k))
        p = DiscreteDistribution(support, tuple(rng.dirichlet(np.ones(k))))
        q = DiscreteDistribution(support, tuple(rng.dirichlet(np.ones(k))))
        lam = float(rng.uniform(0.05, 0.8))
        points = [(float(v),) for v in rng.normal(0, 1.2, size=int(rng.integers(1, 4)))]
        # (a) optimal-Lagrangian mismatch against the exhaustive optimum
        opt_p = brute_force_optimal_lagrangian(p, points, lam, lam_menu, SPEC)
        opt_q = brute_force_optimal_lagrangian(q, points, lam, lam_menu, SPEC)
        tv = variational_distance_discrete(p, q)
        assert abs(opt_p - opt_q) <= 0.5 * SPEC.rho_max * tv + 1e-12
        # (b) transport cost bounded by half the variational distance
        wass = wasserstein_exact_small(p, q, SPEC)
        assert wass <= 0.5 * SPEC.rho_max * tv + 1e-9

    # (c) structural caps on every designed code
    for trial in range(100):
        n = int(rng.integers(1, 4))
        lam = float(rng.uniform(0.05, 2.5))
        blocks = rng.normal(0, float(rng.uniform(0.5, 2.0)), size=(60, n))
        code = design_ecvq(blocks, n, lam, SPEC, init_size=10, seed=404_000 + trial,
                           max_iters=8)
        num, den = kraft_sum_exact(code.lengths)
        assert num <= den
        validate_prefix_free([e.word for e in code.entries])
        cap = 2.0 * n * SPEC.rho_max / lam
        assert all(l <= cap for l in code.lengths)
        assert len(code.entries) <= 2.0**cap
    report("criterion 4 (mismatch bound, transport bound, Kraft and code caps)")


def test_criterion_05_zero_memory_conversion():
    failures = 0
    for trial in range(100):
        toy = random_toy_memory_code(stream(505, "code", trial))
        series = toy_stream(stream(505, "stream", trial), 10_000)
        blocks, memories = [], []
        for k in range(1, len(series) // toy.n - 1):
            start = k * toy.n
            blocks.append(tuple(series[start : start + toy.n]))
            memories.append(tuple(series[start - toy.m : start]))
        lam = float(stream(505, "lam", trial).uniform(0.05, 0.8))
        zero = convert_memory_to_zero_memory(toy, lam, SPEC)
        l_memory = toy_code_lagrangian(toy, blocks, memories, lam, SPEC)
        l_zero = toy_code_lagrangian(zero, blocks, memories, lam, SPEC)
        failures += l_zero > l_memory + 1e-12
    assert failures == 0
    report("criterion 5 (zero-memory conversion never worse, 100 codes x 1e4 samples)")


def test_criterion_06_elias_codec():
    started = time.perf_counter()
    for i in range(1, 1_000_001):
        bits = elias_encode(i)
        value, consumed = elias_decode(bits)
        assert value == i and consumed == len(bits)
        n = i.bit_length() - 1
        assert len(bits) == n + 2 * ((n + 1).bit_length() - 1) + 1
    words = sorted(elias_encode(i) for i in range(1, 10_001))
    for a, b in zip(words, words[1:]):
        assert not b.startswith(a)
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0
    report("criterion 6 (Elias roundtrip 1..1e6, exact lengths, prefix-free 1e4)",
           f"[{elapsed:.1f}s]")


def test_criterion_07_md_inequality():
    total, holds = 0, 0

    def run_trial(truth, cands, blocks, n, seed):
        nonlocal total, holds
        u = u_statistic(truth, blocks, cands, mc_samples=800, seed=seed)
        est = md_estimate(blocks, cands, mc_samples=800, seed=seed)
        d = variational_distance_mc(est, truth, n=n, samples=3000, seed=seed + 1)
        tol = 5.0 * (d.std_error + u.mc_error)
        total += 1
        holds += d.point_estimate <= 4.0 * u.value + 3.0 / n + tol

    grid = gaussian_iid_grid(-1.0, 1.0, 5, -0.6, 0.6, 5)
    truth = grid.members[12]
    assert truth.coords == (0.0, 1.0)
    for n in (4, 8, 16):
        for t in range(50):
            blocks = truth.sample_blocks(n, n, stream(707, "iid", n, t))
            run_trial(truth, grid, blocks, n, seed=7070)

    ar_cands = ar_grid(-0.75, 0.75, 7, order=1)
    ar_truth = GaussianAR((-0.5,))
    layout = BlockLayout(n=6, gap=8)
    for t in range(50):
        path = ar_truth.sample_path(layout.memory_length, stream(707, "mix", t))
        run_trial(ar_truth, ar_cands, extract_blocks(path, layout), 6, seed=7171)

    assert total == 200
    assert holds >= 198  # >= 99%
    report("criterion 7 (MD inequality d <= 4U + 3/n + tolerance)",
           f"[{holds}/200 trials]")


def test_criterion_08_vc_bounds():
    assert km_vc_bound(6, 3) == pytest.approx(12 * math.log2(12 * math.e), rel=1e-12)
    p = 2
    assert km_vc_bound(2 * p + 2, 2) == pytest.approx((4 * p + 4) * math.log2(8 * math.e), rel=1e-12)
    m, n = 2, 8
    assert km_vc_bound(2 * m * m, n) == pytest.approx(4 * m * m * math.log2(4 * math.e * n), rel=1e-12)

    rng = stream(808, "points")
    for n_pts in range(1, 11):
        pts = np.sort(rng.normal(size=n_pts))
        rep = shatter_coefficient(intervals(), pts, 1, seed=1)
        assert rep.distinct_patterns == n_pts * (n_pts + 1) // 2 + 1

    def sampler(rng_, count):
        return rng_.uniform(0.0, 1.0, size=count)

    for n_samp, trials in ((64, 200), (10_000, 60)):
        stats_ = empirical_sup_deviation(half_lines(), sampler, n=n_samp,
                                         concept_budget=100, trials=trials, seed=809,
                                         reference_size=200_000)
        sups = np.asarray(stats_.per_trial)
        for delta in (0.05, 0.1, 0.2, 0.3, 0.5):
            frequency = float(np.mean(sups > delta))
            assert frequency <= vc_deviation_tail(n_samp, 2, delta) + 1e-12
    report("criterion 8 (KM bound values, interval shatter formula, tail bound)")


ROUNDTRIP_CASES = (
    (
        "gaussian_iid",
        GaussianIID(0.0, 1.0),
        dict(n=4, prior=GaussianIIDPrior(), lam=0.3, codebook_seed=91,
             max_wait=300, mc_samples=250, train_blocks=96, init_size=8,
             design_iters=8),
        0.9,
        400,
        gaussian_iid_grid(-1.0, 1.0, 3, -0.5, 0.5, 3),
    ),
    (
        "gaussian_ar",
        GaussianAR((-0.5,)),
        dict(n=4, prior=ARPrior(order=1), lam=0.3, codebook_seed=92,
             mixing_exponent=6.0, max_wait=300, mc_samples=250, train_blocks=96,
             init_size=8, design_iters=8),
        0.9,
        300,
        ar_grid(-0.75, 0.75, 7, order=1),
    ),
    (
        "hmm",
        HiddenMarkov(((0.8, 0.2), (0.25, 0.75)), (0.0, 4.0)),
        dict(n=4, prior=HMMPrior(states=2), lam=0.3, codebook_seed=93,
             mixing_exponent=6.0, max_wait=300, mc_samples=200, train_blocks=80,
             init_size=8, design_iters=6),
        1.0,
        300,
        hmm_grid((0.6, 0.75, 0.9), (0.0, 4.0)),
    ),
)


def test_criterion_09_codec_roundtrips():
    started = time.perf_counter()
    total = 0
    for family, truth, kw, tau, trials, cands in ROUNDTRIP_CASES:
        base = CodecConfig(delta_scale=1.0, **kw)
        config = CodecConfig(delta_scale=tau / base.match_threshold, **kw)
        cb_enc = FirstStageCodebook(config.codebook_seed, config.prior)
        cb_dec = FirstStageCodebook(config.codebook_seed, config.prior)
        cache_enc, cache_dec = {}, {}
        max_index = 1
        for t in range(trials):
            path = truth.sample_blocks(
                1, config.memory_length + config.n, stream(909, family, t)
            )[0]
            memory, block = path[: config.memory_length], path[config.memory_length :]
            desc, info = encode_trace(block, memory, cb_enc, cands, config, cache_enc)
            theta_hat, xhat = decode(desc, cb_dec, config, cache_dec)
            assert theta_hat.coords == info.theta_hat.coords
            assert tuple(xhat) == info.reproduction
            max_index = max(max_index, info.index)
            total += 1
        assert cb_enc.stream_bytes(max_index) == cb_dec.stream_bytes(max_index)
        for index, code in cache_enc.items():
            assert code.serialize() == cache_dec[index].serialize()
    assert total == 1000
    elapsed = time.perf_counter() - started
    report("criterion 9 (1000 bit-exact roundtrips across three families)",
           f"[{elapsed:.1f}s]")


def test_criterion_10_convergence_trends():
    started = time.perf_counter()
    config = ExperimentConfig(
        theta0_spec="gaussian_iid mean=0.0 sigma=1.0",
        n_list=(4, 8, 16, 32),
        trials=50,
        lam=0.3,
        delta_scale=0.005,
        seed=2026,
        mc_samples=1000,
        ident_samples=2000,
        max_wait=4000,
        train_blocks=256,
        init_size=16,
        design_iters=12,
    )
    records = run_experiment(config)
    med_redundancy, med_ident = [], []
    for n in config.n_list:
        ok = [r for r in records if r.n == n and r.status == "ok"]
        assert len(ok) == config.trials
        med_redundancy.append(float(np.median([r.redundancy for r in ok])))
        med_ident.append(float(np.median([r.d_n for r in ok])))
    assert all(a >= b for a, b in zip(med_redundancy, med_redundancy[1:])), med_redundancy
    assert all(a >= b for a, b in zip(med_ident, med_ident[1:])), med_ident
    fit = fit_rate_envelope(records, envelope_from_prior(config.resolved_prior()),
                            metric="d_n")
    assert fit.slope > 0.0
    elapsed = time.perf_counter() - started
    assert elapsed < 1800.0
    report(
        "criterion 10 (median redundancy and identification error non-increasing)",
        f"[redundancy {['%.3f' % v for v in med_redundancy]}, "
        f"d_n {['%.3f' % v for v in med_ident]}, slope {fit.slope:.2f}, {elapsed:.0f}s]",
    )


def test_criterion_11_waiting_time_law():
    kw = dict(n=4, prior=GaussianIIDPrior(), lam=0.3, max_wait=3000,
              mc_samples=300, train_blocks=64, init_size=8, design_iters=6)
    base = CodecConfig(codebook_seed=0, delta_scale=1.0, **kw)
    config = CodecConfig(codebook_seed=0, delta_scale=0.9 / base.match_threshold, **kw)
    theta = GaussianIID(0.3, 1.1)
    q_hat = estimate_hit_probability(theta, config, draws=4000, seed=424242)
    assert 0.01 <= q_hat <= 0.5

    waits = []
    for t in range(1000):
        seed = child_seed(31337, "wtlaw", t)
        cb = FirstStageCodebook(seed, config.prior)
        waits.append(waiting_time(theta, cb, replace(config, codebook_seed=seed)))
    assert all(w is not None for w in waits)
    waits = np.asarray(waits)

    # cross-check the two estimators before the distributional test
    assert abs(waits.mean() - 1.0 / q_hat) <= 0.2 / q_hat

    count = len(waits)
    k_max = 1
    while count * q_hat * (1 - q_hat) ** k_max >= 5:
        k_max += 1
    observed = [int(np.sum(waits == k)) for k in range(1, k_max + 1)]
    observed.append(int(np.sum(waits > k_max)))
    expected = [count * q_hat * (1 - q_hat) ** (k - 1) for k in range(1, k_max + 1)]
    expected.append(count * (1 - q_hat) ** k_max)
    chi2 = sum((o - e) ** 2 / e for o, e in zip(observed, expected))
    p_value = float(stats.chi2.sf(chi2, len(observed) - 1))
    assert p_value >= 0.01
    report("criterion 11 (waiting times fit geometric(q))",
           f"[q={q_hat:.3f}, chi2 p={p_value:.3f}]")
