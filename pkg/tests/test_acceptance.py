"""Acceptance criteria, one test per criterion.

Each test records a ``criterion N: PASS|FAIL ...`` line, printed immediately
and again in the pytest terminal summary.
"""

import math
import random
import time
from fractions import Fraction

import mpmath
import numpy as np
from scipy import stats
from scipy.special import ndtr

from conftest import ACCEPTANCE_LINES
from dynofe.cli import RunConfig, main, read_model, run_bench, train
from dynofe.dp import PointMass, PrivacyParams, RoundedGaussian, classical_sigma, gm_calibrate
from dynofe.dyno import dyno_dec, dyno_ekeygen, dyno_enc, dyno_keygen, dyno_setup
from dynofe.errors import BudgetRefused, NoiseOverflowError, RangeError
from dynofe.logreg import (expansion_size, feature_monomials, reference_training,
                           synthetic_dataset)
from dynofe.protocol import (Analyst, Authority, ProtocolConfig, Schedule, Transcript,
                             open_study, run_training, submit_dataset, train_iteration)
from dynofe.ring import Modulus, RingVector

mpmath.mp.dps = 50


def record(number: int, ok: bool, detail: str):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def signed(values, modulus):
    return RingVector.from_ints([modulus.from_signed(int(v)) for v in values], modulus)


# 1 ---------------------------------------------------------------------------------


def test_criterion_1_scheme_correctness():
    rng = random.Random(1)
    start = time.perf_counter()
    failures = 0
    for trial in range(1000):
        modulus = Modulus(rng.choice([32, 64, 72, 127]))
        n_reg, m = rng.randint(1, 20), rng.randint(1, 50)
        pp, msk = dyno_setup(256, 50, 10**6, modulus)
        slots = rng.sample(range(1, 10**6 + 1), n_reg)
        keys = {i: dyno_ekeygen(msk, i) for i in slots}
        subset = rng.sample(slots, rng.randint(1, n_reg))
        label = bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 12)))
        # |S| * m * X * Y + |e| < q/2 with X = Y and |e| <= X
        bound = math.isqrt(modulus.half // (len(subset) * m + 1))
        xs = {i: [rng.randint(-bound, bound) for _ in range(m)] for i in subset}
        ys = {i: [rng.randint(-bound, bound) for _ in range(m)] for i in subset}
        e = rng.randint(-bound, bound)
        cts = [dyno_enc(keys[i], signed(xs[i], modulus), label, i, pp) for i in subset]
        dk = dyno_keygen(msk, subset, {i: signed(ys[i], modulus) for i in subset}, label,
                         PointMass(e))
        exact = sum(a * b for i in subset for a, b in zip(xs[i], ys[i]))
        failures += dyno_dec(dk, cts) != exact + e
    elapsed = time.perf_counter() - start
    record(1, failures == 0 and elapsed < 10,
           f"1000 instances, {failures} mismatches, {elapsed:.2f} s (limit 10 s)")


# 2 ---------------------------------------------------------------------------------


def test_criterion_2_noise_distribution():
    modulus, sigma, out_scale, trials = Modulus(64), 1.5, 10, 10_000
    pp, msk = dyno_setup(256, 8, 100, modulus)
    keys = {i: dyno_ekeygen(msk, i) for i in (3, 7, 9)}
    xs = {3: [5, -1, 2, 0], 7: [1, 1, 1, 1], 9: [-4, 3, 2, 8]}
    ys = {3: [2, 2, -3, 1], 7: [0, 5, 1, -1], 9: [1, 1, 1, 1]}
    exact = sum(a * b for i in xs for a, b in zip(xs[i], ys[i]))
    cts = [dyno_enc(keys[i], signed(xs[i], modulus), "noise", i, pp) for i in xs]
    coeffs = {i: signed(ys[i], modulus) for i in ys}
    noise, rng = RoundedGaussian(sigma, out_scale), np.random.default_rng(2024)
    errors = np.array([dyno_dec(dyno_keygen(msk, list(xs), coeffs, "noise", noise, rng), cts)
                       - exact for _ in range(trials)])
    # exact CDF of round(N(0, sigma) * out_scale): P(K <= k) = Phi((k + 1/2) / (sigma * s))
    support = np.arange(errors.min(), errors.max() + 1)
    model_cdf = ndtr((support + 0.5) / (sigma * out_scale))
    empirical = np.searchsorted(np.sort(errors), support, side="right") / trials
    statistic = max(np.max(np.abs(empirical - model_cdf)),
                    float(ndtr((support[0] - 0.5) / (sigma * out_scale))))
    pvalue = float(stats.kstwo.sf(statistic, trials))
    record(2, pvalue > 1e-3, f"KS D = {statistic:.4f}, p = {pvalue:.3f} over {trials} keygens "
                             f"(reject below 0.001)")


# 3 ---------------------------------------------------------------------------------


def _curve(u, eps):
    u, eps = mpmath.mpf(u), mpmath.mpf(eps)
    return mpmath.ncdf(u / 2 - eps / u) - mpmath.exp(eps) * mpmath.ncdf(-u / 2 - eps / u)


def test_criterion_3_calibration():
    rng = np.random.default_rng(33)
    holds = fails_below = not_above_classical = 0
    classical_invalid = 0
    for _ in range(100):
        p = PrivacyParams(float(rng.uniform(0.01, 10)), float(10 ** rng.uniform(-8, -2)))
        sens = float(10 ** rng.uniform(-3, 3))
        sigma = gm_calibrate(p, sens)
        holds += _curve(sens / sigma, p.epsilon) <= p.delta
        fails_below += _curve(sens / (0.999 * sigma), p.epsilon) > p.delta
        # the classical scale is a valid mechanism only for epsilon < 1
        classical_invalid += _curve(sens / classical_sigma(p, sens), p.epsilon) > p.delta
    for _ in range(100):
        p = PrivacyParams(float(rng.uniform(0.01, 1)), float(10 ** rng.uniform(-8, np.log10(0.5))))
        sens = float(10 ** rng.uniform(-3, 3))
        not_above_classical += gm_calibrate(p, sens) <= classical_sigma(p, sens)
    record(3, holds == fails_below == not_above_classical == 100,
           f"holds at sigma {holds}/100, fails at 0.999 sigma {fails_below}/100, "
           f"sigma <= classical sigma {not_above_classical}/100 (epsilon < 1); "
           f"classical sigma itself violates the condition on {classical_invalid} "
           f"large-epsilon triples")


# 4 ---------------------------------------------------------------------------------


def _brute_force_count(m):
    count = 0

    def walk(k, budget):
        nonlocal count
        if k == m:
            count += 1
            return
        for power in range(budget + 1):
            walk(k + 1, budget - power)
    walk(0, 4)
    return count + m + 1


def test_criterion_4_expansion_size():
    mismatches = [m for m in range(1, 13)
                  if not expansion_size(m) == _brute_force_count(m) ==
                  len(feature_monomials(m)) + m + 1]
    named = [expansion_size(m) for m in (1, 8, 10, 11)]
    record(4, not mismatches and named == [7, 504, 1012, 1377],
           f"m in [1, 12] mismatches {mismatches}; m = 1, 8, 10, 11 -> {named}")


# 5 ---------------------------------------------------------------------------------


def _sizes(m, bits):
    config = ProtocolConfig(Modulus(bits))
    data = synthetic_dataset(3, m, seed=0)
    authority = Authority(config, PrivacyParams(8, 0.1), np.random.default_rng(0))
    analyst = Analyst(config, np.zeros(m + 1))
    study = open_study(authority, m)
    submit_dataset(authority, analyst, study, data)
    _, transcript = run_training(authority, analyst, study, 1, PrivacyParams(8, 0.1), 0.1, seed=0)
    cts = {msg.payload_bytes for msg in authority.transcript.messages if msg.kind == "ciphertext"}
    kinds = {msg.kind: msg.payload_bytes for msg in transcript.messages}
    assert len(cts) == 1
    return cts.pop(), kinds["decryption_keys"], kinds["function_query"]


def test_criterion_5_package_sizes():
    expected = {"LBW": ((10, 64), (8096, 88, 33396)),
                "PCS": ((8, 64), (4032, 72, 13608)),
                "NHANES": ((11, 72), (12393, 108, 49572))}
    got = {name: _sizes(*shape) for name, (shape, _) in expected.items()}
    ok = all(got[name] == sizes for name, (_, sizes) in expected.items())
    detail = "; ".join(f"{name} ct/keys/functions = {'/'.join(map(str, got[name]))} B"
                       for name in expected)
    record(5, ok, detail)


# 6 ---------------------------------------------------------------------------------


def test_criterion_6_noiseless_oracle(tmp_path):
    n, m, iters = 189, 10, 50
    config = RunConfig()
    source = f"synthetic:{n},{m},0"
    start = time.perf_counter()
    code = main(["train", "--dataset", source, "--noise", "off", "--iters", str(iters),
                 "--out", str(tmp_path)])
    elapsed = time.perf_counter() - start
    theta = read_model(tmp_path / "model.txt")
    reference = reference_training(np.zeros(m + 1), synthetic_dataset(n, m, seed=0),
                                   config.alpha, iters)
    tolerance = 10 * iters * expansion_size(m) * n / (config.s_x * config.s_y)
    error = float(np.max(np.abs(theta - reference)))
    record(6, code == 0 and error <= tolerance and elapsed < 60,
           f"max |theta - reference| = {error:.3g} (limit {tolerance:.3g}), "
           f"{elapsed:.1f} s (limit 60 s)")


# 7 ---------------------------------------------------------------------------------


def test_criterion_7_utility():
    data = synthetic_dataset(189, 10, seed=0)
    base = train(RunConfig(iters=50, noise=False, seed=0), data).accuracy
    medians = {}
    for eps in (0.5, 2.0, 8.0):
        accs = [train(RunConfig(eps=eps, iters=50, seed=seed), data).accuracy
                for seed in range(5)]
        medians[eps] = float(np.median(accs))
    gap = base - medians[8.0]
    monotone = medians[0.5] <= medians[2.0] <= medians[8.0]
    record(7, gap <= 0.10 and monotone,
           f"noiseless {base:.3f}; median over 5 seeds at eps 0.5/2/8 = "
           f"{medians[0.5]:.3f}/{medians[2.0]:.3f}/{medians[8.0]:.3f}; "
           f"gap at eps 8 = {gap:.3f} (limit 0.10); monotone = {monotone}")


# 8 ---------------------------------------------------------------------------------


def test_criterion_8_budget_safety():
    rng = np.random.default_rng(8)
    config = ProtocolConfig()
    runs = violations = refusals = diverged = 0
    for run in range(60):
        n, m = int(rng.integers(2, 8)), int(rng.integers(1, 3))
        p_max = PrivacyParams(float(rng.uniform(0.1, 5)), float(10 ** rng.uniform(-6, -2)))
        authority = Authority(config, p_max, np.random.default_rng(run))
        analyst = Analyst(config, np.zeros(m + 1))
        study = open_study(authority, m)
        submit_dataset(authority, analyst, study, synthetic_dataset(n, m, seed=run))
        # random schedules, some of which ask for more than the clients own
        iters = int(rng.integers(1, 15))
        shares = rng.dirichlet(np.ones(iters)) * float(rng.uniform(0.5, 2.0))
        schedule = Schedule(tuple(PrivacyParams(p_max.epsilon * s, p_max.delta * s)
                                  for s in shares))
        external = {c: [Fraction(0), Fraction(0)] for c in study.participants}
        transcript = Transcript()
        for t in range(iters):
            if rng.random() < 0.3:
                # another study drains part of one client's budget
                victim = int(rng.choice(sorted(study.participants)))
                left = authority.ledger.remaining(victim)
                take = PrivacyParams(left.epsilon * float(rng.uniform(0, 1)),
                                     left.delta * float(rng.uniform(0, 1)))
                authority.ledger.charge([victim], take)
                external[victim][0] += Fraction(take.epsilon)
                external[victim][1] += Fraction(take.delta)
            try:
                train_iteration(authority, analyst, study, t, schedule, 0.1, transcript)
            except BudgetRefused:
                refusals += 1
            except (RangeError, NoiseOverflowError):
                diverged += 1  # as in run_training; a charged round stays in the transcript
                break
        runs += 1
        for c in study.participants:
            eps = sum((Fraction(r.epsilon) for r in transcript.iterations
                       if not r.refused and c in r.clients), Fraction(0)) + external[c][0]
            delta = sum((Fraction(r.delta) for r in transcript.iterations
                         if not r.refused and c in r.clients), Fraction(0)) + external[c][1]
            left = authority.ledger.remaining_exact(c)
            if (eps > Fraction(p_max.epsilon) or delta > Fraction(p_max.delta)
                    or left != (Fraction(p_max.epsilon) - eps, Fraction(p_max.delta) - delta)):
                violations += 1
    record(8, violations == 0 and refusals > 0,
           f"{runs} fuzzed runs ({diverged} diverged), {refusals} refused rounds, {violations} clients over budget "
           f"or out of sync with the replayed transcript")


# 9 ---------------------------------------------------------------------------------


def test_criterion_9_performance():
    small = run_bench(100, 100, seed=0)
    start = time.perf_counter()
    run_bench(1000, 1000, seed=0)
    large = time.perf_counter() - start
    ok = all(small[k] < 0.25 for k in ("enc", "keygen", "dec")) and large < 30
    record(9, ok, f"(100, 100) enc {small['enc'] * 1e3:.2f} ms (all clients), keygen "
                  f"{small['keygen'] * 1e3:.2f} ms, dec {small['dec'] * 1e3:.2f} ms (limit 250 ms "
                  f"each); (1000, 1000) end to end {large:.2f} s (limit 30 s)")
