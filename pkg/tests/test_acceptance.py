"""Acceptance criteria 1-11, each at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL`` line (visible with or
without ``-s``).  Long Monte-Carlo runs are shared through the session cache
in ``conftest.py``; all runs use seed 0 and trial indices 0..trials-1.
"""
import math
import time

import numpy as np
import pytest

from wetlearn.accpm import CuttingPlane, add_planes, analytic_center, initial_working_set
from wetlearn.hermitian import cvec
from wetlearn.schemes import quantization_index
from wetlearn.sim import SimConfig, aggregate

SEED = 0


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return emit


def timed(fn, *args):
    start = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - start


def final_gains_db(records):
    return np.array([10 * math.log10(r.finalGain) for r in records if not r.failed])


def stderr(x):
    return float(np.std(x, ddof=1) / math.sqrt(len(x)))


def test_criterion_01_exact_recovery(trials_of, report):
    cfg = SimConfig(B=math.inf, N=16, trials=50, seed=SEED)
    records, secs = timed(trials_of, cfg)
    errs = np.array([r.intervals[15].normError for r in records])
    frac = float(np.mean(errs <= 1e-6))
    ok = frac >= 0.95 and secs <= 60
    report(1, ok, f"{frac:.0%} of 50 trials reach error <= 1e-6 at N=16 "
                  f"(max {errs.max():.2e}); {secs:.1f} s")
    assert ok


def test_criterion_02_gain_convergence(trials_of, report):
    start = time.perf_counter()
    runs = {s: trials_of(SimConfig(scheme=s, B=2, N=60, trials=50, seed=SEED))
            for s in ("quantization", "comparison")}
    secs = time.perf_counter() - start
    chi_db = np.mean([10 * math.log10(r.chiStar) for r in runs["quantization"]])
    gaps = {s: chi_db - final_gains_db(recs).mean() for s, recs in runs.items()}
    ok = all(abs(g) <= 0.5 for g in gaps.values()) and secs <= 600
    report(2, ok, f"mean chi* {chi_db:.3f} dB; gap quantization {gaps['quantization']:.3f} dB, "
                  f"comparison {gaps['comparison']:.3f} dB; {secs:.0f} s")
    assert ok


def test_criterion_03_crossover(trials_of, report):
    aggs = {s: aggregate(trials_of(SimConfig(scheme=s, B=4, N=150, trials=50, seed=SEED)), [20, 150])
            for s in ("quantization", "comparison")}
    q, c = aggs["quantization"].normError, aggs["comparison"].normError
    se = np.hypot(q.stderr, c.stderr)
    early = c.mean[0] - q.mean[0]
    late = q.mean[1] - c.mean[1]
    ok = early > se[0] and late > se[1]
    report(3, ok, f"N=20: quantization {q.mean[0]:.4f} vs comparison {c.mean[0]:.4f} (se {se[0]:.4f}); "
                  f"N=150: quantization {q.mean[1]:.2e} vs comparison {c.mean[1]:.2e} (se {se[1]:.1e})")
    assert ok


def test_criterion_04_quantizer_bound(report):
    start = time.perf_counter()
    q = np.arange(1, 2**17 + 1) / 2**17  # every cell edge for B <= 10 lies on this grid
    worst = {}
    for B in range(1, 11):
        level = (quantization_index(q, B) + 0.5) / 2**B
        worst[B] = float(np.abs(np.minimum(q, 1) - level).max())
    secs = time.perf_counter() - start
    ok = all(worst[B] == 2.0 ** -(B + 1) for B in worst) and secs < 1
    report(4, ok, f"max error equals 2^-(B+1) for B=1..10 on a 2^17-point grid; {secs * 1e3:.0f} ms")
    assert ok


def test_criterion_05_cvec_isometry(report):
    rng = np.random.default_rng(5)
    start = time.perf_counter()
    worst = 0.0
    for k in range(1000):
        z = 2 + k % 5
        x, y = (rng.standard_normal((2, z, z)) + 1j * rng.standard_normal((2, z, z)))
        x, y = x + x.conj().T, y + y.conj().T
        exact = np.trace(x @ y).real
        scale = max(abs(exact), np.linalg.norm(x) * np.linalg.norm(y))
        worst = max(worst, abs(exact - cvec(x) @ cvec(y)) / scale)
    secs = time.perf_counter() - start
    ok = worst <= 1e-10 and secs < 1
    report(5, ok, f"worst relative error {worst:.1e} over 1000 pairs; {secs * 1e3:.0f} ms")
    assert ok


def test_criterion_06_center_correctness(trials_of, report):
    start = time.perf_counter()
    split = np.diag([1.0, -1.0]).astype(complex)
    rep = analytic_center(add_planes(initial_working_set(2), [CuttingPlane(split, 0.0, 2, 1)]))
    a = np.linspace(1e-7, 0.5 - 1e-7, 2_000_001)
    a_star = a[np.argmin(-np.log(a) - np.log(1 - a) - np.log(1 - 2 * a))]
    oracle_err = abs(rep.center[0, 0].real - a_star)
    secs = time.perf_counter() - start
    kkt = [iv.kktResidual
           for s in ("quantization", "comparison")
           for r in trials_of(SimConfig(scheme=s, B=2, N=60, trials=50, seed=SEED))
           for iv in r.intervals[1:]]
    ok = oracle_err <= 1e-4 and max(kkt) <= 1e-8 and secs < 10
    report(6, ok, f"grid oracle error {oracle_err:.1e}; max KKT residual {max(kkt):.1e} over "
                  f"{len(kkt)} simulated working sets; oracle {secs:.1f} s")
    assert ok


def truth_runs(trials_of):
    return {(s, B): trials_of(SimConfig(scheme=s, B=B, N=100, trials=20, seed=SEED))
            for s in ("quantization", "comparison") for B in (1, 2, 4)}


def test_criterion_07_truth_containment(trials_of, report):
    violations, checked = 0, 0
    worst = -math.inf
    for records in truth_runs(trials_of).values():
        for r in records:
            for iv in r.intervals[1:]:
                checked += 1
                worst = max(worst, iv.truthViolation)
                violations += not iv.truthContained
    ok = violations == 0
    report(7, ok, f"{violations} violations in {checked} interval checks; "
                  f"largest plane value at the truth {worst:.1e}")
    assert ok


def test_criterion_08_neutral_cuts(trials_of, report):
    worst = {"quantization": 0.0, "comparison": 0.0}
    for (s, _), records in truth_runs(trials_of).items():
        for r in records:
            for iv in r.intervals[1:]:
                worst[s] = max(worst[s], abs(iv.cutOffset))
    ok = max(worst.values()) <= 1e-10
    report(8, ok, f"max |offset| quantization {worst['quantization']:.1e}, "
                  f"comparison {worst['comparison']:.1e}")
    assert ok


def test_criterion_09_pruning_parity(trials_of, report):
    keep = 2 * 16
    full = trials_of(SimConfig(B=2, N=100, trials=50, seed=SEED))
    pruned = trials_of(SimConfig(B=2, N=100, trials=50, seed=SEED, pruneKeep=keep))
    gap = final_gains_db(full).mean() - final_gains_db(pruned).mean()
    capped = True
    for r in pruned:
        hit = [k for k, iv in enumerate(r.intervals) if iv.planesPruned]
        if hit:
            capped &= all(iv.planeCount <= keep for iv in r.intervals[hit[0]:])
    pruned_any = sum(any(iv.planesPruned for iv in r.intervals) for r in pruned)
    ok = abs(gap) <= 0.2 and capped and pruned_any > 0
    report(9, ok, f"gain gap {gap:.3f} dB with keep={keep}; pruning active in {pruned_any}/50 trials; "
                  f"plane count stays <= {keep} after the first prune: {capped}")
    assert ok


def test_criterion_10_robust_mode(trials_of, report):
    clean = trials_of(SimConfig(B=2, N=100, trials=50, seed=SEED))
    robust = trials_of(SimConfig(B=2, N=100, trials=50, seed=SEED, robustAlpha=0.01, robust=True))
    plain = trials_of(SimConfig(B=2, N=100, trials=50, seed=SEED, robustAlpha=0.01))
    robust_fail = sum(r.failed for r in robust)
    gap = final_gains_db(clean).mean() - final_gains_db(robust).mean()
    plain_fail = sum(r.failed for r in plain)
    plain_viol = sum(any(not iv.truthContained for iv in r.intervals[1:]) for r in plain)
    ok = robust_fail == 0 and abs(gap) <= 0.5 and plain_fail + plain_viol >= 1
    report(10, ok, f"robust: {robust_fail} failures, gain gap {gap:.3f} dB; non-robust: "
                   f"{plain_fail} failures, {plain_viol} trials violating truth containment")
    assert ok


def test_criterion_11_baseline_ordering(trials_of, report):
    rand = final_gains_db(trials_of(SimConfig(scheme="random", B=2, N=60, trials=50, seed=SEED)))
    margins = {}
    for s in ("quantization", "comparison"):
        g = final_gains_db(trials_of(SimConfig(scheme=s, B=2, N=60, trials=50, seed=SEED)))
        margins[s] = g.mean() - rand.mean()
    ok = all(m >= 1.0 for m in margins.values())
    report(11, ok, f"random beamforming {rand.mean():.3f} dB (se {stderr(rand):.3f}); lead of "
                   f"quantization {margins['quantization']:.3f} dB, comparison {margins['comparison']:.3f} dB "
                   f"(required >= 1 dB)")
    assert ok
