"""Two-phase learning protocol, trial records and Monte-Carlo aggregation."""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .accpm import (
    add_planes,
    equality_center,
    initial_working_set,
    prune_irrelevant,
    recenter,
    robust_relax,
)
from .channel import ChannelParams, ChannelRealization, beamforming_gain, generate_channel, substream
from .errors import EmptyInput, EmptyInterior, MaxIterations, SingularMetric
from .hermitian import dominant_eigvec, trace_inner
from .schemes import (
    Scheme,
    SchemeState,
    TrainingCovariance,
    comparison_feedback,
    comparison_planes,
    design_comparison_covariance,
    design_quantization_covariance,
    equality_row,
    quantization_planes,
    quantize,
    random_beamforming_run,
)

DESIGN_STREAM = 1
NOISE_STREAM = 2
BEAM_STREAM = 3
TRUTH_TOL = 1e-9


@dataclass(frozen=True)
class SimConfig:
    channel: ChannelParams = ChannelParams()
    scheme: Scheme = Scheme.QUANTIZATION
    B: float = 2  # int, or math.inf for unquantized feedback
    N: int = 60
    P: float = 1.0
    Tm: float = 2.0
    Tf: float = 1.0
    pruneKeep: int | None = None
    robustAlpha: float = 0.0
    robust: bool = False
    trials: int = 50
    seed: int = 0
    # normalize readings by the noisy first reading (True) or the exact one
    noisyReference: bool = True
    # robust mode: re-solve the slack program every interval, or only when the set empties
    relaxEveryInterval: bool = True
    augmentedPruneMetric: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if not (self.Tm > 0 and self.Tf > 0):
            raise ValueError("durations must be positive")
        if not 0 <= self.robustAlpha < 1:
            raise ValueError("alpha must lie in [0, 1)")
        if not (self.B == math.inf or (float(self.B).is_integer() and self.B >= 1)):
            raise ValueError("B must be a positive integer or infinity")
        if self.B == math.inf and self.scheme is not Scheme.QUANTIZATION:
            raise ValueError("unquantized feedback applies to the quantization scheme only")
        if self.pruneKeep is not None and self.pruneKeep < 1:
            raise ValueError("pruneKeep must be at least 1")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")

    @property
    def infiniteB(self) -> bool:
        return self.B == math.inf


@dataclass
class IntervalRecord:
    n: int
    s: np.ndarray
    q: float
    qbar: float
    feedback: object
    planesAdded: int
    planesPruned: int
    planeCount: int
    center: np.ndarray
    normError: float
    gain: float
    truthViolation: float
    newtonIterations: int = 0
    kktResidual: float = 0.0
    minMargin: float = math.inf
    cutOffset: float = math.nan
    degenerate: bool = False
    rankDeficient: bool = False

    @property
    def gainDb(self) -> float:
        return 10.0 * math.log10(self.gain) if self.gain > 0 else -math.inf

    @property
    def truthContained(self) -> bool:
        return self.truthViolation <= TRUTH_TOL


@dataclass
class TrialRecord:
    trial: int
    scheme: Scheme
    B: float
    horizon: int
    chiStar: float
    intervals: list = field(default_factory=list)
    finalEstimate: np.ndarray | None = None
    finalBeam: np.ndarray | None = None
    finalGain: float = math.nan
    failure: str | None = None
    pruneFallbacks: int = 0
    feedbackBits: int = 0

    @property
    def failed(self) -> bool:
        return self.failure is not None

    def at(self, N: int):
        """``(normError, gainDb)`` after ``N`` intervals, or ``None`` if unavailable."""
        if self.failed:
            return None
        if self.scheme is Scheme.RANDOM_BEAM:
            if N != self.horizon:
                return None
            return math.nan, 10.0 * math.log10(self.finalGain)
        if N > len(self.intervals):
            return None
        rec = self.intervals[N - 1]
        return rec.normError, rec.gainDb


def measure_energy(g, s, Tm: float, alpha: float, rng) -> float:
    """Meter reading ``Tm tr(G S)`` with uniform relative error of width ``alpha``."""
    q = Tm * trace_inner(g, s)
    if alpha > 0 and q != 0:
        q += rng.uniform(-alpha * q, alpha * q)
    return q


def _estimate_metrics(center, realization):
    beam, tied = dominant_eigvec(center)
    gain = beamforming_gain(realization.g, beam)
    err = float(np.linalg.norm(center - realization.gBar))
    return beam, gain, err, tied


def _truth_violation(ws, gbar) -> float:
    if not ws.planes:
        return -math.inf
    return max(p.value(gbar) - p.slack - ws.pad for p in ws.planes)


def _first_interval(cfg, realization, rng_noise):
    z = realization.dim
    s1 = cfg.P / z * np.eye(z, dtype=complex)
    q1 = measure_energy(realization.g, s1, cfg.Tm, cfg.robustAlpha, rng_noise)
    q_ref = q1 if cfg.noisyReference else cfg.Tm * trace_inner(realization.g, s1)
    center = np.eye(z, dtype=complex) / z
    beam, gain, err, tied = _estimate_metrics(center, realization)
    rec = IntervalRecord(1, s1, q1, q1 / q_ref, None, 0, 0, 0, center, err, gain, -math.inf,
                         degenerate=tied)
    return s1, q_ref, rec


def run_trial(cfg: SimConfig, realization: ChannelRealization, trial: int = 0) -> TrialRecord:
    """Run ``cfg.N`` learning intervals against one channel realization."""
    if cfg.scheme is Scheme.RANDOM_BEAM:
        return run_random_beam_trial(cfg, realization, trial)
    if cfg.infiniteB:
        return run_quantization_infinite_b(cfg, realization, trial)

    z, P, B = realization.dim, cfg.P, int(cfg.B)
    rng_design = substream(cfg.seed, trial, DESIGN_STREAM)
    rng_noise = substream(cfg.seed, trial, NOISE_STREAM)
    record = TrialRecord(trial, cfg.scheme, cfg.B, cfg.N, realization.chiStar)

    s, q_ref, first = _first_interval(cfg, realization, rng_noise)
    record.intervals.append(first)
    ws = initial_working_set(z, robust=cfg.robust)
    state = SchemeState(cfg.scheme, B)
    state.push(first.qbar, s)
    cov = TrainingCovariance(s, P)

    for n in range(2, cfg.N + 1):
        prev_center = ws.center
        if cfg.scheme is Scheme.QUANTIZATION:
            cov = design_quantization_covariance(prev_center, P, rng_design)
            offset = z / P * trace_inner(prev_center, cov.s) - 0.5
        else:
            cov, probe = design_comparison_covariance(cov, prev_center, P, rng_design)
            offset = trace_inner(prev_center, probe)
        q = measure_energy(realization.g, cov.s, cfg.Tm, cfg.robustAlpha, rng_noise)
        qbar = q / q_ref
        if cfg.scheme is Scheme.QUANTIZATION:
            word = quantize(qbar, B)
            planes = quantization_planes(word, cov, B, z, P, interval=n)
        else:
            state.push(qbar, cov.s, probe)
            word = comparison_feedback(state, B)
            planes = comparison_planes(word, state, B)

        ws = add_planes(ws, planes)
        try:
            if cfg.robust:
                ws = robust_relax(ws, keep_existing=not cfg.relaxEveryInterval)
            ws, report = recenter(ws)
            pruned = 0
            if cfg.pruneKeep is not None and len(ws.planes) > cfg.pruneKeep:
                try:
                    before = len(ws.planes)
                    ws = prune_irrelevant(ws, cfg.pruneKeep, cfg.augmentedPruneMetric)
                    pruned = before - len(ws.planes)
                    ws, report = recenter(ws)
                except SingularMetric:
                    record.pruneFallbacks += 1
        except (EmptyInterior, MaxIterations) as exc:
            record.failure = f"{type(exc).__name__} at interval {n}: {exc}"
            break

        beam, gain, err, tied = _estimate_metrics(ws.center, realization)
        record.intervals.append(IntervalRecord(
            n, cov.s, q, qbar, word, len(planes), pruned, len(ws.planes), ws.center, err, gain,
            _truth_violation(ws, realization.gBar), report.newtonIterations, report.kktResidual,
            report.minMargin, offset, tied,
        ))

    _finish(record, realization)
    return record


def run_quantization_infinite_b(cfg: SimConfig, realization: ChannelRealization,
                                trial: int = 0) -> TrialRecord:
    """Quantization scheme with unquantized feedback: each reading is a linear equality."""
    z, P = realization.dim, cfg.P
    rng_design = substream(cfg.seed, trial, DESIGN_STREAM)
    rng_noise = substream(cfg.seed, trial, NOISE_STREAM)
    record = TrialRecord(trial, cfg.scheme, cfg.B, cfg.N, realization.chiStar)
    s, q_ref, first = _first_interval(cfg, realization, rng_noise)
    record.intervals.append(first)
    center = first.center
    rows, rhs = [], []
    for n in range(2, cfg.N + 1):
        cov = design_quantization_covariance(center, P, rng_design)
        offset = z / P * trace_inner(center, cov.s) - 0.5
        q = measure_energy(realization.g, cov.s, cfg.Tm, cfg.robustAlpha, rng_noise)
        qbar = q / q_ref
        rows.append(equality_row(cov.s, z, P))
        rhs.append(qbar)
        try:
            ec = equality_center(z, rows, rhs, start=center)
        except MaxIterations as exc:
            record.failure = f"MaxIterations at interval {n}: {exc}"
            break
        center = ec.center
        beam, gain, err, tied = _estimate_metrics(center, realization)
        record.intervals.append(IntervalRecord(
            n, cov.s, q, qbar, None, 1, 0, n - 1, center, err, gain, -math.inf,
            ec.newtonIterations, ec.kktResidual, math.nan, offset, tied,
            rankDeficient=ec.rank < min(n, z * z),
        ))
    _finish(record, realization)
    return record


def run_random_beam_trial(cfg: SimConfig, realization: ChannelRealization, trial: int = 0) -> TrialRecord:
    rng = substream(cfg.seed, trial, BEAM_STREAM)
    winner, gain, bits = random_beamforming_run(realization.g, cfg.N, cfg.P, cfg.Tm, rng)
    record = TrialRecord(trial, Scheme.RANDOM_BEAM, cfg.B, cfg.N, realization.chiStar)
    record.finalBeam = winner / np.linalg.norm(winner)
    record.finalGain = gain
    record.feedbackBits = bits
    return record


def _finish(record: TrialRecord, realization: ChannelRealization) -> None:
    last = record.intervals[-1]
    record.finalEstimate = last.center
    record.finalBeam, _ = dominant_eigvec(last.center)
    record.finalGain = last.gain


def _trial_job(args):
    cfg, trial = args
    realization = generate_channel(cfg.channel, trial)
    return run_trial(cfg, realization, trial)


def run_trials(cfg: SimConfig, trials: Sequence[int] | None = None, workers: int = 1) -> list:
    """Run trials ``0..cfg.trials-1`` (or the given indices), ordered by trial index."""
    trials = list(range(cfg.trials)) if trials is None else list(trials)
    jobs = [(cfg, t) for t in trials]
    if workers <= 1 or len(jobs) <= 1:
        records = [_trial_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_trial_job, jobs))
    return sorted(records, key=lambda r: r.trial)


# ---------------------------------------------------------------------------
# aggregation and accounting


@dataclass(frozen=True)
class CurveStats:
    mean: np.ndarray
    stderr: np.ndarray
    count: np.ndarray


@dataclass(frozen=True)
class Aggregate:
    scheme: Scheme
    B: float
    grid: tuple
    normError: CurveStats
    gainDb: CurveStats
    trials: int
    failures: int


def _stats(columns):
    mean, se, cnt = [], [], []
    for vals in columns:
        vals = np.asarray(vals, dtype=float)
        vals = vals[np.isfinite(vals)]
        cnt.append(len(vals))
        if len(vals) == 0:
            mean.append(math.nan)
            se.append(math.nan)
        else:
            mean.append(float(vals.mean()))
            se.append(float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0)
    return CurveStats(np.array(mean), np.array(se), np.array(cnt))


def aggregate(records: Sequence[TrialRecord], grid: Sequence[int]) -> Aggregate:
    """Mean and standard error over trials of error and gain (dB) at each ``N`` in ``grid``.

    Failed trials are excluded from the statistics and counted separately.
    """
    if not records:
        raise EmptyInput("no trial records to aggregate")
    grid = tuple(int(n) for n in grid)
    errors = [[] for _ in grid]
    gains = [[] for _ in grid]
    for rec in sorted(records, key=lambda r: (r.trial, r.horizon)):
        for j, n in enumerate(grid):
            point = rec.at(n)
            if point is not None:
                errors[j].append(point[0])
                gains[j].append(point[1])
    failed = {r.trial for r in records if r.failed}
    return Aggregate(
        scheme=records[0].scheme,
        B=records[0].B,
        grid=grid,
        normError=_stats(errors),
        gainDb=_stats(gains),
        trials=len({r.trial for r in records}) - len(failed),
        failures=len(failed),
    )


def net_energy(g, covariances, Ts: float, P: float, T: float, beam, Em: float, Ef: float) -> float:
    """Net block energy: learning-phase harvest plus beamformed harvest minus meter/feedback cost."""
    n = len(covariances)
    tau = n * Ts
    learn = sum(Ts * trace_inner(g, s) for s in covariances)
    beam = np.asarray(beam)
    quad = float(np.vdot(beam, np.asarray(g) @ beam).real)
    return learn + P * (T - tau) * quad - n * (Em + Ef)


def exact_gain(g, covariances, Ts: float, P: float, T: float, beam, Em: float, Ef: float) -> float:
    """Net energy over the isotropic-transmission energy of the whole block."""
    g = np.asarray(g)
    q_iso = T * P * float(np.trace(g).real) / g.shape[0]
    return net_energy(g, covariances, Ts, P, T, beam, Em, Ef) / q_iso


def with_overrides(cfg: SimConfig, **kwargs) -> SimConfig:
    return dataclasses.replace(cfg, **kwargs)
