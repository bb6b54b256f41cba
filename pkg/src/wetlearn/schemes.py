"""Feedback encoders, cutting-plane extraction and training designs.

Three learning strategies share this module:

* energy quantization: the receiver sends a B-bit uniform quantization of
  its normalized energy reading, giving two parallel planes per interval;
* energy comparison: the receiver sends B signs comparing the current
  reading with the B previous ones, giving up to B planes through 0;
* random beamforming: the baseline that keeps the best of N_R random beams.
"""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .accpm import CuttingPlane
from .channel import beamforming_gain, complex_gaussian
from .errors import RetryExhausted
from .hermitian import cmat, cvec, hermitize, trace_inner

MAX_DESIGN_TRIALS = 1000
PSD_TOL = 1e-10
PROBE_NORM_FRACTION = 0.2  # ||p|| = P/5
PROBE_BACKOFF_EVERY = 100


class Scheme(str, enum.Enum):
    QUANTIZATION = "quantization"
    COMPARISON = "comparison"
    RANDOM_BEAM = "random"


@dataclass(frozen=True)
class FeedbackWord:
    scheme: Scheme
    bits: tuple
    level: float | None = None
    level_index: int | None = None
    signs: tuple | None = None
    winner: int | None = None

    def payload(self) -> str:
        return "".join(str(b) for b in self.bits)


@dataclass(frozen=True)
class TrainingCovariance:
    s: np.ndarray
    powerBudget: float


@dataclass
class SchemeState:
    """Per-trial receiver/transmitter history for the comparison scheme."""

    scheme: Scheme
    B: int
    qbar: list = field(default_factory=list)
    covariances: deque = field(default_factory=deque)
    probes: deque = field(default_factory=deque)

    @property
    def interval(self) -> int:
        return len(self.qbar)

    def push(self, qbar: float, cov: np.ndarray, probe: np.ndarray | None = None) -> None:
        if qbar < 0:
            raise ValueError("normalized measurement must be nonnegative")
        self.qbar.append(float(qbar))
        self.covariances.append(cov)
        if len(self.covariances) > self.B + 1:
            self.covariances.popleft()
        if probe is not None:
            self.probes.append(probe)
            if len(self.probes) > self.B:
                self.probes.popleft()

    def covariance_back(self, b: int) -> np.ndarray:
        """Covariance used ``b`` intervals before the latest one (zero before the start)."""
        if b >= self.interval:
            return np.zeros_like(self.covariances[-1])
        return self.covariances[-1 - b]


def _bits(value: int, width: int) -> tuple:
    return tuple(int(c) for c in format(value, f"0{width}b")) if width else ()


# ---------------------------------------------------------------------------
# energy quantization


def quantize(qbar: float, B: int) -> FeedbackWord:
    """Uniform B-bit quantizer on (0, 1]; readings above 1 are clamped to 1."""
    if qbar < 0:
        raise ValueError("normalized measurement must be nonnegative")
    idx = int(quantization_index(qbar, B))
    level = (idx + 0.5) / 2**B
    return FeedbackWord(Scheme.QUANTIZATION, _bits(idx, B), level=level, level_index=idx)


def quantization_index(qbar, B: int):
    """Cell index ``ceil(2^B min(q, 1)) - 1`` (clipped to the valid range); vectorized."""
    if B < 1:
        raise ValueError("B must be at least 1")
    levels = 2**B
    q = np.minimum(np.asarray(qbar, dtype=float), 1.0)
    return np.clip(np.ceil(levels * q) - 1, 0, levels - 1).astype(np.int64)


def quantization_planes(word: FeedbackWord, s: TrainingCovariance, B: int, mT: int, P: float,
                        interval: int = 0) -> list:
    """Two-sided bound ``level -/+ half-step`` as cutting planes.

    The lower bound is dropped at the lowest level (it reads ``Q >= 0``) and
    the upper bound at the highest level (overflow makes it unreliable).
    """
    half = 2.0 ** -(B + 1)
    scaled = mT * s.s / P
    planes = []
    if word.level_index != 0:
        planes.append(CuttingPlane(-scaled, -word.level + half, interval, 1))
    if word.level_index != 2**B - 1:
        planes.append(CuttingPlane(scaled, word.level + half, interval, 2))
    return planes


def _psd_within_budget(s: np.ndarray, P: float) -> bool:
    if np.trace(s).real > P * (1 + 1e-10):
        return False
    return np.linalg.eigvalsh(s)[0] >= -PSD_TOL


def design_quantization_covariance(center, P: float, rng) -> TrainingCovariance:
    """Random ``p A^H A`` scaled so the predicted normalized reading at ``center`` is 1/2."""
    z = center.shape[0]
    for _ in range(MAX_DESIGN_TRIALS):
        a = complex_gaussian(rng, (z, z))
        gram = hermitize(a.conj().T @ a)
        lam = np.linalg.eigvalsh(gram)
        if lam[0] <= 1e-12 * lam[-1]:
            continue
        p = P / (2 * z * trace_inner(center, gram))
        s = p * gram
        if np.trace(s).real <= P:
            return TrainingCovariance(s, P)
    raise RetryExhausted("no admissible quantization training covariance")


def equality_row(s: np.ndarray, mT: int, P: float) -> np.ndarray:
    """``cvec`` row of ``(mT/P) tr(G s)`` used by the unquantized scheme."""
    return mT * cvec(s) / P


# ---------------------------------------------------------------------------
# energy comparison


def comparison_feedback(state: SchemeState, B: int) -> FeedbackWord:
    """Sign ``+1`` when the current reading is below the one ``b`` intervals back, else ``-1``."""
    n = state.interval
    if n < 2:
        raise ValueError("comparison feedback needs at least two readings")
    current = state.qbar[-1]
    signs = []
    for b in range(1, B + 1):
        past = state.qbar[-1 - b] if b < n else 0.0
        signs.append(1 if current < past else -1)
    bits = tuple(1 if f > 0 else 0 for f in signs)
    return FeedbackWord(Scheme.COMPARISON, bits, signs=tuple(signs))


def comparison_planes(word: FeedbackWord, state: SchemeState, B: int) -> list:
    n = state.interval
    current = state.covariances[-1]
    planes = []
    for b in range(1, min(B, n - 1) + 1):
        sigma = word.signs[b - 1] * (current - state.covariance_back(b))
        planes.append(CuttingPlane(hermitize(sigma), 0.0, n, b))
    return planes


def orthogonal_complement(g: np.ndarray) -> np.ndarray:
    """Orthonormal columns spanning the complement of vector ``g``."""
    q, _ = np.linalg.qr(g[:, None], mode="complete")
    return q[:, 1:]


def design_comparison_covariance(prev: TrainingCovariance, center, P: float, rng):
    """Add a probe ``cmat(V p)`` with ``tr(center probe) = 0`` and ``||p|| = P/5``.

    Returns ``(covariance, probe)``; resamples ``p`` until the new covariance
    is PSD and within the power budget.  When the previous covariance sits
    close to the PSD boundary no probe of the nominal size fits, so the norm
    is halved after every ``PROBE_BACKOFF_EVERY`` rejections.
    """
    v = orthogonal_complement(cvec(center))
    for attempt in range(MAX_DESIGN_TRIALS):
        p = rng.standard_normal(v.shape[1])
        scale = PROBE_NORM_FRACTION * P * 0.5 ** (attempt // PROBE_BACKOFF_EVERY)
        p *= scale / np.linalg.norm(p)
        delta = cmat(v @ p)
        s = prev.s + delta
        if _psd_within_budget(s, P):
            return TrainingCovariance(s, P), delta
    raise RetryExhausted("no admissible comparison probe")


# ---------------------------------------------------------------------------
# random beamforming baseline


def random_beam_count(N: int) -> int:
    return (3 * N - 1) // 2


def random_beam_bits(n_beams: int) -> int:
    return math.ceil(math.log2(n_beams)) if n_beams > 1 else 0


def random_beamforming_run(g, N: int, P: float, Tm: float, rng):
    """Transmit ``N_R`` random beams of power ``P`` and keep the strongest.

    Returns ``(winner, gain, feedback_bits)`` with ``winner`` the chosen beam
    (norm ``sqrt(P)``) and ``gain`` its beamforming gain.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    z = g.shape[0]
    n_beams = random_beam_count(N)
    beams = complex_gaussian(rng, (n_beams, z))
    beams *= math.sqrt(P) / np.linalg.norm(beams, axis=1, keepdims=True)
    energy = Tm * np.einsum("ia,ab,ib->i", beams.conj(), g, beams).real
    winner = beams[int(np.argmax(energy))]
    gain = beamforming_gain(g, winner / np.linalg.norm(winner))
    return winner, gain, random_beam_bits(n_beams)
