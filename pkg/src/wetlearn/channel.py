"""Rician MIMO channel generation and ground-truth energy metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotUnitNorm
from .hermitian import as_hermitian, dominant_eigvec, eig, hermitize, trace_inner

CHANNEL_STREAM = 0


def substream(seed: int, trial: int, stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``(seed, trial, stream)``.

    Each trial gets independent streams for the channel, the training
    design and the meter noise, so results do not depend on execution order.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, trial, stream])))


def complex_gaussian(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with the given variance."""
    scale = math.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass(frozen=True)
class ChannelParams:
    mT: int = 4
    mR: int = 2
    ricianFactorDb: float = 5.0
    pathLossDb: float = 40.0
    elementSpacingOverWavelength: float = 0.5
    arrivalAngleDeg: float = 30.0
    rngSeed: int = 0

    def __post_init__(self):
        if int(self.mT) <= 1:
            raise ValueError("mT must exceed 1")
        if int(self.mR) < 1:
            raise ValueError("mR must be at least 1")
        if not self.elementSpacingOverWavelength > 0:
            raise ValueError("element spacing must be positive")


@dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray
    g: np.ndarray
    gBar: np.ndarray
    lambda1: float
    v1: np.ndarray
    chiStar: float

    @property
    def dim(self) -> int:
        return self.g.shape[0]


def los_row(params: ChannelParams) -> np.ndarray:
    amplitude = 10.0 ** (-params.pathLossDb / 20.0)
    theta = -2.0 * math.pi * params.elementSpacingOverWavelength * math.sin(
        math.radians(params.arrivalAngleDeg)
    )
    return amplitude * np.exp(1j * theta * np.arange(params.mT))


def realization_from_h(h: np.ndarray) -> ChannelRealization:
    g = hermitize(h.conj().T @ h)
    trace = float(np.trace(g).real)
    pair = eig(g)
    v1, _ = dominant_eigvec(g)
    lam1 = float(pair.eigenvalues[0])
    chi = g.shape[0] * lam1 / trace
    return ChannelRealization(h=h, g=g, gBar=g / trace, lambda1=lam1, v1=v1, chiStar=chi)


def generate_channel(params: ChannelParams, trial: int = 0) -> ChannelRealization:
    """Draw one Rician channel for ``trial`` under ``params.rngSeed``."""
    rng = substream(params.rngSeed, trial, CHANNEL_STREAM)
    k = 10.0 ** (params.ricianFactorDb / 10.0)
    h_los = np.tile(los_row(params), (params.mR, 1))
    variance = 10.0 ** (-params.pathLossDb / 10.0)
    h_nlos = complex_gaussian(rng, (params.mR, params.mT), variance)
    h = math.sqrt(k / (1.0 + k)) * h_los + math.sqrt(1.0 / (1.0 + k)) * h_nlos
    return realization_from_h(h)


def harvested_energy(g, s, duration: float) -> float:
    """Energy ``duration * tr(g s)`` delivered by covariance ``s`` (efficiency 1)."""
    g = np.asarray(g)
    s = np.asarray(s)
    if g.shape != s.shape:
        raise DimensionMismatch(f"{g.shape} vs {s.shape}")
    return duration * trace_inner(g, s)


def isotropic_energy(g, power: float, duration: float) -> float:
    g = np.asarray(g)
    return duration * power * float(np.trace(g).real) / g.shape[0]


def optimal_energy(g, power: float, duration: float) -> float:
    return duration * power * float(eig(g).eigenvalues[0])


def beamforming_gain(g, v_tilde) -> float:
    """Gain ``M_T v^H g v / tr(g)`` of unit beam ``v_tilde`` over isotropic transmission."""
    g = as_hermitian(g, rtol=1e-9)
    v = np.asarray(v_tilde, dtype=complex).reshape(-1)
    if v.shape[0] != g.shape[0]:
        raise DimensionMismatch(f"beam length {v.shape[0]} vs channel dim {g.shape[0]}")
    if abs(np.linalg.norm(v) - 1.0) > 1e-10:
        raise NotUnitNorm(f"beam norm {np.linalg.norm(v):.12g}")
    quad = float(np.vdot(v, g @ v).real)
    return g.shape[0] * max(quad, 0.0) / float(np.trace(g).real)
