import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wetlearn.errors import RetryExhausted
from wetlearn.hermitian import cvec
from wetlearn.schemes import (
    Scheme,
    SchemeState,
    TrainingCovariance,
    comparison_feedback,
    comparison_planes,
    design_comparison_covariance,
    design_quantization_covariance,
    equality_row,
    orthogonal_complement,
    quantization_planes,
    quantize,
    random_beam_bits,
    random_beam_count,
    random_beamforming_run,
)


def random_density(rng, z):
    a = rng.standard_normal((z, z)) + 1j * rng.standard_normal((z, z))
    g = a @ a.conj().T
    return g / np.trace(g).real


def test_quantize_examples():
    w = quantize(0.3, 2)
    assert w.level == 0.375
    assert w.level_index == 1
    assert w.payload() == "01"
    w = quantize(1.3, 1)
    assert w.level == 0.75
    assert w.payload() == "1"
    assert quantize(0.0, 3).level == 1 / 16
    assert quantize(1.0, 3).level == 15 / 16


@pytest.mark.parametrize("B", range(1, 11))
def test_quantizer_grid(B):
    # grid step 2^-17 puts every cell edge for B <= 10 on the grid
    q = np.arange(1, 2**17 + 1) / 2**17
    levels = np.array([quantize(x, B).level for x in q])
    err = np.abs(q - levels)
    assert err.max() <= 2.0 ** -(B + 1) + 1e-15
    assert err.max() == 2.0 ** -(B + 1)
    lattice = (np.arange(2**B) + 0.5) / 2**B
    assert np.all(np.isin(levels, lattice))
    assert np.all(np.diff(levels) >= 0)


@settings(max_examples=200, deadline=None)
@given(q=st.floats(0, 3, allow_nan=False), B=st.integers(1, 12))
def test_quantizer_bound_property(q, B):
    w = quantize(q, B)
    assert abs(min(q, 1.0) - w.level) <= 2.0 ** -(B + 1) + 1e-15
    assert len(w.bits) == B
    assert int(w.payload(), 2) == w.level_index


def test_quantize_rejects():
    with pytest.raises(ValueError):
        quantize(0.5, 0)
    with pytest.raises(ValueError):
        quantize(-0.1, 2)


def test_quantization_planes_contain_truth():
    rng = np.random.default_rng(0)
    P, z = 1.0, 4
    for _ in range(200):
        truth = random_density(rng, z)
        center = random_density(rng, z)
        cov = design_quantization_covariance(center, P, rng)
        qbar = z / P * np.trace(truth @ cov.s).real
        B = int(rng.integers(1, 5))
        word = quantize(qbar, B)
        for plane in quantization_planes(word, cov, B, z, P, interval=3):
            assert plane.value(truth) <= 1e-12


def test_quantization_boundary_planes_discarded():
    cov = TrainingCovariance(np.eye(2) / 2, 1.0)
    low = quantization_planes(quantize(0.01, 2), cov, 2, 2, 1.0)
    top = quantization_planes(quantize(0.99, 2), cov, 2, 2, 1.0)
    mid = quantization_planes(quantize(0.4, 2), cov, 2, 2, 1.0)
    assert [p.index for p in low] == [2]
    assert [p.index for p in top] == [1]
    assert [p.index for p in mid] == [1, 2]
    # mid cell [0.25, 0.5]: -q <= -0.25 and q <= 0.5
    assert mid[0].gamma == pytest.approx(-0.25)
    assert mid[1].gamma == pytest.approx(0.5)


def test_quantization_design_neutral():
    rng = np.random.default_rng(1)
    for z in (2, 4):
        for _ in range(50):
            center = random_density(rng, z)
            P = float(rng.uniform(0.5, 3))
            cov = design_quantization_covariance(center, P, rng)
            assert z / P * np.trace(center @ cov.s).real == pytest.approx(0.5, abs=1e-10)
            assert np.trace(cov.s).real <= P * (1 + 1e-10)
            assert np.linalg.eigvalsh(cov.s)[0] >= -1e-10


class SingularGaussian:
    """Stub generator whose draws make A^H A singular."""

    def standard_normal(self, shape):
        return np.ones(shape)


def test_quantization_design_singular_draws():
    with pytest.raises(RetryExhausted):
        design_quantization_covariance(np.eye(3) / 3, 1.0, SingularGaussian())


def test_equality_row():
    rng = np.random.default_rng(2)
    s = random_density(rng, 3)
    g = random_density(rng, 3)
    assert equality_row(s, 3, 2.0) @ cvec(g) == pytest.approx(1.5 * np.trace(g @ s).real)


def state_with(qbars, B, z=2):
    st_ = SchemeState(Scheme.COMPARISON, B)
    for k, q in enumerate(qbars):
        st_.push(q, (k + 1) * np.eye(z))
    return st_


def test_comparison_feedback_examples():
    w = comparison_feedback(state_with([1.0, 0.8], 1), 1)
    assert w.signs == (1,)
    assert w.payload() == "1"
    w = comparison_feedback(state_with([1.0, 1.2], 1), 1)
    assert w.signs == (-1,)
    # equal readings count as "not a decrease"
    assert comparison_feedback(state_with([1.0, 1.0], 1), 1).signs == (-1,)


def test_comparison_short_history():
    st_ = state_with([1.0, 0.9], 3)
    w = comparison_feedback(st_, 3)
    assert len(w.bits) == 3
    assert w.signs[0] == 1
    # missing history compares with 0, and only one plane is produced
    assert w.signs[1:] == (-1, -1)
    planes = comparison_planes(w, st_, 3)
    assert len(planes) == 1
    np.testing.assert_allclose(planes[0].sigma, np.eye(2))
    assert planes[0].gamma == 0.0
    with pytest.raises(ValueError):
        comparison_feedback(state_with([1.0], 2), 2)


def test_comparison_window():
    st_ = state_with([1.0, 0.9, 0.95, 0.7, 0.8], 2)
    assert len(st_.covariances) == 3
    np.testing.assert_allclose(st_.covariance_back(2), 3 * np.eye(2))
    w = comparison_feedback(st_, 2)
    assert w.signs == (-1, 1)
    planes = comparison_planes(w, st_, 2)
    assert [p.index for p in planes] == [1, 2]
    np.testing.assert_allclose(planes[1].sigma, 2 * np.eye(2))


def test_comparison_planes_contain_truth_and_sum_form():
    rng = np.random.default_rng(3)
    truth = random_density(rng, 4)
    st_ = SchemeState(Scheme.COMPARISON, 2)
    P = 1.0
    cov = TrainingCovariance(P / 4 * np.eye(4, dtype=complex), P)
    st_.push(1.0, cov.s)
    center = np.eye(4) / 4
    for n in range(2, 30):
        cov, delta = design_comparison_covariance(cov, center, P, rng)
        st_.push(4 / P * np.trace(truth @ cov.s).real, cov.s, delta)
        word = comparison_feedback(st_, 2)
        planes = comparison_planes(word, st_, 2)
        for p in planes:
            assert p.value(truth) <= 1e-12
        if len(planes) == 2:
            sum_form = word.signs[1] * (st_.probes[-1] + st_.probes[-2])
            np.testing.assert_allclose(planes[1].sigma, sum_form, atol=1e-12)
        center = random_density(rng, 4)


def test_comparison_design_properties():
    rng = np.random.default_rng(4)
    P = 2.0
    cov = TrainingCovariance(P / 4 * np.eye(4, dtype=complex), P)
    for _ in range(40):
        center = random_density(rng, 4)
        v = orthogonal_complement(cvec(center))
        np.testing.assert_allclose(v.T @ v, np.eye(15), atol=1e-10)
        np.testing.assert_allclose(v.T @ cvec(center), 0, atol=1e-10)
        new, delta = design_comparison_covariance(cov, center, P, rng)
        assert abs(np.trace(center @ delta).real) <= 1e-10
        assert np.linalg.norm(cvec(delta)) == pytest.approx(P / 5, rel=1e-12)
        assert np.linalg.eigvalsh(new.s)[0] >= -1e-10
        assert np.trace(new.s).real <= P * (1 + 1e-10)
        np.testing.assert_allclose(new.s, cov.s + delta)
        cov = new


def test_comparison_probe_backoff_near_boundary():
    # a covariance with a tiny eigenvalue admits only short probes
    rng = np.random.default_rng(5)
    s = np.diag([0.5, 0.3, 0.15, 0.002]).astype(complex)
    new, delta = design_comparison_covariance(TrainingCovariance(s, 1.0), np.eye(4) / 4, 1.0, rng)
    assert np.linalg.norm(cvec(delta)) < 0.2
    assert np.linalg.eigvalsh(new.s)[0] >= -1e-10


def test_random_beam_counts():
    assert random_beam_count(10) == 14
    assert random_beam_bits(14) == 4
    assert random_beam_count(60) == 89
    assert random_beam_bits(89) == 7
    assert random_beam_count(1) == 1
    assert random_beam_bits(1) == 0


def test_random_beamforming_run():
    rng = np.random.default_rng(6)
    g = random_density(rng, 4)
    winner, gain, bits = random_beamforming_run(g, 10, 1.0, 2.0, rng)
    assert bits == 4
    assert np.linalg.norm(winner) == pytest.approx(1.0)
    lam = np.linalg.eigvalsh(g)
    assert gain <= 4 * lam[-1] / lam.sum() + 1e-12
    v = winner / np.linalg.norm(winner)
    assert gain == pytest.approx(4 * np.vdot(v, g @ v).real, rel=1e-12)
    with pytest.raises(ValueError):
        random_beamforming_run(g, 0, 1.0, 2.0, rng)


def test_random_beam_picks_strongest():
    g = random_density(np.random.default_rng(8), 3)
    winner, gain, _ = random_beamforming_run(g, 20, 4.0, 1.0, np.random.default_rng(7))
    # replay the same draws independently
    rng = np.random.default_rng(7)
    n = random_beam_count(20)
    beams = rng.standard_normal((n, 3)) + 1j * rng.standard_normal((n, 3))
    quads = [np.vdot(b, g @ b).real / np.vdot(b, b).real for b in beams]
    assert gain == pytest.approx(3 * max(quads), rel=1e-12)  # tr(g) = 1
    assert np.linalg.norm(winner) == pytest.approx(2.0)
