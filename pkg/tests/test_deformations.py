import math

import numpy as np
import pytest
from scipy import integrate

from gentest.deformations import KINDS, TRACTABLE_KINDS, DeformationSpec, apply, deformed_log_pdf, draw
from gentest.errors import DensityUnavailableError, InvalidEpsilonError, InvalidInputError
from gentest.generators import MixtureOfGaussians, log_pdf, preset, reference_stats, sample
from gentest.statistics import ks_bar

STD1 = MixtureOfGaussians([1.0], [[0.0]], [[1.0]])


@pytest.mark.parametrize("kind", KINDS)
def test_zero_epsilon_is_bit_exact_identity(kind):
    g = preset("cg-d5")
    x = sample(g, 300, 1)
    dr = draw(DeformationSpec(kind, 0.0), 300, 5, 2)
    y = apply(dr, x, reference_stats(g))
    assert np.array_equal(x, y)
    assert y is not x


def test_epsilon_validation():
    with pytest.raises(InvalidEpsilonError):
        DeformationSpec("MuShift", -0.1)
    with pytest.raises(InvalidEpsilonError):
        DeformationSpec("SigmaOffDiag", 1.5)
    with pytest.raises(InvalidInputError):
        DeformationSpec("Twist", 0.1)
    with pytest.raises(InvalidInputError):
        draw(DeformationSpec("MuShift", 0.1), 1, 2, 0)


def test_draw_examples():
    assert np.array_equal(draw(DeformationSpec("MuShift", 0.0), 5, 3, 0).per_dimension_shift, np.zeros(3))
    assert np.array_equal(draw(DeformationSpec("SigmaDiag", 0.0), 5, 3, 0).per_dimension_scale, np.ones(3))
    perms = draw(DeformationSpec("SigmaOffDiag", 1.0), 4, 6, 0).per_dimension_permutation
    for p in perms:
        assert sorted(p) == [0, 1, 2, 3]
        assert np.all(p != np.arange(4))


def test_draw_ranges():
    dr = draw(DeformationSpec("MuShift", 0.3), 10, 1000, 5)
    assert np.all(np.abs(dr.per_dimension_shift) <= 0.3)
    dr = draw(DeformationSpec("SigmaDiag", 0.3), 10, 1000, 5)
    assert np.all((dr.per_dimension_scale >= 1) & (dr.per_dimension_scale <= 1.3))
    dr = draw(DeformationSpec("SigmaOffDiag", 0.37), 100, 8, 5)
    for p in dr.per_dimension_permutation:
        assert sorted(p) == list(range(100))
        assert np.sum(p != np.arange(100)) == 37


def test_apply_examples():
    x = np.array([[-4.0], [2.0]])
    assert apply(draw(DeformationSpec("PowPlus", 1.0), 2, 1, 0), x)[0, 0] == -16.0
    g = MixtureOfGaussians([1.0], [[0.0]], [[1.0]])
    dr = draw(DeformationSpec("SigmaDiag", 0.5), 2, 1, 0)
    dr = type(dr)(dr.kind, dr.epsilon, dr.n, dr.d, per_dimension_scale=np.array([1.5]))
    np.testing.assert_array_equal(apply(dr, np.array([[-2.0], [2.0]]), reference_stats(g)), [[-3.0], [3.0]])
    with pytest.raises(InvalidInputError):
        apply(dr, np.zeros((2, 3)), reference_stats(g))
    with pytest.raises(InvalidInputError):
        apply(dr, np.zeros((2, 1)))


def test_pow_zero_maps_to_zero():
    x = np.array([[0.0, -0.5], [1.0, 3.0]])
    for kind in ("PowPlus", "PowMinus"):
        y = apply(draw(DeformationSpec(kind, 0.4), 2, 2, 0), x)
        assert y[0, 0] == 0.0


@pytest.mark.parametrize("eps", [0.3, 1.0])
def test_off_diagonal_shuffle_keeps_marginals(eps):
    x = sample(preset("cg-d5"), 500, 3)
    y = apply(draw(DeformationSpec("SigmaOffDiag", eps), 500, 5, 4), x)
    assert ks_bar(x, y) == 0.0
    np.testing.assert_array_equal(np.sort(x, axis=0), np.sort(y, axis=0))
    if eps == 1.0:
        assert abs(np.corrcoef(y.T)[0, 1]) < abs(np.corrcoef(x.T)[0, 1])


def test_normal_smear_variance():
    n, eps = 100_000, 0.7
    x = sample(STD1, n, 1)
    y = apply(draw(DeformationSpec("NormalSmear", eps), n, 1, 2), x)
    var = y[:, 0].var(ddof=1)
    expected = x[:, 0].var(ddof=1) + eps**2
    se = expected * math.sqrt(2 / (n - 1))
    assert abs(var - expected) < 5 * se


def test_uniform_smear_bounds():
    x = np.zeros((1000, 2))
    y = apply(draw(DeformationSpec("UniformSmear", 0.25), 1000, 2, 0), x)
    assert np.all(np.abs(y) <= 0.25)


def test_pow_mutual_inverse():
    x = sample(preset("cg-d5"), 100, 0)
    eps = 0.2
    up = apply(draw(DeformationSpec("PowPlus", eps), 100, 5, 0), x)
    back = apply(draw(DeformationSpec("PowMinus", 1 - 1 / (1 + eps)), 100, 5, 0), up)
    np.testing.assert_allclose(back, x, rtol=1e-12, atol=1e-12)


def test_common_random_numbers_across_epsilon():
    a = draw(DeformationSpec("MuShift", 0.1), 10, 4, 7).per_dimension_shift
    b = draw(DeformationSpec("MuShift", 0.3), 10, 4, 7).per_dimension_shift
    np.testing.assert_allclose(3 * a, b, rtol=1e-14)
    p1 = draw(DeformationSpec("SigmaOffDiag", 0.2), 50, 1, 7).per_dimension_permutation[0]
    p2 = draw(DeformationSpec("SigmaOffDiag", 0.6), 50, 1, 7).per_dimension_permutation[0]
    assert set(np.flatnonzero(p1 != np.arange(50))) <= set(np.flatnonzero(p2 != np.arange(50)))


def test_deformed_log_pdf_examples():
    dr = draw(DeformationSpec("MuShift", 1.0), 2, 1, 0)
    dr = type(dr)(dr.kind, 1.0, 2, 1, per_dimension_shift=np.array([1.0]))
    assert deformed_log_pdf(STD1, dr, [[1.0]])[0] == pytest.approx(-0.9189385332, abs=1e-9)
    dr = type(dr)("SigmaDiag", 1.0, 2, 1, per_dimension_scale=np.array([2.0]))
    assert deformed_log_pdf(STD1, dr, [[2.0]])[0] == pytest.approx(-1.4189385332 - math.log(2), abs=1e-9)
    dr0 = draw(DeformationSpec("PowPlus", 0.0), 2, 1, 0)
    np.testing.assert_array_equal(deformed_log_pdf(STD1, dr0, [[0.3], [1.2]]), log_pdf(STD1, [[0.3], [1.2]]))
    for kind in ("SigmaOffDiag", "NormalSmear", "UniformSmear"):
        with pytest.raises(DensityUnavailableError):
            deformed_log_pdf(STD1, draw(DeformationSpec(kind, 0.1), 2, 1, 0), [[0.0]])


@pytest.mark.parametrize("kind", TRACTABLE_KINDS)
@pytest.mark.parametrize("eps", [0.1, 0.5])
def test_deformed_density_normalises(kind, eps):
    g = MixtureOfGaussians([0.4, 0.6], [[-1.0], [1.5]], [[0.7], [1.1]])
    dr = draw(DeformationSpec(kind, eps), 2, 1, 3)
    f = lambda t: math.exp(deformed_log_pdf(g, dr, [[t]])[0]) if t != 0 else 0.0
    total = sum(integrate.quad(f, a, b, limit=400)[0] for a, b in [(-60, -1e-12), (1e-12, 60)])
    assert abs(total - 1) < 1e-3


@pytest.mark.parametrize("kind", TRACTABLE_KINDS)
def test_deformed_density_matches_sample_histogram(kind):
    g = MixtureOfGaussians([1.0], [[0.5]], [[1.0]])
    dr = draw(DeformationSpec(kind, 0.3), 200_000, 1, 8)
    y = apply(dr, sample(g, 200_000, 9), reference_stats(g))
    counts, edges = np.histogram(y[:, 0], bins=40, range=(-2.5, 3.5))
    f = lambda t: math.exp(deformed_log_pdf(g, dr, [[t]])[0]) if t != 0 else 0.0
    expected = np.array([integrate.quad(f, a, b, points=[0.0] if a < 0 < b else None)[0] for a, b in zip(edges[:-1], edges[1:])])
    expected *= 200_000
    ok = expected > 200
    assert np.all(np.abs(counts[ok] - expected[ok]) < 5 * np.sqrt(expected[ok]))


def test_spec_round_trip():
    s = DeformationSpec("PowMinus", 0.25)
    assert DeformationSpec.from_dict(s.to_dict()) == s
