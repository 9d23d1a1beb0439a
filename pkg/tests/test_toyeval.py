import math
import warnings

import numpy as np
import pytest

from vgan.data import SynthSpec, mode_centers, synth
from vgan.toyeval import (
    BoundReport,
    CoarseGridWarning,
    DiscreteSpace,
    QuadratureGrid,
    bound_value,
    exact_log_partition,
    exact_nll,
    mode_coverage,
    write_bound_reports,
)

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def gauss(pts):
    return 0.5 * np.sum(pts ** 2, axis=1)


def test_grid_validation():
    with pytest.raises(ValueError):
        QuadratureGrid(0.0, 1.0, 8)
    with pytest.raises(ValueError):
        QuadratureGrid(1.0, 0.0, 64)
    with pytest.raises(ValueError):
        QuadratureGrid((0, 0, 0), (1, 1, 1), 32)


def test_log_partition_constant_energies():
    grid = QuadratureGrid(0.0, 1.0, 64)
    assert exact_log_partition(lambda p: np.zeros(len(p)), grid) == pytest.approx(0.0, abs=1e-14)
    assert exact_log_partition(lambda p: np.full(len(p), 2.5), grid) == pytest.approx(-2.5, abs=1e-14)


def test_log_partition_gaussian():
    grid = QuadratureGrid(-8.0, 8.0, 512)
    assert exact_log_partition(gauss, grid) == pytest.approx(0.918939, abs=1e-4)
    assert exact_log_partition(gauss, grid) == pytest.approx(HALF_LOG_2PI, abs=1e-10)


def test_log_partition_gaussian_2d():
    grid = QuadratureGrid((-8, -8), (8, 8), 256)
    assert exact_log_partition(gauss, grid) == pytest.approx(2 * HALF_LOG_2PI, abs=1e-8)


def test_coarse_grid_warning():
    narrow = lambda p: 0.5 * (p[:, 0] / 0.02) ** 2  # noqa: E731
    with pytest.warns(CoarseGridWarning):
        exact_log_partition(narrow, QuadratureGrid(-1.0, 1.0, 16))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        exact_log_partition(gauss, QuadratureGrid(-8.0, 8.0, 512))


def test_quadrature_error_shrinks_with_resolution():
    # the integrand is far from zero at the ends, so the trapezoid error is O(h^2)
    f = lambda p: 0.5 * (p[:, 0] - 0.3) ** 2 / 0.4 + 0.1 * np.sin(3 * p[:, 0])  # noqa: E731
    z = [exact_log_partition(f, QuadratureGrid(0.0, 1.5, n), check=False) for n in (64, 128, 256, 512)]
    diffs = np.abs(np.diff(z))
    assert np.all(diffs[1:] < diffs[:-1])


def test_exact_nll_values():
    grid = QuadratureGrid(0.0, 1.0, 64)
    assert exact_nll(lambda p: np.zeros(len(p)), np.array([[0.2], [0.9]]), grid) == pytest.approx(0.0, abs=1e-14)
    big = QuadratureGrid(-8.0, 8.0, 512)
    assert exact_nll(gauss, np.zeros((1, 1)), big) == pytest.approx(0.918939, abs=1e-4)
    with pytest.raises(ValueError):
        exact_nll(gauss, np.array([[9.0]]), big)


def test_nll_shift_invariance():
    grid = QuadratureGrid(-8.0, 8.0, 512)
    data = np.random.default_rng(0).normal(size=(50, 1))
    base = exact_nll(gauss, data, grid)
    for b in (-3.0, 0.7, 12.0):
        assert exact_nll(lambda p: gauss(p) + b, data, grid) == pytest.approx(base, abs=1e-10)


def test_bound_trivial_uniform():
    grid = QuadratureGrid(0.0, 1.0, 64)
    q = np.random.default_rng(0).uniform(size=(100, 1))
    rep = bound_value(lambda p: np.zeros(len(p)), np.array([[0.5]]), q, 0.0, grid)
    assert rep.bound == 0.0 and rep.exact_nll == pytest.approx(0.0, abs=1e-14)
    assert rep.gap == pytest.approx(0.0, abs=1e-14)


def test_bound_uniform_q_on_gaussian_has_positive_gap():
    grid = QuadratureGrid(-4.0, 4.0, 512)
    rng = np.random.default_rng(1)
    q = rng.uniform(-4, 4, size=(100_000, 1))
    rep = bound_value(gauss, rng.normal(size=(200, 1)).clip(-4, 4), q, math.log(8.0), grid)
    # gap = log Z + E_q[x^2/2] - H(q) = KL(q || p), closed form for U[-4, 4]
    expected = HALF_LOG_2PI + 16.0 / 6.0 - math.log(8.0)
    assert rep.gap > rep.tolerance()
    assert rep.gap == pytest.approx(expected, abs=rep.tolerance())


def test_bound_discrete_model_sampled_exactly():
    rng = np.random.default_rng(2)
    states = np.arange(8.0)[:, None]
    energies = rng.uniform(0, 3, size=8)
    f = lambda p: energies[p[:, 0].astype(int)]  # noqa: E731
    p = np.exp(-energies) / np.exp(-energies).sum()
    q = rng.choice(8, size=100_000, p=p)[:, None].astype(float)
    rep = bound_value(f, states[rng.integers(0, 8, 30)], q, -np.sum(p * np.log(p)), DiscreteSpace(states))
    assert abs(rep.gap) < 1e-2


def test_bound_empty_samples():
    with pytest.raises(ValueError):
        bound_value(gauss, np.zeros((1, 1)), np.zeros((0, 1)), 0.0, QuadratureGrid(-1.0, 1.0, 32))


def test_bound_report_csv(tmp_path):
    rep = BoundReport(1.0, 0.5, 0.25, 0.75, 1.0, 0.25, 0.01)
    write_bound_reports([("uniform", rep)], tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "q,data_term,q_term,entropy,bound,exact_nll,gap,q_stderr"
    assert lines[1].startswith("uniform,1.0,0.5,")


def test_mode_coverage_examples():
    centers = mode_centers(SynthSpec())
    cov = mode_coverage(np.repeat(centers[:1], 10, axis=0), centers, 0.1)
    np.testing.assert_array_equal(cov.fractions, [1, 0, 0, 0, 0, 0, 0, 0])
    cov = mode_coverage(np.repeat(centers, 3, axis=0), centers, 0.1)
    np.testing.assert_allclose(cov.fractions, 1 / 8)
    assert cov.unassigned == 0.0
    cov = mode_coverage(np.zeros((4, 2)), centers, 0.1)
    assert cov.unassigned == 1.0 and cov.covered() == 0
    with pytest.raises(ValueError):
        mode_coverage(centers, centers, 0.0)


def test_mode_coverage_of_true_mixture():
    spec = SynthSpec("ring-mixture", 8, 0.05, 10_000)
    ds = synth(spec, np.random.default_rng(3))
    cov = mode_coverage(ds.images, mode_centers(spec), 3 * spec.sigma)
    assert np.all(np.abs(cov.fractions - 0.125) < 0.02)
    assert cov.covered() == 8
