import numpy as np
import pytest
from scipy.interpolate import BSpline

from semitgdr.splines import (
    FittedCurve,
    LinearBasis,
    SplineBasis,
    basis_matrix,
    design_block,
    env_design,
    evaluate_basis,
    evaluate_curve,
)


@pytest.mark.parametrize("D", [4, 5, 7, 8, 12])
def test_matches_scipy_bspline(D):
    basis = SplineBasis(D)
    e = np.concatenate([np.linspace(0, 1, 201), np.random.default_rng(D).uniform(size=300)])
    ours = basis(e)
    for d in range(D):
        c = np.zeros(D)
        c[d] = 1.0
        ref = BSpline(basis.knots, c, 3, extrapolate=False)(e)
        # scipy leaves the right end point outside the last half-open span
        ref[e == 1.0] = 1.0 if d == D - 1 else 0.0
        np.testing.assert_allclose(ours[:, d], ref, atol=1e-13)


@pytest.mark.parametrize("D", [4, 5, 8])
def test_partition_of_unity(D):
    e = np.random.default_rng(0).uniform(size=1000)
    assert np.max(np.abs(SplineBasis(D)(e).sum(axis=1) - 1)) < 1e-10


@pytest.mark.parametrize("D", [4, 6, 9])
def test_clamped_ends(D):
    B = SplineBasis(D)([0.0, 1.0])
    expect = np.zeros((2, D))
    expect[0, 0] = 1.0
    expect[1, -1] = 1.0
    np.testing.assert_array_equal(B, expect)


def test_cubic_bernstein_midpoint():
    np.testing.assert_allclose(evaluate_basis(SplineBasis(4), 0.5), [0.125, 0.375, 0.375, 0.125], atol=1e-15)


def test_knots():
    b = SplineBasis(7)
    np.testing.assert_allclose(b.interior_knots, [0.25, 0.5, 0.75])
    assert len(b.knots) == 11


def test_domain_and_size_errors():
    with pytest.raises(ValueError):
        SplineBasis(3)
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        basis_matrix(SplineBasis(5), [0.5, 1.2])
    with pytest.raises(ValueError):
        basis_matrix(SplineBasis(5), [-0.01])


def test_design_block_centered_and_rank():
    e = np.random.default_rng(1).uniform(size=200)
    block, means = design_block(SplineBasis(6), e)
    np.testing.assert_allclose(block.mean(axis=0), 0, atol=1e-14)
    assert np.linalg.matrix_rank(block) == 5
    np.testing.assert_allclose(means, SplineBasis(6)(e).mean(axis=0))


def test_env_design_stacks_factors():
    E = np.random.default_rng(2).uniform(size=(50, 3))
    B, means = env_design(SplineBasis(5), E)
    assert B.shape == (50, 15) and means.shape == (3, 5)
    B2, _ = env_design(SplineBasis(5), E, means)
    np.testing.assert_array_equal(B, B2)


def test_linear_basis():
    np.testing.assert_array_equal(LinearBasis()([0.0, 0.5]), [[0.0], [0.5]])


def test_curve_evaluation():
    basis = SplineBasis(5)
    grid = np.linspace(0, 1, 11)
    means = np.full(5, 0.2)
    eta = np.arange(5.0)
    c = evaluate_curve(basis, eta, grid, means)
    np.testing.assert_allclose(c.values, (basis(grid) - means) @ eta)
    with pytest.raises(ValueError):
        FittedCurve(grid=grid[::-1], values=c.values)
