"""Cubic B-spline bases on [0, 1] for the environmental effects."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEGREE = 3


@dataclass(frozen=True)
class SplineBasis:
    """Clamped cubic B-spline basis with ``D`` functions and equally spaced
    interior knots on [0, 1]."""

    D: int
    degree: int = DEGREE
    knots: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.D < self.degree + 1:
            raise ValueError(f"a cubic basis needs D >= 4, got D={self.D}")
        n_interior = self.D - self.degree - 1
        interior = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
        knots = np.concatenate(
            [np.zeros(self.degree + 1), interior, np.ones(self.degree + 1)]
        )
        object.__setattr__(self, "knots", knots)

    @property
    def interior_knots(self) -> np.ndarray:
        return self.knots[self.degree + 1 : -(self.degree + 1)]

    def __call__(self, e) -> np.ndarray:
        return basis_matrix(self, e)


@dataclass(frozen=True)
class LinearBasis:
    """Single identity "basis" used when the environment enters linearly."""

    D: int = 1

    def __call__(self, e) -> np.ndarray:
        e = _check_domain(e)
        return e.reshape(-1, 1)


def make_basis(D: int) -> SplineBasis:
    return SplineBasis(D)


def _check_domain(e) -> np.ndarray:
    e = np.atleast_1d(np.asarray(e, dtype=float))
    if np.any(~np.isfinite(e)) or np.any(e < 0.0) or np.any(e > 1.0):
        raise ValueError("environment values must lie in [0, 1]; rescale upstream")
    return e


def _find_span(basis: SplineBasis, e: np.ndarray) -> np.ndarray:
    t, k = basis.knots, basis.degree
    n_funcs = basis.D
    # last non-degenerate span for e == 1
    span = np.searchsorted(t, e, side="right") - 1
    return np.clip(span, k, n_funcs - 1)


def basis_matrix(basis: SplineBasis, e) -> np.ndarray:
    """Evaluate all basis functions at each point; returns ``len(e) x D``."""
    e = _check_domain(e)
    t, k = basis.knots, basis.degree
    span = _find_span(basis, e)
    n = e.shape[0]
    # Cox-de Boor triangle, vectorized over points (The NURBS Book, A2.2)
    N = np.zeros((n, k + 1))
    N[:, 0] = 1.0
    left = np.zeros((n, k + 1))
    right = np.zeros((n, k + 1))
    for j in range(1, k + 1):
        left[:, j] = e - t[span + 1 - j]
        right[:, j] = t[span + j] - e
        saved = np.zeros(n)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = N[:, r] / denom
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    out = np.zeros((n, basis.D))
    cols = span[:, None] - k + np.arange(k + 1)[None, :]
    np.put_along_axis(out, cols, N, axis=1)
    return out


def evaluate_basis(basis: SplineBasis, e: float) -> np.ndarray:
    """Values of the ``D`` basis functions at a single point ``e``."""
    return basis_matrix(basis, [e])[0]


def design_block(basis, E_col) -> tuple[np.ndarray, np.ndarray]:
    """Column-centered basis matrix for one environmental factor.

    Returns ``(block, means)``; the means are needed to evaluate the curve
    (or to build the block for new rows) on the same centering.
    """
    raw = basis(E_col)
    means = raw.mean(axis=0)
    return raw - means, means


def env_design(basis, E: np.ndarray, means: np.ndarray | None = None):
    """Stack the per-factor blocks of all ``q`` environmental columns.

    With ``means`` given (shape ``q x D``) the blocks are centered with those
    values instead of the sample means of ``E``.
    """
    E = np.asarray(E, dtype=float)
    if E.ndim == 1:
        E = E.reshape(-1, 1)
    blocks, all_means = [], []
    for l in range(E.shape[1]):
        raw = basis(E[:, l])
        mu = raw.mean(axis=0) if means is None else means[l]
        blocks.append(raw - mu)
        all_means.append(mu)
    return np.hstack(blocks), np.vstack(all_means)


@dataclass(frozen=True)
class FittedCurve:
    grid: np.ndarray
    values: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    mean: np.ndarray | None = None

    def __post_init__(self):
        if self.grid.ndim != 1 or np.any(np.diff(self.grid) <= 0):
            raise ValueError("curve grid must be strictly ascending")


def evaluate_curve(basis, eta, grid, means) -> FittedCurve:
    grid = np.asarray(grid, dtype=float)
    B = basis(grid) - np.asarray(means, dtype=float)
    return FittedCurve(grid=grid, values=B @ np.asarray(eta, dtype=float))


def default_grid(size: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, size)
