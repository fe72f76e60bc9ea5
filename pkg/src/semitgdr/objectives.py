"""Losses, fitted values and negative gradients for both model families.

Every public function works on one dataset. The engine goes through
:class:`Design`, which caches the centered environment block and the
per-row weights so that repeated evaluations along a path stay cheap.
Interaction terms are never materialized: the interaction part of the
fit is the row-wise quadratic form ``x_i' G x_i`` with ``G`` the strictly
upper-triangular coefficient matrix, and the interaction gradient is the
upper triangle of ``X' diag(r) X``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class AftWeights:
    """Kaplan-Meier (Stute) jump weights in ascending-time order."""

    order: np.ndarray
    w: np.ndarray
    delta: np.ndarray

    def in_input_order(self) -> np.ndarray:
        out = np.empty_like(self.w)
        out[self.order] = self.w
        return out


def km_weights(times, delta) -> AftWeights:
    times = np.asarray(times, dtype=float).reshape(-1)
    delta = np.asarray(delta).reshape(-1).astype(int)
    if times.shape != delta.shape:
        raise ValueError("times and delta differ in length")
    if np.any(~np.isfinite(times)) or np.any(times <= 0):
        raise ValueError("survival times must be positive and finite")
    return _km_sorted(times, delta)


def _km_sorted(key: np.ndarray, delta: np.ndarray) -> AftWeights:
    """Weights given any key that orders the times (times or log-times)."""
    if not np.all((delta == 0) | (delta == 1)):
        raise ValueError("event must be 0 or 1")
    n = key.shape[0]
    # ascending time; events before censorings at ties; then input order
    order = np.lexsort((np.arange(n), 1 - delta, key))
    d = delta[order].astype(float)
    i = np.arange(1, n + 1, dtype=float)
    factor = ((n - i) / (n - i + 1)) ** d
    survive = np.concatenate([[1.0], np.cumprod(factor)[:-1]])
    # the product telescopes over a run of events, so every event in a run
    # gets survive(run start) / (at risk at run start); exact 1/n without censoring
    start = np.maximum.accumulate(np.where(d == 0, np.arange(n) + 1, 0))
    start = np.minimum(start, n - 1)
    w = d * survive[start] / (n - start)
    return AftWeights(order=order, w=w, delta=delta[order])


@dataclass(frozen=True)
class GradientBlock:
    f: np.ndarray
    g: np.ndarray
    h: np.ndarray

    def scaled(self, c: float) -> "GradientBlock":
        return GradientBlock(self.f * c, self.g * c, self.h * c)


@dataclass
class Design:
    """Cached numerical view of one standardized dataset.

    ``row_w`` are the per-row loss weights: ones for least squares and
    ``n * w_i`` (Kaplan-Meier weights, input order) for the AFT loss.
    """

    X: np.ndarray
    B: np.ndarray
    means: np.ndarray
    y: np.ndarray
    row_w: np.ndarray
    q: int
    D: int

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def aft_row_weights(y, event) -> np.ndarray:
    """``n * w_i`` in input order; ``y`` may be (centered) log-times."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite log-times")
    # log is monotone, so log-times order the rows exactly like the times
    w = _km_sorted(y, np.asarray(event).reshape(-1).astype(int))
    return y.shape[0] * w.in_input_order()


def build_design(bundle, basis, family="linear", means=None, row_w=None) -> Design:
    from .splines import env_design
    from .core_model import ModelFamily

    B, mu = env_design(basis, bundle.E, means)
    if row_w is None:
        if ModelFamily.parse(family) is ModelFamily.AFT:
            row_w = aft_row_weights(bundle.y, bundle.event)
        else:
            row_w = np.ones(bundle.n)
    return Design(
        X=bundle.X, B=B, means=mu, y=bundle.y, row_w=np.asarray(row_w, dtype=float),
        q=bundle.E.shape[1], D=mu.shape[1],
    )


@lru_cache(maxsize=16)
def _upper(p: int):
    rows, cols = np.triu_indices(p, 1)
    rows.flags.writeable = False
    cols.flags.writeable = False
    return rows, cols


def gamma_matrix(gamma: np.ndarray, p: int) -> np.ndarray:
    G = np.zeros((p, p))
    G[_upper(p)] = gamma
    return G


def interaction_fit(X: np.ndarray, G: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", X @ G, X)


def fitted_values(state, design: Design, G: np.ndarray | None = None) -> np.ndarray:
    if G is None:
        G = gamma_matrix(state.gamma, design.p)
    return design.X @ state.beta + interaction_fit(design.X, G) + design.B @ state.Z.ravel()


def design_loss(state, design: Design) -> float:
    r = design.y - fitted_values(state, design)
    return float(np.sum(design.row_w * r * r))


def residual_gradient(design: Design, r: np.ndarray) -> GradientBlock:
    """Negative gradient of ``sum(row_w * r**2)`` given the residual ``r``."""
    wr = design.row_w * r
    X = design.X
    f = 2.0 * (X.T @ wr)
    cross = X.T @ (X * wr[:, None])
    g = 2.0 * cross[_upper(design.p)]
    h = 2.0 * (design.B.T @ wr).reshape(design.q, design.D)
    return GradientBlock(f, g, h)


def design_gradient(state, design: Design) -> GradientBlock:
    return residual_gradient(design, design.y - fitted_values(state, design))


def linear_loss(state, bundle, basis) -> float:
    """Unnormalized squared-error loss of one dataset."""
    return design_loss(state, build_design(bundle, basis, "linear"))


def linear_gradient(state, bundle, basis) -> GradientBlock:
    return design_gradient(state, build_design(bundle, basis, "linear"))


def _aft_design(bundle, basis, weights: AftWeights | None) -> Design:
    if weights is None:
        return build_design(bundle, basis, "aft")
    return build_design(bundle, basis, "aft", row_w=bundle.n * weights.in_input_order())


def aft_loss(state, bundle, basis, weights: AftWeights | None = None) -> float:
    """``n * sum_i w_i (log t_i - fit_i)^2`` with Kaplan-Meier weights.

    ``bundle.y`` must already hold (centered) log-times.
    """
    return design_loss(state, _aft_design(bundle, basis, weights))


def aft_gradient(state, bundle, basis, weights: AftWeights | None = None) -> GradientBlock:
    return design_gradient(state, _aft_design(bundle, basis, weights))


def predict(state, bundle, basis, means=None) -> np.ndarray:
    """Fitted linear predictor (predicted centered log-time for AFT)."""
    return fitted_values(state, build_design(bundle, basis, "linear", means=means))
