"""Thresholded gradient directed regularization across several datasets.

All datasets share one selection mask per iteration (so they share a
sparsity structure) while keeping their own coefficient values. The
environmental block is never thresholded. The number of iterations is
chosen by K-fold cross-validation with all folds advanced in lockstep.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .core_model import (
    CoefficientState,
    DataError,
    DatasetBundle,
    InteractionIndex,
    ModelFamily,
    StudyCollection,
    n_pairs,
)
from .objectives import Design, GradientBlock, _upper, aft_row_weights, build_design, residual_gradient
from .splines import FittedCurve, LinearBasis, default_grid, evaluate_curve, make_basis

log = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    """Raised when the path produces non-finite values."""


class Variant(str, enum.Enum):
    PROPOSED = "proposed"
    META = "meta"
    POOL = "pool"
    PARAMETRIC = "parametric"

    @classmethod
    def parse(cls, value: "str | Variant") -> "Variant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown variant {value!r}") from None


@dataclass(frozen=True)
class TgdrConfig:
    """Tuning parameters.

    ``loss_scale="mean"`` divides each dataset's loss by its size before
    the step, so ``delta_step=0.5`` moves a unit-variance coordinate by
    exactly its least-squares increment. ``loss_scale="sum"`` with a small
    step gives the unnormalized update. ``step_normalization="curvature"``
    divides each coordinate's step by the weighted mean square of its column
    (1 for standardized genes, not for their products); ``"none"`` uses one
    step for all coordinates. ``step_cap`` shortens a step that would
    overshoot the minimizer along the masked direction (several coordinates
    moving together can otherwise oscillate and diverge). ``spline_update="profile"`` sets the
    environmental block to its conditional least-squares value given the
    current gene coefficients; ``"gradient"`` takes a plain gradient step.
    """

    tau: float = 0.9
    delta_step: float = 0.5
    t_max: int = 2000
    cv_folds: int = 5
    seed: int = 0
    variant: Variant = Variant.PROPOSED
    spline_D: int = 7
    selection_tol: float = 1e-12
    loss_scale: str = "mean"
    spline_update: str = "profile"
    patience: int = 200
    hierarchy: bool = True
    step_normalization: str = "curvature"
    step_cap: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if not self.delta_step > 0:
            raise ValueError("delta_step must be positive")
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        if self.spline_D < 4:
            raise ValueError("spline_D must be at least 4 for a cubic basis")
        if self.loss_scale not in ("mean", "sum"):
            raise ValueError("loss_scale must be 'mean' or 'sum'")
        if self.spline_update not in ("profile", "gradient"):
            raise ValueError("spline_update must be 'profile' or 'gradient'")
        if self.step_normalization not in ("curvature", "none"):
            raise ValueError("step_normalization must be 'curvature' or 'none'")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")

    def basis(self):
        if self.variant is Variant.PARAMETRIC:
            return LinearBasis()
        return make_basis(self.spline_D)


@dataclass(frozen=True)
class SelectionMask:
    f_tilde: np.ndarray
    g_tilde: np.ndarray


def compute_masks(blocks, tau: float, hierarchy: bool = True) -> SelectionMask:
    """Shared 0/1 masks from the per-dataset gradient blocks.

    A coordinate is kept when its gradient magnitude summed over datasets
    strictly exceeds ``tau`` times the largest such sum. Every kept
    interaction then switches on both of its main effects.
    """
    blocks = list(blocks)
    if not blocks:
        raise ValueError("need at least one gradient block")
    p, n_int = blocks[0].f.shape[0], blocks[0].g.shape[0]
    for b in blocks:
        if b.f.shape != (p,) or b.g.shape != (n_int,):
            raise ValueError("gradient blocks differ in shape")
    F = np.sum([np.abs(b.f) for b in blocks], axis=0)
    G = np.sum([np.abs(b.g) for b in blocks], axis=0)
    f_mask = F > tau * F.max() if F.max() > 0 else np.zeros(p, dtype=bool)
    g_mask = G > tau * G.max() if n_int and G.max() > 0 else np.zeros(n_int, dtype=bool)
    if hierarchy and g_mask.any():
        rows, cols = _upper(p)
        f_mask = f_mask.copy()
        f_mask[rows[g_mask]] = True
        f_mask[cols[g_mask]] = True
    return SelectionMask(f_mask.astype(np.int8), g_mask.astype(np.int8))


class _Unit:
    """Working arrays of one dataset along a path, with optional held-out rows."""

    def __init__(self, design: Design, config: TgdrConfig, holdout: Design | None = None):
        self.d = design
        self.config = config
        self.scale = 1.0 / design.n if config.loss_scale == "mean" else 1.0
        self.index = InteractionIndex(design.p)
        self.state = CoefficientState.zeros(design.p, design.q, design.D)
        self.par = np.zeros(design.n)
        sw = np.sqrt(design.row_w)
        # weighted minimum-norm projection; the centered block is rank deficient
        self.proj = np.linalg.pinv(sw[:, None] * design.B, rcond=1e-10) * sw[None, :]
        self.ho = holdout
        self.ho_par = None if holdout is None else np.zeros(holdout.n)
        p = design.p
        if config.step_normalization == "curvature":
            X2 = design.X * design.X
            c_main = design.row_w @ X2 / design.n
            c_int = (X2.T @ (X2 * design.row_w[:, None]))[_upper(p)] / design.n
            # a zero column has a zero gradient, so its step never matters
            self.inv_main = 1.0 / np.where(c_main > 0, c_main, 1.0)
            self.inv_int = 1.0 / np.where(c_int > 0, c_int, 1.0)
        else:
            self.inv_main = np.ones(p)
            self.inv_int = np.ones(n_pairs(p))

    def residual(self) -> np.ndarray:
        return self.d.y - self.par - self.d.B @ self.state.Z.ravel()

    def loss(self) -> float:
        r = self.residual()
        return float(np.sum(self.d.row_w * r * r))

    def profile(self) -> None:
        z = self.proj @ (self.d.y - self.par)
        self.state.Z = z.reshape(self.d.q, self.d.D)

    def gradient(self) -> GradientBlock:
        self._r = self.residual()
        return residual_gradient(self.d, self._r)

    def apply(self, mask: SelectionMask, grad: GradientBlock) -> None:
        step = self.config.delta_step * self.scale
        fm = np.flatnonzero(mask.f_tilde)
        gm = np.flatnonzero(mask.g_tilde)
        d_beta = step * self.inv_main[fm] * grad.f[fm]
        d_gamma = step * self.inv_int[gm] * grad.g[gm]
        rows, cols = self.index.rows[gm], self.index.cols[gm]
        X = self.d.X
        move = X[:, fm] @ d_beta + (X[:, rows] * X[:, cols]) @ d_gamma
        if self.config.step_cap:
            # never step past the minimizer along the masked direction
            wm = self.d.row_w * move
            curv = float(wm @ move)
            if curv > 0:
                best = float(wm @ self._r) / curv
                if 0 < best < 1:
                    d_beta, d_gamma, move = best * d_beta, best * d_gamma, best * move
        self.state.beta[fm] += d_beta
        self.state.gamma[gm] += d_gamma
        self.par = self.par + move
        if self.ho is not None:
            Xh = self.ho.X
            self.ho_par = self.ho_par + Xh[:, fm] @ d_beta + (Xh[:, rows] * Xh[:, cols]) @ d_gamma
        if self.config.spline_update == "gradient":
            self.state.Z = self.state.Z + step * grad.h
        else:
            self.profile()

    def holdout_error(self) -> float:
        r = self.ho.y - self.ho_par - self.ho.B @ self.state.Z.ravel()
        return float(np.sum(self.ho.row_w * r * r))

    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.par)) and np.all(np.isfinite(self.state.Z)))


def _iterate(units: list[_Unit], config: TgdrConfig) -> SelectionMask:
    """One joint iteration: gradients, shared masks, update."""
    if config.spline_update == "profile":
        for u in units:
            u.profile()
    grads = [u.gradient() for u in units]
    mask = compute_masks(grads, config.tau, config.hierarchy)
    for u, g in zip(units, grads):
        u.apply(mask, g)
    return mask


def _designs(collection: StudyCollection, basis) -> list[Design]:
    return [build_design(d, basis, collection.family) for d in collection.datasets]


def tgdr_step(states, collection: StudyCollection, basis, config: TgdrConfig, masks: SelectionMask):
    """Apply one masked update to copies of ``states``; returns the new states."""
    out = []
    for state, design in zip(states, _designs(collection, basis)):
        u = _Unit(design, config)
        u.state = state.copy()
        G = u.index.to_matrix(u.state.gamma)
        u.par = design.X @ u.state.beta + np.einsum("ij,ij->i", design.X @ G, design.X)
        u.apply(masks, u.gradient())
        out.append(u.state)
    return out


@dataclass
class FitResult:
    variant: Variant
    states: tuple[CoefficientState, ...]
    selected_mains: frozenset
    selected_interactions: frozenset
    t_star: tuple[int, ...]
    cv_curve: tuple[np.ndarray, ...]
    spline_means: tuple[np.ndarray, ...]
    curves: tuple[tuple[FittedCurve, ...], ...]
    dataset_mains: tuple[frozenset, ...] = ()
    dataset_interactions: tuple[frozenset, ...] = ()
    loss_path: np.ndarray | None = None
    repairs: tuple[str, ...] = ()
    basis: object = None
    config: TgdrConfig | None = None
    family: ModelFamily = ModelFamily.LINEAR
    mask_path: list = field(default_factory=list, repr=False)

    @property
    def M(self) -> int:
        return len(self.states)


def _selection(states, tol, p):
    index = InteractionIndex(p)
    mains = set()
    pairs = set()
    for s in states:
        mains.update(int(j) + 1 for j in np.flatnonzero(np.abs(s.beta) > tol))
        for i in np.flatnonzero(np.abs(s.gamma) > tol):
            pairs.add((int(index.rows[i]) + 1, int(index.cols[i]) + 1))
    return mains, pairs


def _repair(mains: set, pairs: set, hierarchy: bool) -> list[str]:
    log = []
    if not hierarchy:
        return log
    for j, k in sorted(pairs):
        for g in (j, k):
            if g not in mains:
                mains.add(g)
                log.append(f"main {g} added with zero coefficient to honor interaction ({j}, {k})")
    return log


def _curves(basis, states, means, grid):
    out = []
    for s, mu in zip(states, means):
        out.append(tuple(evaluate_curve(basis, s.Z[l], grid, mu[l]) for l in range(s.Z.shape[0])))
    return tuple(out)


def _assemble(variant, states, means, basis, config, family, t_star, curves_cv, loss_path=None,
              per_dataset=None, mask_path=None, grid=None):
    p = states[0].beta.shape[0]
    mains, pairs = _selection(states, config.selection_tol, p)
    repairs = _repair(mains, pairs, config.hierarchy)
    if per_dataset is None:
        per_dataset = [_selection([s], config.selection_tol, p) for s in states]
    dm, di = [], []
    for m_set, p_set in per_dataset:
        m_set = set(m_set)
        repairs += _repair(m_set, p_set, config.hierarchy)
        dm.append(frozenset(m_set))
        di.append(frozenset(p_set))
    grid = default_grid() if grid is None else grid
    return FitResult(
        variant=variant,
        states=tuple(states),
        selected_mains=frozenset(mains),
        selected_interactions=frozenset(pairs),
        t_star=tuple(int(t) for t in t_star),
        cv_curve=tuple(curves_cv),
        spline_means=tuple(means),
        curves=_curves(basis, states, means, grid),
        dataset_mains=tuple(dm),
        dataset_interactions=tuple(di),
        loss_path=loss_path,
        repairs=tuple(repairs),
        basis=basis,
        config=config,
        family=family,
        mask_path=mask_path or [],
    )


def _run_path(collection: StudyCollection, basis, config: TgdrConfig, T: int, keep_masks=False):
    if T < 0:
        raise ValueError("T must be nonnegative")
    units = [_Unit(d, config) for d in _designs(collection, basis)]
    losses = [sum(u.loss() for u in units)]
    masks = []
    for t in range(1, T + 1):
        mask = _iterate(units, config)
        if not all(u.finite() for u in units):
            raise NumericError(f"non-finite values at iteration {t}; reduce delta_step")
        losses.append(sum(u.loss() for u in units))
        if keep_masks:
            masks.append(mask)
    return units, np.asarray(losses), masks


def fit_path(collection: StudyCollection, basis, config: TgdrConfig, T: int,
             keep_masks: bool = False) -> FitResult:
    """Run ``T`` joint iterations from the zero state."""
    _require_standardized(collection)
    units, losses, masks = _run_path(collection, basis, config, T, keep_masks)
    return _assemble(
        config.variant, [u.state for u in units], [u.d.means for u in units], basis, config,
        collection.family, (T,), (), loss_path=losses, mask_path=masks,
    )


def _require_standardized(collection: StudyCollection) -> None:
    if not collection.standardized:
        raise DataError("collection must be standardized before fitting")


def fold_labels(n: int, folds: int, seed: int, dataset_id: int) -> np.ndarray:
    """Balanced fold label per row, seeded per dataset."""
    rng = np.random.default_rng([int(seed), int(dataset_id)])
    labels = np.empty(n, dtype=int)
    labels[rng.permutation(n)] = np.arange(n) % folds
    return labels


def _holdout_design(train: DatasetBundle, test: DatasetBundle, basis, family, means) -> Design:
    if family is ModelFamily.AFT:
        row_w = aft_row_weights(test.y, test.event)
    else:
        row_w = np.ones(test.n)
    return build_design(test, basis, family, means=means, row_w=row_w)


def cross_validate(collection: StudyCollection, basis, config: TgdrConfig,
                   dataset_ids=None) -> tuple[int, np.ndarray]:
    """Pick the iteration count by K-fold cross-validation.

    Returns ``(t_star, cv_curve)`` where ``cv_curve[t]`` is the held-out
    error summed over folds and datasets after ``t`` iterations
    (``t = 0`` included). The path stops early once the curve has not
    improved for ``config.patience`` iterations.
    """
    _require_standardized(collection)
    K = config.cv_folds
    ids = range(collection.M) if dataset_ids is None else dataset_ids
    labels = []
    for d, gid in zip(collection.datasets, ids):
        if d.n < K:
            raise DataError(f"dataset has {d.n} rows, fewer than {K} folds")
        lab = fold_labels(d.n, K, config.seed, gid)
        if np.bincount(lab, minlength=K).min() < 2:
            raise DataError("a cross-validation fold has fewer than 2 rows")
        labels.append(lab)
    fam = collection.family
    fold_units = []
    for k in range(K):
        units = []
        for d, lab in zip(collection.datasets, labels):
            tr, te = d.take(np.flatnonzero(lab != k)), d.take(np.flatnonzero(lab == k))
            design = build_design(tr, basis, fam)
            units.append(_Unit(design, config, _holdout_design(tr, te, basis, fam, design.means)))
        fold_units.append(units)
    curve = [sum(u.holdout_error() for units in fold_units for u in units)]
    best, best_t = curve[0], 0
    for t in range(1, config.t_max + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            for units in fold_units:
                _iterate(units, config)
            err = sum(u.holdout_error() for units in fold_units for u in units)
        if not (np.isfinite(err) and all(u.finite() for units in fold_units for u in units)):
            if best_t == 0 and t == 1:
                raise NumericError(f"non-finite values at iteration {t}; reduce delta_step")
            # a path that blows up past its optimum only ends the search
            log.warning("cross-validation path became non-finite at iteration %d; stopping", t)
            break
        curve.append(err)
        if err < best:
            best, best_t = err, t
        elif t - best_t >= config.patience:
            break
    curve = np.asarray(curve)
    return int(np.argmin(curve)), curve


def _single(collection: StudyCollection, m: int) -> StudyCollection:
    scaling = None if collection.scaling is None else (collection.scaling[m],)
    return collection.with_datasets([collection.datasets[m]], scaling=scaling)


def pool_collection(collection: StudyCollection) -> StudyCollection:
    """Stack all rows into a single dataset."""
    ds = collection.datasets
    event = None if ds[0].event is None else np.concatenate([d.event for d in ds])
    pooled = DatasetBundle(
        y=np.concatenate([d.y for d in ds]),
        X=np.vstack([d.X for d in ds]),
        E=np.vstack([d.E for d in ds]),
        event=event,
    )
    return collection.with_datasets([pooled], scaling=None)


def _cv_and_fit(collection, basis, config, dataset_ids=None):
    t_star, curve = cross_validate(collection, basis, config, dataset_ids)
    units, losses, _ = _run_path(collection, basis, config, t_star)
    return units, t_star, curve, losses


def fit_variant(collection: StudyCollection, config: TgdrConfig, basis=None) -> FitResult:
    """Cross-validate and refit one of the four estimators."""
    _require_standardized(collection)
    basis = config.basis() if basis is None else basis
    v = config.variant
    if v in (Variant.PROPOSED, Variant.PARAMETRIC):
        units, t_star, curve, losses = _cv_and_fit(collection, basis, config)
        states = [u.state for u in units]
        means = [u.d.means for u in units]
        return _assemble(v, states, means, basis, config, collection.family, (t_star,), (curve,),
                         loss_path=losses)
    if v is Variant.META:
        states, means, ts, curves = [], [], [], []
        for m in range(collection.M):
            units, t_star, curve, _ = _cv_and_fit(_single(collection, m), basis, config, [m])
            states.append(units[0].state)
            means.append(units[0].d.means)
            ts.append(t_star)
            curves.append(curve)
        return _assemble(v, states, means, basis, config, collection.family, ts, curves)
    pooled = pool_collection(collection)
    units, t_star, curve, losses = _cv_and_fit(pooled, basis, config)
    shared = units[0].state
    states = [shared.copy() for _ in range(collection.M)]
    means = [units[0].d.means for _ in range(collection.M)]
    sel = _selection([shared], config.selection_tol, collection.p)
    return _assemble(v, states, means, basis, config, collection.family, (t_star,), (curve,),
                     loss_path=losses, per_dataset=[sel] * collection.M)


def with_variant(config: TgdrConfig, variant) -> TgdrConfig:
    return replace(config, variant=Variant.parse(variant))
