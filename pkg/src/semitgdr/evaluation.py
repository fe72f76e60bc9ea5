"""Scoring: identification, estimation, prediction, stability and bands."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import stats

from .core_model import (
    DataError,
    DatasetBundle,
    InteractionIndex,
    ModelFamily,
    StudyCollection,
    apply_collection_scaling,
    n_pairs,
    standardize,
)
from .objectives import aft_row_weights, build_design, fitted_values
from .splines import FittedCurve, default_grid, env_design, evaluate_curve
from .tgdr_engine import FitResult, TgdrConfig, Variant, fit_path, fit_variant, pool_collection

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoreReport:
    tpr_main: float | None
    fpr_main: float
    tpr_int: float | None
    fpr_int: float
    mse_main: float
    mse_int: float
    rmse_spline: float
    pe: float
    rmse_curve: float = float("nan")
    logrank: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def tpr_fpr(selected, truth, universe: int):
    """True and false positive rates; TPR is ``None`` for an empty truth."""
    selected, truth = set(selected), set(truth)
    negatives = universe - len(truth)
    if negatives < 0:
        raise ValueError("truth larger than the universe")
    tpr = None if not truth else len(selected & truth) / len(truth)
    fpr = len(selected - truth) / negatives if negatives else 0.0
    return tpr, fpr


def mse_coefficients(beta_hat, gamma_hat, beta_true, gamma_true, n_total: int):
    """``(1/n) sum_m ||beta - beta_hat||^2`` and the same for interactions."""
    db = np.asarray(beta_true, dtype=float) - np.asarray(beta_hat, dtype=float)
    dg = np.asarray(gamma_true, dtype=float) - np.asarray(gamma_hat, dtype=float)
    return float(np.sum(db * db) / n_total), float(np.sum(dg * dg) / n_total)


def rmse_spline(Z_hat, Z_true, n_total: int) -> float:
    total = sum(float(np.sum((np.asarray(a) - np.asarray(b)) ** 2)) for a, b in zip(Z_hat, Z_true))
    return float(np.sqrt(total / n_total))


def prediction_error(Y, Y_hat, n_total: int, weights=None) -> float:
    """``(1/n) sum_m ||Y - Y_hat||^2``; optional per-row weights per dataset."""
    total = 0.0
    for m, (y, yh) in enumerate(zip(Y, Y_hat)):
        y, yh = np.asarray(y, dtype=float), np.asarray(yh, dtype=float)
        if y.shape != yh.shape:
            raise ValueError("response and prediction lengths differ")
        r2 = (y - yh) ** 2
        total += float(np.sum(r2 if weights is None else np.asarray(weights[m]) * r2))
    return total / n_total


def logrank_score(pred, times, delta) -> float:
    """Two-sample log-rank chi-square for a median split of the predictions."""
    pred = np.asarray(pred, dtype=float)
    times = np.asarray(times, dtype=float)
    delta = np.asarray(delta).astype(int)
    group = pred > np.median(pred)
    if group.all() or not group.any():
        raise ValueError("median split leaves an empty group")
    event_times = np.unique(times[delta == 1])
    o_minus_e, var = 0.0, 0.0
    for s in event_times:
        at_risk = times >= s
        n = at_risk.sum()
        n1 = (at_risk & group).sum()
        died = (times == s) & (delta == 1)
        d = died.sum()
        d1 = (died & group).sum()
        o_minus_e += d1 - d * n1 / n
        if n > 1:
            var += d * (n1 / n) * (1 - n1 / n) * (n - d) / (n - 1)
    return float(o_minus_e**2 / var) if var > 0 else 0.0


def ooi(selections, reference=None):
    """Selection frequency of every effect seen in ``selections``.

    Returns ``(table, summary)``; ``summary`` is the mean frequency over
    ``reference`` (the effects chosen on the full data) or over the table.
    """
    selections = [set(s) for s in selections]
    if len(selections) < 1:
        raise ValueError("need at least one resampled selection")
    counts: dict = {}
    for s in selections:
        for e in s:
            counts[e] = counts.get(e, 0) + 1
    R = len(selections)
    table = {e: c / R for e, c in sorted(counts.items(), key=lambda kv: str(kv[0]))}
    keys = list(table) if reference is None else list(reference)
    summary = float(np.mean([table.get(e, 0.0) for e in keys])) if keys else float("nan")
    return table, summary


# ---------------------------------------------------------------- estimates


def raw_scale_coefficients(state, scaling):
    """Map coefficients fitted on standardized genes back to raw gene units."""
    s, mu = scaling.x_scale, scaling.x_mean
    p = s.shape[0]
    idx = InteractionIndex(p)
    gamma = state.gamma / (s[idx.rows] * s[idx.cols])
    G = idx.to_matrix(gamma)
    C = G + G.T
    beta = state.beta / s - C @ mu
    return beta, gamma


def truth_spline_coefficients(truth, m: int, bundle: DatasetBundle, scaling, basis, means):
    """Minimum-norm projection of the centered true curves onto the fitted basis."""
    E_raw = bundle.E * scaling.e_range + scaling.e_min
    eta = truth.env_values(m, E_raw)
    B, _ = env_design(basis, bundle.E, means)
    D = means.shape[1]
    Z = np.zeros((eta.shape[1], D))
    for l in range(eta.shape[1]):
        target = eta[:, l] - eta[:, l].mean()
        Z[l] = np.linalg.lstsq(B[:, l * D:(l + 1) * D], target, rcond=None)[0]
    return Z


def _curve_sq_error(truth, m, bundle, scaling, basis, means, Z) -> float:
    E_raw = bundle.E * scaling.e_range + scaling.e_min
    eta = truth.env_values(m, E_raw)
    B, _ = env_design(basis, bundle.E, means)
    D = means.shape[1]
    total = 0.0
    for l in range(eta.shape[1]):
        fit = B[:, l * D:(l + 1) * D] @ Z[l]
        diff = (fit - fit.mean()) - (eta[:, l] - eta[:, l].mean())
        total += float(diff @ diff)
    return total


def test_predictions(fit: FitResult, test_std: StudyCollection):
    preds = []
    for state, mu, d in zip(fit.states, fit.spline_means, test_std.datasets):
        design = build_design(d, fit.basis, "linear", means=mu)
        preds.append(fitted_values(state, design))
    return preds


def fit_prediction_error(fit: FitResult, test_std: StudyCollection) -> float:
    preds = test_predictions(fit, test_std)
    Y = [d.y for d in test_std.datasets]
    n = test_std.n_total
    if test_std.family is ModelFamily.AFT:
        w = [aft_row_weights(d.y, d.event) for d in test_std.datasets]
        return prediction_error(Y, preds, n, weights=w)
    return prediction_error(Y, preds, n)


def identification(fit: FitResult, truth):
    p = fit.states[0].beta.shape[0]
    if fit.variant is Variant.META:
        rates = [
            tpr_fpr(sm, tm, p) + tpr_fpr(si, ti, n_pairs(p))
            for sm, si, tm, ti in zip(
                fit.dataset_mains, fit.dataset_interactions, truth.main_support, truth.interaction_support
            )
        ]
        return tuple(_mean_or_none([r[i] for r in rates]) for i in range(4))
    return tpr_fpr(fit.selected_mains, truth.union_mains(), p) + tpr_fpr(
        fit.selected_interactions, truth.union_interactions(), n_pairs(p)
    )


def _mean_or_none(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def score_fit(fit: FitResult, truth, train_std: StudyCollection, test_std: StudyCollection) -> ScoreReport:
    """Score a fit on its training collection (estimation) and a test collection (prediction)."""
    tpr_m, fpr_m, tpr_i, fpr_i = identification(fit, truth)
    betas, gammas, Zt, sq = [], [], [], 0.0
    for m, (state, mu, d, sc) in enumerate(
        zip(fit.states, fit.spline_means, train_std.datasets, train_std.scaling)
    ):
        b, g = raw_scale_coefficients(state, sc)
        betas.append(b)
        gammas.append(g)
        Zt.append(truth_spline_coefficients(truth, m, d, sc, fit.basis, mu))
        sq += _curve_sq_error(truth, m, d, sc, fit.basis, mu, state.Z)
    n = train_std.n_total
    mse_m, mse_i = mse_coefficients(betas, gammas, truth.beta, truth.gamma, n)
    rmse = rmse_spline([s.Z for s in fit.states], Zt, n)
    pe = fit_prediction_error(fit, test_std)
    lr = None
    if test_std.family is ModelFamily.AFT:
        preds = np.concatenate(test_predictions(fit, test_std))
        times = np.concatenate([d.y for d in test_std.datasets])
        events = np.concatenate([d.event for d in test_std.datasets])
        lr = logrank_score(preds, times, events)
    return ScoreReport(tpr_m, fpr_m, tpr_i, fpr_i, mse_m, mse_i, rmse, pe, float(np.sqrt(sq / n)), lr)


def evaluate_replicate(train_raw: StudyCollection, test_raw: StudyCollection, truth, config: TgdrConfig):
    """Standardize, fit one variant, and score it."""
    train = standardize(train_raw)
    test = apply_collection_scaling(test_raw, train)
    fit = fit_variant(train, config)
    return fit, score_fit(fit, truth, train, test)


# ------------------------------------------------------------- resampling


def refit(collection: StudyCollection, config: TgdrConfig, t_star, basis=None) -> FitResult:
    """Refit a variant at fixed iteration counts (no cross-validation)."""
    basis = config.basis() if basis is None else basis
    t_star = tuple(t_star)
    if config.variant is Variant.META:
        parts = [
            fit_path(collection.with_datasets([d], scaling=None), basis, config, t)
            for d, t in zip(collection.datasets, t_star)
        ]
        states = [p.states[0] for p in parts]
        means = [p.spline_means[0] for p in parts]
        return _merge(config, basis, collection, states, means, t_star)
    if config.variant is Variant.POOL:
        res = fit_path(pool_collection(collection), basis, config, t_star[0])
        M = collection.M
        return _merge(config, basis, collection, [res.states[0].copy() for _ in range(M)],
                      [res.spline_means[0]] * M, t_star)
    return fit_path(collection, basis, config, t_star[0])


def _merge(config, basis, collection, states, means, t_star):
    from .tgdr_engine import _assemble, _selection

    per = None
    if config.variant is Variant.POOL:
        per = [_selection([states[0]], config.selection_tol, collection.p)] * collection.M
    return _assemble(config.variant, states, means, basis, config, collection.family, t_star, (),
                     per_dataset=per)


def _has_constant_column(bundle: DatasetBundle) -> bool:
    return bool(np.any(np.ptp(bundle.E, axis=0) == 0) or np.any(np.ptp(bundle.X, axis=0) == 0))


def bootstrap_bands(collection: StudyCollection, fit: FitResult, B: int = 50, grid=None,
                    seed: int = 0, max_redraw: int = 100):
    """Pointwise 2.5%/97.5% bootstrap bands for every fitted curve.

    Rows are resampled with replacement within each dataset and the model
    is refit at the original iteration counts. Returns
    ``(curves, skipped)`` with ``curves[m][l]`` a :class:`FittedCurve`.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    config = fit.config
    rng = np.random.default_rng(seed)
    draws = [[[] for _ in range(collection.q)] for _ in range(collection.M)]
    skipped = 0
    for _ in range(B):
        for _attempt in range(max_redraw):
            parts = [d.take(rng.integers(0, d.n, d.n)) for d in collection.datasets]
            if not any(_has_constant_column(p) for p in parts):
                break
            skipped += 1
            log.info("bootstrap resample with a constant column redrawn")
        else:
            raise DataError("could not draw a bootstrap resample without constant columns")
        res = refit(collection.with_datasets(parts), config, fit.t_star, fit.basis)
        for m, (state, mu) in enumerate(zip(res.states, res.spline_means)):
            for l in range(collection.q):
                draws[m][l].append(evaluate_curve(fit.basis, state.Z[l], grid, mu[l]).values)
    curves = []
    for m in range(collection.M):
        row = []
        for l in range(collection.q):
            point = evaluate_curve(fit.basis, fit.states[m].Z[l], grid, fit.spline_means[m][l]).values
            arr = np.asarray(draws[m][l])
            lo, hi = np.quantile(arr, [0.025, 0.975], axis=0)
            row.append(FittedCurve(grid=grid, values=point, lower=lo, upper=hi, mean=arr.mean(axis=0)))
        curves.append(tuple(row))
    return tuple(curves), skipped


def split_rows(n: int, rng: np.random.Generator, train_fraction: float = 2 / 3):
    perm = rng.permutation(n)
    cut = int(round(train_fraction * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def resample_stability(raw: StudyCollection, config: TgdrConfig, reps: int = 50, seed: int = 0):
    """Repeated 2:1 train/test splits of every dataset.

    Each split is standardized on its training part, fitted with
    cross-validation, and scored on the test part. Returns
    ``(selections, pes, logranks)``; selections mix gene indices and
    index pairs.
    """
    seqs = np.random.SeedSequence(seed).spawn(reps)
    selections, pes, lrs = [], [], []
    for ss in seqs:
        rng = np.random.default_rng(ss)
        tr, te = [], []
        for d in raw.datasets:
            a, b = split_rows(d.n, rng)
            tr.append(d.take(a))
            te.append(d.take(b))
        train = standardize(raw.with_datasets(tr))
        test = apply_collection_scaling(raw.with_datasets(te), train)
        fit = fit_variant(train, config)
        selections.append(set(fit.selected_mains) | set(fit.selected_interactions))
        pes.append(fit_prediction_error(fit, test))
        if raw.family is ModelFamily.AFT:
            preds = np.concatenate(test_predictions(fit, test))
            times = np.concatenate([d.y for d in test.datasets])
            events = np.concatenate([d.event for d in test.datasets])
            if np.ptp(preds) == 0:
                # nothing selected on this split: no grouping to score
                log.info("constant predictions on a resample; log-rank recorded as nan")
                lrs.append(float("nan"))
            else:
                lrs.append(logrank_score(preds, times, events))
    return selections, np.asarray(pes), np.asarray(lrs)


# --------------------------------------------------------------- screening


def _slope_logp(x, y, w=None) -> float:
    """Log two-sided p-value of the slope in a (weighted) simple regression."""
    if w is None:
        w = np.ones_like(y)
    keep = w > 0
    x, y, w = x[keep], y[keep], w[keep]
    df = x.shape[0] - 2
    if df < 1:
        return 0.0
    sw = w.sum()
    xm, ym = (w @ x) / sw, (w @ y) / sw
    xc, yc = x - xm, y - ym
    sxx = w @ (xc * xc)
    if sxx <= 0:
        return 0.0
    slope = (w @ (xc * yc)) / sxx
    resid = yc - slope * xc
    # weights normalized to the number of kept rows for the variance
    wn = w * (x.shape[0] / sw)
    s2 = (wn @ (resid * resid)) / df
    se2 = s2 / (sxx * x.shape[0] / sw)
    with np.errstate(divide="ignore", invalid="ignore"):
        tval = abs(slope) / np.sqrt(se2) if se2 > 0 else np.inf
    return float(np.log(2.0) + stats.t.logsf(tval, df))


def screen_scores(raw: StudyCollection) -> np.ndarray:
    """Fisher-combined log p-value per gene (smaller = stronger)."""
    M, p = raw.M, raw.p
    logp = np.zeros((M, p))
    for m, d in enumerate(raw.datasets):
        if raw.family is ModelFamily.AFT:
            if np.any(d.y <= 0):
                raise DataError(f"dataset {m + 1}: survival times must be positive")
            y = np.log(d.y)
            w = aft_row_weights(y, d.event) / d.n
        else:
            y, w = d.y, None
        for j in range(p):
            logp[m, j] = _slope_logp(d.X[:, j], y, w)
    fisher = -2.0 * logp.sum(axis=0)
    return stats.chi2.logsf(fisher, 2 * M)


def marginal_screen(raw: StudyCollection, keep: int = 300):
    """Keep the ``keep`` genes with the smallest combined marginal p-values.

    Returns ``(reduced collection, kept)`` where ``kept`` lists 0-based gene
    indices in rank order; the reduced collection keeps the original column
    order.
    """
    p = raw.p
    if keep > p:
        warnings.warn(f"keep={keep} exceeds p={p}; keeping all genes", stacklevel=2)
        keep = p
    if keep < 1:
        raise ValueError("keep must be at least 1")
    score = screen_scores(raw)
    order = np.lexsort((np.arange(p), score))
    kept = order[:keep]
    cols = np.sort(kept)
    datasets = [DatasetBundle(y=d.y, X=d.X[:, cols], E=d.E, event=d.event) for d in raw.datasets]
    names = tuple(raw.gene_names[j] for j in cols)
    return replace(raw, datasets=tuple(datasets), gene_names=names), [int(j) for j in kept]
