from dataclasses import replace

import numpy as np
import pytest

from semitgdr.core_model import CoefficientState, DataError, InteractionIndex, standardize
from semitgdr.objectives import GradientBlock, linear_gradient
from semitgdr.simulation import SimScenario, generate_collection
from semitgdr.splines import SplineBasis
from semitgdr.tgdr_engine import (
    SelectionMask,
    TgdrConfig,
    Variant,
    compute_masks,
    cross_validate,
    fit_path,
    fit_variant,
    fold_labels,
    tgdr_step,
)

from conftest import random_collection


def blocks_from(fs, gs, q=1, D=4):
    return [GradientBlock(np.asarray(f, float), np.asarray(g, float), np.zeros((q, D))) for f, g in zip(fs, gs)]


def test_mask_example_with_closure():
    # aggregated |f| = (10, 5, 1), aggregated |g| = (4, 8, 2) over pairs (1,2), (1,3), (2,3)
    blocks = blocks_from([[6, 3, 1], [4, -2, 0]], [[4, 4, 2], [0, -4, 0]])
    m = compute_masks(blocks, 0.9)
    np.testing.assert_array_equal(m.f_tilde, [1, 0, 1])
    np.testing.assert_array_equal(m.g_tilde, [0, 1, 0])
    raw = compute_masks(blocks, 0.9, hierarchy=False)
    np.testing.assert_array_equal(raw.f_tilde, [1, 0, 0])


def test_mask_all_zero():
    m = compute_masks(blocks_from([[0, 0, 0]], [[0, 0, 0]]), 0.9)
    assert not m.f_tilde.any() and not m.g_tilde.any()


def test_mask_tau_zero_selects_all_positive():
    m = compute_masks(blocks_from([[0.0, 1e-9, 3.0]], [[0.0, 2.0, 1e-12]]), 0.0, hierarchy=False)
    np.testing.assert_array_equal(m.f_tilde, [0, 1, 1])
    np.testing.assert_array_equal(m.g_tilde, [0, 1, 1])


def test_mask_strict_inequality_at_tie():
    m = compute_masks(blocks_from([[9.0, 10.0]], [[1.0]]), 0.9, hierarchy=False)
    np.testing.assert_array_equal(m.f_tilde, [0, 1])


def test_mask_shape_mismatch():
    with pytest.raises(ValueError):
        compute_masks(blocks_from([[1, 2, 3], [1, 2]], [[1, 1, 1], [1]]), 0.9)


def test_config_validation():
    with pytest.raises(ValueError):
        TgdrConfig(tau=1.5)
    with pytest.raises(ValueError):
        TgdrConfig(delta_step=0)
    with pytest.raises(ValueError):
        TgdrConfig(cv_folds=1)
    assert TgdrConfig(variant="meta").variant is Variant.META


def _literal(config):
    return replace(config, spline_update="gradient", step_normalization="none", step_cap=False)


def test_single_step_from_zero(small_linear):
    basis = SplineBasis(5)
    cfg = _literal(TgdrConfig(delta_step=0.01))
    zeros = [CoefficientState.zeros(small_linear.p, small_linear.q, 5) for _ in range(small_linear.M)]
    grads = [linear_gradient(s, d, basis) for s, d in zip(zeros, small_linear.datasets)]
    mask = compute_masks(grads, cfg.tau)
    new = tgdr_step(zeros, small_linear, basis, cfg, mask)
    for s, g, d in zip(new, grads, small_linear.datasets):
        step = cfg.delta_step / d.n
        np.testing.assert_allclose(s.beta, step * mask.f_tilde * g.f, rtol=1e-14, atol=0)
        np.testing.assert_allclose(s.gamma, step * mask.g_tilde * g.g, rtol=1e-14, atol=0)
        np.testing.assert_allclose(s.Z, step * g.h, rtol=1e-14, atol=0)
    summed = _literal(TgdrConfig(delta_step=0.001, loss_scale="sum"))
    new = tgdr_step(zeros, small_linear, basis, summed, mask)
    np.testing.assert_allclose(new[0].beta, 0.001 * mask.f_tilde * grads[0].f, rtol=1e-14)


def test_masked_out_coordinates_stay_zero(small_linear):
    basis = SplineBasis(5)
    p = small_linear.p
    mask = SelectionMask(np.zeros(p, np.int8), np.zeros(p * (p - 1) // 2, np.int8))
    zeros = [CoefficientState.zeros(p, small_linear.q, 5) for _ in range(small_linear.M)]
    for cfg in (TgdrConfig(), _literal(TgdrConfig())):
        for s in tgdr_step(zeros, small_linear, basis, cfg, mask):
            assert np.all(s.beta == 0) and np.all(s.gamma == 0)


def test_fit_path_zero_iterations(small_linear):
    res = fit_path(small_linear, SplineBasis(5), TgdrConfig(), 0)
    assert not res.selected_mains and not res.selected_interactions
    for s in res.states:
        assert not s.beta.any() and not s.gamma.any() and not s.Z.any()
    for row in res.curves:
        for c in row:
            assert not c.values.any()


def test_fit_path_requires_standardized():
    with pytest.raises(DataError):
        fit_path(random_collection(0), SplineBasis(5), TgdrConfig(), 3)


@pytest.fixture(scope="module")
def case_one():
    coll, truth = generate_collection(SimScenario(case="I", seed=11))
    return standardize(coll), truth


def test_loss_non_increasing_case_one(case_one):
    coll, _ = case_one
    res = fit_path(coll, SplineBasis(7), TgdrConfig(), 60)
    assert np.all(np.diff(res.loss_path) <= 1e-9 * res.loss_path[:-1])


def test_support_within_masks_and_shared(case_one):
    coll, _ = case_one
    res = fit_path(coll, SplineBasis(7), TgdrConfig(), 25, keep_masks=True)
    f_union = np.zeros(coll.p, bool)
    g_union = np.zeros(len(InteractionIndex(coll.p)), bool)
    idx = InteractionIndex(coll.p)
    for m in res.mask_path:
        f_union |= m.f_tilde.astype(bool)
        g_union |= m.g_tilde.astype(bool)
        # each mask is hierarchy closed
        on = np.flatnonzero(m.g_tilde)
        assert np.all(m.f_tilde[idx.rows[on]] == 1) and np.all(m.f_tilde[idx.cols[on]] == 1)
    for s in res.states:
        assert np.all((s.beta != 0) <= f_union)
        assert np.all((s.gamma != 0) <= g_union)
    supports = [frozenset(np.flatnonzero(s.beta)) for s in res.states]
    assert len(set(supports)) == 1


def test_selection_hierarchy_closed(case_one):
    coll, _ = case_one
    res = fit_path(coll, SplineBasis(7), TgdrConfig(), 30)
    for j, k in res.selected_interactions:
        assert j in res.selected_mains and k in res.selected_mains


def test_no_hierarchy_flag_allows_orphans():
    blocks = blocks_from([[10, 0, 0]], [[0, 0, 5]])
    m = compute_masks(blocks, 0.9, hierarchy=False)
    np.testing.assert_array_equal(m.f_tilde, [1, 0, 0])
    np.testing.assert_array_equal(m.g_tilde, [0, 0, 1])


def test_fold_labels_balanced_and_seeded():
    a = fold_labels(23, 5, 3, 0)
    assert sorted(np.bincount(a)) == [4, 4, 5, 5, 5]
    np.testing.assert_array_equal(a, fold_labels(23, 5, 3, 0))
    assert not np.array_equal(a, fold_labels(23, 5, 3, 1))


def test_cross_validate_deterministic(small_linear):
    cfg = TgdrConfig(t_max=60, patience=20)
    basis = SplineBasis(5)
    t1, c1 = cross_validate(small_linear, basis, cfg)
    t2, c2 = cross_validate(small_linear, basis, cfg)
    assert t1 == t2
    np.testing.assert_array_equal(c1, c2)
    assert c1[t1] == c1.min()
    assert t1 == int(np.flatnonzero(c1 == c1.min())[0])


def test_cross_validate_small_fold_error():
    coll = standardize(random_collection(0, sizes=(8, 40)))
    with pytest.raises(DataError):
        cross_validate(coll, SplineBasis(5), TgdrConfig(cv_folds=5))


def test_pure_noise_stops_early():
    hits = 0
    for seed in range(10):
        coll, _ = generate_collection(SimScenario(case="I", seed=seed, p=20), noise_sd=1.0)
        rng = np.random.default_rng(seed)
        # discard the signal: responses are pure noise
        noise = [d.__class__(y=rng.standard_normal(d.n), X=d.X, E=d.E) for d in coll.datasets]
        coll = standardize(coll.with_datasets(noise))
        cfg = TgdrConfig()
        t, _ = cross_validate(coll, SplineBasis(7), cfg)
        hits += t <= 0.05 * cfg.t_max
    assert hits >= 9


def test_fit_variant_deterministic(small_linear):
    cfg = TgdrConfig(t_max=40, patience=10, spline_D=5)
    a = fit_variant(small_linear, cfg)
    b = fit_variant(small_linear, cfg)
    assert a.t_star == b.t_star
    for s, t in zip(a.states, b.states):
        np.testing.assert_array_equal(s.beta, t.beta)
        np.testing.assert_array_equal(s.gamma, t.gamma)
        np.testing.assert_array_equal(s.Z, t.Z)


@pytest.mark.parametrize("aft", [False, True])
def test_single_dataset_variants_identical(aft):
    coll = standardize(random_collection(2, sizes=(60,), aft=aft))
    cfg = TgdrConfig(t_max=80, patience=20, spline_D=5)
    fits = [fit_variant(coll, replace(cfg, variant=v)) for v in ("proposed", "meta", "pool")]
    ref = fits[0]
    for f in fits[1:]:
        assert f.t_star == ref.t_star
        np.testing.assert_array_equal(f.cv_curve[0], ref.cv_curve[0])
        np.testing.assert_array_equal(f.states[0].beta, ref.states[0].beta)
        np.testing.assert_array_equal(f.states[0].gamma, ref.states[0].gamma)
        np.testing.assert_array_equal(f.states[0].Z, ref.states[0].Z)
        assert f.selected_mains == ref.selected_mains
        assert f.selected_interactions == ref.selected_interactions


def test_meta_reports_per_dataset(small_linear):
    res = fit_variant(small_linear, TgdrConfig(variant="meta", t_max=40, patience=10, spline_D=5))
    assert len(res.t_star) == small_linear.M
    assert len(res.dataset_mains) == small_linear.M
    assert res.selected_mains == frozenset().union(*res.dataset_mains)


def test_pool_shares_coefficients(small_linear):
    res = fit_variant(small_linear, TgdrConfig(variant="pool", t_max=40, patience=10, spline_D=5))
    np.testing.assert_array_equal(res.states[0].beta, res.states[1].beta)


def test_parametric_uses_linear_environment(small_linear):
    res = fit_variant(small_linear, TgdrConfig(variant="parametric", t_max=40, patience=10))
    assert res.states[0].Z.shape == (small_linear.q, 1)


def test_aft_fit_runs(small_aft):
    res = fit_variant(small_aft, TgdrConfig(t_max=40, patience=10, spline_D=5))
    assert np.all(np.isfinite(res.cv_curve[0]))
