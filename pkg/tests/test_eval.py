import csv
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from biodistill.encoder import Encoder, EncoderConfig
from biodistill.errors import ConfigError, NumericError
from biodistill.evaluation import (
    DEFAULT_ALPHA_GRID,
    SupervisedConfig,
    aggregate_by_participant,
    bootstrap_retrieval,
    cv_select_alpha,
    embed_records,
    grouped_kfold,
    jacobi_svd,
    match_ranks,
    probe,
    procrustes_align,
    regression_metrics,
    retrieval,
    ridge_fit,
    roc_auc,
    stratified_label_subsample,
    supervised_baseline,
)
from biodistill.synth import build_dataset
from biodistill.tensor.checkpoint import load_checkpoint


def seeded_rng(*salt):
    return np.random.default_rng(np.random.SeedSequence(list(salt)))


@pytest.fixture(scope="module")
def small_store(tmp_path_factory):
    root = tmp_path_factory.mktemp("eval_small") / "ds"
    return build_dataset(root, 10, 4, 5)


@pytest.fixture(scope="module")
def desk_store(tmp_path_factory):
    root = tmp_path_factory.mktemp("eval_desk") / "ds"
    return build_dataset(root, 50, 4, 5)


def desk_encoder(channels=3, seed=7):
    cfg = EncoderConfig(
        token_dim=32, n_layers=2, n_heads=4, mlp_hidden=64,
        input_channels=channels, segment_s=20,
    )
    return Encoder(cfg, seeded_rng(seed))


# -- metrics ------------------------------------------------------------


def test_perfect_predictions():
    m = regression_metrics([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert m == {"mae": 0.0, "rmse": 0.0, "pearson_r": 1.0}


def test_regression_hand_case():
    m = regression_metrics([0.0, 1.0, 2.0, 3.0], [1.0, 1.0, 2.0, 2.0])
    assert m["mae"] == pytest.approx(0.5, rel=1e-12)
    assert m["rmse"] == pytest.approx(np.sqrt(0.5), rel=1e-12)
    assert m["pearson_r"] == pytest.approx(2.0 / np.sqrt(5.0), rel=1e-12)


def test_regression_rejects_bad_inputs():
    with pytest.raises(NumericError, match="constant"):
        regression_metrics([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(ConfigError):
        regression_metrics([1.0, 2.0], [1.0])
    with pytest.raises(ConfigError):
        regression_metrics([], [])
    with pytest.raises(NumericError):
        regression_metrics([1.0, np.nan], [1.0, 2.0])


def test_auc_separable_and_reversed():
    assert roc_auc([1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1]) == 1.0
    assert roc_auc([0, 0, 1, 1], [0.9, 0.8, 0.2, 0.1]) == 0.0


def test_auc_hand_cases():
    # 2 of 4 pos-neg pairs concordant
    assert roc_auc([1, 0, 0, 1], [0.9, 0.2, 0.8, 0.1]) == pytest.approx(0.5)
    # one tied pos-neg pair contributes 1/2: (0.5 + 1 + 1 + 1) / 4
    assert roc_auc([1, 0, 0, 1], [0.5, 0.5, 0.2, 0.8]) == pytest.approx(0.875)


def test_auc_rejects_degenerate_labels():
    with pytest.raises(ConfigError, match="class"):
        roc_auc([1, 1, 1], [0.1, 0.2, 0.3])
    with pytest.raises(ConfigError, match="binary"):
        roc_auc([0, 1, 2], [0.1, 0.2, 0.3])


@given(st.integers(0, 500))
def test_auc_of_negated_scores_complements(seed):
    rng = seeded_rng(101, seed)
    n = int(rng.integers(4, 30))
    labels = rng.integers(0, 2, size=n)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    scores = rng.integers(0, 5, size=n).astype(float)  # ints force ties
    assert roc_auc(labels, scores) + roc_auc(labels, -scores) == pytest.approx(1.0)


def test_auc_invariant_under_monotone_transform():
    rng = seeded_rng(102)
    labels = rng.integers(0, 2, size=40)
    labels[:2] = [0, 1]
    scores = rng.normal(size=40)
    assert roc_auc(labels, scores) == pytest.approx(
        roc_auc(labels, np.exp(scores)), rel=1e-12
    )


# -- retrieval ----------------------------------------------------------


def test_self_retrieval_is_perfect():
    emb = np.eye(5) + 0.01 * seeded_rng(1).normal(size=(5, 5))
    report = retrieval(emb, emb)
    assert report.top1_percent == 100.0
    assert report.mean_rank == 1.0
    assert report.n_pools == 1
    assert report.top1_std == 0.0 and report.mean_rank_std == 0.0


def test_orthogonal_pool_gives_rank_one():
    candidates = np.eye(4)
    np.testing.assert_array_equal(match_ranks(np.eye(4), candidates), [1, 1, 1, 1])


def test_tied_scores_break_toward_lower_index():
    e = np.eye(3)
    candidates = np.stack([e[0], e[1], e[2], e[1]])  # rows 1 and 3 identical
    ranks = match_ranks(candidates, candidates)
    np.testing.assert_array_equal(ranks, [1, 1, 1, 2])


@given(st.integers(0, 200))
def test_rank_invariant_to_positive_row_rescale(seed):
    rng = seeded_rng(103, seed)
    n = int(rng.integers(3, 12))
    q = rng.normal(size=(n, 6))
    c = rng.normal(size=(n, 6))
    base = match_ranks(q, c)
    sq = rng.uniform(0.1, 10.0, size=(n, 1))
    sc = rng.uniform(0.1, 10.0, size=(n, 1))
    np.testing.assert_array_equal(match_ranks(q * sq, c * sc), base)


def test_retrieval_rejects_degenerate_inputs():
    good = np.eye(3)
    with pytest.raises(NumericError, match="zero norm"):
        match_ranks(np.array([[1.0, 0.0], [0.0, 0.0]]), np.eye(2))
    with pytest.raises(ConfigError):
        match_ranks(good, np.eye(4))
    with pytest.raises(ConfigError):
        match_ranks(good[:1], good[:1])


def test_random_embeddings_sit_at_chance():
    # chance mean rank for a pool of 64 is (64+1)/2 = 32.5
    means = []
    for s in range(50):
        rng = seeded_rng(3, s)
        q = rng.normal(size=(64, 16))
        c = rng.normal(size=(64, 16))
        means.append(float(match_ranks(q, c).mean()))
    assert abs(np.mean(means) - 32.5) / 32.5 < 0.05


def test_bootstrap_pools_are_deterministic_and_consistent():
    rng = seeded_rng(104)
    pids = np.repeat(np.arange(12), 4)
    q = rng.normal(size=(48, 8))
    c = q + 0.1 * rng.normal(size=(48, 8))
    a = bootstrap_retrieval(q, c, pids, pool_participants=5, n_pools=20, seed=9)
    b = bootstrap_retrieval(q, c, pids, pool_participants=5, n_pools=20, seed=9)
    assert a == b
    assert a.n_pools == 20
    assert a.pool_size == 5 * 4
    assert a.top1_percent == pytest.approx(np.mean(a.pool_top1), rel=1e-12)
    assert a.mean_rank == pytest.approx(np.mean(a.pool_mean_rank), rel=1e-12)
    # the summary is a plain mean, so pool order cannot matter
    assert np.mean(a.pool_top1[::-1]) == pytest.approx(a.top1_percent, rel=1e-12)


def test_bootstrap_single_pool_has_zero_std():
    rng = seeded_rng(105)
    pids = np.repeat(np.arange(6), 3)
    q = rng.normal(size=(18, 4))
    report = bootstrap_retrieval(q, q, pids, pool_participants=4, n_pools=1, seed=0)
    assert report.top1_std == 0.0
    assert report.mean_rank_std == 0.0


def test_bootstrap_validates_pool_size():
    q = np.eye(6)
    pids = np.repeat(np.arange(3), 2)
    with pytest.raises(ConfigError, match="pool_participants"):
        bootstrap_retrieval(q, q, pids, pool_participants=4, n_pools=2)
    with pytest.raises(ConfigError, match="n_pools"):
        bootstrap_retrieval(q, q, pids, pool_participants=2, n_pools=0)


# -- procrustes ---------------------------------------------------------


def test_identity_alignment():
    x = seeded_rng(5).normal(size=(40, 6))
    res = procrustes_align(x, x)
    assert res.scale == pytest.approx(1.0, rel=1e-9)
    np.testing.assert_allclose(res.rotation, np.eye(6), atol=1e-9)
    np.testing.assert_allclose(res.translation, 0.0, atol=1e-9)
    assert res.residual < 1e-9


def test_construct_then_recover():
    rng = seeded_rng(6)
    src = rng.normal(size=(50, 8))
    basis, _ = np.linalg.qr(rng.normal(size=(8, 8)))
    shift = rng.normal(size=8)
    tgt = 2.0 * src @ basis + shift
    res = procrustes_align(src, tgt)
    assert res.scale == pytest.approx(2.0, rel=1e-9)
    np.testing.assert_allclose(res.rotation, basis, atol=1e-9)
    np.testing.assert_allclose(res.translation, shift, atol=1e-9)
    assert res.residual < 1e-6
    np.testing.assert_allclose(res.transform(src), tgt, atol=1e-9)


def test_alignment_beats_identity_and_grows_with_family():
    for s in range(10):
        rng = seeded_rng(7, s)
        x = rng.normal(size=(30, 5))
        y = rng.normal(size=(30, 5))
        res = procrustes_align(x, y)
        xc = x - x.mean(0)
        yc = y - y.mean(0)
        translation_only = np.linalg.norm(xc - yc)
        rotation_too = np.linalg.norm(xc @ res.rotation - yc)
        assert res.residual <= np.linalg.norm(x - y) + 1e-9
        assert rotation_too <= translation_only + 1e-9
        assert res.residual <= rotation_too + 1e-9


def test_rank_deficient_alignment_is_flagged():
    rng = seeded_rng(8)
    src = rng.normal(size=(30, 5))
    src[:, -1] = 2.0  # no variance in the last dimension
    tgt = rng.normal(size=(30, 5))
    tgt[:, -1] = -1.0
    res = procrustes_align(src, tgt)
    assert res.degenerate_dims >= 1
    assert np.isfinite(res.residual)
    np.testing.assert_allclose(
        res.rotation.T @ res.rotation, np.eye(5), atol=1e-9
    )


def test_jacobi_matches_reference_svd():
    rng = seeded_rng(9)
    for trial in range(30):
        d = int(rng.integers(2, 33))
        m = rng.normal(size=(d, d))
        if trial % 3 == 0:
            r = max(1, d - int(rng.integers(1, d)))
            m = rng.normal(size=(d, r)) @ rng.normal(size=(r, d))
        u, s, vt, _ = jacobi_svd(m)
        scale = max(np.linalg.norm(m), 1e-30)
        assert np.linalg.norm(u @ np.diag(s) @ vt - m) / scale < 1e-12
        assert np.linalg.norm(u.T @ u - np.eye(d)) < 1e-10
        assert np.linalg.norm(vt @ vt.T - np.eye(d)) < 1e-10
        ref = np.linalg.svd(m, compute_uv=False)
        assert np.max(np.abs(s - ref)) / max(ref[0], 1e-30) < 1e-12


def test_jacobi_zero_matrix():
    u, s, vt, degenerate = jacobi_svd(np.zeros((4, 4)))
    np.testing.assert_array_equal(s, 0.0)
    assert degenerate == 4
    np.testing.assert_allclose(u.T @ u, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(vt @ vt.T, np.eye(4), atol=1e-12)


def test_procrustes_rejects_bad_inputs():
    x = np.ones((3, 2))
    with pytest.raises(ConfigError):
        procrustes_align(x, np.ones((4, 2)))
    with pytest.raises(ConfigError):
        procrustes_align(x[:1], x[:1])
    bad = x.copy()
    bad[0, 0] = np.inf
    with pytest.raises(NumericError):
        procrustes_align(bad, x)
    with pytest.raises(ConfigError):
        jacobi_svd(np.ones((2, 3)))


# -- ridge --------------------------------------------------------------


def test_exact_interpolation_at_zero_alpha():
    rng = seeded_rng(10)
    x = rng.normal(size=(30, 5))
    w = rng.normal(size=5)
    y = x @ w + 2.5
    model = ridge_fit(x, y, 0.0)
    assert np.max(np.abs(model.predict(x) - y)) < 1e-8


def test_huge_alpha_collapses_to_mean():
    rng = seeded_rng(11)
    x = rng.normal(size=(40, 6))
    y = rng.normal(size=40)
    model = ridge_fit(x, y, 1e12)
    assert np.max(np.abs(model.weights)) < 1e-6
    assert np.max(np.abs(model.predict(x) - y.mean())) < 1e-5


def test_closed_form_matches_gradient_descent():
    rng = seeded_rng(12)
    x = rng.normal(size=(100, 16))
    y = x @ rng.normal(size=16) + rng.normal(size=100)
    model = ridge_fit(x, y, 1.0)
    xc = x - x.mean(0)
    yc = y - y.mean()
    gram = xc.T @ xc + np.eye(16)
    rhs = xc.T @ yc
    w = np.zeros(16)
    lr = 1.0 / np.linalg.eigvalsh(gram).max()
    for _ in range(200000):
        w -= lr * (gram @ w - rhs)
    assert np.max(np.abs(w - model.weights)) < 1e-6


def test_affine_reparameterization_leaves_predictions_unchanged():
    rng = seeded_rng(13)
    x = rng.normal(size=(25, 4))
    y = rng.normal(size=25)
    mix = rng.normal(size=(4, 4)) + 2.0 * np.eye(4)
    probe_rows = rng.normal(size=(6, 4))
    base = ridge_fit(x, y, 0.0).predict(probe_rows)
    mixed = ridge_fit(x @ mix, y, 0.0).predict(probe_rows @ mix)
    np.testing.assert_allclose(mixed, base, atol=1e-8)


def test_ridge_rejects_bad_inputs():
    x = np.ones((3, 2))
    with pytest.raises(ConfigError, match="alpha"):
        ridge_fit(x, np.ones(3), -1.0)
    with pytest.raises(ConfigError):
        ridge_fit(x, np.ones(2), 1.0)
    with pytest.raises(ConfigError):
        ridge_fit(x[:1], np.ones(1), 1.0)
    singular = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    with pytest.raises(NumericError, match="singular"):
        ridge_fit(singular, np.array([1.0, 2.0, 3.5]), 0.0)


# -- probing helpers ----------------------------------------------------


def test_subsample_spreads_rows_across_participants():
    pids = np.repeat(np.arange(40), 4)
    rows = stratified_label_subsample(pids, 0.25, seeded_rng(20))
    assert rows.size == 40
    counts = np.bincount(pids[rows], minlength=40)
    np.testing.assert_array_equal(counts, 1)
    rows_half = stratified_label_subsample(pids, 0.5, seeded_rng(21))
    counts_half = np.bincount(pids[rows_half], minlength=40)
    np.testing.assert_array_equal(counts_half, 2)


def test_subsample_full_fraction_keeps_everything():
    pids = np.repeat(np.arange(5), 3)
    np.testing.assert_array_equal(
        stratified_label_subsample(pids, 1.0, seeded_rng(22)), np.arange(15)
    )


def test_subsample_rejects_too_small_fractions():
    pids = np.repeat(np.arange(10), 4)
    with pytest.raises(ConfigError, match="at least 10"):
        stratified_label_subsample(pids, 0.1, seeded_rng(23))
    with pytest.raises(ConfigError):
        stratified_label_subsample(pids, 0.0, seeded_rng(23))
    with pytest.raises(ConfigError):
        stratified_label_subsample(pids, 1.5, seeded_rng(23))


def test_grouped_folds_never_split_a_participant():
    pids = np.repeat(np.arange(10), 4)
    folds = grouped_kfold(pids, 5, seeded_rng(24))
    assert len(folds) == 5
    seen_val_groups = []
    for train, val in folds:
        assert np.union1d(train, val).size == 40
        assert np.intersect1d(train, val).size == 0
        val_groups = set(pids[val].tolist())
        assert not val_groups & set(pids[train].tolist())
        seen_val_groups.extend(val_groups)
    assert sorted(seen_val_groups) == list(range(10))


def test_grouped_folds_need_enough_groups():
    with pytest.raises(ConfigError, match="participants"):
        grouped_kfold(np.repeat(np.arange(3), 2), 5, seeded_rng(25))


def test_cv_prefers_light_regularization_on_clean_linear_data():
    rng = seeded_rng(26)
    x = rng.normal(size=(60, 4))
    y = x @ rng.normal(size=4)
    groups = np.repeat(np.arange(12), 5)
    alpha, scores = cv_select_alpha(x, y, groups, rng=seeded_rng(27))
    assert set(scores) == {float(a) for a in DEFAULT_ALPHA_GRID}
    assert alpha <= 1e-2


def test_cv_tie_breaks_to_lower_alpha():
    x = np.zeros((20, 3))
    y = seeded_rng(28).normal(size=20)
    groups = np.repeat(np.arange(5), 4)
    alpha, scores = cv_select_alpha(x, y, groups, rng=seeded_rng(29))
    assert alpha == min(DEFAULT_ALPHA_GRID)
    assert len(set(np.round(list(scores.values()), 12))) == 1


def test_aggregate_means_per_participant():
    emb = np.array([[1.0, 0.0], [3.0, 2.0], [5.0, 4.0]])
    agg, pids = aggregate_by_participant(emb, [7, 7, 3])
    np.testing.assert_array_equal(pids, [3, 7])
    np.testing.assert_allclose(agg, [[5.0, 4.0], [2.0, 1.0]])
    with pytest.raises(ConfigError):
        aggregate_by_participant(emb, [1, 2])


def test_embedding_extraction_is_batch_invariant(small_store):
    enc = Encoder(
        EncoderConfig(token_dim=16, n_layers=1, n_heads=2, mlp_hidden=32,
                      input_channels=3, patch_window_s=0.25, segment_s=1),
        seeded_rng(30),
    )
    idx = small_store.train_record_indices()
    a = embed_records(enc, small_store, idx, "accel", batch_size=7)
    b = embed_records(enc, small_store, idx, "accel", batch_size=64)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (idx.size, 16)
    with pytest.raises(ConfigError, match="channels"):
        embed_records(enc, small_store, idx, "ppg")
    with pytest.raises(ConfigError, match="modality"):
        embed_records(enc, small_store, idx, "ecg")


# -- probe --------------------------------------------------------------


def test_probe_reports_are_deterministic(desk_store):
    enc = desk_encoder()
    a = probe(enc, desk_store, "hr", seed=0)
    b = probe(enc, desk_store, "hr", seed=0)
    assert a == b
    assert a.n_train_rows == 160
    assert a.alpha in {float(g) for g in DEFAULT_ALPHA_GRID}
    assert all(np.isfinite(v) for v in a.metrics.values())
    assert set(a.metrics) == {"mae", "rmse", "pearson_r"}


def test_probe_participant_granularity_and_trait(desk_store):
    enc = desk_encoder()
    trait = probe(enc, desk_store, "trait", granularity="participant", seed=0)
    assert set(trait.metrics) == {"roc_auc"}
    assert 0.0 <= trait.metrics["roc_auc"] <= 1.0
    hr = probe(enc, desk_store, "hr", granularity="participant", seed=0)
    assert set(hr.metrics) == {"mae", "rmse", "pearson_r"}
    assert hr.n_train_rows == 40


def test_probe_label_fraction_path(desk_store):
    enc = desk_encoder()
    quarter = probe(enc, desk_store, "hr", label_fraction=0.25, seed=0)
    assert quarter.n_train_rows == 40
    with pytest.raises(ConfigError, match="at least 10"):
        probe(enc, desk_store, "hr", label_fraction=0.01, seed=0)


def test_probe_validates_configuration(desk_store):
    enc = desk_encoder()
    with pytest.raises(ConfigError, match="participant-level"):
        probe(enc, desk_store, "trait", granularity="segment")
    with pytest.raises(ConfigError, match="unknown probe target"):
        probe(enc, desk_store, "spo2")
    with pytest.raises(ConfigError, match="granularity"):
        probe(enc, desk_store, "hr", granularity="cohort")
    with pytest.raises(ConfigError, match="channels"):
        probe(enc, desk_store, "hr", modality="ppg")


# -- supervised baseline ------------------------------------------------


def test_supervised_runs_and_is_deterministic(small_store):
    cfg = EncoderConfig(token_dim=16, n_layers=1, n_heads=2, mlp_hidden=32,
                        input_channels=3, patch_window_s=0.25, segment_s=1)
    sup = SupervisedConfig(batch_size=8, steps=5, max_lr=1e-3, warmup_steps=2)
    a_report, a_losses = supervised_baseline(small_store, cfg, "hr", config=sup, seed=1)
    b_report, b_losses = supervised_baseline(small_store, cfg, "hr", config=sup, seed=1)
    assert a_report == b_report
    assert a_losses == b_losses
    assert len(a_losses) == 5
    assert a_report.alpha is None


def test_supervised_rejects_bad_targets_and_fractions(small_store):
    cfg = EncoderConfig(token_dim=16, n_layers=1, n_heads=2, mlp_hidden=32,
                        input_channels=3, patch_window_s=0.25, segment_s=1)
    with pytest.raises(ConfigError, match="target"):
        supervised_baseline(small_store, cfg, "trait")
    with pytest.raises(ConfigError, match="at least 10"):
        supervised_baseline(small_store, cfg, "hr", label_fraction=0.01)


def test_supervised_aborts_on_divergence(small_store):
    cfg = EncoderConfig(token_dim=16, n_layers=1, n_heads=2, mlp_hidden=32,
                        input_channels=3, patch_window_s=0.25, segment_s=1)
    sup = SupervisedConfig(batch_size=8, steps=50, max_lr=1e12, warmup_steps=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with pytest.raises(NumericError, match="iter"):
            supervised_baseline(small_store, cfg, "hr", config=sup, seed=0)


def test_supervised_writes_artifacts(small_store, tmp_path):
    cfg = EncoderConfig(token_dim=16, n_layers=1, n_heads=2, mlp_hidden=32,
                        input_channels=3, patch_window_s=0.25, segment_s=1)
    sup = SupervisedConfig(batch_size=8, steps=4, max_lr=1e-3, warmup_steps=2)
    supervised_baseline(
        small_store, cfg, "hr", config=sup, out_dir=tmp_path, seed=1, log_every=1
    )
    saved = load_checkpoint(tmp_path / "supervised.ckpt")
    assert "head.w" in saved and "head.b" in saved
    assert "tokenizer.w" in saved
    with open(tmp_path / "supervised_loss.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iter", "lr", "loss"]
    assert len(rows) == 5


def test_desk_supervised_beats_untrained_probe(desk_store):
    cfg = EncoderConfig(token_dim=32, n_layers=2, n_heads=4, mlp_hidden=64,
                        input_channels=3, segment_s=20)
    untrained = probe(desk_encoder(), desk_store, "hr", seed=0)
    sup = SupervisedConfig(batch_size=16, steps=300, max_lr=1e-3,
                           warmup_steps=50, lr_gamma=0.9, lr_every=400)
    report, losses = supervised_baseline(desk_store, cfg, "hr", config=sup, seed=4)
    # calibrated: supervised 4.68 MAE vs 7.20 for the untrained probe
    assert report.metrics["mae"] < untrained.metrics["mae"]
    assert np.mean(losses[-20:]) < np.mean(losses[:20])
