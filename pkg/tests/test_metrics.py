import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actmotion.data import Dataset, LabeledMotion, Motion, default_spec, generate_synthetic
from actmotion.metrics.classifier import (ClassifierConfig, classify, extract_features,
                                          init_classifier, predict_labels, train_classifier)
from actmotion.metrics.diversity import ade, ade_dtw, diversity, diversity_dtw, pad_to
from actmotion.metrics.dtw import dtw_align
from actmotion.metrics.fid import (FeatureStats, NotPSDError, feature_stats, fid, jacobi_eigh,
                                   psd_sqrt, trace_sqrt_product)


# --------------------------------------------------------------------------
# brute-force DTW oracle: enumerate every monotone path


def all_paths(n, m):
    def walk(i, j):
        if (i, j) == (n - 1, m - 1):
            yield [(i, j)]
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            a, b = i + di, j + dj
            if a < n and b < m:
                for rest in walk(a, b):
                    yield [(i, j)] + rest
    yield from walk(0, 0)


def brute_force_dtw(a, b):
    cost = lambda i, j: float(np.linalg.norm(a[:, i] - b[:, j]))
    return min(sum(cost(i, j) for i, j in p) for p in all_paths(a.shape[1], b.shape[1]))


def test_dtw_hand_example():
    pair = dtw_align(np.array([[0.0, 0.0, 1.0]]), np.array([[0.0, 1.0]]))
    assert pair.cost == 0.0
    assert pair.path == [(0, 0), (1, 0), (2, 1)]
    np.testing.assert_array_equal(pair.a, [[0, 0, 1]])
    np.testing.assert_array_equal(pair.b, [[0, 0, 1]])


def test_dtw_identical_sequences_take_diagonal():
    a = np.random.default_rng(0).standard_normal((3, 7))
    pair = dtw_align(a, a)
    assert pair.cost == 0.0
    assert pair.path == [(i, i) for i in range(7)]
    assert pair.length == 7


def test_dtw_ties_prefer_diagonal():
    # constant sequences: every path costs 0, so the tie-break decides
    pair = dtw_align(np.zeros((1, 3)), np.zeros((1, 3)))
    assert pair.path == [(0, 0), (1, 1), (2, 2)]


@pytest.mark.parametrize("seed", range(30))
def test_dtw_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((2, int(rng.integers(1, 7))))
    b = rng.standard_normal((2, int(rng.integers(1, 7))))
    assert dtw_align(a, b).cost == pytest.approx(brute_force_dtw(a, b), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31))
def test_dtw_path_shape_and_symmetry(n, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((3, n)), rng.standard_normal((3, m))
    pair = dtw_align(a, b)
    assert pair.path[0] == (0, 0) and pair.path[-1] == (n - 1, m - 1)
    steps = {(q[0] - p[0], q[1] - p[1]) for p, q in zip(pair.path, pair.path[1:])}
    assert steps <= {(1, 0), (0, 1), (1, 1)}
    assert pair.a.shape == pair.b.shape == (3, len(pair.path))
    assert pair.cost == pytest.approx(np.linalg.norm(pair.a - pair.b, axis=0).sum(), rel=1e-12)
    assert dtw_align(b, a).cost == pytest.approx(pair.cost, rel=1e-12)


def test_dtw_rejects_mismatched_dims():
    with pytest.raises(ValueError):
        dtw_align(np.zeros((2, 3)), np.zeros((3, 3)))


# --------------------------------------------------------------------------
# eigensolver and FID


@pytest.mark.parametrize("n", [1, 2, 3, 6, 12])
def test_jacobi_matches_eigh(n):
    rng = np.random.default_rng(n)
    x = rng.standard_normal((n, n))
    a = x + x.T
    w, v = jacobi_eigh(a)
    np.testing.assert_allclose(w, np.linalg.eigh(a)[0], atol=1e-10)
    np.testing.assert_allclose(v @ np.diag(w) @ v.T, a, atol=1e-10)
    np.testing.assert_allclose(v.T @ v, np.eye(n), atol=1e-10)


def test_jacobi_diagonal_input_is_fixed_point():
    w, v = jacobi_eigh(np.diag([3.0, 1.0, 2.0]))
    np.testing.assert_array_equal(w, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(np.abs(v), np.eye(3)[:, [1, 2, 0]])


def test_psd_sqrt_squares_back():
    x = np.random.default_rng(1).standard_normal((5, 5))
    a = x @ x.T
    r = psd_sqrt(a)
    np.testing.assert_allclose(r @ r, a, atol=1e-10)


def test_psd_sqrt_rejects_indefinite():
    with pytest.raises(NotPSDError):
        psd_sqrt(np.diag([1.0, -0.5]))


def test_psd_sqrt_clamps_round_off():
    r = psd_sqrt(np.diag([1.0, -1e-14]))
    np.testing.assert_allclose(r, np.diag([1.0, 0.0]))


def _stats(mu, sigma):
    return FeatureStats(np.atleast_1d(np.asarray(mu, float)), np.atleast_2d(np.asarray(sigma, float)), 2)


def test_fid_hand_cases():
    assert fid(_stats(0, 1), _stats(1, 1)) == pytest.approx(1.0, abs=1e-10)
    assert fid(_stats(0, 1), _stats(0, 4)) == pytest.approx(1.0, abs=1e-10)


def test_fid_identical_stats_is_zero():
    f = np.random.default_rng(2).standard_normal((40, 8))
    s = feature_stats(f)
    assert abs(fid(s, s)) < 1e-8


def test_trace_sqrt_diagonal_identity():
    rng = np.random.default_rng(3)
    da, db = rng.uniform(0.1, 3, 5), rng.uniform(0.1, 3, 5)
    expected = np.sum(np.sqrt(da * db))
    assert trace_sqrt_product(np.diag(da), np.diag(db)) == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_fid_symmetric_and_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a = feature_stats(rng.standard_normal((30, 4)))
    b = feature_stats(rng.standard_normal((30, 4)) * 2 + 1)
    assert fid(a, b) == pytest.approx(fid(b, a), abs=1e-8)
    assert fid(a, b) > -1e-8


def test_fid_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        fid(_stats([0, 0], np.eye(2)), _stats(0, 1))


def test_feature_stats_examples():
    s = feature_stats(np.array([[0.0], [2.0]]))
    assert s.mu[0] == 1.0 and s.sigma[0, 0] == 2.0 and s.count == 2
    s = feature_stats(np.ones((3, 4)))
    np.testing.assert_array_equal(s.sigma, 1e-6 * np.eye(4))
    with pytest.raises(ValueError):
        feature_stats(np.ones((1, 3)))


def test_feature_stats_permutation_invariant():
    f = np.random.default_rng(4).standard_normal((20, 3))
    a, b = feature_stats(f), feature_stats(f[::-1])
    np.testing.assert_allclose(a.mu, b.mu, atol=1e-14)
    np.testing.assert_allclose(a.sigma, b.sigma, atol=1e-14)
    np.testing.assert_array_equal(a.sigma, a.sigma.T)


def test_feature_stats_dict_round_trip():
    s = feature_stats(np.random.default_rng(5).standard_normal((6, 2)))
    t = FeatureStats.from_dict(s.to_dict())
    np.testing.assert_array_equal(s.sigma, t.sigma)
    assert s.count == t.count


# --------------------------------------------------------------------------
# diversity and ADE


def test_diversity_identical_samples_is_zero():
    y = np.random.default_rng(0).standard_normal((3, 9))
    assert diversity([y, y, y]) == 0.0
    assert diversity_dtw([y, y, y]) == 0.0


def test_diversity_two_constant_motions():
    a, b = np.full((2, 6), 1.0), np.full((2, 6), 4.0)
    expected = np.linalg.norm([3.0, 3.0])
    assert diversity([a, b]) == pytest.approx(expected)
    assert diversity_dtw([a, b]) == pytest.approx(expected)


def test_diversity_hand_three_samples():
    # pairwise per-frame distances 1, 2, 1 -> mean over the 3 pairs
    ys = [np.zeros((1, 4)), np.ones((1, 4)), np.full((1, 4), 2.0)]
    assert diversity(ys) == pytest.approx(4.0 / 3.0)


@pytest.mark.parametrize("seed", range(10))
def test_dtw_diversity_not_above_raw(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 7))
    ys = [rng.standard_normal((2, T)) for _ in range(3)]
    raw = diversity(ys)
    pairs = [(i, j) for i in range(3) for j in range(i + 1, 3)]
    # Div_w recomputed from the brute-force oracle: the optimal path cost is at
    # most the diagonal cost and the path is never shorter than T
    assert diversity_dtw(ys) <= raw + 1e-12
    for i, j in pairs:
        assert brute_force_dtw(ys[i], ys[j]) <= np.linalg.norm(ys[i] - ys[j], axis=0).sum() + 1e-12


def test_diversity_needs_two_samples():
    with pytest.raises(ValueError):
        diversity([np.zeros((1, 3))])
    with pytest.raises(ValueError):
        diversity_dtw([np.zeros((1, 3))])
    with pytest.raises(ValueError):
        diversity([np.zeros((1, 3)), np.zeros((1, 4))])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_diversity_and_ade_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    ys = [rng.standard_normal((2, 5)) for _ in range(4)]
    gt = rng.standard_normal((2, 5))
    order = rng.permutation(4)
    perm = [ys[i] for i in order]
    assert diversity(perm) == pytest.approx(diversity(ys), rel=1e-12)
    assert diversity_dtw(perm) == pytest.approx(diversity_dtw(ys), rel=1e-12)
    assert ade(perm, gt) == ade(ys, gt)
    assert ade_dtw(perm, gt) == ade_dtw(ys, gt)


def test_ade_examples():
    gt = np.random.default_rng(1).standard_normal((3, 8))
    assert ade([gt], gt) == 0.0
    assert ade_dtw([gt], gt) == 0.0
    d = np.array([[3.0], [4.0]])
    assert ade([np.zeros((2, 5)) + d], np.zeros((2, 5))) == pytest.approx(5.0)


def test_ade_worse_sample_never_increases():
    rng = np.random.default_rng(2)
    gt = rng.standard_normal((2, 6))
    ys = [gt + 0.1 * rng.standard_normal((2, 6))]
    before = ade(ys, gt), ade_dtw(ys, gt)
    ys.append(gt + 10.0)
    assert ade(ys, gt) <= before[0] and ade_dtw(ys, gt) <= before[1]


def test_ade_pads_short_samples_with_final_pose():
    gt = np.zeros((1, 4))
    short = np.array([[0.0, 2.0]])
    np.testing.assert_array_equal(pad_to(short, 4), [[0, 2, 2, 2]])
    assert ade([short], gt) == pytest.approx(6.0 / 4.0)


def test_ade_needs_a_sample():
    with pytest.raises(ValueError):
        ade([], np.zeros((1, 3)))


# --------------------------------------------------------------------------
# classifier


@pytest.fixture(scope="module")
def toy():
    return generate_synthetic(default_spec(seed=3, samples_per_action=15))


@pytest.fixture(scope="module")
def trained(toy):
    return train_classifier(toy, ClassifierConfig(K=toy.K, A=toy.A, hidden=16, mlp=(16, 8),
                                                  epochs=40, batch_size=8, seed=0))


def test_classifier_separates_toy_actions(trained, toy):
    assert trained.train_accuracy >= 0.95
    labels = [s.action for s in toy.samples]
    assert classify([s.motion for s in toy.samples], labels, trained) == trained.train_accuracy


def test_classifier_zero_epochs_keeps_init(toy):
    cfg = ClassifierConfig(K=toy.K, A=toy.A, hidden=8, mlp=(8, 4), epochs=0, seed=5)
    clf = train_classifier(toy, cfg)
    init = init_classifier(cfg)
    assert all(np.array_equal(clf.params[k], init[k]) for k in init)


def test_classifier_deterministic(toy):
    cfg = ClassifierConfig(K=toy.K, A=toy.A, hidden=8, mlp=(8, 4), epochs=2, seed=1)
    a, b = train_classifier(toy, cfg), train_classifier(toy, cfg)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_classify_against_own_predictions_is_perfect(trained, toy):
    motions = [s.motion for s in toy.samples[:12]]
    assert classify(motions, predict_labels(motions, trained), trained) == 1.0


def test_features_have_width_F_for_any_length(trained):
    rng = np.random.default_rng(0)
    feats = extract_features([rng.standard_normal((6, T)) for T in (1, 5, 40)], trained)
    assert feats.shape == (3, trained.config.feature_dim)


def test_batched_features_match_single_motion(trained, toy):
    motions = [s.motion for s in toy.samples[::7]]
    together = extract_features(motions, trained)
    alone = np.concatenate([extract_features([m], trained) for m in motions])
    np.testing.assert_allclose(together, alone, atol=1e-12)


def test_accuracy_invariant_under_reordering(trained, toy):
    motions = [s.motion for s in toy.samples]
    labels = np.array([s.action for s in toy.samples])
    order = np.random.default_rng(0).permutation(len(motions))
    assert classify([motions[i] for i in order], labels[order], trained) == \
        classify(motions, labels, trained)


def test_classifier_needs_two_actions():
    one = Dataset([LabeledMotion(Motion(np.zeros((2, 3))), 0, f"s{i}") for i in range(3)], A=2, K=2)
    with pytest.raises(ValueError):
        train_classifier(one, ClassifierConfig(K=2, A=2, epochs=1))
