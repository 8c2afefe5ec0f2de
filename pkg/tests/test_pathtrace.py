import numpy as np
import pytest

from learnpath.numerics import init_mlp, predict_proba
from learnpath.pathtrace import (CsvPathSink, LearningPath, PathStore,
                                 barycentric_project, base_difficulty,
                                 distance_gap_snapshot, ema_filter_path,
                                 recovery_fraction, zigzag_score)
from learnpath.supervision import make_gt_targets
from learnpath.toygauss import TEST, GaussianSpec, sample_dataset

SQRT23 = 0.81649658092772603273  # sqrt(2/3)
SQRT3_2 = 0.86602540378443864676  # sqrt(3)/2
SQRT3_6 = 0.28867513459481288225  # sqrt(3)/6


def make_path(qs, start=0):
    path = LearningPath(sample_index=7)
    for t, q in enumerate(qs):
        path.append(start + t, np.asarray(q, dtype=np.float64))
    return path


class TestLearningPath:
    def test_append_and_len(self):
        path = make_path([(1, 0, 0), (0.5, 0.5, 0)])
        assert len(path) == 2
        assert path.steps == [0, 1]
        assert path.as_array().shape == (2, 3)

    def test_steps_must_increase(self):
        path = make_path([(1, 0, 0)], start=5)
        with pytest.raises(ValueError):
            path.append(5, np.array([0.0, 1.0, 0.0]))
        with pytest.raises(ValueError):
            path.append(3, np.array([0.0, 1.0, 0.0]))

    def test_append_copies_input(self):
        q = np.array([1.0, 0.0, 0.0])
        path = LearningPath(0)
        path.append(0, q)
        q[0] = -1.0
        assert path.qs[0][0] == 1.0


class TestPathStore:
    def test_log_and_lookup(self):
        store = PathStore(num_classes=3)
        store.log(4, 0, np.array([1.0, 0.0, 0.0]))
        store.log(2, 0, np.array([0.0, 1.0, 0.0]))
        store.log(4, 1, np.array([0.5, 0.5, 0.0]))
        assert len(store) == 2
        assert store.indices() == [2, 4]
        assert 4 in store and 9 not in store
        assert len(store[4]) == 2

    def test_export_csv_round_trip(self, tmp_path):
        store = PathStore(num_classes=3)
        rng = np.random.default_rng(0)
        for i in (3, 1):
            for t in range(4):
                store.log(i, t, rng.dirichlet(np.ones(3)))
        out = tmp_path / "paths.csv"
        store.export_csv(out, header_lines=("# run = demo",))
        lines = out.read_text().splitlines()
        assert lines[0] == "# run = demo"
        assert lines[1] == "sample_index,step,q_0,q_1,q_2"
        assert len(lines) == 2 + 8
        # %.17g reproduces the doubles exactly, grouped by sample ascending
        first = lines[2].split(",")
        assert [int(first[0]), int(first[1])] == [1, 0]
        assert np.array_equal(np.array([float(v) for v in first[2:]]),
                              store[1].qs[0])

    def test_sink_writes_same_rows(self, tmp_path):
        qs = [np.array(q) for q in
              ((0.2, 0.3, 0.5), (1.0, 0.0, 0.0), (0.25, 0.25, 0.5))]
        store = PathStore(num_classes=3)
        sink_path = tmp_path / "sink.csv"
        with CsvPathSink(sink_path, num_classes=3) as sink:
            for (i, t), q in zip(((5, 0), (1, 0), (5, 1)), qs):
                store.log(i, t, q)
                sink.log(i, t, q)
        store_path = tmp_path / "store.csv"
        store.export_csv(store_path)
        sink_lines = sink_path.read_text().splitlines()
        store_lines = store_path.read_text().splitlines()
        assert sink_lines[0] == store_lines[0]
        # sink preserves visit order, store groups by sample: same multiset
        assert sorted(sink_lines[1:]) == sorted(store_lines[1:])


class TestEmaFilter:
    def test_alpha_one_is_identity(self):
        path = make_path([(1, 0, 0), (0.2, 0.3, 0.5), (0, 0, 1)])
        out = ema_filter_path(path, 1.0)
        assert np.array_equal(out.as_array(), path.as_array())
        assert out.steps == path.steps

    def test_constant_path_is_fixed_point(self):
        path = make_path([(0.2, 0.3, 0.5)] * 5)
        out = ema_filter_path(path, 0.3)
        assert np.allclose(out.as_array(), path.as_array(), atol=1e-15)

    def test_three_step_hand_case(self):
        path = make_path([(1, 0, 0), (0.5, 0.5, 0), (0.25, 0.25, 0.5)])
        out = ema_filter_path(path, 0.5).as_array()
        want = np.array([[1.0, 0.0, 0.0],
                         [0.75, 0.25, 0.0],
                         [0.5, 0.25, 0.25]])
        assert np.allclose(out, want, atol=1e-15)

    def test_output_stays_on_simplex(self, rng):
        path = make_path(rng.dirichlet(np.ones(3), size=200))
        out = ema_filter_path(path, 0.07).as_array()
        assert np.all(out >= -1e-12)
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-10)

    def test_bad_inputs(self):
        path = make_path([(1, 0, 0)])
        with pytest.raises(ValueError):
            ema_filter_path(path, 0.0)
        with pytest.raises(ValueError):
            ema_filter_path(path, 1.5)
        with pytest.raises(ValueError):
            ema_filter_path(LearningPath(0), 0.5)


class TestBarycentric:
    def test_vertices(self):
        assert np.allclose(barycentric_project([1, 0, 0]), [0.0, 0.0], atol=0)
        assert np.allclose(barycentric_project([0, 1, 0]), [1.0, 0.0], atol=0)
        assert np.allclose(barycentric_project([0, 0, 1]), [0.5, SQRT3_2],
                           atol=1e-16)

    def test_centroid(self):
        got = barycentric_project([1 / 3, 1 / 3, 1 / 3])
        assert np.allclose(got, [0.5, SQRT3_6], atol=1e-16)

    def test_other_k_rejected(self):
        with pytest.raises(ValueError):
            barycentric_project([0.5, 0.5])
        with pytest.raises(ValueError):
            barycentric_project([0.25, 0.25, 0.25, 0.25])


class TestBaseDifficulty:
    def test_exact_label_is_zero(self):
        assert base_difficulty(1, np.array([0.0, 1.0, 0.0])) == 0.0

    def test_opposite_corner_is_sqrt2(self):
        got = base_difficulty(0, np.array([0.0, 0.0, 1.0]))
        assert got == pytest.approx(np.sqrt(2.0), abs=1e-15)

    def test_uniform_posterior(self):
        got = base_difficulty(2, np.full(3, 1 / 3))
        assert got == pytest.approx(SQRT23, abs=1e-15)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            base_difficulty(3, np.full(3, 1 / 3))
        with pytest.raises(ValueError):
            base_difficulty(0, np.full((2, 3), 1 / 6))


class TestZigzag:
    def test_confident_correct_path_scores_zero(self):
        path = make_path([(1, 0, 0)] * 4)
        assert zigzag_score(path, 0) == 0.0

    def test_uniform_path_scores_t_over_k(self):
        path = make_path([(1 / 3, 1 / 3, 1 / 3)] * 6)
        assert zigzag_score(path, 0) == pytest.approx(2.0, abs=1e-12)

    def test_hand_case(self):
        # columns sum to (1.5, 0.3, 0.2); strongest wrong class is 0.3
        path = make_path([(0.7, 0.2, 0.1), (0.8, 0.1, 0.1)])
        assert zigzag_score(path, 0) == pytest.approx(0.3, abs=1e-15)

    def test_oscillation_scores_higher_than_decay(self):
        osc = make_path([(0.5, 0.5, 0), (0.1, 0.9, 0), (0.5, 0.5, 0),
                         (0.1, 0.9, 0)])
        decay = make_path([(0.5, 0.5, 0), (0.8, 0.2, 0), (0.95, 0.05, 0),
                           (0.99, 0.01, 0)])
        assert zigzag_score(osc, 0) > zigzag_score(decay, 0)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            zigzag_score(LearningPath(0), 0)
        with pytest.raises(ValueError):
            zigzag_score(make_path([(1, 0, 0)]), 5)


class TestDistanceGap:
    def test_columns_match_manual_computation(self, small_ds):
        model = init_mlp((small_ds.x.shape[1], 8, 3), seed=0)
        table = make_gt_targets(small_ds)
        snap = distance_gap_snapshot(model, small_ds, targets=table)
        idx = snap["sample_index"]
        assert np.array_equal(idx, small_ds.train_indices)
        q = predict_proba(model, small_ds.x[idx])
        assert np.allclose(snap["dist_q_pstar"],
                           np.linalg.norm(q - small_ds.p_star[idx], axis=1),
                           atol=1e-15)
        # against ground-truth targets both distance columns agree
        assert np.array_equal(snap["dist_q_pstar"], snap["dist_q_ptar"])
        for row in snap[:10]:
            i = int(row["sample_index"])
            assert row["base_difficulty"] == pytest.approx(
                base_difficulty(int(small_ds.y[i]), small_ds.p_star[i]), abs=0)

    def test_default_targets_are_onehot(self, small_ds):
        model = init_mlp((small_ds.x.shape[1], 8, 3), seed=1)
        snap = distance_gap_snapshot(model, small_ds)
        idx = snap["sample_index"]
        q = predict_proba(model, small_ds.x[idx])
        onehot = np.eye(3)[small_ds.y[idx]]
        assert np.allclose(snap["dist_q_ptar"],
                           np.linalg.norm(q - onehot, axis=1), atol=1e-15)

    def test_plain_array_targets_accepted(self, small_ds):
        model = init_mlp((small_ds.x.shape[1], 8, 3), seed=2)
        via_table = distance_gap_snapshot(model, small_ds,
                                          targets=make_gt_targets(small_ds))
        via_array = distance_gap_snapshot(model, small_ds,
                                          targets=small_ds.p_star)
        assert np.array_equal(via_table["dist_q_ptar"], via_array["dist_q_ptar"])

    def test_empty_split_rejected(self):
        ds = sample_dataset(GaussianSpec(seed=0), 20)  # everything is TRAIN
        model = init_mlp((ds.x.shape[1], 4, 3), seed=0)
        with pytest.raises(ValueError):
            distance_gap_snapshot(model, ds, split=TEST)


class TestRecoveryFraction:
    def test_full_recovery(self):
        preds = np.eye(3)[[0, 1, 2, 0]]
        orig = np.array([0, 1, 2, 0])
        assert recovery_fraction(preds, [1, 3], orig) == 1.0

    def test_no_recovery(self):
        preds = np.eye(3)[[1, 2, 0, 1]]
        orig = np.array([0, 1, 2, 0])
        assert recovery_fraction(preds, [0, 2], orig) == 0.0

    def test_half_recovery(self):
        preds = np.eye(3)[[0, 2, 2, 1]]
        orig = np.array([0, 1, 2, 0])
        assert recovery_fraction(preds, [1, 2, 3, 0], orig) == 0.5

    def test_random_predictions_near_chance(self, rng):
        n = 6000
        preds = rng.dirichlet(np.ones(3), size=n)
        orig = rng.integers(0, 3, size=n)
        got = recovery_fraction(preds, np.arange(n), orig)
        assert abs(got - 1 / 3) < 0.03

    def test_table_rows_accepted(self, small_ds):
        table = make_gt_targets(small_ds)
        got = recovery_fraction(table, small_ds.train_indices, small_ds.y)
        direct = recovery_fraction(table.rows, small_ds.train_indices, small_ds.y)
        assert got == direct

    def test_empty_flip_set_rejected(self):
        with pytest.raises(ValueError):
            recovery_fraction(np.eye(3), [], np.array([0, 1, 2]))
