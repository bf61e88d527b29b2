import csv
import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from soilspec import rng
from soilspec.dataset import BandAxis, SplitSpec, assemble_features, generate_synthetic, split_train_test, SynthConfig
from soilspec.evaluation import (DEFAULT_SEEDS, ExperimentConfig, ExperimentError, GridSpec, grid_search,
                                 importance_rows, importance_spectrum_export, kfold_split,
                                 prediction_histogram2d, r_squared, rmse, run_experiment, score, write_report)
from soilspec.models import dumps, make_model


class TestMetrics:
    def test_r_squared_hand_cases(self):
        assert r_squared([1, 2, 3], [1, 2, 4]) == 0.5
        assert r_squared([1, 2, 3], [1, 2, 3]) == 1.0
        assert r_squared([1, 2, 3], [2, 2, 2]) == 0.0

    def test_rmse_hand_cases(self):
        assert rmse([0, 0], [3, 4]) == pytest.approx(np.sqrt(12.5), rel=1e-15)
        assert rmse([1, 5, 2], [1, 5, 2]) == 0.0
        assert rmse([1, 5, 2], [3, 7, 4]) == pytest.approx(2.0, rel=1e-15)

    def test_errors(self):
        with pytest.raises(ValueError):
            r_squared([2, 2, 2], [1, 2, 3])
        with pytest.raises(ValueError):
            r_squared([1], [1])
        with pytest.raises(ValueError):
            rmse([1, 2], [1])

    def test_train_mean_predictor_scores_zero(self, gen):
        y = gen.normal(size=37)
        assert r_squared(y, np.full(37, y.mean())) == pytest.approx(0.0, abs=1e-15)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=30), st.randoms())
    def test_rmse_permutation_invariant(self, values, rand):
        y = np.array(values)
        p = y[::-1] + 0.5
        perm = list(range(len(y)))
        rand.shuffle(perm)
        assert rmse(y[perm], p[perm]) == pytest.approx(rmse(y, p), rel=1e-12, abs=1e-12)

    def test_score_bundle(self):
        m = score([1, 2, 3], [1, 2, 4])
        assert (m.r_squared, m.n) == (0.5, 3)


class TestKFold:
    def test_reference_train_size(self):
        folds = kfold_split(641, 10, seed=3)
        assert sorted(len(f) for f in folds) == [64] * 9 + [65]
        assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(641))

    def test_singletons(self):
        assert [len(f) for f in kfold_split(10, 10, seed=0)] == [1] * 10

    def test_deterministic(self):
        a, b = kfold_split(100, 10, seed=9), kfold_split(100, 10, seed=9)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_too_few(self):
        with pytest.raises(ValueError):
            kfold_split(5, 10)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 20), st.integers(0, 200), st.integers(0, 2 ** 32))
    def test_partition(self, k, extra, seed):
        n = k + extra
        folds = kfold_split(n, k, seed)
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1 and sum(sizes) == n
        assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(n))


class TestGridSearch:
    def test_single_point(self, gen):
        X = gen.normal(size=(40, 3))
        best, table = grid_search(X, X @ [1.0, 2.0, 3.0], GridSpec("knn", {"n_neighbors": [4]}))
        assert best["n_neighbors"] == 4 and len(table) == 1
        assert sorted(table[0]["fold_sizes"]) == [4] * 10

    def test_recovers_nearest_neighbour(self, gen):
        # each site holds a close pair sharing an unrelated target, so one neighbour
        # answers exactly while six drag in other sites
        sites = np.arange(150.0)
        x = np.concatenate([sites, sites + 0.1])[:, None]
        y = np.tile(gen.normal(size=150), 2)
        best, table = grid_search(x, y, GridSpec("knn", {"n_neighbors": [1, 6]}), seed=1)
        assert best["n_neighbors"] == 1
        assert table[0]["mean_r2"] > table[1]["mean_r2"]

    def test_smoothing_wins_under_noise(self, gen):
        x = gen.uniform(0, 1, (300, 1))
        y = x[:, 0] + gen.normal(size=300)
        best, _ = grid_search(x, y, GridSpec("knn", {"n_neighbors": [1, 6]}), seed=1)
        assert best["n_neighbors"] == 6

    def test_table_self_consistent(self, gen):
        X = gen.normal(size=(60, 3))
        y = X[:, 0] ** 2 + X[:, 1]
        seed = 5
        best, table = grid_search(X, y, GridSpec("knn", {"n_neighbors": [2, 4, 8]}), seed=seed)
        folds = kfold_split(60, 10, rng.derive_seed(seed, rng.STREAM_CV, "folds"))
        r2 = []
        for f, val in enumerate(folds):
            tr = np.setdiff1d(np.arange(60), val)
            model = make_model("knn", best).fit(X[tr], y[tr])
            r2.append(r_squared(y[val], model.predict(X[val])))
        row = next(r for r in table if r["params"] == best)
        assert row["mean_r2"] == pytest.approx(np.mean(r2), rel=1e-12)
        assert row["mean_r2"] == max(r["mean_r2"] for r in table)

    def test_cartesian_order(self):
        spec = GridSpec("svr", {"C": [1.0, 2.0], "gamma": [0.1, 0.2]})
        assert spec.points() == [{"C": 1.0, "gamma": 0.1}, {"C": 1.0, "gamma": 0.2},
                                 {"C": 2.0, "gamma": 0.1}, {"C": 2.0, "gamma": 0.2}]

    def test_failing_point_disqualified(self, gen):
        X = gen.normal(size=(30, 2))
        best, table = grid_search(X, X[:, 0], GridSpec("knn", {"n_neighbors": [50, 3]}))
        assert table[0]["error"] and table[0]["mean_r2"] is None
        assert best["n_neighbors"] == 3

    def test_invalid_key(self, gen):
        with pytest.raises(Exception, match="bogus"):
            grid_search(gen.normal(size=(20, 2)), gen.normal(size=20), GridSpec("knn", {"bogus": [1]}))

    def test_never_touches_test_data(self, synthetic):
        cfg = ExperimentConfig(model="knn", grid={"n_neighbors": [3, 6]}, seeds=(0,))
        X, y = assemble_features(synthetic)
        before = hashlib.sha256(X.tobytes() + y.tobytes()).hexdigest()
        report, runs = run_experiment(cfg, synthetic)
        assert hashlib.sha256(X.tobytes() + y.tobytes()).hexdigest() == before
        for row in runs[0].cv_table:
            assert sum(row["fold_sizes"]) == 641
            assert sorted(row["fold_sizes"]) == [64] * 9 + [65]


class TestRunExperiment:
    def test_exact_linear_pipeline(self, linear_dataset):
        cfg = ExperimentConfig(model="linear", seeds=(0,), train_count=150, test_count=50)
        report, _ = run_experiment(cfg, linear_dataset)
        assert abs(report["per_seed"][0]["test"]["r_squared"] - 1) < 1e-8

    def test_seven_seeds_by_default(self, synthetic):
        cfg = ExperimentConfig(model="knn")
        assert cfg.seeds == DEFAULT_SEEDS == tuple(range(7))
        report, runs = run_experiment(cfg, synthetic)
        assert len(report["per_seed"]) == 7 and len(runs) == 7
        r2 = [e["test"]["r_squared"] for e in report["per_seed"]]
        assert report["aggregate"]["test"]["r_squared"]["mean"] == pytest.approx(np.mean(r2), rel=1e-15)
        assert report["aggregate"]["test"]["r_squared"]["std"] == pytest.approx(np.std(r2, ddof=1), rel=1e-12)
        assert all(e["test"]["n"] == 691 for e in report["per_seed"])

    def test_fixed_split_reuses_rows(self, synthetic):
        cfg = ExperimentConfig(model="knn", seeds=(0, 1), resplit_per_seed=False, split_seed=4)
        _, runs = run_experiment(cfg, synthetic)
        assert np.array_equal(runs[0].y_true, runs[1].y_true)
        cfg = ExperimentConfig(model="knn", seeds=(0, 1))
        _, runs = run_experiment(cfg, synthetic)
        assert not np.array_equal(runs[0].y_true, runs[1].y_true)

    def test_byte_identical_reruns(self, synthetic):
        cfg = ExperimentConfig(model="et", params={"n_estimators": 10}, seeds=(0, 1))
        assert dumps(run_experiment(cfg, synthetic)[0]) == dumps(run_experiment(cfg, synthetic)[0])

    def test_scaling_negligible_for_et(self, synthetic):
        r2 = {}
        for mode in ("none", "scaling"):
            cfg = ExperimentConfig(model="et", mode=mode, params={"n_estimators": 100}, seeds=(0, 1, 2))
            r2[mode] = run_experiment(cfg, synthetic)[0]["aggregate"]["test"]["r_squared"]["mean"]
        assert abs(r2["scaling"] - r2["none"]) < 0.05

    def test_scaled_rmse_units(self, synthetic):
        cfg = ExperimentConfig(model="knn", mode="scaling", seeds=(0, 1))
        report, runs = run_experiment(cfg, synthetic)
        for entry, run in zip(report["per_seed"], runs):
            span = run.preprocessor.scaler.target_range
            for subset in ("train", "test"):
                m = entry[subset]
                assert abs(m["rmse_scaled"] * span - m["rmse_pct"]) < 1e-9

    def test_pca_mode(self, synthetic):
        cfg = ExperimentConfig(model="linear", mode="pca", seeds=(0,))
        _, runs = run_experiment(cfg, synthetic)
        assert runs[0].model.n_features_ == 20

    def test_importances_attached(self, synthetic):
        cfg = ExperimentConfig(model="et", params={"n_estimators": 10}, seeds=(0, 1))
        report, _ = run_experiment(cfg, synthetic)
        assert len(report["importances"]["mean"]) == 116
        assert abs(sum(report["importances"]["mean"]) - 1) < 1e-10
        assert "importances" not in run_experiment(ExperimentConfig(model="knn", seeds=(0,)), synthetic)[0]

    def test_errors_carry_context(self, synthetic):
        cfg = ExperimentConfig(model="knn", params={"n_neighbors": 700}, seeds=(3,))
        with pytest.raises(ExperimentError, match="seed 3, stage fit"):
            run_experiment(cfg, synthetic)

    def test_split_must_cover_dataset(self, synthetic):
        with pytest.raises(ExperimentError):
            run_experiment(ExperimentConfig(model="knn", train_count=100, test_count=100), synthetic)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig(seeds=())
        with pytest.raises(ValueError):
            ExperimentConfig(mode="standardise")
        with pytest.raises(Exception):
            ExperimentConfig(model="knn", params={"bogus": 1})

    def test_jobs_not_in_report(self, synthetic):
        assert "jobs" not in ExperimentConfig(jobs=4).to_dict()


class TestHistogram:
    def test_hand_case(self):
        counts, edges = prediction_histogram2d([0.0, 2.0], [2.0, 1.0], 2)
        assert edges.tolist() == [0.0, 1.0, 2.0]
        assert counts.tolist() == [[0, 1], [0, 1]]

    def test_perfect_predictions_on_diagonal(self, gen):
        y = gen.uniform(0, 30, 100)
        counts, _ = prediction_histogram2d(y, y, 12)
        assert counts.sum() == 100 and np.all(counts == np.diag(np.diag(counts)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 50), st.integers(1, 15), st.integers(0, 2 ** 32))
    def test_counts_and_marginal(self, n, bins, seed):
        g = np.random.default_rng(seed)
        t, p = g.normal(size=n), g.normal(size=n)
        counts, edges = prediction_histogram2d(t, p, bins)
        assert counts.sum() == n
        assert np.array_equal(counts.sum(axis=1), np.histogram(t, edges)[0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            prediction_histogram2d([1.0, 2.0], [1.0], 3)


class TestExports:
    def test_importance_rows_labels(self):
        rows = importance_rows(np.full(116, 1 / 116), BandAxis())
        assert len(rows) == 116 and rows[0][1] == "470" and rows[-1][1] == "LWIR"
        assert importance_rows([0.5, 0.5])[1][1] == "pc2"

    def test_spectrum_export(self, synthetic, benchmark_split):
        X = benchmark_split[0]
        imp = np.random.default_rng(0).dirichlet(np.ones(116))
        rows = importance_spectrum_export(imp, synthetic.band_axis, X.mean(axis=0), X.std(axis=0))
        assert len(rows) == 116 and rows[-1][0] == "LWIR"
        assert abs(sum(r[3] for r in rows) - 1) < 1e-10
        assert rows[int(np.argmax(imp))][0] == max(rows, key=lambda r: r[3])[0]
        with pytest.raises(ValueError):
            importance_spectrum_export(imp[:10], synthetic.band_axis, X.mean(axis=0), X.std(axis=0))

    def test_write_report_files(self, tmp_path, synthetic):
        cfg = ExperimentConfig(model="et", params={"n_estimators": 5}, seeds=(0, 1), grid={"max_depth": [3]})
        report, _ = run_experiment(cfg, synthetic)
        write_report(report, tmp_path, synthetic.band_axis)
        for name in ("report.json", "per_seed_metrics.csv", "cv_table.csv", "importances.csv", "hist2d.csv"):
            assert (tmp_path / name).exists()
        with (tmp_path / "per_seed_metrics.csv").open() as fh:
            assert len(list(csv.DictReader(fh))) == 2
        with (tmp_path / "hist2d.csv").open() as fh:
            assert sum(int(r["count"]) for r in csv.DictReader(fh)) == 691
