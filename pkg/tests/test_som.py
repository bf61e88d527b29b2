import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from soilspec.som import (SOMRegressor, SomGrid, SomSchedule, bmu_indices, find_bmu, fit_input_som,
                          fit_output_som, neighborhood_weight, predict_som, quantization_error)

FROZEN = SomSchedule(alpha_start=0.0, alpha_end=0.0)


def brute_bmu(weights, x):
    best, best_d = -1, np.inf
    for m, w in enumerate(weights):
        d = sum((a - b) ** 2 for a, b in zip(w, x))
        if d < best_d:
            best, best_d = m, d
    return best


@pytest.fixture(scope="module")
def fitted_input(benchmark_split):
    X = benchmark_split[0]
    init = SomGrid.initialise(30, 70, X, seed=0)
    return X, init, fit_input_som(init, X, SomSchedule(), seed=0)


class TestBmu:
    def test_exact_match(self, gen):
        grid = SomGrid(30, 70, gen.normal(size=(2100, 4)) + 100.0)
        grid.weights[3 * 70 + 5] = [1.0, 2.0, 3.0, 4.0]
        assert find_bmu(grid, [1.0, 2.0, 3.0, 4.0]) == (3, 5)

    def test_tie_goes_to_lowest_row(self, gen):
        grid = SomGrid(30, 70, np.full((2100, 2), 50.0))
        grid.weights[0 * 70 + 9] = [1.0, 0.0]
        grid.weights[2 * 70 + 1] = [-1.0, 0.0]
        assert find_bmu(grid, [0.0, 0.0]) == (0, 9)
        assert bmu_indices(grid, np.zeros((1, 2)))[0] == 9

    def test_matches_exhaustive_scan(self, gen):
        grid = SomGrid(30, 70, gen.normal(size=(2100, 5)))
        Q = gen.normal(size=(10, 5))
        flat = bmu_indices(grid, Q)
        for q, f in zip(Q, flat):
            b = brute_bmu(grid.weights, q)
            assert f == b and find_bmu(grid, q) == divmod(b, 70)

    def test_width_mismatch(self, gen):
        grid = SomGrid(2, 2, gen.normal(size=(4, 3)))
        with pytest.raises(ValueError):
            find_bmu(grid, [0.0, 1.0])
        with pytest.raises(ValueError):
            bmu_indices(grid, np.zeros((2, 2)))


class TestNeighborhood:
    def test_values(self):
        assert neighborhood_weight(0.0, 3.0) == 1.0
        assert neighborhood_weight(3.0, 3.0) == pytest.approx(np.exp(-0.5), rel=1e-15)
        assert neighborhood_weight(30.0, 3.0) < 1e-21

    def test_strictly_decreasing(self):
        w = neighborhood_weight(np.linspace(0, 5, 50), 2.0)
        assert np.all(np.diff(w) < 0)

    def test_rejects_bad_radius(self):
        with pytest.raises(ValueError):
            neighborhood_weight(1.0, 0.0)


class TestSchedule:
    def test_endpoints(self):
        s = SomSchedule()
        a = s.alphas(5000)
        r = s.radii(5000, 30, 70)
        assert a[0] == 0.4 and abs(a[-1] - 0.005) < 1e-12
        assert r[0] == 35.0 and abs(r[-1] - 1.0) < 1e-12
        assert abs(s.alphas(8000)[-1] - 0.005) < 1e-12
        assert np.all(np.diff(a) < 0) and np.all(np.diff(r) < 0)

    def test_exponential_form(self):
        a = SomSchedule().alphas(11)
        assert a[5] == pytest.approx(0.4 * (0.005 / 0.4) ** 0.5, rel=1e-12)

    @pytest.mark.parametrize("kw", [{"alpha_start": 0.1, "alpha_end": 0.2}, {"alpha_end": 0.0},
                                    {"radius_end": 0.5}, {"radius_start": 2.0, "radius_end": 3.0},
                                    {"n_iter_input": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SomSchedule(**kw)


class TestInputSom:
    def test_single_point_collapse(self, gen):
        x = np.array([[0.3, -1.2, 2.0]])
        grid = SomGrid(5, 7, gen.normal(size=(35, 3)))
        fitted = fit_input_som(grid, x, SomSchedule(n_iter_input=3000, radius_end=3.0), seed=1)
        assert np.abs(fitted.weights - x).max() < 1e-3
        assert quantization_error(fitted, x) < 1e-3

    def test_zero_rate_is_identity(self, gen):
        grid = SomGrid(4, 4, gen.normal(size=(16, 2)))
        fitted = fit_input_som(grid, gen.normal(size=(10, 2)), FROZEN, seed=0)
        assert np.array_equal(fitted.weights, grid.weights)

    def test_empty_input(self, gen):
        with pytest.raises(ValueError):
            fit_input_som(SomGrid(2, 2, np.zeros((4, 2))), np.zeros((0, 2)), SomSchedule(), seed=0)

    def test_quantization_error_drops_on_benchmark(self, fitted_input):
        X, init, fitted = fitted_input
        assert quantization_error(fitted, X) < quantization_error(init, X)

    def test_weights_stay_in_data_hull(self, fitted_input):
        X, init, fitted = fitted_input
        lo = np.minimum(X.min(axis=0), init.weights.min(axis=0))
        hi = np.maximum(X.max(axis=0), init.weights.max(axis=0))
        assert np.all(fitted.weights >= lo - 1e-12) and np.all(fitted.weights <= hi + 1e-12)

    def test_input_grid_untouched(self, fitted_input):
        X, init, fitted = fitted_input
        assert np.array_equal(init.weights, SomGrid.initialise(30, 70, X, seed=0).weights)

    def test_deterministic(self, gen):
        X = gen.normal(size=(30, 3))
        grid = SomGrid.initialise(5, 6, X, seed=2)
        a = fit_input_som(grid, X, SomSchedule(n_iter_input=200), seed=2)
        b = fit_input_som(grid, X, SomSchedule(n_iter_input=200), seed=2)
        assert np.array_equal(a.weights, b.weights)


class TestOutputSom:
    def test_constant_target(self, fitted_input):
        X, _, grid = fitted_input
        y = np.full(len(X), 17.25)
        out = fit_output_som(grid, np.full(grid.n_neurons, y.mean()), X, y, SomSchedule(), seed=0)
        assert np.abs(out - 17.25).max() <= 1e-9

    def test_zero_rate_keeps_initialisation(self, gen):
        X = gen.normal(size=(10, 2))
        grid = SomGrid.initialise(3, 3, X, seed=0)
        out = fit_output_som(grid, np.full(9, 0.5), X, gen.normal(size=10), FROZEN, seed=0)
        assert np.all(out == 0.5)

    def test_input_map_frozen(self, gen):
        X = gen.normal(size=(20, 3))
        grid = SomGrid.initialise(4, 5, X, seed=0)
        before = grid.weights.tobytes()
        fit_output_som(grid, np.zeros(20), X, gen.normal(size=20), SomSchedule(n_iter_output=300), seed=0)
        assert grid.weights.tobytes() == before

    def test_two_clusters(self):
        grid = SomGrid(1, 20, np.linspace(0.0, 1.0, 20)[:, None])
        X = np.array([[0.0], [1.0]])
        y = np.array([0.0, 1.0])
        out = fit_output_som(grid, np.full(20, 0.5), X, y, SomSchedule(), seed=3)
        assert out[0] < 0.05 and out[-1] > 0.95
        assert np.all(np.diff(out) >= 0)


class TestPredict:
    def test_lookup_matches_brute_force(self, gen):
        X = gen.normal(size=(40, 4))
        y = gen.normal(size=40)
        model = SOMRegressor({"rows": 6, "cols": 8, "n_iter_input": 500, "n_iter_output": 800}, seed=1).fit(X, y)
        Q = gen.normal(size=(50, 4)) * 2
        expected = [model.output_[brute_bmu(model.grid_.weights, q)] for q in Q]
        assert np.array_equal(model.predict(Q), expected)
        assert np.array_equal(predict_som(model.grid_, model.output_, Q), expected)

    def test_training_point_returns_its_cell(self, gen):
        X = gen.normal(size=(15, 2))
        model = SOMRegressor({"rows": 3, "cols": 4, "n_iter_input": 100, "n_iter_output": 100}).fit(X, gen.normal(size=15))
        b = bmu_indices(model.grid_, X[:1])[0]
        assert model.predict(X[:1])[0] == model.output_[b]


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 25), st.integers(0, 2 ** 32))
def test_predictions_within_target_range(n, seed):
    g = np.random.default_rng(seed)
    X = g.normal(size=(n, 3))
    y = g.uniform(-5, 5, size=n)
    model = SOMRegressor({"rows": 4, "cols": 5, "n_iter_input": 60, "n_iter_output": 80}, seed=seed).fit(X, y)
    pred = model.predict(g.normal(size=(30, 3)) * 3)
    assert np.all(pred >= y.min() - 1e-12) and np.all(pred <= y.max() + 1e-12)
