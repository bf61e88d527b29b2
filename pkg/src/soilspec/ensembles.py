"""Tree ensembles: random forest, extra trees, AdaBoost.R2 and Huber gradient boosting."""

import numpy as np

from . import rng
from .base import Param, Regressor, non_negative_number, optional, positive_int, positive_number
from .tree import Tree, TreeParams, bootstrap_indices, fit_cart, resolve_max_features


def _max_features_ok(v):
    if v in ("all", "third", "sqrt"):
        return True
    if isinstance(v, float):
        return 0.0 < v <= 1.0
    return positive_int(v)


def weighted_median(predictions, weights):
    """Weighted median across learners for every row.

    ``predictions`` is (n_rows, n_learners). The result for a row is the
    smallest learner prediction whose cumulative weight reaches half the
    total.
    """
    predictions = np.atleast_2d(np.asarray(predictions, dtype=float))
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(predictions, axis=1, kind="stable")
    cdf = np.cumsum(weights[order], axis=1)
    pick = np.argmax(cdf >= 0.5 * cdf[:, -1:], axis=1)
    rows = np.arange(predictions.shape[0])
    return predictions[rows, order[rows, pick]]


class TreeEnsemble(Regressor):
    """Shared storage, serialisation and importances of tree ensembles."""

    def _tree_weights(self):
        return np.ones(len(self.trees_))

    def feature_importances(self):
        """Per-tree normalised impurity importances averaged over trees, summing to 1.

        An ensemble without any split yields the all-zero vector.
        """
        if self.n_features_ is None:
            raise ValueError(f"{self.kind} model is not fitted")
        imp = np.zeros(self.n_features_)
        for tree, w in zip(self.trees_, self._tree_weights()):
            imp += w * tree.feature_importances()
        total = imp.sum()
        return imp / total if total > 0 else imp

    def _tree_state(self):
        return [t.to_dict() for t in self.trees_]

    def get_state(self):
        return {"trees": self._tree_state()}

    def set_state(self, state):
        self.trees_ = [Tree.from_dict(t) for t in state["trees"]]


class _AveragingForest(TreeEnsemble):
    split_mode = "exhaustive"

    def fit(self, X, y):
        X, y = self._check_fit_input(X, y, min_rows=2)
        p = self.params
        params = TreeParams(max_depth=p["max_depth"], min_samples_split=p["min_samples_split"],
                            split_mode=self.split_mode,
                            max_features=resolve_max_features(p["max_features"], X.shape[1]))
        self.trees_ = []
        for i in range(p["n_estimators"]):
            state = rng.make_state(rng.derive_seed(self.seed, "tree", i))
            sample = bootstrap_indices(X.shape[0], state) if p["bootstrap"] else None
            self.trees_.append(fit_cart(X, y, params, sample_indices=sample, state=state))
        return self

    def _predict(self, X):
        X = np.ascontiguousarray(X)
        out = np.zeros(X.shape[0])
        for tree in self.trees_:
            out += tree.predict(X)
        return out / len(self.trees_)


class RandomForest(_AveragingForest):
    """Bootstrap-aggregated CART trees with per-node feature subsampling."""

    kind = "rf"
    split_mode = "exhaustive"
    PARAMS = {
        "n_estimators": Param(1000, "number of trees", positive_int),
        "max_features": Param("third", "candidate features per split", _max_features_ok),
        "max_depth": Param(None, "maximum depth (None = unbounded)", optional(lambda v: v >= 0)),
        "min_samples_split": Param(2, "minimum node size to split", lambda v: positive_int(v) and v >= 2),
        "bootstrap": Param(True, "resample the training set per tree", choices=(True, False)),
    }


class ExtraTrees(_AveragingForest):
    """Extremely randomised trees: one random threshold per candidate feature, no bootstrap."""

    kind = "et"
    split_mode = "random_threshold"
    PARAMS = dict(RandomForest.PARAMS, bootstrap=Param(False, "resample the training set per tree",
                                                       choices=(True, False)))


class AdaBoostR2(TreeEnsemble):
    """AdaBoost.R2 on weighted bootstrap resamples, aggregated by weighted median."""

    kind = "adaboost"
    PARAMS = {
        "n_estimators": Param(150, "maximum number of boosting rounds", positive_int),
        "learning_rate": Param(3.0, "exponent scale of the weight update", positive_number),
        "loss": Param("linear", "per-sample loss", choices=("linear", "square", "exponential")),
        "max_depth": Param(3, "depth of each CART learner", optional(lambda v: v >= 0)),
    }

    def fit(self, X, y):
        X, y = self._check_fit_input(X, y, min_rows=2)
        p = self.params
        lr = p["learning_rate"]
        n = X.shape[0]
        gen = rng.numpy_rng(self.seed, "adaboost", "resample")
        w = np.full(n, 1.0 / n)
        self.trees_ = []
        self.estimator_weights_ = []
        self.sample_weight_history_ = [w.copy()]
        self.average_losses_ = []
        self.stop_reason_ = "n_estimators"
        tree_params = TreeParams(max_depth=p["max_depth"])
        for rnd in range(p["n_estimators"]):
            sample = gen.choice(n, size=n, replace=True, p=w)
            tree = fit_cart(X, y, tree_params, seed=rng.derive_seed(self.seed, "tree", rnd),
                            sample_indices=sample)
            err = np.abs(tree.predict(X) - y)
            err_max = err.max()
            if err_max <= 0:
                self.trees_.append(tree)
                self.estimator_weights_.append(1.0)
                self.stop_reason_ = "perfect_fit"
                break
            loss = err / err_max
            if p["loss"] == "square":
                loss = loss ** 2
            elif p["loss"] == "exponential":
                loss = 1.0 - np.exp(-loss)
            avg = float(w @ loss)
            self.average_losses_.append(avg)
            if avg <= 0:
                self.trees_.append(tree)
                self.estimator_weights_.append(1.0)
                self.stop_reason_ = "perfect_fit"
                break
            if avg >= 0.5:
                # a learner no better than chance is discarded unless it is the only one
                if not self.trees_:
                    self.trees_.append(tree)
                    self.estimator_weights_.append(1.0)
                self.stop_reason_ = "average_loss"
                break
            beta = avg / (1.0 - avg)
            self.trees_.append(tree)
            self.estimator_weights_.append(lr * np.log(1.0 / beta))
            w = w * np.power(beta, (1.0 - loss) * lr)
            w /= w.sum()
            self.sample_weight_history_.append(w.copy())
        self.estimator_weights_ = np.array(self.estimator_weights_)
        return self

    def _tree_weights(self):
        return self.estimator_weights_

    def _predict(self, X):
        X = np.ascontiguousarray(X)
        preds = np.column_stack([t.predict(X) for t in self.trees_])
        return weighted_median(preds, self.estimator_weights_)

    def get_state(self):
        return {"trees": self._tree_state(), "estimator_weights": self.estimator_weights_.tolist()}

    def set_state(self, state):
        super().set_state(state)
        self.estimator_weights_ = np.array(state["estimator_weights"], dtype=float)


def huber_loss(residual, delta):
    a = np.abs(residual)
    return float(np.mean(np.where(a <= delta, 0.5 * residual ** 2, delta * (a - 0.5 * delta))))


class GradientBoosting(TreeEnsemble):
    """Stage-wise boosting of shallow CART trees on the Huber (or squared) loss.

    The Huber threshold is the ``alpha`` quantile of the current absolute
    residuals, recomputed every stage. Leaf values are refit by a one-step
    Huber line search: leaf median plus the mean clipped deviation from it.
    """

    kind = "gb"
    PARAMS = {
        "n_estimators": Param(1000, "number of boosting stages", lambda v: isinstance(v, int) and v >= 0),
        "learning_rate": Param(0.1, "shrinkage per stage", non_negative_number),
        "loss": Param("huber", "stage loss", choices=("huber", "squared_error")),
        "max_depth": Param(2, "depth of each stage tree", optional(lambda v: v >= 0)),
        "alpha": Param(0.9, "quantile of |residual| used as Huber threshold",
                       lambda v: isinstance(v, float) and 0.0 < v <= 1.0),
    }

    def fit(self, X, y):
        X, y = self._check_fit_input(X, y, min_rows=2)
        p = self.params
        self.init_ = float(np.median(y))
        F = np.full(y.size, self.init_)
        self.trees_ = []
        self.deltas_ = []
        self.stage_losses_ = []
        tree_params = TreeParams(max_depth=p["max_depth"])
        huber = p["loss"] == "huber"
        for stage in range(p["n_estimators"]):
            r = y - F
            if huber:
                delta = float(np.quantile(np.abs(r), p["alpha"]))
                grad = np.where(np.abs(r) <= delta, r, delta * np.sign(r))
            else:
                delta = np.inf
                grad = r
            tree = fit_cart(X, grad, tree_params, seed=rng.derive_seed(self.seed, "tree", stage))
            leaves = tree.apply(X)
            if huber:
                value = tree.value.copy()
                for leaf in np.unique(leaves):
                    diff = r[leaves == leaf]
                    med = np.median(diff)
                    dev = diff - med
                    value[leaf] = med + np.mean(np.sign(dev) * np.minimum(np.abs(dev), delta))
                tree.value = value
            before = huber_loss(r, delta) if huber else float(np.mean(r ** 2))
            F = F + p["learning_rate"] * tree.value[leaves]
            r = y - F
            after = huber_loss(r, delta) if huber else float(np.mean(r ** 2))
            self.trees_.append(tree)
            self.deltas_.append(delta)
            self.stage_losses_.append((before, after))
        return self

    def _predict(self, X):
        X = np.ascontiguousarray(X)
        out = np.full(X.shape[0], self.init_)
        for tree in self.trees_:
            out += self.params["learning_rate"] * tree.predict(X)
        return out

    def staged_predict(self, X):
        X = np.ascontiguousarray(self._check_predict_input(X))
        out = np.full(X.shape[0], self.init_)
        yield out.copy()
        for tree in self.trees_:
            out += self.params["learning_rate"] * tree.predict(X)
            yield out.copy()

    def get_state(self):
        return {"init": self.init_, "trees": self._tree_state()}

    def set_state(self, state):
        super().set_state(state)
        self.init_ = float(state["init"])
