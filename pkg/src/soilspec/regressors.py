"""Non-tree regressors: least squares, PLS, k-NN, epsilon-SVR and a dense network."""

import logging
import warnings

import numba
import numpy as np

from . import rng
from .base import (FitError, Param, Regressor, non_negative_number, positive_int,
                   positive_number)

log = logging.getLogger(__name__)


class LinearRegression(Regressor):
    """Ordinary least squares with intercept.

    Solved on centred data with an SVD-based least-squares routine, which
    returns the minimum-norm weights when the design is rank deficient.
    """

    kind = "linear"
    PARAMS = {}

    def fit(self, X, y):
        X, y = self._check_fit_input(X, y)
        x_mean = X.mean(axis=0)
        y_mean = y.mean()
        self.weights_, *_ = np.linalg.lstsq(X - x_mean, y - y_mean, rcond=None)
        self.intercept_ = float(y_mean - x_mean @ self.weights_)
        return self

    def _predict(self, X):
        return X @ self.weights_ + self.intercept_

    def get_state(self):
        return {"weights": self.weights_.tolist(), "intercept": self.intercept_}

    def set_state(self, state):
        self.weights_ = np.array(state["weights"], dtype=float)
        self.intercept_ = float(state["intercept"])


class PLSRegression(Regressor):
    """Single-target partial least squares via NIPALS with X deflation."""

    kind = "pls"
    PARAMS = {
        "n_components": Param(10, "number of latent components", positive_int),
        "max_iter": Param(100, "inner NIPALS iterations per component", positive_int),
        "tol": Param(1e-7, "convergence tolerance on the weight vector", positive_number),
    }

    def fit(self, X, y):
        X, y = self._check_fit_input(X, y, min_rows=2)
        n, d = X.shape
        budget = min(n - 1, d)
        n_comp = self.params["n_components"]
        if n_comp > budget:
            warnings.warn(f"PLS: {n_comp} components exceed rank bound {budget}; truncating")
            n_comp = budget
        self.x_mean_ = X.mean(axis=0)
        self.y_mean_ = float(y.mean())
        Xk = X - self.x_mean_
        yc = y - self.y_mean_
        W, P, Q = [], [], []
        scale = np.abs(Xk).max() or 1.0
        for a in range(n_comp):
            u = yc
            w = np.zeros(d)
            for _ in range(self.params["max_iter"]):
                w_new = Xk.T @ u
                norm = np.linalg.norm(w_new)
                if norm <= 1e-12 * scale * max(np.linalg.norm(u), 1.0):
                    w = None
                    break
                w_new /= norm
                t = Xk @ w_new
                q = (yc @ t) / (t @ t)
                u = yc / q if q != 0 else yc
                converged = np.linalg.norm(w_new - w) < self.params["tol"]
                w = w_new
                if converged:
                    break
            if w is None:
                warnings.warn(f"PLS: residual covariance vanished after {a} components; truncating")
                break
            t = Xk @ w
            tt = t @ t
            p = Xk.T @ t / tt
            Xk = Xk - np.outer(t, p)
            W.append(w)
            P.append(p)
            Q.append((yc @ t) / tt)
        self.x_weights_ = np.array(W).reshape(-1, d)
        self.x_loadings_ = np.array(P).reshape(-1, d)
        self.y_loadings_ = np.array(Q)
        self._set_coef()
        return self

    def _set_coef(self):
        W = self.x_weights_.T
        P = self.x_loadings_.T
        if W.shape[1] == 0:
            self.coef_ = np.zeros(W.shape[0])
        else:
            self.coef_ = W @ np.linalg.solve(P.T @ W, self.y_loadings_)

    def _predict(self, X):
        return (X - self.x_mean_) @ self.coef_ + self.y_mean_

    def get_state(self):
        return {"x_mean": self.x_mean_.tolist(), "y_mean": self.y_mean_,
                "x_weights": self.x_weights_.tolist(), "x_loadings": self.x_loadings_.tolist(),
                "y_loadings": self.y_loadings_.tolist()}

    def set_state(self, state):
        d = self.n_features_
        self.x_mean_ = np.array(state["x_mean"], dtype=float)
        self.y_mean_ = float(state["y_mean"])
        self.x_weights_ = np.array(state["x_weights"], dtype=float).reshape(-1, d)
        self.x_loadings_ = np.array(state["x_loadings"], dtype=float).reshape(-1, d)
        self.y_loadings_ = np.array(state["y_loadings"], dtype=float)
        self._set_coef()


class KNNRegressor(Regressor):
    """Inverse-distance weighted k-nearest neighbours with exact brute-force search.

    A query that coincides with one or more training points returns the mean
    of their targets. Ties at the k-th distance go to the lower training index.
    """

    kind = "knn"
    PARAMS = {
        "n_neighbors": Param(6, "number of neighbours", positive_int),
        "weights": Param("distance", "neighbour weighting", choices=("distance", "uniform")),
        "leaf_size": Param(1, "accepted for compatibility; search is always brute force", positive_int),
    }
    _CHUNK = 64

    def fit(self, X, y):
        k = self.params["n_neighbors"]
        X, y = self._check_fit_input(X, y, min_rows=k)
        log.info("knn: leaf_size=%s ignored, using exact brute-force search", self.params["leaf_size"])
        self.X_ = X.copy()
        self.y_ = y.copy()
        return self

    def kneighbors(self, X):
        """Distances and indices of the k nearest training rows per query."""
        k = self.params["n_neighbors"]
        dist = np.empty((X.shape[0], k))
        ind = np.empty((X.shape[0], k), dtype=np.int64)
        for s in range(0, X.shape[0], self._CHUNK):
            block = X[s:s + self._CHUNK]
            full = np.sqrt(((block[:, None, :] - self.X_[None, :, :]) ** 2).sum(axis=2))
            order = np.argsort(full, axis=1, kind="stable")[:, :k]
            ind[s:s + self._CHUNK] = order
            dist[s:s + self._CHUNK] = np.take_along_axis(full, order, axis=1)
        return dist, ind

    def _predict(self, X):
        dist, ind = self.kneighbors(X)
        targets = self.y_[ind]
        if self.params["weights"] == "uniform":
            return targets.mean(axis=1)
        out = np.empty(X.shape[0])
        exact = dist[:, 0] == 0.0
        if np.any(exact):
            for i in np.flatnonzero(exact):
                hit = np.all(self.X_ == X[i], axis=1)
                out[i] = self.y_[hit].mean()
        rest = ~exact
        w = 1.0 / dist[rest]
        out[rest] = (w * targets[rest]).sum(axis=1) / w.sum(axis=1)
        return out

    def get_state(self):
        return {"X": self.X_.tolist(), "y": self.y_.tolist()}

    def set_state(self, state):
        self.X_ = np.array(state["X"], dtype=float).reshape(-1, self.n_features_)
        self.y_ = np.array(state["y"], dtype=float)


def rbf_kernel(A, B, gamma):
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@numba.njit(cache=True)
def _smo(K, z, C, eps, tol, max_iter):
    # Dual over 2n variables a = (alpha, alpha*) with labels s = (+1, -1):
    # minimise 0.5 a'Qa + p'a  s.t.  s'a = 0, 0 <= a <= C,  Q_ij = s_i s_j K.
    n = z.size
    m = 2 * n
    a = np.zeros(m)
    s = np.empty(m)
    G = np.empty(m)
    for t in range(n):
        s[t] = 1.0
        s[t + n] = -1.0
        G[t] = eps - z[t]
        G[t + n] = eps + z[t]
    tau = 1e-12
    it = 0
    converged = False
    while it < max_iter:
        gmax = -np.inf
        i = -1
        for t in range(m):
            if (s[t] > 0 and a[t] < C) or (s[t] < 0 and a[t] > 0):
                v = -s[t] * G[t]
                if v >= gmax:
                    gmax = v
                    i = t
        gmax2 = -np.inf
        j = -1
        best = np.inf
        ii = i % n if i >= 0 else 0
        for t in range(m):
            if (s[t] > 0 and a[t] > 0) or (s[t] < 0 and a[t] < C):
                v = s[t] * G[t]
                if v > gmax2:
                    gmax2 = v
                b = gmax + v
                if b > 0 and i >= 0:
                    tt = t % n
                    quad = K[ii, ii] + K[tt, tt] - 2.0 * K[ii, tt]
                    if quad <= 0:
                        quad = tau
                    obj = -(b * b) / quad
                    if obj <= best:
                        best = obj
                        j = t
        if i < 0 or j < 0 or gmax + gmax2 < tol:
            converged = True
            break
        it += 1
        jj = j % n
        Kij = K[ii, jj]
        old_i = a[i]
        old_j = a[j]
        if s[i] != s[j]:
            quad = K[ii, ii] + K[jj, jj] - 2.0 * Kij
            if quad <= 0:
                quad = tau
            delta = (-G[i] - G[j]) / quad
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = -diff
            if diff > 0:
                if a[i] > C:
                    a[i] = C
                    a[j] = C - diff
            else:
                if a[j] > C:
                    a[j] = C
                    a[i] = C + diff
        else:
            quad = K[ii, ii] + K[jj, jj] - 2.0 * Kij
            if quad <= 0:
                quad = tau
            delta = (G[i] - G[j]) / quad
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > C:
                if a[i] > C:
                    a[i] = C
                    a[j] = total - C
            else:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = total
            if total > C:
                if a[j] > C:
                    a[j] = C
                    a[i] = total - C
            else:
                if a[i] < 0:
                    a[i] = 0.0
                    a[j] = total
        di = a[i] - old_i
        dj = a[j] - old_j
        for t in range(m):
            tt = t % n
            G[t] += s[t] * (s[i] * K[ii, tt] * di + s[j] * K[jj, tt] * dj)

    # bias from free variables, or the middle of the feasible interval
    ub = np.inf
    lb = -np.inf
    n_free = 0
    sum_free = 0.0
    for t in range(m):
        yg = s[t] * G[t]
        if a[t] >= C:
            if s[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif a[t] <= 0:
            if s[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            n_free += 1
            sum_free += yg
    rho = sum_free / n_free if n_free > 0 else 0.5 * (ub + lb)
    beta = a[:n] - a[n:]
    return beta, -rho, it, converged


def svr_dual_objective(K, z, beta, eps):
    """Dual objective 0.5 b'Kb - z'b + eps*|b|_1 (to be minimised)."""
    return 0.5 * beta @ K @ beta - z @ beta + eps * np.abs(beta).sum()


class SVR(Regressor):
    """Epsilon-insensitive support vector regression with an RBF kernel (SMO solver)."""

    kind = "svr"
    PARAMS = {
        "C": Param(26827.0, "box constraint", positive_number),
        "gamma": Param(0.00178, "RBF kernel width", positive_number),
        "epsilon": Param(0.1, "half-width of the insensitive tube (target units)", non_negative_number),
        "tol": Param(1e-3, "KKT violation tolerance", positive_number),
        "max_iter": Param(10_000_000, "iteration cap of the SMO solver", positive_int),
    }

    def fit(self, X, y):
        X, y = self._check_fit_input(X, y, min_rows=2)
        p = self.params
        K = rbf_kernel(X, X, p["gamma"])
        beta, bias, n_iter, converged = _smo(K, y, float(p["C"]), float(p["epsilon"]), float(p["tol"]),
                                             int(p["max_iter"]))
        if not converged:
            warnings.warn(f"SVR: SMO stopped at the iteration cap ({n_iter}) before reaching tol")
        self.n_iter_ = int(n_iter)
        self.converged_ = bool(converged)
        self.objective_ = float(svr_dual_objective(K, y, beta, p["epsilon"]))
        support = beta != 0
        self.support_vectors_ = X[support].copy()
        self.dual_coef_ = beta[support].copy()
        self.intercept_ = float(bias)
        return self

    def _predict(self, X):
        if self.dual_coef_.size == 0:
            return np.full(X.shape[0], self.intercept_)
        return rbf_kernel(X, self.support_vectors_, self.params["gamma"]) @ self.dual_coef_ + self.intercept_

    def get_state(self):
        return {"support_vectors": self.support_vectors_.tolist(), "dual_coef": self.dual_coef_.tolist(),
                "intercept": self.intercept_}

    def set_state(self, state):
        self.support_vectors_ = np.array(state["support_vectors"], dtype=float).reshape(-1, self.n_features_)
        self.dual_coef_ = np.array(state["dual_coef"], dtype=float)
        self.intercept_ = float(state["intercept"])


class MLPRegressor(Regressor):
    """Dense ReLU network with a linear output, trained by Adam on squared error."""

    kind = "mlp"
    PARAMS = {
        "hidden_layers": Param([64, 128, 64, 32], "hidden layer widths",
                               lambda v: len(v) > 0 and all(positive_int(h) for h in v)),
        "epochs": Param(70, "training epochs", positive_int),
        "batch_size": Param(8, "mini-batch size", positive_int),
        "learning_rate": Param(1e-3, "Adam step size", positive_number),
    }
    BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-7

    def init_weights(self, n_in):
        """Uniform He (fan-in) initialisation; zero biases."""
        gen = rng.numpy_rng(self.seed, "mlp", "init")
        widths = [n_in] + list(self.params["hidden_layers"]) + [1]
        self.weights_ = []
        self.biases_ = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = np.sqrt(6.0 / fan_in)
            self.weights_.append(gen.uniform(-limit, limit, (fan_in, fan_out)))
            self.biases_.append(np.zeros(fan_out))
        self.n_features_ = n_in

    def _forward(self, X):
        acts = [X]
        a = X
        last = len(self.weights_) - 1
        for k, (W, b) in enumerate(zip(self.weights_, self.biases_)):
            z = a @ W + b
            a = z if k == last else np.maximum(z, 0.0)
            acts.append(a)
        return acts

    def loss_and_gradients(self, X, y):
        """Mean squared error on (X, y) and its gradients per layer."""
        acts = self._forward(X)
        pred = acts[-1][:, 0]
        resid = pred - y
        loss = float(np.mean(resid ** 2))
        delta = (2.0 / y.size) * resid[:, None]
        gW = [None] * len(self.weights_)
        gb = [None] * len(self.weights_)
        for k in range(len(self.weights_) - 1, -1, -1):
            gW[k] = acts[k].T @ delta
            gb[k] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.weights_[k].T) * (acts[k] > 0)
        return loss, gW, gb

    def fit(self, X, y):
        bs = self.params["batch_size"]
        X, y = self._check_fit_input(X, y, min_rows=bs)
        self.init_weights(X.shape[1])
        params = self.weights_ + self.biases_
        m1 = [np.zeros_like(p) for p in params]
        m2 = [np.zeros_like(p) for p in params]
        lr = self.params["learning_rate"]
        gen = rng.numpy_rng(self.seed, "mlp", "shuffle")
        self.loss_history_ = [self._loss(X, y)]
        step = 0
        n = X.shape[0]
        for epoch in range(self.params["epochs"]):
            order = gen.permutation(n)
            for s in range(0, n, bs):
                batch = order[s:s + bs]
                loss, gW, gb = self.loss_and_gradients(X[batch], y[batch])
                if not np.isfinite(loss):
                    raise FitError(f"mlp: non-finite loss at epoch {epoch}, step {step} "
                                   f"(last finite epoch loss {self.loss_history_[-1]:.6g})")
                step += 1
                c1 = 1.0 - self.BETA1 ** step
                c2 = 1.0 - self.BETA2 ** step
                for p, g, a, b in zip(params, gW + gb, m1, m2):
                    a *= self.BETA1
                    a += (1.0 - self.BETA1) * g
                    b *= self.BETA2
                    b += (1.0 - self.BETA2) * g * g
                    p -= lr * (a / c1) / (np.sqrt(b / c2) + self.ADAM_EPS)
            self.loss_history_.append(self._loss(X, y))
        return self

    def _loss(self, X, y):
        return float(np.mean((self._forward(X)[-1][:, 0] - y) ** 2))

    def _predict(self, X):
        return self._forward(X)[-1][:, 0]

    def get_state(self):
        return {"weights": [W.tolist() for W in self.weights_], "biases": [b.tolist() for b in self.biases_]}

    def set_state(self, state):
        self.weights_ = [np.array(W, dtype=float) for W in state["weights"]]
        self.biases_ = [np.array(b, dtype=float) for b in state["biases"]]
