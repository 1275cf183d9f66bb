"""Learning tasks with hand-written gradients.

Every task works on a flat parameter vector and exposes the mean mini-batch
gradient that honest workers clip, the global honest loss (the average of
per-worker empirical losses), and, where it is known, its infimum.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from cafcor.errors import UnsupportedMetricError


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.X)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx])


class Task:
    """Base class; subclasses fill in the maths."""

    kind = "base"
    mu: float | None = None
    L: float | None = None
    classifies = False

    dim: int

    def init_params(self) -> np.ndarray:
        return np.zeros(self.dim)

    def batch_grad(self, theta: np.ndarray, data: Dataset) -> np.ndarray:
        raise NotImplementedError

    def loss(self, theta: np.ndarray, data: Dataset) -> float:
        raise NotImplementedError

    def honest_loss(self, theta: np.ndarray, shards: list[Dataset]) -> float:
        return float(np.mean([self.loss(theta, s) for s in shards]))

    def honest_grad(self, theta: np.ndarray, shards: list[Dataset]) -> np.ndarray:
        return np.mean([self.batch_grad(theta, s) for s in shards], axis=0)

    def optimum(self, shards: list[Dataset]) -> float:
        raise UnsupportedMetricError(f"task {self.kind!r} has no known optimal loss")

    def gap(self, theta: np.ndarray, shards: list[Dataset]) -> float:
        return max(self.honest_loss(theta, shards) - self.optimum(shards), 0.0)

    def accuracy(self, theta: np.ndarray, data: Dataset) -> float:
        raise UnsupportedMetricError(f"task {self.kind!r} is not a classifier")


class QuadraticTask(Task):
    """Per-example loss ``0.5 * sum_k a_k (theta_k - x_k)**2``.

    The diagonal curvature ``a`` is shared, so the honest loss is a quadratic
    centred on the average of the worker means, with ``mu = min(a)`` and
    ``L = max(a)``.
    """

    kind = "quadratic"

    def __init__(self, curvature, theta0=None):
        self.a = np.asarray(curvature, dtype=np.float64)
        self.dim = len(self.a)
        self.mu = float(self.a.min())
        self.L = float(self.a.max())
        self._theta0 = None if theta0 is None else np.asarray(theta0, dtype=np.float64)

    def init_params(self) -> np.ndarray:
        return np.zeros(self.dim) if self._theta0 is None else self._theta0.copy()

    def batch_grad(self, theta, data):
        return self.a * (theta - data.X.mean(axis=0))

    def loss(self, theta, data):
        diff = theta - data.X
        return float(0.5 * np.mean(np.sum(self.a * diff * diff, axis=1)))

    def minimizer(self, shards) -> np.ndarray:
        return np.mean([s.X.mean(axis=0) for s in shards], axis=0)

    def optimum(self, shards):
        return self.honest_loss(self.minimizer(shards), shards)

    def gap(self, theta, shards):
        diff = theta - self.minimizer(shards)
        return float(0.5 * np.sum(self.a * diff * diff))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class LogisticTask(Task):
    """Multinomial logistic regression with an l2 penalty.

    Parameters are a ``(K, p + 1)`` matrix (bias last) stored flat. The
    penalty makes the loss ``reg``-strongly convex; ``L`` uses the bound
    ``max ||x||^2 / 2 + reg`` on the softmax Hessian.
    """

    kind = "logistic"
    classifies = True

    def __init__(self, num_features: int, num_classes: int, reg: float = 1e-4, feature_norm_sq: float = 1.0):
        self.p = num_features + 1
        self.K = num_classes
        self.reg = reg
        self.dim = self.K * self.p
        self.mu = reg if reg > 0 else None
        self.L = 0.5 * (feature_norm_sq + 1.0) + reg

    def _design(self, X):
        return np.hstack([X, np.ones((len(X), 1))])

    def batch_grad(self, theta, data):
        Xd = self._design(data.X)
        P = _softmax(Xd @ theta.reshape(self.K, self.p).T)
        P[np.arange(len(P)), data.y] -= 1.0
        G = P.T @ Xd / len(Xd)
        return G.ravel() + self.reg * theta

    def loss(self, theta, data):
        Xd = self._design(data.X)
        Z = Xd @ theta.reshape(self.K, self.p).T
        Z = Z - Z.max(axis=1, keepdims=True)
        logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
        nll = -np.mean(logp[np.arange(len(Z)), data.y])
        return float(nll + 0.5 * self.reg * theta @ theta)

    def _hessp(self, theta, v, shards):
        out = np.zeros_like(theta)
        W = theta.reshape(self.K, self.p)
        V = v.reshape(self.K, self.p)
        for s in shards:
            Xd = self._design(s.X)
            P = _softmax(Xd @ W.T)
            U = Xd @ V.T
            R = P * (U - np.sum(P * U, axis=1, keepdims=True))
            out += (R.T @ Xd).ravel() / len(Xd)
        return out / len(shards) + self.reg * v

    def solve(self, shards, gtol: float = 1e-10) -> tuple[np.ndarray, float]:
        """Minimise the honest loss offline to gradient norm ``gtol``.

        A trust-region Krylov solve gets close; plain Newton steps with a CG
        inner solve then polish, since the loss is strongly convex.
        """
        from scipy.optimize import minimize
        from scipy.sparse.linalg import LinearOperator, cg

        with warnings.catch_warnings():
            # The Krylov subproblem solver can emit harmless overflow notices.
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(
                lambda th: self.honest_loss(th, shards),
                self.init_params(),
                jac=lambda th: self.honest_grad(th, shards),
                hessp=lambda th, v: self._hessp(th, v, shards),
                method="trust-krylov",
                options={"gtol": gtol, "maxiter": 200},
            )
        theta = res.x
        for _ in range(50):
            g = self.honest_grad(theta, shards)
            if np.linalg.norm(g) <= gtol:
                break
            H = LinearOperator((self.dim, self.dim), matvec=lambda v, th=theta: self._hessp(th, v, shards))
            step, _ = cg(H, -g, rtol=1e-12, atol=0.0, maxiter=10 * self.dim)
            theta = theta + step
        return theta, self.honest_loss(theta, shards)

    def optimum(self, shards):
        if self.reg <= 0:
            raise UnsupportedMetricError("unregularised logistic loss has no attained optimum")
        return self.solve(shards)[1]

    def accuracy(self, theta, data):
        pred = np.argmax(self._design(data.X) @ theta.reshape(self.K, self.p).T, axis=1)
        return float(np.mean(pred == data.y))


class MLPTask(Task):
    """One hidden tanh layer followed by a softmax output."""

    kind = "mlp"
    classifies = True

    def __init__(self, num_features: int, num_classes: int, hidden: int = 32, reg: float = 1e-4, init_seed: int = 0):
        self.p, self.K, self.h = num_features, num_classes, hidden
        self.reg = reg
        self.init_seed = init_seed
        self.shapes = [(hidden, num_features), (hidden,), (num_classes, hidden), (num_classes,)]
        self.dim = sum(int(np.prod(s)) for s in self.shapes)

    def _unpack(self, theta):
        out, k = [], 0
        for s in self.shapes:
            size = int(np.prod(s))
            out.append(theta[k : k + size].reshape(s))
            k += size
        return out

    def init_params(self):
        rng = np.random.default_rng(self.init_seed)
        W1 = rng.normal(0, 1 / np.sqrt(self.p), (self.h, self.p))
        W2 = rng.normal(0, 1 / np.sqrt(self.h), (self.K, self.h))
        return np.concatenate([W1.ravel(), np.zeros(self.h), W2.ravel(), np.zeros(self.K)])

    def _forward(self, theta, X):
        W1, b1, W2, b2 = self._unpack(theta)
        H = np.tanh(X @ W1.T + b1)
        return H, H @ W2.T + b2

    def batch_grad(self, theta, data):
        W1, b1, W2, b2 = self._unpack(theta)
        H, Z = self._forward(theta, data.X)
        P = _softmax(Z)
        P[np.arange(len(P)), data.y] -= 1.0
        P /= len(P)
        gW2 = P.T @ H
        gb2 = P.sum(axis=0)
        dH = (P @ W2) * (1.0 - H * H)
        gW1 = dH.T @ data.X
        gb1 = dH.sum(axis=0)
        return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2]) + self.reg * theta

    def loss(self, theta, data):
        _, Z = self._forward(theta, data.X)
        Z = Z - Z.max(axis=1, keepdims=True)
        logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
        return float(-np.mean(logp[np.arange(len(Z)), data.y]) + 0.5 * self.reg * theta @ theta)

    def accuracy(self, theta, data):
        _, Z = self._forward(theta, data.X)
        return float(np.mean(np.argmax(Z, axis=1) == data.y))


@dataclass
class Problem:
    """A task bound to its honest shards and optional held-out data."""

    task: Task
    shards: list[Dataset]
    test: Dataset | None = None
    meta: dict = field(default_factory=dict)
    _optimum: float | None = field(default=None, repr=False)

    def optimum(self) -> float:
        if self._optimum is None:
            self._optimum = self.task.optimum(self.shards)
        return self._optimum

    def gap(self, theta: np.ndarray) -> float:
        if isinstance(self.task, QuadraticTask):
            return self.task.gap(theta, self.shards)
        return max(self.task.honest_loss(theta, self.shards) - self.optimum(), 0.0)
