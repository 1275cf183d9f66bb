"""Deterministic server/worker simulation of robust private training.

Each iteration the server broadcasts the model; honest workers sample a
mini-batch without replacement, clip the averaged gradient, add their noise
and update a local momentum; malicious workers substitute their own vectors;
the server aggregates and takes a step. All randomness is keyed by
``(seed, purpose, worker, t)``, so traces do not depend on execution order
or on the number of threads.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from cafcor import aggregation, attacks, noise, privacy
from cafcor.config import ExperimentConfig
from cafcor.datasets import gaussian_blobs, load_image_dataset, quadratic_points
from cafcor.errors import ConfigError, InvalidParameterError, UnsupportedMetricError
from cafcor.training.partition import partition
from cafcor.training.schedules import Schedule, default_sigma_bar
from cafcor.training.tasks import Dataset, LogisticTask, MLPTask, Problem, QuadraticTask

CSV_HEADER = ("t", "loss", "grad_norm_sq", "accuracy", "gap", "eps")

# Stream tags for derived RNGs.
_DATA, _BATCH, _AGG, _SAMPLE, _SPLIT = 1, 2, 3, 4, 5


def clip(g, C: float) -> np.ndarray:
    """Scale ``g`` down to norm ``C`` if it is longer."""
    if not C > 0:
        raise InvalidParameterError(f"clipping threshold must be > 0, got {C}")
    g = np.asarray(g, dtype=np.float64)
    norm = np.linalg.norm(g)
    if norm <= C:
        return g.copy()
    return g * (C / norm)


def fisher_yates_prefix(rng: np.random.Generator, m: int, b: int) -> np.ndarray:
    """First ``b`` entries of a uniform random permutation of ``range(m)``."""
    if b > m:
        raise InvalidParameterError(f"batch size {b} exceeds dataset size {m}")
    idx = np.arange(m)
    for k in range(b):
        j = int(rng.integers(k, m))
        idx[k], idx[j] = idx[j], idx[k]
    return idx[:b]


@dataclass
class MetricsRow:
    t: int
    loss: float
    grad_norm_sq: float
    accuracy: float = math.nan
    gap: float = math.nan
    eps: float = math.nan

    def values(self) -> tuple:
        return (self.t, self.loss, self.grad_norm_sq, self.accuracy, self.gap, self.eps)


@dataclass
class RunTrace:
    rows: list[MetricsRow]
    theta_hat: np.ndarray
    theta_hat_index: int
    final_theta: np.ndarray
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in self.rows:
            w.writerow([row.t] + [_fmt(v) for v in row.values()[1:]])
        return buf.getvalue()


def _fmt(value: float) -> str:
    return "nan" if math.isnan(value) else format(value, ".17g")


def _rng(seed: int, *words: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, *words])


def build_problem(cfg: ExperimentConfig) -> Problem:
    """Create the task and the honest workers' shards from ``cfg``."""
    tc = cfg.task
    h = cfg.n_honest
    data_rng = _rng(cfg.seed, _DATA)
    test = None
    if tc.kind == "quadratic":
        curvature = np.linspace(tc.mu, tc.L, tc.d)
        pooled = quadratic_points(data_rng, cfg.m * h, tc.d, tc.num_classes, tc.heterogeneity, tc.spread, tc.offset)
        task = QuadraticTask(curvature)
    else:
        if tc.dataset == "synthetic":
            # One draw so train and test share class centres.
            pooled = gaussian_blobs(data_rng, cfg.m * h + tc.test_size, tc.d, tc.num_classes)
            pooled, test = pooled.subset(slice(0, cfg.m * h)), pooled.subset(slice(cfg.m * h, None))
            num_classes = tc.num_classes
        else:
            pooled, test = load_image_dataset(tc.dataset, tc.data_dir, tc.train_size, tc.test_size, tc.flip)
            num_classes = int(max(pooled.y.max(), test.y.max())) + 1
        features = pooled.X.shape[1]
        if tc.kind == "logistic":
            norm_sq = float(np.max(np.sum(pooled.X**2, axis=1)))
            task = LogisticTask(features, num_classes, tc.reg, norm_sq)
        else:
            task = MLPTask(features, num_classes, tc.hidden, tc.reg, init_seed=cfg.seed)
    shards = partition(pooled, h, cfg.partition.scheme, _rng(cfg.seed, _SPLIT), cfg.partition.alpha)
    smallest = min(len(s) for s in shards)
    if cfg.b > smallest:
        raise ConfigError("b", f"batch size {cfg.b} exceeds the smallest worker dataset ({smallest} points)")
    return Problem(task, shards, test, {"num_classes": getattr(task, "K", None)})


def noise_assignment(cfg: ExperimentConfig) -> privacy.NoiseAssignment | None:
    p = cfg.privacy
    if p.mode == "none":
        return None
    if p.mode == "explicit":
        return privacy.NoiseAssignment(p.sigma_cor_sq, p.sigma_ind_sq, p.regime)
    return privacy.calibrate(privacy_params(cfg), p.regime)


def privacy_params(cfg: ExperimentConfig) -> privacy.PrivacyParams:
    p = cfg.privacy
    return privacy.PrivacyParams(
        delta=p.delta,
        T=cfg.T,
        C=cfg.C,
        n=cfg.n,
        f=cfg.f,
        q=cfg.q,
        epsilon=p.epsilon,
        level=p.level,
        batch_size=cfg.b,
    )


def build_schedule(cfg: ExperimentConfig, problem: Problem, assignment) -> Schedule:
    s = cfg.schedule
    mu = s.mu if s.mu is not None else problem.task.mu
    L = s.L if s.L is not None else problem.task.L
    if s.kind == "constant":
        return Schedule("constant", gamma=s.gamma, beta=s.beta)
    if s.kind == "strongly_convex":
        if mu is None or L is None:
            raise ConfigError("schedule.mu", "task has no known strong convexity; set schedule.mu and schedule.L")
        return Schedule("strongly_convex", mu=mu, L=L)
    if L is None:
        raise ConfigError("schedule.L", "set schedule.L for this task")
    theta0 = problem.task.init_params()
    loss_gap = s.loss_gap
    if loss_gap is None:
        loss_gap = problem.task.honest_loss(theta0, problem.shards)
    sigma_bar = s.sigma_bar
    if sigma_bar is None:
        cor = assignment.sigma_cor_sq if assignment else 0.0
        ind = assignment.sigma_ind_sq if assignment else 0.0
        sigma_bar = default_sigma_bar(0.0, problem.task.dim, cfg.n, cfg.f, cor, ind)
    return Schedule("nonconvex", L=L, T=cfg.T, loss_gap=loss_gap, sigma_bar=sigma_bar)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("CAFCOR_THREADS", "1")))
    except ValueError:
        return 1


class Simulation:
    """One configured training run; :meth:`run` executes it."""

    def __init__(self, cfg: ExperimentConfig, problem: Problem | None = None):
        self.cfg = cfg.validate()
        self.problem = problem if problem is not None else build_problem(cfg)
        self.task = self.problem.task
        self.assignment = noise_assignment(cfg)
        self.schedule = build_schedule(cfg, self.problem, self.assignment)
        d = self.task.dim
        if self.assignment is not None:
            self.plan = noise.NoisePlan(self.assignment.sigma_cor_sq, self.assignment.sigma_ind_sq, d)
        else:
            self.plan = noise.NoisePlan(0.0, 0.0, d)
        self.registry = noise.establish(cfg.n, cfg.seed) if cfg.n >= 2 else None
        self.attack = attacks.AttackSpec(cfg.attack.kind, cfg.attack.strength, self.problem.meta.get("num_classes") or 10)
        h = cfg.n_honest
        self.h = h
        # Pipeline attackers replay an honest worker's shard.
        self.mal_shards = [self.problem.shards[j % h] for j in range(cfg.f)]
        self.honest_momentum = np.zeros((h, d))
        self.mal_momentum = np.zeros((cfg.f, d))
        # Set if honest state ever changes between computation and aggregation.
        self.tainted = False

    # -- worker side -------------------------------------------------------

    def _gradient(
        self, worker: int, shard: Dataset, theta: np.ndarray, t: int, poison: str, correlated=None
    ) -> np.ndarray:
        rng = _rng(self.cfg.seed, _BATCH, worker, t)
        idx = fisher_yates_prefix(rng, len(shard), self.cfg.b)
        batch = shard.subset(idx)
        if poison == "lf":
            batch = Dataset(batch.X, self.attack.flip_labels(batch.y))
        g = clip(self.task.batch_grad(theta, batch), self.cfg.C)
        norm = float(np.linalg.norm(g))
        if norm > self.cfg.C * (1 + 1e-12):
            raise AssertionError(f"clipped gradient norm {norm} exceeds C={self.cfg.C}")
        if poison == "sf":
            g = attacks.sign_flip(g)
        if self.plan.enabled:
            g = noise.perturb(g, worker, t, self.registry, self.plan, correlated)
        return g

    def _momentums(self, theta: np.ndarray, t: int, beta_prev: float) -> np.ndarray:
        cfg = self.cfg
        h, f = self.h, cfg.f
        pipeline_attack = self.attack.kind in ("lf", "sf")
        jobs = [(i, self.problem.shards[i], "") for i in range(h)]
        if pipeline_attack:
            jobs += [(h + j, self.mal_shards[j], self.attack.kind) for j in range(f)]
        if t == 0:
            grads = None
        else:
            threads = thread_count()
            sums = None
            if self.plan.sigma_cor_sq > 0:
                sums = noise.correlated_sums(self.registry, t, self.plan)

            def work(job):
                corr = None if sums is None else sums[job[0]]
                return self._gradient(job[0], job[1], theta, t, job[2], corr)

            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    grads = list(pool.map(work, jobs))
            else:
                grads = [work(job) for job in jobs]
            for i in range(h):
                self.honest_momentum[i] = beta_prev * self.honest_momentum[i] + (1 - beta_prev) * grads[i]
            if pipeline_attack:
                for j in range(f):
                    self.mal_momentum[j] = beta_prev * self.mal_momentum[j] + (1 - beta_prev) * grads[h + j]
        honest = self.honest_momentum.copy()
        if f == 0:
            return honest
        if pipeline_attack:
            malicious = self.mal_momentum.copy()
        else:
            # Attackers get a read-only view; any write raises.
            view = self.honest_momentum.view()
            view.flags.writeable = False
            malicious = attacks.craft(self.attack, view, f)
        if not np.array_equal(honest, self.honest_momentum):
            self.tainted = True
        return np.vstack([honest, malicious])

    # -- metrics -----------------------------------------------------------

    def _row(self, t: int, theta: np.ndarray) -> MetricsRow:
        task, prob, m = self.task, self.problem, self.cfg.metrics
        loss = task.honest_loss(theta, prob.shards)
        grad = task.honest_grad(theta, prob.shards)
        row = MetricsRow(t, loss, float(grad @ grad))
        if m.accuracy and task.classifies and prob.test is not None:
            row.accuracy = task.accuracy(theta, prob.test)
        if m.gap:
            try:
                row.gap = prob.gap(theta)
            except UnsupportedMetricError:
                pass
        row.eps = self._spent(t + 1)
        return row

    def _spent(self, steps: int) -> float:
        if self.assignment is None or not self.plan.enabled:
            return math.nan
        params = privacy_params(self.cfg)
        try:
            return privacy.secldp_epsilon(params, self.assignment, steps)[0]
        except privacy.InfeasibleNoiseError:
            return math.inf

    # -- main loop ---------------------------------------------------------

    def run(self) -> RunTrace:
        cfg = self.cfg
        theta = self.task.init_params()
        thetas = []
        rows = []
        beta_prev = 0.0
        for t in range(cfg.T):
            thetas.append(theta)
            with np.errstate(over="ignore", invalid="ignore"):
                row = self._row(t, theta)
            if not (math.isfinite(row.loss) and math.isfinite(row.grad_norm_sq)):
                # Diverged: the remaining rows carry no information.
                rows.extend(MetricsRow(k, math.nan, math.nan, math.nan, math.nan, math.nan) for k in range(t, cfg.T))
                thetas.extend([theta] * (cfg.T - t - 1))
                break
            rows.append(row)
            gamma, beta = self.schedule.at(t)
            batch = self._momentums(theta, t, beta_prev)
            R = aggregation.aggregate(
                cfg.aggregator.name, batch, cfg.f, cfg.aggregator.mode, _rng(cfg.seed, _AGG, t)
            )
            theta = theta - gamma * R
            beta_prev = beta
        k = output_index(cfg.seed, cfg.T)
        meta = {
            "sigma_cor_sq": self.plan.sigma_cor_sq,
            "sigma_ind_sq": self.plan.sigma_ind_sq,
            "privacy_level": cfg.privacy.level,
            "tainted": self.tainted,
        }
        if self.problem._optimum is not None:
            meta["loss_star"] = self.problem._optimum
        return RunTrace(rows, thetas[k], k, theta, meta)


def output_index(seed: int, T: int) -> int:
    """Index of the iterate returned as the final model, uniform on ``range(T)``."""
    return int(_rng(seed, _SAMPLE).integers(T))


def run(cfg: ExperimentConfig) -> RunTrace:
    return Simulation(cfg).run()


def robustness_gap(trace: RunTrace, problem: Problem) -> float:
    """Honest-loss gap of the returned model ``theta_hat``."""
    return max(problem.gap(trace.theta_hat), 0.0)
