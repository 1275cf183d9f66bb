"""End-to-end acceptance checks; each test records one PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from cafcor import aggregation, noise, privacy, synthetic
from cafcor.config import from_flat, load
from cafcor.training.simulator import Simulation, build_problem, run

SEEDS = range(1, 6)


# -------------------------------------------------------------- aggregation


def test_c1_certificate_on_fuzz_corpus(verdict):
    start = time.perf_counter()
    failures = {"exact": 0, "power": 0}
    for k, sb in enumerate(synthetic.fuzz_corpus(2024, 1000)):
        for mode, slack in (("exact", 1.0), ("power", 4.0)):
            out = aggregation.caf(sb.batch, sb.f, mode, np.random.default_rng(k))
            failures[mode] += not aggregation.certify(sb.batch, sb.honest_indices, out, slack).holds
    elapsed = time.perf_counter() - start
    ok = failures == {"exact": 0, "power": 0} and elapsed < 30
    verdict("C1 certificate", ok, f"failures={failures} time={elapsed:.1f}s")
    assert failures == {"exact": 0, "power": 0}
    assert elapsed < 30


def test_c2_degenerate_exactness(verdict):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        n, d = int(rng.integers(2, 20)), int(rng.integers(1, 10))
        x = rng.normal(size=(n, d)) * 10 ** rng.uniform(-3, 3)
        worst = max(worst, np.abs(aggregation.caf(x, 0) - x.mean(axis=0)).max())
        f = int(rng.integers(1, (n - 1) // 2 + 1)) if n >= 3 else 0
        if f:
            point = rng.normal(size=d)
            bad = rng.normal(size=(f, d)) * 10 ** rng.uniform(0, 12)
            batch = np.vstack([np.tile(point, (n - f, 1)), bad])[rng.permutation(n)]
            worst = max(worst, np.abs(aggregation.caf(batch, f) - point).max())
    verdict("C2 degenerate exactness", worst <= 1e-9, f"max_error={worst:.2e}")
    assert worst <= 1e-9


def test_c3_termination(verdict):
    worst = 0
    for k, sb in enumerate(synthetic.fuzz_corpus(2024, 1000)):
        for mode in ("exact", "power"):
            used = aggregation.caf_run(sb.batch, sb.f, mode, np.random.default_rng(k)).state.iterations_used
            worst = max(worst, used - (2 * sb.f + 1))
    verdict("C3 termination", worst <= 0, f"max(iterations - (2f+1))={worst}")
    assert worst <= 0


# ------------------------------------------------------------------ privacy


def test_c4_accountant_reduction(verdict):
    rel = 0.0
    p = privacy.PrivacyParams(delta=1e-5, T=10, C=1.7, n=12, f=3, q=3, epsilon=1.0)
    for alpha in np.arange(1.5, 256.5, 0.5):
        for var in (1e-3, 1.0, 1e4):
            got = privacy.per_step_rdp(alpha, p, privacy.NoiseAssignment(0.0, var, "ldp"))
            want = 2 * alpha * p.C**2 / var
            rel = max(rel, abs(got - want) / want)
    rng = np.random.default_rng(11)
    bad = 0
    for _ in range(200):
        n = int(rng.integers(3, 500))
        f = int(rng.integers(0, (n - 1) // 2 + 1))
        delta = float(10 ** rng.uniform(-9, -2))
        q = privacy.PrivacyParams(
            delta=delta, T=int(rng.integers(1, 10_000)), C=float(10 ** rng.uniform(-2, 2)), n=n, f=f, q=f,
            epsilon=float(rng.uniform(0.01, 0.99) * math.log(1 / delta)),
        )
        a = privacy.calibrate(q, "equal")
        bad += not (privacy.check_theorem1(q, a) and privacy.secldp_epsilon(q, a)[0] <= q.epsilon * (1 + 1e-12))
    verdict("C4 accountant", rel <= 1e-12 and bad == 0, f"max_rel_err={rel:.1e} bad_tuples={bad}/200")
    assert rel <= 1e-12
    assert bad == 0


def test_c5_noise_exactness(verdict):
    reg = noise.establish(9, 77)
    plan = noise.NoisePlan(2.5, 0.0, 1000)
    antisym = all(
        np.array_equal(noise.pairwise_noise(reg, i, j, t, plan), -noise.pairwise_noise(reg, j, i, t, plan))
        for i in range(9) for j in range(9) if i != j for t in (0, 1, 10**6)
    )
    total = np.zeros(plan.d)
    for i in range(9):
        total += noise.correlated_sum(reg, i, 3, plan)
    cancels = np.array_equal(total, np.zeros(plan.d))
    big = noise.NoisePlan(2.5, 0.7, 100_000)
    var_cor = noise.pairwise_noise(reg, 0, 1, 5, big).var()
    var_ind = noise.independent_noise(reg, 4, 5, big).var()
    var_ok = abs(var_cor / 2.5 - 1) <= 0.02 and abs(var_ind / 0.7 - 1) <= 0.02
    ok = antisym and cancels and var_ok
    verdict("C5 noise", ok, f"antisymmetric={antisym} exact_zero={cancels} var_ratio=({var_cor / 2.5:.4f}, {var_ind / 0.7:.4f})")
    assert ok


# ----------------------------------------------------------------- training


def _quadratic(seed, T, **kw):
    base = {
        "seed": seed, "T": T, "n": 10, "f": 0, "b": 10, "m": 100, "C": 1e6, "task.d": 50, "task.L": 1.0,
        "schedule.kind": "strongly_convex", "aggregator.name": "mean", "metrics.accuracy": False,
    }
    base.update(kw)
    return from_flat(base)


def test_c6_convergence_slope(verdict):
    ratios = {100: [], 200: []}
    for seed in SEEDS:
        gap = run(_quadratic(seed, 800)).column("gap")
        ratios[100].append(gap[400] / gap[100])
        ratios[200].append(gap[799] / gap[200])
    slope = {T: float(np.mean(r)) for T, r in ratios.items()}

    noisy = {
        "n": 20, "b": 10, "m": 50, "C": 1.0, "task.d": 10, "task.heterogeneity": 0.1, "task.offset": 20.0,
        "privacy.mode": "target", "privacy.epsilon": 5.0, "privacy.delta": 1e-4, "metrics.gap": True,
    }
    grid = (50, 100, 200, 400)
    final = [float(np.mean([run(_quadratic(s, T, **noisy)).rows[-1].gap for s in SEEDS])) for T in grid]
    monotone = all(b < a for a, b in zip(final, final[1:]))
    ok = all(v <= 0.5 * 1.3 for v in slope.values()) and monotone
    detail = f"gap(4T)/gap(T)={ {T: round(v, 3) for T, v in slope.items()} } noisy_mean_gap={[round(g, 1) for g in final]}"
    verdict("C6 convergence", ok, detail)
    assert all(v <= 0.65 for v in slope.values())
    assert monotone


def _mnist(seed, **kw):
    base = {
        "seed": seed, "T": 200, "C": 1.0, "task.kind": "logistic", "task.dataset": "mnist",
        "partition.scheme": "dirichlet", "partition.alpha": 0.5, "aggregator.mode": "exact",
        "privacy.mode": "target", "privacy.epsilon": 8.0, "privacy.delta": 1e-4, "privacy.level": "example",
        "schedule.gamma": 2.0, "schedule.beta": 0.99, "metrics.gap": False, "metrics.accuracy": False,
    }
    base.update(kw)
    return from_flat(base)


@pytest.fixture(scope="module")
def robustness_table():
    start = time.perf_counter()
    acc = {}
    for attack in ("alie", "sf"):
        for agg in ("caf", "cwmed", "mean"):
            scores = []
            for seed in SEEDS:
                cfg = _mnist(seed, n=15, f=5, q=5, b=50, **{"attack.kind": attack, "aggregator.name": agg})
                problem = build_problem(cfg)
                trace = Simulation(cfg, problem).run()
                scores.append(problem.task.accuracy(trace.final_theta, problem.test))
            acc[attack, agg] = 100 * float(np.mean(scores))
    return acc, time.perf_counter() - start


def test_c7_beats_cwmed(robustness_table, verdict):
    acc, elapsed = robustness_table
    margins = {a: acc[a, "caf"] - acc[a, "cwmed"] for a in ("alie", "sf")}
    ok = all(m >= 5 for m in margins.values()) and elapsed < 600
    verdict("C7a CAF vs CWMED", ok, f"margins={ {a: round(m, 1) for a, m in margins.items()} } time={elapsed:.0f}s")
    assert ok


def test_c7_beats_mean(robustness_table, verdict):
    acc, _ = robustness_table
    margins = {a: acc[a, "caf"] - acc[a, "mean"] for a in ("alie", "sf")}
    ok = all(m >= 15 for m in margins.values())
    detail = f"margins={ {a: round(m, 1) for a, m in margins.items()} } accuracy={ {k: round(v, 1) for k, v in acc.items()} }"
    verdict("C7b CAF vs mean", ok, detail)
    assert ok


def test_c8_threat_model_ordering(verdict):
    def final_loss(regime, q):
        losses = []
        for seed in SEEDS:
            cfg = _mnist(seed, n=20, f=2, q=q, b=30, **{
                "attack.kind": "alie", "aggregator.name": "caf", "privacy.regime": regime,
            })
            problem = build_problem(cfg)
            trace = Simulation(cfg, problem).run()
            losses.append(problem.task.honest_loss(trace.final_theta, problem.shards))
        return float(np.mean(losses))

    secldp, ldp, no_ind = final_loss("equal", 2), final_loss("ldp", 2), final_loss("no_independent", 0)
    ok = secldp <= ldp and no_ind <= secldp
    verdict("C8 ordering", ok, f"loss equal={secldp:.3f} ldp={ldp:.3f} no_independent(q=0)={no_ind:.3f}")
    assert secldp <= ldp
    assert no_ind <= secldp


def test_c9_determinism(monkeypatch, bundled_config, verdict):
    configs = [
        load(bundled_config),
        from_flat({
            "seed": 4, "n": 9, "f": 3, "q": 3, "T": 40, "task.d": 6, "attack.kind": "alie", "aggregator.mode": "power",
            "privacy.mode": "target", "privacy.epsilon": 2.0,
        }),
        _mnist(2, n=7, f=2, q=2, b=20, T=5, **{"attack.kind": "sf", "partition.scheme": "iid", "task.train_size": 300}),
    ]
    same = True
    for cfg in configs:
        outputs = set()
        for threads in ("1", "4", "1", "4"):
            monkeypatch.setenv("CAFCOR_THREADS", threads)
            outputs.add(run(cfg).to_csv().encode())
        same &= len(outputs) == 1
    verdict("C9 determinism", same, f"configs={len(configs)} thread_counts=(1, 4) repeats=2")
    assert same
