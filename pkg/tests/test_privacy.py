import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cafcor import privacy as pv
from cafcor.errors import InfeasibleNoiseError, InfeasibleRegimeError, InvalidParameterError


def params(**kw):
    base = dict(delta=1e-4, T=100, C=1.0, n=10, f=2, q=2, epsilon=1.0)
    base.update(kw)
    return pv.PrivacyParams(**base)


ALPHAS = np.arange(1.5, 64.5, 0.5)


class TestPerStep:
    def test_ldp_value(self):
        a = pv.NoiseAssignment(0.0, 2.0, "ldp")
        assert pv.per_step_rdp(3.0, params(), a) == pytest.approx(3.0, rel=1e-15)

    @pytest.mark.parametrize("alpha", ALPHAS)
    def test_reduces_to_gaussian_mechanism(self, alpha):
        a = pv.NoiseAssignment(0.0, 3.7, "ldp")
        p = params(C=1.3)
        expected = pv.gaussian_rdp(alpha, 2 * p.C, a.sigma_ind_sq)
        assert pv.per_step_rdp(alpha, p, a) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(2 * alpha * p.C**2 / a.sigma_ind_sq, rel=1e-12)

    def test_c_scaling(self):
        a = pv.NoiseAssignment(5.0, 1.0)
        assert pv.per_step_rdp(2.0, params(C=2.0), a) == pytest.approx(4 * pv.per_step_rdp(2.0, params(), a))

    def test_large_correlated_limit_decreases_in_n(self):
        a = pv.NoiseAssignment(1e9, 1.0)
        values = []
        for n in (6, 10, 20, 40):
            eps = pv.per_step_epsilon(params(n=n), a)
            limit = 2.0 / ((n - 2) * 1e9) * (1 + 1e9)
            assert eps == pytest.approx(limit, rel=1e-6)
            values.append(eps)
        assert values == sorted(values, reverse=True)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(3, 30), st.floats(0.01, 100), st.floats(0.01, 100))
    def test_collusion_monotone(self, n, cor, ind):
        f = (n - 1) // 2
        a = pv.NoiseAssignment(cor, ind)
        values = [pv.per_step_epsilon(params(n=n, f=f, q=q), a) for q in range(f + 1)]
        assert all(x <= y * (1 + 1e-12) for x, y in zip(values, values[1:]))

    def test_composition_linear(self):
        a = pv.NoiseAssignment(2.0, 3.0)
        p = params(T=37)
        assert pv.composed_rdp(4.0, p, a) == pytest.approx(37 * pv.per_step_rdp(4.0, p, a), rel=1e-15)

    def test_singular_covariance(self):
        with pytest.raises(InfeasibleNoiseError):
            pv.per_step_epsilon(params(), pv.NoiseAssignment(1.0, 0.0))

    def test_alpha_must_exceed_one(self):
        with pytest.raises(InvalidParameterError):
            pv.per_step_rdp(1.0, params(), pv.NoiseAssignment(1.0, 1.0))


class TestSpent:
    def test_vanishes_with_huge_noise(self):
        p = params(T=1)
        eps = [pv.secldp_epsilon(p, pv.NoiseAssignment(0.0, 2 * k))[0] for k in (1e2, 1e4, 1e6, 1e8)]
        assert eps == sorted(eps, reverse=True)
        assert eps[-1] < 1e-2

    def test_monotone_in_independent_noise(self):
        p = params()
        eps = [pv.secldp_epsilon(p, pv.NoiseAssignment(10.0, s))[0] for s in np.geomspace(0.1, 1e5, 30)]
        assert all(x >= y for x, y in zip(eps, eps[1:]))

    def test_alpha_is_optimal(self):
        p, a = params(T=50), pv.NoiseAssignment(300.0, 200.0)
        eps, alpha = pv.secldp_epsilon(p, a)

        def total(al):
            return pv.rdp_to_dp(pv.composed_rdp(al, p, a), al, p.delta)

        assert eps == pytest.approx(total(alpha))
        for al in (alpha * 0.9, alpha * 1.1, 1 + (alpha - 1) * 0.5, alpha + 3):
            assert total(al) >= eps

    def test_steps_argument(self):
        p, a = params(T=10), pv.NoiseAssignment(100.0, 100.0)
        assert pv.secldp_epsilon(p, a, steps=10) == pv.secldp_epsilon(p, a)
        assert pv.secldp_epsilon(p, a, steps=3)[0] < pv.secldp_epsilon(p, a)[0]


class TestNoiseCondition:
    def test_closed_form_assignment(self):
        s = 32 * 100 * math.log(1e4) / 8
        assert s == pytest.approx(3684.1, abs=0.05)
        lhs, rhs = pv.noise_condition_sides(params(), pv.NoiseAssignment(s, s))
        assert lhs == pytest.approx(4.5 * s)
        assert lhs == pytest.approx(16578, abs=1)
        assert rhs == pytest.approx(14737, abs=1)
        assert pv.check_theorem1(params(), pv.NoiseAssignment(s, s))

    def test_tiny_noise_fails(self):
        assert not pv.check_theorem1(params(), pv.NoiseAssignment(1e-12, 1e-12))

    def test_scaling_preserves_feasibility(self):
        p = params()
        a = pv.calibrate(p, "equal")
        for k in (1, 10, 100):
            assert pv.check_theorem1(p, pv.NoiseAssignment(k * a.sigma_cor_sq, k * a.sigma_ind_sq))

    @pytest.mark.parametrize("eps", [math.log(1e4), 20.0])
    def test_epsilon_beyond_log_inv_delta(self, eps):
        with pytest.raises(InvalidParameterError):
            pv.check_theorem1(params(epsilon=eps), pv.NoiseAssignment(1, 1))

    @pytest.mark.parametrize("eps", [0.0, -1.0])
    def test_epsilon_must_be_positive(self, eps):
        with pytest.raises(InvalidParameterError):
            params(epsilon=eps)

    def test_epsilon_required(self):
        with pytest.raises(InvalidParameterError):
            pv.check_theorem1(params(epsilon=None), pv.NoiseAssignment(1, 1))

    @pytest.mark.parametrize(
        "kw", [dict(delta=0.0), dict(delta=1.0), dict(T=0), dict(C=0.0), dict(q=3), dict(f=5), dict(level="x")]
    )
    def test_invalid_params(self, kw):
        with pytest.raises(InvalidParameterError):
            params(**kw)


class TestCalibrate:
    def test_equal_value(self):
        a = pv.calibrate(params(), "equal")
        assert a.sigma_cor_sq == a.sigma_ind_sq == pytest.approx(3684.136, abs=1e-3)
        assert pv.check_theorem1(params(), a)

    def test_equal_ignores_q(self):
        assert pv.calibrate(params(q=0), "equal") == pv.calibrate(params(q=2), "equal")

    def test_ldp_smallest_feasible(self):
        p = params()
        a = pv.calibrate(p, "ldp")
        assert a.sigma_cor_sq == 0.0
        assert pv.check_theorem1(p, a)
        assert not pv.check_theorem1(p, pv.NoiseAssignment(0.0, a.sigma_ind_sq * (1 - 1e-5)))

    def test_ldp_plateau_in_n(self):
        values = [pv.calibrate(params(n=n), "ldp").sigma_ind_sq for n in (10, 100, 1000, 10000)]
        assert np.ptp(values) <= 1e-5 * values[0]

    def test_no_independent_needs_non_colluder(self):
        with pytest.raises(InfeasibleRegimeError):
            pv.calibrate(params(q=2), "no_independent")

    def test_no_independent(self):
        p = params(q=0)
        a = pv.calibrate(p, "no_independent")
        assert a.sigma_ind_sq == 0.0 and pv.check_theorem1(p, a)
        assert not pv.check_theorem1(p, pv.NoiseAssignment(a.sigma_cor_sq * (1 - 1e-5), 0.0))

    def test_unknown_regime(self):
        with pytest.raises(InvalidParameterError):
            pv.calibrate(params(), "cdp")

    def test_n_scaling(self):
        small = pv.calibrate(params(n=100), "equal").sigma_cor_sq
        big = pv.calibrate(params(n=200), "equal").sigma_cor_sq
        assert big / small == pytest.approx(98 / 198, rel=1e-12)

    def test_soundness_random_tuples(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            n = int(rng.integers(3, 200))
            f = int(rng.integers(0, (n - 1) // 2 + 1))
            q = int(rng.integers(0, f + 1))
            delta = 10 ** rng.uniform(-9, -2)
            p = params(
                n=n, f=f, q=q, T=int(rng.integers(1, 5000)), C=float(10 ** rng.uniform(-2, 2)),
                delta=delta, epsilon=float(rng.uniform(0.05, 0.99) * math.log(1 / delta)),
            )
            for regime in ("equal", "ldp") + (("no_independent",) if q < f else ()):
                a = pv.calibrate(p, regime)
                # Equal and ldp are calibrated against full collusion.
                target = p if regime == "no_independent" else pv.replace(p, q=f)
                assert pv.check_theorem1(target, a)
                assert pv.secldp_epsilon(target, a)[0] <= p.epsilon * (1 + 1e-12)


class TestExampleLevel:
    def test_bound_scales_with_batch(self):
        p = params(level="example", batch_size=8, C=4.0)
        assert p.bound == 0.5
        assert params(C=4.0).bound == 4.0

    def test_example_level_noise_smaller(self):
        user = pv.calibrate(params(), "equal")
        ex = pv.calibrate(params(level="example", batch_size=10), "equal")
        assert ex.sigma_cor_sq == pytest.approx(user.sigma_cor_sq / 100)
