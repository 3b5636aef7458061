import numpy as np
import pytest

from d4d.errors import ParameterError
from d4d.schedules import (
    closed_form_marginal,
    cosine_schedule,
    linear_schedule,
    make_schedule,
    write_schedule_csv,
)


class TestLinearSchedule:
    def test_paper_endpoints_exact(self):
        sched = linear_schedule(T=1000, beta_start=1e-4, beta_end=0.02)
        assert sched.betas[0] == 1e-4
        assert sched.betas[-1] == 0.02

    def test_constant_when_start_equals_end(self):
        sched = linear_schedule(T=10, beta_start=0.05, beta_end=0.05)
        assert np.all(sched.betas == 0.05)

    def test_midpoint_interpolation(self):
        sched = linear_schedule(T=1000, beta_start=1e-4, beta_end=0.02)
        # oracle: beta_500 = 1e-4 + (499/999) * (0.02 - 1e-4)
        expected = 1e-4 + (499 / 999) * (0.02 - 1e-4)
        assert sched.betas[499] == pytest.approx(expected, abs=1e-18)
        assert expected == pytest.approx(0.01004004004, abs=1e-9)

    def test_bounds_and_monotonicity(self):
        sched = linear_schedule(T=500)
        assert np.all(sched.betas > 0.0) and np.all(sched.betas < 1.0)
        assert np.all(np.diff(sched.alpha_bars) < 0.0)

    def test_parameter_errors(self):
        with pytest.raises(ParameterError):
            linear_schedule(T=1)
        with pytest.raises(ParameterError):
            linear_schedule(T=10, beta_start=0.0, beta_end=0.02)
        with pytest.raises(ParameterError):
            linear_schedule(T=10, beta_start=0.03, beta_end=0.02)
        with pytest.raises(ParameterError):
            linear_schedule(T=10, beta_start=0.5, beta_end=1.0)


class TestCosineSchedule:
    def test_alpha_bar_zero_is_one(self):
        for T in (10, 200, 1000):
            sched = cosine_schedule(T=T)
            assert sched.alpha_bar(0) == 1.0
            assert sched.alpha_bar_prev[0] == 1.0

    def test_closed_form_tail_and_clip(self):
        sched = cosine_schedule(T=1000, s=0.008, beta_clip=0.999)
        assert sched.alpha_bars[-1] < 1e-3
        assert np.all(sched.betas <= 0.999)
        assert np.any(sched.betas == 0.999)  # tail hits the clip

    def test_matches_direct_evaluation_where_unclipped(self):
        T, s = 200, 0.008
        sched = cosine_schedule(T=T, s=s)

        def f(t):
            return np.cos((t / T + s) / (1 + s) * np.pi / 2) ** 2

        for t in (1, 2, 50, 100):
            expected_beta = 1 - (f(t) / f(0)) / (f(t - 1) / f(0))
            assert sched.betas[t - 1] == pytest.approx(expected_beta, rel=1e-12)

    def test_strictly_decreasing(self):
        sched = cosine_schedule(T=1000)
        assert np.all(np.diff(sched.alpha_bars) < 0.0)

    def test_parameter_errors(self):
        with pytest.raises(ParameterError):
            cosine_schedule(T=1)
        with pytest.raises(ParameterError):
            cosine_schedule(T=10, s=0.0)
        with pytest.raises(ParameterError):
            cosine_schedule(T=10, beta_clip=1.0)


class TestRecurrence:
    @pytest.mark.parametrize("kind", ["linear", "cosine"])
    def test_alpha_bar_recurrence_exact(self, kind):
        sched = make_schedule(kind, 1000)
        err = np.abs(sched.alpha_bars - sched.alphas * sched.alpha_bar_prev)
        assert err.max() <= 1e-12


class TestClosedFormMarginal:
    def test_identity_at_t_zero(self):
        sched = linear_schedule(T=100)
        assert closed_form_marginal(sched, 0) == (1.0, 0.0)

    def test_pure_noise_limit(self):
        sched = cosine_schedule(T=1000)
        mean_coeff, std = closed_form_marginal(sched, 1000)
        assert mean_coeff < 0.05
        assert std > 0.999

    def test_constant_beta_product(self):
        sched = linear_schedule(T=10, beta_start=0.1, beta_end=0.1)
        mean_coeff, std = closed_form_marginal(sched, 2)
        assert mean_coeff == pytest.approx(0.9, abs=1e-15)  # sqrt(0.9^2)
        assert std == pytest.approx(np.sqrt(0.19), abs=1e-15)
        assert std == pytest.approx(0.43589, abs=1e-5)

    def test_out_of_range(self):
        sched = linear_schedule(T=10)
        with pytest.raises(ParameterError):
            closed_form_marginal(sched, 11)
        with pytest.raises(ParameterError):
            closed_form_marginal(sched, -1)


class TestForwardEquivalence:
    """Iterating the per-step kernel matches the closed-form marginal."""

    @pytest.mark.parametrize("kind", ["linear", "cosine"])
    def test_monte_carlo(self, kind):
        T, M = 200, 100_000
        x0 = 0.7
        sched = make_schedule(kind, T)
        rng = np.random.default_rng(123)
        checkpoints = {1, T // 2, T}
        x = np.full(M, x0)
        for t in range(1, T + 1):
            eps = rng.standard_normal(M)
            x = np.sqrt(sched.alphas[t - 1]) * x + np.sqrt(sched.betas[t - 1]) * eps
            if t in checkpoints:
                expected_mean = np.sqrt(sched.alpha_bar(t)) * x0
                expected_var = 1.0 - sched.alpha_bar(t)
                tol = 4.0 * np.sqrt(expected_var) / np.sqrt(M)
                assert abs(x.mean() - expected_mean) < tol
                assert abs(x.var() - expected_var) <= 0.02 * expected_var


class TestCsvDump:
    def test_golden_constant_schedule(self, tmp_path):
        sched = linear_schedule(T=3, beta_start=0.5, beta_end=0.5)
        path = tmp_path / "sched.csv"
        write_schedule_csv(sched, path)
        expected = (
            "t,beta,alpha,alpha_bar\n"
            "1,0.5,0.5,0.5\n"
            "2,0.5,0.5,0.25\n"
            "3,0.5,0.5,0.125\n"
        )
        assert path.read_text() == expected

    def test_rows_match_table(self, tmp_path):
        sched = cosine_schedule(T=50)
        path = tmp_path / "sched.csv"
        write_schedule_csv(sched, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 51
        t, beta, alpha, alpha_bar = lines[10].split(",")
        assert int(t) == 10
        assert float(beta) == sched.betas[9]
        assert float(alpha) == sched.alphas[9]
        assert float(alpha_bar) == sched.alpha_bars[9]
