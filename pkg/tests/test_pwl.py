import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
from hypothesis import strategies as st

from leadkin.errors import EmptyCandidates
from leadkin.events import SpeedProfile
from leadkin.pwl import (
    FitConfig,
    PwlFit,
    Segment,
    enforce_nonnegative,
    extract_params,
    fit_candidates,
    fit_event,
    loss,
    sample_weights,
    select_best,
)
from leadkin.synth import params_to_profile

GRID = np.round(np.arange(-5.0, 0.01, 0.1), 10)


def profile(speeds, times=GRID):
    speeds = np.asarray(speeds, dtype=float)
    return SpeedProfile("p", None, None, times, speeds, sample_weights(times))


def fit_from_vertices(ts, vs):
    ts = np.asarray(ts, dtype=float)
    vs = np.asarray(vs, dtype=float)
    segments = []
    for i in range(len(ts) - 1):
        slope = (vs[i + 1] - vs[i]) / (ts[i + 1] - ts[i])
        segments.append(Segment(ts[i], ts[i + 1], slope, vs[i] - slope * ts[i]))
    return PwlFit(
        breakpoints=tuple(ts[1:-1]),
        segments=tuple(segments),
        r_squared=1.0,
        r_squared_adj=1.0,
        n_samples=51,
    )


class TestSampleWeights:
    def test_time_zero(self):
        assert sample_weights([0.0])[0] == pytest.approx(3.1623, abs=1e-4)

    def test_window_start(self):
        assert sample_weights([-5.0])[0] == pytest.approx(0.4428, abs=1e-4)

    def test_crash_cutoff(self):
        assert sample_weights([-0.3])[0] == pytest.approx(1.5811, abs=1e-4)

    def test_domain_checked(self):
        with pytest.raises(ValueError):
            sample_weights([0.2])


class TestFitCandidates:
    def test_exact_line(self):
        cands = fit_candidates(profile(2 * GRID + 12), FitConfig())
        c0 = cands[0]
        assert c0.n_b == 0
        assert c0.segments[0].slope == pytest.approx(2.0, abs=1e-9)
        assert c0.segments[0].intercept == pytest.approx(12.0, abs=1e-9)
        assert c0.r_squared == pytest.approx(1.0)

    def test_standstill_r_squared_convention(self):
        c0 = fit_candidates(profile(np.zeros(GRID.size)), FitConfig())[0]
        assert c0.segments[0].slope == 0.0
        assert c0.r_squared == 1.0  # zero residual on constant data

    def test_constant_with_noise_r_squared_zero(self):
        rng = np.random.default_rng(0)
        v = np.full(GRID.size, 4.0)
        v[::7] += 1e-6  # constant to the fit, but not exactly
        c0 = fit_candidates(profile(v), FitConfig())[0]
        assert 0.0 <= c0.r_squared <= 1.0

    def test_breakpoint_recovery_with_grid_oracle(self):
        rng = np.random.default_rng(42)
        true_b = -2.0
        v = np.where(GRID <= true_b, 8.0 - 4.0 * (GRID - true_b), 8.0)
        v = v + rng.normal(0, 0.05, GRID.size)
        p = profile(v)
        cands = fit_candidates(p, FitConfig(), np.random.default_rng(1))
        c1 = [c for c in cands if c.n_b == 1][0]

        # oracle: brute-force scan over breakpoint locations
        sw = np.sqrt(p.weights)
        best_b, best_sse = None, np.inf
        for b in np.arange(-4.5, -0.5, 0.01):
            X = np.column_stack([np.ones_like(GRID), GRID, np.maximum(GRID - b, 0)])
            coef, *_ = np.linalg.lstsq(X * sw[:, None], v * sw, rcond=None)
            sse = np.sum((sw * (v - X @ coef)) ** 2)
            if sse < best_sse:
                best_b, best_sse = b, sse
        assert c1.breakpoints[0] == pytest.approx(best_b, abs=0.05)
        assert c1.breakpoints[0] == pytest.approx(true_b, abs=0.1)

    def test_weight_scale_equivariance(self):
        rng = np.random.default_rng(3)
        v = np.where(GRID <= -2.5, 6.0 - 3.0 * (GRID + 2.5), 6.0) + rng.normal(0, 0.02, GRID.size)
        p1 = profile(v)
        p2 = SpeedProfile("p", None, None, GRID, v, p1.weights * 8.0)
        c1 = fit_candidates(p1, FitConfig(), np.random.default_rng(5))
        c2 = fit_candidates(p2, FitConfig(), np.random.default_rng(5))
        for a, b in zip(c1, c2):
            assert a.breakpoints == pytest.approx(b.breakpoints, abs=1e-9)
            assert a.slopes() == pytest.approx(b.slopes(), abs=1e-9)


class TestLoss:
    def test_zero_breakpoints_is_negative_r_squared(self):
        c = fit_from_vertices([-5, 0], [10, 5])
        c = replace(c, r_squared=0.93)
        assert loss(c, profile(np.linspace(10, 5, GRID.size))) == pytest.approx(-0.93)

    def test_standstill_penalty_is_epsilon(self):
        cfg = FitConfig()
        c = replace(fit_from_vertices([-5, -2, 0], [0, 0, 0]), r_squared=1.0)
        p = profile(np.zeros(GRID.size))
        assert loss(c, p, cfg) == pytest.approx(cfg.epsilon * 1 - 1.0)

    def test_worked_example(self):
        # max v 20, range 10, two breakpoints, r^2 0.95
        v = np.linspace(10, 20, GRID.size)
        c = replace(fit_from_vertices([-5, -3, -1, 0], [10, 14, 18, 20]), r_squared=0.95)
        cfg = FitConfig()
        expected = (1e-6 + 0.006 * 20.0 / (10.0 + 1e-6)) * 2 - 0.95
        assert loss(c, profile(v), cfg) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(-0.926, abs=1e-3)


class TestSelectBest:
    def scored(self, losses):
        out = []
        for i, L in enumerate(losses):
            ts = np.linspace(-5, 0, i + 2)
            c = fit_from_vertices(ts, np.linspace(10, 5, i + 2))
            out.append(replace(c, loss=L))
        return out

    def test_argmin(self):
        cands = self.scored([-0.99, -0.95, -0.90, -0.85])
        assert select_best(cands).n_b == 0

    def test_tie_prefers_fewer_breakpoints(self):
        cands = self.scored([-0.5, -0.95, -0.95, -0.85])
        assert select_best(cands).n_b == 1

    def test_single_candidate(self):
        cands = self.scored([-0.7])
        assert select_best(cands) is cands[0]

    def test_empty(self):
        with pytest.raises(EmptyCandidates):
            select_best([])


class TestEnforceNonnegative:
    def test_noop_when_nonnegative(self):
        fit = fit_from_vertices([-5, -2, 0], [10, 4, 4])
        assert enforce_nonnegative(fit) is fit

    def test_line_crossing_zero_clamped_at_end(self):
        # v(t) = -2t - 2 crosses zero at t = -1, negative at t = 0
        fit = fit_from_vertices([-5, 0], [8, -2])
        repaired = enforce_nonnegative(fit)
        assert repaired.modified_for_nonnegativity
        assert repaired.breakpoints == pytest.approx([-1.0])
        assert repaired.predict(0.0) == 0.0
        assert repaired.predict(-0.5) == 0.0
        assert repaired.predict(-5.0) == pytest.approx(8.0)

    def test_negative_start_clamped(self):
        fit = fit_from_vertices([-5, 0], [-2, 8])
        repaired = enforce_nonnegative(fit)
        assert repaired.predict(-5.0) == 0.0
        assert repaired.predict(-4.5) == 0.0
        assert repaired.predict(0.0) == pytest.approx(8.0)

    def test_interior_breakpoint_raised_to_zero(self):
        fit = fit_from_vertices([-5, -2, 0], [2, -0.3, 1])
        repaired = enforce_nonnegative(fit)
        ts, vs = repaired.vertices()
        assert vs.min() >= -1e-12
        assert repaired.predict(-2.0) == pytest.approx(0.0, abs=1e-12)

    @given(
        st.lists(st.floats(min_value=-3, max_value=12), min_size=2, max_size=5),
    )
    @settings(max_examples=60, deadline=None)
    def test_repaired_minimum_on_millisecond_grid(self, values):
        ts = np.linspace(-5.0, 0.0, len(values))
        fit = fit_from_vertices(ts, values)
        repaired = enforce_nonnegative(fit)
        grid = np.arange(-5.0, 0.0, 0.001)
        assert repaired.predict(grid).min() >= -1e-9


class TestExtractParams:
    def test_three_segments(self):
        fit = fit_from_vertices([-5, -3, -1, 0], [1, 5, 5 - 3 * -2, 5])
        # slopes: (5-1)/2 = 2 on [-5,-3]; then -3 on [-3,-1]; flat at 5 on [-1,0]
        fit = fit_from_vertices([-5, -3, -1, 0], [7, 11, 5, 5])
        params = extract_params(fit)
        assert params.v_c == pytest.approx(5.0)
        assert params.a1 == pytest.approx(-3.0)
        assert params.a2 == pytest.approx(2.0)
        assert params.tau_s == pytest.approx(1.0)
        assert params.tau_1 == pytest.approx(2.0)
        assert params.tau_2 == pytest.approx(2.0)

    def test_constant_speed(self):
        params = extract_params(fit_from_vertices([-5, 0], [8, 8]))
        assert (
            params.v_c,
            params.a1,
            params.a2,
            params.tau_s,
            params.tau_1,
            params.tau_2,
        ) == (8, 0, 0, 5, 0, 0)

    def test_single_braking_line(self):
        params = extract_params(fit_from_vertices([-5, 0], [11, 1]))
        assert params.v_c == pytest.approx(1.0)
        assert params.a1 == pytest.approx(-2.0)
        assert params.a2 == pytest.approx(-2.0)
        assert params.tau_s == 0.0
        assert params.tau_1 == pytest.approx(5.0)
        assert params.tau_2 == 0.0

    def test_four_segments_drops_earliest(self):
        fit = fit_from_vertices([-5, -4, -2.5, -1, 0], [3, 7, 2, 6, 6])
        params = extract_params(fit)
        assert params.tau_s == pytest.approx(1.0)
        assert params.tau_1 == pytest.approx(1.5)
        assert params.tau_2 == pytest.approx(1.5)

    def test_reconstruction_consistency(self):
        fit = fit_from_vertices([-5, -3, -1, 0], [7, 11, 5, 5])
        params = extract_params(fit)
        rebuilt = params_to_profile(params, dt=0.05)
        predicted = fit.predict(rebuilt.times)
        assert np.abs(rebuilt.speeds - predicted).max() < 1e-9


class TestSelection:
    def test_monotone_penalty_never_increases_breakpoints(self):
        rng = np.random.default_rng(9)
        v = np.where(GRID <= -2.0, 8.0 - 4.0 * (GRID + 2.0), 8.0)
        v += rng.normal(0, 0.05, GRID.size)
        p = profile(v)
        cands = fit_candidates(p, FitConfig(), np.random.default_rng(2))
        previous = None
        for lam in (1e-4, 1e-3, 6e-3, 3e-2, 0.2, 1.0):
            cfg = FitConfig(penalty=lam)
            scored = [replace(c, loss=loss(c, p, cfg)) for c in cands]
            chosen = select_best(scored).n_b
            if previous is not None:
                assert chosen <= previous
            previous = chosen

    def test_fit_event_end_to_end(self):
        rng = np.random.default_rng(4)
        v = np.where(GRID <= -2.0, 8.0 - 4.0 * (GRID + 2.0), 8.0)
        v += rng.normal(0, 0.05, GRID.size)
        fit = fit_event(profile(v), FitConfig(), np.random.default_rng(0))
        assert fit.n_b == 1
        assert fit.breakpoints[0] == pytest.approx(-2.0, abs=0.1)
        assert fit.loss is not None
