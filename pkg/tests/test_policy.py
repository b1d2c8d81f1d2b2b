"""Schedule construction and closed-loop policy runs."""

import numpy as np
import pytest

import prhc.solver
from prhc.costs import NonConvexCost, QuadraticCost
from prhc.linsys import DisturbanceSequence, LinearSystem
from prhc.policy import RhcSchedule, build_schedule, run_policy, run_standard_rhc
from prhc.solver import HorizonProblem, SolverConfig, solve_quadratic


def scalar_quad(T):
    return QuadraticCost(np.ones((T, 1, 1)), np.ones((T, 1, 1)))


def random_quad(rng, n, m, T):
    Q = np.stack([np.diag(rng.uniform(1, 3, n)) for _ in range(T)])
    R = np.stack([np.diag(rng.uniform(1, 3, m)) for _ in range(T)])
    return QuadraticCost(Q, R)


class TestBuildSchedule:
    def test_step_three(self):
        assert build_schedule(6, 3, 15).t_list == (1, 4, 7, 10, 13)

    def test_replan_every_step(self):
        assert build_schedule(6, 5, 8).t_list == (1, 2, 3, 4, 5, 6, 7, 8)

    def test_step_two(self):
        assert build_schedule(4, 2, 5).t_list == (1, 3, 5)

    def test_single_window_when_preview_covers_task(self):
        sched = build_schedule(5, 2, 5)
        assert sched.t_list == (1,)
        assert not sched.truncated_tail

    def test_consecutive_gaps_and_coverage(self):
        sched = build_schedule(6, 3, 15)
        gaps = np.diff(sched.t_list)
        assert np.all(gaps == sched.n_m)
        assert sched.t_list[0] == 1 and sched.t_list[-1] <= 15
        applied = sum(sched.applied_at(i) for i in range(len(sched.t_list)))
        assert applied == 15

    def test_truncated_tail_flag(self):
        # any N < T schedule overruns T (last start >= T-N+M+1), so only the
        # single-window N = T case escapes truncation
        assert build_schedule(6, 3, 15).truncated_tail  # last window 13..18
        assert build_schedule(4, 2, 6).truncated_tail   # last window 5..8
        assert not build_schedule(6, 3, 6).truncated_tail

    def test_rejects_overlap_too_small(self):
        with pytest.raises(ValueError, match="M >= 1"):
            build_schedule(4, 0, 10)

    def test_rejects_overlap_at_preview(self):
        with pytest.raises(ValueError, match="M < N"):
            build_schedule(4, 4, 10)

    def test_rejects_preview_past_horizon(self):
        with pytest.raises(ValueError, match="N <= T"):
            build_schedule(8, 4, 5)


class TestRunPolicy:
    def test_zero_disturbances_zero_start(self):
        sys = LinearSystem(A=[[0.5, 0.1], [0.0, 0.4]], B=[[1.0], [1.0]])
        costs = random_quad(np.random.default_rng(0), 2, 1, 10)
        sched = build_schedule(4, 2, 10)
        res = run_policy(sys, costs, DisturbanceSequence.zeros(10, 2),
                         np.zeros(2), sched)
        assert res.J == 0.0
        np.testing.assert_array_equal(res.traj.inputs, np.zeros((10, 1)))
        assert all(v == pytest.approx(0.0, abs=1e-15) for v in res.interval_values)

    def test_full_preview_equals_batch_optimum(self):
        rng = np.random.default_rng(1)
        sys = LinearSystem(A=rng.uniform(-0.8, 0.8, (2, 2)), B=[[1.0], [0.3]])
        costs = random_quad(rng, 2, 1, 6)
        w = DisturbanceSequence.from_array(rng.uniform(0, 1, (6, 2)))
        x1 = rng.uniform(-1, 1, 2)
        for M in (1, 3, 5):
            res = run_policy(sys, costs, w, x1, build_schedule(6, M, 6))
            assert len(res.schedule.t_list) == 1
            batch = solve_quadratic(HorizonProblem(
                sys=sys, x0=x1, costs=costs, t0=0, w_preview=w, N=6))
            assert res.J == pytest.approx(batch.value, rel=1e-9)

    def test_hand_worked_scalar_run(self):
        # x_{t+1} = x_t + u_t + w_t, unit costs, T=4, N=2, M=1, x1=0,
        # w = (0.1, 0, 0.1, 0). Per-window calculus gives inputs
        # (-0.05, -0.025, -0.0625, 0) and J = 0.0140625; the policy may
        # trail the full-preview optimum but never beat it.
        sys = LinearSystem(A=[[1.0]], B=[[1.0]])
        costs = scalar_quad(4)
        w = DisturbanceSequence.from_array([[0.1], [0.0], [0.1], [0.0]])
        res = run_policy(sys, costs, w, [0.0], build_schedule(2, 1, 4))
        np.testing.assert_allclose(
            res.traj.inputs.ravel(), [-0.05, -0.025, -0.0625, 0.0], atol=1e-12
        )
        assert res.J == pytest.approx(0.0140625, rel=1e-12)
        batch = solve_quadratic(HorizonProblem(
            sys=sys, x0=np.zeros(1), costs=costs, t0=0, w_preview=w, N=4))
        assert res.J >= batch.value - 1e-12

    def test_solver_called_once_per_interval(self, monkeypatch):
        calls = []
        original = prhc.solver.solve

        def counting(p, cfg=None, u0=None):
            calls.append(p.t0)
            return original(p, cfg, u0=u0)

        monkeypatch.setattr(prhc.solver, "solve", counting)
        sys = LinearSystem(A=[[0.9]], B=[[1.0]])
        costs = scalar_quad(9)
        w = DisturbanceSequence.from_array(np.full((9, 1), 0.3))
        sched = build_schedule(4, 2, 9)
        run_policy(sys, costs, w, [0.0], sched)
        assert calls == [t - 1 for t in sched.t_list]

    def test_inputs_come_verbatim_from_interval_solutions(self):
        rng = np.random.default_rng(4)
        sys = LinearSystem(A=rng.uniform(-0.5, 0.5, (2, 2)), B=[[1.0], [0.7]])
        costs = random_quad(rng, 2, 1, 12)
        w = DisturbanceSequence.from_array(rng.uniform(0, 1, (12, 2)))
        sched = build_schedule(6, 3, 12)
        res = run_policy(sys, costs, w, np.zeros(2), sched)
        for i, t_i in enumerate(sched.t_list):
            applied = sched.applied_at(i)
            np.testing.assert_array_equal(
                res.traj.inputs[t_i - 1:t_i - 1 + applied],
                res.interval_solutions[i].u_opt[:applied],
            )

    def test_warm_start_seeds_next_interval_with_shifted_tail(self, monkeypatch):
        received = []
        original = prhc.solver.solve

        def capturing(p, cfg=None, u0=None):
            received.append(None if u0 is None else np.array(u0))
            return original(p, cfg, u0=u0)

        monkeypatch.setattr(prhc.solver, "solve", capturing)
        rng = np.random.default_rng(5)
        sys = LinearSystem(A=[[0.6, 0.0], [0.2, 0.5]], B=[[1.0], [0.4]])
        costs = random_quad(rng, 2, 1, 10)
        w = DisturbanceSequence.from_array(rng.uniform(0, 1, (10, 2)))
        sched = build_schedule(6, 3, 10)
        res = run_policy(sys, costs, w, np.zeros(2), sched)
        assert received[0] is None
        for i in range(1, len(sched.t_list)):
            tail = res.interval_solutions[i - 1].u_opt[sched.applied_at(i - 1):]
            expected = np.zeros((sched.horizon_at(i), sys.m))
            keep = min(len(tail), len(expected))
            expected[:keep] = tail[:keep]
            np.testing.assert_array_equal(received[i], expected)

    def test_warm_start_disabled(self, monkeypatch):
        received = []
        original = prhc.solver.solve

        def capturing(p, cfg=None, u0=None):
            received.append(u0)
            return original(p, cfg, u0=u0)

        monkeypatch.setattr(prhc.solver, "solve", capturing)
        sys = LinearSystem(A=[[0.5]], B=[[1.0]])
        costs = scalar_quad(6)
        w = DisturbanceSequence.from_array(np.full((6, 1), 0.2))
        run_policy(sys, costs, w, [0.0], build_schedule(3, 1, 6),
                   SolverConfig(warm_start=False))
        assert all(u0 is None for u0 in received)

    def test_deterministic(self):
        rng = np.random.default_rng(6)
        sys = LinearSystem(A=rng.uniform(-0.5, 0.5, (2, 2)), B=[[1.0], [1.0]])
        costs = NonConvexCost(b=0.2)
        w = DisturbanceSequence.from_array(rng.uniform(0, 1, (8, 2)))
        sched = build_schedule(4, 2, 8)
        cfg = SolverConfig(seed=7)
        a = run_policy(sys, costs, w, np.zeros(2), sched, cfg)
        b = run_policy(sys, costs, w, np.zeros(2), sched, cfg)
        np.testing.assert_array_equal(a.traj.inputs, b.traj.inputs)
        np.testing.assert_array_equal(a.traj.states, b.traj.states)
        assert a.J == b.J

    def test_short_disturbance_sequence_rejected(self):
        sys = LinearSystem(A=[[0.5]], B=[[1.0]])
        with pytest.raises(ValueError, match="task horizon"):
            run_policy(sys, scalar_quad(6), DisturbanceSequence.zeros(4, 1),
                       [0.0], build_schedule(3, 1, 6))

    def test_cost_length_mismatch_rejected(self):
        sys = LinearSystem(A=[[0.5]], B=[[1.0]])
        with pytest.raises(ValueError, match="cost sequence"):
            run_policy(sys, scalar_quad(5), DisturbanceSequence.zeros(6, 1),
                       [0.0], build_schedule(3, 1, 6))

    def test_solver_failure_reports_interval(self, monkeypatch):
        def failing(p, cfg=None, u0=None):
            if p.t0 >= 2:
                raise RuntimeError("iteration 1: non-finite cost")
            return prhc.solver.solve_quadratic(p)

        monkeypatch.setattr(prhc.solver, "solve", failing)
        sys = LinearSystem(A=[[0.5]], B=[[1.0]])
        costs = scalar_quad(6)
        w = DisturbanceSequence.from_array(np.full((6, 1), 0.1))
        with pytest.raises(RuntimeError, match="interval 2"):
            run_policy(sys, costs, w, [0.0], build_schedule(3, 1, 6))

    def test_stage_costs_filled_and_sum_to_J(self):
        rng = np.random.default_rng(8)
        sys = LinearSystem(A=rng.uniform(0, 0.6, (2, 2)), B=[[1.0], [1.0]])
        costs = random_quad(rng, 2, 1, 9)
        w = DisturbanceSequence.from_array(rng.uniform(0, 1, (9, 2)))
        res = run_policy(sys, costs, w, np.zeros(2), build_schedule(4, 2, 9))
        assert res.traj.stage_costs is not None
        assert res.J == pytest.approx(float(res.traj.stage_costs.sum()), rel=1e-12)
        assert res.J > 0


class TestStandardRhc:
    def test_replans_every_step(self):
        sched_equiv = build_schedule(3, 2, 7)
        assert sched_equiv.t_list == tuple(range(1, 8))
        sys = LinearSystem(A=[[0.8]], B=[[1.0]])
        costs = scalar_quad(7)
        w = DisturbanceSequence.from_array(np.full((7, 1), 0.25))
        res = run_standard_rhc(sys, costs, w, [0.0], N=3, T=7)
        assert res.schedule.M == 2
        assert res.schedule.t_list == sched_equiv.t_list

    def test_full_preview_case_matches_policy(self):
        rng = np.random.default_rng(9)
        sys = LinearSystem(A=rng.uniform(-0.7, 0.7, (2, 2)), B=[[1.0], [0.5]])
        costs = random_quad(rng, 2, 1, 5)
        w = DisturbanceSequence.from_array(rng.uniform(0, 1, (5, 2)))
        x1 = rng.uniform(-1, 1, 2)
        res = run_standard_rhc(sys, costs, w, x1, N=5, T=5)
        batch = solve_quadratic(HorizonProblem(
            sys=sys, x0=x1, costs=costs, t0=0, w_preview=w, N=5))
        assert res.J == pytest.approx(batch.value, rel=1e-9)
