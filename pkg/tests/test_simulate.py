import math

import numpy as np
import pytest
from scipy.stats import poisson

import barw.simulate as sim
from barw import (
    ModelParams,
    TruncationError,
    branch_prob,
    complete_graph,
    conditional_expected_extinction,
    estimate_conditioned_length,
    estimate_hitting_prob,
    graph_from_name,
    hitting_profile,
    parse_graph_file,
    run_to_absorption,
    sample_conditioned_path,
    single_origin_state,
    step_meanfield,
    step_particle,
    threshold_u,
    tilted_kernel,
    transition_log_row,
    trial_stream,
    tv_distance,
)
from barw.simulate import ParticleState, Trajectory


class TestTrialStream:
    def test_deterministic_per_key(self):
        a = trial_stream(42, 7).random(4)
        b = trial_stream(42, 7).random(4)
        assert np.array_equal(a, b)

    def test_distinct_trials_distinct_streams(self):
        assert not np.array_equal(trial_stream(42, 0).random(4), trial_stream(42, 1).random(4))

    def test_distinct_seeds_distinct_streams(self):
        assert not np.array_equal(trial_stream(1, 0).random(4), trial_stream(2, 0).random(4))

    def test_seed_range_validated(self):
        with pytest.raises(ValueError):
            trial_stream(-1, 0)
        with pytest.raises(ValueError):
            trial_stream(1 << 64, 0)
        with pytest.raises(ValueError):
            trial_stream(1, -1)


class TestStepMeanfield:
    def test_zero_is_absorbing(self):
        stream = trial_stream(0, 0)
        assert all(step_meanfield(ModelParams(2.0, 50), 0, stream) == 0 for _ in range(100))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            step_meanfield(ModelParams(2.0, 50), 51, trial_stream(0, 0))

    def test_mean_matches_n_b(self):
        params = ModelParams(2.0, 50)
        stream = trial_stream(101, 0)
        trials = 100_000
        total = sum(step_meanfield(params, 10, stream) for _ in range(trials))
        mean = total / trials
        expect = 50 * branch_prob(params, 10)  # = 13.4064...
        sigma = math.sqrt(50 * branch_prob(params, 10) * (1 - branch_prob(params, 10)) / trials)
        assert abs(mean - expect) <= 4 * sigma

    def test_empirical_pmf_close_in_tv(self):
        params = ModelParams(2.0, 50)
        stream = trial_stream(202, 0)
        trials = 200_000
        samples = np.fromiter(
            (step_meanfield(params, 10, stream) for _ in range(trials)), dtype=np.int64
        )
        empirical = np.bincount(samples, minlength=51)[:51] / trials
        exact = np.exp(transition_log_row(params, 10))
        assert tv_distance(empirical, exact) <= 0.01


class TestExactPoissonSampler:
    @pytest.mark.parametrize("lam", [0.5, 2.0, 6.0, 40.0])
    def test_tv_against_exact_pmf(self, lam):
        stream = trial_stream(303, 0)
        trials = 200_000
        samples = stream.poisson(lam, size=trials)
        hi = int(samples.max()) + 1
        empirical = np.bincount(samples, minlength=hi) / trials
        exact = poisson.pmf(np.arange(hi), lam)
        assert tv_distance(empirical, exact) <= 0.01


class TestGraphSpec:
    def test_complete_graph_structure(self):
        g = complete_graph(5, allow_self=True)
        assert g.vertex_count == 5
        assert all(len(a) == 4 for a in g.adjacency)
        assert g.uniform_targets
        assert np.array_equal(g.targets[2], np.arange(5))

    def test_without_self_moves(self):
        g = complete_graph(4, allow_self=False)
        assert not g.uniform_targets
        assert np.array_equal(g.targets[1], np.array([0, 2, 3]))

    def test_duplicate_neighbors_rejected(self):
        with pytest.raises(ValueError):
            sim.GraphSpec(3, ([1, 1], [0], [0]), allow_self=False)

    def test_isolated_vertex_rejected_without_self(self):
        with pytest.raises(ValueError):
            sim.GraphSpec(2, ([1], []), allow_self=False)

    def test_isolated_vertex_ok_with_self(self):
        g = sim.GraphSpec(2, ([1], []), allow_self=True)
        assert np.array_equal(g.targets[1], np.array([1]))


class TestGraphFile:
    def write(self, tmp_path, text):
        path = tmp_path / "graph.txt"
        path.write_text(text)
        return path

    def test_round_trip(self, tmp_path):
        path = self.write(tmp_path, "vertices=3 self_loops=0\n0 1\n1 2\n2 0\n")
        g = parse_graph_file(path)
        assert g.vertex_count == 3
        assert not g.allow_self
        assert np.array_equal(g.adjacency[1], np.array([0, 2]))

    def test_header_flag_on(self, tmp_path):
        g = parse_graph_file(self.write(tmp_path, "vertices=2 self_loops=1\n0 1\n"))
        assert g.allow_self

    def test_bad_header(self, tmp_path):
        with pytest.raises(ValueError):
            parse_graph_file(self.write(tmp_path, "nodes=3\n0 1\n"))

    def test_duplicate_edge_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            parse_graph_file(self.write(tmp_path, "vertices=3 self_loops=0\n0 1\n1 0\n"))

    def test_self_edge_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            parse_graph_file(self.write(tmp_path, "vertices=2 self_loops=1\n0 0\n"))

    def test_complete_name(self):
        g = graph_from_name("complete:6")
        assert g.vertex_count == 6 and g.allow_self and g.uniform_targets
        g2 = graph_from_name("complete:6", allow_self=False)
        assert not g2.allow_self


class TestStepParticle:
    def test_empty_stays_empty(self):
        g = complete_graph(5)
        state = ParticleState(np.zeros(5, dtype=bool), 3)
        nxt = step_particle(g, state, 2.0, trial_stream(0, 0))
        assert nxt.count == 0
        assert nxt.time == 4

    def test_single_vertex_self_loop_survival(self):
        # one vertex whose only target is itself: survives iff Poisson(2) == 1
        g = sim.GraphSpec(1, ([],), allow_self=True)
        state = single_origin_state(g)
        trials = 100_000
        hits = sum(
            step_particle(g, state, 2.0, trial_stream(404, i)).count for i in range(trials)
        )
        p = 2 * math.exp(-2)
        sigma = math.sqrt(p * (1 - p) / trials)
        assert abs(hits / trials - p) <= 4 * sigma

    def test_requires_positive_mean(self):
        g = complete_graph(3)
        with pytest.raises(ValueError):
            step_particle(g, single_origin_state(g), 0.0, trial_stream(0, 0))

    @pytest.mark.parametrize("n,lam,x", [(30, 2.0, 10), (30, 6.0, 5), (50, 1.5, 20)])
    def test_meanfield_equivalence(self, n, lam, x):
        # on K_n with self moves the one-step count is exactly Bin(n, b(x))
        g = complete_graph(n, allow_self=True)
        trials = 200_000
        counts = sim.particle_step_counts(g, x, lam, trials, seed=505)
        empirical = np.bincount(counts, minlength=n + 1)[: n + 1] / trials
        exact = np.exp(transition_log_row(ModelParams(lam, n), x))
        assert tv_distance(empirical, exact) <= 0.01


class TestTrajectory:
    def test_flags_must_be_consistent(self):
        with pytest.raises(ValueError):
            Trajectory([3, 0], absorbed_at_zero=True, crossed_u=True, u=5)
        with pytest.raises(ValueError):
            Trajectory([3, 2], absorbed_at_zero=True, crossed_u=False, u=5)

    def test_truncated_property(self):
        t = Trajectory([3, 2], absorbed_at_zero=False, crossed_u=False, u=5)
        assert t.truncated and t.steps == 1


class TestRunToAbsorption:
    def test_start_at_zero(self):
        traj = run_to_absorption(ModelParams(2.0, 50), 0, 10, 100, trial_stream(0, 0))
        assert traj.absorbed_at_zero
        assert traj.states.tolist() == [0]

    def test_start_at_or_above_u_crosses_immediately(self):
        traj = run_to_absorption(ModelParams(2.0, 50), 10, 10, 100, trial_stream(0, 0))
        assert traj.crossed_u and traj.steps == 0
        traj = run_to_absorption(ModelParams(2.0, 50), 12, 10, 100, trial_stream(0, 0))
        assert traj.crossed_u and traj.steps == 0

    def test_exit_flags_partition(self):
        params = ModelParams(2.0, 50)
        for i in range(200):
            traj = run_to_absorption(params, 3, 10, 10_000, trial_stream(1, i))
            assert traj.absorbed_at_zero != traj.crossed_u
            if traj.absorbed_at_zero:
                assert traj.states[-1] == 0
            else:
                assert traj.states[-1] >= 10

    def test_truncation_flagged_not_raised(self):
        params = ModelParams(2.0, 50)
        traj = run_to_absorption(params, 25, None, 3, trial_stream(2, 0))
        # from the middle with no threshold, three steps never reach 0
        assert traj.truncated
        assert len(traj.states) == 4

    def test_absorption_fraction_matches_exact_phi(self):
        params = ModelParams(2.0, 50)
        phi3 = hitting_profile(params, 10).phi(3)
        trials = 20_000
        absorbed = sum(
            run_to_absorption(params, 3, 10, 10**6, trial_stream(606, i)).absorbed_at_zero
            for i in range(trials)
        )
        p_hat = absorbed / trials
        se = math.sqrt(p_hat * (1 - p_hat) / trials)
        assert abs(p_hat - phi3) <= 4 * se


@pytest.fixture(scope="module")
def kernel():
    params = ModelParams(1.5, 300)
    return tilted_kernel(hitting_profile(params, threshold_u(params, 0.05, "window")))


class TestSampleConditionedPath:
    def test_paths_stay_below_u_and_die(self, kernel):
        for i in range(2000):
            traj = sample_conditioned_path(kernel, 20, trial_stream(707, i))
            assert traj.absorbed_at_zero
            assert traj.states.max() < kernel.u

    def test_minimum_one_step(self, kernel):
        for i in range(200):
            assert sample_conditioned_path(kernel, 1, trial_stream(808, i)).steps >= 1

    def test_start_range_validated(self, kernel):
        with pytest.raises(ValueError):
            sample_conditioned_path(kernel, 0, trial_stream(0, 0))
        with pytest.raises(ValueError):
            sample_conditioned_path(kernel, kernel.u, trial_stream(0, 0))

    def test_mean_length_matches_exact_solve(self, kernel):
        t = conditional_expected_extinction(kernel).values
        est = estimate_conditioned_length(kernel, 20, 100_000, seed=909)
        assert abs(est.mean - t[20]) <= 4 * est.std_error


class TestEstimateHittingProb:
    def test_start_at_zero_trivial(self):
        est = estimate_hitting_prob(ModelParams(2.0, 50), 10, 0, 1000, seed=1)
        assert est.mean == 1.0
        assert est.std_error == 0.0

    def test_matches_exact_solution(self):
        params = ModelParams(2.0, 50)
        est = estimate_hitting_prob(params, 10, 3, 20_000, seed=1234)
        phi3 = hitting_profile(params, 10).phi(3)
        assert abs(est.mean - phi3) <= 4 * est.std_error

    def test_bit_identical_across_worker_counts(self):
        params = ModelParams(2.0, 50)
        runs = [
            estimate_hitting_prob(params, 10, 3, 5000, seed=5, workers=w) for w in (1, 2, 5)
        ]
        assert len({(r.mean, r.std_error) for r in runs}) == 1

    def test_preconditions(self):
        params = ModelParams(2.0, 50)
        with pytest.raises(ValueError):
            estimate_hitting_prob(params, 10, 10, 100, seed=1)  # x0 >= u
        with pytest.raises(ValueError):
            estimate_hitting_prob(params, 10, 3, 0, seed=1)

    def test_step_cap_trips_truncation_error(self, monkeypatch):
        monkeypatch.setattr(sim, "STEP_CAP", 1)
        with pytest.raises(TruncationError):
            estimate_hitting_prob(ModelParams(2.0, 50), 40, 25, 50, seed=3)


class TestTvDistance:
    def test_identical(self):
        p = np.array([0.25, 0.75])
        assert tv_distance(p, p) == 0.0

    def test_disjoint(self):
        assert tv_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0

    def test_padding(self):
        assert tv_distance(np.array([1.0]), np.array([0.5, 0.5])) == pytest.approx(0.5)
