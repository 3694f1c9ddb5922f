"""Driver tests: bound behavior, oracle agreement, policies, diagnostics."""

import math

import numpy as np
import pytest

from sddpkit.driver import (
    Algorithm,
    GapMode,
    SolveConfig,
    cross_validate_rho,
    evaluate_policy_out_of_sample,
    extensive_form_oracle,
    generalization_bound,
    run,
)
from sddpkit.kernel import ConditionalWeights, KernelConfig
from sddpkit.lp import LinearProgram, LpScaleError, solve
from sddpkit.robust import AmbiguityParams
from sddpkit.scenarios import DimensionMismatchError, StageDatum, TrajectorySet
from sddpkit.stages import InstanceTemplate, StageInfeasibleError

from _toys import STATE_DIM, make_toy

_KERNEL = KernelConfig(bandwidth_h=0.5)


def _config(algorithm=Algorithm.DD, rho=None, **overrides):
    ambiguity = None
    if algorithm is Algorithm.RDD:
        ambiguity = AmbiguityParams(rho=float(rho), nominal=ConditionalWeights.uniform(1))
    settings = dict(
        algorithm=algorithm,
        epsilon=1e-8,
        gap_mode=GapMode.ABSOLUTE,
        max_iterations=50,
        seed=7,
        kernel=_KERNEL,
        ambiguity=ambiguity,
    )
    settings.update(overrides)
    return SolveConfig(**settings)


def test_two_stage_gap_closes_within_n_plus_one_iterations():
    """With T=2 the backward pass is exact at each visited state, so the
    sandwich closes after at most N+1 root solves."""
    for seed in (0, 1, 2):
        traj, template = make_toy(seed, horizon_T=2, n_paths=3)
        _, records, _ = run(traj, template, _config(max_iterations=4))
        assert len(records) <= traj.n_paths + 1
        assert records[-1].gap <= 1e-8


def test_toy_bounds_match_extensive_oracle():
    """Both final bounds land on the monolithic tree LP's optimal value."""
    for seed in range(5):
        traj, template = make_toy(seed, horizon_T=3, n_paths=2)
        policy, records, _ = run(traj, template, _config())
        target = extensive_form_oracle(traj, template, kernel=_KERNEL)
        last = records[-1]
        assert last.gap <= 1e-8
        assert last.lower_bound == pytest.approx(target, abs=1e-6)
        assert last.upper_bound == pytest.approx(target, abs=1e-6)


def test_bound_records_are_monotone_and_sandwich_the_oracle():
    traj, template = make_toy(3, horizon_T=3, n_paths=3)
    _, records, _ = run(traj, template, _config())
    target = extensive_form_oracle(traj, template, kernel=_KERNEL)
    for prev, rec in zip(records, records[1:]):
        assert rec.lower_bound >= prev.lower_bound - 1e-9
        assert rec.upper_bound <= prev.upper_bound + 1e-12
    for rec in records:
        assert rec.lower_bound <= rec.upper_bound + 1e-7
        assert rec.lower_bound <= target + 1e-7
        assert rec.upper_bound >= target - 1e-7


def test_rdd_with_zero_radius_reproduces_dd_sequences():
    """A zero ambiguity radius collapses the robust solver onto the nominal
    one: identical bound sequences iteration by iteration."""
    for seed in (0, 1, 2):
        traj, template = make_toy(seed, horizon_T=3, n_paths=2)
        _, dd, _ = run(traj, template, _config())
        _, rdd, _ = run(traj, template, _config(algorithm=Algorithm.RDD, rho=0.0))
        assert len(dd) == len(rdd)
        for a, b in zip(dd, rdd):
            assert a.lower_bound == pytest.approx(b.lower_bound, abs=1e-8)
            assert a.upper_bound == pytest.approx(b.upper_bound, abs=1e-8)


def test_rdd_lower_bound_dominates_dd_at_convergence():
    """Worst case over a weight set containing the nominal costs at least
    as much as the nominal expectation."""
    for seed in (0, 1, 4):
        traj, template = make_toy(seed, horizon_T=3, n_paths=2)
        _, dd, _ = run(traj, template, _config())
        _, rdd, _ = run(traj, template, _config(algorithm=Algorithm.RDD, rho=0.3))
        assert dd[-1].gap <= 1e-8 and rdd[-1].gap <= 1e-8
        assert rdd[-1].lower_bound >= dd[-1].lower_bound - 1e-8


def test_in_sample_policy_mean_equals_root_lower_bound_for_t2():
    """Evaluating the trained policy on its own training paths reproduces
    the root bound exactly when the last stage has no cost-to-go."""
    traj, template = make_toy(11, horizon_T=2, n_paths=4)
    policy, records, _ = run(traj, template, _config(max_iterations=10))
    assert records[-1].gap <= 1e-8
    report = evaluate_policy_out_of_sample(policy, traj)
    assert report.n_failed == 0
    assert report.mean == pytest.approx(policy.root_lower_bound, abs=1e-6)


def test_policy_evaluation_is_deterministic():
    traj, template = make_toy(5, horizon_T=3, n_paths=3)
    policy, _, _ = run(traj, template, _config(max_iterations=15))
    test_traj, _ = make_toy(5, horizon_T=3, n_paths=6)
    first = evaluate_policy_out_of_sample(policy, test_traj)
    second = evaluate_policy_out_of_sample(policy, test_traj)
    assert np.array_equal(first.objectives, second.objectives)
    assert first.mean == second.mean and first.variance == second.variance


def test_policy_failure_paths_are_reported_not_fatal():
    """An out-of-sample path whose stage LP is infeasible shows up as a NaN
    objective and a failure count, while the other paths still score."""
    traj, template = make_toy(2, horizon_T=3, n_paths=2)
    policy, _, _ = run(traj, template, _config(max_iterations=15))
    test_traj, _ = make_toy(2, horizon_T=3, n_paths=3)
    broken = test_traj.stage_data(3)[1]
    test_traj.stage_data(3)[1] = StageDatum(
        c=broken.c, A=broken.A, B=broken.B, b=np.array([1.2, -0.5]), feature=broken.feature
    )
    report = evaluate_policy_out_of_sample(policy, test_traj)
    assert report.n_failed == 1
    assert np.isnan(report.objectives[1])
    assert math.isfinite(report.mean)


def test_iteration_counters_and_forward_scenario_shape():
    """Each iteration adds one cut and one envelope point per conditioning
    node: N per stage t >= 3 plus the root."""
    traj, template = make_toy(1, horizon_T=4, n_paths=3)
    _, records, _ = run(traj, template, _config(max_iterations=5, epsilon=1e-15))
    per_iter = (traj.horizon_T - 2) * traj.n_paths + 1
    for pos, rec in enumerate(records):
        assert rec.k == pos + 1
        assert rec.cuts_added == per_iter
        assert rec.envelope_points_added == per_iter
        assert len(rec.forward_scenario.indices) == traj.horizon_T - 1
        assert all(0 <= i < traj.n_paths for i in rec.forward_scenario.indices)
        assert rec.wall_time >= 0.0


def test_forward_path_batching_multiplies_cut_counts():
    traj, template = make_toy(1, horizon_T=3, n_paths=2)
    _, records, _ = run(
        traj, template, _config(max_iterations=2, epsilon=1e-15, forward_paths_per_iter=3)
    )
    assert records[0].cuts_added == 3 * ((traj.horizon_T - 2) * traj.n_paths + 1)


def test_runs_are_reproducible_across_calls():
    traj, template = make_toy(9, horizon_T=3, n_paths=3)
    _, first, x_first = run(traj, template, _config())
    _, second, x_second = run(traj, template, _config())
    assert len(first) == len(second)
    for a, b in zip(first, second):
        assert a.lower_bound == b.lower_bound
        assert a.upper_bound == b.upper_bound
        assert a.forward_scenario.indices == b.forward_scenario.indices
    assert np.array_equal(x_first, x_second)


def test_first_iteration_always_runs_and_budget_caps_the_rest():
    traj, template = make_toy(0, horizon_T=3, n_paths=2)
    _, records, _ = run(traj, template, _config(max_iterations=1))
    assert len(records) == 1
    _, records, _ = run(traj, template, _config(max_iterations=3, epsilon=1e-300))
    assert len(records) <= 3


def test_infeasible_subproblem_reports_iteration_stage_scenario():
    stage1 = StageDatum(
        c=np.array([0.0]),
        A=np.array([[1.0]]),
        B=np.array([[1.0]]),
        b=np.array([2.0]),
        feature=np.array([0.0]),
    )
    stage2 = StageDatum(
        c=np.array([1.0]),
        A=np.array([[1.0]]),
        B=np.array([[1.0]]),
        b=np.array([1.0]),
        feature=np.array([0.0]),
    )
    traj = TrajectorySet(horizon_T=2, n_paths=1, stage1=stage1, data=[[stage2]])
    template = InstanceTemplate(
        horizon_T=2,
        initial_state=np.zeros(1),
        feature_dim=1,
        datum_builder=lambda t, f: stage1,
    )
    with pytest.raises(StageInfeasibleError, match=r"k=1.*t=2.*i=1"):
        run(traj, template, _config(max_iterations=2))


def test_run_rejects_mismatched_horizon():
    traj, _ = make_toy(0, horizon_T=3, n_paths=2)
    _, template = make_toy(0, horizon_T=4, n_paths=2)
    with pytest.raises(DimensionMismatchError):
        run(traj, template, _config())


def _stacked_deterministic_value(template: InstanceTemplate, horizon_T: int) -> float:
    """Chain all stages of the zero-noise instance into one LP directly."""
    data = [template.datum_builder(t, np.zeros(1)) for t in range(1, horizon_T + 1)]
    offsets = np.concatenate([[0], np.cumsum([d.dim_out for d in data])])
    n = int(offsets[-1])
    rows = sum(d.n_rows for d in data)
    A = np.zeros((rows, n))
    b = np.zeros(rows)
    c = np.zeros(n)
    r = 0
    for k, d in enumerate(data):
        o = int(offsets[k])
        c[o : o + d.dim_out] = d.c
        A[r : r + d.n_rows, o : o + d.dim_out] = d.A
        if k == 0:
            b[r : r + d.n_rows] = d.b - d.B @ np.asarray(template.initial_state)
        else:
            po = int(offsets[k - 1])
            A[r : r + d.n_rows, po : po + data[k - 1].dim_out] = d.B
            b[r : r + d.n_rows] = d.b
        r += d.n_rows
    sol = solve(LinearProgram(objective=c, eq_matrix=A, eq_rhs=b))
    return float(sol.objective_value)


def test_extensive_oracle_equals_stacked_lp_when_deterministic():
    """With zero process noise every path is the same, so the tree LP and
    the plain deterministic chain agree."""
    traj, template = make_toy(4, horizon_T=3, n_paths=2, noise_std=0.0)
    target = _stacked_deterministic_value(template, 3)
    assert extensive_form_oracle(traj, template, kernel=_KERNEL) == pytest.approx(
        target, abs=1e-9
    )


def test_extensive_oracle_scale_cap():
    traj, template = make_toy(0, horizon_T=6, n_paths=4)
    with pytest.raises(LpScaleError):
        extensive_form_oracle(traj, template, kernel=_KERNEL)


def test_generalization_bound_zero_noise_and_lipschitz_gives_zero():
    value = generalization_bound(
        sigmas=[0.0, 0.0],
        lipschitz_constants=[0.0, 0.0],
        diameters=[1.0, 1.0],
        state_dims=[1, 1],
        g_min=1.0,
        deltas=[0.1, 0.1],
        eta=0.01,
        n_samples=100,
        h=0.4,
        p=1,
        horizon_T=3,
    )
    assert value == 0.0


def test_generalization_bound_frozen_spot_value():
    value = generalization_bound(
        sigmas=[1.0, 1.0],
        lipschitz_constants=[1.0, 1.0],
        diameters=[1.0, 1.0],
        state_dims=[1, 1],
        g_min=1.0,
        deltas=[0.1, 0.1],
        eta=0.01,
        n_samples=100,
        h=0.4,
        p=1,
        horizon_T=3,
    )
    assert value == pytest.approx(1.0903498452347289, abs=1e-12)


def test_generalization_bound_monotone_in_samples_and_horizon():
    def bound(n, T):
        k = T - 1
        return generalization_bound(
            sigmas=[1.0] * k,
            lipschitz_constants=[1.0] * k,
            diameters=[1.0] * k,
            state_dims=[1] * k,
            g_min=1.0,
            deltas=[0.1] * k,
            eta=0.01,
            n_samples=n,
            h=0.4,
            p=1,
            horizon_T=T,
        )

    assert bound(200, 3) < bound(100, 3)
    assert bound(400, 3) < bound(200, 3)
    assert bound(100, 4) > bound(100, 3)
    assert bound(100, 5) > bound(100, 4)


def test_generalization_bound_rejects_bad_domains():
    good = dict(
        sigmas=[1.0],
        lipschitz_constants=[1.0],
        diameters=[1.0],
        state_dims=[1],
        g_min=1.0,
        deltas=[0.1],
        eta=0.01,
        n_samples=100,
        h=0.4,
        p=1,
        horizon_T=2,
    )
    for key, bad in [
        ("deltas", [1.2]),
        ("deltas", [0.0]),
        ("eta", 0.0),
        ("g_min", -1.0),
        ("h", 0.0),
        ("sigmas", [1.0, 1.0]),
        ("diameters", [-1.0]),
    ]:
        with pytest.raises(ValueError):
            generalization_bound(**{**good, key: bad})


def test_solve_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        SolveConfig(max_iterations=0)
    with pytest.raises(ValueError):
        SolveConfig(forward_paths_per_iter=0)
    with pytest.raises(ValueError):
        SolveConfig(seed=-1)
    with pytest.raises(ValueError):
        SolveConfig(algorithm=Algorithm.RDD)


def test_cross_validate_rho_scores_the_grid():
    traj, template = make_toy(6, horizon_T=2, n_paths=6)
    result = cross_validate_rho(
        traj,
        template,
        _config(max_iterations=8),
        c_grid=[0.01, 1.0],
        n_folds=2,
    )
    assert len(result.scores) == 2
    assert result.best_c in (0.01, 1.0)
    assert result.best_rho >= 0.0
    assert all(math.isfinite(s) for _, s in result.scores)
