"""Solve orchestration: forward sampling, backward passes, bounds, policies.

One iteration samples a forward path through the empirical scenario sets,
then walks backward from the last stage: at each stage it solves the N
realization subproblems at the visited state, aggregates their values and
copy-row duals into one new cut and one new envelope point per
conditioning node (per stage-(t-1) realization, or the root), and finally
re-solves the root problem against both approximations to report a
deterministic lower and upper bound.

Approximations are keyed (t, j): the stage-t cost-to-go conditioned on
the stage-(t-1) node j, with j = None at the root.  The backward pass at
stage t reads the (t+1, i) pools and writes the (t, j) pools, so the same
N subproblem solves serve every conditioning node's update.

The robust variant replaces each node's nominal weighting with the
worst-case weights of its ambiguity set, both for cut aggregation (any
fixed member of the set yields a valid under-estimator; the maximizer
makes it tight at the anchor) and for envelope values (the worst-case
combination of per-realization upper values dominates the robust
cost-to-go).  Out-of-sample policies embed the full dual block instead,
since test covariates are not anchors.

The reported upper bound is the running minimum over iterations: each
root envelope solve is individually valid, while the penalty scale that
keeps the envelope honest can grow as new cut gradients are observed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .approximations import (
    LOWER_BOX_DEFAULT,
    Cut,
    CutLowerTerms,
    CutPool,
    EnvelopeStore,
    EnvelopeUpperTerms,
    WeightedLowerTerms,
    aggregate_backward,
)
from .kernel import ConditionalWeights, KernelConfig, nw_weights
from .lp import LinearProgram, LpScaleError, LpStatus, solve
from .robust import (
    AmbiguityParams,
    DroLowerTerms,
    RhoRule,
    inner_max_primal,
    rate_scaled_rho,
    sanitize_nominal,
)
from .scenarios import (
    DimensionMismatchError,
    ForwardScenario,
    StageDatum,
    TrajectorySet,
    sample_forward,
)
from .stages import (
    InstanceTemplate,
    StageInfeasibleError,
    StageProblem,
    assemble_stage_lp,
)

__all__ = [
    "Algorithm",
    "GapMode",
    "SolveConfig",
    "IterationRecord",
    "Policy",
    "PolicyReport",
    "CrossValidationResult",
    "run",
    "gap_converged",
    "evaluate_policy_out_of_sample",
    "extensive_form_oracle",
    "generalization_bound",
    "cross_validate_rho",
]


class Algorithm(Enum):
    DD = "DD"
    RDD = "RDD"


class GapMode(Enum):
    ABSOLUTE = "Absolute"
    RELATIVE = "Relative"


@dataclass(frozen=True)
class SolveConfig:
    """Knobs of one solver run.

    ``ambiguity`` is only consulted when ``algorithm`` is RDD; its nominal
    field is a placeholder that gets replaced per conditioning node, and
    with a RateScaled rule the radius is re-derived from the coefficient
    at run start using the training N and the effective bandwidth.
    """

    algorithm: Algorithm = Algorithm.DD
    epsilon: float = 1e-6
    gap_mode: GapMode = GapMode.RELATIVE
    max_iterations: int = 200
    forward_paths_per_iter: int = 1
    seed: int = 0
    kernel: KernelConfig = field(default_factory=KernelConfig)
    ambiguity: AmbiguityParams | None = None
    M_override: float | None = None
    lower_box: float = LOWER_BOX_DEFAULT

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.forward_paths_per_iter < 1:
            raise ValueError("forward_paths_per_iter must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.algorithm is Algorithm.RDD and self.ambiguity is None:
            raise ValueError("RDD requires ambiguity parameters")


@dataclass(frozen=True)
class IterationRecord:
    k: int
    lower_bound: float
    upper_bound: float
    gap: float
    wall_time: float
    cuts_added: int
    envelope_points_added: int
    forward_scenario: ForwardScenario


@dataclass
class Policy:
    """Everything needed to act greedily after training."""

    algorithm: Algorithm
    trajectories: TrajectorySet
    template: InstanceTemplate
    kernel: KernelConfig
    rho: float
    pools: CutPool
    store: EnvelopeStore
    root_decision: np.ndarray
    root_lower_bound: float


@dataclass(frozen=True)
class PolicyReport:
    """Per-path realized objectives and their summary statistics.

    Failed paths (recourse breakdown on out-of-sample data) carry NaN
    objectives and are excluded from the statistics.  ``mean_utility``
    is the negated mean objective (objectives are costs); ``sharpe`` is
    mean utility over the across-path standard deviation.
    """

    objectives: np.ndarray
    n_paths: int
    n_failed: int
    mean: float
    variance: float
    std: float
    mean_utility: float
    sharpe: float


def _summarize(objectives: list[float], n_paths: int) -> PolicyReport:
    arr = np.array(objectives, dtype=float)
    ok = arr[np.isfinite(arr)]
    n_failed = n_paths - ok.size
    if ok.size == 0:
        mean = var = std = math.nan
    else:
        mean = float(ok.mean())
        var = float(ok.var())
        std = math.sqrt(var)
    utility = -mean if ok.size else math.nan
    if ok.size and std > 0:
        sharpe = utility / std
    elif ok.size:
        sharpe = math.inf if utility > 0 else (-math.inf if utility < 0 else 0.0)
    else:
        sharpe = math.nan
    return PolicyReport(
        objectives=arr,
        n_paths=n_paths,
        n_failed=n_failed,
        mean=mean,
        variance=var,
        std=std,
        mean_utility=utility,
        sharpe=sharpe,
    )


# ---------------------------------------------------------------------------
# Core solver
# ---------------------------------------------------------------------------


class _Runner:
    def __init__(self, traj: TrajectorySet, template: InstanceTemplate, config: SolveConfig):
        if traj.horizon_T != template.horizon_T:
            raise DimensionMismatchError(
                f"trajectories span T={traj.horizon_T}, template T={template.horizon_T}"
            )
        x0 = np.asarray(template.initial_state, dtype=float).reshape(-1)
        if x0.shape[0] != traj.stage1.dim_in:
            raise DimensionMismatchError(
                f"initial state has {x0.shape[0]} entries, stage 1 expects "
                f"{traj.stage1.dim_in}"
            )
        self.traj = traj
        self.template = template
        self.config = config
        self.x0 = x0
        self.N = traj.n_paths
        self.T = traj.horizon_T
        self.p = traj.feature_dim
        self.h = config.kernel.effective_h(self.N, self.p)
        self.root_problem = StageProblem(1, traj.stage1)
        self.problems: dict[int, list[StageProblem]] = {
            t: [StageProblem(t, d) for d in traj.stage_data(t)]
            for t in range(2, self.T + 1)
        }
        # W[t][j, i]: weight of stage-(t+1) index i given the stage-t node j.
        self.W: dict[int, np.ndarray] = {}
        for t in range(2, self.T):
            anchors = traj.features(t)
            self.W[t] = np.vstack(
                [nw_weights(q, anchors, config.kernel).weights for q in anchors]
            )
        self.pools = CutPool(lower_box=config.lower_box)
        self.store = EnvelopeStore(penalty_override=config.M_override)
        self.rho = 0.0
        if config.algorithm is Algorithm.RDD:
            amb = config.ambiguity
            assert amb is not None
            if amb.rho_rule is RhoRule.RATE_SCALED:
                self.rho = rate_scaled_rho(amb.c_coefficient, self.N, self.h, self.p)
            else:
                self.rho = amb.rho
        self.root_decision: np.ndarray | None = None
        self.best_upper = math.inf

    # -- helpers ------------------------------------------------------------

    def _solve_checked(self, lp: LinearProgram, k: int, t: int, i: int | None):
        sol = solve(lp)
        where = f"iteration k={k}, stage t={t}" + ("" if i is None else f", scenario i={i + 1}")
        if sol.status is LpStatus.INFEASIBLE:
            raise StageInfeasibleError(f"{where}: in-sample subproblem is infeasible")
        if sol.status is not LpStatus.OPTIMAL:
            raise RuntimeError(f"{where}: solver returned {sol.status.value}")
        return sol

    def _lower_terms(self, t: int, i: int | None) -> CutLowerTerms | None:
        """Cost-to-go epigraph of the stage-t subproblem under realization i."""
        if t >= self.T:
            return None
        return CutLowerTerms(self.pools.cuts(t + 1, i), lower_box=self.config.lower_box)

    def _robust_params(self, nominal: np.ndarray) -> AmbiguityParams:
        return AmbiguityParams(rho=self.rho, nominal=sanitize_nominal(nominal))

    def _worst_case(self, values: np.ndarray, nominal: np.ndarray) -> tuple[float, np.ndarray]:
        if self.rho == 0.0:
            w = sanitize_nominal(nominal).weights
            return float(w @ values), w
        value, worst = inner_max_primal(values, self._robust_params(nominal))
        return value, worst / worst.sum()

    # -- passes ---------------------------------------------------------

    def root_solve_lower(self, k: int):
        lp = assemble_stage_lp(
            self.root_problem,
            self.x0,
            extra_terms=CutLowerTerms(self.pools.cuts(2, None), lower_box=self.config.lower_box),
            include_copy=False,
        )
        sol = self._solve_checked(lp, k, 1, None)
        self.root_decision = sol.primal[: self.root_problem.state_dim_out].copy()
        return sol

    def root_solve_upper(self, k: int) -> float:
        anchors, values = self.store.points(2, None)
        lp = assemble_stage_lp(
            self.root_problem,
            self.x0,
            extra_terms=EnvelopeUpperTerms(anchors, values, self.store.penalty(2)),
            include_copy=False,
        )
        return float(self._solve_checked(lp, k, 1, None).objective_value)

    def forward_pass(self, k: int, m: int) -> tuple[ForwardScenario, list[np.ndarray]]:
        cfg = self.config

        def weights_fn(t: int, prev_feature: np.ndarray) -> ConditionalWeights:
            if t == 2:
                return ConditionalWeights.uniform(self.N)
            return nw_weights(prev_feature, self.traj.features(t - 1), cfg.kernel)

        seed = int(np.random.SeedSequence((cfg.seed, k, m)).generate_state(1)[0])
        scenario = sample_forward(self.traj, weights_fn, seed)
        assert self.root_decision is not None
        states = [self.root_decision]
        for t in range(2, self.T):
            i = scenario.indices[t - 2]
            lp = assemble_stage_lp(
                self.problems[t][i],
                states[-1],
                extra_terms=self._lower_terms(t, i),
                include_copy=False,
            )
            sol = self._solve_checked(lp, k, t, i)
            states.append(sol.primal[: self.problems[t][i].state_dim_out].copy())
        return scenario, states

    def backward_pass(self, k: int, states: list[np.ndarray]) -> tuple[int, int]:
        robust = self.config.algorithm is Algorithm.RDD
        n_cuts = n_points = 0
        for t in range(self.T, 1, -1):
            anchor = states[t - 2]
            lower_vals = np.empty(self.N)
            upper_vals = np.empty(self.N)
            grads = []
            for i in range(self.N):
                prob = self.problems[t][i]
                sol = self._solve_checked(
                    assemble_stage_lp(prob, anchor, extra_terms=self._lower_terms(t, i)),
                    k,
                    t,
                    i,
                )
                lower_vals[i] = sol.objective_value
                grads.append(np.array([sol.duals[r] for r in prob.copy_rows]))
                if t == self.T:
                    upper_vals[i] = lower_vals[i]
                else:
                    anchors, values = self.store.points(t + 1, i)
                    ub_sol = self._solve_checked(
                        assemble_stage_lp(
                            prob,
                            anchor,
                            extra_terms=EnvelopeUpperTerms(
                                anchors, values, self.store.penalty(t + 1)
                            ),
                            include_copy=False,
                        ),
                        k,
                        t,
                        i,
                    )
                    upper_vals[i] = ub_sol.objective_value
            if t == 2:
                nodes: list[tuple[int | None, np.ndarray]] = [
                    (None, np.full(self.N, 1.0 / self.N))
                ]
            else:
                nodes = [(j, self.W[t - 1][j]) for j in range(self.N)]
            for j, nominal in nodes:
                if robust:
                    cut_value, w_lo = self._worst_case(lower_vals, nominal)
                    cut = Cut(
                        gradient=np.array(grads).T @ w_lo,
                        intercept=cut_value,
                        anchor=anchor,
                        iteration_k=k,
                    )
                    point_value, _ = self._worst_case(upper_vals, nominal)
                else:
                    cut = aggregate_backward(
                        lower_vals, grads, ConditionalWeights(nominal), anchor, k
                    )
                    point_value = float(nominal @ upper_vals)
                self.pools.add(t, j, cut)
                self.store.note_gradient(t, cut.gradient)
                self.store.add(t, j, anchor, point_value)
                n_cuts += 1
                n_points += 1
        return n_cuts, n_points

    def iterate(self, k: int) -> IterationRecord:
        started = time.perf_counter()
        if self.root_decision is None:
            self.root_solve_lower(k)
        scenario = None
        n_cuts = n_points = 0
        for m in range(self.config.forward_paths_per_iter):
            sc, states = self.forward_pass(k, m)
            scenario = scenario or sc
            dc, dp = self.backward_pass(k, states)
            n_cuts += dc
            n_points += dp
        lb = float(self.root_solve_lower(k).objective_value)
        self.best_upper = min(self.best_upper, self.root_solve_upper(k))
        gap = self._gap(lb, self.best_upper)
        assert scenario is not None
        return IterationRecord(
            k=k,
            lower_bound=lb,
            upper_bound=self.best_upper,
            gap=gap,
            wall_time=time.perf_counter() - started,
            cuts_added=n_cuts,
            envelope_points_added=n_points,
            forward_scenario=scenario,
        )

    def _gap(self, lb: float, ub: float) -> float:
        spread = abs(ub - lb)
        if self.config.gap_mode is GapMode.ABSOLUTE:
            return spread
        return spread / max(min(abs(lb), abs(ub)), 1e-9)

    def converged(self, lb: float, ub: float) -> bool:
        return gap_converged(self.config, lb, ub)


def gap_converged(config: SolveConfig, lower_bound: float, upper_bound: float) -> bool:
    """Termination test: absolute spread, or relative to the smaller bound
    magnitude with a 1e-9 absolute floor so zero-valued optima terminate."""
    spread = abs(upper_bound - lower_bound)
    if config.gap_mode is GapMode.ABSOLUTE:
        return spread <= config.epsilon
    return spread <= max(config.epsilon * min(abs(lower_bound), abs(upper_bound)), 1e-9)


def run(
    traj: TrajectorySet, instance: InstanceTemplate, config: SolveConfig
) -> tuple[Policy, list[IterationRecord], np.ndarray]:
    """Train on the given trajectories until the gap closes or the budget ends.

    Returns the greedy policy handle, the per-iteration telemetry, and the
    final first-stage decision.
    """
    runner = _Runner(traj, instance, config)
    records: list[IterationRecord] = []
    for k in range(1, config.max_iterations + 1):
        rec = runner.iterate(k)
        records.append(rec)
        if runner.converged(rec.lower_bound, rec.upper_bound):
            break
    assert runner.root_decision is not None
    policy = Policy(
        algorithm=config.algorithm,
        trajectories=traj,
        template=instance,
        kernel=config.kernel,
        rho=runner.rho,
        pools=runner.pools,
        store=runner.store,
        root_decision=runner.root_decision.copy(),
        root_lower_bound=records[-1].lower_bound,
    )
    return policy, records, runner.root_decision.copy()


# ---------------------------------------------------------------------------
# Policy evaluation
# ---------------------------------------------------------------------------


def evaluate_policy_out_of_sample(
    policy: Policy, test_traj: TrajectorySet
) -> PolicyReport:
    """Greedy rollout of the trained approximations over test trajectories.

    At each realized stage the conditional weights are recomputed against
    the training anchors; the expected (or robust) cost-to-go over the
    per-scenario cut pools then drives the stage decision.  A path whose
    stage LP is infeasible is reported as failed, not fatal.
    """
    train = policy.trajectories
    if test_traj.horizon_T != train.horizon_T:
        raise DimensionMismatchError(
            f"test horizon T={test_traj.horizon_T}, training T={train.horizon_T}"
        )
    T = train.horizon_T
    n_train = train.n_paths
    x1 = policy.root_decision
    stage1_cost = float(train.stage1.c @ x1)
    objectives: list[float] = []
    for path in range(test_traj.n_paths):
        x_prev = x1
        total = stage1_cost
        failed = False
        for t in range(2, T + 1):
            datum = test_traj.stage_data(t)[path]
            prob = StageProblem(t, datum)
            extra = None
            if t < T:
                w = nw_weights(datum.feature, train.features(t), policy.kernel)
                node_cuts = [policy.pools.cuts(t + 1, i) for i in range(n_train)]
                if policy.algorithm is Algorithm.RDD:
                    extra = DroLowerTerms(
                        AmbiguityParams(rho=policy.rho, nominal=sanitize_nominal(w)),
                        node_cuts,
                        lower_box=policy.pools.lower_box,
                    )
                else:
                    extra = WeightedLowerTerms(
                        node_cuts=[
                            (float(wi), cuts) for wi, cuts in zip(w.weights, node_cuts)
                        ],
                        lower_box=policy.pools.lower_box,
                    )
            lp = assemble_stage_lp(prob, x_prev, extra_terms=extra, include_copy=False)
            sol = solve(lp)
            if sol.status is not LpStatus.OPTIMAL:
                failed = True
                break
            x_t = sol.primal[: prob.state_dim_out]
            total += float(datum.c @ x_t)
            x_prev = x_t
        objectives.append(math.nan if failed else total)
    return _summarize(objectives, test_traj.n_paths)


# ---------------------------------------------------------------------------
# Extensive-form oracle
# ---------------------------------------------------------------------------

_ORACLE_MAX_LEAVES = 256


def extensive_form_oracle(
    traj: TrajectorySet,
    instance: InstanceTemplate,
    kernel: KernelConfig | None = None,
) -> float:
    """Optimal value of the nominal discretized problem, solved monolithically.

    Enumerates the recombining tree (uniform root weights, conditional
    weights along every path) and solves the one big LP.  Only for tiny
    instances: N^(T-1) leaves capped at 256.
    """
    kernel = kernel or KernelConfig()
    N, T = traj.n_paths, traj.horizon_T
    if N ** (T - 1) > _ORACLE_MAX_LEAVES:
        raise LpScaleError(
            f"extensive form would have {N ** (T - 1)} leaves; cap is {_ORACLE_MAX_LEAVES}"
        )
    x0 = np.asarray(instance.initial_state, dtype=float).reshape(-1)
    W: dict[int, np.ndarray] = {}
    for t in range(2, T):
        anchors = traj.features(t)
        W[t] = np.vstack([nw_weights(q, anchors, kernel).weights for q in anchors])

    # Flat node enumeration: data/parents/probs are indexed by node id,
    # assigned level by level so a node's parent always precedes it.
    data: list[StageDatum] = []
    parents: list[int] = []
    probs: list[float] = []
    data.append(traj.stage1)
    parents.append(-1)
    probs.append(1.0)
    prev_level: list[tuple[int, int]] = [(0, -1)]  # (node id, scenario index)
    for t in range(2, T + 1):
        level: list[tuple[int, int]] = []
        for parent_id, parent_i in prev_level:
            if t == 2:
                weights = np.full(N, 1.0 / N)
            else:
                weights = W[t - 1][parent_i]
            for i in range(N):
                data.append(traj.stage_data(t)[i])
                parents.append(parent_id)
                probs.append(probs[parent_id] * float(weights[i]))
                level.append((len(data) - 1, i))
        prev_level = level

    offset = 0
    cols: list[tuple[int, int]] = []  # (column offset, width) per node id
    for d in data:
        cols.append((offset, d.dim_out))
        offset += d.dim_out
    n_vars = offset
    n_rows = sum(d.n_rows for d in data)
    A = np.zeros((n_rows, n_vars))
    b = np.zeros(n_rows)
    c = np.zeros(n_vars)
    r0 = 0
    for node, d in enumerate(data):
        o, w = cols[node]
        c[o : o + w] = probs[node] * d.c
        A[r0 : r0 + d.n_rows, o : o + w] = d.A
        if parents[node] < 0:
            b[r0 : r0 + d.n_rows] = d.b - d.B @ x0
        else:
            po, pw = cols[parents[node]]
            A[r0 : r0 + d.n_rows, po : po + pw] = d.B
            b[r0 : r0 + d.n_rows] = d.b
        r0 += d.n_rows
    sol = solve(LinearProgram(objective=c, eq_matrix=A, eq_rhs=b))
    if sol.status is not LpStatus.OPTIMAL:
        raise RuntimeError(f"extensive form came back {sol.status.value}")
    return float(sol.objective_value)


# ---------------------------------------------------------------------------
# Generalization bound
# ---------------------------------------------------------------------------


def generalization_bound(
    sigmas,
    lipschitz_constants,
    diameters,
    state_dims,
    g_min: float,
    deltas,
    eta: float,
    n_samples: int,
    h: float,
    p: int,
    horizon_T: int,
) -> float:
    """Evaluate the out-of-sample error bound

        sum_{t=2}^{T} sqrt(sigma_t^2 * log(N^(t-2) prod_{s<t}(D_s/eta)^{d_s} / delta_t)
                           / (N h^p g_min))  +  2 L_t eta,

    with the absolute constants taken as 1.  ``sigmas``, ``lipschitz_constants``
    and ``deltas`` are indexed by t = 2..T; ``diameters`` and ``state_dims``
    by s = 1..T-1.  Purely diagnostic.
    """
    T = int(horizon_T)
    if T < 2:
        raise ValueError("horizon_T must be at least 2")
    sig = np.asarray(sigmas, dtype=float).reshape(-1)
    lip = np.asarray(lipschitz_constants, dtype=float).reshape(-1)
    dia = np.asarray(diameters, dtype=float).reshape(-1)
    dim = np.asarray(state_dims, dtype=float).reshape(-1)
    del_ = np.asarray(deltas, dtype=float).reshape(-1)
    if not (len(sig) == len(lip) == len(del_) == T - 1):
        raise ValueError("sigmas, lipschitz_constants, deltas must have length T-1")
    if not (len(dia) == len(dim) == T - 1):
        raise ValueError("diameters and state_dims must have length T-1")
    if np.any(sig < 0) or np.any(lip < 0):
        raise ValueError("sigmas and lipschitz_constants must be nonnegative")
    if np.any(dia <= 0) or np.any(dim <= 0):
        raise ValueError("diameters and state_dims must be positive")
    if np.any(del_ <= 0) or np.any(del_ >= 1):
        raise ValueError("deltas must lie in (0, 1)")
    if eta <= 0 or g_min <= 0 or h <= 0 or n_samples < 1 or p < 1:
        raise ValueError("eta, g_min, h must be positive; n_samples, p at least 1")
    total = 0.0
    denom = n_samples * h**p * g_min
    for t in range(2, T + 1):
        term = 2.0 * float(lip[t - 2]) * eta
        s_t = float(sig[t - 2])
        if s_t > 0.0:
            log_arg = (t - 2) * math.log(n_samples) - math.log(float(del_[t - 2]))
            for s in range(1, t):
                log_arg += float(dim[s - 1]) * math.log(float(dia[s - 1]) / eta)
            inner = s_t * s_t * log_arg / denom
            if inner < 0:
                raise ValueError(
                    f"bound undefined at t={t}: negative value {inner:.3g} under the root"
                )
            term += math.sqrt(inner)
        total += term
    return total


# ---------------------------------------------------------------------------
# Radius cross-validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CrossValidationResult:
    best_c: float
    best_rho: float
    scores: tuple[tuple[float, float], ...]  # (coefficient, mean validation objective)


def _subset(traj: TrajectorySet, idx: np.ndarray) -> TrajectorySet:
    return TrajectorySet(
        horizon_T=traj.horizon_T,
        n_paths=len(idx),
        stage1=traj.stage1,
        data=[[stage[i] for i in idx] for stage in traj.data],
    )


def cross_validate_rho(
    traj: TrajectorySet,
    instance: InstanceTemplate,
    config: SolveConfig,
    c_grid=None,
    n_folds: int = 5,
) -> CrossValidationResult:
    """Pick the radius coefficient C of rho = C / sqrt(N h^p) by k-fold CV.

    Each candidate trains the robust solver on the out-of-fold paths and
    scores the mean realized objective on the held-out paths; the lowest
    mean across folds wins.  Ties go to the smaller coefficient.
    """
    if c_grid is None:
        c_grid = np.logspace(-3.0, 1.0, 10)
    n_folds = min(n_folds, traj.n_paths)
    if n_folds < 2:
        raise ValueError("need at least 2 folds")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(traj.n_paths)
    folds = np.array_split(perm, n_folds)
    scores = []
    for c in c_grid:
        fold_scores = []
        for f in range(n_folds):
            test_idx = folds[f]
            train_idx = np.concatenate([folds[g] for g in range(n_folds) if g != f])
            train = _subset(traj, train_idx)
            test = _subset(traj, test_idx)
            nominal_stub = ConditionalWeights.uniform(1)
            cfg = replace(
                config,
                algorithm=Algorithm.RDD,
                ambiguity=AmbiguityParams.rate_scaled(
                    float(c),
                    train.n_paths,
                    config.kernel.effective_h(train.n_paths, traj.feature_dim),
                    traj.feature_dim,
                    nominal_stub,
                ),
            )
            policy, _, _ = run(train, instance, cfg)
            report = evaluate_policy_out_of_sample(policy, test)
            fold_scores.append(report.mean if math.isfinite(report.mean) else math.inf)
        scores.append((float(c), float(np.mean(fold_scores))))
    best_c, _ = min(scores, key=lambda cv: (cv[1], cv[0]))
    h_full = config.kernel.effective_h(traj.n_paths, traj.feature_dim)
    return CrossValidationResult(
        best_c=best_c,
        best_rho=rate_scaled_rho(best_c, traj.n_paths, h_full, traj.feature_dim),
        scores=tuple(scores),
    )
