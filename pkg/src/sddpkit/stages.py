"""Stage subproblem assembly and the portfolio instance builder.

A stage subproblem is

    min  c_t^T x_t + (appended approximation terms)
    s.t. A_t x_t + B_t z = b_t
         z = incoming_state        (copy rows)
         x_t >= 0,  z free,

where the copy rows pin the previous decision through auxiliary
variables so their duals are exactly the subgradient of the stage value
with respect to the incoming state.  Cut pools, envelope blocks, and
ambiguity blocks are appended through the :class:`ExtraTerms` protocol:
``assemble_stage_lp`` builds the base blocks, hands the builder to the
extra terms, and returns the finished :class:`~sddpkit.lp.LinearProgram`.

Column and row layout is fixed: decision columns first (0..d_t-1), copy
variables next, extras after; structural rows first, copy rows next,
extras after.  Downstream code relies on this ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .lp import LinearProgram
from .scenarios import DimensionMismatchError, StageDatum

__all__ = [
    "StageProblem",
    "ExtraTerms",
    "StageLpBuilder",
    "InstanceTemplate",
    "InvalidUtilityError",
    "StageInfeasibleError",
    "assemble_stage_lp",
    "exponential_utility_segments",
    "build_portfolio_instance",
]


class InvalidUtilityError(ValueError):
    """Raised when piecewise-linear utility slopes are not concave nondecreasing."""


class StageInfeasibleError(RuntimeError):
    """An in-sample stage subproblem came back infeasible.

    The model promises relatively complete recourse on observed data, so
    this is a modeling error, not a recoverable condition.
    """


@dataclass
class StageProblem:
    """A stage's data plus the fixed layout of its copy-constraint block."""

    stage_t: int
    datum: StageDatum
    state_dim_in: int = field(init=False)
    state_dim_out: int = field(init=False)
    copy_rows: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        self.state_dim_in = self.datum.dim_in
        self.state_dim_out = self.datum.dim_out
        m = self.datum.n_rows
        self.copy_rows = tuple(range(m, m + self.state_dim_in))


class StageLpBuilder:
    """Incrementally grown LP: base stage blocks plus spliced extras."""

    def __init__(self, x_dim: int):
        self.costs: list[float] = []
        self.lowers: list[float] = []
        self.uppers: list[float] = []
        self.frees: list[bool] = []
        self.rows: list[tuple[dict[int, float], float]] = []
        self.x_cols = range(x_dim)

    @property
    def n_vars(self) -> int:
        return len(self.costs)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def add_var(
        self,
        cost: float = 0.0,
        lower: float = 0.0,
        upper: float = math.inf,
        free: bool = False,
    ) -> int:
        self.costs.append(float(cost))
        self.lowers.append(float(lower))
        self.uppers.append(float(upper))
        self.frees.append(bool(free))
        return len(self.costs) - 1

    def add_row(self, coeffs: dict[int, float], rhs: float) -> int:
        self.rows.append((dict(coeffs), float(rhs)))
        return len(self.rows) - 1

    def build(self) -> LinearProgram:
        n = self.n_vars
        A = np.zeros((len(self.rows), n))
        b = np.zeros(len(self.rows))
        for r, (coeffs, rhs) in enumerate(self.rows):
            b[r] = rhs
            for j, v in coeffs.items():
                A[r, j] = v
        return LinearProgram(
            objective=np.array(self.costs),
            eq_matrix=A,
            eq_rhs=b,
            var_lower=np.array(self.lowers),
            var_upper=np.array(self.uppers),
            free_mask=np.array(self.frees, dtype=bool),
        )


class ExtraTerms(Protocol):
    """Anything spliceable into a stage LP (cuts, envelopes, ambiguity blocks)."""

    def attach(self, builder: StageLpBuilder) -> None: ...


def assemble_stage_lp(
    problem: StageProblem,
    incoming_state: np.ndarray,
    extra_terms: ExtraTerms | None = None,
    include_copy: bool = True,
) -> LinearProgram:
    """Build the stage LP for a given incoming state.

    With ``include_copy`` (the default) the incoming state enters through
    copy rows ``z = incoming_state`` whose duals are the stage value's
    subgradient.  With ``include_copy=False`` the state is substituted
    into the right-hand side instead (cheaper; no state duals available),
    and ``problem.copy_rows`` does not apply to the result.
    """
    d = problem.datum
    xbar = np.asarray(incoming_state, dtype=float).reshape(-1)
    if xbar.shape[0] != problem.state_dim_in:
        raise DimensionMismatchError(
            f"stage t={problem.stage_t}: incoming state has {xbar.shape[0]} "
            f"entries, expected {problem.state_dim_in}"
        )
    builder = StageLpBuilder(x_dim=d.dim_out)
    for j in range(d.dim_out):
        builder.add_var(cost=float(d.c[j]))
    if include_copy:
        z_cols = [builder.add_var(free=True) for _ in range(problem.state_dim_in)]
        for r in range(d.n_rows):
            coeffs = {j: float(d.A[r, j]) for j in range(d.dim_out)}
            for k, col in enumerate(z_cols):
                coeffs[col] = coeffs.get(col, 0.0) + float(d.B[r, k])
            builder.add_row(coeffs, float(d.b[r]))
        for k, col in enumerate(z_cols):
            builder.add_row({col: 1.0}, float(xbar[k]))
    else:
        rhs = d.b - d.B @ xbar
        for r in range(d.n_rows):
            coeffs = {j: float(d.A[r, j]) for j in range(d.dim_out)}
            builder.add_row(coeffs, float(rhs[r]))
    if extra_terms is not None:
        extra_terms.attach(builder)
    return builder.build()


# ---------------------------------------------------------------------------
# Portfolio instance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InstanceTemplate:
    """Everything needed to instantiate stage problems from covariates.

    ``datum_builder(t, feature)`` produces the stage-t data; t=1 is the
    deterministic first stage.  ``initial_state`` is the pre-horizon
    decision the first stage's B matrix multiplies.  A template backed
    entirely by recorded trajectory data (the solver never synthesizes
    stage data itself) may leave the builder as None.
    """

    horizon_T: int
    initial_state: np.ndarray
    feature_dim: int
    datum_builder: Callable[[int, np.ndarray], StageDatum] | None = None

    def stage_problem(self, t: int, datum: StageDatum) -> StageProblem:
        return StageProblem(stage_t=t, datum=datum)


def exponential_utility_segments(
    n_segments: int = 5, w_max: float = 3.0
) -> tuple[tuple[float, float], ...]:
    """Chord segments (slope, intercept) of u(w) = 1 - exp(-w) on [0, w_max].

    The pointwise minimum of the returned affine pieces interpolates the
    utility at the n_segments + 1 equispaced breakpoints.
    """
    if n_segments < 1:
        raise InvalidUtilityError("need at least one utility segment")
    w = np.linspace(0.0, w_max, n_segments + 1)
    u = 1.0 - np.exp(-w)
    slopes = np.diff(u) / np.diff(w)
    intercepts = u[:-1] - slopes * w[:-1]
    return tuple((float(a), float(d)) for a, d in zip(slopes, intercepts))


def _validate_utility(
    utility_slopes: Sequence[tuple[float, float]],
) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(utility_slopes, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
        raise InvalidUtilityError("utility_slopes must be a list of (slope, intercept)")
    slopes, intercepts = arr[:, 0], arr[:, 1]
    if np.any(slopes < 0):
        raise InvalidUtilityError("utility slopes must be nonnegative (nondecreasing u)")
    if np.any(np.diff(slopes) > 1e-12):
        raise InvalidUtilityError("utility slopes must be nonincreasing (concave u)")
    return slopes, intercepts


def build_portfolio_instance(
    K: int,
    T: int,
    fees: tuple[float, float] = (0.0, 0.0),
    r_f: float = 1.0,
    utility_slopes: Sequence[tuple[float, float]] | None = None,
) -> InstanceTemplate:
    """Portfolio rebalancing over K assets plus cash, terminal utility objective.

    Decision vector per trading stage: positions x in R_+^{K+1} (assets
    then cash), buys and sells in R_+^K.  Asset balance rows are
    x_i - buy_i + sell_i = xi_i * prev_i; the cash row charges
    (1 + f_b) per unit bought and credits (1 - f_s) per unit sold, with
    cash compounding at the constant r_f.  The terminal stage converts
    positions one last time and maximizes a concave piecewise-linear
    utility of total wealth via epigraph rows.

    The covariate is the K-vector of gross asset returns; r_f is a
    template constant, not part of the covariate.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if T < 2:
        raise ValueError("T must be at least 2")
    f_b, f_s = float(fees[0]), float(fees[1])
    if f_b < 0 or f_s < 0:
        raise ValueError("fees must be nonnegative")
    if utility_slopes is None:
        utility_slopes = exponential_utility_segments()
    slopes, intercepts = _validate_utility(utility_slopes)
    S = slopes.shape[0]
    n_state = K + 1
    d_trade = n_state + 2 * K

    def trading_datum(t: int, returns: np.ndarray, d_prev: int) -> StageDatum:
        A = np.zeros((n_state, d_trade))
        B = np.zeros((n_state, d_prev))
        for i in range(K):
            A[i, i] = 1.0
            A[i, n_state + i] = -1.0  # buy
            A[i, n_state + K + i] = 1.0  # sell
        A[K, K] = 1.0
        A[K, n_state : n_state + K] = 1.0 + f_b
        A[K, n_state + K :] = -(1.0 - f_s)
        if t == 1:
            B[K, 0] = -1.0  # initial wealth arrives as cash
        else:
            for i in range(K):
                B[i, i] = -float(returns[i])
            B[K, K] = -r_f
        return StageDatum(
            c=np.zeros(d_trade),
            A=A,
            B=B,
            b=np.zeros(n_state),
            feature=np.asarray(returns, dtype=float).copy(),
        )

    def terminal_datum(returns: np.ndarray, d_prev: int) -> StageDatum:
        # Positions, then the epigraph value split as v_pos - v_neg (utility
        # values are nonnegative so the epigraph variable itself is not),
        # then one surplus column per utility segment.
        d_T = n_state + 2 + S
        m_T = n_state + S
        A = np.zeros((m_T, d_T))
        B = np.zeros((m_T, d_prev))
        b = np.zeros(m_T)
        c = np.zeros(d_T)
        v_pos, v_neg = n_state, n_state + 1
        c[v_pos], c[v_neg] = 1.0, -1.0
        for i in range(K):
            A[i, i] = 1.0
            B[i, i] = -float(returns[i])
        A[K, K] = 1.0
        B[K, K] = -r_f
        for s in range(S):
            r = n_state + s
            A[r, v_pos] = 1.0
            A[r, v_neg] = -1.0
            A[r, :n_state] = slopes[s]
            A[r, n_state + 2 + s] = -1.0
            b[r] = -intercepts[s]
        return StageDatum(
            c=c, A=A, B=B, b=b, feature=np.asarray(returns, dtype=float).copy()
        )

    def datum_builder(t: int, feature: np.ndarray) -> StageDatum:
        returns = np.asarray(feature, dtype=float).reshape(-1)
        if returns.shape[0] != K:
            raise DimensionMismatchError(
                f"stage t={t}: covariate has {returns.shape[0]} entries, expected K={K}"
            )
        if t == 1:
            return trading_datum(1, np.ones(K), 1)
        if t < T:
            return trading_datum(t, returns, d_trade)
        return terminal_datum(returns, d_trade)

    return InstanceTemplate(
        horizon_T=T,
        initial_state=np.array([1.0]),
        feature_dim=K,
        datum_builder=datum_builder,
    )
