"""Outer (cut) and inner (convex-envelope) cost-to-go approximations.

For every stage t and conditioning node j (a stage-(t-1) historical
realization, or the deterministic root) the toolkit maintains

* a growing pool of affine cuts whose pointwise maximum under-estimates
  the cost-to-go, and
* a growing set of (anchor, value) points whose lower convex envelope,
  softened by an L1 penalty M per unit of distance from the anchors' hull,
  over-estimates it.

Both are spliced into stage LPs through the :class:`~sddpkit.stages.ExtraTerms`
protocol.  The infinite initializations of the textbook recursion are
realized by large sentinel boxes (``lower_box``/``upper_box``); they stop
binding as soon as a first cut or point arrives.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .kernel import ConditionalWeights
from .lp import LinearProgram, LpStatus, solve
from .scenarios import DimensionMismatchError
from .stages import StageLpBuilder

__all__ = [
    "Cut",
    "CutPool",
    "EnvelopeStore",
    "NodeKey",
    "add_cut",
    "aggregate_backward",
    "envelope_update",
    "lower_value",
    "envelope_value",
    "CutLowerTerms",
    "WeightedLowerTerms",
    "EnvelopeUpperTerms",
    "LOWER_BOX_DEFAULT",
    "UPPER_BOX_DEFAULT",
]

LOWER_BOX_DEFAULT = -1e9
UPPER_BOX_DEFAULT = 1e9

# A conditioning node: stage index plus historical path index, None at the root.
NodeKey = tuple[int, int | None]


@dataclass(frozen=True)
class Cut:
    """One affine minorant: x -> intercept + gradient . (x - anchor)."""

    gradient: np.ndarray
    intercept: float
    anchor: np.ndarray
    iteration_k: int = 0

    def __post_init__(self) -> None:
        g = np.asarray(self.gradient, dtype=float).reshape(-1)
        a = np.asarray(self.anchor, dtype=float).reshape(-1)
        object.__setattr__(self, "gradient", g)
        object.__setattr__(self, "anchor", a)
        object.__setattr__(self, "intercept", float(self.intercept))
        if g.shape != a.shape:
            raise DimensionMismatchError(
                f"cut gradient has dimension {g.shape[0]}, anchor {a.shape[0]}"
            )

    def value_at(self, x: np.ndarray) -> float:
        return self.intercept + float(self.gradient @ (np.asarray(x, float) - self.anchor))


class CutPool:
    """Cuts per (stage, node); pools only grow, so the outer bound only tightens."""

    def __init__(self, lower_box: float = LOWER_BOX_DEFAULT):
        self.lower_box = float(lower_box)
        self._cuts: dict[NodeKey, list[Cut]] = {}

    def cuts(self, t: int, node_j: int | None) -> tuple[Cut, ...]:
        return tuple(self._cuts.get((t, node_j), ()))

    def n_cuts(self) -> int:
        return sum(len(v) for v in self._cuts.values())

    def add(self, t: int, node_j: int | None, cut: Cut) -> None:
        bucket = self._cuts.setdefault((t, node_j), [])
        if bucket and bucket[0].gradient.shape != cut.gradient.shape:
            raise DimensionMismatchError(
                f"cut dimension {cut.gradient.shape[0]} does not match pool "
                f"({bucket[0].gradient.shape[0]}) at (t={t}, j={node_j})"
            )
        bucket.append(cut)

    def value(self, t: int, node_j: int | None, x: np.ndarray) -> float:
        return lower_value(self.cuts(t, node_j), x, self.lower_box)

    def dump(self, stream: io.TextIOBase) -> None:
        """One cut per line: t, j, k, intercept, gradient components."""
        for (t, j), cuts in sorted(
            self._cuts.items(), key=lambda kv: (kv[0][0], -1 if kv[0][1] is None else kv[0][1])
        ):
            for c in cuts:
                grad = ",".join(repr(float(g)) for g in c.gradient)
                label = "root" if j is None else str(j)
                stream.write(f"{t},{label},{c.iteration_k},{c.intercept!r},{grad}\n")


def add_cut(pool: CutPool, t: int, node_j: int | None, cut: Cut) -> CutPool:
    """Append a cut to the pool's (t, node) bucket; returns the pool."""
    pool.add(t, node_j, cut)
    return pool


def lower_value(cuts: tuple[Cut, ...] | list[Cut], x: np.ndarray, lower_box: float) -> float:
    """Pointwise maximum of the cuts at x (the sentinel box when empty)."""
    if not cuts:
        return float(lower_box)
    xv = np.asarray(x, dtype=float).reshape(-1)
    return max(c.value_at(xv) for c in cuts)


def aggregate_backward(
    values: np.ndarray,
    duals: list[np.ndarray] | np.ndarray,
    weights: ConditionalWeights,
    anchor: np.ndarray,
    iteration_k: int = 0,
) -> Cut:
    """Weight the N node solves into one cut anchored at the visited state.

    gradient = sum_i w_i pi_i and intercept = sum_i w_i V_i, so the cut is
    the conditional expectation of the per-realization affine minorants.
    """
    v = np.asarray(values, dtype=float).reshape(-1)
    pi = np.atleast_2d(np.asarray(duals, dtype=float))
    w = weights.weights
    if v.shape[0] != w.shape[0] or pi.shape[0] != w.shape[0]:
        raise DimensionMismatchError(
            f"got {v.shape[0]} values and {pi.shape[0]} duals for {w.shape[0]} weights"
        )
    return Cut(
        gradient=pi.T @ w,
        intercept=float(v @ w),
        anchor=anchor,
        iteration_k=iteration_k,
    )


# ---------------------------------------------------------------------------
# Inner approximation
# ---------------------------------------------------------------------------


@dataclass
class _EnvelopeBucket:
    anchors: list[np.ndarray] = field(default_factory=list)
    values: list[float] = field(default_factory=list)


class EnvelopeStore:
    """Anchor/value points per (stage, node) plus per-stage penalty scales.

    The penalty M_t must dominate the stage value's Lipschitz constant for
    the envelope to stay an upper bound; by default it is ``safety`` times
    the largest cut-gradient infinity norm observed at the same stage
    (cuts are subgradients, so their norms estimate that constant), with
    an optional per-call override.
    """

    def __init__(
        self,
        safety: float = 10.0,
        penalty_override: float | None = None,
        upper_box: float = UPPER_BOX_DEFAULT,
    ):
        self.safety = float(safety)
        self.penalty_override = penalty_override
        self.upper_box = float(upper_box)
        self._points: dict[NodeKey, _EnvelopeBucket] = {}
        self._grad_max: dict[int, float] = {}

    def points(self, t: int, node_j: int | None) -> tuple[np.ndarray, np.ndarray]:
        bucket = self._points.get((t, node_j))
        if bucket is None:
            return np.zeros((0, 0)), np.zeros(0)
        return np.array(bucket.anchors), np.array(bucket.values)

    def n_points(self) -> int:
        return sum(len(b.values) for b in self._points.values())

    def add(self, t: int, node_j: int | None, anchor: np.ndarray, value: float) -> None:
        if not math.isfinite(value):
            raise ValueError(f"envelope value at (t={t}, j={node_j}) must be finite")
        a = np.asarray(anchor, dtype=float).reshape(-1)
        bucket = self._points.setdefault((t, node_j), _EnvelopeBucket())
        if bucket.anchors and bucket.anchors[0].shape != a.shape:
            raise DimensionMismatchError(
                f"anchor dimension {a.shape[0]} does not match store "
                f"({bucket.anchors[0].shape[0]}) at (t={t}, j={node_j})"
            )
        bucket.anchors.append(a)
        bucket.values.append(float(value))

    def note_gradient(self, t: int, gradient: np.ndarray) -> None:
        """Record a stage-t cut gradient so penalty(t) tracks the Lipschitz scale."""
        norm = float(np.max(np.abs(np.asarray(gradient, dtype=float))))
        self._grad_max[t] = max(self._grad_max.get(t, 0.0), norm)

    def penalty(self, t: int) -> float:
        if self.penalty_override is not None:
            return float(self.penalty_override)
        return self.safety * self._grad_max.get(t, 0.0)

    def value(self, t: int, node_j: int | None, x: np.ndarray) -> float:
        anchors, values = self.points(t, node_j)
        if values.size == 0:
            return math.inf
        return envelope_value(anchors, values, self.penalty(t), x)


def envelope_update(
    store: EnvelopeStore, t: int, node_j: int | None, anchor: np.ndarray, value: float
) -> EnvelopeStore:
    """Extend the (t, node) point set; the induced envelope never increases."""
    store.add(t, node_j, anchor, value)
    return store


def envelope_value(
    anchors: np.ndarray, values: np.ndarray, penalty_m: float, x: np.ndarray
) -> float:
    """Lower convex envelope of the stored points with L1 slack, evaluated at x.

    Solves  min sum_k theta_k V_k + M ||y||_1
            s.t. sum_k theta_k anchor_k + y = x, sum_k theta_k = 1, theta >= 0.
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    values = np.asarray(values, dtype=float).reshape(-1)
    xv = np.asarray(x, dtype=float).reshape(-1)
    k, d = anchors.shape
    if k == 0:
        return math.inf
    if xv.shape[0] != d:
        raise DimensionMismatchError(
            f"query dimension {xv.shape[0]} does not match anchors ({d})"
        )
    # columns: theta (k), y+ (d), y- (d)
    n = k + 2 * d
    A = np.zeros((d + 1, n))
    A[:d, :k] = anchors.T
    A[:d, k : k + d] = np.eye(d)
    A[:d, k + d :] = -np.eye(d)
    A[d, :k] = 1.0
    b = np.concatenate([xv, [1.0]])
    c = np.concatenate([values, np.full(2 * d, float(penalty_m))])
    sol = solve(LinearProgram(objective=c, eq_matrix=A, eq_rhs=b))
    if sol.status is not LpStatus.OPTIMAL:
        raise RuntimeError(f"envelope LP came back {sol.status.value}")
    return float(sol.objective_value)


# ---------------------------------------------------------------------------
# Splicing into stage LPs
# ---------------------------------------------------------------------------


@dataclass
class WeightedLowerTerms:
    """Epigraph variables for several conditioning nodes at once.

    Adds one variable ell_i with objective weight w_i per node and one row
    per cut; with no cuts for a node its ell sits on the sentinel box.
    Policy evaluation uses this with the conditional weights; the ordinary
    single-node splice is the weight-1 special case.
    """

    node_cuts: list[tuple[float, tuple[Cut, ...]]]
    lower_box: float = LOWER_BOX_DEFAULT
    ell_cols: list[int] = field(default_factory=list, init=False)

    def attach(self, builder: StageLpBuilder) -> None:
        self.ell_cols = []
        for weight, cuts in self.node_cuts:
            # A free epigraph variable avoids mixing the huge sentinel into
            # every basic solution; the box enters as a row only while no
            # cut bounds ell from below.
            ell = builder.add_var(cost=float(weight), free=True)
            self.ell_cols.append(ell)
            if not cuts:
                surplus = builder.add_var()
                builder.add_row({ell: 1.0, surplus: -1.0}, self.lower_box)
            for cut in cuts:
                offset = cut.intercept - float(cut.gradient @ cut.anchor)
                coeffs = {ell: 1.0}
                for j, g in zip(builder.x_cols, cut.gradient):
                    if g != 0.0:
                        coeffs[j] = -float(g)
                surplus = builder.add_var()
                coeffs[surplus] = -1.0
                builder.add_row(coeffs, offset)


def CutLowerTerms(
    cuts: tuple[Cut, ...] | list[Cut], lower_box: float = LOWER_BOX_DEFAULT
) -> WeightedLowerTerms:
    """Single epigraph variable bounded below by every cut in the node's pool."""
    return WeightedLowerTerms(node_cuts=[(1.0, tuple(cuts))], lower_box=lower_box)


@dataclass
class EnvelopeUpperTerms:
    """Inner-approximation block: convex weights over stored anchors plus
    penalized L1 deviation, coupled to the stage decision columns."""

    anchors: np.ndarray
    values: np.ndarray
    penalty_m: float
    upper_box: float = UPPER_BOX_DEFAULT

    def attach(self, builder: StageLpBuilder) -> None:
        anchors = np.atleast_2d(np.asarray(self.anchors, dtype=float))
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size == 0:
            builder.add_var(cost=1.0, lower=self.upper_box)
            return
        k, d = anchors.shape
        if d != len(builder.x_cols):
            raise DimensionMismatchError(
                f"envelope anchors have dimension {d}, stage decision has "
                f"{len(builder.x_cols)}"
            )
        theta = [builder.add_var(cost=float(v)) for v in values]
        y_pos = [builder.add_var(cost=float(self.penalty_m)) for _ in range(d)]
        y_neg = [builder.add_var(cost=float(self.penalty_m)) for _ in range(d)]
        for i in range(d):
            coeffs = {theta[j]: float(anchors[j, i]) for j in range(k)}
            coeffs[y_pos[i]] = 1.0
            coeffs[y_neg[i]] = -1.0
            coeffs[builder.x_cols[i]] = coeffs.get(builder.x_cols[i], 0.0) - 1.0
            builder.add_row(coeffs, 0.0)
        builder.add_row({t: 1.0 for t in theta}, 1.0)
