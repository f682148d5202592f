"""Entropic optimal transport in similarity (maximization) form.

All solvers work with a similarity matrix ``s`` and return the plan ``Q``
maximizing ``<Q, s> + eps * H(Q)`` under the relevant marginal constraints.
The Gibbs kernel is therefore ``exp(s / eps)`` rather than the cost-based
``exp(-C / eps)``.

Two stopping modes are supported:

* fixed iterations, e.g. three scaling rounds as used for training-time
  pseudo-labels;
* tolerance, which iterates until the column-marginal violation falls below
  ``tol`` (used wherever a certified plan is needed).

One scaling round updates the column potential first and the row potential
second, so row sums are exact after every round. A final explicit row
rescale is applied on top of that in the balanced solvers.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DimMismatchError,
    NoConvergenceError,
    NonFiniteKernelError,
    TooLargeError,
)
from .tensor import as_matrix

MARGINAL_FLOOR = 1e-6


# --------------------------------------------------------------------------
# Marginals
# --------------------------------------------------------------------------


def uniform_marginal(n):
    return np.full(n, 1.0 / n)


def floor_marginal(weights, floor=MARGINAL_FLOOR):
    """Raise entries below ``floor`` to ``floor`` and take the mass from the rest.

    Unlike a plain clip-and-renormalize, the surplus is removed only from
    entries above the floor, so the result never dips below ``floor``.
    """
    w = np.asarray(weights, dtype=np.float64).copy()
    if w.ndim != 1 or w.size == 0:
        raise ValueError("marginal must be a non-empty vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("marginal entries must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("marginal has zero total mass")
    if w.size * floor > 1.0:
        raise ValueError(f"floor {floor} infeasible for {w.size} entries")
    w /= total
    low = w < floor
    while True:
        w[low] = floor
        free = 1.0 - floor * low.sum()
        high = ~low
        w[high] *= free / w[high].sum()
        new_low = low | (w < floor)
        if new_low.sum() == low.sum():
            break
        low = new_low
    return w


def check_marginal(weights, n=None, name="marginal"):
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    if n is not None and w.size != n:
        raise DimMismatchError(f"{name} has length {w.size}, expected {n}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError(f"{name} must be finite and nonnegative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} sums to {w.sum():.12g}, expected 1")
    return w


# --------------------------------------------------------------------------
# Config and result types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    """Sinkhorn settings.

    Build with :meth:`fixed` or :meth:`tolerance` rather than directly.
    """

    epsilon: float = 0.05
    mode: str = "fixed"
    n_iter: int = 3
    tol: float = 1e-8
    max_iter: int = 10_000
    log_domain: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.mode not in ("fixed", "tolerance"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.n_iter < 1 or self.max_iter < 1:
            raise ValueError("iteration counts must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")

    @classmethod
    def fixed(cls, n_iter=3, epsilon=0.05, log_domain=True):
        return cls(epsilon=epsilon, mode="fixed", n_iter=n_iter, log_domain=log_domain)

    @classmethod
    def tolerance(cls, tol=1e-8, max_iter=10_000, epsilon=0.05, log_domain=True):
        return cls(epsilon=epsilon, mode="tolerance", tol=tol, max_iter=max_iter,
                   log_domain=log_domain)

    @classmethod
    def from_string(cls, text, epsilon=0.05):
        """Parse ``"fixed:N"`` or ``"tol:TOL[:MAX_ITER]"``."""
        parts = text.strip().split(":")
        if parts[0] == "fixed" and len(parts) == 2:
            return cls.fixed(int(parts[1]), epsilon)
        if parts[0] == "tol" and len(parts) in (2, 3):
            max_iter = int(parts[2]) if len(parts) == 3 else 10_000
            return cls.tolerance(float(parts[1]), max_iter, epsilon)
        raise ValueError(f"bad sinkhorn mode {text!r}; expected fixed:N or tol:TOL[:MAX_ITER]")

    def to_string(self):
        if self.mode == "fixed":
            return f"fixed:{self.n_iter}"
        return f"tol:{self.tol!r}:{self.max_iter}"


@dataclass
class TransportPlan:
    q: np.ndarray
    row_violation: float
    col_violation: float
    iterations: int
    converged: bool = True
    # column violation after every scaling round (tolerance mode only)
    violation_history: list = field(default_factory=list)

    @property
    def mass(self):
        return float(self.q.sum())

    def labels(self):
        """Row-wise argmax; ``np.argmax`` already breaks ties toward the smallest index."""
        return np.argmax(self.q, axis=1)


# --------------------------------------------------------------------------
# Sinkhorn core
# --------------------------------------------------------------------------


def _logsumexp(x, axis):
    m = x.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.log(np.exp(x - m).sum(axis=axis)) + np.squeeze(m, axis=axis)


def _log_plan_change(df, dg):
    """``max_ij |df_i + dg_j|``: the largest change of any log plan entry.

    Unlike the potential changes themselves, this ignores the drift of
    ``(f + c, g - c)``, which leaves the plan untouched but decays very
    slowly when the scaling exponent is close to 1.
    """
    return max(df.max() + dg.max(), -(df.min() + dg.min()))


def _violations(q, a, b):
    return (float(np.max(np.abs(q.sum(axis=1) - a))),
            float(np.max(np.abs(q.sum(axis=0) - b))))


def _sinkhorn(s, a, b, cfg, exponent=1.0, rescale_rows=True):
    """Shared scaling loop.

    ``exponent`` is 1 for balanced transport and ``rho / (rho + eps)`` for
    KL-relaxed marginals. ``s`` may contain ``-inf`` to forbid cells.
    """
    eps = cfg.epsilon
    log_k = s / eps
    tolerance_mode = cfg.mode == "tolerance"
    n_rounds = cfg.max_iter if tolerance_mode else cfg.n_iter
    history = []
    converged = not tolerance_mode
    balanced = exponent == 1.0

    if cfg.log_domain:
        log_a = np.log(a)
        log_b = np.log(b)
        f = np.zeros(len(a))
        g = np.zeros(len(b))

        def plan():
            return np.exp(log_k + f[:, None] + g[None, :])

        it = 0
        lse_col = _logsumexp(log_k, axis=0)
        while it < n_rounds:
            it += 1
            g_prev, f_prev = g, f
            g = exponent * (log_b - lse_col)
            f = exponent * (log_a - _logsumexp(log_k + g[None, :], axis=1))
            lse_col = _logsumexp(log_k + f[:, None], axis=0)
            if tolerance_mode:
                if balanced:
                    # column sums of the current plan, reusing the next round's reduction
                    err = np.max(np.abs(np.exp(g + lse_col) - b))
                else:
                    err = _log_plan_change(f - f_prev, g - g_prev)
                history.append(float(err))
                if err <= cfg.tol:
                    converged = True
                    break
        q = plan()
    else:
        with np.errstate(over="ignore"):
            kernel = np.exp(log_k)
        if not np.all(np.isfinite(kernel)):
            raise NonFiniteKernelError(
                "exp(s/eps) overflowed; enable log_domain for this similarity range")
        if np.any(kernel.sum(axis=1) == 0) or np.any(kernel.sum(axis=0) == 0):
            raise NonFiniteKernelError(
                "exp(s/eps) underflowed to an all-zero row or column; enable log_domain")
        u = np.ones(len(a))
        v = np.ones(len(b))
        it = 0
        with np.errstate(over="raise", divide="raise", invalid="raise"):
            try:
                for it in range(1, n_rounds + 1):
                    u_prev, v_prev = u, v
                    v = (b / (kernel.T @ u)) ** exponent
                    u = (a / (kernel @ v)) ** exponent
                    if tolerance_mode:
                        if balanced:
                            err = _violations(u[:, None] * kernel * v[None, :], a, b)[1]
                        else:
                            err = _log_plan_change(np.log(u / u_prev), np.log(v / v_prev))
                        history.append(float(err))
                        if err <= cfg.tol:
                            converged = True
                            break
            except FloatingPointError as exc:
                raise NonFiniteKernelError(
                    f"scaling vectors left the float range ({exc}); enable log_domain") from exc
        q = u[:, None] * kernel * v[None, :]

    if not np.all(np.isfinite(q)):
        raise NonFiniteKernelError("transport plan contains non-finite entries")
    if rescale_rows:
        sums = q.sum(axis=1)
        q = q * np.where(sums > 0, a / np.where(sums > 0, sums, 1.0), 0.0)[:, None]
    row_v, col_v = _violations(q, a, b)
    result = TransportPlan(q=q, row_violation=row_v, col_violation=col_v,
                           iterations=it, converged=converged,
                           violation_history=history)
    if not converged:
        raise NoConvergenceError(
            f"no convergence after {cfg.max_iter} rounds (violation {history[-1]:.3g} "
            f"> tol {cfg.tol:g})", plan=result)
    return result


def _check_problem(s, row, col):
    s = as_matrix(s, "s")
    r, c = s.shape
    return s, check_marginal(row, r, "row marginal"), check_marginal(col, c, "col marginal")


def solve_entropic_ot(s, row, col, cfg=None):
    """Balanced entropic OT between ``row`` and ``col`` marginals.

    Passing a uniform ``col`` gives the standard SwAV-style assignment;
    passing the K-means cluster-size distribution gives ProtoOT.

    Parameters
    ----------
    s : ndarray of shape (r, c)
        Similarities; larger means a more attractive pairing.
    row, col : ndarray
        Probability vectors of length r and c.
    cfg : SolverConfig, optional
        Defaults to ``SolverConfig.fixed(3)`` with ``eps = 0.05``.

    Returns
    -------
    TransportPlan
        Row sums equal ``row`` to rounding; column sums are exact only up
        to solver convergence.

    Raises
    ------
    NonFiniteKernelError
        Kernel overflow with ``log_domain=False``.
    NoConvergenceError
        Tolerance mode hit ``max_iter``; the plan is attached to the error.
    """
    cfg = cfg or SolverConfig()
    s, row, col = _check_problem(s, row, col)
    return _sinkhorn(s, row, col, cfg)


def solve_unbalanced_ot(s, row, col, cfg=None, kl_strength=1.0):
    """Entropic OT with both marginals relaxed by a KL penalty of weight ``kl_strength``.

    Each scaling update is raised to ``kl_strength / (kl_strength + eps)``.
    The returned plan is not rescaled and its mass is generally not 1.
    In tolerance mode the stopping test is on the largest change of any log plan entry.
    """
    if not kl_strength > 0:
        raise ValueError("kl_strength must be > 0")
    cfg = cfg or SolverConfig()
    s, row, col = _check_problem(s, row, col)
    exponent = kl_strength / (kl_strength + cfg.epsilon)
    return _sinkhorn(s, row, col, cfg, exponent=exponent, rescale_rows=False)


def solve_partial_ot(s, row, col, cfg=None, mass_fraction=1.0):
    """Entropic partial OT moving exactly ``mass_fraction`` of the mass.

    One slack row and one slack column with zero similarity absorb the
    untransported ``1 - mass_fraction``; the slack-to-slack cell is
    forbidden. The augmented balanced problem is solved and truncated.
    """
    if not 0 < mass_fraction <= 1:
        raise ValueError("mass_fraction must lie in (0, 1]")
    cfg = cfg or SolverConfig()
    s, row, col = _check_problem(s, row, col)
    if mass_fraction == 1.0:
        return _sinkhorn(s, row, col, cfg)
    r, c = s.shape
    slack = 1.0 - mass_fraction
    total = 1.0 + slack
    s_aug = np.zeros((r + 1, c + 1))
    s_aug[:r, :c] = s
    s_aug[r, c] = -np.inf
    a_aug = np.append(row, slack) / total
    b_aug = np.append(col, slack) / total
    try:
        aug = _sinkhorn(s_aug, a_aug, b_aug, cfg)
    except NoConvergenceError as exc:
        aug = exc.plan
        aug.converged = False
    q = aug.q[:r, :c] * total
    row_v = float(np.max(np.maximum(q.sum(axis=1) - row, 0.0)))
    col_v = float(np.max(np.maximum(q.sum(axis=0) - col, 0.0)))
    result = TransportPlan(q=q, row_violation=row_v, col_violation=col_v,
                           iterations=aug.iterations, converged=aug.converged,
                           violation_history=aug.violation_history)
    if not aug.converged:
        raise NoConvergenceError("partial OT did not converge", plan=result)
    return result


# --------------------------------------------------------------------------
# Exact oracle
# --------------------------------------------------------------------------


def _spanning_trees(r, c):
    """Yield every spanning tree of K_{r,c} as a tuple of (i, j) cells.

    Depth-first over cells in row-major order with a union-find acyclicity
    check. Rows are nodes ``0..r-1`` and columns ``r..r+c-1``.
    """
    cells = [(i, j) for i in range(r) for j in range(c)]
    need = r + c - 1

    def find(parent, x):
        while parent[x] != x:
            x = parent[x]
        return x

    def rec(start, chosen, parent, row_deg):
        if len(chosen) == need:
            yield tuple(chosen)
            return
        remaining = len(cells) - start
        if remaining < need - len(chosen):
            return
        for idx in range(start, len(cells)):
            i, j = cells[idx]
            # rows before i are finished; each must already touch the tree
            if i > 0 and any(row_deg[k] == 0 for k in range(i)):
                return
            ri, rj = find(parent, i), find(parent, r + j)
            if ri == rj:
                continue
            new_parent = list(parent)
            new_parent[ri] = rj
            row_deg[i] += 1
            chosen.append((i, j))
            yield from rec(idx + 1, chosen, new_parent, row_deg)
            chosen.pop()
            row_deg[i] -= 1

    yield from rec(0, [], list(range(r + c)), [0] * r)


def _tree_solution(tree, a, b):
    """Unique plan supported on a spanning tree, found by peeling leaves."""
    r, c = len(a), len(b)
    rem = np.concatenate([a, b]).astype(np.float64)
    adj = {n: set() for n in range(r + c)}
    for i, j in tree:
        adj[i].add(r + j)
        adj[r + j].add(i)
    q = np.zeros((r, c))
    leaves = [n for n in adj if len(adj[n]) == 1]
    while leaves:
        n = leaves.pop()
        if len(adj[n]) != 1:
            continue
        (m,) = adj[n]
        val = rem[n]
        i, j = (n, m - r) if n < r else (m, n - r)
        q[i, j] = val
        rem[m] -= val
        rem[n] = 0.0
        adj[n].clear()
        adj[m].discard(n)
        if len(adj[m]) == 1:
            leaves.append(m)
    return q


def exact_ot_oracle(s, row, col, max_dim=5):
    """Exact maximizer of ``<Q, s>`` over the transportation polytope.

    Enumerates every spanning-tree basic solution and keeps the feasible
    ones. Among optimal vertices the lexicographically smallest (row-major)
    plan is returned. Only meant as a test oracle for tiny problems.
    """
    s, row, col = _check_problem(s, row, col)
    r, c = s.shape
    if r > max_dim or c > max_dim:
        raise TooLargeError(f"oracle supports at most {max_dim}x{max_dim}, got {r}x{c}")
    best_obj = -np.inf
    best = []
    for tree in _spanning_trees(r, c):
        q = _tree_solution(tree, row, col)
        if q.min() < -1e-12:
            continue
        q = np.maximum(q, 0.0)
        obj = float(np.sum(q * s))
        if obj > best_obj + 1e-12:
            best_obj = obj
            best = [q]
        elif obj >= best_obj - 1e-12:
            best.append(q)
    q = min(best, key=lambda m: tuple(np.round(m.ravel(), 12)))
    row_v, col_v = _violations(q, row, col)
    return TransportPlan(q=q, row_violation=row_v, col_violation=col_v, iterations=0)


def transport_objective(plan, s):
    q = plan.q if isinstance(plan, TransportPlan) else plan
    return float(np.sum(q * s))


__all__ = [
    "MARGINAL_FLOOR",
    "SolverConfig",
    "TransportPlan",
    "check_marginal",
    "exact_ot_oracle",
    "floor_marginal",
    "solve_entropic_ot",
    "solve_partial_ot",
    "solve_unbalanced_ot",
    "transport_objective",
    "uniform_marginal",
]
