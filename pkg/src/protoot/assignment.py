"""Pseudo-labels, prototype updates and contrastive sets from transport plans.

Both the intra-domain and the cross-domain phase follow the same recipe:
similarity between a memory bank and a prototype set, a transport plan with
uniform row marginal and a chosen column marginal, and row argmaxes as hard
pseudo-labels.
"""

from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import DimMismatchError, KMismatchError, TooFewPointsError, ZeroRowError
from .ot import (
    MARGINAL_FLOOR,
    SolverConfig,
    floor_marginal,
    solve_entropic_ot,
    solve_partial_ot,
    solve_unbalanced_ot,
    uniform_marginal,
)
from .representation import MemoryBank
from .tensor import ZERO_NORM, cosine_similarity, l2_normalize_rows

SOLVERS = ("protoot", "sot", "uot", "pot")


@dataclass(frozen=True)
class PrototypeSet:
    vectors: np.ndarray
    source: str = "kmeans"  # or "soft_update"

    def __post_init__(self):
        if self.source not in ("kmeans", "soft_update"):
            raise ValueError(f"unknown prototype source {self.source!r}")

    def __len__(self):
        return len(self.vectors)


@dataclass(frozen=True)
class AssignmentState:
    plan: object
    pseudo_labels: np.ndarray
    prototypes: PrototypeSet
    beta: np.ndarray

    @property
    def k(self):
        return len(self.prototypes)


def _features(bank):
    return bank.features if isinstance(bank, MemoryBank) else np.asarray(bank, dtype=np.float64)


def transport(s, beta, cfg, solver="protoot", kl_strength=1.0, mass_fraction=0.9):
    """Plan for similarity ``s`` under one of the supported formulations.

    ``protoot`` uses ``beta`` as column marginal; ``sot``, ``uot`` and
    ``pot`` ignore it and use a uniform column marginal (the latter two
    relax it through a KL penalty or by dropping part of the mass).
    """
    n, k = s.shape
    rows = uniform_marginal(n)
    if solver == "protoot":
        return solve_entropic_ot(s, rows, beta, cfg)
    cols = uniform_marginal(k)
    if solver == "sot":
        return solve_entropic_ot(s, rows, cols, cfg)
    if solver == "uot":
        return solve_unbalanced_ot(s, rows, cols, cfg, kl_strength=kl_strength)
    if solver == "pot":
        return solve_partial_ot(s, rows, cols, cfg, mass_fraction=mass_fraction)
    raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVERS}")


def intra_assign(bank, prototypes, beta, cfg=None, solver="protoot", **solver_kw):
    """Transport a domain's bank onto its own prototypes and read off pseudo-labels."""
    cfg = cfg or SolverConfig()
    m = _features(bank)
    beta = np.asarray(beta, dtype=np.float64)
    if len(m) < len(prototypes):
        raise TooFewPointsError(f"{len(m)} bank rows for {len(prototypes)} prototypes")
    if len(beta) != len(prototypes):
        raise DimMismatchError(f"beta has {len(beta)} entries for {len(prototypes)} prototypes")
    s = cosine_similarity(m, prototypes.vectors)
    plan = transport(s, beta, cfg, solver, **solver_kw)
    return AssignmentState(plan=plan, pseudo_labels=plan.labels(), prototypes=prototypes,
                           beta=beta)


def update_prototypes(plan, bank):
    """Soft prototype update ``C = Q^T M`` followed by row normalization."""
    q = plan.q if hasattr(plan, "q") else np.asarray(plan)
    m = _features(bank)
    if q.shape[0] != m.shape[0]:
        raise DimMismatchError(f"plan has {q.shape[0]} rows, bank has {m.shape[0]}")
    c = q.T @ m
    norms = np.linalg.norm(c, axis=1)
    if np.any(norms < ZERO_NORM):
        raise ZeroRowError(f"prototype {int(np.argmin(norms))} received no mass")
    return PrototypeSet(c / norms[:, None], source="soft_update")


def match_clusters(own_centroids, other_prototypes):
    """Max-weight one-to-one matching; entry ``i`` is the prototype paired with cluster ``i``."""
    sim = cosine_similarity(own_centroids, other_prototypes)
    rows, cols = linear_sum_assignment(sim, maximize=True)
    perm = np.empty(len(rows), dtype=np.intp)
    perm[rows] = cols
    return perm


def brute_force_matching(own_centroids, other_prototypes):
    """Exhaustive counterpart of :func:`match_clusters` for small K."""
    sim = cosine_similarity(own_centroids, other_prototypes)
    k = len(sim)
    best = max(permutations(range(k)), key=lambda p: sum(sim[i, p[i]] for i in range(k)))
    return np.array(best, dtype=np.intp)


def cross_marginal_align(own_kmeans, other_prototypes, mode="matching", floor=MARGINAL_FLOOR):
    """Column marginal for cross-domain transport.

    The cluster-size distribution of the own bank is moved onto the other
    domain's prototype indices. With ``mode="matching"`` the permutation
    comes from a max-cosine assignment between own centroids and the other
    prototypes; ``mode="index"`` keeps the K-means order unchanged.
    """
    other = other_prototypes.vectors if isinstance(other_prototypes, PrototypeSet) \
        else np.asarray(other_prototypes)
    k = len(own_kmeans.centroids)
    if k != len(other):
        raise KMismatchError(f"own K-means has {k} clusters, other domain {len(other)} prototypes")
    sizes = np.bincount(own_kmeans.labels, minlength=k).astype(np.float64)
    if mode == "index":
        beta = sizes
    elif mode == "matching":
        perm = match_clusters(own_kmeans.centroids, other)
        beta = np.zeros(k)
        beta[perm] = sizes
    else:
        raise ValueError(f"unknown alignment mode {mode!r}")
    return floor_marginal(beta / beta.sum(), floor)


def cross_assign(bank, other_prototypes, beta_cr, cfg=None, solver="protoot", **solver_kw):
    """Same mechanics as :func:`intra_assign`, against the other domain's prototypes."""
    return intra_assign(bank, other_prototypes, beta_cr, cfg, solver, **solver_kw)


def build_negative_sets(state):
    k = state.k
    return [np.array([j for j in range(k) if j != y], dtype=np.intp)
            for y in state.pseudo_labels]


def gather_negatives(prototypes, labels):
    """All prototypes except each sample's own, stacked to shape ``(n, K - 1, d)``."""
    vecs = prototypes.vectors if isinstance(prototypes, PrototypeSet) else np.asarray(prototypes)
    k = len(vecs)
    labels = np.asarray(labels)
    others = np.array([[j for j in range(k) if j != y] for y in range(k)], dtype=np.intp)
    if k == 1:
        return np.zeros((len(labels), 0, vecs.shape[1]))
    return vecs[others[labels]]


def initial_prototypes(centroids):
    return PrototypeSet(l2_normalize_rows(centroids), source="kmeans")
