"""Multi-level cluster heads and the transport plans that tie them together.

Level 0 is the coarsest level. Level ``i`` has ``K_i`` centers and the plan
between levels ``i`` and ``i + 1`` is a ``K_i x K_{i+1}`` matrix whose rows
are coarse clusters and whose columns are finer clusters.

Features are stored one location per row (``P x D``), so an assignment matrix
``cosine_sim_plus(centers, features)`` comes out as ``K x P``.
"""

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InvalidConfig
from .linalg import (as_matrix, cosine_sim, cosine_sim_backward, cosine_sim_plus,
                     write_csv, write_pgm)
from .transport import SinkhornSettings, TransportPlan, cost_from_heads, sinkhorn


def expansion_schedule(K, rho, N):
    """Cluster counts per level: ``round_half_up(K * rho**i)`` for ``i < N``."""
    if K < 1 or N < 1:
        raise InvalidConfig(f"need K >= 1 and N >= 1, got K={K}, N={N}")
    if rho < 1:
        raise InvalidConfig(f"expansion factor must be >= 1, got {rho}")
    counts = [int(math.floor(K * rho ** i + 0.5)) for i in range(N)]
    if rho > 1:
        for i in range(N - 1):
            if counts[i] == counts[i + 1]:
                raise InvalidConfig(
                    f"levels {i} and {i + 1} both round to {counts[i]} clusters "
                    f"(K={K}, rho={rho})")
    return counts


@dataclass
class ClusterHead:
    level: int
    centers: np.ndarray

    def __post_init__(self):
        self.centers = as_matrix(self.centers, f"head {self.level}")
        norms = np.linalg.norm(self.centers, axis=1)
        if np.any(norms < 1e-12):
            raise InvalidConfig(f"head {self.level} has a zero-norm center")

    @property
    def n_clusters(self):
        return self.centers.shape[0]

    @property
    def dim(self):
        return self.centers.shape[1]


def random_head(level, n_clusters, dim, rng):
    """Unit-norm centers drawn from an isotropic Gaussian."""
    c = rng.standard_normal((n_clusters, dim))
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    return ClusterHead(level, c)


@dataclass
class HierarchyStack:
    heads: list
    plans: list = field(default_factory=list)
    base_clusters: int = 27
    expansion: float = 2.0
    temperature: float = 0.02

    def __post_init__(self):
        if not self.heads:
            raise InvalidConfig("a hierarchy needs at least one level")
        if self.expansion < 1:
            raise InvalidConfig("expansion factor must be >= 1")
        dims = {h.dim for h in self.heads}
        if len(dims) != 1:
            raise DimensionMismatch(f"heads disagree on center dimension: {sorted(dims)}")
        for i, p in enumerate(self.plans):
            want = (self.heads[i].n_clusters, self.heads[i + 1].n_clusters)
            if p.plan.shape != want:
                raise DimensionMismatch(f"plan {i} has shape {p.plan.shape}, expected {want}")

    @property
    def depth(self):
        return len(self.heads)

    @property
    def counts(self):
        return [h.n_clusters for h in self.heads]

    @classmethod
    def random(cls, base_clusters, expansion, depth, dim, rng, temperature=0.02):
        counts = expansion_schedule(base_clusters, expansion, depth)
        heads = [random_head(i, k, dim, rng) for i, k in enumerate(counts)]
        return cls(heads, [], base_clusters, expansion, temperature)


def _features(features):
    return as_matrix(getattr(features, "projected", features), "features")


def _centers(head):
    return head.centers if isinstance(head, ClusterHead) else as_matrix(head, "centers")


def _check_dims(centers, feats):
    if centers.shape[1] != feats.shape[1]:
        raise DimensionMismatch(
            f"head dimension {centers.shape[1]} != feature dimension {feats.shape[1]}")


def soft_assign(head, features):
    """Clipped cosine affinities ``K x P``; differentiable in centers and features."""
    c, f = _centers(head), _features(features)
    _check_dims(c, f)
    return cosine_sim_plus(c, f)


def soft_assign_backward(head, features, grad):
    """Return ``(dL/dcenters, dL/dfeatures)`` for ``grad = dL/dM``."""
    c, f = _centers(head), _features(features)
    return cosine_sim_backward(c, f, grad, clip=True)


def baseline_assign(head, features):
    """Signed cosine affinities with the features behind a stop-gradient."""
    c, f = _centers(head), _features(features)
    _check_dims(c, f)
    return cosine_sim(c, f)


def baseline_assign_backward(head, features, grad):
    c, f = _centers(head), _features(features)
    gc, _ = cosine_sim_backward(c, f, grad, clip=False)
    return gc, np.zeros_like(f)


def build_plans(stack, settings=None):
    """Solve the transport problem between every pair of adjacent levels.

    Plans are plain arrays: nothing downstream differentiates through them.
    Column potentials of the previous plans, when shapes agree, seed the
    solver.
    """
    s = settings or SinkhornSettings(temperature=stack.temperature)
    plans = []
    for i in range(stack.depth - 1):
        cost = cost_from_heads(stack.heads[i].centers, stack.heads[i + 1].centers)
        warm = stack.plans[i].log_v if i < len(stack.plans) else None
        plans.append(sinkhorn(cost, s, init_log_v=warm))
    return replace(stack, plans=plans, temperature=s.temperature)


def _plan_array(plan):
    return plan.plan if isinstance(plan, TransportPlan) else as_matrix(plan, "plan")


def _transport_max(plan, m_hi):
    a = _plan_array(plan)
    m_hi = as_matrix(m_hi, "m_hi")
    if a.shape[1] != m_hi.shape[0]:
        raise DimensionMismatch(
            f"plan has {a.shape[1]} columns but activations have {m_hi.shape[0]} rows")
    out = a[:, :1] * m_hi[None, 0, :]
    arg = np.zeros(out.shape, dtype=np.int64)
    for l in range(1, a.shape[1]):
        cand = a[:, l:l + 1] * m_hi[None, l, :]
        better = cand > out
        out = np.where(better, cand, out)
        arg[better] = l
    return out, arg


def transported_activation(plan, m_hi, debug=False):
    """``out[k, p] = max_l plan[k, l] * m_hi[l, p]``.

    With ``debug=True`` the full ``K_i x K_{i+1} x P`` joint activation tensor
    is built and reduced instead; both paths must agree.
    """
    if debug:
        a = _plan_array(plan)
        m_hi = as_matrix(m_hi, "m_hi")
        if a.shape[1] != m_hi.shape[0]:
            raise DimensionMismatch("plan columns must match activation rows")
        joint = a[:, :, None] * m_hi[None, :, :]
        return joint.max(axis=1)
    return _transport_max(plan, m_hi)[0]


def transported_activation_backward(plan, m_hi, grad):
    """``dL/dm_hi`` given ``grad = dL/dout``; only the winning ``l`` (lowest on ties) gets it."""
    a = _plan_array(plan)
    _, arg = _transport_max(a, m_hi)
    k_idx, p_idx = np.indices(arg.shape)
    g = np.zeros(np.shape(m_hi))
    np.add.at(g, (arg, p_idx), a[k_idx, arg] * grad)
    return g


def _greedy_chain(vectors):
    n = vectors.shape[0]
    if n <= 2:
        return list(range(n))
    norms = np.linalg.norm(vectors, axis=1)
    unit = vectors / np.where(norms > 0, norms, 1.0)[:, None]
    sim = unit @ unit.T
    np.fill_diagonal(sim, -np.inf)
    i, j = np.unravel_index(int(np.argmax(sim)), sim.shape)
    chain = [int(min(i, j)), int(max(i, j))]
    left = set(range(n)) - set(chain)
    while left:
        cand = sorted(left)
        head_best = max(cand, key=lambda c: (sim[chain[0], c], -c))
        tail_best = max(cand, key=lambda c: (sim[chain[-1], c], -c))
        if sim[chain[-1], tail_best] >= sim[chain[0], head_best]:
            chain.append(tail_best)
            left.discard(tail_best)
        else:
            chain.insert(0, head_best)
            left.discard(head_best)
    if chain[0] > chain[-1]:
        chain.reverse()
    return chain


def reorder_hierarchy(plan):
    """Row and column permutations that place similar rows/columns next to each other.

    Each permutation is a greedy nearest-neighbour chain under cosine
    similarity, seeded with the most similar pair and grown at whichever end
    has the closer unvisited neighbour. Rows are oriented to start at the
    lower index; columns are oriented so the block structure runs from the
    top-left toward the bottom-right.
    """
    a = _plan_array(plan)
    rows = _greedy_chain(a)
    cols = _greedy_chain(a.T)
    if len(cols) > 1:
        pos = {r: k for k, r in enumerate(rows)}
        first = pos[int(np.argmax(a[:, cols[0]]))]
        last = pos[int(np.argmax(a[:, cols[-1]]))]
        if first > last:
            cols.reverse()
    return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64)


def export_heatmaps(stack, out_dir):
    """Write affinity, plan and reordered plan for every adjacent pair as PGM + CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, plan in enumerate(stack.plans):
        z = cosine_sim_plus(stack.heads[i].centers, stack.heads[i + 1].centers)
        a = _plan_array(plan)
        rows, cols = reorder_hierarchy(a)
        for name, mat in (("Z", z), ("A", a), ("A_reordered", a[np.ix_(rows, cols)])):
            stem = out_dir / f"{name}_{i}_{i + 1}"
            write_pgm(stem.with_suffix(".pgm"), mat)
            write_csv(stem.with_suffix(".csv"), mat)
            written += [stem.with_suffix(".pgm"), stem.with_suffix(".csv")]
    return written


def row_support(plan, threshold=None):
    """Number of entries above ``threshold`` (default ``0.01 / K_i``) in each row."""
    a = _plan_array(plan)
    if threshold is None:
        threshold = 0.01 / a.shape[0]
    return (a > threshold).sum(axis=1)
