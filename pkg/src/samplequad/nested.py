"""Nested rule extension: larger basis and/or more samples, same nodes.

An existing rule's nodes are carried into the extended rule as fixed
nodes.  The per-sample iteration then runs as usual except that fixed
nodes are never physically deleted: when a removal selects one, its
weight is set to zero and it stays, available to regain weight later.
While zero-weight fixed nodes are present, the extended Vandermonde has
a null space of dimension above one, and the iteration enumerates all
multi-node removals of that size, choosing one that deletes as many
non-fixed nodes as possible (ties broken by a seeded draw).

The null space needed each iteration is assembled from solves against
the square Vandermonde of the positively weighted nodes, one per
zero-weight node plus one for the incoming sample, so the common case
costs a few back-substitutions rather than a fresh decomposition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .basis import BasisSpec, basis_matrix, domain_from_samples
from .errors import (
    CapExceeded,
    DegenerateNullVector,
    DimensionMismatch,
    InsufficientSamples,
    MissingEvaluation,
    ModeMismatch,
    NullSpaceFailure,
)
from .linalg import ExtensionFactorization, null_space, null_vector
from .removal import RemovalProblem
from .rule import (
    QuadratureRule,
    SampleSet,
    TOL_ZERO_FACTOR,
    apply_removal,
    removal_interval,
    sample_moments,
)

log = logging.getLogger(__name__)

CONTINUE_SAMPLES = "continue_samples"
INCREASE_DEGREE = "increase_degree"
RESAMPLED = "resampled"
MODES = (CONTINUE_SAMPLES, INCREASE_DEGREE, RESAMPLED)


@dataclass
class ExtensionRequest:
    """What to extend, toward which basis size, and from which samples."""

    base: QuadratureRule | None
    target_basis_size: int
    sample_source: SampleSet
    mode: str
    removal_cap: int = 10**6
    fallback_on_cap: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ModeMismatch(f"unknown extension mode {self.mode!r}")
        if self.base is not None and self.base.n_nodes > 0:
            if self.target_basis_size < self.base.spec.size:
                raise ModeMismatch("target basis must be at least as large as the base")
            if self.sample_source.d != self.base.spec.d:
                raise DimensionMismatch("sample dimension does not match base rule")


def _extended_spec(req: ExtensionRequest) -> BasisSpec:
    if req.base is not None and req.base.n_nodes > 0:
        old = req.base.spec
        if old.size == req.target_basis_size:
            return old
        return BasisSpec(
            d=old.d, size=req.target_basis_size, family=old.family, domain=old.domain
        )
    return BasisSpec(
        d=req.sample_source.d,
        size=req.target_basis_size,
        domain=domain_from_samples(req.sample_source.points),
    )


def _check_nodes_in_stream(base: QuadratureRule, source: SampleSet, what: str):
    pts = source.points
    for node, idx in zip(base.nodes, base.source_indices):
        if idx < 0 or idx >= pts.shape[0] or not np.array_equal(pts[idx], node):
            raise ModeMismatch(
                f"{what} requires the original sample stream; node with source "
                f"index {idx} does not match"
            )


def initialize_extension(req: ExtensionRequest):
    """Working rule plus the remaining sample stream for the request.

    Returns (rule, stream, stream_indices): `stream_indices[i]` is the
    position of stream point i inside the request's sample source, used
    to tag node provenance.
    """
    source = req.sample_source
    spec = _extended_spec(req)
    base = req.base
    if base is None or base.n_nodes == 0:
        work = QuadratureRule(
            nodes=source.points[:1].copy(),
            weights=np.array([1.0]),
            spec=spec,
            K=0,
            source_indices=np.array([0], dtype=np.intp),
            fixed_mask=np.array([False]),
        )
        return work, source.points[1:], np.arange(1, source.count)

    if req.mode == CONTINUE_SAMPLES:
        if req.target_basis_size != base.spec.size:
            raise ModeMismatch("continue_samples cannot change the basis size")
        _check_nodes_in_stream(base, source, CONTINUE_SAMPLES)
        if source.count <= base.K:
            raise ModeMismatch("sample source is shorter than the consumed prefix")
        work = QuadratureRule(
            nodes=base.nodes.copy(),
            weights=base.weights.copy(),
            spec=spec,
            K=base.K,
            source_indices=base.source_indices.copy(),
            fixed_mask=base.fixed_mask.copy(),
        )
        return work, source.points[base.K + 1 :], np.arange(base.K + 1, source.count)

    if req.mode == INCREASE_DEGREE:
        _check_nodes_in_stream(base, source, INCREASE_DEGREE)
        n = base.n_nodes
        used = set(int(i) for i in base.source_indices)
        remaining = np.array(
            [i for i in range(source.count) if i not in used], dtype=np.intp
        )
        work = QuadratureRule(
            nodes=base.nodes.copy(),
            weights=np.full(n, 1.0 / n),
            spec=spec,
            K=n - 1,
            source_indices=base.source_indices.copy(),
            fixed_mask=np.ones(n, dtype=bool),
        )
        return work, source.points[remaining], remaining

    # resampled: the stream is fresh, base nodes are generally not in it
    if source.count < 1:
        raise InsufficientSamples("resampled extension needs at least one sample")
    nodes = np.vstack([base.nodes, source.points[:1]])
    n = base.n_nodes
    work = QuadratureRule(
        nodes=nodes,
        weights=np.concatenate([np.zeros(n), [1.0]]),
        spec=spec,
        K=0,
        source_indices=np.concatenate([np.full(n, -1, dtype=np.intp), [0]]),
        fixed_mask=np.concatenate([np.ones(n, dtype=bool), [False]]),
    )
    return work, source.points[1:], np.arange(1, source.count)


class _NestedEngine:
    """Per-sample iteration with fixed-node bookkeeping.

    A factorization of the square Vandermonde over the positively
    weighted (support) nodes is kept across iterations; `fact_cols`
    records which node position each factorization column holds.  Most
    iterations change the support by at most a couple of nodes, which
    is handled by rank-one column exchanges instead of refactorizing.
    """

    def __init__(self, work: QuadratureRule, rng, removal_cap, fallback_on_cap):
        self.spec = work.spec
        self.X = work.nodes.copy()
        self.w = work.weights.copy()
        self.src = work.source_indices.copy()
        self.fixed = work.fixed_mask.copy()
        self.consumed = work.K + 1
        self.rng = rng
        self.removal_cap = removal_cap
        self.fallback_on_cap = fallback_on_cap
        self.Vall = basis_matrix(self.spec, self.X)
        self.fact = None
        self.fact_cols = None
        self._rebuild_fact()

    def _rebuild_fact(self):
        b = self.spec.size
        support = np.nonzero(self.w > 0.0)[0]
        if self.X.shape[0] < b or support.shape[0] != b:
            self.fact = None
            self.fact_cols = None
        else:
            self.fact = ExtensionFactorization(self.Vall[:, support])
            self.fact_cols = support.copy()

    def _sync_fact(self, remap):
        """Follow support changes with column exchanges where possible.

        `remap` maps old node positions to new ones (-1 when deleted).
        Falls back to a full rebuild when more than a few columns moved.
        """
        if self.fact is None:
            self._rebuild_fact()
            return
        b = self.spec.size
        support_mask = self.w > 0.0
        if int(support_mask.sum()) != b:
            self._rebuild_fact()
            return
        cols = np.array(
            [remap[c] if 0 <= c < remap.shape[0] else -1 for c in self.fact_cols],
            dtype=np.intp,
        )
        alive = (cols >= 0) & support_mask[np.clip(cols, 0, None)]
        stay = {int(c) for c in cols[alive]}
        entrants = [p for p in np.nonzero(support_mask)[0] if int(p) not in stay]
        leaver_slots = np.nonzero(~alive)[0]
        if len(entrants) != leaver_slots.shape[0] or len(entrants) > 3:
            self._rebuild_fact()
            return
        for slot, p in zip(leaver_slots, entrants):
            self.fact.replace_column(int(slot), self.Vall[:, p])
            cols[slot] = p
        self.fact_cols = cols

    def feed(self, y, col, src_idx):
        b = self.spec.size
        n = self.X.shape[0]
        count = self.consumed
        self.consumed += 1
        scale = count / (count + 1.0)
        tail = 1.0 / (count + 1.0)
        if n + 1 <= b:
            # below capacity: the extended system has no null space
            self.w = self.w * scale
            self._append(y, col, src_idx, tail)
            if n + 2 > b:
                self._rebuild_fact()
            return
        v = np.concatenate([self.w * scale, [tail]])
        excess = n + 1 - b
        if excess == 1 and self.fact is not None:
            u, zero = self._single_direction(v, col)
        else:
            u, zero = self._multi_direction(v, y, col)
        self._apply(u, zero, y, col, src_idx)

    def _append(self, y, col, src_idx, weight):
        self.X = np.vstack([self.X, y])
        self.w = np.concatenate([self.w, [weight]])
        self.src = np.concatenate([self.src, [src_idx]])
        self.fixed = np.concatenate([self.fixed, [False]])
        self.Vall = np.column_stack([self.Vall, col])

    def _candidate(self, v, c, alpha, attained):
        u = apply_removal(v, c, alpha, attained)
        tol = TOL_ZERO_FACTOR * max(float(u.max()), 0.0)
        if float(u.min()) < -tol:
            raise NullSpaceFailure(f"removal moved a weight to {u.min():.3e}")
        zero = u <= tol
        u[zero] = 0.0
        return u, zero

    def _embed_at(self, c_loc, pos):
        """Scatter a support-ordered null vector into node order.

        `pos` is the node position of the extension column.
        """
        c = np.zeros(self.X.shape[0] + 1)
        c[self.fact_cols] = c_loc[:-1]
        c[pos] = c_loc[-1]
        return c

    def _single_direction(self, v, col):
        c = self._embed_at(self.fact.null_vector_extended(col), self.X.shape[0])
        a_min, k_min, a_max, k_max, feasible = removal_interval(v, c)
        if not feasible:
            raise NullSpaceFailure("empty removal interval on non-negative weights")
        fixed_ext = np.concatenate([self.fixed, [False]])
        cands = []
        for alpha, side in ((a_max, +1), (a_min, -1)):
            mask = c > 0.0 if side > 0 else c < 0.0
            idx = np.nonzero(mask)[0]
            attained = idx[v[idx] / c[idx] == alpha]
            u, zero = self._candidate(v, c, alpha, attained)
            cands.append((int(np.count_nonzero(zero & ~fixed_ext)), u, zero))
        best = max(cand[0] for cand in cands)
        pool = [cand for cand in cands if cand[0] == best]
        pick = pool[0] if len(pool) == 1 else pool[int(self.rng.integers(len(pool)))]
        return pick[1], pick[2]

    def _null_basis(self, col, excess):
        """Null basis of [V, col]: one direction per non-support column."""
        nonsupport = np.nonzero(self.w == 0.0)[0]
        n = self.X.shape[0]
        if self.fact is None or nonsupport.shape[0] + 1 != excess:
            return null_space(np.column_stack([self.Vall, col]), excess)
        C = np.empty((n + 1, excess))
        for t, j in enumerate(nonsupport):
            C[:, t] = self._embed_at(self.fact.null_vector_extended(self.Vall[:, j]), j)
        C[:, -1] = self._embed_at(self.fact.null_vector_extended(col), n)
        return C

    def _multi_direction(self, v, y, col):
        excess = self.X.shape[0] + 1 - self.spec.size
        fixed_ext = np.concatenate([self.fixed, [False]])
        problem = RemovalProblem.from_parts(
            np.column_stack([self.Vall, col]), v, self._null_basis(col, excess)
        )
        stats = {}
        try:
            removals = problem.enumerate(
                cap=self.removal_cap,
                stats=stats,
                partial_on_cap=self.fallback_on_cap,
            )
        except CapExceeded as exc:
            raise CapExceeded(
                f"{exc} at sample count {self.consumed}",
                count=exc.count,
                context=exc.context,
            ) from exc
        if stats.get("capped"):
            log.debug(
                "removal enumeration capped at sample %d; choosing among %d vertices",
                self.consumed - 1,
                len(removals),
            )
        new_counts = [
            sum(1 for k in r.zero_indices if not fixed_ext[k]) for r in removals
        ]
        best = max(new_counts)
        pool = [r for r, cnt in zip(removals, new_counts) if cnt == best]
        pick = pool[0] if len(pool) == 1 else pool[int(self.rng.integers(len(pool)))]
        _, w_q = problem.vertex_weights(pick.indices)
        tol = TOL_ZERO_FACTOR * max(float(w_q.max()), 0.0)
        zero = w_q <= tol
        w_q[zero] = 0.0
        return w_q, zero

    def _apply(self, u, zero, y, col, src_idx):
        n = self.X.shape[0]
        fixed_ext = np.concatenate([self.fixed, [False]])
        delete = zero & ~fixed_ext
        identity = np.arange(n, dtype=np.intp)
        if not delete.any():
            # only fixed nodes were zeroed: the rule physically grows
            self.w = u[:n]
            self._append(y, col, src_idx, u[n])
            self._renorm()
            self._sync_fact(identity)
        elif delete[n] and np.count_nonzero(delete) == 1:
            # the incoming sample itself was removed
            changed = bool(np.any((self.w > 0.0) != (u[:n] > 0.0)))
            self.w = u[:n]
            self._renorm()
            if changed:
                self._sync_fact(identity)
        elif (
            np.count_nonzero(zero) == 1
            and not zero[n]
            and self.fact is not None
        ):
            # clean swap: the new node takes the vacated slot in place
            j = int(np.nonzero(delete)[0][0])
            w = u[:n].copy()
            w[j] = u[n]
            self.w = w
            self.X[j] = y
            self.src[j] = src_idx
            self.Vall[:, j] = col
            slot = np.nonzero(self.fact_cols == j)[0]
            if slot.shape[0] == 1:
                self.fact.replace_column(int(slot[0]), col)
            else:
                self._rebuild_fact()
            self._renorm()
        else:
            keep_old = ~delete[:n]
            remap = np.full(n, -1, dtype=np.intp)
            remap[keep_old] = np.arange(int(keep_old.sum()), dtype=np.intp)
            self.X = self.X[keep_old]
            self.w = u[:n][keep_old]
            self.src = self.src[keep_old]
            self.fixed = self.fixed[keep_old]
            self.Vall = np.ascontiguousarray(self.Vall[:, keep_old])
            if not delete[n]:
                self._append(y, col, src_idx, u[n])
            self._renorm()
            self._sync_fact(remap)

    def _renorm(self):
        total = self.w.sum()
        if total > 0.0:
            self.w /= total


def extend_rule(
    req: ExtensionRequest, selection_seed: int = 0, validate: bool = True
) -> QuadratureRule:
    """Extended rule containing the base nodes, exact on the larger basis.

    The node count N+M+1 obeys D <= N+M <= N+D+1 for target basis size
    D+1 and base node count N+1.  Fixed nodes selected by a removal stay
    with weight zero.  Deterministic for a fixed selection seed.
    """
    work, stream, stream_idx = initialize_extension(req)
    total = work.K + 1 + stream.shape[0]
    if total < req.target_basis_size:
        raise InsufficientSamples(
            f"{total} samples cannot support a basis of size {req.target_basis_size}"
        )
    rng = np.random.default_rng(selection_seed)
    engine = _NestedEngine(work, rng, req.removal_cap, req.fallback_on_cap)
    spec = work.spec
    block = 4096
    for lo in range(0, stream.shape[0], block):
        cols = basis_matrix(spec, stream[lo : lo + block])
        for j in range(cols.shape[1]):
            k = lo + j
            try:
                engine.feed(stream[k], cols[:, j], int(stream_idx[k]))
            except CapExceeded:
                raise
            except (NullSpaceFailure, DegenerateNullVector) as exc:
                raise NullSpaceFailure(
                    f"extension failed at stream position {k}: {exc}",
                    sample_index=int(stream_idx[k]),
                ) from exc
    out = QuadratureRule(
        nodes=engine.X,
        weights=engine.w,
        spec=spec,
        K=engine.consumed - 1,
        source_indices=engine.src,
        fixed_mask=engine.fixed,
    )
    if validate:
        _validate_extension(req, out)
    return out


def _validate_extension(req: ExtensionRequest, out: QuadratureRule):
    from .errors import ExactnessViolation

    base = req.base
    if base is not None and base.n_nodes > 0:
        base_keys = {row.tobytes() for row in base.nodes}
        out_keys = {row.tobytes() for row in out.nodes}
        if not base_keys <= out_keys:
            raise ExactnessViolation("base nodes are not a subset of the extension")
    # in every mode the fully consumed stream is, as a multiset, the whole
    # sample source (increase_degree re-adds the base nodes it skipped)
    resid = out.moment_residual(sample_moments(req.sample_source, out.spec))
    if resid > 1e-8:
        raise ExactnessViolation(f"extension residual {resid:.3e} exceeds 1e-8")


def nested_error_estimate(
    rule_small: QuadratureRule, rule_large: QuadratureRule, evaluations: dict
) -> float:
    """|A_small u - A_large u| from evaluations at the large rule's nodes.

    `evaluations` maps node tuples to integrand values; since the small
    rule's nodes are a subset of the large rule's, no further model
    evaluations are needed.
    """
    large_keys = [tuple(row) for row in rule_large.nodes]
    small_keys = [tuple(row) for row in rule_small.nodes]
    if not set(small_keys) <= set(large_keys):
        raise DimensionMismatch("small rule nodes are not nested in the large rule")
    try:
        u_large = np.array([evaluations[k] for k in large_keys], dtype=float)
        u_small = np.array([evaluations[k] for k in small_keys], dtype=float)
    except KeyError as exc:
        raise MissingEvaluation(f"no evaluation for node {exc.args[0]}") from exc
    return abs(rule_small.apply(u_small) - rule_large.apply(u_large))
