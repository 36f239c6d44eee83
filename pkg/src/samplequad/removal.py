"""Enumeration of all M-node removals of a positive rule.

Removing M nodes while staying exact on a basis shrunk by M functions
and keeping weights non-negative corresponds to a vertex of the simplex
of feasible null-space coefficients.  Each vertex has, per removed
node, exactly one adjacent vertex reachable by exchanging that node, so
a breadth-first walk over these exchanges visits every vertex.

All reduced systems appearing in the walk live inside one null space:
the Vandermonde of the full rule is decomposed once, and every vertex
solve or exchange direction is an M x M (or smaller) problem in the
null-basis coordinates.  The walk therefore costs one dense
decomposition up front plus near-linear work per visited vertex.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from dataclasses import dataclass

from .basis import BasisSpec, basis_matrix
from .errors import (
    CapExceeded,
    DegenerateNullVector,
    DimensionMismatch,
    NoRemovalExists,
    NullSpaceFailure,
    NumericalTie,
)
from .linalg import null_space
from .rule import QuadratureRule, TOL_ZERO_FACTOR

_ZERO_REL = 1e-12


@dataclass(frozen=True)
class Removal:
    """A set of node positions whose joint deletion keeps weights >= 0.

    `indices` is the canonical sorted M-tuple; `alphas` are the
    null-basis coefficients locating the corresponding simplex vertex.
    When more weights vanish at the vertex than the nominal M (a
    degenerate vertex), the full zero set is recorded and the removal
    is flagged as merged.
    """

    indices: tuple[int, ...]
    alphas: tuple[float, ...] = ()
    zero_indices: tuple[int, ...] = ()
    merged: bool = False

    def __post_init__(self):
        if not self.zero_indices:
            object.__setattr__(self, "zero_indices", self.indices)


class RemovalProblem:
    """Removal computations for one positive rule and removal size M."""

    def __init__(self, rule: QuadratureRule, m: int):
        n = rule.n_nodes
        if not 1 <= m < n:
            raise DimensionMismatch(f"need 1 <= M < {n}, got {m}")
        basis_count = n - m
        if rule.spec.size < basis_count:
            raise DimensionMismatch("rule basis too small for this removal size")
        sub = rule.spec
        if sub.size != basis_count:
            sub = BasisSpec(
                d=sub.d, size=basis_count, family=sub.family, domain=sub.domain
            )
        V = basis_matrix(sub, rule.nodes)
        self._init_from_parts(V, rule.weights, null_space(V, m))

    @classmethod
    def from_parts(cls, V: np.ndarray, weights: np.ndarray, null_basis: np.ndarray):
        """Build from a precomputed Vandermonde and null basis.

        `null_basis` columns must span the null space of V; they need
        not be orthonormal.
        """
        self = cls.__new__(cls)
        self._init_from_parts(V, weights, null_basis)
        return self

    def _init_from_parts(self, V, weights, null_basis):
        self.V = np.asarray(V, dtype=float)
        self.w = np.asarray(weights, dtype=float)
        self.C = np.asarray(null_basis, dtype=float)
        self.n = self.w.shape[0]
        self.m = self.C.shape[1]
        if self.C.shape[0] != self.n or self.V.shape[1] != self.n:
            raise DimensionMismatch("inconsistent removal problem shapes")
        self.wmax = max(float(np.abs(self.w).max()), 1e-300)
        self._ztol = _ZERO_REL * self.wmax

    # -- vertex algebra -------------------------------------------------

    def _pop_data(self, indices):
        """(alphas, vertex weights, exchange directions) for one vertex.

        The inverse B of the M x M block C[indices, :] yields everything
        at once: alphas = B w[indices], and column i of C B is the null
        direction vanishing at every removed node except the i-th.
        """
        q = np.asarray(indices, dtype=np.intp)
        A = self.C[q, :]
        B = None
        try:
            B = np.linalg.inv(A)
        except np.linalg.LinAlgError:
            pass
        if B is not None:
            alphas = B @ self.w[q]
        else:
            alphas, *_ = np.linalg.lstsq(A, self.w[q], rcond=None)
        if np.abs(A @ alphas - self.w[q]).max() > 1e-10 * max(1.0, self.wmax):
            raise NullSpaceFailure(f"removal {tuple(indices)} is not a simplex vertex")
        w_q = self.w - self.C @ alphas
        w_q[q] = 0.0
        if float(w_q.min()) < -1e-11 * max(1.0, self.wmax):
            raise NullSpaceFailure(
                f"vertex {tuple(indices)} has negative weight {w_q.min():.3e}"
            )
        dirs = self.C @ B if B is not None else None
        return alphas, w_q, dirs

    def vertex_weights(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """(alphas, full weight vector) of the vertex zeroing `indices`."""
        alphas, w_q, _ = self._pop_data(indices)
        return alphas, w_q

    def vertex(self, indices) -> Removal:
        alphas, w_q = self.vertex_weights(indices)
        return self._build(tuple(indices), alphas, w_q)

    def _build(self, indices, alphas, w_q) -> Removal:
        zero = np.nonzero(np.abs(w_q) <= self._ztol)[0]
        zero_set = tuple(sorted(set(indices) | {int(z) for z in zero}))
        return Removal(
            indices=tuple(int(i) for i in indices),
            alphas=tuple(float(a) for a in alphas),
            zero_indices=zero_set,
            merged=len(zero_set) > len(indices),
        )

    def _direction_vanishing_at(self, rows) -> np.ndarray:
        """A null-space direction whose weight-change vanishes at `rows`."""
        if len(rows) == 0:
            c = self.C[:, 0].copy()
        else:
            A = self.C[np.asarray(rows, dtype=np.intp), :]
            _, _, vt = np.linalg.svd(A)
            c = self.C @ vt[-1]
        return c

    def _masked_interval(self, w_q, c, exclude):
        """Removal interval over positions not excluded; global indices."""
        pos = c > 0.0
        neg = c < 0.0
        if exclude is not None:
            pos &= ~exclude
            neg &= ~exclude
        if not pos.any() or not neg.any():
            raise DegenerateNullVector("direction is one-signed on the active set")
        ratios = np.full(self.n, np.inf)
        ratios[pos] = w_q[pos] / c[pos]
        k_max = int(np.argmin(ratios))
        a_max = float(ratios[k_max])
        ratios = np.full(self.n, -np.inf)
        ratios[neg] = w_q[neg] / c[neg]
        k_min = int(np.argmax(ratios))
        a_min = float(ratios[k_min])
        return a_min, k_min, a_max, k_max

    # -- operations -----------------------------------------------------

    def _exchange(self, q, i, w_q, c):
        """Swap q_i out along direction c; global index of the partner."""
        qi = q[i - 1]
        others = [x for x in q if x != qi]
        exclude = np.zeros(self.n, dtype=bool)
        exclude[others] = True
        a_min, k_min, a_max, k_max = self._masked_interval(w_q, c, exclude)
        if a_min > a_max:
            raise NoRemovalExists(f"no exchange for node {qi} of removal {q}")
        cand = k_min if k_max == qi else k_max
        if cand == qi:
            raise NumericalTie(f"both interval endpoints coincide with node {qi}")
        return tuple(sorted(others + [int(cand)]))

    def _exchange_all(self, q, w_q, dirs):
        """All M exchange partners of a vertex in one vectorized sweep.

        Returns a list of M neighbor index tuples (None where the
        exchange is degenerate).  Direction j of `dirs` vanishes at
        every removed node except q[j], so only that node's constraint
        row is kept active per column.
        """
        m = len(q)
        q_arr = np.asarray(q, dtype=np.intp)
        excl = np.zeros((self.n, m), dtype=bool)
        excl[q_arr, :] = True
        excl[q_arr, np.arange(m)] = False
        pos = (dirs > 0.0) & ~excl
        neg = (dirs < 0.0) & ~excl
        wq2 = np.broadcast_to(w_q[:, None], dirs.shape)
        ratios = np.full(dirs.shape, np.inf)
        np.divide(wq2, dirs, out=ratios, where=pos)
        k_max = np.argmin(ratios, axis=0)
        ratios = np.full(dirs.shape, -np.inf)
        np.divide(wq2, dirs, out=ratios, where=neg)
        k_min = np.argmax(ratios, axis=0)
        ok = pos.any(axis=0) & neg.any(axis=0)
        out = []
        for j in range(m):
            if not ok[j]:
                out.append(None)
                continue
            qi = int(q_arr[j])
            cand = int(k_min[j]) if int(k_max[j]) == qi else int(k_max[j])
            if cand == qi:
                out.append(None)
                continue
            others = [int(x) for t, x in enumerate(q_arr) if t != j]
            out.append(tuple(sorted(others + [cand])))
        return out

    def neighbor_indices(self, q: tuple[int, ...], i: int, w_q: np.ndarray):
        """Exchange the i-th (1-based) removed node for its alternative.

        The rule reduced by the other M-1 removed nodes has a
        one-dimensional feasible interval whose two endpoints are q_i
        itself and the exchange partner.
        """
        qi = q[i - 1]
        others = [x for x in q if x != qi]
        c = self._direction_vanishing_at(others)
        return self._exchange(q, i, w_q, c)

    def initial(self) -> Removal:
        """A first valid removal via M successive single removals."""
        removed: list[int] = []
        w_work = self.w.copy()
        exclude = np.zeros(self.n, dtype=bool)
        while len(removed) < self.m:
            c = self._direction_vanishing_at(removed)
            a_min, k_min, a_max, k_max = self._masked_interval(w_work, c, exclude)
            if a_min > a_max:
                raise NoRemovalExists("empty removal interval from a positive rule")
            alpha, side = (a_max, +1) if abs(a_max) <= abs(a_min) else (a_min, -1)
            mask = (c > 0.0 if side > 0 else c < 0.0) & ~exclude
            idx = np.nonzero(mask)[0]
            attained = idx[w_work[idx] / c[idx] == alpha]
            w_work = w_work - alpha * c
            w_work[attained] = 0.0
            w_work[exclude] = 0.0
            active = ~exclude
            tol = TOL_ZERO_FACTOR * max(float(w_work[active].max()), 0.0)
            newly = np.nonzero(active & (w_work <= tol))[0]
            if newly.size == 0:
                raise NoRemovalExists("no weight reached zero during initial removal")
            for j in newly:
                removed.append(int(j))
                exclude[j] = True
                w_work[j] = 0.0
        return self.vertex(tuple(sorted(removed[: self.m])))

    def _pop_single(self, q):
        """Per-vertex fallback: robust but slower than the batched path."""
        try:
            alphas, w_q, dirs = self._pop_data(q)
        except NullSpaceFailure:
            return None
        if dirs is not None:
            neighbors = self._exchange_all(q, w_q, dirs)
        else:
            neighbors = []
            for i in range(1, self.m + 1):
                try:
                    neighbors.append(self.neighbor_indices(q, i, w_q))
                except (NumericalTie, NoRemovalExists, DegenerateNullVector):
                    neighbors.append(None)
        return alphas, w_q, neighbors

    _WAVE = 64

    def _process_wave(self, wave):
        """Vertex weights and exchange partners for a batch of removals.

        All per-vertex M x M inversions, weight updates, and interval
        scans run as stacked operations; vertices that fail the batch
        checks are redone individually.
        """
        k = len(wave)
        m = self.m
        n = self.n
        q_mat = np.asarray(wave, dtype=np.intp)
        A = self.C[q_mat]
        try:
            B = np.linalg.inv(A)
        except np.linalg.LinAlgError:
            return [self._pop_single(q) for q in wave]
        wq_rm = self.w[q_mat]
        alphas = np.einsum("kij,kj->ki", B, wq_rm)
        resid = np.abs(np.einsum("kij,kj->ki", A, alphas) - wq_rm).max(axis=1)
        Wq = self.w[:, None] - self.C @ alphas.T
        rows = np.arange(k)[:, None]
        Wq[q_mat, rows] = 0.0
        tol_res = 1e-10 * max(1.0, self.wmax)
        tol_neg = -1e-11 * max(1.0, self.wmax)
        bad = (resid > tol_res) | (Wq.min(axis=0) < tol_neg)
        dirs = np.einsum("nm,kmi->kni", self.C, B)
        excl = np.zeros((k, n, m), dtype=bool)
        excl[rows, q_mat, :] = True
        excl[rows, q_mat, np.arange(m)[None, :]] = False
        pos = (dirs > 0.0) & ~excl
        neg = (dirs < 0.0) & ~excl
        wq3 = np.swapaxes(Wq, 0, 1)[:, :, None]
        ratios = np.full(dirs.shape, np.inf)
        np.divide(np.broadcast_to(wq3, dirs.shape), dirs, out=ratios, where=pos)
        k_max = np.argmin(ratios, axis=1)
        ratios = np.full(dirs.shape, -np.inf)
        np.divide(np.broadcast_to(wq3, dirs.shape), dirs, out=ratios, where=neg)
        k_min = np.argmax(ratios, axis=1)
        feasible = pos.any(axis=1) & neg.any(axis=1)
        out = []
        for i, q in enumerate(wave):
            if bad[i]:
                out.append(self._pop_single(q))
                continue
            neighbors = []
            for j in range(m):
                if not feasible[i, j]:
                    neighbors.append(None)
                    continue
                qi = int(q_mat[i, j])
                cand = int(k_min[i, j]) if int(k_max[i, j]) == qi else int(k_max[i, j])
                if cand == qi:
                    neighbors.append(None)
                    continue
                others = [int(x) for t, x in enumerate(q_mat[i]) if t != j]
                neighbors.append(tuple(sorted(others + [cand])))
            out.append((alphas[i], Wq[:, i], neighbors))
        return out

    def enumerate(self, cap: int = 10**6, initial: Removal | None = None,
                  stats: dict | None = None, partial_on_cap: bool = False) -> list[Removal]:
        start = initial if initial is not None else self.initial()
        queue = deque([tuple(start.indices)])
        seen = {tuple(start.indices)}
        results: dict[tuple[int, ...], Removal] = {}
        pops = solves = 0
        capped = False
        while queue and not capped:
            take = min(len(queue), self._WAVE)
            wave = [queue.popleft() for _ in range(take)]
            pops += len(wave)
            solves += len(wave) * (self.m + 1)
            for q, data in zip(wave, self._process_wave(wave)):
                if data is None:
                    continue
                alphas, w_q, neighbors = data
                results[q] = self._build(q, alphas, w_q)
                if capped:
                    continue
                for q_hat in neighbors:
                    if q_hat is None or q_hat in seen:
                        continue
                    if len(seen) >= cap:
                        if not partial_on_cap:
                            raise CapExceeded(
                                f"more than {cap} removals",
                                count=len(seen),
                                context=q_hat,
                            )
                        capped = True
                        break
                    seen.add(q_hat)
                    queue.append(q_hat)
        if stats is not None:
            stats["pops"] = pops
            stats["solves"] = solves
            stats["capped"] = capped
        return [results[k] for k in sorted(results)]


def find_initial_removal(rule: QuadratureRule, m: int) -> Removal:
    """One valid M-removal, built by M successive single removals.

    Each stage deletes at least one node of the current shrunken rule
    along a null direction while keeping the remaining weights
    non-negative, which is always feasible starting from a positive
    rule.
    """
    return RemovalProblem(rule, m).initial()


def neighbor(rule: QuadratureRule, removal: Removal, i: int) -> Removal:
    """The unique other M-removal sharing all entries except the i-th."""
    problem = RemovalProblem(rule, len(removal.indices))
    if not 1 <= i <= problem.m:
        raise IndexError(f"i must be in 1..{problem.m}")
    _, w_q = problem.vertex_weights(removal.indices)
    q_hat = problem.neighbor_indices(tuple(removal.indices), i, w_q)
    return problem.vertex(q_hat)


def enumerate_removals(
    rule: QuadratureRule,
    m: int,
    cap: int = 10**6,
    initial: Removal | None = None,
    stats: dict | None = None,
) -> list[Removal]:
    """All M-removals of a positive rule, canonically sorted.

    Breadth-first traversal of the simplex vertices from one initial
    removal; the visited set guarantees termination.  Raises
    CapExceeded once more than `cap` distinct removals are seen.
    """
    return RemovalProblem(rule, m).enumerate(cap=cap, initial=initial, stats=stats)
