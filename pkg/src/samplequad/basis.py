"""Multivariate polynomial bases: ordering, construction, and evaluation.

The basis is a sequence of polynomials phi_0, phi_1, ... of non-decreasing
total degree, with phi_0 the constant function.  Multi-indices are ordered
by ascending total degree; within a degree the tie-break compares exponent
vectors from the last coordinate, with the larger last-differing exponent
sorting later (a graded reverse-lexicographic order).  Two families are
supported: raw monomials and products of Legendre polynomials composed
with a per-coordinate affine map onto [-1, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DimensionMismatch, InvalidDomain, InvalidSpec

MONOMIAL = "monomial"
PRODUCT_LEGENDRE = "product_legendre"
FAMILIES = (MONOMIAL, PRODUCT_LEGENDRE)


@dataclass(frozen=True)
class MultiIndex:
    """Exponent vector of one multivariate monomial."""

    exponents: tuple[int, ...]

    def __post_init__(self):
        if len(self.exponents) < 1:
            raise InvalidSpec("multi-index needs at least one coordinate")
        if any(e < 0 for e in self.exponents):
            raise InvalidSpec("exponents must be non-negative")

    @property
    def total_degree(self) -> int:
        return sum(self.exponents)

    def sort_key(self):
        # graded; within a degree compare from the last coordinate,
        # larger last-differing exponent sorts later
        return (self.total_degree, self.exponents[::-1])


def _compositions(total: int, parts: int):
    """All exponent tuples of `parts` entries summing to `total`."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@lru_cache(maxsize=None)
def _indices_cached(d: int, count: int) -> tuple[tuple[int, ...], ...]:
    out: list[tuple[int, ...]] = []
    degree = 0
    while len(out) < count:
        out.extend(sorted(_compositions(degree, d), key=lambda e: e[::-1]))
        degree += 1
    return tuple(out[:count])


def generate_indices(d: int, count: int) -> list[MultiIndex]:
    """First `count` multi-indices in graded reverse-lexicographic order.

    The primary key is ascending total degree; the first index is all
    zeros, so the leading basis function is the constant.
    """
    if d < 1:
        raise InvalidSpec("dimension must be >= 1")
    if count < 1:
        raise InvalidSpec("count must be >= 1")
    return [MultiIndex(e) for e in _indices_cached(d, count)]


def dimension_for_degree(d: int, q: int) -> int:
    """Number of d-variate monomials of total degree <= q, i.e. C(q+d, d).

    A basis of at least this size reproduces every polynomial of total
    degree q.  Exact integer arithmetic; never wraps.
    """
    if d < 1 or q < 0:
        raise InvalidSpec("need d >= 1 and q >= 0")
    return math.comb(q + d, d)


@dataclass(frozen=True)
class BasisSpec:
    """A finite polynomial basis with an attached affine domain map.

    `domain` stores one (lo, hi) pair per coordinate; for the Legendre
    family each coordinate is mapped onto [-1, 1] before evaluation.
    Monomials are evaluated on the raw coordinates.  Indices are always
    regenerated from (d, size), never stored externally.
    """

    d: int
    size: int
    family: str = PRODUCT_LEGENDRE
    domain: tuple[tuple[float, float], ...] = ()
    indices: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidSpec(f"unknown basis family {self.family!r}")
        if self.d < 1 or self.size < 1:
            raise InvalidSpec("need d >= 1 and size >= 1")
        domain = self.domain
        if not domain:
            domain = tuple((-1.0, 1.0) for _ in range(self.d))
            object.__setattr__(self, "domain", domain)
        if len(domain) != self.d:
            raise DimensionMismatch("domain box count must equal d")
        for lo, hi in domain:
            if not lo < hi:
                raise InvalidDomain(f"degenerate domain box [{lo}, {hi}]")
        object.__setattr__(self, "indices", _indices_cached(self.d, self.size))

    @property
    def exponent_matrix(self) -> np.ndarray:
        """(size, d) int array of exponents, one row per basis function."""
        return np.asarray(self.indices, dtype=np.intp).reshape(self.size, self.d)

    def map_to_reference(self, points: np.ndarray) -> np.ndarray:
        """Affinely map points from the domain box onto [-1, 1]^d."""
        box = np.asarray(self.domain, dtype=float)
        lo, hi = box[:, 0], box[:, 1]
        return 2.0 * (points - lo) / (hi - lo) - 1.0

    def to_json_dict(self) -> dict:
        return {
            "d": self.d,
            "size": self.size,
            "family": self.family,
            "domain": [[lo, hi] for lo, hi in self.domain],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "BasisSpec":
        return cls(
            d=int(data["d"]),
            size=int(data["size"]),
            family=str(data["family"]),
            domain=tuple((float(lo), float(hi)) for lo, hi in data["domain"]),
        )


def domain_from_samples(points: np.ndarray) -> tuple[tuple[float, float], ...]:
    """Per-coordinate bounding box of a sample array (no expansion)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise DimensionMismatch("expected a non-empty (n, d) sample array")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    if np.any(lo >= hi):
        bad = int(np.argmax(lo >= hi))
        raise InvalidDomain(f"samples are constant in coordinate {bad}")
    return tuple((float(a), float(b)) for a, b in zip(lo, hi))


def _legendre_table(x: np.ndarray, max_degree: int) -> np.ndarray:
    """Legendre values P_0..P_max_degree at x, shape (max_degree+1, len(x)).

    Three-term recurrence (n+1) P_{n+1} = (2n+1) x P_n - n P_{n-1}.
    """
    x = np.asarray(x, dtype=float)
    table = np.empty((max_degree + 1, x.shape[0]))
    table[0] = 1.0
    if max_degree >= 1:
        table[1] = x
    for n in range(1, max_degree):
        table[n + 1] = ((2 * n + 1) * x * table[n] - n * table[n - 1]) / (n + 1)
    return table


def basis_matrix(spec: BasisSpec, points: np.ndarray) -> np.ndarray:
    """Evaluate every basis function at every point.

    Returns shape (size, n_points): entry (j, k) is phi_j(points[k]).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    if pts.shape[1] != spec.d:
        raise DimensionMismatch(
            f"points have dimension {pts.shape[1]}, basis expects {spec.d}"
        )
    expo = spec.exponent_matrix
    n = pts.shape[0]
    if spec.family == PRODUCT_LEGENDRE:
        ref = spec.map_to_reference(pts)
        out = np.ones((spec.size, n))
        for i in range(spec.d):
            max_deg = int(expo[:, i].max())
            table = _legendre_table(ref[:, i], max_deg)
            out *= table[expo[:, i], :]
        return out
    # monomial family: raw coordinate powers, no domain map
    out = np.ones((spec.size, n))
    for i in range(spec.d):
        max_deg = int(expo[:, i].max())
        powers = np.empty((max_deg + 1, n))
        powers[0] = 1.0
        for p in range(max_deg):
            powers[p + 1] = powers[p] * pts[:, i]
        out *= powers[expo[:, i], :]
    return out


def evaluate_basis(spec: BasisSpec, point) -> np.ndarray:
    """Evaluate all basis functions at a single d-vector."""
    pt = np.asarray(point, dtype=float).reshape(-1)
    if pt.shape[0] != spec.d:
        raise DimensionMismatch(
            f"point has dimension {pt.shape[0]}, basis expects {spec.d}"
        )
    return basis_matrix(spec, pt.reshape(1, -1))[:, 0]
