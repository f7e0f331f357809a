"""Geometry of the p x p torus: distances, symmetry orbits and the nested
collection of disc-shaped neighbourhood models.

Two symmetry groups act on the lattice:

* ``"s"``: the central symmetry (i, j) -> (-i, -j);
* ``"G"``: the order-8 dihedral group generated by the quarter turn
  (i, j) -> (j, -i) and the reflection (i, j) -> (-i, j).

``d_m`` counts s-orbits of a model and ``d_m_iso`` counts G-orbits.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .exceptions import PreconditionError

GROUPS = ("s", "G")


class LatticePoint(NamedTuple):
    i: int
    j: int


@dataclass(frozen=True)
class TorusGeometry:
    p: int

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 2:
            raise PreconditionError(f"torus side must be an integer >= 2, got {self.p}")

    def normalize(self, pt):
        return LatticePoint(pt[0] % self.p, pt[1] % self.p)

    def neg(self, pt):
        return LatticePoint(-pt[0] % self.p, -pt[1] % self.p)

    def signed(self, pt):
        """Representative of ``pt`` with coordinates in (-p/2, p/2]."""
        half = self.p // 2
        i, j = pt[0] % self.p, pt[1] % self.p
        return (i - self.p if i > half else i, j - self.p if j > half else j)

    def is_self_symmetric(self, pt):
        return (2 * pt[0]) % self.p == 0 and (2 * pt[1]) % self.p == 0

    @cached_property
    def squared_distance_grid(self):
        """Integer grid of squared toroidal distances to the origin."""
        k = np.arange(self.p)
        k = np.minimum(k, self.p - k)
        grid = k[:, None] ** 2 + k[None, :] ** 2
        grid.setflags(write=False)
        return grid

    @cached_property
    def self_symmetric_mask(self):
        even = (2 * np.arange(self.p)) % self.p == 0
        mask = even[:, None] & even[None, :]
        mask.setflags(write=False)
        return mask

    def points(self):
        return [LatticePoint(i, j) for i in range(self.p) for j in range(self.p)]


def _wrap(delta, p):
    delta = abs(delta) % p
    return min(delta, p - delta)


def toroidal_squared_distance(a, b, geom):
    di = _wrap(a[0] - b[0], geom.p)
    dj = _wrap(a[1] - b[1], geom.p)
    return di * di + dj * dj


def toroidal_distance(a, b, geom):
    """Euclidean distance with per-coordinate wraparound."""
    return math.sqrt(toroidal_squared_distance(a, b, geom))


def _group_images(pt, p, group):
    i, j = pt
    if group == "s":
        imgs = [(i, j), (-i, -j)]
    elif group == "G":
        imgs = []
        for a, b in ((i, j), (-i, j)):
            for _ in range(4):
                imgs.append((a, b))
                a, b = b, -a
    else:
        raise ValueError(f"unknown group {group!r}; expected one of {GROUPS}")
    return {LatticePoint(x % p, y % p) for x, y in imgs}


def group_orbit(pt, geom, group="s"):
    """Set of images of ``pt`` under ``group``."""
    return _group_images(geom.normalize(pt), geom.p, group)


@dataclass(frozen=True)
class OrbitClass:
    representative: LatticePoint
    members: tuple

    @property
    def size(self):
        return len(self.members)


def _canonical_rep(members, geom):
    # prefer the member whose signed coordinates are lexicographically largest,
    # so (1, 0), (0, 1), (1, 1), (1, -1) come out as representatives
    return max(members, key=lambda q: geom.signed(q))


def orbits_of(points, geom, group="s"):
    """Partition a point set into orbits of ``group``.

    The set is assumed closed under the group; a point whose images fall
    outside the set raises ``PreconditionError``. Orbits are sorted by squared
    distance to the origin, then by representative.
    """
    pts = {geom.normalize(x) for x in points}
    seen = set()
    out = []
    for x in sorted(pts):
        if x in seen:
            continue
        orb = _group_images(x, geom.p, group)
        if not orb <= pts:
            raise PreconditionError(f"point set is not closed under {group} at {x}")
        seen |= orb
        rep = _canonical_rep(orb, geom)
        out.append(OrbitClass(rep, tuple(sorted(orb))))
    out.sort(key=lambda o: (toroidal_squared_distance(o.representative, (0, 0), geom),
                            tuple(-c for c in geom.signed(o.representative))))
    return out


@dataclass(frozen=True)
class NeighborhoodModel:
    """Disc-shaped neighbourhood {x != 0 : |x| <= r_m} on the torus."""

    geometry: TorusGeometry
    radius_sq: int
    points: frozenset = field(repr=False)
    index: int = 0

    @property
    def radius(self):
        return math.sqrt(self.radius_sq)

    @property
    def p(self):
        return self.geometry.p

    @cached_property
    def mask(self):
        m = np.zeros((self.p, self.p), dtype=bool)
        for i, j in self.points:
            m[i, j] = True
        m.setflags(write=False)
        return m

    @cached_property
    def orbits_s(self):
        return orbits_of(self.points, self.geometry, "s")

    @cached_property
    def orbits_G(self):
        return orbits_of(self.points, self.geometry, "G")

    @cached_property
    def d_m(self):
        return count_orbits(self.mask, self.geometry)

    @property
    def d_m_iso(self):
        return len(self.orbits_G)

    def orbits(self, isotropic=False):
        return self.orbits_G if isotropic else self.orbits_s

    def dimension(self, isotropic=False):
        return self.d_m_iso if isotropic else self.d_m

    def __contains__(self, pt):
        return self.geometry.normalize(pt) in self.points


def disc_model(geom, radius_sq, index=0):
    grid = geom.squared_distance_grid
    ii, jj = np.nonzero(grid <= radius_sq)
    pts = frozenset(LatticePoint(int(i), int(j)) for i, j in zip(ii, jj) if (i, j) != (0, 0))
    return NeighborhoodModel(geom, int(radius_sq), pts, index)


@dataclass(frozen=True)
class ModelCollection:
    geometry: TorusGeometry
    models: tuple

    def __len__(self):
        return len(self.models)

    def __getitem__(self, k):
        return self.models[k]

    def __iter__(self):
        return iter(self.models)

    def by_index(self, index):
        """Model with 1-based collection index ``index``."""
        if not 1 <= index <= len(self.models):
            raise PreconditionError(f"model index {index} outside 1..{len(self.models)}")
        return self.models[index - 1]


def build_model_collection(geom):
    """Nested discs m_1 ⊂ m_2 ⊂ ... swept through every attained distance.

    Radii are compared as exact integer squared distances, so lattice points at
    exactly ``r_m`` are always included. The last model covers the torus minus
    the origin. Indices are 1-based.
    """
    if geom.p < 3:
        raise PreconditionError("model collection needs p >= 3")
    grid = geom.squared_distance_grid
    radii = np.unique(grid[grid > 0])
    models = tuple(disc_model(geom, int(r2), k + 1) for k, r2 in enumerate(radii))
    return ModelCollection(geom, models)


def orbit_decomposition(m, group="s"):
    if group == "s":
        return m.orbits_s
    if group == "G":
        return m.orbits_G
    raise ValueError(f"unknown group {group!r}; expected one of {GROUPS}")


def count_orbits(mask, geom):
    """Number of s-orbits of an s-closed boolean mask (fast path)."""
    mask = np.asarray(mask, dtype=bool)
    return int((mask.sum() + (mask & geom.self_symmetric_mask).sum()) // 2)


def sum_set_mask(mask, geom):
    """Boolean mask of {x + y : x, y in mask ∪ {0}}."""
    base = np.array(mask, dtype=float)
    base[0, 0] = 1.0
    f = np.fft.fft2(base)
    return np.real(np.fft.ifft2(f * f)) > 0.5


def sum_set(m):
    """N(m): pairwise sums over m ∪ {(0, 0)}, reduced mod p."""
    mask = sum_set_mask(m.mask, m.geometry)
    ii, jj = np.nonzero(mask)
    return frozenset(LatticePoint(int(i), int(j)) for i, j in zip(ii, jj))


def dim_dm2_upper(m):
    """Number of s-orbits of N(m), an upper bound for d_{m^2}."""
    return count_orbits(sum_set_mask(m.mask, m.geometry), m.geometry)


@dataclass
class GrowthReport:
    rows: list            # (index, d_m_i, d_m_{i+1}, ratio)
    max_ratio: float
    flagged: list         # indices i with d_{m_{i+1}} / d_{m_i} > 2


def verify_growth(coll):
    dims = [m.d_m for m in coll]
    rows = []
    for k in range(len(dims) - 1):
        rows.append((k + 1, dims[k], dims[k + 1], dims[k + 1] / dims[k]))
    max_ratio = max((r[3] for r in rows), default=1.0)
    flagged = [r[0] for r in rows if r[3] > 2]
    return GrowthReport(rows, max_ratio, flagged)


def dm2_analytic_bound(d_m, r):
    """Upper bound on d_{m^2} / d_m valid while 2 r_m + 1 <= p."""
    lead = 4.0 * (1.0 + math.sqrt(2.0) / (2.0 * r)) ** 2
    tail = 1.0 + (4.0 / math.pi) * (1.0 + math.sqrt(1.0 + math.pi * (1.0 + d_m) / 2.0))
    return lead * (1.0 + tail / d_m)


@dataclass
class Dm2Row:
    index: int
    radius_sq: int
    d_m: int
    dm2_upper: int
    ratio: float
    in_regime: bool        # 2 r_m + 1 <= p
    analytic_bound: float
    disc_lower_ok: bool    # d_m + 2 + 2 floor(r_m) >= pi r_m^2 / 2
    flagged: bool


def verify_dm2_ratio(coll):
    rows = []
    for m in coll:
        r = m.radius
        up = dim_dm2_upper(m)
        ratio = up / m.d_m
        in_regime = 2 * r + 1 <= m.p
        bound = dm2_analytic_bound(m.d_m, r)
        lower_ok = m.d_m + 2 + 2 * math.floor(r) >= math.pi * m.radius_sq / 2
        flagged = in_regime and (ratio > bound or not lower_ok)
        rows.append(Dm2Row(m.index, m.radius_sq, m.d_m, up, ratio, in_regime, bound, lower_ok, flagged))
    return rows


def dims_table(coll):
    """Rows (index, r_m^2, d_m, d_m_iso, dm2_upper, growth_ratio) for the ``dims`` report.

    ``growth_ratio`` is d_{m_{i+1}} / d_{m_i}; empty for the last model.
    """
    out = []
    models = list(coll)
    for k, m in enumerate(models):
        growth = models[k + 1].d_m / m.d_m if k + 1 < len(models) else float("nan")
        out.append((m.index, m.radius_sq, m.d_m, m.d_m_iso, dim_dm2_upper(m), growth))
    return out
