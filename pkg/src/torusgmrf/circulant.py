"""Block-circulant operators C(theta) on the torus and their spectra.

C(theta) acts on vectorized p x p fields with entries
``C[i1 * p + j1, i2 * p + j2] = theta[i2 - i1, j2 - j1]`` (indices mod p).
All such matrices are diagonalized by the 2D discrete Fourier transform, so
the eigenvalue attached to frequency (i, j) is the cosine transform

    mu[i, j] = sum_{k, l} theta[k, l] cos(2 pi (i k + j l) / p).

The precision of the field is (I - C(theta)) / sigma^2, whose spectrum is
``1 - mu``.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (DenseLimitError, NotBlockCirculantError, NotSymmetricError,
                         PreconditionError, SchemaError)
from .torus import TorusGeometry, group_orbit, orbits_of

DENSE_LIMIT = 12
SYMMETRY_TOL = 1e-12


def _reflect(values):
    # values[-i, -j] for every (i, j)
    return np.roll(values[::-1, ::-1], 1, axis=(0, 1))


@dataclass(frozen=True, eq=False)
class ThetaField:
    """Parameter grid theta, symmetric under s and zero at the origin."""

    geometry: TorusGeometry
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        p = self.geometry.p
        if vals.shape != (p, p):
            raise PreconditionError(f"theta must be {p}x{p}, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise PreconditionError("theta has non-finite entries")
        if vals[0, 0] != 0.0:
            raise PreconditionError("theta[0, 0] must be zero")
        if np.max(np.abs(vals - _reflect(vals))) > SYMMETRY_TOL:
            raise NotSymmetricError("theta[i, j] != theta[-i, -j]")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, geom):
        return cls(geom, np.zeros((geom.p, geom.p)))

    @classmethod
    def from_points(cls, geom, entries):
        """Build from ``{(i, j): value}``, filling in the mirror (-i, -j)."""
        vals = np.zeros((geom.p, geom.p))
        for (i, j), v in entries.items():
            a, b = geom.normalize((i, j))
            na, nb = geom.neg((a, b))
            for x, y in ((a, b), (na, nb)):
                if vals[x, y] != 0.0 and vals[x, y] != v:
                    raise PreconditionError(f"conflicting values for orbit of {(i, j)}")
                vals[x, y] = v
        return cls(geom, vals)

    @property
    def p(self):
        return self.geometry.p

    @property
    def l1(self):
        """Sum of |theta| over every lattice site (the origin is zero)."""
        return float(np.abs(self.values).sum())

    def __add__(self, other):
        return ThetaField(self.geometry, self.values + other.values)

    def __sub__(self, other):
        return ThetaField(self.geometry, self.values - other.values)

    def __mul__(self, scalar):
        return ThetaField(self.geometry, self.values * float(scalar))

    __rmul__ = __mul__

    def __eq__(self, other):
        return (isinstance(other, ThetaField) and self.p == other.p
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.p, self.values.tobytes()))

    def support(self):
        ii, jj = np.nonzero(self.values)
        return {(int(i), int(j)) for i, j in zip(ii, jj)}


@dataclass(frozen=True, eq=False)
class SpectrumGrid:
    geometry: TorusGeometry
    lam: np.ndarray = field(repr=False)

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float)
        if lam.shape != (self.geometry.p, self.geometry.p) or not np.all(np.isfinite(lam)):
            raise PreconditionError("spectrum grid must be a finite p x p array")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)


def cosine_transform(values):
    """Real cosine transform of an s-symmetric p x p grid."""
    f = np.fft.fft2(values)
    scale = max(1.0, float(np.abs(values).sum()))
    if np.max(np.abs(f.imag)) > 1e-12 * scale:
        raise NotSymmetricError("grid is not s-symmetric; transform has an imaginary part")
    return f.real


def spectrum_of_C(theta):
    """Eigenvalues mu of C(theta), indexed by frequency."""
    return SpectrumGrid(theta.geometry, cosine_transform(theta.values))


def precision_spectrum(theta):
    """Eigenvalues 1 - mu of I - C(theta)."""
    return SpectrumGrid(theta.geometry, 1.0 - cosine_transform(theta.values))


def _dense_from_values(vals, p):
    idx = np.arange(p)
    di = (idx[None, :] - idx[:, None]) % p          # i2 - i1
    # C[(i1, j1), (i2, j2)] = vals[i2 - i1, j2 - j1]
    blocks = vals[di[:, :, None, None], di[None, None, :, :]]
    return blocks.transpose(0, 2, 1, 3).reshape(p * p, p * p)


def dense_C(theta, dense_limit=DENSE_LIMIT):
    p = theta.p
    if p > dense_limit:
        raise DenseLimitError(f"dense C(theta) requested for p={p} > limit {dense_limit}")
    return _dense_from_values(theta.values, p)


def theta_of_dense(B, identity_minus=False, tol=1e-12):
    """Recover theta from a symmetric block-circulant matrix.

    With ``identity_minus=True`` the input is read as I - C(theta) and the
    identity is stripped first.
    """
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    p = int(round(np.sqrt(n)))
    if B.shape != (n, n) or p * p != n:
        raise PreconditionError(f"expected a p^2 x p^2 matrix, got {B.shape}")
    if identity_minus:
        B = np.eye(n) - B
    if np.max(np.abs(B - B.T)) > tol:
        raise NotSymmetricError("matrix is not symmetric")
    vals = B[0].reshape(p, p).copy()
    if np.max(np.abs(_dense_from_values(vals, p) - B)) > tol:
        raise NotBlockCirculantError("matrix is not block circulant")
    if abs(vals[0, 0]) > tol:
        raise PreconditionError("diagonal is nonzero: theta[0, 0] must vanish "
                                "(pass identity_minus=True for I - C(theta) inputs)")
    vals[0, 0] = 0.0
    return ThetaField(TorusGeometry(p), vals)


@dataclass(frozen=True, eq=False)
class BasisElement:
    """Orbit-indicator basis field Psi (entries 1 on the orbit, 0 elsewhere)."""

    kind: str                 # "anisotropic" or "isotropic"
    representative: tuple
    field: ThetaField = field(repr=False)
    frobenius_sq: int = 0     # ||C(Psi)||_F^2 = p^2 * orbit size

    @property
    def orbit_size(self):
        return int(self.field.values.sum())


def basis_element(geom, point, isotropic=False):
    group = "G" if isotropic else "s"
    pt = geom.normalize(point)
    if pt == (0, 0):
        raise PreconditionError("the origin carries no basis element")
    (orb,) = orbits_of(group_orbit(pt, geom, group), geom, group)
    vals = np.zeros((geom.p, geom.p))
    for i, j in orb.members:
        vals[i, j] = 1.0
    return BasisElement("isotropic" if isotropic else "anisotropic", orb.representative,
                        ThetaField(geom, vals), geom.p ** 2 * orb.size)


def _indicator(geom, pt):
    """Anisotropic orbit indicator, allowing the origin (Psi_{0,0} = identity)."""
    vals = np.zeros((geom.p, geom.p))
    a = geom.normalize(pt)
    b = geom.neg(a)
    vals[a] = 1.0
    vals[b] = 1.0
    return vals


def product_identity_check(a, b, dense_limit=DENSE_LIMIT):
    """Frobenius residual of the product rule for orbit-indicator bases.

    For anisotropic elements at x and y,

        (1 + s_x)(1 + s_y) C(Psi_x) C(Psi_y)
            = (1 + s_{x+y}) C(Psi_{x+y}) + (1 + s_{x-y}) C(Psi_{x-y}),

    where s_z = 1 iff z = -z on the torus. When neither x nor y is
    self-symmetric the left factor is 1.
    """
    if a.kind != "anisotropic" or b.kind != "anisotropic":
        raise PreconditionError("product identity is stated for anisotropic elements")
    geom = a.field.geometry
    p = geom.p
    if p > dense_limit:
        raise DenseLimitError(f"p={p} exceeds dense limit {dense_limit}")
    x, y = a.representative, b.representative
    s = lambda z: 1.0 if geom.is_self_symmetric(z) else 0.0
    plus = geom.normalize((x[0] + y[0], x[1] + y[1]))
    minus = geom.normalize((x[0] - y[0], x[1] - y[1]))
    lhs = (1 + s(x)) * (1 + s(y)) * (dense_C(a.field, p) @ dense_C(b.field, p))
    rhs = ((1 + s(plus)) * _dense_from_values(_indicator(geom, plus), p)
           + (1 + s(minus)) * _dense_from_values(_indicator(geom, minus), p))
    return float(np.linalg.norm(lhs - rhs))


def phi_extremes(spec):
    return float(spec.lam.min()), float(spec.lam.max())


# ThetaField text format: {"p": p, "entries": [[i, j, value], ...]} with one
# representative per s-orbit; the loader fills in the mirror entries.

def theta_to_json(theta):
    entries = []
    for orb in orbits_of({(i, j) for i, j in theta.support()}, theta.geometry, "s"):
        i, j = orb.representative
        entries.append([int(i), int(j), float(theta.values[i, j])])
    return {"p": theta.p, "entries": entries}


def theta_from_json(obj):
    try:
        p = obj["p"]
        raw = obj["entries"]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"theta file needs keys 'p' and 'entries': {exc}") from None
    if not isinstance(p, int) or p < 2:
        raise SchemaError(f"'p' must be an integer >= 2, got {p!r}")
    geom = TorusGeometry(p)
    entries = {}
    for row in raw:
        if not (isinstance(row, (list, tuple)) and len(row) == 3):
            raise SchemaError(f"theta entry must be [i, j, value], got {row!r}")
        i, j, v = row
        if not isinstance(i, int) or not isinstance(j, int):
            raise SchemaError(f"theta entry indices must be integers, got {row!r}")
        key = geom.normalize((i, j))
        if key == (0, 0):
            if v != 0:
                raise PreconditionError("theta[0, 0] must be zero")
            continue
        mirror = geom.neg(key)
        for k in (key, mirror):
            if k in entries and entries[k] != float(v):
                raise SchemaError(f"duplicate entries disagree at {k}")
        entries[key] = float(v)
    return ThetaField.from_points(geom, entries)


def load_theta(path):
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except ValueError as exc:  # bad JSON or bad encoding
            raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    return theta_from_json(obj)


def save_theta(theta, path):
    with open(path, "w") as fh:
        json.dump(theta_to_json(theta), fh, indent=1)
