"""Hypercubes of fields, Varshamov-Gilbert codes and Fano-type lower bounds.

A cube around a center theta' in model m has vertices
theta' + r * sum_k phi_k Psi_k for phi in {0, 1}^d, where Psi_k runs over the
orbit indicators of m (s-orbits, or G-orbits in the isotropic case). Two
vertices differing in the orbits where phi != psi satisfy
||C(theta_phi) - C(theta_psi)||_F^2 = p^2 r^2 sum_{k: phi_k != psi_k} |o_k|.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .circulant import ThetaField, cosine_transform
from .exceptions import PreconditionError
from .rng import substream

KAPPA_DEFAULT = 0.5
VG_EXHAUSTIVE_MAX_D = 24


@dataclass(frozen=True, eq=False)
class Hypercube:
    model: object
    center: ThetaField = field(repr=False)
    radius: float
    isotropic: bool = False

    def __post_init__(self):
        if self.radius < 0:
            raise PreconditionError("cube radius must be nonnegative")
        if self.center.p != self.model.p:
            raise PreconditionError("center and model live on different tori")

    @property
    def dimension(self):
        return self.model.dimension(self.isotropic)

    @property
    def p(self):
        return self.model.p

    @property
    def orbit_budget(self):
        """Largest orbit size: 2 for s-orbits, 8 for G-orbits."""
        return 8 if self.isotropic else 2

    @property
    def margin(self):
        """1 - |theta'|_1 - (orbit budget) r d, a floor on the spectrum of I - C."""
        return 1.0 - self.center.l1 - self.orbit_budget * self.radius * self.dimension

    def _coords(self):
        from .contrast import model_coordinates
        return model_coordinates(self.model, self.isotropic)

    def vertex(self, phi):
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.dimension,) or np.any((phi != 0) & (phi != 1)):
            raise PreconditionError("vertex label must be a 0/1 vector of length d")
        return self.center + self._coords().theta(self.radius * phi)

    def vertex_spectra(self, labels):
        """Spectra mu of C(theta_phi) for a batch of labels, shape (k, p, p)."""
        coords = self._coords()
        mu0 = cosine_transform(self.center.values)
        labels = np.asarray(labels, dtype=float)
        return mu0 + self.radius * np.tensordot(labels, coords.spectra, axes=1)

    def frobenius_sq(self, phi, psi):
        """||C(theta_phi) - C(theta_psi)||_F^2 from the orbit sizes."""
        w = self._coords().weights
        diff = np.asarray(phi) != np.asarray(psi)
        return self.p ** 2 * self.radius ** 2 * float(np.sum(w[diff]))


def all_labels(d):
    return np.array(list(itertools.product((0, 1), repeat=d)), dtype=float)


def kl_bound_hypercube(cube, n):
    """Upper bound on n K(P_phi, P_psi) over all vertex pairs of the cube."""
    delta = cube.margin
    if delta <= 0:
        raise PreconditionError(f"cube leaves the admissible set: 1 - |theta'|_1 - "
                                f"{cube.orbit_budget} r d = {delta:.3g} <= 0")
    d, r, p = cube.dimension, cube.radius, cube.p
    if cube.isotropic:
        return 9.0 * d * r ** 2 * p ** 2 * n / (2.0 * delta ** 2)
    return 9.0 * d * r ** 2 * p ** 2 * n / (8.0 * delta ** 2)


def cube_max_kl(cube, n=1, max_exhaustive_d=10, samples=20000, seed=0):
    """n times the largest vertex-pair KL; exhaustive for small d, sampled above."""
    d = cube.dimension
    if d <= max_exhaustive_d:
        lam = 1.0 - cube.vertex_spectra(all_labels(d)).reshape(2 ** d, -1)
        if lam.min() <= 0:
            raise PreconditionError("a vertex lies outside the positive definite set")
        best = 0.0
        for a in range(len(lam)):
            x = lam / lam[a]
            best = max(best, float(np.max(0.5 * np.sum(x - np.log(x) - 1.0, axis=1))))
        return n * best
    rng = substream(seed, "cube-kl")
    A = rng.integers(0, 2, size=(samples, d))
    B = rng.integers(0, 2, size=(samples, d))
    la = 1.0 - cube.vertex_spectra(A).reshape(samples, -1)
    lb = 1.0 - cube.vertex_spectra(B).reshape(samples, -1)
    x = lb / la
    return n * float(np.max(0.5 * np.sum(x - np.log(x) - 1.0, axis=1)))


def vertices_admissible(cube):
    """True when every vertex has a positive definite precision (checked via spectra)."""
    d = cube.dimension
    if d <= 16:
        return bool((1.0 - cube.vertex_spectra(all_labels(d))).min() > 0)
    # the spectrum is affine in phi, so its minimum over the cube is attained
    # by switching on exactly the orbits with negative spectral weight
    coords = cube._coords()
    mu0 = cosine_transform(cube.center.values)
    worst = mu0 + cube.radius * np.sum(np.maximum(coords.spectra, 0.0), axis=0)
    return bool((1.0 - worst).min() > 0)


# --- Fano radius and lower bound ------------------------------------------------------

def fano_radius(theta_center, m, n, kappa=KAPPA_DEFAULT, isotropic=False):
    """Radius at which the n-sample KL budget kappa d / 8 is met.

    r^2 = kappa (1 - |theta'|_1)^2 / (18 p^2 n); the isotropic cube uses 72.
    """
    l1 = theta_center.l1
    if not l1 < 1:
        raise PreconditionError(f"need |theta'|_1 < 1, got {l1}")
    if not 0 < kappa < 1:
        raise PreconditionError(f"need 0 < kappa < 1, got {kappa}")
    if n < 1:
        raise PreconditionError("need n >= 1")
    c = 72.0 if isotropic else 18.0
    return math.sqrt(kappa * (1.0 - l1) ** 2 / (c * m.p ** 2 * n))


@dataclass
class LowerBound:
    value: float
    branch: str              # "radius" when r < r_fano, else "fano"
    r_fano: float
    r_used: float
    d: int
    simplified: float        # sigma^2 d (r^2 min (1 - |theta'|_1)^2 / (n p^2))

    def to_json(self):
        return dict(self.__dict__)


def minimax_lower_bound(m, theta_center, r, n, sigma_sq=1.0, kappa=KAPPA_DEFAULT, isotropic=False):
    """sigma^2 d (r min r_fano)^2 (1 - kappa) / 8 over the cube C_m(theta', r)."""
    d = m.dimension(isotropic)
    if d > math.sqrt(n) * m.p:
        raise PreconditionError(f"model dimension {d} exceeds sqrt(n) p = {math.sqrt(n) * m.p:.4g}")
    if r < 0:
        raise PreconditionError("radius must be nonnegative")
    r_f = fano_radius(theta_center, m, n, kappa, isotropic)
    r_used, branch = (r, "radius") if r < r_f else (r_f, "fano")
    value = sigma_sq * d * r_used ** 2 * (1.0 - kappa) / 8.0
    simplified = sigma_sq * d * min(r ** 2, (1.0 - theta_center.l1) ** 2 / (n * m.p ** 2))
    return LowerBound(value, branch, r_f, r_used, d, simplified)


def hamming_to_loss_factor(sigma_sq, r):
    """Loss per unit Hamming distance between cube vertices: sigma^2 r^2 / 2."""
    return sigma_sq * r ** 2 / 2.0


# --- Birge bound --------------------------------------------------------------------------

def birge_bound(delta, T_size, kappa, power=1):
    """2^-power delta^power (1 - kappa), valid once max KL <= kappa log |T|."""
    if delta < 0 or not 0 <= kappa < 1 or T_size < 2 or power <= 0:
        raise PreconditionError("need delta >= 0, 0 <= kappa < 1, |T| >= 2 and power > 0")
    return 2.0 ** (-power) * delta ** power * (1.0 - kappa)


def birge_condition(thetas, n, kappa):
    """True when n K(P_a, P_b) <= kappa log |T| for every pair in ``thetas``."""
    from .field import kl_divergence
    limit = kappa * math.log(len(thetas))
    for a, b in itertools.permutations(thetas, 2):
        if n * kl_divergence(a, b) > limit:
            return False
    return True


# --- Varshamov-Gilbert codes ----------------------------------------------------------------

@dataclass(frozen=True)
class VGCode:
    d: int
    words: tuple          # each word is an int bitmask of length d

    @property
    def size(self):
        return len(self.words)

    def as_array(self):
        return np.array([[(w >> k) & 1 for k in range(self.d)] for w in self.words], dtype=np.int8)

    def min_distance(self):
        if len(self.words) < 2:
            return math.inf
        w = np.array(self.words, dtype=np.uint64)
        return int(min(np.bitwise_count(w[i] ^ w[i + 1:]).min() for i in range(len(w) - 1)))

    def verify(self):
        """Exhaustive check of both code invariants."""
        return self.min_distance() > self.d / 4 and math.log(self.size) >= self.d / 8


def vg_target_size(d):
    return math.ceil(math.exp(d / 8))


def _greedy(candidates, d, target, words):
    thresh = d / 4
    arr = np.array(words, dtype=np.uint64)
    for c in candidates:
        c = np.uint64(c)
        if arr.size == 0 or np.bitwise_count(arr ^ c).min() > thresh:
            arr = np.append(arr, c)
            if arr.size >= target:
                break
    return [int(x) for x in arr]


def build_vg_code(d, seed=0):
    """Binary code with pairwise Hamming distance > d/4 and at least e^{d/8} words.

    Randomized greedy with a budget of 64 * 2^{d/8} candidates, then a
    lexicographic greedy sweep over all of {0, 1}^d for moderate d.
    """
    if d < 1:
        raise PreconditionError("code length must be positive")
    if d > 63:
        raise PreconditionError("codes are stored as 64-bit masks; need d <= 63")
    target = max(vg_target_size(d), 2)
    rng = substream(seed, "vg-code", d)
    budget = int(64 * 2 ** (d / 8))
    cands = rng.integers(0, 2 ** d, size=budget, dtype=np.uint64) if d < 63 else \
        rng.integers(0, 2 ** 63, size=budget, dtype=np.uint64)
    words = _greedy(cands, d, target, [])
    if len(words) < target and d <= VG_EXHAUSTIVE_MAX_D:
        words = _greedy(range(2 ** d), d, target, words)
    code = VGCode(d, tuple(words))
    if not code.verify():
        raise ArithmeticError(f"Varshamov-Gilbert construction failed for d={d}")
    return code
