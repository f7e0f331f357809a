"""Stationary Gaussian Markov random fields on the torus.

The field X has precision (I - C(theta)) / sigma^2. Everything here works in
the Fourier basis, where Sigma is diagonal with entries
``D_Sigma[i, j] = sigma^2 / (1 - mu[i, j])``.
"""

import hashlib
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import special

from .circulant import SpectrumGrid, ThetaField, cosine_transform, spectrum_of_C
from .exceptions import NonSPDError, PreconditionError, SchemaError
from .rng import substream
from .torus import TorusGeometry

SAMPLE_BLOCK = 4096


@dataclass(frozen=True, eq=False)
class GmrfParams:
    theta: ThetaField
    sigma_sq: float = 1.0

    def __post_init__(self):
        if not self.sigma_sq > 0:
            raise PreconditionError(f"sigma^2 must be positive, got {self.sigma_sq}")
        if self.lam.min() <= 0:
            raise NonSPDError(f"I - C(theta) is not positive definite "
                              f"(smallest eigenvalue {self.lam.min():.3g})")

    @property
    def geometry(self):
        return self.theta.geometry

    @property
    def p(self):
        return self.theta.p

    @cached_property
    def lam(self):
        """Spectrum of I - C(theta)."""
        lam = 1.0 - cosine_transform(self.theta.values)
        lam.setflags(write=False)
        return lam

    @cached_property
    def dsig(self):
        """Spectrum of Sigma."""
        d = self.sigma_sq / self.lam
        d.setflags(write=False)
        return d

    @cached_property
    def lag_covariances(self):
        """cov(X[0, 0], X[k, l]) for every lag, as a p x p grid."""
        c = np.fft.ifft2(self.dsig).real
        c.setflags(write=False)
        return c

    @property
    def phi_max(self):
        return float(self.dsig.max())

    def digest(self):
        h = hashlib.sha256()
        h.update(struct.pack("<Id", self.p, float(self.sigma_sq)))
        h.update(np.ascontiguousarray(self.theta.values).tobytes())
        return h.hexdigest()[:16]


def four_nn_theta(geom, alpha):
    """Isotropic four-nearest-neighbour field with theta[±1, 0] = theta[0, ±1] = alpha."""
    return ThetaField.from_points(geom, {(1, 0): alpha, (0, 1): alpha})


@dataclass(frozen=True, eq=False)
class CovSpectrum:
    dsig: SpectrumGrid


def cov_spectrum(params):
    return CovSpectrum(SpectrumGrid(params.geometry, params.dsig))


def covariance_lag(params, k, l):
    return float(params.lag_covariances[k % params.p, l % params.p])


def variance_origin(params):
    """Var X[0, 0], the mean eigenvalue of Sigma."""
    return float(params.dsig.mean())


def dense_covariance(params, dense_limit=12):
    from .circulant import dense_C
    C = dense_C(params.theta, dense_limit)
    return params.sigma_sq * np.linalg.inv(np.eye(C.shape[0]) - C)


# --- sampling ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SampleBatch:
    geometry: TorusGeometry
    fields: np.ndarray = field(repr=False)      # (n, p, p)
    seed: int = 0
    params_digest: str = ""

    @property
    def n(self):
        return self.fields.shape[0]

    @property
    def p(self):
        return self.geometry.p


def _sample_block(sqrt_d, p, count, seed, block):
    rng = substream(seed, "sample", block)
    noise = rng.standard_normal((count, p, p))
    out = np.fft.ifft2(np.fft.fft2(noise) * sqrt_d)
    scale = max(1.0, float(np.abs(out.real).max()))
    if np.abs(out.imag).max() > 1e-10 * scale:
        raise AssertionError("coloured field has a non-negligible imaginary part")
    return out.real


def sample(params, n, seed, threads=None):
    """Draw ``n`` exact replicates by colouring white noise in the Fourier domain.

    White noise Z is mapped to ``ifft2(sqrt(D_Sigma) * fft2(Z))``; since
    ``D_Sigma`` is s-symmetric the output is real with covariance Sigma.
    Replicates come in fixed blocks, each with its own (seed, block) stream,
    so the batch does not depend on ``threads``.
    """
    if n < 1:
        raise PreconditionError("need at least one replicate")
    p = params.p
    sqrt_d = np.sqrt(params.dsig)
    counts = [min(SAMPLE_BLOCK, n - s) for s in range(0, n, SAMPLE_BLOCK)]
    jobs = [(sqrt_d, p, c, seed, b) for b, c in enumerate(counts)]
    if threads and threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda a: _sample_block(*a), jobs))
    else:
        parts = [_sample_block(*a) for a in jobs]
    return SampleBatch(params.geometry, np.concatenate(parts), int(seed), params.digest())


# SampleBatch binary layout: b"GMRF", u32 version, u32 p, u32 n,
# n * p * p little-endian f64 (row-major per replicate), u64 seed.
_MAGIC = b"GMRF"
_VERSION = 1


def write_batch(batch, path):
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _VERSION, batch.p, batch.n))
        fh.write(np.ascontiguousarray(batch.fields, dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", batch.seed & 0xFFFFFFFFFFFFFFFF))


def read_batch(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:4] != _MAGIC:
        raise SchemaError(f"{path}: not a GMRF sample batch")
    version, p, n = struct.unpack_from("<III", data, 4)
    if version != _VERSION:
        raise SchemaError(f"{path}: unsupported batch version {version}")
    expected = 16 + 8 * n * p * p + 8
    if len(data) != expected:
        raise SchemaError(f"{path}: size {len(data)} != expected {expected}")
    fields = np.frombuffer(data, dtype="<f8", count=n * p * p, offset=16).reshape(n, p, p)
    (seed,) = struct.unpack_from("<Q", data, expected - 8)
    return SampleBatch(TorusGeometry(p), fields.astype(float), int(seed))


# --- divergences ---------------------------------------------------------------

def _precision_pair(theta1, theta2):
    lam1 = 1.0 - cosine_transform(theta1.values)
    lam2 = 1.0 - cosine_transform(theta2.values)
    if lam1.min() <= 0 or lam2.min() <= 0:
        raise NonSPDError("both fields must have positive definite precision")
    return lam1, lam2


def kl_divergence(theta1, theta2, sigma_sq=1.0):
    """K(P_theta1, P_theta2) for zero-mean fields sharing sigma^2.

    sigma^2 cancels from the ratio of precisions; the argument is accepted for
    symmetry with the other entry points only.
    """
    lam1, lam2 = _precision_pair(theta1, theta2)
    x = lam2 / lam1
    return float(0.5 * np.sum(x - np.log(x) - 1.0))


def kl_upper_bound(theta1, theta2):
    """0.5 * 9/64 * sum (1/lam1 + 1/lam2)^2 (lam1 - lam2)^2, which dominates the KL."""
    lam1, lam2 = _precision_pair(theta1, theta2)
    terms = (1.0 / lam1 + 1.0 / lam2) ** 2 * (lam1 - lam2) ** 2
    return float(0.5 * 9.0 / 64.0 * terms.sum())


def dense_kl(theta1, theta2, dense_limit=12):
    """Gaussian KL from dense determinants and traces."""
    from .circulant import dense_C
    A1 = np.eye(theta1.p ** 2) - dense_C(theta1, dense_limit)
    A2 = np.eye(theta2.p ** 2) - dense_C(theta2, dense_limit)
    _, ld1 = np.linalg.slogdet(A1)
    _, ld2 = np.linalg.slogdet(A2)
    return 0.5 * (ld1 - ld2 + np.trace(A2 @ np.linalg.inv(A1)) - A1.shape[0])


# --- infinite-lattice limit of the four-nearest-neighbour field -----------------

def _moran_integrand(x, y, alpha):
    s = np.cos(2 * np.pi * x) + np.cos(2 * np.pi * y)
    return s / (1.0 - 2.0 * alpha * s)


def _graded_rule(panels, order):
    # Gauss-Legendre on geometrically graded panels of [0, 1/2], refined near 0
    edges = np.concatenate([[0.0], 0.5 * np.geomspace(1e-7, 1.0, panels)])
    nodes, weights = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    x = (0.5 * (b - a) * nodes + 0.5 * (a + b)).ravel()
    w = (0.5 * (b - a) * weights).ravel()
    return x, w


def moran_covariance_limit(alpha, sigma_sq=1.0, rtol=1e-7, max_panels=4096):
    """Limit of cov(X[0, 0], X[1, 0]) as p -> infinity for the 4NN field.

    Evaluates (sigma^2 / 2) * int_[0,1]^2 (cx + cy) / (1 - 2 alpha (cx + cy))
    with cx = cos(2 pi x), using the fourfold symmetry about 1/2 and tensor
    Gauss-Legendre panels graded towards the near-singular corner. The panel
    count doubles until the relative change drops below ``rtol``.
    """
    if not 0.0 <= alpha < 0.25:
        raise PreconditionError(f"need 0 <= alpha < 1/4, got {alpha}")
    if alpha == 0.0:
        return 0.0
    prev = None
    panels = 16
    while panels <= max_panels:
        x, w = _graded_rule(panels, 12)
        val = 4.0 * w @ _moran_integrand(x[:, None], x[None, :], alpha) @ w
        if prev is not None and abs(val - prev) <= rtol * abs(val):
            return 0.5 * sigma_sq * val
        prev = val
        panels *= 2
    raise ArithmeticError("Moran quadrature did not converge")


def moran_limit_elliptic(alpha, sigma_sq=1.0):
    """Closed form of the same limit via the complete elliptic integral K(4 alpha)."""
    if not 0.0 <= alpha < 0.25:
        raise PreconditionError(f"need 0 <= alpha < 1/4, got {alpha}")
    if alpha == 0.0:
        return 0.0
    w = 2.0 / np.pi * special.ellipk((4.0 * alpha) ** 2)
    return sigma_sq / (4.0 * alpha) * (w - 1.0)


# --- asymptotic variances -------------------------------------------------------

def _h_spectrum(p):
    # eigenvalues of H = C(Psi^iso_{1,0}): 2 (cos(2 pi i / p) + cos(2 pi j / p))
    c = np.cos(2 * np.pi * np.arange(p) / p)
    return 2.0 * (c[:, None] + c[None, :])


def asymptotic_variance_m1_iso(params, projection_coeff=None):
    """Limits of n p^2 E[loss] for the isotropic nearest-neighbour estimator.

    Returns ``(risk_m1, risk_to_projection)``:
    risk_m1 = 2 sigma^4 tr(H^2) / tr(H^2 Sigma) and
    risk_to_projection = 2 tr{[(I - c H) H Sigma]^2} / tr(H^2 Sigma), where c
    defaults to the population projection tr(H Sigma) / tr(H^2 Sigma).
    """
    h = _h_spectrum(params.p)
    d = params.dsig
    tr_h2s = float(np.sum(h * h * d))
    if projection_coeff is None:
        projection_coeff = float(np.sum(h * d)) / tr_h2s
    tr_h2 = float(np.sum(h * h))
    risk_m1 = 2.0 * params.sigma_sq ** 2 * tr_h2 / tr_h2s
    resid = (1.0 - projection_coeff * h) * h * d
    risk_proj = 2.0 * float(np.sum(resid ** 2)) / tr_h2s
    return risk_m1, risk_proj


def alternating_theta(p, alpha):
    """Isotropic field supported on the G-orbit of (p/4, p/4)."""
    if p % 4:
        raise PreconditionError(f"p must be divisible by 4, got {p}")
    q = p // 4
    return ThetaField.from_points(TorusGeometry(p), {(q, q): alpha, (q, -q): alpha})


@dataclass
class AlternatingReport:
    p: int
    alpha: float
    tr_h_sigma: float
    projection_coeff: float
    tr_h4_sigma2_over_p2: float
    tr_h2_sigma_over_p2: float
    ratio: float
    ratio_times_gap: float      # ratio * (1 - 4 alpha)


def alternating_field_check(alpha, p, sigma_sq=1.0):
    if not abs(alpha) < 0.25:
        raise PreconditionError(f"need |alpha| < 1/4, got {alpha}")
    params = GmrfParams(alternating_theta(p, alpha), sigma_sq)
    h = _h_spectrum(p)
    d = params.dsig
    tr_hs = float(np.sum(h * d))
    tr_h2s = float(np.sum(h ** 2 * d))
    tr_h4s2 = float(np.sum(h ** 4 * d ** 2))
    ratio = tr_h4s2 / tr_h2s
    return AlternatingReport(p, alpha, tr_hs, tr_hs / tr_h2s, tr_h4s2 / p ** 2,
                             tr_h2s / p ** 2, ratio, ratio * (1 - 4 * alpha))


# --- covariance of orbit sums and lower bounds -----------------------------------

def symmetrized_covariance(params, m, isotropic=False):
    """Covariance of the orbit sums (sum_{x in o_k} X[x])_k.

    For a pair orbit {x, -x} the regressor is X[x] + X[-x]; a self-symmetric
    point enters alone.
    """
    orbits = m.orbits(isotropic)
    cov = params.lag_covariances
    p = params.p
    V = np.empty((len(orbits), len(orbits)))
    for a, oa in enumerate(orbits):
        for b, ob in enumerate(orbits[a:], start=a):
            v = sum(cov[(x[0] - y[0]) % p, (x[1] - y[1]) % p] for x in oa.members for y in ob.members)
            V[a, b] = V[b, a] = v
    return V


def risk_lower_bounds(params, m, projection_l1=None, isotropic=False, need_h2=True):
    """Asymptotic risk lower bounds ``(bound_h1, bound_h2)``.

    bound_h1 = 2 sigma^4 d / phi_max(Sigma);
    bound_h2 = (d / (2 sigma^2)) (1 - |theta|_1) (1 - |theta_m|_1)^2, falling back
    to |theta_m|_1 <= |theta|_1 when ``projection_l1`` is not given.
    """
    d = m.dimension(isotropic)
    s2 = params.sigma_sq
    bound_h1 = 2.0 * s2 ** 2 * d / params.phi_max
    l1 = params.theta.l1
    if l1 >= 1.0:
        if need_h2:
            raise PreconditionError(f"bound_h2 needs |theta|_1 < 1, got {l1}")
        return bound_h1, float("nan")
    proj = l1 if projection_l1 is None else projection_l1
    bound_h2 = d / (2.0 * s2) * (1.0 - l1) * (1.0 - proj) ** 2
    return bound_h1, bound_h2
