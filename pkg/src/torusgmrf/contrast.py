"""Conditional least-squares contrast and l1-constrained estimators.

Every operator involved is block circulant, so the contrast reduces to a
weighted mean over frequencies:

    gamma(theta') = mean_{i,j} (1 - mu'[i, j])^2 * grid[i, j]

where ``grid`` is the periodogram (empirical) or D_Sigma (population). In the
coordinates of a model, mu' = sum_k c_k psi_k is linear in c, so gamma is a
convex quadratic ``c0 - 2 b.c + c' Q c`` minimized over the weighted l1 ball
``sum_k w_k |c_k| <= rho`` with w_k the orbit sizes.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .circulant import ThetaField, basis_element, cosine_transform
from .exceptions import PreconditionError
from .field import GmrfParams, symmetrized_covariance

KKT_TOL = 1e-8
MAX_ITER = 100_000


@dataclass(frozen=True, eq=False)
class Periodogram:
    geometry: object
    n: int
    grid: np.ndarray = field(repr=False)

    @property
    def p(self):
        return self.geometry.p


def periodogram(batch):
    if batch.n < 1:
        raise PreconditionError("empty sample batch")
    p = batch.p
    f = np.fft.fft2(batch.fields)
    grid = np.mean(f.real ** 2 + f.imag ** 2, axis=0) / p ** 2
    grid.setflags(write=False)
    return Periodogram(batch.geometry, batch.n, grid)


def population_grid(params):
    """D_Sigma wrapped as a periodogram with infinite sample size."""
    return Periodogram(params.geometry, math.inf, params.dsig)


def contrast(theta_prime, pgram):
    mu = cosine_transform(theta_prime.values)
    return float(np.mean((1.0 - mu) ** 2 * pgram.grid))


def contrast_gradient(theta_prime, pgram):
    """Partial derivatives of the contrast with respect to each entry of theta'.

    Entries are treated as free; the derivative along a symmetric direction
    delta is ``sum(grad * delta)``.
    """
    mu = cosine_transform(theta_prime.values)
    p = theta_prime.p
    return -2.0 * np.fft.fft2((1.0 - mu) * pgram.grid).real / p ** 2


def expected_contrast(theta_prime, params):
    return contrast(theta_prime, population_grid(params))


def loss(theta_hat, params):
    """sigma^2 / p^2 * tr{(C_hat - C) (I - C)^-1 (C_hat - C)}, evaluated spectrally."""
    mu_hat = cosine_transform(theta_hat.values)
    mu = 1.0 - params.lam
    return float(params.sigma_sq * np.mean((mu_hat - mu) ** 2 / params.lam))


# --- model coordinates ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModelCoordinates:
    model: object
    isotropic: bool
    basis: tuple = field(repr=False)
    weights: np.ndarray = field(repr=False)
    spectra: np.ndarray = field(repr=False)       # (d, p, p), spectrum of each basis field

    @property
    def d(self):
        return len(self.basis)

    def theta(self, coeffs):
        vals = np.tensordot(np.asarray(coeffs, dtype=float), self._fields, axes=1)
        return ThetaField(self.model.geometry, vals)

    def coords_of(self, theta):
        """Coefficients of ``theta`` (must lie in the span) on the basis."""
        return np.array([theta.values[b.representative] for b in self.basis])

    @property
    def _fields(self):
        return np.array([b.field.values for b in self.basis])

    def quadratic(self, grid):
        """(c0, b, Q) with gamma(c) = c0 - 2 b.c + c' Q c."""
        psi = self.spectra.reshape(self.d, -1)
        g = np.asarray(grid).ravel()
        npts = g.size
        b = psi @ g / npts
        Q = (psi * g) @ psi.T / npts
        return float(g.mean()), b, 0.5 * (Q + Q.T)


@lru_cache(maxsize=512)
def model_coordinates(m, isotropic=False):
    geom = m.geometry
    basis = tuple(basis_element(geom, o.representative, isotropic) for o in m.orbits(isotropic))
    weights = np.array([b.orbit_size for b in basis], dtype=float)
    if basis:
        spectra = np.array([cosine_transform(b.field.values) for b in basis])
    else:
        spectra = np.zeros((0, geom.p, geom.p))
    return ModelCoordinates(m, bool(isotropic), basis, weights, spectra)


# --- weighted l1 ball QP ------------------------------------------------------------

def weighted_l1_projection(v, w, rho):
    """Euclidean projection of ``v`` onto {x : sum w_k |x_k| <= rho}.

    The solution soft-thresholds at tau * w_k; tau comes from a scan of the
    sorted breakpoints |v_k| / w_k.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if rho < 0:
        raise PreconditionError("rho must be nonnegative")
    a = np.abs(v)
    if np.sum(w * a) <= rho:
        return v.copy()
    if rho == 0:
        return np.zeros_like(v)
    ratio = a / w
    order = np.argsort(-ratio)
    cum_wa = np.cumsum((w * a)[order])
    cum_w2 = np.cumsum((w * w)[order])
    taus = (cum_wa - rho) / cum_w2
    below = np.nonzero(taus < ratio[order])[0]
    # when rho is below rounding of the largest term no breakpoint qualifies
    k = below[-1] if below.size else 0
    tau = max(taus[k], 0.0)
    return np.sign(v) * np.maximum(a - tau * w, 0.0)


@dataclass
class QPSolution:
    coeffs: np.ndarray
    value: float
    iterations: int
    converged: bool


def solve_l1_qp(c0, b, Q, w, rho, tol=KKT_TOL, max_iter=MAX_ITER):
    """Minimize c0 - 2 b.c + c'Qc over the weighted l1 ball of radius rho.

    Tries the unconstrained minimizer first (minimum-norm when Q is singular);
    otherwise runs accelerated projected gradient from 0 with step 1/L,
    L = 2 lambda_max(Q), stopping when the gradient-mapping norm drops below
    ``tol``.
    """
    d = len(b)
    f = lambda c: c0 - 2.0 * b @ c + c @ Q @ c
    if d == 0:
        return QPSolution(np.zeros(0), c0, 0, True)
    if rho > 0:
        c_free = np.linalg.lstsq(Q, b, rcond=None)[0]
        if np.sum(w * np.abs(c_free)) <= rho:
            return QPSolution(c_free, f(c_free), 0, True)
    L = 2.0 * max(np.linalg.eigvalsh(Q)[-1], 1e-300)
    x = np.zeros(d)
    y = x.copy()
    t = 1.0
    for it in range(1, max_iter + 1):
        grad = 2.0 * (Q @ y - b)
        x_new = weighted_l1_projection(y - grad / L, w, rho)
        # gradient mapping at the new iterate measures stationarity
        g_new = 2.0 * (Q @ x_new - b)
        resid = L * np.linalg.norm(x_new - weighted_l1_projection(x_new - g_new / L, w, rho))
        if resid < tol:
            return QPSolution(x_new, f(x_new), it, True)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        if f(x_new) > f(x):
            # adaptive restart keeps the iteration monotone
            y, t_new = x_new.copy(), 1.0
        else:
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
    return QPSolution(x, f(x), max_iter, False)


@dataclass
class FitResult:
    coeffs: np.ndarray
    theta: ThetaField = field(repr=False)
    contrast_value: float
    iterations: int
    converged: bool
    active_l1: float
    model_index: int = 0
    isotropic: bool = False

    def to_json(self):
        from .circulant import theta_to_json
        return {"model_index": self.model_index, "isotropic": self.isotropic,
                "coeffs": [float(c) for c in self.coeffs],
                "contrast": self.contrast_value, "iterations": self.iterations,
                "converged": self.converged, "l1": self.active_l1,
                "theta": theta_to_json(self.theta)}


def _fit_grid(grid, m, rho, isotropic):
    if rho < 0:
        raise PreconditionError("rho must be nonnegative")
    coords = model_coordinates(m, isotropic)
    c0, b, Q = coords.quadratic(grid)
    sol = solve_l1_qp(c0, b, Q, coords.weights, rho)
    theta = coords.theta(sol.coeffs)
    return FitResult(sol.coeffs, theta, max(sol.value, 0.0), sol.iterations, sol.converged,
                     theta.l1, m.index, bool(isotropic))


def fit_model(pgram, m, rho, isotropic=False):
    if np.min(pgram.grid) < 0:
        raise PreconditionError("periodogram has negative entries")
    return _fit_grid(pgram.grid, m, rho, isotropic)


def project_population(params, m, rho, isotropic=False):
    return _fit_grid(params.dsig, m, rho, isotropic)


def conditional_coefficients(params, m, isotropic=False):
    """theta^m with E[X[0,0] | X_m] = sum_x theta^m[x] X[x].

    Solves the normal equations of X[0,0] on the orbit sums
    Z_k = sum_{x in o_k} X[x], built from lag covariances.
    """
    coords = model_coordinates(m, isotropic)
    if coords.d == 0:
        return ThetaField.zeros(m.geometry)
    Gamma = symmetrized_covariance(params, m, isotropic)
    cov = params.lag_covariances
    gamma0 = np.array([sum(cov[x] for x in o.members) for o in m.orbits(isotropic)])
    try:
        c = np.linalg.solve(Gamma, gamma0)
    except np.linalg.LinAlgError:
        raise AssertionError("orbit-sum covariance is singular for a positive definite field")
    return coords.theta(c)


# --- model selection ------------------------------------------------------------------

@dataclass(frozen=True)
class PenaltySpec:
    K: float = 3.0
    rho1: float = 2.0
    rho2: float = 1.0
    sigma_sq: float = 1.0
    n: int = 1
    p: int = 1

    def __post_init__(self):
        if not self.K > 0 or self.sigma_sq < 0 or self.rho2 < 0 or self.n < 1 or self.p < 1:
            raise PreconditionError(f"invalid penalty specification {self}")

    def penalty(self, d):
        return self.K * self.sigma_sq * self.rho1 ** 2 * self.rho2 * d / (self.n * self.p ** 2)


def default_rho2(params, rho1=2.0):
    """Smallest rho2 with phi_max(Sigma) <= rho1^2 rho2 sigma^2."""
    return params.phi_max / (rho1 ** 2 * params.sigma_sq)


@dataclass
class SelectionResult:
    rows: list              # dicts: index, d, contrast, penalty, criterion
    chosen: int
    spec: PenaltySpec
    fits: dict = field(default_factory=dict, repr=False)

    @property
    def chosen_fit(self):
        return self.fits[self.chosen]


def select_model(pgram, coll, spec, rho=None, isotropic=False, models=None, threads=None):
    """Penalized model choice: argmin_m contrast(fit_m) + pen(m), ties to the smallest d."""
    if spec.p != pgram.p or (math.isfinite(pgram.n) and spec.n != pgram.n):
        raise PreconditionError("penalty spec does not match the periodogram (n, p)")
    rho = spec.rho1 if rho is None else rho
    models = list(coll) if models is None else list(models)
    run = lambda m: fit_model(pgram, m, rho, isotropic)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fits = list(pool.map(run, models))
    else:
        fits = [run(m) for m in models]
    rows = []
    best = None
    for m, fit in zip(models, fits):
        d = m.dimension(isotropic)
        pen = spec.penalty(d)
        crit = fit.contrast_value + pen
        rows.append({"index": m.index, "d": d, "contrast": fit.contrast_value,
                     "penalty": pen, "criterion": crit})
        if best is None or crit < best[0] or (crit == best[0] and d < best[1]):
            best = (crit, d, m.index)
    return SelectionResult(rows, best[2], spec, {m.index: f for m, f in zip(models, fits)})


def bias_sequence(params, coll, isotropic=False, models=None):
    """l(theta_m, theta) = expected_contrast(theta^m) - sigma^2 along the collection."""
    models = list(coll) if models is None else list(models)
    out = []
    for m in models:
        theta_m = conditional_coefficients(params, m, isotropic)
        out.append(max(loss(theta_m, params), 0.0))
    return np.array(out)


def adaptive_rate_table(a_seq, coll, n, sigma_sq):
    """(i_star, lower, upper) for a nonincreasing sequence a over the collection.

    i_star = max{i : a_i^2 >= sigma^2 d_{m_i} / (n p^2)}, lower is
    a_{i*+1}^2 max sigma^2 d_{m_i*} / (n p^2) (with a beyond the end read as 0)
    and upper is their sum.
    """
    a = np.asarray(a_seq, dtype=float)
    dims = np.array([m.d_m for m in coll][: len(a)], dtype=float)
    if len(dims) != len(a) or len(a) == 0:
        raise PreconditionError("a_seq must have one entry per model")
    if np.any(np.diff(np.abs(a)) > 0):
        raise PreconditionError("a_seq must be nonincreasing")
    p = coll.geometry.p
    thresh = sigma_sq * dims / (n * p ** 2)
    ok = a ** 2 >= thresh * (1 - 1e-12)
    if not ok[0]:
        raise PreconditionError("need a_1^2 >= sigma^2 d_{m_1} / (n p^2)")
    i_star = int(np.nonzero(ok)[0][-1]) + 1
    nxt = a[i_star] ** 2 if i_star < len(a) else 0.0
    var = thresh[i_star - 1]
    return i_star, max(nxt, var), nxt + var
