"""Suprema of order-2 Gaussian and Rademacher chaos.

A chaos element t carries pair coefficients t_{ij} (i != j), singleton
coefficients t_i and a constant t_0. Stored as a symmetric matrix T with
T[i, i] = t_i, its value at y is

    sum_{i<j} t_ij y_i y_j + sum_i t_i y_i^2 + t_0 = y' M y / 2 + t_0,

with M = T + diag(diag T), i.e. M[i, j] = (1 + delta_ij) t_ij. Both deviation
functionals then have closed forms: E = max ||M||_2 and D = max ||M y||.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .exceptions import PreconditionError, SchemaError
from .rng import substream

MC_BLOCK = 8192
L_GRID = 2.0 ** np.arange(-4, 10.25, 0.25)
CENSOR_EVENTS = 50


@dataclass(frozen=True, eq=False)
class ChaosElement:
    pair_coeffs: np.ndarray = field(repr=False)
    constant: float = 0.0

    def __post_init__(self):
        T = np.array(self.pair_coeffs, dtype=float)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise PreconditionError(f"pair coefficients must be square, got {T.shape}")
        if not np.all(np.isfinite(T)) or not math.isfinite(self.constant):
            raise PreconditionError("chaos coefficients must be finite")
        if np.max(np.abs(T - T.T), initial=0.0) > 1e-12 * max(1.0, np.abs(T).max(initial=0.0)):
            raise PreconditionError("pair coefficients must be symmetric")
        T = 0.5 * (T + T.T)
        T.setflags(write=False)
        object.__setattr__(self, "pair_coeffs", T)
        object.__setattr__(self, "constant", float(self.constant))

    @property
    def N(self):
        return self.pair_coeffs.shape[0]

    @property
    def M(self):
        T = self.pair_coeffs
        return T + np.diag(np.diag(T))


@dataclass(frozen=True, eq=False)
class ChaosFamily:
    elements: tuple

    def __post_init__(self):
        els = tuple(self.elements)
        if not els:
            raise PreconditionError("chaos family must be nonempty")
        if len({e.N for e in els}) != 1:
            raise PreconditionError("all elements of a family must share N")
        object.__setattr__(self, "elements", els)

    @property
    def N(self):
        return self.elements[0].N


def _check_dim(t, y):
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != t.N:
        raise PreconditionError(f"vector of length {y.shape[-1]} for chaos of dimension {t.N}")
    return y


def chaos_value(t, y):
    """Value of the chaos element at ``y`` (vectorized over leading axes)."""
    y = _check_dim(t, y)
    return 0.5 * np.einsum("...i,ij,...j->...", y, t.M, y) + t.constant


def chaos_sup(family, y):
    """T(y) = max over the family of |value|."""
    return np.max(np.abs([chaos_value(t, y) for t in family.elements]), axis=0)


def operator_E(family):
    """sup over the family and unit alpha1, alpha2 of sum_ij alpha1_i alpha2_j (1 + d_ij) t_ij."""
    return max(float(np.linalg.norm(t.M, 2)) for t in family.elements)


def functional_D(family, y):
    """sup over the family and unit alpha of sum_ij y_i (1 + d_ij) alpha_j t_ij."""
    y = _check_dim(family.elements[0], y)
    return np.max([np.linalg.norm(y @ t.M, axis=-1) for t in family.elements], axis=0)


# --- matrix families: chaos of a sample covariance ------------------------------------

def matrix_chaos_family(Rs, n):
    """Chaos family {t^R} with value tr[R (YY*/n - I)] for Y an r x n Gaussian matrix.

    Coordinates are ordered replicate-major: index k * r + i holds Y[i, k].
    t_{(i,k),(j,l)} = delta_kl (2 - delta_ij) R[i, j] / n, t_{(i,k)} = R[i, i] / n
    and t_0 = -tr R.
    """
    out = []
    for R in Rs:
        R = np.asarray(R, dtype=float)
        T = np.kron(np.eye(n), R) / n
        T = T + (T - np.diag(np.diag(T)))       # off-diagonal pairs carry the factor 2
        out.append(ChaosElement(T, -float(np.trace(R))))
    return ChaosFamily(tuple(out))


def matrix_family_E(Rs, n):
    return 2.0 / n * max(float(np.linalg.norm(np.asarray(R, dtype=float), 2)) for R in Rs)


def matrix_family_D(Rs, Y):
    """D for the matrix family at an r x n sample, via (4/n) tr(R YY*/n R)."""
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[1]
    S = Y @ Y.T / n
    return max(math.sqrt(max(4.0 / n * np.trace(R @ S @ R.T), 0.0)) for R in map(np.asarray, Rs))


def random_family(N, size, rng, scale=1.0):
    els = []
    for _ in range(size):
        A = rng.normal(scale=scale, size=(N, N))
        els.append(ChaosElement(0.5 * (A + A.T), float(rng.normal(scale=scale))))
    return ChaosFamily(tuple(els))


# --- tail experiment -------------------------------------------------------------------

@dataclass
class TailReport:
    e_T: float
    e_D: float
    E_const: float
    x_grid: np.ndarray
    empirical_tail: np.ndarray
    std_err: np.ndarray
    censored: np.ndarray
    fitted: tuple            # (L1, L2) or None
    n_mc: int
    seed: int
    mode: str
    prefactor: float = 1.0
    block_size: int = 1

    def bound_curve(self, L1=None, L2=None):
        if L1 is None:
            if self.fitted is None:
                return np.full_like(self.x_grid, np.nan)
            L1, L2 = self.fitted
        return tail_bound(self.x_grid, self.e_D, self.E_const, L1, L2, self.prefactor)

    def to_json(self):
        return {"mode": self.mode, "block_size": self.block_size, "n_mc": self.n_mc,
                "seed": self.seed, "e_T": self.e_T, "e_D": self.e_D, "E": self.E_const,
                "fitted_L1": None if self.fitted is None else self.fitted[0],
                "fitted_L2": None if self.fitted is None else self.fitted[1],
                "prefactor": self.prefactor,
                "x": self.x_grid.tolist(), "empirical_tail": self.empirical_tail.tolist(),
                "std_err": self.std_err.tolist(), "censored": self.censored.tolist(),
                "bound": self.bound_curve().tolist()}


def tail_bound(x, e_D, E, L1, L2, prefactor=1.0):
    """prefactor * exp(-(x^2 / (E[D]^2 L1) min x / (E L2)))."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(e_D > 0, x ** 2 / (e_D ** 2 * L1), np.inf)
        b = np.where(E > 0, x / (E * L2), np.inf)
    return np.minimum(prefactor * np.exp(-np.minimum(a, b)), 1.0)


def _draw(rng, count, N, mode, block_size):
    if mode == "gaussian":
        return rng.standard_normal((count, N))
    # sum of block_size independent sign vectors, scaled to unit variance
    signs = 2.0 * rng.binomial(block_size, 0.5, size=(count, N)) - block_size
    return signs / math.sqrt(block_size)


def sample_chaos(family, n_mc, seed, mode="gaussian", block_size=1):
    """Monte Carlo draws of (T, D), deterministic given ``seed``."""
    if mode not in ("gaussian", "rademacher"):
        raise PreconditionError(f"unknown mode {mode!r}")
    if block_size < 1:
        raise PreconditionError("block size must be positive")
    T = np.empty(n_mc)
    D = np.empty(n_mc)
    for b, start in enumerate(range(0, n_mc, MC_BLOCK)):
        count = min(MC_BLOCK, n_mc - start)
        rng = substream(seed, f"chaos-{mode}", b)
        Y = _draw(rng, count, family.N, mode, block_size)
        T[start:start + count] = chaos_sup(family, Y)
        D[start:start + count] = functional_D(family, Y)
    return T, D


def fit_tail_constants(x, tail, se, e_D, E, prefactor=1.0, grid=L_GRID):
    """Feasible (L1, L2) on the grid minimizing log L1 + log L2, or None.

    Feasible means the bound dominates tail + 2 se at every x.
    """
    target = tail + 2.0 * se
    best = None
    for L1 in grid:
        for L2 in grid:
            if np.all(tail_bound(x, e_D, E, L1, L2, prefactor) >= target):
                key = math.log(L1) + math.log(L2)
                if best is None or key < best[0] - 1e-12:
                    best = (key, float(L1), float(L2))
                break       # larger L2 only loosens the bound
    return None if best is None else (best[1], best[2])


def tail_experiment(family, n_mc, x_grid, seed, mode="gaussian", block_size=1):
    if n_mc < 10_000:
        raise PreconditionError("tail experiment needs n_mc >= 10^4")
    T, D = sample_chaos(family, n_mc, seed, mode, block_size)
    e_T, e_D = float(T.mean()), float(D.mean())
    E = operator_E(family)
    x = np.asarray(x_grid, dtype=float)
    counts = np.array([(T >= e_T + xi).sum() for xi in x])
    tail = counts / n_mc
    se = np.sqrt(tail * (1 - tail) / n_mc)
    prefactor = 1.0 if mode == "gaussian" else 4.0
    fitted = fit_tail_constants(x, tail, se, e_D, E, prefactor)
    return TailReport(e_T, e_D, E, x, tail, se, counts < CENSOR_EVENTS, fitted, n_mc, int(seed),
                      mode, prefactor, block_size)


def chi_square_survival(x, e_T=1.0):
    """P(Y^2 >= e_T + x) for a standard normal Y."""
    return stats.chi2.sf(e_T + np.asarray(x, dtype=float), df=1)


# --- model-pair statistics -------------------------------------------------------------

def _orthonormal_columns(A, tol=1e-10):
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return U[:, :0]
    return U[:, s > tol * s[0]]


def pair_space(params, m, m_prime):
    """Orthonormal basis F (p^2 x d) of the diagonals spanning U' for a model pair.

    U is spanned by the spectra of the orbit indicators over m and m' and their
    pairwise products; U' rescales it by sqrt(D_Sigma) / p.
    """
    from .contrast import model_coordinates
    psi = []
    for mm in (m, m_prime):
        psi.extend(model_coordinates(mm, False).spectra.reshape(mm.d_m, -1))
    psi = np.unique(np.round(np.array(psi), 12), axis=0)
    prods = [psi[a] * psi[b] for a in range(len(psi)) for b in range(a, len(psi))]
    A = np.vstack([psi, np.array(prods)]).T
    scale = np.sqrt(params.dsig.ravel()) / params.p
    return _orthonormal_columns(A * scale[:, None])


@dataclass
class PairStats:
    d: int
    n: int
    n_mc: int
    e_Z: float
    e_Z2: float
    e_Z2_se: float
    e_Z2_exact: float
    e_Z2_bound: float
    e_W: float
    e_W_se: float
    e_W_bound: float
    B: float
    B_bound: float
    frob_products: float         # sum_ij ||F_i F_j||^2, at most d
    z2_identity_gap: float       # max |Z^2 by projection - Z^2 by coefficients|

    def checks(self):
        return {
            "EZ2": self.e_Z2 <= self.e_Z2_bound + 2 * self.e_Z2_se,
            "EW": self.e_W <= self.e_W_bound + 2 * self.e_W_se,
            "B": self.B <= self.B_bound * (1 + 1e-12),
            "jensen": self.e_Z <= math.sqrt(self.e_Z2) * (1 + 1e-12),
            "products": self.frob_products <= self.d * (1 + 1e-12),
        }


def model_pair_stats(params, m, m_prime, n, n_mc, seed):
    """Monte Carlo of Z, W and the exact B for the projected sample covariance.

    Only diagonal entries v_j of YY*/n enter, and those are independent
    chi^2_n / n, so they are drawn directly.
    """
    F = pair_space(params, m, m_prime)
    p2 = params.p ** 2
    D = params.dsig.ravel()
    phi = params.phi_max
    d = F.shape[1]
    Z = np.empty(n_mc)
    Z2c = np.empty(n_mc)
    W = np.empty(n_mc)
    gap = 0.0
    for b, start in enumerate(range(0, n_mc, MC_BLOCK)):
        count = min(MC_BLOCK, n_mc - start)
        rng = substream(seed, "pair-stats", b)
        v = rng.chisquare(n, size=(count, p2)) / n
        w = np.sqrt(D) / params.p * (v - 1.0)
        coef = w @ F
        proj = coef @ F.T
        z = np.linalg.norm(proj, axis=1)
        Z[start:start + count] = z
        Z2c[start:start + count] = np.sum(coef ** 2, axis=1)
        gap = max(gap, float(np.max(np.abs(z ** 2 - Z2c[start:start + count]))))
        for r in range(count):
            G = (F * (D * v[r])[:, None]).T @ F
            W[start + r] = 4.0 / (n * p2) * np.linalg.eigvalsh(G)[-1]
    row = np.linalg.norm(F, axis=1)
    B = 2.0 / (n * params.p) * float(np.max(row * np.sqrt(D)))
    frob = float(np.sum(np.sum(F ** 2, axis=1) ** 2))
    return PairStats(
        d=d, n=n, n_mc=n_mc,
        e_Z=float(Z.mean()),
        e_Z2=float(Z2c.mean()), e_Z2_se=float(Z2c.std(ddof=1) / math.sqrt(n_mc)),
        e_Z2_exact=2.0 / (n * p2) * float(np.sum(F ** 2 * D[:, None])),
        e_Z2_bound=2.0 * d * phi / (n * p2),
        e_W=float(W.mean()), e_W_se=float(W.std(ddof=1) / math.sqrt(n_mc)),
        e_W_bound=4.0 * phi / (n * p2) * (1.0 + math.sqrt(2.0 * d / n)),
        B=B, B_bound=2.0 * math.sqrt(phi) / (n * params.p),
        frob_products=frob, z2_identity_gap=gap)


# --- family JSON: {"N": N, "elements": [{"pairs": [[...], ...], "constant": c}, ...]} ----

def family_to_json(family):
    return {"N": family.N, "elements": [{"pairs": e.pair_coeffs.tolist(), "constant": e.constant}
                                        for e in family.elements]}


def family_from_json(obj):
    try:
        N = obj["N"]
        raw = obj["elements"]
        els = [ChaosElement(np.array(e["pairs"], dtype=float), float(e.get("constant", 0.0)))
               for e in raw]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"invalid chaos family: {exc}") from None
    fam = ChaosFamily(tuple(els))
    if fam.N != N:
        raise SchemaError(f"declared N={N} but elements have dimension {fam.N}")
    return fam


def load_family(path):
    with open(path) as fh:
        try:
            return family_from_json(json.load(fh))
        except ValueError as exc:  # bad JSON or bad encoding
            raise SchemaError(f"{path}: invalid JSON ({exc})") from None
