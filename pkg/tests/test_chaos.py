import json
import math

import numpy as np
import pytest

from conftest import random_theta
from torusgmrf.chaos import (ChaosElement, ChaosFamily, chaos_sup, chaos_value,
                             chi_square_survival, family_from_json, family_to_json, functional_D,
                             load_family, matrix_chaos_family, matrix_family_D, matrix_family_E,
                             model_pair_stats, operator_E, pair_space, random_family, sample_chaos,
                             tail_bound, tail_experiment)
from torusgmrf.exceptions import PreconditionError, SchemaError
from torusgmrf.field import GmrfParams, four_nn_theta
from torusgmrf.circulant import ThetaField
from torusgmrf.torus import TorusGeometry, build_model_collection


def naive_value(T, c, y):
    N = len(y)
    total = c
    for i in range(N):
        total += T[i, i] * y[i] ** 2
        for j in range(i + 1, N):
            total += T[i, j] * y[i] * y[j]
    return total


def _unit(rng, k, N):
    a = rng.normal(size=(k, N))
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def test_value_matches_naive_loop(rng):
    for _ in range(30):
        N = int(rng.integers(1, 8))
        fam = random_family(N, 1, rng)
        t = fam.elements[0]
        y = rng.normal(size=N)
        assert chaos_value(t, y) == pytest.approx(naive_value(t.pair_coeffs, t.constant, y), rel=1e-12)
    Y = rng.normal(size=(5, 3, N))
    assert chaos_value(t, Y).shape == (5, 3)


def test_value_trivial_cases(rng):
    y = rng.normal(size=4)
    assert chaos_value(ChaosElement(np.zeros((4, 4))), y) == 0
    assert chaos_value(ChaosElement(np.zeros((4, 4)), 2.5), y) == 2.5
    fam = random_family(4, 5, rng)
    assert chaos_sup(fam, y) == max(abs(chaos_value(t, y)) for t in fam.elements)


def test_element_validation():
    with pytest.raises(PreconditionError):
        ChaosElement(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(PreconditionError):
        ChaosElement(np.ones((2, 3)))
    with pytest.raises(PreconditionError):
        ChaosElement(np.array([[np.nan]]))
    with pytest.raises(PreconditionError):
        ChaosFamily(())
    with pytest.raises(PreconditionError):
        ChaosFamily((ChaosElement(np.eye(2)), ChaosElement(np.eye(3))))
    with pytest.raises(PreconditionError):
        chaos_value(ChaosElement(np.eye(2)), np.ones(3))
    with pytest.raises(PreconditionError):
        functional_D(ChaosFamily((ChaosElement(np.eye(2)),)), np.ones(3))


def test_E_identity_and_D_identity(rng):
    fam = ChaosFamily((ChaosElement(np.eye(5)),))
    assert operator_E(fam) == pytest.approx(2.0)
    y = rng.normal(size=5)
    assert functional_D(fam, y) == pytest.approx(2 * np.linalg.norm(y))
    assert functional_D(fam, np.zeros(5)) == 0


def test_E_dominates_probes_and_is_attained(rng):
    for _ in range(10):
        N = int(rng.integers(2, 7))
        fam = random_family(N, 3, rng)
        E = operator_E(fam)
        a1, a2 = _unit(rng, 10_000, N), _unit(rng, 10_000, N)
        probes = max(np.max(np.abs(np.einsum("ki,ij,kj->k", a1, t.M, a2))) for t in fam.elements)
        assert probes <= E * (1 + 1e-12)
        # top singular vectors attain it
        best = 0.0
        for t in fam.elements:
            U, s, Vt = np.linalg.svd(t.M)
            best = max(best, abs(U[:, 0] @ t.M @ Vt[0]))
        assert abs(best - E) < 1e-8


def test_D_dominates_probes_and_is_attained(rng):
    for _ in range(10):
        N = int(rng.integers(2, 7))
        fam = random_family(N, 3, rng)
        y = rng.normal(size=N)
        D = functional_D(fam, y)
        a = _unit(rng, 10_000, N)
        probes = max(np.max(np.abs(a @ (y @ t.M))) for t in fam.elements)
        assert probes <= D * (1 + 1e-12)
        best = max(abs((y @ t.M) @ (y @ t.M)) / np.linalg.norm(y @ t.M) for t in fam.elements)
        assert abs(best - D) < 1e-8


def test_matrix_family_identities(rng):
    r, n = 3, 5
    Rs = []
    for _ in range(3):
        A = rng.normal(size=(r, r))
        Rs.append(A + A.T)
    fam = matrix_chaos_family(Rs, n)
    assert operator_E(fam) == pytest.approx(matrix_family_E(Rs, n), rel=1e-12)
    for _ in range(5):
        Y = rng.normal(size=(r, n))
        y = Y.T.ravel()             # replicate-major coordinates
        S = Y @ Y.T / n
        for R, t in zip(Rs, fam.elements):
            assert chaos_value(t, y) == pytest.approx(np.trace(R @ (S - np.eye(r))), rel=1e-10, abs=1e-12)
        assert functional_D(fam, y) == pytest.approx(matrix_family_D(Rs, Y), rel=1e-10)


def test_tail_experiment_constant_family():
    fam = ChaosFamily((ChaosElement(np.zeros((3, 3)), 1.5),))
    rep = tail_experiment(fam, 10_000, [0.0, 0.5, 1.0], seed=1)
    assert rep.e_T == 1.5 and rep.e_D == 0
    assert rep.empirical_tail[0] == 1.0 and np.all(rep.empirical_tail[1:] == 0)


def test_tail_experiment_chi_square_oracle():
    fam = ChaosFamily((ChaosElement(np.eye(1)),))
    n_mc = 200_000
    x = np.linspace(0.0, 6.0, 13)
    rep = tail_experiment(fam, n_mc, x, seed=3)
    T, _ = sample_chaos(fam, n_mc, seed=3)
    assert np.allclose(T, T)  # T = Y^2
    assert rep.e_T == pytest.approx(1.0, abs=4 * math.sqrt(2 / n_mc))
    exact = chi_square_survival(x, 1.0)
    se_exact = np.sqrt(exact * (1 - exact) / n_mc)
    # compare P(T >= 1 + x) at the exact mean
    emp = np.array([(T >= 1.0 + xi).mean() for xi in x])
    assert np.all(np.abs(emp - exact) <= 4 * se_exact + 1e-12)
    assert np.all(np.diff(rep.empirical_tail) <= 0)
    L1, L2 = rep.fitted
    assert L1 <= 64 and L2 <= 64
    assert np.all(rep.bound_curve() >= rep.empirical_tail + 2 * rep.std_err - 1e-15)


def test_tail_experiment_deterministic_and_validated(rng):
    fam = random_family(4, 3, np.random.default_rng(7))
    a = tail_experiment(fam, 10_000, [0.0, 1.0, 2.0], seed=11)
    b = tail_experiment(fam, 10_000, [0.0, 1.0, 2.0], seed=11)
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())
    c = tail_experiment(fam, 10_000, [0.0, 1.0, 2.0], seed=12)
    assert c.e_T != a.e_T
    with pytest.raises(PreconditionError):
        tail_experiment(fam, 9_999, [0.0], seed=1)
    with pytest.raises(PreconditionError):
        sample_chaos(fam, 10, seed=1, mode="poisson")


def test_gaussian_bound_dominates_random_families():
    for k in range(3):
        fam = random_family(5, 4, np.random.default_rng(100 + k))
        rep = tail_experiment(fam, 20_000, np.linspace(0, 20, 11), seed=k)
        assert rep.fitted is not None
        assert rep.fitted[0] <= 64 and rep.fitted[1] <= 64


def test_tail_bound_shape():
    x = np.array([0.0, 1.0, 10.0, 100.0])
    b = tail_bound(x, 1.0, 1.0, 1.0, 1.0)
    assert b[0] == 1.0 and np.all(np.diff(b) < 0)
    assert b[1] == pytest.approx(math.exp(-1.0))
    assert b[3] == pytest.approx(math.exp(-100.0))
    assert np.all(tail_bound(x, 0.0, 0.0, 1.0, 1.0)[1:] == 0)


def test_rademacher_clt_trend():
    # T = |Y^2 - 1|; single signs give T = 0, Gaussian limit E|chi2_1 - 1|
    fam = ChaosFamily((ChaosElement(np.eye(1), -1.0),))
    n_mc = 200_000
    Tg, _ = sample_chaos(fam, n_mc, seed=5)
    target = Tg.mean()
    gaps, ses = [], []
    for b in (1, 4, 16, 64):
        T, _ = sample_chaos(fam, n_mc, seed=5, mode="rademacher", block_size=b)
        gaps.append(abs(T.mean() - target))
        ses.append(math.sqrt(T.var() / n_mc + Tg.var() / n_mc))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[3] <= gaps[2] + 3 * ses[3]
    assert gaps[3] < 4 * ses[3] + 0.02


def test_pair_stats_identity_covariance():
    g = TorusGeometry(4)
    P = GmrfParams(ThetaField.zeros(g))
    coll = build_model_collection(g)
    for m, mp in ((coll[0], coll[0]), (coll[0], coll[1])):
        st = model_pair_stats(P, m, mp, n=10, n_mc=4000, seed=2)
        assert st.e_Z2_exact == pytest.approx(2 * st.d / (10 * 16), rel=1e-12)
        assert abs(st.e_Z2 - st.e_Z2_exact) <= 4 * st.e_Z2_se
        assert st.z2_identity_gap < 1e-12
        assert all(st.checks().values())


def test_pair_stats_random_covariance(rng):
    g = TorusGeometry(5)
    coll = build_model_collection(g)
    for _ in range(3):
        P = GmrfParams(random_theta(5, rng, l1=0.7), float(rng.uniform(0.5, 2)))
        st = model_pair_stats(P, coll[0], coll[2], n=20, n_mc=3000, seed=int(rng.integers(100)))
        assert abs(st.e_Z2 - st.e_Z2_exact) <= 4 * st.e_Z2_se
        assert st.e_Z2_exact <= st.e_Z2_bound * (1 + 1e-12)
        assert all(st.checks().values())
        F = pair_space(P, coll[0], coll[2])
        assert np.allclose(F.T @ F, np.eye(F.shape[1]), atol=1e-10)
        # direct B: (2/n) max_j ||F_j|| sqrt(D_j) / p against the sup over unit R in the span
        D = P.dsig.ravel()
        direct = 2 / (20 * 5) * np.max(np.linalg.norm(F, axis=1) * np.sqrt(D))
        assert st.B == pytest.approx(direct, rel=1e-12) and st.B <= st.B_bound * (1 + 1e-12)


def test_pair_space_rank():
    g = TorusGeometry(4)
    P = GmrfParams(four_nn_theta(g, 0.2))
    m1 = build_model_collection(g)[0]
    F = pair_space(P, m1, m1)
    # spectra {cos x, cos y} and their products span 5 directions before rank loss
    assert 1 <= F.shape[1] <= 5
    assert np.allclose(F.T @ F, np.eye(F.shape[1]), atol=1e-10)


def test_family_json_roundtrip(tmp_path, rng):
    fam = random_family(3, 2, rng)
    path = tmp_path / "f.json"
    path.write_text(json.dumps(family_to_json(fam)))
    back = load_family(path)
    for a, b in zip(fam.elements, back.elements):
        assert np.array_equal(a.pair_coeffs, b.pair_coeffs) and a.constant == b.constant
    with pytest.raises(SchemaError):
        family_from_json({"N": 4, "elements": family_to_json(fam)["elements"]})
    with pytest.raises(SchemaError):
        family_from_json({"elements": []})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(SchemaError):
        load_family(bad)
