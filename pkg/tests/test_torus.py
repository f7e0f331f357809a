import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, strategies as st

from torusgmrf.exceptions import PreconditionError
from torusgmrf.torus import (TorusGeometry, build_model_collection, count_orbits, dim_dm2_upper,
                             dims_table, dm2_analytic_bound, orbit_decomposition, orbits_of,
                             sum_set, toroidal_distance, verify_dm2_ratio, verify_growth)


def brute_orbit_count(points, p, group):
    """Union-find free recount: repeatedly peel off the full orbit of the smallest point."""
    def images(i, j):
        if group == "s":
            base = [(i, j), (-i, -j)]
        else:
            base = [(a * x, b * y) if not swap else (b * y, a * x)
                    for x, y in [(i, j)] for a in (1, -1) for b in (1, -1) for swap in (0, 1)]
        return {(u % p, v % p) for u, v in base}
    left = set(points)
    count = 0
    while left:
        x = min(left)
        left -= images(*x)
        count += 1
    return count


@pytest.mark.parametrize("a,b,p,expected", [((0, 0), (0, 1), 8, 1.0), ((0, 0), (7, 0), 8, 1.0),
                                            ((0, 0), (3, 4), 16, 5.0)])
def test_toroidal_distance_examples(a, b, p, expected):
    assert toroidal_distance(a, b, TorusGeometry(p)) == expected


@given(st.integers(2, 30), st.integers(-50, 50), st.integers(-50, 50), st.integers(-50, 50),
       st.integers(-50, 50))
def test_distance_symmetric_and_zero_iff_equal(p, a, b, c, d):
    g = TorusGeometry(p)
    x, y = g.normalize((a, b)), g.normalize((c, d))
    assert toroidal_distance(x, y, g) == toroidal_distance(y, x, g)
    assert (toroidal_distance(x, y, g) == 0) == (x == y)


def test_geometry_rejects_small_p():
    with pytest.raises(PreconditionError):
        TorusGeometry(1)
    with pytest.raises(PreconditionError):
        build_model_collection(TorusGeometry(2))


def test_first_models():
    c5 = build_model_collection(TorusGeometry(5))
    assert c5[0].points == {(0, 1), (0, 4), (1, 0), (4, 0)} and c5[0].radius == 1
    c9 = build_model_collection(TorusGeometry(9))
    assert c9[1].points - c9[0].points == {(1, 1), (1, 8), (8, 1), (8, 8)}
    assert math.isclose(c9[1].radius, math.sqrt(2))


@pytest.mark.parametrize("p", [3, 4, 5, 8, 9, 12])
def test_collection_matches_enumeration_oracle(p):
    g = TorusGeometry(p)
    coll = build_model_collection(g)
    pts = [(i, j) for i in range(p) for j in range(p) if (i, j) != (0, 0)]
    d2 = {x: min(x[0], p - x[0]) ** 2 + min(x[1], p - x[1]) ** 2 for x in pts}
    radii = sorted(set(d2.values()))
    assert [m.radius_sq for m in coll] == radii
    for k, m in enumerate(coll):
        assert m.index == k + 1
        assert m.points == {x for x in pts if d2[x] <= radii[k]}
        assert all(g.neg(x) in m.points for x in m.points)
        if k:
            assert coll[k - 1].points < m.points
    assert coll[-1].points == set(pts)


@pytest.mark.parametrize("p", [4, 5, 6, 9, 10])
def test_orbit_counts_agree_with_brute_force(p):
    coll = build_model_collection(TorusGeometry(p))
    for m in coll:
        assert m.d_m == len(m.orbits_s) == brute_orbit_count(m.points, p, "s")
        assert m.d_m_iso == brute_orbit_count(m.points, p, "G")
        assert m.d_m >= m.d_m_iso
        for o in m.orbits_s:
            assert o.size == (1 if m.geometry.is_self_symmetric(o.representative) else 2)
        # each G-orbit is a union of s-orbits
        s_sets = [set(o.members) for o in m.orbits_s]
        for o in m.orbits_G:
            members = set(o.members)
            assert members == set().union(*[s for s in s_sets if s <= members])


def test_orbit_examples_p9():
    m1 = build_model_collection(TorusGeometry(9))[0]
    assert len(orbit_decomposition(m1, "s")) == 2
    assert len(orbit_decomposition(m1, "G")) == 1
    with pytest.raises(ValueError):
        orbit_decomposition(m1, "x")


@pytest.mark.parametrize("p", [5, 7, 9])
def test_full_torus_orbit_count_odd(p):
    assert build_model_collection(TorusGeometry(p))[-1].d_m == (p * p + 1) // 2 - 1


def test_orbits_of_requires_closed_set():
    with pytest.raises(PreconditionError):
        orbits_of({(1, 0)}, TorusGeometry(5), "s")


def test_sum_set_p9_m1():
    g = TorusGeometry(9)
    m1 = build_model_collection(g)[0]
    expected = {(0, 0), (0, 1), (0, 8), (1, 0), (8, 0), (0, 2), (0, 7), (2, 0), (7, 0),
                (1, 1), (1, 8), (8, 1), (8, 8)}
    brute = {g.normalize((a[0] + b[0], a[1] + b[1]))
             for a in m1.points | {(0, 0)} for b in m1.points | {(0, 0)}}
    assert sum_set(m1) == expected == brute
    assert dim_dm2_upper(m1) == 7
    assert dim_dm2_upper(m1) <= build_model_collection(g)[-1].d_m + 1


@pytest.mark.parametrize("p", [4, 6, 7])
def test_sum_set_properties(p):
    g = TorusGeometry(p)
    for m in build_model_collection(g):
        n = sum_set(m)
        assert m.points <= n and (0, 0) in n
        assert all(g.neg(x) in n for x in n)
        brute = {g.normalize((a[0] + b[0], a[1] + b[1]))
                 for a in m.points | {(0, 0)} for b in m.points | {(0, 0)}}
        assert n == brute


def test_empty_mask_sum_set_has_one_orbit():
    g = TorusGeometry(6)
    from torusgmrf.torus import sum_set_mask
    assert count_orbits(sum_set_mask(np.zeros((6, 6), bool), g), g) == 1


def test_growth_p40_and_p5():
    rep = verify_growth(build_model_collection(TorusGeometry(40)))
    assert rep.max_ratio <= 2 and not rep.flagged
    rep5 = verify_growth(build_model_collection(TorusGeometry(5)))
    assert all(1 <= r[3] < math.inf for r in rep5.rows)


def test_growth_table_recount_p9():
    coll = build_model_collection(TorusGeometry(9))
    rep = verify_growth(coll)
    dims = [brute_orbit_count(m.points, 9, "s") for m in coll]
    assert [(r[1], r[2]) for r in rep.rows] == list(zip(dims[:-1], dims[1:]))


@pytest.mark.parametrize("p", [9, 40])
def test_dm2_ratio_within_bound(p):
    rows = verify_dm2_ratio(build_model_collection(TorusGeometry(p)))
    assert any(r.in_regime for r in rows)
    for r in rows:
        if r.in_regime:
            assert r.ratio <= r.analytic_bound
            assert r.disc_lower_ok
            assert not r.flagged


def test_dm2_bound_asymptote():
    # disc of area about 2 d, so r ~ sqrt(2 d / pi)
    vals = [dm2_analytic_bound(d, math.sqrt(2 * d / math.pi)) for d in (1e2, 1e4, 1e6, 1e10)]
    assert all(a > b > 4 for a, b in zip(vals, vals[1:]))
    assert abs(vals[1] / 4 - 1) < 0.05
    assert abs(vals[-1] / 4 - 1) < 1e-4


def test_dims_table_first_row():
    rows = dims_table(build_model_collection(TorusGeometry(9)))
    assert rows[0][:5] == (1, 1, 2, 1, 7)
    assert math.isnan(rows[-1][5])
