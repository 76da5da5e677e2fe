import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdslab import vpso as V
from rdslab.seeding import generator

dims = st.tuples(st.integers(2, 4), st.integers(2, 3))


def simplex_point(m, seed):
    return np.random.default_rng(seed).dirichlet(np.ones(m))


# construction and validation

def test_multiplicity():
    assert V.multiplicity((0, 0)) == 1
    assert V.multiplicity((0, 1)) == 2
    assert V.multiplicity((0, 1, 1)) == 3


def test_rows_must_be_stochastic():
    with pytest.raises(V.TensorError, match=r"\(0, 1\)"):
        V.PsoTensor(2, 2, {(0, 0): [1, 0], (0, 1): [0.5, 0.6], (1, 1): [0, 1]})
    with pytest.raises(V.TensorError, match="negative"):
        V.PsoTensor(2, 2, {(0, 0): [1, 0], (0, 1): [1.5, -0.5], (1, 1): [0, 1]})
    with pytest.raises(V.TensorError, match="missing"):
        V.PsoTensor(2, 2, {(0, 0): [1, 0], (1, 1): [0, 1]})


def test_apply_dimension_mismatch():
    with pytest.raises(V.TensorError):
        V.apply(V.canonical_purebred(2, 2, 0), [0.2, 0.3, 0.5])


# canonical operators

def test_canonical_m2_d2_is_squaring():
    W = V.canonical_purebred(2, 2, 0)
    assert W.coefficient((0, 0), 0) == 1
    assert W.coefficient((0, 1), 1) == 1
    assert W.coefficient((1, 1), 1) == 1
    assert np.allclose(V.apply(W, [0.5, 0.5]), [0.25, 0.75])


def test_canonical_m3_d2_rule():
    W = V.canonical_purebred(3, 2, 0)
    assert W.coeffs[(0, 1)].tolist() == [0, 1, 0]
    assert W.coeffs[(1, 2)].tolist() == [0, 0.5, 0.5]


@given(dims, st.data())
def test_canonical_is_volterra_and_purebred(md, data):
    m, d = md
    k = data.draw(st.integers(0, m - 1))
    W = V.canonical_purebred(m, d, k)
    assert V.is_volterra(W) and V.is_purebred(W, k)


def test_non_volterra_detected():
    W = V.PsoTensor(2, 2, {(0, 0): [1, 0], (0, 1): [0.5, 0.5], (1, 1): [1, 0]})
    assert not V.is_volterra(W)


# properties

@settings(max_examples=200, deadline=None)
@given(dims, st.integers(0, 2**32), st.sampled_from(["general", "volterra"]))
def test_simplex_preserved(md, seed, kind):
    m, d = md
    W = V.random_pso(m, d, np.random.default_rng(seed), kind)
    y = V.apply(W, simplex_point(m, seed))
    assert np.all(y >= 0) and abs(y.sum() - 1) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(dims, st.integers(0, 2**32), st.data())
def test_vertices_fixed_and_faces_invariant(md, seed, data):
    m, d = md
    W = V.random_pso(m, d, np.random.default_rng(seed), "volterra")
    k = data.draw(st.integers(0, m - 1))
    e = np.eye(m)[k]
    assert np.array_equal(V.apply(W, e), e)
    x = simplex_point(m, seed)
    x[k] = 0.0
    x = V.renormalize(x / x.sum(), tol=1e-9)
    assert V.apply(W, x)[k] == 0.0


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 3), st.integers(1, 2), st.integers(0, 2**32))
def test_all_purebred_implies_volterra(m, extra, seed):
    W = V.random_pso(m, m + extra, np.random.default_rng(seed), "all_purebred")
    assert all(V.is_purebred(W, k) for k in range(m))
    assert V.is_volterra(W)


def test_all_purebred_needs_repeated_types():
    with pytest.raises(V.TensorError):
        V.random_pso(3, 2, np.random.default_rng(0), "all_purebred")


@settings(max_examples=200, deadline=None)
@given(dims, st.integers(0, 2**32), st.data())
def test_height_bounds(md, seed, data):
    m, d = md
    k = data.draw(st.integers(0, m - 1))
    W = V.canonical_purebred(m, d, k)
    rng = np.random.default_rng(seed)
    x = rng.dirichlet(np.full(m, 0.3))
    rep = V.check_height_bounds(W, x)
    assert rep["violations"] == []
    assert any(c[0] == "purebred" and c[1] == k for c in rep["checks"])


def test_purebred_bound_equality_case():
    rep = V.check_height_bounds(V.canonical_purebred(2, 2, 0), [0.5, 0.5])
    pure = [c for c in rep["checks"] if c[0] == "purebred" and c[1] == 0][0]
    assert pure[2] == pure[3] == 0.25


def test_volterra_bound_at_other_vertex():
    rep = V.check_height_bounds(V.canonical_purebred(3, 2, 0), [0, 1, 0])
    vol = [c for c in rep["checks"] if c[0] == "volterra" and c[1] == 0][0]
    assert vol[2] == 0.0 and vol[3] == 0.0


@settings(max_examples=100, deadline=None)
@given(dims, st.integers(0, 2**32))
def test_ball_containment(md, seed):
    m, d = md
    rng = np.random.default_rng(seed)
    W = V.random_pso(m, d, rng, "volterra")
    x = rng.dirichlet(np.ones(m))
    h = 1e-3
    u = rng.normal(size=m)
    u -= u.mean()
    y = x + h * u / np.linalg.norm(u)
    if np.all(y >= 0):
        y = V.renormalize(y, tol=1e-9)
        assert np.linalg.norm(V.apply(W, y) - V.apply(W, x)) <= d * m * h + 1e-12


def test_long_iteration_keeps_unit_sum():
    cat = V.canonical_catalog(3, 3)
    idx = V.sample_indices(cat, 1, (5, 1000))
    X = V.iterate_batch(cat, idx, np.tile([0.2, 0.3, 0.5], (5, 1)))
    assert np.all(np.abs(X.sum(axis=1) - 1) <= 1e-9)


# catalogs, streams and iteration

def test_catalog_requires_every_class():
    W = V.canonical_purebred(2, 2, 0)
    with pytest.raises(V.TensorError):
        V.OperatorCatalog((W,), [1.0])


def test_canonical_catalog_weights():
    cat = V.canonical_catalog(2, 2)
    assert cat.nu_lower == 0.5
    assert cat.purebred_mask(0).tolist() == [True, False]


def test_empty_stream_and_identity():
    cat = V.canonical_catalog(2, 2)
    st_ = V.sample_stream(cat, 3, 0)
    assert len(st_) == 0
    assert V.iterate_rds(st_, [0.4, 0.6]).tolist() == [[0.4, 0.6]]


def test_stream_class_frequencies():
    cat = V.canonical_catalog(2, 2)
    idx = V.sample_indices(cat, 9, 100_000)
    f = np.mean(idx == 0)
    assert abs(f - 0.5) < 3 * math.sqrt(0.25 / 100_000)


def test_iterate_example():
    cat = V.canonical_catalog(2, 2)
    traj = V.iterate_rds(V.OperatorStream(cat, np.array([0, 0])), [0.5, 0.5])
    assert np.allclose(traj, [[0.5, 0.5], [0.25, 0.75], [0.0625, 0.9375]])


def test_vertex_trajectory_constant():
    cat = V.canonical_catalog(3, 2)
    traj = V.iterate_rds(V.sample_stream(cat, 2, 20), [0, 0, 1])
    assert np.all(traj == [0, 0, 1])


def test_cocycle_identity():
    cat = V.canonical_catalog(3, 2)
    stream = V.sample_stream(cat, 4, 30)
    full = V.iterate_rds(stream, [0.2, 0.3, 0.5])
    head = V.iterate_rds(V.OperatorStream(cat, stream.indices[:12]), [0.2, 0.3, 0.5])
    tail = V.iterate_rds(V.OperatorStream(cat, stream.indices[12:]), head[-1])
    assert np.array_equal(full[12:], tail)


def test_batch_matches_single():
    cat = V.canonical_catalog(3, 2)
    idx = V.sample_indices(cat, 4, (3, 25))
    X = V.iterate_batch(cat, idx, np.tile([0.2, 0.3, 0.5], (3, 1)))
    for r in range(3):
        assert np.array_equal(X[r], V.iterate_rds(V.OperatorStream(cat, idx[r]), [0.2, 0.3, 0.5])[-1])


# file format

@given(dims, st.integers(0, 2**32))
def test_format_roundtrip(md, seed):
    m, d = md
    W = V.random_pso(m, d, np.random.default_rng(seed), "volterra")
    again = V.parse_tensor(V.format_tensor(W))
    assert np.array_equal(again._table, W._table)


def test_parse_errors_name_the_line():
    with pytest.raises(V.TensorError, match="line 3"):
        V.parse_tensor("m 2\nd 2\n(1,0) 0 1.0\n")
    with pytest.raises(V.TensorError, match=r"\(0, 1\)"):
        V.parse_tensor("m 2\nd 2\n(0,0) 0 1\n(0,1) 0 0.5\n(1,1) 1 1\n")


def test_save_and_load(tmp_path):
    W = V.canonical_purebred(3, 2, 1)
    V.save_tensor(W, tmp_path / "w.txt")
    assert np.array_equal(V.load_tensor(tmp_path / "w.txt")._table, W._table)


def test_property_suite_small_run():
    rep = V.property_suite(200, 1)
    assert rep["passed"], rep["violations"]
