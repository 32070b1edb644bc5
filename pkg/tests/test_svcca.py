import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import eig_reduce, generalized_eig_cca
from gan_introspect.errors import (DegenerateSubspace, InvalidData, LayerSetMismatch, ShapeMismatch,
                                   SingularCovariance)
from gan_introspect.svcca import (ActivationMatrix, ReducedSubspace, cca, center_rows, compare_checkpoints,
                                  group_summary, layer_order, sort_layers, svcca, svcca_similarity, svd_reduce)

FIXTURE = json.loads((Path(__file__).parent / "fixtures" / "reference_similarities.json").read_text())


def correlated_pair(rng, p, q, n, shared):
    z = rng.standard_normal((shared, n))
    a = rng.standard_normal((p, shared)) @ z + 0.5 * rng.standard_normal((p, n))
    b = rng.standard_normal((q, shared)) @ z + 0.5 * rng.standard_normal((q, n))
    return ActivationMatrix("a", a), ActivationMatrix("b", b)


def test_pipeline_matches_generalized_eigen_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        p, q = rng.integers(2, 13, size=2)
        a, b = correlated_pair(rng, p, q, 300, int(rng.integers(1, 5)))
        got = svcca(a, b)
        ref = generalized_eig_cca(eig_reduce(a.data, 0.99), eig_reduce(b.data, 0.99))
        np.testing.assert_allclose(got.correlations, ref, atol=1e-6)


def test_self_similarity_is_one():
    rng = np.random.default_rng(0)
    a = ActivationMatrix("x", rng.standard_normal((6, 200)))
    assert abs(svcca_similarity(a, a) - 1.0) <= 1e-8


def test_svd_reduce_keeps_fewest_directions():
    # energies 9, 4, 1, 0.01 (normalized) -> 9/14.01 < 0.99 <= 13.../... needs three directions
    u, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((4, 4)))
    v, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((50, 4)))
    m = ActivationMatrix("m", u @ np.diag([3.0, 2.0, 1.0, 0.1]) @ v.T)
    red = svd_reduce(m, 0.99)
    assert red.retained == 3
    assert red.variance_fraction_achieved == pytest.approx(14 / 14.01)
    assert svd_reduce(m, 0.5).retained == 1
    assert svd_reduce(m, 1.0).retained == 4


def test_svd_reduce_rejects_zero_and_bad_threshold():
    with pytest.raises(DegenerateSubspace):
        svd_reduce(ActivationMatrix("z", np.zeros((2, 5))))
    with pytest.raises(ValueError):
        svd_reduce(ActivationMatrix("z", np.ones((2, 5))), 0.0)


def test_activation_matrix_validation():
    with pytest.raises(InvalidData):
        ActivationMatrix("a", np.ones((5, 3)))
    with pytest.raises(InvalidData):
        ActivationMatrix("a", np.array([[1.0, np.nan, 2.0]]))
    with pytest.raises(InvalidData):
        ActivationMatrix("a", np.ones((0, 3)))


def test_center_rows():
    m = center_rows(ActivationMatrix("a", np.arange(12.0).reshape(2, 6)))
    np.testing.assert_allclose(m.data.mean(axis=1), 0)


def test_cca_shape_and_singular_errors():
    x = ReducedSubspace(np.random.default_rng(0).standard_normal((2, 10)), 2, 1.0)
    with pytest.raises(ShapeMismatch):
        cca(x, ReducedSubspace(np.ones((2, 11)), 2, 1.0))
    dup = ReducedSubspace(np.vstack([x.basis_projection[0], x.basis_projection[0]]), 2, 1.0)
    with pytest.raises(SingularCovariance):
        cca(dup, x, ridge=0.0)


def test_datapoint_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(ShapeMismatch):
        svcca(ActivationMatrix("a", rng.standard_normal((2, 10))), ActivationMatrix("b", rng.standard_normal((2, 12))))


well_conditioned = st.tuples(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))


@settings(max_examples=150)
@given(well_conditioned)
def test_cca_invariants(case):
    p, q, seed = case
    rng = np.random.default_rng(seed)
    a, b = correlated_pair(rng, p, q, 120, int(rng.integers(1, 4)))
    res = svcca(a, b, variance_threshold=1.0)
    rho = res.correlations
    assert np.all(np.diff(rho) <= 0)
    assert np.all((rho >= 0) & (rho <= 1))
    # invertible mixing of the neurons leaves full-rank CCA unchanged
    qm, _ = np.linalg.qr(rng.standard_normal((p, p)))
    t = qm @ np.diag(rng.uniform(0.5, 2.0, p))
    moved = svcca(ActivationMatrix("a", t @ a.data), b, variance_threshold=1.0)
    np.testing.assert_allclose(moved.correlations, rho, atol=1e-6)
    assert abs(svcca_similarity(a, a, 1.0) - 1.0) <= 1e-8


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1))
def test_symmetry(seed):
    rng = np.random.default_rng(seed)
    a, b = correlated_pair(rng, 4, 6, 100, 2)
    assert svcca_similarity(a, b) == pytest.approx(svcca_similarity(b, a), abs=1e-9)


def test_independent_noise_is_dissimilar():
    rng = np.random.default_rng(3)
    a = ActivationMatrix("a", rng.standard_normal((3, 5000)))
    b = ActivationMatrix("b", rng.standard_normal((3, 5000)))
    assert svcca_similarity(a, b) < 0.05


def test_layer_order_and_sorting():
    names = layer_order(3)
    assert names == ["D1", "D2", "D3", "DC", "R1", "R2", "R3", "UC", "U1", "U2", "Out"]
    assert sort_layers(["Out", "R10", "R2", "D1", "UC"]) == ["D1", "R2", "R10", "UC", "Out"]


def test_compare_checkpoints_and_layer_mismatch():
    rng = np.random.default_rng(4)
    dump = {n: ActivationMatrix(n, rng.standard_normal((2, 40))) for n in ("R1", "D1")}
    rep = compare_checkpoints(dump, list(dump.values()))
    assert rep.layers == ["D1", "R1"]
    assert all(abs(v - 1) < 1e-8 for v in rep.similarities.values())
    with pytest.raises(LayerSetMismatch):
        compare_checkpoints(dump, {"D1": dump["D1"]})


def test_group_summary_of_published_layer_values():
    g = group_summary(FIXTURE["per_layer_1e5"])
    want = FIXTURE["group_means_1e5"]
    assert g.d == pytest.approx(want["D"], abs=1e-8)
    assert g.r == pytest.approx(want["R"], abs=1e-8)
    assert g.u == pytest.approx(want["U"], abs=1e-8)
