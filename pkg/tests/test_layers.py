import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmatlayers.errors import DependentColumns, MixedNormalization, NearZeroDivisor, ZeroMatrix
from fmatlayers.geometry import CameraIntrinsics, RelativePose, compose_fundamental, skew
from fmatlayers.gradcheck import central_difference, relative_error
from fmatlayers.layers import (
    NormKind,
    epi_backward,
    epi_forward,
    epi_from_matrix,
    epi_jacobian,
    loss,
    normalize,
    normalize_backward,
    reconstruct_backward,
    reconstruct_forward,
    reconstruct_jacobian,
)


def random_theta(rng):
    return np.concatenate([rng.uniform(200, 1000, 2), rng.normal(size=3), rng.uniform(-1, 1, 3)])


# -- reconstruction ------------------------------------------------------------


def test_recon_forward_example():
    F = reconstruct_forward([1, 1, 1, 0, 0, 0, 0, 0], (0, 0))
    np.testing.assert_array_equal(F, skew((1, 0, 0)))


def test_recon_forward_equals_compose_bitwise(rng):
    for _ in range(50):
        th = random_theta(rng)
        pp = tuple(rng.uniform(0, 600, 2))
        F = reconstruct_forward(th, pp)
        G = compose_fundamental(
            CameraIntrinsics(th[0], *pp), CameraIntrinsics(th[1], *pp), RelativePose(tuple(th[2:5]), tuple(th[5:8]))
        )
        assert np.array_equal(F, G)
        s = np.linalg.svd(F, compute_uv=False)
        assert s[2] < 1e-10 * s[0]


def test_recon_backward_zero_upstream(rng):
    assert np.array_equal(reconstruct_backward(random_theta(rng), np.zeros((3, 3))), np.zeros(8))


def test_recon_backward_basis_upstream_matches_finite_differences(rng):
    for _ in range(10):
        th = random_theta(rng)
        pp = tuple(rng.uniform(0, 600, 2))
        for ij in range(9):
            G = np.zeros(9)
            G[ij] = 1.0
            G = G.reshape(3, 3)
            a = reconstruct_backward(th, G, pp)
            n = central_difference(lambda x: float(np.sum(G * reconstruct_forward(x, pp))), th)
            # compare relative to the Jacobian scale: some partials are exactly zero
            scale = np.abs(reconstruct_jacobian(th, pp)).max()
            assert np.abs(a - n).max() < 1e-5 * scale


def test_translation_partial_is_skew_derivative():
    th = np.array([1, 1, 0.3, -0.2, 0.5, 0, 0, 0], dtype=float)
    J = reconstruct_jacobian(th).reshape(3, 3, 8)
    h = 1e-6
    fd = (skew(th[2:5] + [h, 0, 0]) - skew(th[2:5] - [h, 0, 0])) / (2 * h)
    np.testing.assert_allclose(J[:, :, 2], fd, atol=1e-9)
    np.testing.assert_array_equal(J[:, :, 2], skew((1, 0, 0)))


# -- epipolar parametrization ----------------------------------------------------


def test_epi_forward_examples():
    F = epi_forward([1, 0, 0, 0, 1, 0, 0, 0])
    np.testing.assert_array_equal(F, [[1, 0, 0], [0, 1, 0], [0, 0, 0]])
    with pytest.raises(DependentColumns):
        epi_forward([1, 2, 3, 2, 4, 6, 0.5, 0.5])


@settings(max_examples=200)
@given(st.lists(st.floats(-10, 10), min_size=8, max_size=8))
def test_epi_rank_and_epipole(v):
    v = np.array(v)
    try:
        F = epi_forward(v)
    except DependentColumns:
        return
    s = np.linalg.svd(F, compute_uv=False)
    assert s[2] <= 1e-10 * s[0] + 1e-300
    e = np.array([v[6], v[7], -1.0])
    assert np.linalg.norm(F @ e) <= 1e-12 * np.linalg.norm(F) * np.linalg.norm(e)


def test_epi_backward_examples(rng):
    v = rng.normal(size=8)
    assert np.array_equal(epi_backward(v, np.zeros((3, 3))), np.zeros(8))
    G = np.zeros((3, 3))
    G[2, 2] = 1.0
    assert epi_backward(v, G)[6] == v[2]


def test_epi_backward_finite_differences(rng):
    for _ in range(100):
        v = rng.normal(size=8)
        G = rng.normal(size=(3, 3))
        n = central_difference(lambda x: float(np.sum(G * epi_forward(x))), v)
        assert relative_error(epi_backward(v, G), n) < 1e-6
        np.testing.assert_allclose(epi_jacobian(v).T @ G.ravel(), epi_backward(v, G), rtol=1e-14)


def test_epi_from_matrix_roundtrip(rng):
    v = rng.normal(size=8)
    np.testing.assert_allclose(epi_from_matrix(epi_forward(v)), v, rtol=1e-10)


# -- normalization -------------------------------------------------------------


def test_normalize_examples():
    U = np.arange(1.0, 10.0).reshape(3, 3)
    U /= np.linalg.norm(U)
    np.testing.assert_allclose(normalize(2 * U, "FBN"), U, rtol=1e-15)
    F = np.array([[-4, 1, 2], [3, 0, -1], [0.5, 2, 1]], dtype=float)
    np.testing.assert_array_equal(normalize(F, NormKind.ABS), F / 4)
    G = np.ones((3, 3))
    G[2, 2] = 1e-15
    with pytest.raises(NearZeroDivisor):
        normalize(G, "ETR")
    for kind in ("FBN", "ABS"):
        with pytest.raises(ZeroMatrix):
            normalize(np.zeros((3, 3)), kind)


def test_normalize_postconditions(rng):
    for _ in range(200):
        F = rng.normal(size=(3, 3))
        assert normalize(F, "ETR")[2, 2] == 1.0
        assert abs(np.linalg.norm(normalize(F, "FBN")) - 1) < 1e-12
        assert abs(np.abs(normalize(F, "ABS")).max() - 1) < 1e-12
        a, b = normalize(F, "FBN"), normalize(F, "ABS")
        ratio = b / a
        np.testing.assert_allclose(ratio, ratio.flat[0], rtol=1e-12)
        assert ratio.flat[0] > 0


def test_normalize_idempotent_and_scale_invariant(rng):
    for _ in range(200):
        F = rng.normal(size=(3, 3))
        for kind in ("FBN", "ABS"):
            N = normalize(F, kind)
            np.testing.assert_allclose(normalize(N, kind), N, rtol=1e-15, atol=1e-15)
            s = rng.uniform(0.01, 100)
            np.testing.assert_allclose(normalize(s * F, kind), N, atol=1e-12)
        E = normalize(F, "ETR")
        assert np.array_equal(normalize(E, "ETR"), E)
        s = rng.choice([-1, 1]) * rng.uniform(0.01, 100)
        np.testing.assert_allclose(normalize(s * F, "ETR"), E, atol=1e-12 * np.abs(E).max())


def test_fbn_backward_tangent_identity(rng):
    F = rng.normal(size=(3, 3))
    F /= np.linalg.norm(F)
    G = rng.normal(size=(3, 3))
    G -= np.sum(G * F) * F
    np.testing.assert_allclose(normalize_backward(F, "FBN", G), G, atol=1e-15)


def test_etr_pinned_output_has_zero_gradient(rng):
    F = rng.normal(size=(3, 3))
    G = np.zeros((3, 3))
    G[2, 2] = 1.0
    np.testing.assert_allclose(normalize_backward(F, "ETR", G), 0.0, atol=1e-15)


@pytest.mark.parametrize("kind", list(NormKind))
def test_normalize_backward_finite_differences(rng, kind):
    for _ in range(100):
        F = rng.normal(size=(3, 3))
        G = rng.normal(size=(3, 3))
        n = central_difference(lambda x: float(np.sum(G * normalize(x, kind))), F)
        assert relative_error(normalize_backward(F, kind, G), n) < 1e-5


def test_abs_tie_attributes_first_maximizer():
    F = np.array([[1.0, -3.0, 0.2], [3.0, 0.5, 0.1], [0.3, 0.1, 1.0]])
    G = np.ones((3, 3))
    g = normalize_backward(F, "ABS", G)
    # derivative of the divisor lands on entry (0, 1) only
    expected = G / 3.0
    expected[0, 1] -= np.sum(G * F) / 9.0 * -1.0
    np.testing.assert_allclose(g, expected, rtol=1e-15)


# -- loss ----------------------------------------------------------------------


def test_loss_examples():
    F = np.eye(3)
    v, g = loss(F, F)
    assert v == 0 and not g.any()
    P = np.zeros((3, 3))
    P[1, 2] = 0.5
    v, g = loss(P, np.zeros((3, 3)), (1, 1))
    assert v == 0.75
    assert g[1, 2] == 2.0 and g.sum() == 2.0
    with pytest.raises(MixedNormalization):
        loss(F, F, pred_kind="FBN", target_kind="ABS")


def test_loss_finite_differences(rng):
    for _ in range(100):
        P, T = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        w = tuple(rng.uniform(0, 2, 2))
        n = central_difference(lambda x: loss(x, T, w)[0], P)
        assert relative_error(loss(P, T, w)[1], n) < 1e-6
