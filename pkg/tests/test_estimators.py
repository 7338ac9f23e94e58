import numpy as np
import pytest
from scipy.stats import chi2

from fmatlayers.errors import (
    DegenerateConfiguration,
    DegeneratePoints,
    InsufficientCorrespondences,
    NoConsensus,
    RankDeficientInit,
    WrongSampleSize,
)
from fmatlayers.estimators import (
    RobustConfig,
    _det_cubic,
    _real_roots,
    _scored_hypotheses,
    algebraic_minimization,
    design_matrix,
    eight_point,
    epipole_expansion,
    hartley_normalize,
    lemeds,
    normalized_eight_point,
    ransac,
    seven_point,
)
from fmatlayers.geometry import CorrSet, singular_ratio, skew
from fmatlayers.metrics import fmat_distance
from fmatlayers.synthetic import SceneConfig, generate_scene


def scenes(n, **kw):
    return [generate_scene(SceneConfig(seed=1000 + i, **kw)) for i in range(n)]


# -- linear solvers ---------------------------------------------------------------


def test_design_matrix_examples():
    np.testing.assert_array_equal(design_matrix(CorrSet([[1, 2]], [[3, 4]]))[0], [3, 6, 3, 4, 8, 4, 1, 2, 1])
    np.testing.assert_array_equal(design_matrix(CorrSet([[0, 0]], [[0, 0]]))[0], [0] * 8 + [1])


def test_design_matrix_annihilates_truth(exact_scene):
    f = exact_scene.f_gt.ravel() / np.linalg.norm(exact_scene.f_gt)
    assert np.abs(design_matrix(exact_scene.corrs_exact) @ f).max() < 1e-9


def test_eight_point_guards(exact_scene):
    with pytest.raises(InsufficientCorrespondences):
        eight_point(exact_scene.corrs_exact.subset(slice(0, 7)))
    same = CorrSet(np.tile([[10.0, 20.0]], (8, 1)), np.tile([[30.0, 5.0]], (8, 1)))
    with pytest.raises(DegenerateConfiguration):
        eight_point(same)
    with pytest.raises(InsufficientCorrespondences):
        normalized_eight_point(exact_scene.corrs_exact.subset(slice(0, 7)))


def test_linear_solvers_recover_truth():
    for sc in scenes(20):
        F8 = eight_point(sc.corrs_exact)
        assert fmat_distance(F8, sc.f_gt) < 1e-6
        assert fmat_distance(normalized_eight_point(sc.corrs_exact), sc.f_gt) < 1e-8
        assert singular_ratio(F8) <= 1e-12
        assert abs(np.linalg.norm(F8) - 1) < 1e-12


def test_eight_point_permutation_invariance(exact_scene, rng):
    c = exact_scene.corrs_exact
    perm = rng.permutation(len(c))
    assert fmat_distance(eight_point(c), eight_point(c.subset(perm))) < 1e-12


def test_hartley_normalize_examples():
    T, pts = hartley_normalize([[0.0, 0.0], [2.0, 0.0]])
    np.testing.assert_allclose(pts.mean(axis=0), 0, atol=1e-15)
    assert abs(np.linalg.norm(pts, axis=1).mean() - np.sqrt(2)) < 1e-12
    np.testing.assert_allclose(T @ [1, 0, 1], [0, 0, 1], atol=1e-15)
    c = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    T, _ = hartley_normalize(c)
    np.testing.assert_allclose(T, np.eye(3), atol=1e-12)
    with pytest.raises(DegeneratePoints):
        hartley_normalize([[3.0, 4.0]] * 5)


def _shift(corrs, f_gt, offset):
    T = np.array([[1, 0, -offset], [0, 1, -offset], [0, 0, 1.0]])
    return CorrSet(corrs.x1 + offset, corrs.x2 + offset), T.T @ f_gt @ T


def test_conditioning_experiment():
    # exact data far from the origin: normalization keeps accuracy, plain loses its null space
    for sc in scenes(10):
        for offset in (1e3, 1e4, 1e5):
            shifted, F_shift = _shift(sc.corrs_exact, sc.f_gt, offset)
            assert fmat_distance(normalized_eight_point(shifted), F_shift) < 1e-6
        shifted, _ = _shift(sc.corrs_exact, sc.f_gt, 1e4)
        with pytest.raises(DegenerateConfiguration):
            eight_point(shifted)
    # noisy data at a moderate offset: plain error is larger
    plain, normed = [], []
    for sc in scenes(10, noise_sigma=0.5):
        shifted, F_shift = _shift(sc.corrs_noisy, sc.f_gt, 1e3)
        normed.append(fmat_distance(normalized_eight_point(shifted), F_shift))
        plain.append(fmat_distance(eight_point(shifted), F_shift))
    assert np.median(plain) > np.median(normed)


# -- seven point ---------------------------------------------------------------


def test_cubic_matches_determinant_oracle(rng):
    for _ in range(50):
        F1, F2 = rng.normal(size=(2, 3, 3))
        c = _det_cubic(F1, F2)
        for lam in rng.normal(size=4):
            assert np.polyval(c, lam) == pytest.approx(np.linalg.det(lam * F1 + (1 - lam) * F2), rel=1e-9, abs=1e-12)


def test_real_roots_match_numpy_roots(rng):
    for _ in range(200):
        c = rng.normal(size=4)
        ours = _real_roots(c)
        ref = sorted(r.real for r in np.roots(c) if abs(r.imag) < 1e-9)
        assert len(ours) == len(ref)
        np.testing.assert_allclose(ours, ref, rtol=1e-8, atol=1e-10)


def test_seven_point_oracle_and_contracts():
    for sc in scenes(20):
        sub = sc.corrs_exact.subset(slice(0, 7))
        sols = seven_point(sub)
        assert 1 <= len(sols) <= 3
        assert min(fmat_distance(F, sc.f_gt) for F in sols) < 1e-6
        for F in sols:
            assert singular_ratio(F) <= 1e-10
            r = np.einsum("ni,ij,nj->n", sub.q, F, sub.p)
            assert np.abs(r).max() < 1e-8


def test_seven_point_guards(exact_scene):
    with pytest.raises(WrongSampleSize):
        seven_point(exact_scene.corrs_exact.subset(slice(0, 8)))
    same = CorrSet(np.tile([[1.0, 2.0]], (7, 1)), np.tile([[3.0, 4.0]], (7, 1)))
    with pytest.raises(DegenerateConfiguration):
        seven_point(same)


# -- RANSAC / LeMedS -----------------------------------------------------------


def test_ransac_noise_free():
    for sc in scenes(5):
        F, mask, it = ransac(sc.corrs_exact, RobustConfig(seed=3))
        assert mask.all()
        assert fmat_distance(F, sc.f_gt) < 1e-6
        assert it >= 1


def test_ransac_deterministic(noisy_scene):
    a = ransac(noisy_scene.corrs_noisy, RobustConfig(seed=9))
    b = ransac(noisy_scene.corrs_noisy, RobustConfig(seed=9))
    assert np.array_equal(a.F, b.F) and np.array_equal(a.inliers, b.inliers) and a.iterations == b.iterations


def test_hypothesis_scoring_independent_of_chunking(noisy_scene):
    c = noisy_scene.corrs_noisy

    def flat(chunk):
        out = []
        for i, scored in _scored_hypotheses(c, 4, 40, chunk=chunk):
            out.extend((i, F.tobytes(), d.tobytes()) for F, d in scored)
        return out

    assert flat(1) == flat(32) == flat(7)


def test_ransac_guards(exact_scene):
    with pytest.raises(InsufficientCorrespondences):
        ransac(exact_scene.corrs_exact.subset(slice(0, 6)))
    with pytest.raises(NoConsensus):
        ransac(exact_scene.corrs_exact, RobustConfig(min_inlier_count=1000))


def _label_rates(n_scenes=20):
    recall, reject = [], []
    for sc in scenes(n_scenes, noise_sigma=0.5, outlier_fraction=0.3):
        _, mask, _ = ransac(sc.corrs_noisy, RobustConfig(seed=5))
        lab = sc.corrs_noisy.labels
        recall.append(mask[lab].mean())
        reject.append((~mask[~lab]).mean())
    return float(np.mean(recall)), float(np.mean(reject))


def test_ransac_rejects_outliers_and_recall_matches_noise_oracle():
    recall, reject = _label_rates()
    assert reject >= 0.95
    # a true pair's distance is at least 4 sigma^2 chi2(1); threshold 2 caps recall
    ceiling = chi2.cdf(2.0 / (4 * 0.5**2), df=1)
    assert recall <= ceiling + 0.03
    assert recall >= ceiling - 0.10


@pytest.mark.xfail(strict=True, reason="threshold 2 px^2 at sigma 0.5 admits at most ~84% of true inliers")
def test_ransac_recovers_95_percent_of_inliers():
    recall, _ = _label_rates()
    assert recall >= 0.95


def test_lemeds_noise_free_and_deterministic():
    sc = scenes(1)[0]
    res = lemeds(sc.corrs_exact, RobustConfig(seed=2))
    assert res.median < 1e-12
    assert res.inliers.all()
    again = lemeds(sc.corrs_exact, RobustConfig(seed=2))
    assert np.array_equal(res.F, again.F)


def test_lemeds_beats_eight_point_under_contamination():
    d_l, d_8 = [], []
    for sc in scenes(10, noise_sigma=0.5, outlier_fraction=0.3):
        d_l.append(fmat_distance(lemeds(sc.corrs_noisy, RobustConfig(seed=1)).F, sc.f_gt))
        d_8.append(fmat_distance(eight_point(sc.corrs_noisy), sc.f_gt))
    assert np.median(d_l) < np.median(d_8)
    assert sum(a < b for a, b in zip(d_l, d_8)) >= 8


def test_lemeds_guard(exact_scene):
    with pytest.raises(InsufficientCorrespondences):
        lemeds(exact_scene.corrs_exact.subset(slice(0, 6)))


# -- algebraic minimization -------------------------------------------------------


def test_epipole_expansion_identity(rng):
    e = rng.normal(size=3)
    M = rng.normal(size=(3, 3))
    np.testing.assert_allclose(epipole_expansion(e) @ M.ravel(), (M @ skew(e)).ravel(), atol=1e-14)
    assert np.linalg.matrix_rank(epipole_expansion(e)) == 6


def test_alg_min_exact_init():
    sc = scenes(1)[0]
    res = algebraic_minimization(sc.corrs_exact, sc.f_gt)
    assert res.iterations == 1
    assert res.trace[-1] < 1e-9
    assert fmat_distance(res.F, sc.f_gt) < 1e-9


def test_alg_min_monotone_and_rank():
    for sc in scenes(10, noise_sigma=0.5):
        res = algebraic_minimization(sc.corrs_noisy, eight_point(sc.corrs_noisy))
        assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))
        assert res.trace[-1] <= res.trace[0]
        for F in res.iterates:
            assert singular_ratio(F) <= 1e-10


def test_alg_min_guards(exact_scene):
    with pytest.raises(RankDeficientInit):
        algebraic_minimization(exact_scene.corrs_exact, np.eye(3))
    with pytest.raises(InsufficientCorrespondences):
        algebraic_minimization(exact_scene.corrs_exact.subset(slice(0, 7)), exact_scene.f_gt)
