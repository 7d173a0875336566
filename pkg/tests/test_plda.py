import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppnorm import plda
from ppnorm.errors import DegenerateInputError, DimensionError, ModelError

HALF_LN_4_3 = 0.5 * np.log(4 / 3)


def random_model(rng, D):
    A = rng.standard_normal((D, D))
    C = rng.standard_normal((D, D))
    return plda.PldaModel(rng.standard_normal(D), A @ A.T + 0.1 * np.eye(D), C @ C.T + 0.1 * np.eye(D))


def generate(rng, B, W, speakers, sessions, mu=None):
    D = B.shape[0]
    mu = np.zeros(D) if mu is None else mu
    y = rng.multivariate_normal(np.zeros(D), B, size=speakers)
    e = rng.multivariate_normal(np.zeros(D), W, size=(speakers, sessions))
    x = (mu + y[:, None, :] + e).reshape(-1, D)
    labels = np.repeat(np.arange(speakers), sessions)
    return x, labels


def test_preprocess_unit_vector_fixed_point():
    mean = np.array([1.0, 2.0, 3.0])
    out = plda.preprocess(mean + np.array([1.0, 0, 0]), mean)
    assert np.allclose(out[0], [1.0, 0, 0])


@given(seed=st.integers(0, 10_000), scale=st.floats(1e-3, 1e3))
@settings(max_examples=50)
def test_preprocess_unit_norm_and_scale_invariance(seed, scale):
    x = np.random.default_rng(seed).standard_normal((5, 4))
    out = plda.preprocess(x, np.zeros(4))
    assert np.allclose(np.linalg.norm(out, axis=1), 1.0, rtol=0, atol=1e-12)
    assert np.allclose(plda.preprocess(scale * x, np.zeros(4)), out, rtol=0, atol=1e-12)


def test_preprocess_zero_vector():
    with pytest.raises(DegenerateInputError):
        plda.preprocess(np.ones((1, 3)), np.ones(3))


def test_d1_analytic_case():
    m = plda.PldaModel([0.0], [[1.0]], [[1.0]])
    form = plda.scoring_form(m)
    assert abs(plda.plda_score(form, [0.0], [0.0]) - 0.1438) < 1e-4
    assert abs(plda.plda_score(form, [0.0], [0.0]) - HALF_LN_4_3) < 1e-12
    assert abs(plda.joint_llr_oracle(m, [0.0], [0.0]) - HALF_LN_4_3) < 1e-12


def test_hand_determinants():
    # same: [[2,1],[1,2]] det 3; diff: [[2,0],[0,2]] det 4; at the mean only the log-dets remain
    assert np.isclose(0.5 * (np.log(4.0) - np.log(3.0)), HALF_LN_4_3)


def test_vanishing_between_covariance():
    m = plda.PldaModel(np.zeros(3), 1e-12 * np.eye(3), np.eye(3))
    f = plda.scoring_form(m)
    for arr in (f.Q, f.P, f.c):
        assert np.abs(arr).max() < 1e-9
    assert abs(f.k0) < 1e-9
    x = np.random.default_rng(0).standard_normal((2, 3))
    assert abs(plda.plda_score(f, x[0], x[1])) < 1e-9


def test_oracle_zero_between_is_zero():
    m = plda.PldaModel(np.zeros(2), np.zeros((2, 2)), np.eye(2))
    x = np.random.default_rng(1).standard_normal((2, 2))
    assert plda.joint_llr_oracle(m, x[0], x[1]) == pytest.approx(0.0, abs=1e-12)


def test_zero_form():
    assert plda.plda_score(plda.ScoringForm.zero(3), np.ones(3), -np.ones(3)) == 0.0


@pytest.mark.parametrize("D", [1, 2, 4, 8, 16])
def test_form_matches_oracle(D):
    rng = np.random.default_rng(D)
    for _ in range(40):
        m = random_model(rng, D)
        f = plda.scoring_form(m)
        x1, x2 = m.mean + rng.standard_normal((2, D))
        oracle = plda.joint_llr_oracle(m, x1, x2)
        assert abs(plda.plda_score(f, x1, x2) - oracle) <= 1e-9 * (1 + abs(oracle))


@given(seed=st.integers(0, 2**31))
@settings(max_examples=50)
def test_score_symmetric(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 4)
    f = plda.scoring_form(m)
    a, b = rng.standard_normal((2, 4))
    assert plda.plda_score(f, a, b) == plda.plda_score(f, b, a)


def test_score_matrix_matches_pairwise():
    rng = np.random.default_rng(3)
    f = plda.scoring_form(random_model(rng, 5))
    X, Y = rng.standard_normal((3, 5)), rng.standard_normal((4, 5))
    M = plda.score_matrix(f, X, Y)
    for i in range(3):
        for j in range(4):
            assert M[i, j] == pytest.approx(plda.plda_score(f, X[i], Y[j]), rel=1e-12, abs=1e-12)


def test_dimension_mismatch():
    f = plda.ScoringForm.zero(3)
    with pytest.raises(DimensionError):
        plda.plda_score(f, np.ones(3), np.ones(2))


def test_non_spd_model_rejected():
    with pytest.raises(ModelError):
        plda.scoring_form(plda.PldaModel(np.zeros(2), -np.eye(2), np.eye(2)))


def test_em_recovers_generative_model():
    # with 2000 speakers the sampling error of a 16-dim between covariance is
    # itself about 10% Frobenius, so B gets a slightly wider bound than W
    rng = np.random.default_rng(0)
    D = 16
    x, labels = generate(rng, np.eye(D), np.eye(D), 2000, 8)
    m = plda.fit_plda(x, labels)
    rel = lambda est: np.linalg.norm(est - np.eye(D)) / np.linalg.norm(np.eye(D))
    assert rel(m.within) < 0.10
    assert rel(m.between) < 0.12


def test_em_recovers_at_lower_dimension():
    rng = np.random.default_rng(0)
    B = np.diag([2.0, 1.5, 1.0, 0.5])
    W = np.eye(4) + 0.3
    x, labels = generate(rng, B, W, 2000, 8)
    m = plda.fit_plda(x, labels)
    assert np.linalg.norm(m.between - B) / np.linalg.norm(B) < 0.10
    assert np.linalg.norm(m.within - W) / np.linalg.norm(W) < 0.10


def test_em_loglik_monotone():
    # unequal session counts, so EM has no closed-form fixed point to land on
    rng = np.random.default_rng(1)
    B, D = np.diag([2.0, 1.0, 0.5]), 3
    counts = rng.integers(1, 6, size=150)
    y = rng.multivariate_normal(np.zeros(D), B, size=150)
    x = np.concatenate([1.0 + y[i] + rng.standard_normal((c, D)) for i, c in enumerate(counts)])
    m = plda.fit_plda(x, np.repeat(np.arange(150), counts), max_iter=50, tol=0.0)
    ll = np.array(m.loglik)
    assert len(ll) == 51
    assert np.all(np.diff(ll) >= -1e-8 * np.abs(ll[:-1]))


def test_single_session_warns():
    x = np.random.default_rng(2).standard_normal((10, 3))
    with pytest.warns(plda.IdentifiabilityWarning):
        plda.fit_plda(x, np.arange(10), max_iter=3)


def test_fit_requires_two_speakers():
    with pytest.raises(ModelError):
        plda.fit_plda(np.ones((4, 2)), [0, 0, 0, 0])


def test_calibration_sanity():
    rng = np.random.default_rng(4)
    D = 6
    B, W = 2.0 * np.eye(D), np.eye(D)
    m = plda.PldaModel(np.zeros(D), B, W)
    f = plda.scoring_form(m)
    x, labels = generate(rng, B, W, 200, 2)
    tar = [plda.plda_score(f, x[2 * i], x[2 * i + 1]) for i in range(200)]
    non = [plda.plda_score(f, x[2 * i], x[2 * i + 2]) for i in range(199)]
    assert np.mean(tar) > 0 > np.mean(non)


def test_model_save_load(tmp_path):
    rng = np.random.default_rng(5)
    x, labels = generate(rng, np.eye(3), np.eye(3), 30, 3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        m = plda.fit_backend(x, labels, max_iter=5)
    m.save(tmp_path / "m.plda")
    back = plda.PldaModel.load(tmp_path / "m.plda")
    assert np.array_equal(back.between, m.between) and np.array_equal(back.norm_mean, m.norm_mean)
    assert back.iterations == m.iterations
    assert (tmp_path / "m.plda").read_bytes().startswith(b"PLDA")
