import numpy as np
import pytest

from ppnorm import heplda
from ppnorm import paillier as pl
from ppnorm import plda
from ppnorm.errors import DimensionError, KeyMismatchError, OverflowRiskError


def unit(rng, D):
    v = rng.standard_normal(D)
    return v / np.linalg.norm(v)


@pytest.fixture(scope="module")
def form32():
    rng = np.random.default_rng(32)
    A = rng.standard_normal((32, 32)) / 4
    C = rng.standard_normal((32, 32)) / 4
    model = plda.PldaModel(np.zeros(32), A @ A.T + 0.1 * np.eye(32), C @ C.T + 0.1 * np.eye(32))
    return plda.scoring_form(model)


def test_zero_form_scores_zero(key512):
    form = plda.ScoringForm.zero(4)
    rng = np.random.default_rng(0)
    t = heplda.protect_reference(key512.public, form, unit(rng, 4))
    c = heplda.he_plda_score(key512.public, form, t, unit(rng, 4))
    assert heplda.decrypt_score(key512, c) == 0.0


def test_d1_analytic_case(key512):
    form = plda.scoring_form(plda.PldaModel([0.0], [[1.0]], [[1.0]]))
    t = heplda.protect_reference(key512.public, form, np.zeros(1))
    got = heplda.decrypt_score(key512, heplda.he_plda_score(key512.public, form, t, np.zeros(1)))
    eps = heplda.score_tolerance(form, np.zeros(1))
    assert abs(got - 0.5 * np.log(4 / 3)) <= eps
    assert abs(got - 0.1438) < 1e-3


def test_template_contents(key512, form32):
    rng = np.random.default_rng(1)
    x = unit(rng, 32)
    t = heplda.protect_reference(key512.public, form32, x)
    n = key512.n
    for enc, v in zip(t.enc_x, x):
        assert pl.decrypt(key512, enc) == pl.encode(float(v), 24, n).raw
    zero = heplda.protect_reference(key512.public, form32, np.zeros(32))
    assert pl.decrypt(key512, zero.enc_self_quad) == 0


def test_matches_plaintext(key512, form32):
    rng = np.random.default_rng(2)
    pk = key512.public
    for _ in range(30):
        x, y = unit(rng, 32), unit(rng, 32)
        t = heplda.protect_reference(pk, form32, x)
        got = heplda.decrypt_score(key512, heplda.he_plda_score(pk, form32, t, y))
        ref = plda.plda_score(form32, x, y)
        assert abs(got - ref) <= heplda.score_tolerance(form32, y)
        assert abs(got - ref) <= 1e-3


def test_operation_counts(key512, form32):
    rng = np.random.default_rng(3)
    pk = key512.public
    t = heplda.protect_reference(pk, form32, unit(rng, 32))
    with pl.op_counter() as ops:
        heplda.he_plda_score(pk, form32, t, unit(rng, 32))
    assert ops == {"scalar_mul": 32, "add": 33, "encrypt": 1}


def test_mismatches(key512, form32):
    rng = np.random.default_rng(4)
    pk = key512.public
    t = heplda.protect_reference(pk, form32, unit(rng, 32))
    other = pl.keygen(512, seed=99)
    with pytest.raises(KeyMismatchError):
        heplda.he_plda_score(other.public, form32, t, unit(rng, 32))
    with pytest.raises(KeyMismatchError):
        heplda.he_plda_score(pk, plda.ScoringForm.zero(32), t, unit(rng, 32))
    with pytest.raises(DimensionError):
        heplda.he_plda_score(pk, form32, t, np.zeros(3))


def test_overflow_detected(form32):
    tiny = pl.keygen(64, seed=1)
    with pytest.raises(OverflowRiskError):
        heplda.protect_reference(tiny.public, form32, np.ones(32) / np.sqrt(32))


def test_template_file_roundtrip(tmp_path, key512, form32):
    rng = np.random.default_rng(5)
    t = heplda.protect_reference(key512.public, form32, unit(rng, 32))
    heplda.save_template(t, tmp_path / "t.hetp")
    assert heplda.load_template(tmp_path / "t.hetp") == t
    raw = (tmp_path / "t.hetp").read_bytes()
    assert raw[:4] == b"HETP"
