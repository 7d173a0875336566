import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.isotonic import IsotonicRegression
from sklearn.metrics import roc_curve

from ppnorm import metrics as mt
from ppnorm.errors import ConfigError


# -- independent oracles ------------------------------------------------------------------

def eer_oracle(scores, labels):
    """Crossing of the piecewise-linear miss/false-alarm curve traced by sklearn's ROC."""
    fpr, tpr, _ = roc_curve(labels, scores, drop_intermediate=False)
    fnr = 1 - tpr
    for i in range(1, len(fpr)):
        d0, d1 = fnr[i - 1] - fpr[i - 1], fnr[i] - fpr[i]
        if d0 >= 0 >= d1:
            if d0 == d1:
                return fnr[i]
            a = d0 / (d0 - d1)
            return fnr[i - 1] + a * (fnr[i] - fnr[i - 1])
    raise AssertionError("no crossing")


def min_dcf_oracle(scores, labels, p=0.01):
    """Accept when score > t, t over every midpoint and both infinities."""
    s = np.asarray(scores, float)
    lab = np.asarray(labels, bool)
    u = np.unique(s)
    thresholds = np.concatenate([[-np.inf], (u[1:] + u[:-1]) / 2, [np.inf]])
    best = np.inf
    for t in thresholds:
        p_miss = np.mean(s[lab] <= t)
        p_fa = np.mean(s[~lab] > t)
        best = min(best, (p * p_miss + (1 - p) * p_fa) / min(p, 1 - p))
    return best


def cllr_min_oracle(scores, labels):
    s = np.asarray(scores, float)
    lab = np.asarray(labels, float)
    post = IsotonicRegression(y_min=0, y_max=1).fit(s, lab).predict(s)
    prior = lab.mean()
    with np.errstate(divide="ignore"):
        llr = np.log(post / (1 - post)) - np.log(prior / (1 - prior))
    llr = np.clip(llr, -35, 35)
    tar, non = llr[lab == 1], llr[lab == 0]
    c = np.mean(np.log2(1 + np.exp(-tar))) + np.mean(np.log2(1 + np.exp(non)))
    return min(1.0, c / 2)


def random_instance(rng, size):
    labels = np.zeros(size, bool)
    labels[: rng.integers(1, size)] = True
    rng.shuffle(labels)
    # coarse grid so ties are common
    scores = np.round(rng.normal(labels * rng.uniform(0, 3), 1.0), int(rng.integers(0, 3)))
    return scores, labels


# -- examples -------------------------------------------------------------------------------

def test_hand_case_eer():
    scores = [2, 3, 4, 1, 2, 3]
    labels = [1, 1, 1, 0, 0, 0]
    assert mt.eer(scores, labels) == pytest.approx(1 / 3)
    assert mt.eer(scores, labels) == pytest.approx(eer_oracle(scores, labels))


def test_perfect_separation():
    scores, labels = [3.0, 4.0, 5.0, -1.0, 0.0], [1, 1, 1, 0, 0]
    assert mt.eer(scores, labels) == 0.0
    assert mt.min_dcf(scores, labels) == 0.0
    assert mt.cllr_min(scores, labels) == pytest.approx(0.0, abs=1e-12)  # the LLR clamp leaves ~1e-15


def test_constant_scores():
    scores, labels = np.zeros(10), np.arange(10) % 2
    assert mt.min_dcf(scores, labels) == 1.0
    assert mt.cllr_min(scores, labels) == pytest.approx(1.0)
    assert mt.eer(scores, labels) == pytest.approx(0.5)


def test_uninformative_scores():
    rng = np.random.default_rng(0)
    scores = rng.standard_normal(20_000)
    labels = rng.uniform(size=20_000) < 0.3
    assert abs(mt.eer(scores, labels) - 0.5) <= 0.05


def test_string_labels():
    assert mt.eer([1.0, 0.0], ["target", "nontarget"]) == 0.0


def test_single_class_rejected():
    for fn in (mt.eer, mt.min_dcf, mt.cllr_min):
        with pytest.raises(ValueError):
            fn([1.0, 2.0], [1, 1])
    with pytest.raises(ValueError):
        mt.eer([1.0, 2.0, 3.0], [1, 0])


def test_metric_config():
    assert mt.MetricConfig().prior == pytest.approx(0.01)
    assert mt.MetricConfig(0.5, cost_miss=3.0).prior == pytest.approx(0.75)
    for bad in (dict(effective_prior=0.0), dict(effective_prior=1.0), dict(cost_fa=0.0)):
        with pytest.raises(ConfigError):
            mt.MetricConfig(**bad)


def test_pav_matches_isotonic_regression():
    rng = np.random.default_rng(1)
    y, w = rng.standard_normal(60), rng.uniform(0.5, 2.0, 60)
    ref = IsotonicRegression().fit(np.arange(60), y, sample_weight=w).predict(np.arange(60))
    assert np.allclose(mt.pav(y, w), ref, atol=1e-12)
    assert np.all(np.diff(mt.pav(y)) >= 0)


# -- oracle equivalence and properties ---------------------------------------------------------

@given(seed=st.integers(0, 2**31), size=st.integers(2, 50))
@settings(max_examples=200, deadline=None)
def test_metrics_match_oracles(seed, size):
    scores, labels = random_instance(np.random.default_rng(seed), size)
    assert mt.eer(scores, labels) == pytest.approx(eer_oracle(scores, labels), abs=1e-12)
    assert mt.min_dcf(scores, labels) == pytest.approx(min_dcf_oracle(scores, labels), abs=1e-12)
    assert mt.cllr_min(scores, labels) == pytest.approx(cllr_min_oracle(scores, labels), abs=1e-9)


@given(seed=st.integers(0, 2**31), size=st.integers(2, 200))
@settings(max_examples=100, deadline=None)
def test_bounds(seed, size):
    scores, labels = random_instance(np.random.default_rng(seed), size)
    m = mt.evaluate(scores, labels)
    for v in m.as_dict().values():
        assert 0.0 <= v <= 1.0


@given(seed=st.integers(0, 2**31), size=st.integers(2, 50))
@settings(max_examples=100, deadline=None)
def test_cllr_min_rank_invariant(seed, size):
    scores, labels = random_instance(np.random.default_rng(seed), size)
    base = mt.cllr_min(scores, labels)
    assert mt.cllr_min(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)
    assert mt.cllr_min(3 * scores - 7, labels) == pytest.approx(base, abs=1e-12)
    assert mt.eer(np.tanh(scores / 10), labels) == pytest.approx(mt.eer(scores, labels), abs=1e-12)


@given(seed=st.integers(0, 2**31), size=st.integers(2, 50))
@settings(max_examples=100, deadline=None)
def test_min_dcf_is_minimal(seed, size):
    scores, labels = random_instance(np.random.default_rng(seed), size)
    # every individual threshold costs at least the minimum
    p = 0.01
    lab = np.asarray(labels, bool)
    for t in np.unique(scores):
        dcf = (p * np.mean(scores[lab] < t) + (1 - p) * np.mean(scores[~lab] >= t)) / p
        assert mt.min_dcf(scores, labels) <= dcf + 1e-12
