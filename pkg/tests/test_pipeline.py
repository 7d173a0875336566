import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppnorm import binarykey as bk
from ppnorm import paillier as pl
from ppnorm import pipeline as pp
from ppnorm import plda
from ppnorm import synthcorpus as sc
from ppnorm.errors import ConfigError, DegenerateStatsError, ProtocolError
from ppnorm.smpc.shares import reconstruct


def stats(mu, sigma, n=2):
    return pp.NormStats(mu, sigma, n)


# -- normalisation ---------------------------------------------------------------------

def test_normalize_at_mean_is_zero():
    assert pp.normalize(3.25, stats(3.25, 0.7)) == 0.0


def test_s_norm_collapses_to_z_norm():
    st_ = stats(1.0, 2.0)
    assert pp.s_norm(4.0, st_, st_) == pp.normalize(4.0, st_) == 1.5


def test_s_norm_hand_value():
    st_ = pp.norm_stats([3.0, 5.0, 7.0], mode="all")
    assert st_.sigma == pytest.approx(1.632993, abs=1e-6)
    assert pp.normalize(7.0, st_) == pytest.approx(1.224745, abs=1e-6)
    assert pp.s_norm(7.0, st_, st_) == pytest.approx(1.224745, abs=1e-6)


def test_norm_stats_top_n():
    s = pp.norm_stats([1.0, 2.0, 3.0, 4.0], n=2)
    assert (s.mu, s.sigma, s.n_used) == (3.5, 0.5, 2)


def test_norm_stats_n_beyond_length_equals_all():
    scores = [0.3, -1.2, 2.5, 0.9]
    assert pp.norm_stats(scores, n=10) == pp.norm_stats(scores, mode="all")


def test_norm_stats_errors():
    with pytest.raises(DegenerateStatsError) as exc:
        pp.norm_stats([2.0, 2.0, 2.0], n=3, sample_id="ref-7")
    assert "ref-7" in str(exc.value)
    with pytest.raises(DegenerateStatsError):
        pp.norm_stats([1.0], mode="all")
    with pytest.raises(ConfigError):
        pp.norm_stats([1.0, 2.0], n=1)
    with pytest.raises(DegenerateStatsError):
        pp.normalize(1.0, stats(0.0, 0.0))


@given(seed=st.integers(0, 2**31), size=st.integers(2, 400))
@settings(max_examples=100)
def test_self_normalisation(seed, size):
    scores = np.random.default_rng(seed).normal(3.0, 2.0, size)
    z = np.array([pp.normalize(s, pp.norm_stats(scores, mode="all")) for s in scores])
    assert abs(z.mean()) <= 1e-12
    assert abs(z.std() - 1.0) <= 1e-12


@given(a=st.floats(-1e6, 1e6), b=st.floats(-1e6, 1e6), mu=st.floats(-1e3, 1e3),
       sigma=st.floats(1e-3, 1e3))
def test_affine_monotone(a, b, mu, sigma):
    s = stats(mu, sigma)
    if a < b:
        assert pp.normalize(a, s) <= pp.normalize(b, s)


# -- config and files ----------------------------------------------------------------------

def test_config_validation_and_roundtrip(tmp_path):
    cfg = pp.PipelineConfig(n=8, key_bits=512, rtt_ms=2.5, net_mode="socket")
    cfg.save(tmp_path / "pipe.cfg")
    assert pp.PipelineConfig.load(tmp_path / "pipe.cfg") == cfg
    assert pp.PipelineConfig.load(tmp_path / "pipe.cfg").runner is None
    for bad in (dict(mode="psychic"), dict(n=1), dict(K=0), dict(bandwidth_bps=0)):
        with pytest.raises(ConfigError):
            pp.PipelineConfig(**bad)
    (tmp_path / "bad.cfg").write_text("n = 4\ncolour = blue\n")
    with pytest.raises(ConfigError):
        pp.PipelineConfig.load(tmp_path / "bad.cfg")


def test_reference_grid():
    assert pp.REFERENCE_N_GRID == (50, 100, 150, 200, 250, 300, 400)


def test_trial_and_score_files(tmp_path):
    trials = [("a", "b", "target"), ("a", "c", "nontarget")]
    pp.write_trial_list(tmp_path / "t.tsv", trials)
    assert pp.read_trial_list(tmp_path / "t.tsv") == trials
    assert (tmp_path / "t.tsv").read_text().splitlines()[0] == "a\tb\ttarget"
    (tmp_path / "bad.tsv").write_text("a\tb\tmaybe\n")
    with pytest.raises(ConfigError):
        pp.read_trial_list(tmp_path / "bad.tsv")

    st_ = stats(0.0, 1.0)
    rec = pp.TrialRecord("a", "b", 1 / 3, np.zeros(2), np.zeros(2), st_, st_, -2 / 7,
                         [], [], "plaintext_scores", "target")
    pp.write_scores(tmp_path / "s.tsv", [rec])
    line = (tmp_path / "s.tsv").read_text().strip()
    assert line == "a\tb\t0.333333333\t-0.285714286\ttarget"
    assert pp.read_scores(tmp_path / "s.tsv") == [("a", "b", 0.333333333, -0.285714286, "target")]


# -- enrolment -------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def cfg512():
    return pp.PipelineConfig(n=8, key_bits=512, seed=3)


def test_enroll(small_corpus, backend, key512, cfg512):
    kbm, model, form = backend
    sample = small_corpus.by_role("enroll")[0]
    a = pp.enroll(sample, key512.public, model, form, kbm, cfg512, np.random.default_rng(1))
    b = pp.enroll(sample, key512.public, model, form, kbm, cfg512, np.random.default_rng(2))
    plain = bk.binary_key(kbm, sample.frames, cfg512.M, cfg512.K).bits
    assert np.array_equal(reconstruct(*a.bk_shares), plain)
    assert np.array_equal(reconstruct(*b.bk_shares), plain)
    assert not np.array_equal(a.bk_shares[0].bits, b.bk_shares[0].bits)
    x = plda.preprocess(sample.embedding[None, :], model.norm_mean)[0]
    for enc, v in zip(a.template.enc_x, x):
        assert pl.decrypt(key512, enc) == pl.encode(float(v), cfg512.scale_bits, key512.n).raw
    hidden = pp.enroll(sample, key512.public, model, form, kbm, cfg512, retain_plaintext=False)
    assert hidden.embedding is None


def test_cohort_store_rejects_duplicates(small_corpus, backend, cfg512):
    kbm, model, _ = backend
    samples = small_corpus.by_role("cohort")[:3]
    store = pp.build_cohort_store(samples, kbm, model, cfg512, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        pp.CohortStore(["x", "x", "y"], store.embeddings, store.bk_shares)


# -- trials ----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def setup256():
    """A corpus with a 256-entry cohort and a backend trained on it."""
    corpus = sc.build_corpus(sc.CorpusConfig(seed=5, cohort_speakers=64, train_speakers=100,
                                             trial_speakers=10, nontargets_per_probe=4))
    kbm = bk.build_kbm(corpus.ubm, [s.frames for s in corpus.by_role("anchor")])
    model = plda.fit_backend(*sc.training_set(corpus))
    cfg = pp.PipelineConfig(n=8, key_bits=512, seed=7)
    store = pp.build_cohort_store(corpus.by_role("cohort"), kbm, model, cfg, np.random.default_rng(8))
    assert len(store) == 256
    return corpus, kbm, model, cfg, store


def _trials(corpus, pipe, count):
    enr = {}
    out = []
    for ref_id, probe_id, label in corpus.trials[:count]:
        if ref_id not in enr:
            enr[ref_id] = pipe.enroll(corpus.samples[ref_id])
        out.append((enr[ref_id], corpus.samples[probe_id], label))
    return out


def test_protected_matches_plaintext_bk(setup256, key512):
    corpus, kbm, model, cfg, store = setup256
    pipe = pp.Pipeline(kbm, model, key512, store, cfg, record=True)
    try:
        trials = _trials(corpus, pipe, 50)
        prot = pipe.run_trials(trials, mode="protected")
        ref = pipe.run_trials(trials, mode="plaintext_bk")
        assert len(prot) == 50
        for a, b in zip(prot, ref):
            assert a.R_ids == b.R_ids and a.P_ids == b.P_ids
            assert len(a.R_ids) == len(a.P_ids) == 8
            assert abs(a.S_prime - b.S_prime) <= 1e-3
            assert abs(a.S - b.S) <= 1e-3
            assert a.S_prime == pytest.approx(pp.s_norm(a.S, a.stats_r, a.stats_p), abs=1e-12)
            assert "gmw" in a.timing and "he" in a.timing
        # the HE count: one S per trial plus n per distinct reference and probe
        refs = {t[0].sample_id for t in trials}
        probes = {t[1].sample_id for t in trials}
        assert pipe.he_count == len(trials) + 8 * (len(refs) + len(probes))

        # nothing but masks and indices crossed the server link, and no key or cohort score leaked
        secrets = [np.packbits(pipe.probe_bits(p)).tobytes() for p in corpus.by_role("probe")]
        secrets += [np.asarray(r.R).tobytes() for r in prot]
        pp.audit_transcript(pipe.deployment.server_transcript(), secrets)
        assert pipe.deployment.server_transcript()
    finally:
        pipe.close()


def test_audit_flags_leaks():
    with pytest.raises(ProtocolError):
        pp.audit_transcript([(0, pp.MsgType.SHARE_UPLOAD, b"")], [])
    with pytest.raises(ProtocolError):
        pp.audit_transcript([(0, pp.MsgType.AND_OPEN, b"xx" + b"SECRET!!" + b"yy")], [b"SECRET!!"])


def test_full_cohort_modes_coincide(small_corpus, backend, key512):
    kbm, model, _ = backend
    cohort = small_corpus.by_role("cohort")
    cfg = pp.PipelineConfig(n=len(cohort), key_bits=512, mode="plaintext_scores")
    store = pp.build_cohort_store(cohort, kbm, model, cfg, np.random.default_rng(0))
    pipe = pp.Pipeline(kbm, model, key512, store, cfg)
    try:
        trials = _trials(small_corpus, pipe, 10)
        a = pipe.run_trials(trials, mode="plaintext_scores")
        b = pipe.run_trials(trials, mode="plaintext_bk")
        for x, y in zip(a, b):
            assert sorted(x.R_ids) == sorted(y.R_ids)
            assert x.S_prime == pytest.approx(y.S_prime, abs=1e-9)
    finally:
        pipe.close()


def test_small_cohort_warns(small_corpus, backend, key512):
    kbm, model, _ = backend
    cfg = pp.PipelineConfig(n=50, key_bits=512, mode="plaintext_bk")
    store = pp.build_cohort_store(small_corpus.by_role("cohort")[:10], kbm, model, cfg,
                                  np.random.default_rng(0))
    pipe = pp.Pipeline(kbm, model, key512, store, cfg)
    try:
        trials = _trials(small_corpus, pipe, 1)
        with pytest.warns(UserWarning, match="exceeds the cohort size"):
            rec = pipe.run_trials(trials)
        assert rec[0].stats_r.n_used == 10
    finally:
        pipe.close()


def test_two_store_config(small_corpus, backend, key512):
    kbm, model, _ = backend
    cohort = small_corpus.by_role("cohort")
    cfg = pp.PipelineConfig(n=4, key_bits=512)
    rng = np.random.default_rng(0)
    ref_side = pp.build_cohort_store(cohort[:40], kbm, model, cfg, rng, side="reference")
    probe_side = pp.build_cohort_store(cohort[40:80], kbm, model, cfg, rng, side="probe")
    pipe = pp.Pipeline(kbm, model, key512, ref_side, cfg, probe_cohort=probe_side)
    try:
        trials = _trials(small_corpus, pipe, 3)
        prot = pipe.run_trials(trials)
        plain = pipe.run_trials(trials, mode="plaintext_bk")
        for a, b in zip(prot, plain):
            assert set(a.R_ids) <= set(ref_side.ids) and set(a.P_ids) <= set(probe_side.ids)
            assert (a.R_ids, a.P_ids) == (b.R_ids, b.P_ids)
            assert abs(a.S_prime - b.S_prime) <= 1e-3
    finally:
        pipe.close()
