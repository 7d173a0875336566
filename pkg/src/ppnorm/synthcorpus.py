"""Synthetic speaker universe: UBM, speakers, frames, embeddings, trials.

Embeddings follow the two-covariance model directly (global mean + speaker
latent + session noise + optional channel shift). Frames are drawn from a
per-speaker copy of the UBM whose means are offset by a fixed linear map of
the same latent, so binary keys and embeddings agree on who is speaking
without one being computed from the other. Samples in the shifted channel
condition get a fixed offset on both their embedding and their frames.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io as vio
from .errors import ConfigError


@dataclass
class Gmm:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        if self.means.shape != self.variances.shape or self.weights.shape != (self.means.shape[0],):
            raise ConfigError("inconsistent GMM shapes")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ConfigError("GMM weights must be a probability vector")
        if np.any(self.variances <= 0):
            raise ConfigError("GMM variances must be strictly positive")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_loglik(self, frames: np.ndarray) -> np.ndarray:
        """T x C diagonal-Gaussian log-densities, mixture weights excluded."""
        return diag_gauss_loglik(frames, self.means, self.variances)


def diag_gauss_loglik(frames, means, variances) -> np.ndarray:
    x = np.atleast_2d(frames)
    prec = 1.0 / variances
    const = -0.5 * (means.shape[1] * np.log(2 * np.pi) + np.log(variances).sum(axis=1))
    # expand (x - m)^2 / v without a T x C x F temporary
    quad = (x**2) @ prec.T - 2.0 * x @ (means * prec).T + (means**2 * prec).sum(axis=1)
    return const - 0.5 * quad


@dataclass
class SpeakerModel:
    speaker_id: str
    latent: np.ndarray
    gmm: Gmm
    group: int = 0


def check_spd(matrix, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if m.shape[0] != m.shape[1] or not np.allclose(m, m.T, atol=1e-12):
        raise ConfigError(f"{name} must be a symmetric square matrix")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise ConfigError(f"{name} is not positive definite") from None
    return m


def gen_ubm(seed: int, C: int, F: int, spread: float = 4.0) -> Gmm:
    if C < 1 or F < 1:
        raise ConfigError("C and F must be >= 1")
    rng = np.random.default_rng(seed)
    weights = rng.uniform(0.5, 1.5, size=C)
    weights /= weights.sum()
    weights[-1] = 1.0 - weights[:-1].sum()
    means = rng.normal(0.0, spread, size=(C, F))
    variances = rng.uniform(0.5, 1.5, size=(C, F))
    return Gmm(weights, means, variances)


def speaker_loading(ubm: Gmm, latent_dim: int, scale: float = 1.0, seed: int = 0) -> np.ndarray:
    """Fixed (C, F, D) map from speaker latent to per-component mean offsets."""
    rng = np.random.default_rng([seed, ubm.n_components, ubm.dim, latent_dim])
    return rng.normal(0.0, scale / np.sqrt(latent_dim), size=(ubm.n_components, ubm.dim, latent_dim))


def gen_speakers(ubm: Gmm, count: int, between_cov, seed: int, *, loading=None,
                 prefix: str = "spk", group_offsets=None) -> list[SpeakerModel]:
    """Draw ``count`` speakers; latents ~ N(0, between_cov).

    ``group_offsets`` (2, C, F) adds a sub-population offset to the acoustic
    means of alternating speakers.
    """
    cov = check_spd(between_cov, "between_cov")
    D = cov.shape[0]
    if loading is None:
        loading = speaker_loading(ubm, D)
    rng = np.random.default_rng(seed)
    latents = rng.multivariate_normal(np.zeros(D), cov, size=count, method="cholesky")
    speakers = []
    for i, y in enumerate(latents):
        group = i % 2
        means = ubm.means + loading @ y
        if group_offsets is not None:
            means = means + group_offsets[group]
        gmm = Gmm(ubm.weights.copy(), means, ubm.variances.copy())
        speakers.append(SpeakerModel(f"{prefix}{i:05d}", y, gmm, group))
    return speakers


def gen_frames(speaker: SpeakerModel, T: int, seed) -> np.ndarray:
    if T < 1:
        raise ConfigError("T must be >= 1")
    rng = np.random.default_rng(seed)
    g = speaker.gmm
    comp = rng.choice(g.n_components, size=T, p=g.weights)
    noise = rng.standard_normal((T, g.dim))
    return g.means[comp] + noise * np.sqrt(g.variances[comp])


def gen_embedding(speaker: SpeakerModel, within_cov, global_mean, shift, seed) -> np.ndarray:
    cov = check_spd(within_cov, "within_cov")
    rng = np.random.default_rng(seed)
    noise = np.linalg.cholesky(cov) @ rng.standard_normal(cov.shape[0])
    return np.asarray(global_mean) + speaker.latent + noise + np.asarray(shift)


# -- corpus --------------------------------------------------------------------

@dataclass
class CorpusConfig:
    seed: int = 1
    D: int = 32  # embedding dimension
    F: int = 8  # acoustic feature dimension
    C: int = 64  # UBM components
    frames: int = 200  # frames per sample
    anchors: int = 8  # KBM anchor speakers (half per sub-population)
    anchor_frames: int = 2000
    cohort_speakers: int = 128
    cohort_sessions: int = 4
    train_speakers: int = 400  # PLDA training speakers besides the cohort
    train_sessions: int = 8
    trial_speakers: int = 100
    probes_per_speaker: int = 2
    nontargets_per_probe: int = 9
    shift_fraction: float = 0.5  # share of probes recorded in the shifted condition
    shift_norm: float | None = None  # default 0.5 * sqrt(D)
    frame_shift_norm: float = 1.0  # acoustic offset of the shifted channel
    cohort_shift_fraction: float = 0.0  # cohort sessions recorded in the shifted condition
    shifted_noise_scale: float = 2.0  # within-speaker noise gain in the shifted condition
    between_scale: float = 1.0
    within_scale: float = 1.0
    acoustic_scale: float = 1.5  # latent -> acoustic offset gain
    group_offset: float = 0.5

    def validate(self) -> None:
        for name in ("D", "F", "C", "frames", "anchors", "cohort_speakers", "cohort_sessions",
                     "trial_speakers", "probes_per_speaker"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.nontargets_per_probe > self.trial_speakers - 1:
            raise ConfigError("not enough trial speakers for the requested nontarget trials")
        for name in ("shift_fraction", "cohort_shift_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")

    @property
    def shift_magnitude(self) -> float:
        return 0.5 * np.sqrt(self.D) if self.shift_norm is None else self.shift_norm


@dataclass
class Sample:
    sample_id: str
    speaker_id: str
    role: str  # anchor | cohort | train | enroll | probe
    embedding: np.ndarray | None
    frames: np.ndarray | None = None
    condition: int = 0


@dataclass
class Corpus:
    config: CorpusConfig
    ubm: Gmm
    between_cov: np.ndarray
    within_cov: np.ndarray
    global_mean: np.ndarray
    condition: np.ndarray  # channel-shift vector (embeddings)
    frame_condition: np.ndarray  # channel offset in feature space (frames)
    samples: dict = field(default_factory=dict)
    trials: list = field(default_factory=list)  # (ref_id, probe_id, "target"|"nontarget")

    def by_role(self, role: str) -> list[Sample]:
        return [s for s in self.samples.values() if s.role == role]

    @property
    def cohort_embeddings(self) -> list[tuple[str, np.ndarray]]:
        return [(s.speaker_id, s.embedding) for s in self.by_role("cohort")]

    def speakers(self, role: str) -> set[str]:
        return {s.speaker_id for s in self.by_role(role)}


def _random_spd(rng, D: int, scale: float) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((D, D)))
    eig = scale * rng.uniform(0.5, 1.5, size=D)
    m = (q * eig) @ q.T
    return 0.5 * (m + m.T)


def build_corpus(config: CorpusConfig | None = None) -> Corpus:
    cfg = config or CorpusConfig()
    cfg.validate()
    ss = np.random.SeedSequence(cfg.seed)
    seeds = iter(ss.generate_state(16))
    rng = np.random.default_rng(next(seeds))
    ubm = gen_ubm(int(next(seeds)), cfg.C, cfg.F)
    B = _random_spd(rng, cfg.D, cfg.between_scale)
    W = _random_spd(rng, cfg.D, cfg.within_scale)
    mu = rng.normal(0.0, 1.0, size=cfg.D)
    direction = rng.standard_normal(cfg.D)
    shift = cfg.shift_magnitude * direction / np.linalg.norm(direction)
    loading = speaker_loading(ubm, cfg.D, cfg.acoustic_scale, seed=int(next(seeds)))
    groups = rng.normal(0.0, cfg.group_offset, size=(2, cfg.C, cfg.F))
    fdir = rng.standard_normal(cfg.F)
    frame_shift = cfg.frame_shift_norm * fdir / np.linalg.norm(fdir)

    corpus = Corpus(cfg, ubm, B, W, mu, shift, frame_shift)
    frame_seq = np.random.SeedSequence(int(next(seeds)))
    emb_seq = np.random.SeedSequence(int(next(seeds)))

    def add(sample_id, spk, role, with_frames, condition=0, T=cfg.frames):
        cov = W * cfg.shifted_noise_scale**2 if condition else W
        emb = gen_embedding(spk, cov, mu, shift if condition else np.zeros(cfg.D),
                            emb_seq.spawn(1)[0])
        frames = gen_frames(spk, T, frame_seq.spawn(1)[0]) if with_frames else None
        if frames is not None and condition:
            frames += frame_shift
        corpus.samples[sample_id] = Sample(sample_id, spk.speaker_id, role, emb, frames, condition)

    spk_kw = dict(loading=loading, group_offsets=groups)
    anchors = gen_speakers(ubm, cfg.anchors, B, int(next(seeds)), prefix="anc", **spk_kw)
    for spk in anchors:
        add(f"{spk.speaker_id}-s0", spk, "anchor", True, T=cfg.anchor_frames)

    cohort = gen_speakers(ubm, cfg.cohort_speakers, B, int(next(seeds)), prefix="coh", **spk_kw)
    cohort_rng = np.random.default_rng(next(seeds))
    for spk in cohort:
        for j in range(cfg.cohort_sessions):
            shifted = int(cohort_rng.uniform() < cfg.cohort_shift_fraction)
            add(f"{spk.speaker_id}-s{j}", spk, "cohort", True, condition=shifted)

    train = gen_speakers(ubm, cfg.train_speakers, B, int(next(seeds)), prefix="trn", **spk_kw)
    for spk in train:
        for j in range(cfg.train_sessions):
            add(f"{spk.speaker_id}-s{j}", spk, "train", False)

    trial_spk = gen_speakers(ubm, cfg.trial_speakers, B, int(next(seeds)), prefix="tst", **spk_kw)
    trial_rng = np.random.default_rng(next(seeds))
    refs = []
    for spk in trial_spk:
        ref_id = f"{spk.speaker_id}-enr"
        add(ref_id, spk, "enroll", True)
        refs.append(ref_id)
    for i, spk in enumerate(trial_spk):
        for j in range(cfg.probes_per_speaker):
            shifted = int(trial_rng.uniform() < cfg.shift_fraction)
            probe_id = f"{spk.speaker_id}-prb{j}"
            add(probe_id, spk, "probe", True, condition=shifted)
            corpus.trials.append((refs[i], probe_id, "target"))
            others = trial_rng.choice(np.delete(np.arange(len(refs)), i),
                                      size=cfg.nontargets_per_probe, replace=False)
            corpus.trials.extend((refs[k], probe_id, "nontarget") for k in sorted(others))
    return corpus


def training_set(corpus: Corpus) -> tuple[np.ndarray, list[str]]:
    """PLDA training data: the dedicated training speakers plus the cohort."""
    rows = [s for s in corpus.samples.values() if s.role in ("train", "cohort")]
    return np.array([s.embedding for s in rows]), [s.speaker_id for s in rows]


# -- persistence -------------------------------------------------------------------

ROLES_WITH_FRAMES = ("anchor", "cohort", "enroll", "probe")


def save_corpus(corpus: Corpus, out_dir) -> Path:
    """Manifest + trial list + VCDB containers + generating config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = list(corpus.samples.values())
    vio.save_arrays(out / "embeddings.vcdb", [np.array([s.embedding for s in samples])])
    framed = [s for s in samples if s.frames is not None]
    vio.save_arrays(out / "frames.vcdb", [s.frames for s in framed])
    frame_row = {s.sample_id: i for i, s in enumerate(framed)}
    rows = []
    for i, s in enumerate(samples):
        loc = f"embeddings.vcdb#{i}"
        if s.sample_id in frame_row:
            loc += f";frames.vcdb#{frame_row[s.sample_id]}"
        rows.append((s.sample_id, s.speaker_id, s.role, loc))
    vio.write_tsv(out / "manifest.tsv", rows)
    vio.write_tsv(out / "trials.tsv", corpus.trials)
    vio.write_tsv(out / "conditions.tsv", [(s.sample_id, s.condition) for s in samples
                                           if s.condition])
    (out / "corpus.json").write_text(json.dumps(asdict(corpus.config), indent=2))
    return out


def load_corpus(out_dir) -> Corpus:
    """Rebuild from the saved config and check it against the stored manifest."""
    out = Path(out_dir)
    cfg = CorpusConfig(**json.loads((out / "corpus.json").read_text()))
    corpus = build_corpus(cfg)
    manifest = vio.read_tsv(out / "manifest.tsv", 4)
    (emb,) = vio.load_arrays(out / "embeddings.vcdb")
    for sid, spk, role, loc in manifest:
        s = corpus.samples.get(sid)
        row = int(loc.split(";")[0].split("#")[1])
        if s is None or s.speaker_id != spk or s.role != role or not np.array_equal(s.embedding, emb[row]):
            raise ConfigError(f"{out}: stored corpus does not match its config at {sid}")
    return corpus
