"""End-to-end protected adaptive s-norm.

Roles: two computing servers run the pruning protocol on XOR shares. A
client holds the decryption key and the raw samples, and a dealer hands out
Beaver triples. The client and dealer talk to the servers over
upload-only links; the only two-way traffic is between the servers.

Three scoring modes share one code path for everything except pruning and
scoring:

* ``plaintext_scores``: conventional adaptive s-norm, top-n by PLDA score.
* ``plaintext_bk``: top-n by plaintext binary-key similarity, plaintext PLDA.
* ``protected``: secure pruning on shares, then HE-PLDA on the n revealed
  cohort entries per side, decrypted by the client.
"""
from __future__ import annotations

import random
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import heplda
from . import io as vio
from . import paillier as pl
from .binarykey import Kbm, binary_key
from .errors import ConfigError, DegenerateStatsError, DimensionError, ProtocolError
from .plda import PldaModel, ScoringForm, plda_score, preprocess, score_matrix, scoring_form
from .smpc.gmw import pack
from .smpc.protocols import PruneResult, plaintext_prune, prune_triple_bits, secure_prune
from .smpc.shares import BeaverTriple, BooleanShare, TriplePool, deal_triples, reconstruct, share_bits
from .transport import (ChannelPair, ChannelStats, MsgType, NetConfig, connect_pair, run_threads,
                        simulated_time)

MODES = ("plaintext_scores", "plaintext_bk", "protected")
REFERENCE_N_GRID = (50, 100, 150, 200, 250, 300, 400)


@dataclass
class PipelineConfig:
    n: int = 50
    mode: str = "protected"
    K: int = 64  # set bits per binary key
    M: int = 1  # per-frame top-M pre-selection
    scale_bits: int = heplda.DEFAULT_SCALE_BITS
    key_bits: int = pl.DEFAULT_KEY_BITS
    seed: int = 0
    bandwidth_bps: float = 1e9
    rtt_ms: float = 1.0
    net_mode: str | None = None  # inproc | socket; None defers to VC_NET_MODE
    runner: str | None = None  # lockstep | threads; None picks by net mode
    query_chunk: int = 64  # queries per secure pruning batch

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n < 2:
            raise ConfigError("n must be >= 2 (a spread needs two scores)")
        if self.K < 1 or self.M < 1 or self.query_chunk < 1:
            raise ConfigError("K, M and query_chunk must be positive")
        if self.scale_bits < 1:
            raise ConfigError("scale_bits must be positive")
        if self.runner not in (None, "lockstep", "threads"):
            raise ConfigError(f"unknown runner {self.runner!r}")
        NetConfig.from_flags(self.bandwidth_bps, self.rtt_ms)

    @property
    def net(self) -> NetConfig:
        return NetConfig.from_flags(self.bandwidth_bps, self.rtt_ms)

    def replace(self, **changes) -> "PipelineConfig":
        return PipelineConfig(**{**asdict(self), **changes})

    def save(self, path) -> None:
        lines = [f"{k} = {'' if v is None else v}" for k, v in asdict(self).items()]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        raw = vio.read_keyvalue(path)
        types = {f.name: f.type for f in fields(cls)}
        unknown = set(raw) - set(types)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        kw = {}
        for key, value in raw.items():
            kind = types[key]
            if value == "" and "None" in kind:
                kw[key] = None
            elif kind.startswith("int"):
                kw[key] = int(value)
            elif kind.startswith("float"):
                kw[key] = float(value)
            else:
                kw[key] = value
        return cls(**kw)


# -- normalisation ------------------------------------------------------------------

@dataclass(frozen=True)
class NormStats:
    mu: float
    sigma: float
    n_used: int
    source: str = "z"  # z: reference side, t: probe side


def norm_stats(scores, n: int | None = None, mode: str = "adaptive_top_n", source: str = "z",
               sample_id=None) -> NormStats:
    """Mean and population standard deviation of the (top-n) cohort scores."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size < 2:
        raise DegenerateStatsError(f"need at least 2 cohort scores, got {s.size}", sample_id)
    if mode == "adaptive_top_n":
        if n is None or n < 2:
            raise ConfigError("adaptive_top_n needs n >= 2")
        s = np.sort(s)[::-1][:n]
    elif mode != "all":
        raise ConfigError(f"unknown stats mode {mode!r}")
    sigma = float(s.std())
    if sigma == 0.0:
        raise DegenerateStatsError("cohort scores have zero spread", sample_id)
    return NormStats(float(s.mean()), sigma, s.size, source)


def normalize(S: float, stats: NormStats) -> float:
    if not stats.sigma > 0:
        raise DegenerateStatsError("sigma must be positive")
    return (S - stats.mu) / stats.sigma


def s_norm(S: float, stats_r: NormStats, stats_p: NormStats) -> float:
    return 0.5 * (normalize(S, stats_r) + normalize(S, stats_p))


# -- enrolment and cohorts ----------------------------------------------------------------

@dataclass
class Enrollment:
    sample_id: str
    template: heplda.ProtectedTemplate
    bk_shares: tuple[BooleanShare, BooleanShare]
    # preprocessed embedding, kept only so the plaintext reference modes can run
    embedding: np.ndarray | None = None


def _py_rng(rng: np.random.Generator) -> random.Random:
    return random.Random(int(rng.integers(0, 2**63)))


def enroll(sample, pk: pl.PublicKey, model: PldaModel, form: ScoringForm, kbm: Kbm,
           config: PipelineConfig, rng: np.random.Generator | None = None,
           retain_plaintext: bool = True) -> Enrollment:
    """Secret-share the binary key (the plaintext is dropped at once) and encrypt the embedding."""
    rng = rng if rng is not None else np.random.default_rng()
    bits = binary_key(kbm, sample.frames, config.M, config.K).bits
    shares = share_bits(bits, rng, tag=sample.sample_id)
    del bits
    x = preprocess(np.asarray(sample.embedding)[None, :], model.norm_mean)[0]
    template = heplda.protect_reference(pk, form, x, config.scale_bits, _py_rng(rng))
    return Enrollment(sample.sample_id, template, shares, x if retain_plaintext else None)


@dataclass
class CohortStore:
    """Cohort entries with their preprocessed embeddings and stacked BK shares.

    ``side`` is ``reference`` (probe-alike entries scored against the
    reference), ``probe`` (reference-alike entries scored against the probe)
    or ``both`` when one physical store plays both roles.
    """

    ids: list
    embeddings: np.ndarray
    bk_shares: tuple[BooleanShare, BooleanShare]
    side: str = "both"
    templates: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise ConfigError("cohort ids must be unique")
        if self.side not in ("reference", "probe", "both"):
            raise ConfigError(f"unknown cohort side {self.side!r}")
        count = len(self.ids)
        if self.embeddings.shape[0] != count or self.bk_shares[0].bits.shape[0] != count:
            raise DimensionError("cohort ids disagree in length with the embeddings or key shares")

    def __len__(self) -> int:
        return len(self.ids)

    def template(self, j: int, pk: pl.PublicKey, form: ScoringForm, scale_bits: int,
                 rng: random.Random) -> heplda.ProtectedTemplate:
        t = self.templates.get(j)
        if t is None or t.key_id != pk.key_id or t.form_id != form.form_id:
            t = heplda.protect_reference(pk, form, self.embeddings[j], scale_bits, rng)
            self.templates[j] = t
        return t


def build_cohort_store(samples, kbm: Kbm, model: PldaModel, config: PipelineConfig,
                       rng: np.random.Generator | None = None, side: str = "both") -> CohortStore:
    rng = rng if rng is not None else np.random.default_rng()
    samples = list(samples)
    bits = np.array([binary_key(kbm, s.frames, config.M, config.K).bits for s in samples])
    shares = share_bits(bits, rng, tag="cohort")
    emb = preprocess(np.array([s.embedding for s in samples]), model.norm_mean)
    return CohortStore([s.sample_id for s in samples], emb, shares, side)


# -- trials ----------------------------------------------------------------------------

@dataclass
class TrialRecord:
    ref_id: str
    probe_id: str
    S: float
    R: np.ndarray  # reference-vs-cohort scores used for the statistics
    P: np.ndarray  # cohort-vs-probe scores used for the statistics
    stats_r: NormStats
    stats_p: NormStats
    S_prime: float
    R_ids: list
    P_ids: list
    mode: str
    label: str | None = None
    timing: dict = field(default_factory=dict)  # seconds, amortised over the batch
    channel: ChannelStats | None = None  # server link traffic of the batch


class Deployment:
    """Transport links between the roles.

    Uploads from the client and the dealer are one-way, so they always use
    in-process links; the server-to-server link follows the configured mode.
    """

    def __init__(self, config: PipelineConfig, record: bool = False):
        self.servers = connect_pair(config.net, config.net_mode, record=record)
        self.dealer = [connect_pair(config.net, "inproc", record) for _ in range(2)]
        self.client = [connect_pair(config.net, "inproc", record) for _ in range(2)]

    def close(self) -> None:
        for link in (self.servers, *self.dealer, *self.client):
            link.close()

    def server_transcript(self) -> list:
        out = []
        for end in self.servers:
            out.extend(end.transcript or [])
        return out


def _deliver(link: ChannelPair, msg_type: MsgType, payload: bytes) -> bytes:
    """Send from end 0 to end 1 of an upload link and return what arrived."""
    if link.mode == "socket":
        _, (t, data) = run_threads(lambda: link[0].send_frame(msg_type, payload),
                                   lambda: link[1].recv_frame(timeout=60))
    else:
        link[0].send_frame(msg_type, payload)
        t, data = link[1].recv_frame(timeout=0)
    if t != msg_type:
        raise ProtocolError(f"expected {msg_type.name}, got {MsgType(t).name}")
    return data


def _triple_payload(t: BeaverTriple) -> bytes:
    return t.a.tobytes() + t.b.tobytes() + t.c.tobytes()


def _triple_from_payload(data: bytes, party: int) -> BeaverTriple:
    if len(data) % 3:
        raise ProtocolError("triple block is not three equal parts")
    a, b, c = np.frombuffer(data, dtype=np.uint8).reshape(3, -1)
    return BeaverTriple(a.copy(), b.copy(), c.copy(), party)


def audit_transcript(transcript, secrets) -> None:
    """Raise if the server link carried anything but masks and picked indices,
    or if any of the given byte strings appears inside a payload."""
    allowed = {MsgType.AND_OPEN, MsgType.OPEN_INDEX}
    secrets = [bytes(s) for s in secrets if len(s) >= 8]
    for direction, mtype, payload in transcript:
        if mtype not in allowed:
            raise ProtocolError(f"server link carried a {MsgType(mtype).name} frame")
        for s in secrets:
            if s in payload:
                raise ProtocolError("plaintext value found in the server transcript")


class Pipeline:
    def __init__(self, kbm: Kbm, model: PldaModel, key: pl.Keypair, cohort: CohortStore,
                 config: PipelineConfig, probe_cohort: CohortStore | None = None,
                 record: bool = False):
        self.kbm = kbm
        self.model = model
        self.form = scoring_form(model)
        self.key = key
        self.config = config
        # R scores use the reference-side store, P scores the probe-side one
        self.ref_cohort = cohort
        self.probe_cohort = probe_cohort if probe_cohort is not None else cohort
        self.rng = np.random.default_rng(config.seed)
        self.py_rng = _py_rng(self.rng)
        self.deployment = Deployment(config, record)
        self._he_cache: dict = {}
        self._prune_cache: dict = {}
        self.he_time = 0.0
        self.he_count = 0

    @property
    def pk(self) -> pl.PublicKey:
        return self.key.public

    def close(self) -> None:
        self.deployment.close()

    def enroll(self, sample, retain_plaintext: bool = True) -> Enrollment:
        return enroll(sample, self.pk, self.model, self.form, self.kbm, self.config,
                      self.rng, retain_plaintext)

    def probe_embedding(self, sample) -> np.ndarray:
        return preprocess(np.asarray(sample.embedding)[None, :], self.model.norm_mean)[0]

    def probe_bits(self, sample) -> np.ndarray:
        return binary_key(self.kbm, sample.frames, self.config.M, self.config.K).bits

    # -- pruning ---------------------------------------------------------------------

    def _effective_n(self, n: int, store: CohortStore) -> int:
        if n > len(store):
            warnings.warn(f"n={n} exceeds the cohort size {len(store)}; using the full cohort",
                          stacklevel=3)
            return len(store)
        return n

    def _deal(self, nbits: int) -> tuple[TriplePool, TriplePool]:
        t0, t1 = deal_triples(nbits, self.rng)
        pools = []
        for party, (t, link) in enumerate(zip((t0, t1), self.deployment.dealer)):
            data = _deliver(link, MsgType.TRIPLE_BLOCK, _triple_payload(t))
            pools.append(TriplePool.from_block(_triple_from_payload(data, party)))
        return pools[0], pools[1]

    def _upload(self, shares: tuple[BooleanShare, BooleanShare]) -> tuple[BooleanShare, BooleanShare]:
        """Client -> servers: each server gets only its own share."""
        out = []
        for party, (s, link) in enumerate(zip(shares, self.deployment.client)):
            shape = s.bits.shape
            data = _deliver(link, MsgType.SHARE_UPLOAD, pack(s.bits).tobytes())
            bits = np.unpackbits(np.frombuffer(data, np.uint8).reshape(shape[:-1] + (-1,)),
                                 axis=-1, count=shape[-1], bitorder="little")
            out.append(BooleanShare(bits, party, s.tag))
        return out[0], out[1]

    def secure_prune_many(self, queries: list, store: CohortStore, n: int) -> list[PruneResult]:
        """Prune a list of (share0, share1) query keys against ``store``."""
        cfg = self.config
        results = []
        for start in range(0, len(queries), cfg.query_chunk):
            chunk = queries[start:start + cfg.query_chunk]
            s0 = BooleanShare(np.stack([q[0].bits for q in chunk]), 0, "batch")
            s1 = BooleanShare(np.stack([q[1].bits for q in chunk]), 1, "batch")
            n_bits = s0.bits.shape[1]
            pools = self._deal(prune_triple_bits(n_bits, len(store), n, cfg.K, len(chunk)))
            res = secure_prune((s0, s1), store.bk_shares, store.ids, n, pools,
                               self.deployment.servers, K=cfg.K, runner=cfg.runner,
                               seed=int(self.rng.integers(2**32)))
            results.extend(res)
        return results

    def _prune(self, items: list, store: CohortStore, n: int, mode: str) -> dict:
        """Pruned cohort positions per item id. ``items``: (id, shares or bits)."""
        key = (id(store), n, mode)
        cache = self._prune_cache.setdefault(key, {})
        todo = [(i, v) for i, v in items if i not in cache]
        if todo:
            if mode == "protected":
                t0 = time.perf_counter()
                before = self.deployment.servers.stats()
                res = self.secure_prune_many([v for _, v in todo], store, n)
                spent = self.deployment.servers.stats() - before
                per_query = (time.perf_counter() - t0 + simulated_time(spent, self.config.net)) / len(todo)
                for (i, _), r in zip(todo, res):
                    cache[i] = (r.positions, {"gmw": per_query}, spent)
            else:
                cohort_bits = reconstruct(*store.bk_shares)
                for i, bits in todo:
                    t0 = time.perf_counter()
                    pos = plaintext_prune(bits, cohort_bits, n)
                    cache[i] = (pos, {"prune": time.perf_counter() - t0}, None)
        return cache

    # -- scoring -----------------------------------------------------------------------

    def _he(self, template: heplda.ProtectedTemplate, x: np.ndarray, cache_key) -> float:
        hit = self._he_cache.get(cache_key)
        if hit is not None:
            return hit
        t0 = time.perf_counter()
        c = heplda.he_plda_score(self.pk, self.form, template, x, rng=self.py_rng)
        self.he_time += time.perf_counter() - t0
        self.he_count += 1
        value = heplda.decrypt_score(self.key, c, template.scale_bits)
        self._he_cache[cache_key] = value
        return value

    def _he_ref_side(self, enr: Enrollment, positions) -> np.ndarray:
        store = self.ref_cohort
        return np.array([self._he(enr.template, store.embeddings[j],
                                  ("R", enr.sample_id, store.ids[j])) for j in positions])

    def _he_probe_side(self, probe_id: str, y: np.ndarray, positions) -> np.ndarray:
        store = self.probe_cohort
        cfg = self.config
        return np.array([
            self._he(store.template(j, self.pk, self.form, cfg.scale_bits, self.py_rng), y,
                     ("P", probe_id, store.ids[j]))
            for j in positions])

    # -- trials -------------------------------------------------------------------------

    def run_trial(self, enr: Enrollment, probe, n: int | None = None, mode: str | None = None,
                  label: str | None = None) -> TrialRecord:
        return self.run_trials([(enr, probe, label)], n=n, mode=mode)[0]

    def run_trials(self, trials, n: int | None = None, mode: str | None = None) -> list[TrialRecord]:
        """Score (enrollment, probe[, label]) triples; pruning is batched over
        the distinct references and probes."""
        mode = mode or self.config.mode
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}")
        n = n or self.config.n
        trials = [t if len(t) == 3 else (t[0], t[1], None) for t in trials]
        refs = {e.sample_id: e for e, _, _ in trials}
        probes = {p.sample_id: p for _, p, _ in trials}
        emb = {pid: self.probe_embedding(p) for pid, p in probes.items()}
        n_r = self._effective_n(n, self.ref_cohort)
        n_p = self._effective_n(n, self.probe_cohort)

        if mode != "protected":
            for e in refs.values():
                if e.embedding is None:
                    raise ConfigError(f"{e.sample_id}: plaintext modes need a retained embedding")

        ref_prune = probe_prune = None
        if mode == "protected":
            items_r = [(rid, e.bk_shares) for rid, e in refs.items()]
            items_p = [(pid, self._upload(share_bits(self.probe_bits(p), self.rng, pid)))
                       for pid, p in probes.items()
                       if not self._pruned(pid, self.probe_cohort, n_p, mode)]
            if self.ref_cohort is self.probe_cohort:
                # one store, one batch: references and probes are just queries
                ref_prune = probe_prune = self._prune(items_r + items_p, self.ref_cohort, n_r, mode)
            else:
                ref_prune = self._prune(items_r, self.ref_cohort, n_r, mode)
                probe_prune = self._prune(items_p, self.probe_cohort, n_p, mode)
        elif mode == "plaintext_bk":
            ref_prune = self._prune([(rid, reconstruct(*e.bk_shares)) for rid, e in refs.items()],
                                    self.ref_cohort, n_r, mode)
            probe_prune = self._prune([(pid, self.probe_bits(p)) for pid, p in probes.items()],
                                      self.probe_cohort, n_p, mode)

        records = []
        for enr, probe, label in trials:
            pid = probe.sample_id
            y = emb[pid]
            timing = {}
            channel = None
            if mode == "plaintext_scores":
                S = plda_score(self.form, enr.embedding, y)
                r_all = score_matrix(self.form, enr.embedding, self.ref_cohort.embeddings)[0]
                p_all = score_matrix(self.form, self.probe_cohort.embeddings, y)[:, 0]
                r_pos = _top_by_score(r_all, n_r)
                p_pos = _top_by_score(p_all, n_p)
                R, P = r_all[r_pos], p_all[p_pos]
            else:
                r_pos, r_time, channel = ref_prune[enr.sample_id]
                p_pos, p_time, _ = probe_prune[pid]
                timing.update({k: r_time[k] + p_time[k] for k in r_time})
                if mode == "plaintext_bk":
                    S = plda_score(self.form, enr.embedding, y)
                    R = score_matrix(self.form, enr.embedding, self.ref_cohort.embeddings[r_pos])[0]
                    P = score_matrix(self.form, self.probe_cohort.embeddings[p_pos], y)[:, 0]
                else:
                    t0 = time.perf_counter()
                    S = self._he(enr.template, y, ("S", enr.sample_id, pid))
                    R = self._he_ref_side(enr, r_pos)
                    P = self._he_probe_side(pid, y, p_pos)
                    timing["he"] = time.perf_counter() - t0
            stats_r = norm_stats(R, mode="all", source="z", sample_id=enr.sample_id)
            stats_p = norm_stats(P, mode="all", source="t", sample_id=pid)
            records.append(TrialRecord(
                enr.sample_id, pid, float(S), R, P, stats_r, stats_p, s_norm(S, stats_r, stats_p),
                [self.ref_cohort.ids[j] for j in r_pos], [self.probe_cohort.ids[j] for j in p_pos],
                mode, label, timing, channel))
        return records

    def _pruned(self, item_id, store, n, mode) -> bool:
        return item_id in self._prune_cache.get((id(store), n, mode), {})


def _top_by_score(scores: np.ndarray, n: int) -> list[int]:
    return np.argsort(-scores, kind="stable")[:n].tolist()


# -- files -------------------------------------------------------------------------------

def write_trial_list(path, trials) -> None:
    vio.write_tsv(path, [(r, p, lab) for r, p, lab in trials])


def read_trial_list(path) -> list[tuple[str, str, str]]:
    rows = vio.read_tsv(path, 3)
    for r in rows:
        if r[2] not in ("target", "nontarget"):
            raise ConfigError(f"{path}: bad label {r[2]!r}")
    return [tuple(r) for r in rows]


def write_scores(path, records) -> None:
    vio.write_tsv(path, [(r.ref_id, r.probe_id, f"{r.S:.9g}", f"{r.S_prime:.9g}", r.label or "-")
                         for r in records])


def read_scores(path) -> list[tuple[str, str, float, float, str]]:
    return [(a, b, float(s), float(sp), lab) for a, b, s, sp, lab in vio.read_tsv(path, 5)]
