"""Benchmark harness and the runtime improvement-ratio report.

The ratio compares scoring the whole cohort with HE-PLDA against the
pruned route (BK extraction + secure pruning + n HE-PLDA comparisons).
Reference per-component timings from the original large-scale deployment
ship here as a dataset, so its ratios can be recomputed without that hardware.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import binarykey as bk
from . import heplda
from . import paillier as pl
from . import plda
from . import synthcorpus as sc
from .errors import ConfigError
from .metrics import MetricConfig, evaluate
from .pipeline import REFERENCE_N_GRID, Pipeline, PipelineConfig, build_cohort_store
from .smpc.protocols import prune_triple_bits, secure_prune
from .smpc.shares import deal_triples, share_bits
from .transport import connect_pair, simulated_time


@dataclass(frozen=True)
class TimingLedger:
    t_bk: float
    t_gmw: float
    t_he_per_cmp: float
    cohort_size: int
    n: int

    def __post_init__(self):
        if min(self.t_bk, self.t_gmw, self.t_he_per_cmp) < 0 or self.cohort_size < 0 or self.n < 0:
            raise ConfigError("timings and counts must be nonnegative")


def improvement_ratio(full_cohort_size: int, ledger: TimingLedger) -> float:
    denom = ledger.t_bk + ledger.t_gmw + ledger.n * ledger.t_he_per_cmp
    if denom <= 0:
        raise ZeroDivisionError("pruned-route time is zero")
    return full_cohort_size * ledger.t_he_per_cmp / denom


# -- reference timings ---------------------------------------------------------------

REFERENCE_T_HE = 0.32  # seconds per HE-PLDA comparison
REFERENCE_TIMINGS = {
    "az": {
        "cohort": 11640,
        "t_bk": 28.2975,
        "t_gmw": (156.583, 177.229, 197.791, 220.220, 247.070, 268.772, 282.889),
        "ratio": (18.5423672282775, 15.681618682547, 13.5897711870436, 11.918692553217,
                  10.4815437540011, 9.47618678121808, 8.48113500756512),
    },
    "at": {
        "cohort": 3812,
        "t_bk": 16.8592,
        "t_gmw": (51.572, 58.718, 65.667, 72.550, 82.047, 89.239, 93.555),
        "ratio": (14.4477396981211, 11.3392057052981, 9.34555667750995, 7.95154397519836,
                  6.81832155621214, 6.03587760801432, 5.11647376708267),
    },
}


def reference_ratio_rows() -> list[dict]:
    """Recompute every reference improvement ratio from the reference timings."""
    rows = []
    for side, ref in REFERENCE_TIMINGS.items():
        for n, t_gmw, expected in zip(REFERENCE_N_GRID, ref["t_gmw"], ref["ratio"]):
            ledger = TimingLedger(ref["t_bk"], t_gmw, REFERENCE_T_HE, ref["cohort"], n)
            rows.append({"norm": f"{side}-norm", "n": n, "t_bk": ref["t_bk"], "t_gmw": t_gmw,
                         "t_he_per_cmp": REFERENCE_T_HE, "cohort": ref["cohort"],
                         "ratio": improvement_ratio(ref["cohort"], ledger), "expected": expected})
    return rows


# -- desk benchmark -----------------------------------------------------------------------

def bench_corpus_config(seed: int = 1) -> sc.CorpusConfig:
    """Channel-shift benchmark: 4000 trials, shift of norm sqrt(D)."""
    return sc.CorpusConfig(seed=seed, trial_speakers=200, shift_norm=float(np.sqrt(32)))


@dataclass
class BenchConfig:
    corpus: sc.CorpusConfig = field(default_factory=bench_corpus_config)
    pipeline: PipelineConfig = field(
        default_factory=lambda: PipelineConfig(key_bits=512, mode="protected"))
    n_grid: tuple = REFERENCE_N_GRID
    protected_n_max: int = 50  # larger n take their scores from plaintext_bk (identical ids)
    timing_key_bits: int = pl.DEFAULT_KEY_BITS
    timing_samples: int = 5
    dry_run: bool = False
    metric: MetricConfig = field(default_factory=MetricConfig)


@dataclass
class BenchReport:
    rows: list
    info: dict

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r, sort_keys=True) for r in self.rows) + "\n"

    def table(self) -> str:
        return format_table(self.rows)


def _metric_cells(prefix: str, m) -> dict:
    return {f"{prefix}_{k}": v for k, v in m.as_dict().items()}


def _time_he(key: pl.Keypair, form, dim: int, samples: int, scale_bits: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(dim)
    x /= np.linalg.norm(x)
    tmpl = heplda.protect_reference(key.public, form, x, scale_bits)
    t0 = time.perf_counter()
    for _ in range(samples):
        y = rng.standard_normal(dim)
        heplda.he_plda_score(key.public, form, tmpl, y / np.linalg.norm(y))
    return (time.perf_counter() - t0) / samples


def _time_gmw(store, query_bits: np.ndarray, n: int, cfg: PipelineConfig, seed: int):
    """One query against the full cohort: (compute + simulated network, stats)."""
    rng = np.random.default_rng(seed)
    shares = share_bits(query_bits, rng)
    pools = deal_triples(prune_triple_bits(query_bits.size, len(store), n, cfg.K), rng)
    with connect_pair(cfg.net, cfg.net_mode) as link:
        res = secure_prune(shares, store.bk_shares, store.ids, n, pools, link, K=cfg.K,
                           runner=cfg.runner, seed=seed)
        stats = link.stats()
    return res.compute_time + simulated_time(stats, cfg.net), stats


def bench_run(config: BenchConfig | None = None) -> BenchReport:
    config = config or BenchConfig()
    pcfg = config.pipeline
    corpus = sc.build_corpus(config.corpus)
    kbm = bk.build_kbm(corpus.ubm, [s.frames for s in corpus.by_role("anchor")])
    X, y = sc.training_set(corpus)
    model = plda.fit_backend(X, y)
    form = plda.scoring_form(model)
    grid = [n for n in config.n_grid]
    cohort = corpus.by_role("cohort")
    if max(grid) > len(cohort):
        raise ConfigError(f"n grid reaches {max(grid)} but the cohort has {len(cohort)} entries")

    rng = np.random.default_rng(pcfg.seed)
    store = build_cohort_store(cohort, kbm, model, pcfg, rng)
    key = pl.keygen(pcfg.key_bits, seed=pcfg.seed)
    pipe = Pipeline(kbm, model, key, store, pcfg)
    enrolled = {s.sample_id: pipe.enroll(s) for s in corpus.by_role("enroll")}
    trials = [(enrolled[r], corpus.samples[p], lab) for r, p, lab in corpus.trials]
    labels = np.array([lab == "target" for _, _, lab in corpus.trials])

    probes = corpus.by_role("probe")
    t0 = time.perf_counter()
    probe_bits = [pipe.probe_bits(s) for s in probes[: max(1, config.timing_samples)]]
    t_bk = (time.perf_counter() - t0) / len(probe_bits)

    t_he = t_he_desk = 0.0
    if not config.dry_run:
        t_he_desk = _time_he(key, form, model.dim, config.timing_samples, pcfg.scale_bits, pcfg.seed)
        big = key if config.timing_key_bits == pcfg.key_bits else pl.keygen(
            config.timing_key_bits, seed=pcfg.seed)
        t_he = _time_he(big, form, model.dim, config.timing_samples, pcfg.scale_bits, pcfg.seed)

    baseline = None
    rows = []
    for n in grid:
        conv = pipe.run_trials(trials, n=n, mode="plaintext_scores")
        if baseline is None:
            baseline = evaluate([r.S for r in conv], labels, config.metric)
            rows.append({"system": "baseline", "n": None, **_metric_cells("baseline", baseline)})
        source = "protected" if (not config.dry_run and n <= config.protected_n_max) else "plaintext_bk"
        prot = pipe.run_trials(trials, n=n, mode=source)
        row = {"system": "as-norm", "n": n, "protected_source": source,
               **_metric_cells("asnorm", evaluate([r.S_prime for r in conv], labels, config.metric)),
               **_metric_cells("protected", evaluate([r.S_prime for r in prot], labels, config.metric))}
        if config.dry_run:
            row.update(t_bk=0.0, t_gmw=0.0, t_he_per_cmp=0.0, rounds=0, bytes=0, ratio=None)
        else:
            t_gmw, stats = _time_gmw(store, probe_bits[0], n, pcfg, pcfg.seed + n)
            ledger = TimingLedger(t_bk, t_gmw, t_he, len(store), n)
            row.update(t_bk=t_bk, t_gmw=t_gmw, t_he_per_cmp=t_he, rounds=stats.rounds,
                       bytes=stats.total_bytes, ratio=improvement_ratio(len(store), ledger))
        rows.append(row)
    info = {"trials": len(trials), "cohort": len(store), "key_bits": pcfg.key_bits,
            "timing_key_bits": config.timing_key_bits, "t_he_scoring_key": t_he_desk,
            "dry_run": config.dry_run, "he_comparisons": pipe.he_count,
            "corpus": asdict(config.corpus)}
    pipe.close()
    return BenchReport(rows, info)


# -- formatting ---------------------------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def format_table(rows: list[dict], columns: list[str] | None = None) -> str:
    """Aligned plain-text table over the union of row keys."""
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns)
    cells = [[_cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)
