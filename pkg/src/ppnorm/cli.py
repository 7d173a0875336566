"""Command-line entry point: ``ppnorm <command> [options]``.

Typical flow::

    ppnorm synth --out work/corpus
    ppnorm keygen --key-bits 512 --out work/key
    ppnorm enroll --corpus work/corpus --key work/key --out work/enrolled
    ppnorm trial --corpus work/corpus --key work/key --enrolled work/enrolled \\
        --n 50 --mode protected --out work/scores.tsv
    ppnorm eval --scores work/scores.tsv
    ppnorm bench --dry-run --out work/bench
    ppnorm report
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, heplda
from . import io as vio
from . import paillier as pl
from . import synthcorpus as sc
from .binarykey import Kbm, build_kbm
from .errors import PPNormError
from .metrics import MetricConfig, evaluate
from .pipeline import (MODES, REFERENCE_N_GRID, Enrollment, Pipeline, PipelineConfig,
                       build_cohort_store, enroll, read_scores, read_trial_list, write_scores)
from .plda import PldaModel, fit_backend, preprocess, scoring_form
from .smpc.shares import BooleanShare

KBM_FILE = "kbm.vcdb"
PLDA_FILE = "plda.model"


def _pipeline_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    changes = {k: v for k, v in {
        "n": getattr(args, "n", None), "mode": getattr(args, "mode", None),
        "key_bits": getattr(args, "key_bits", None), "scale_bits": getattr(args, "scale_bits", None),
        "seed": args.seed, "bandwidth_bps": args.bandwidth_bps,
        "rtt_ms": args.rtt_ms}.items() if v is not None}
    return cfg.replace(**changes)


def _load_backend(corpus_dir: Path):
    corpus = sc.load_corpus(corpus_dir)
    return corpus, Kbm.load(corpus_dir / KBM_FILE), PldaModel.load(corpus_dir / PLDA_FILE)


# -- commands ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    seed = 1 if args.seed is None else args.seed
    cfg = bench.bench_corpus_config(seed) if args.benchmark else sc.CorpusConfig(seed=seed)
    if args.trial_speakers:
        cfg.trial_speakers = args.trial_speakers
    corpus = sc.build_corpus(cfg)
    out = sc.save_corpus(corpus, args.out)
    build_kbm(corpus.ubm, [s.frames for s in corpus.by_role("anchor")]).save(out / KBM_FILE)
    X, y = sc.training_set(corpus)
    fit_backend(X, y).save(out / PLDA_FILE)
    print(f"wrote {len(corpus.samples)} samples and {len(corpus.trials)} trials to {out}")
    return 0


def cmd_keygen(args) -> int:
    key = pl.keygen(args.key_bits or pl.DEFAULT_KEY_BITS, seed=args.seed)
    out = Path(args.out)
    pl.save_keypair(key, out)
    pl.save_keypair(key, out.with_suffix(".pub"), public_only=True)
    print(f"{key.key_bits}-bit key {key.public.key_id} written to {out}")
    return 0


def cmd_enroll(args) -> int:
    cfg = _pipeline_config(args)
    corpus, kbm, model = _load_backend(Path(args.corpus))
    key = pl.load_key(args.key)
    pk = key.public if isinstance(key, pl.Keypair) else key
    form = scoring_form(model)
    out = Path(args.out)
    (out / "templates").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    shares = ([], [])
    for s in corpus.by_role("enroll"):
        e = enroll(s, pk, model, form, kbm, cfg, rng, retain_plaintext=False)
        heplda.save_template(e.template, out / "templates" / f"{s.sample_id}.hetp")
        for party in (0, 1):
            shares[party].append((vio.id_hash(s.sample_id), e.bk_shares[party].bits))
    for party in (0, 1):
        vio.write_bitstore(out / f"shares{party}.shr", vio.SHR_MAGIC, kbm.N, party, shares[party])
    print(f"enrolled {len(shares[0])} references into {out}")
    return 0


def _load_enrollments(enrolled: Path, corpus, model) -> dict:
    stores = [dict(vio.read_bitstore(enrolled / f"shares{p}.shr", vio.SHR_MAGIC)[2]) for p in (0, 1)]
    out = {}
    for path in sorted((enrolled / "templates").glob("*.hetp")):
        sid = path.stem
        h = vio.id_hash(sid)
        shares = (BooleanShare(stores[0][h], 0, sid), BooleanShare(stores[1][h], 1, sid))
        # the plaintext reference modes read the embedding back from the corpus
        x = preprocess(corpus.samples[sid].embedding[None, :], model.norm_mean)[0]
        out[sid] = Enrollment(sid, heplda.load_template(path), shares, x)
    return out


def cmd_trial(args) -> int:
    cfg = _pipeline_config(args)
    corpus_dir = Path(args.corpus)
    corpus, kbm, model = _load_backend(corpus_dir)
    key = pl.load_key(args.key)
    if not isinstance(key, pl.Keypair):
        raise PPNormError("trial needs the private key file to decrypt scores")
    enrolled = _load_enrollments(Path(args.enrolled), corpus, model)
    trials = read_trial_list(args.trials) if args.trials else corpus.trials
    if args.limit:
        trials = trials[: args.limit]
    store = build_cohort_store(corpus.by_role("cohort"), kbm, model, cfg,
                               np.random.default_rng(cfg.seed + 1))
    pipe = Pipeline(kbm, model, key, store, cfg)
    try:
        records = pipe.run_trials([(enrolled[r], corpus.samples[p], lab) for r, p, lab in trials])
    finally:
        pipe.close()
    write_scores(args.out, records)
    print(f"scored {len(records)} trials ({cfg.mode}, n={cfg.n}) -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    rows = read_scores(args.scores)
    labels = np.array([r[4] == "target" for r in rows])
    column = 2 if args.raw else 3
    m = evaluate([r[column] for r in rows], labels, MetricConfig(args.effective_prior))
    print(f"Cllr_min {m.cllr_min:.4f}  minDCF {m.min_dcf:.4f}  EER {100 * m.eer:.2f}%")
    return 0


def cmd_bench(args) -> int:
    pcfg = _pipeline_config(args).replace(key_bits=args.key_bits or 512)
    grid = tuple(args.n) if args.n else REFERENCE_N_GRID
    seed = 1 if args.seed is None else args.seed
    cfg = bench.BenchConfig(corpus=bench.bench_corpus_config(seed), pipeline=pcfg,
                            n_grid=grid, dry_run=args.dry_run,
                            timing_key_bits=args.timing_key_bits,
                            protected_n_max=args.protected_n_max)
    report = bench.bench_run(cfg)
    print(report.table())
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.with_suffix(".txt").write_text(report.table() + "\n")
        out.with_suffix(".jsonl").write_text(report.to_jsonl())
        out.with_suffix(".info.json").write_text(json.dumps(report.info, indent=2, default=str))
    return 0


def cmd_report(args) -> int:
    rows = bench.reference_ratio_rows()
    print(bench.format_table(rows))
    if args.out:
        Path(args.out).write_text("".join(json.dumps(r) + "\n" for r in rows))
    return 0


# -- parser -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", help="key = value pipeline config file")
    common.add_argument("--bandwidth-bps", type=float, default=None)
    common.add_argument("--rtt-ms", type=float, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    scoring = argparse.ArgumentParser(add_help=False)
    scoring.add_argument("--n", type=int, default=None)
    scoring.add_argument("--mode", choices=MODES, default=None)
    scoring.add_argument("--key-bits", type=int, default=None)
    scoring.add_argument("--scale-bits", type=int, default=None)

    p = argparse.ArgumentParser(prog="ppnorm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus with its KBM and PLDA backend")
    s.add_argument("--out", required=True)
    s.add_argument("--trial-speakers", type=int, default=None)
    s.add_argument("--benchmark", action="store_true", help="use the channel-shift benchmark preset")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("keygen", parents=[common, scoring], help="generate a Paillier keypair")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_keygen)

    s = sub.add_parser("enroll", parents=[common, scoring], help="protect the enrolment samples")
    s.add_argument("--corpus", required=True)
    s.add_argument("--key", required=True, help="public or private key file")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_enroll)

    s = sub.add_parser("trial", parents=[common, scoring], help="score and normalise trials")
    s.add_argument("--corpus", required=True)
    s.add_argument("--key", required=True, help="private key file")
    s.add_argument("--enrolled", required=True)
    s.add_argument("--trials", help="trial list (default: the corpus trials)")
    s.add_argument("--limit", type=int, default=None, help="score only the first N trials")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_trial)

    s = sub.add_parser("eval", parents=[common], help="metrics of a score file")
    s.add_argument("--scores", required=True)
    s.add_argument("--raw", action="store_true", help="evaluate raw instead of normalised scores")
    s.add_argument("--effective-prior", type=float, default=0.01)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", parents=[common], help="run the benchmark over an n grid")
    s.add_argument("--n", type=int, action="append", help="grid value (repeatable)")
    s.add_argument("--key-bits", type=int, default=None, help="scoring key size (default 512)")
    s.add_argument("--timing-key-bits", type=int, default=pl.DEFAULT_KEY_BITS)
    s.add_argument("--protected-n-max", type=int, default=50)
    s.add_argument("--dry-run", action="store_true")
    s.add_argument("--out", help="output prefix for .txt / .jsonl")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("report", parents=[common], help="recompute the reference improvement-ratio table")
    s.add_argument("--out", help="write JSONL here")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PPNormError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
