import json

import pytest

from ppnorm import bench
from ppnorm import synthcorpus as sc
from ppnorm.errors import ConfigError
from ppnorm.pipeline import PipelineConfig

from conftest import SMALL

AZ_EXPECTED = (18.54, 15.68, 13.59, 11.92, 10.48, 9.48, 8.48)
AT_EXPECTED = (14.45, 11.34, 9.35, 7.95, 6.82, 6.04, 5.12)


def test_improvement_ratio_examples():
    az = bench.TimingLedger(28.2975, 156.583, 0.32, 11640, 50)
    assert bench.improvement_ratio(11640, az) == pytest.approx(3724.80 / 200.8805)
    at = bench.TimingLedger(16.8592, 51.572, 0.32, 3812, 50)
    assert bench.improvement_ratio(3812, at) == pytest.approx(14.45, abs=0.01)
    assert bench.improvement_ratio(500, bench.TimingLedger(0.0, 0.0, 0.7, 500, 500)) == 1.0


def test_improvement_ratio_errors():
    with pytest.raises(ZeroDivisionError):
        bench.improvement_ratio(10, bench.TimingLedger(0.0, 0.0, 0.0, 10, 5))
    with pytest.raises(ConfigError):
        bench.TimingLedger(-1.0, 0.0, 0.1, 10, 5)


def test_reference_ratios_reproduced():
    rows = bench.reference_ratio_rows()
    assert len(rows) == 14
    az = [r["ratio"] for r in rows if r["norm"] == "az-norm"]
    at = [r["ratio"] for r in rows if r["norm"] == "at-norm"]
    for got, want in zip(az + at, AZ_EXPECTED + AT_EXPECTED):
        assert abs(got - want) <= 0.1
    for r in rows:
        assert r["ratio"] == pytest.approx(r["expected"], abs=1e-9)


def test_format_table():
    text = bench.format_table([{"a": 1, "b": 0.123456}, {"a": None, "c": "x"}])
    lines = text.splitlines()
    assert lines[0].split() == ["a", "b", "c"]
    assert lines[2].split() == ["1", "0.1235", "-"]
    assert lines[3].split() == ["-", "-", "x"]
    assert len({len(line) for line in lines}) == 1


@pytest.fixture(scope="module")
def small_bench():
    return bench.BenchConfig(corpus=sc.CorpusConfig(**SMALL),
                             pipeline=PipelineConfig(key_bits=512, seed=2),
                             n_grid=(4, 8), timing_key_bits=512, timing_samples=2,
                             protected_n_max=4)


def test_dry_run(small_bench):
    small_bench.dry_run = True
    report = bench.bench_run(small_bench)
    small_bench.dry_run = False
    assert len(report.rows) == 2 + 1
    assert report.rows[0]["system"] == "baseline"
    for row in report.rows[1:]:
        assert row["t_bk"] == row["t_gmw"] == row["t_he_per_cmp"] == 0.0
        assert row["protected_source"] == "plaintext_bk"
        for key in ("asnorm_eer", "asnorm_min_dcf", "asnorm_cllr_min", "protected_eer"):
            assert 0.0 <= row[key] <= 1.0
    assert report.info["he_comparisons"] == 0
    assert [json.loads(line)["system"] for line in report.to_jsonl().splitlines()] == \
        ["baseline", "as-norm", "as-norm"]


def test_timed_run(small_bench):
    report = bench.bench_run(small_bench)
    first, second = report.rows[1], report.rows[2]
    assert first["protected_source"] == "protected"
    assert second["protected_source"] == "plaintext_bk"
    for row in (first, second):
        assert row["t_gmw"] > 0 and row["t_he_per_cmp"] > 0 and row["rounds"] > 0
        assert row["ratio"] > 0
    assert report.info["he_comparisons"] > 0
    assert "ratio" in report.table()


def test_grid_beyond_cohort(small_bench):
    too_big = bench.BenchConfig(corpus=small_bench.corpus, pipeline=small_bench.pipeline,
                                n_grid=(1000,), dry_run=True)
    with pytest.raises(ConfigError):
        bench.bench_run(too_big)
