import csv
import io
import json

import pytest

from winofuse import (BUILTIN_SUITES, BenchResult, InvalidParameterError,
                      LayerSpec, builtin_suite, emit_report, max_rel_error,
                      new_tensor, run_suite)
from winofuse import bench as bench_mod
from winofuse.bench import CSV_COLUMNS


def small_entries():
    return [("tiny_3to4_10", LayerSpec(2, 3, 4, 10, 10, kernel=3,
                                       pad_lo=1, pad_hi=1))]


def test_builtin_suites_pinned():
    assert sorted(BUILTIN_SUITES) == ["resnet", "vgg"]
    labels = [lb for lb, _ in BUILTIN_SUITES["resnet"]]
    assert labels == ["resnet_64ch_56", "resnet_128ch_28",
                      "resnet_256ch_14", "resnet_512ch_7"]
    for lb, spec in BUILTIN_SUITES["resnet"] + BUILTIN_SUITES["vgg"]:
        assert spec.batch == 64
        assert spec.kernel == 3 and spec.pad_lo == spec.pad_hi == 1
        assert spec.in_channels == spec.out_channels
        assert spec.height == spec.width
    first = BUILTIN_SUITES["vgg"][0][1]
    assert (first.in_channels, first.height) == (64, 224)
    last = BUILTIN_SUITES["vgg"][-1][1]
    assert (last.in_channels, last.height) == (512, 28)

    copy = builtin_suite("resnet")
    copy.clear()
    assert len(BUILTIN_SUITES["resnet"]) == 4
    with pytest.raises(InvalidParameterError):
        builtin_suite("alexnet")


def test_max_rel_error():
    ref = new_tensor((1, 1, 2, 2), fill=2)
    same = new_tensor((1, 1, 2, 2), fill=2)
    assert max_rel_error(same, ref) == 0.0
    bumped = new_tensor((1, 1, 2, 2), fill=2)
    bumped.data[0, 0, 0, 0] = 2.0002
    assert max_rel_error(bumped, ref) == pytest.approx(1e-4, rel=1e-3)
    zeros = new_tensor((1, 1, 2, 2))
    off = new_tensor((1, 1, 2, 2), fill=1e-20)
    assert max_rel_error(off, zeros) > 0  # scale floor keeps this finite


def test_run_suite_shapes_and_fields():
    results = run_suite(small_entries(), ("direct", "three_stage", "fused"),
                        tile=4, r=8, workers=1, reps=4, warmup=1)
    assert [r.engine for r in results] == ["direct", "three_stage", "fused"]
    for res in results:
        assert res.label == "tiny_3to4_10"
        assert res.error is None
        assert len(res.times_ms) == 4
        assert res.min_ms <= res.median_ms
        assert res.flops > 0
        assert res.verify == "skipped"
    direct, staged, fused = results
    assert direct.tasks == 0 and staged.tasks == 0
    assert fused.tasks == fused.stats.n_task >= 1
    assert fused.stats.r == 8


def test_run_suite_runs_warmup_plus_reps(monkeypatch):
    calls = []
    real = bench_mod.run_engine

    def counting(engine, inp, opnd, spec, cfg=None, **kw):
        calls.append(engine)
        return real(engine, inp, opnd, spec, cfg, **kw)

    monkeypatch.setattr(bench_mod, "run_engine", counting)
    run_suite(small_entries(), ("fused",), tile=4, r=8, workers=1,
              reps=5, warmup=1)
    assert calls.count("fused") == 6


def test_run_suite_batch_override():
    entries = [("b8", LayerSpec(8, 4, 4, 12, 12, kernel=3,
                                pad_lo=1, pad_hi=1))]
    res = run_suite(entries, ("fused",), tile=5, r=4, workers=1,
                    reps=2, warmup=0, batch=3)[0]
    assert res.stats.n_tile == 3 * 16
    res = run_suite(entries, ("fused",), tile=5, r=4, workers=1,
                    reps=2, warmup=0)[0]
    assert res.stats.n_tile == 8 * 16


def test_run_suite_verify_is_deterministic():
    kw = dict(tile=4, r=8, workers=1, reps=1, warmup=0, verify=True,
              seed=99)
    a = run_suite(small_entries(), ("direct", "fused"), **kw)
    b = run_suite(small_entries(), ("direct", "fused"), **kw)
    assert a[0].verify == "pass" and a[0].max_rel_err == 0.0
    assert a[1].verify == "pass"
    assert 0.0 < a[1].max_rel_err <= 1e-4
    assert a[1].max_rel_err == b[1].max_rel_err


def test_run_suite_records_errors_and_continues():
    entries = [("bad_kernel5", LayerSpec(1, 2, 2, 8, 8, kernel=5,
                                         pad_lo=1, pad_hi=1))] \
        + small_entries()
    results = run_suite(entries, ("direct", "fused"), tile=4, r=4,
                        workers=1, reps=1, warmup=0)
    by_key = {(r.label, r.engine): r for r in results}
    assert len(results) == 4
    # 5x5 kernels cannot ride a 4-wide tile; direct still works
    assert by_key[("bad_kernel5", "direct")].error is None
    bad = by_key[("bad_kernel5", "fused")]
    assert bad.error is not None
    assert bad.verify == "error"
    assert by_key[("tiny_3to4_10", "fused")].error is None

    text = emit_report(results, "json")
    rows = json.loads(text)
    assert "error" in rows[1] and "error" not in rows[0]
    table = emit_report(results, "table")
    assert "error:" in table


def test_run_suite_argument_validation():
    with pytest.raises(InvalidParameterError):
        run_suite(small_entries(), ())
    with pytest.raises(InvalidParameterError):
        run_suite(small_entries(), ("fused",), reps=0)
    with pytest.raises(InvalidParameterError):
        run_suite(small_entries(), ("fused",), warmup=-1)


def test_reports_csv_json_agree():
    results = run_suite(small_entries(), ("direct", "fused"), tile=4, r=8,
                        workers=1, reps=2, warmup=0, verify=True)
    text = emit_report(results, "csv")
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == CSV_COLUMNS
    assert len(rows) == 3
    jrows = json.loads(emit_report(results, "json"))
    for crow, jrow in zip(rows[1:], jrows):
        rec = dict(zip(CSV_COLUMNS, crow))
        assert rec["label"] == jrow["label"]
        assert rec["engine"] == jrow["engine"]
        assert int(rec["T"]) == jrow["T"]
        assert int(rec["R"]) == jrow["R"]
        assert int(rec["flops"]) == jrow["flops"]
        assert rec["verify"] == jrow["verify"]
        assert float(rec["median_ms"]) == jrow["median_ms"]
    assert jrows[0]["R"] == 0       # non-fused rows do not report R
    assert jrows[1]["R"] == 8


def test_table_speedup_column():
    mk = dict(label="layer", tile=7, r=24, workers=1, times_ms=[1.0],
              flops=10, tasks=0)
    staged = BenchResult(engine="three_stage", median_ms=4.0, min_ms=4.0,
                         **mk)
    fused = BenchResult(engine="fused", median_ms=2.0, min_ms=2.0, **mk)
    table = emit_report([staged, fused], "table")
    assert "speedup" in table.splitlines()[0]
    assert "2.00x" in table

    with pytest.raises(InvalidParameterError):
        emit_report([], "table")
    with pytest.raises(InvalidParameterError):
        emit_report([staged], "html")


def test_emit_report_writes_file(tmp_path):
    res = BenchResult(label="x", engine="direct", tile=7, r=24, workers=1,
                      median_ms=1.0, min_ms=1.0, flops=1, tasks=0)
    out = tmp_path / "r.csv"
    text = emit_report([res], "csv", path=out)
    assert out.read_text() == text
