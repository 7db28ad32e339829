"""Tabular metric reports."""
import json

import numpy as np
import pytest

from backbone_refine.metrics import MetricReport
from backbone_refine.report import REPORT_COLUMNS, ReportRow, format_report, mean_deltas, read_report, report_table, write_report


@pytest.fixture
def rows():
    """One refined and one unrefined target."""
    a = MetricReport(lddt=60.0, gdt_ts=50.0, gdt_ha=30.0, rmsd=3.0, fape=2.0)
    b = MetricReport(lddt=70.0, gdt_ts=62.5, gdt_ha=40.0, rmsd=2.0, fape=1.5)
    return [ReportRow("t1", a, b), ReportRow("t2", b)]


def test_column_order(rows):
    """Starting metrics come first, signed deltas after."""
    df = report_table(rows)
    assert list(df.columns) == REPORT_COLUMNS
    assert df["target_id"].tolist() == ["t1", "t2", "mean"]
    assert df.loc[0, "delta_gdt_ts"] == pytest.approx(12.5)
    assert np.isnan(df.loc[1, "delta_lddt"])


def test_mean_row(rows):
    """The aggregate row averages targets and skips missing deltas."""
    df = report_table(rows)
    assert df.loc[2, "lddt"] == pytest.approx(65.0)
    assert df.loc[2, "delta_lddt"] == pytest.approx(10.0)
    assert len(report_table(rows, with_mean=False)) == 2


def test_json_nulls(rows):
    """Missing deltas are null in JSON."""
    doc = json.loads(format_report(rows, "json"))
    assert [r["target_id"] for r in doc["rows"]] == ["t1", "t2"]
    assert doc["rows"][1]["delta_gdt_ha"] is None
    assert list(doc["rows"][0]) == REPORT_COLUMNS
    assert doc["mean"]["target_id"] == "mean"


def test_empty_report():
    """No rows still gives a header and an empty JSON document."""
    assert format_report([], "tsv").splitlines() == ["\t".join(REPORT_COLUMNS)]
    assert json.loads(format_report([], "json")) == {"rows": [], "mean": None}


def test_tsv_roundtrip(rows, tmp_path):
    """Written TSV reads back with four decimals."""
    path = tmp_path / "report.tsv"
    write_report(rows, path)
    df = read_report(path)
    assert df["target_id"].tolist() == ["t1", "t2", "mean"]
    assert df.loc[0, "gdt_ts"] == pytest.approx(50.0)
    assert np.isnan(df.loc[1, "delta_gdt_ts"])


def test_mean_deltas(rows):
    """Only refined rows enter the average."""
    d = mean_deltas(rows)
    assert d.delta_gdt_ts == pytest.approx(12.5)
    assert d.delta_gdt_ha == pytest.approx(10.0)
    with pytest.raises(AssertionError):
        mean_deltas([rows[1]])
