"""Tabular metric reports.

One row per target: the starting metrics followed by the signed deltas of
the refined structure, then an aggregate ``mean`` row.

.. code-block:: text

    target_id  lddt  gdt_ts  gdt_ha  rmsd  fape  delta_lddt  delta_gdt_ts  delta_gdt_ha
"""
import enum
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from backbone_refine.metrics import DeltaReport, MetricReport, delta

logger = logging.getLogger(__name__)

#: Column order of every report
REPORT_COLUMNS = [
    "target_id",
    "lddt",
    "gdt_ts",
    "gdt_ha",
    "rmsd",
    "fape",
    "delta_lddt",
    "delta_gdt_ts",
    "delta_gdt_ha",
]

#: Target id of the aggregate row
MEAN_ROW = "mean"


class ReportFormat(enum.Enum):
    tsv = "tsv"
    json = "json"


@dataclass(frozen=True)
class ReportRow:
    """Scores of one target before and, optionally, after refinement."""

    target_id: str
    start: MetricReport
    refined: Optional[MetricReport] = None

    def deltas(self) -> Optional[DeltaReport]:
        if self.refined is None:
            return None
        return delta(self.start, self.refined)

    def to_dict(self) -> dict:
        row = {"target_id": self.target_id, **self.start.to_dict()}
        d = self.deltas()
        row.update(d.to_dict() if d else {"delta_lddt": np.nan, "delta_gdt_ts": np.nan, "delta_gdt_ha": np.nan})
        return {c: row[c] for c in REPORT_COLUMNS}


def report_table(rows: Sequence[ReportRow], with_mean: bool = True) -> pd.DataFrame:
    """Report rows as a DataFrame in :py:data:`REPORT_COLUMNS` order.

    :param with_mean: Append the aggregate row, column means over targets
    """
    df = pd.DataFrame([r.to_dict() for r in rows], columns=REPORT_COLUMNS)
    if with_mean and len(df):
        mean = df[REPORT_COLUMNS[1:]].astype(float).mean(skipna=True)
        df.loc[len(df)] = [MEAN_ROW] + mean.tolist()
    return df


def format_report(rows: Sequence[ReportRow], fmt: Union[ReportFormat, str] = ReportFormat.tsv) -> str:
    """Serialise a report as tab separated text or JSON.

    TSV has a header line and 4 decimals. JSON is ``{"rows": [...], "mean": {...}}``
    with keys in column order and null for missing deltas.
    """
    fmt = ReportFormat(fmt)
    df = report_table(rows)
    if fmt == ReportFormat.tsv:
        return df.to_csv(sep="\t", index=False, float_format="%.4f", na_rep="")

    def clean(record: dict) -> dict:
        return {k: (None if isinstance(v, float) and np.isnan(v) else v) for k, v in record.items()}

    records = [clean(r) for r in df.to_dict(orient="records")]
    if records:
        doc = {"rows": records[:-1], "mean": records[-1]}
    else:
        doc = {"rows": [], "mean": None}
    return json.dumps(doc, indent=2) + "\n"


def write_report(rows: Sequence[ReportRow], path: Union[str, Path], fmt: Union[ReportFormat, str] = ReportFormat.tsv):
    """Write :py:func:`format_report` output to a file."""
    Path(path).write_text(format_report(rows, fmt))
    logger.info("Wrote %d report rows to %s", len(rows), path)


def read_report(path: Union[str, Path]) -> pd.DataFrame:
    """Read a TSV report back, including the aggregate row."""
    return pd.read_csv(path, sep="\t", dtype={"target_id": str})


def mean_deltas(rows: List[ReportRow]) -> DeltaReport:
    """Average deltas over the rows that have a refined structure."""
    deltas = [r.deltas() for r in rows if r.refined is not None]
    assert deltas, "No refined rows to average"
    return DeltaReport(
        delta_gdt_ts=float(np.mean([d.delta_gdt_ts for d in deltas])),
        delta_gdt_ha=float(np.mean([d.delta_gdt_ha for d in deltas])),
        delta_lddt=float(np.mean([d.delta_lddt for d in deltas])),
    )
