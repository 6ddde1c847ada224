"""Consistency screening: does the perceived graph match the recorded one?"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable

from .chem.geometry import Geometry
from .chem.perception import perceive_bonds
from .fingerprint import canonical_key

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScreenRow:
    record_id: str
    consistent: bool
    reason: str = ""


@dataclass
class ScreenReport:
    rows: list[ScreenRow] = field(default_factory=list)

    @property
    def n_flagged(self) -> int:
        return sum(1 for r in self.rows if not r.consistent)

    @property
    def n_consistent(self) -> int:
        return len(self.rows) - self.n_flagged

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["record_id", "consistent", "reason"])
        for r in self.rows:
            w.writerow([r.record_id, int(r.consistent), r.reason])
        return buf.getvalue()


def screen_record(geom: Geometry, reference_key: str, delta_pm: float = 40.0) -> tuple[bool, str]:
    try:
        graph = perceive_bonds(geom, delta_pm)
    except Exception as exc:  # any perception failure marks the record inconsistent
        return False, f"perception failed: {exc}"
    if not graph.resolved:
        return False, "valence unresolved"
    if canonical_key(graph) != reference_key:
        return False, "graph differs from reference"
    return True, ""


def screen_dataset(records: Iterable[tuple[str, Geometry, str]], delta_pm: float = 40.0) -> ScreenReport:
    """``records`` yields ``(record id, geometry, reference canonical key)``."""
    report = ScreenReport()
    for rid, geom, key in records:
        ok, reason = screen_record(geom, key, delta_pm)
        if not ok:
            log.info("screening flagged %s: %s", rid, reason)
        report.rows.append(ScreenRow(rid, ok, reason))
    return report
