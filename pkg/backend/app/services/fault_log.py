import csv
import os
from pathlib import Path
from typing import Iterable, List

from ..models.simulation import FaultKind, FaultOutcome, FaultRecord

FIELDS = [
    "time_s", "kind", "outcome", "session_ordinal", "marker_index", "lost_evidence_s", "downtime_s", "lost_buffered",
]


def write_fault_log(records: Iterable[FaultRecord], path: Path | str, append: bool = False) -> None:
    """
    Writes the ground-truth fault log as CSV, one row per injected fault.
    """
    file_exists = os.path.isfile(path)
    mode = "a" if append else "w"

    with open(path, mode=mode, newline="", encoding="utf-8") as file:
        writer = csv.DictWriter(file, fieldnames=FIELDS)
        if not (append and file_exists):
            writer.writeheader()

        for r in records:
            writer.writerow({
                "time_s": f"{r.time_s:.6f}",
                "kind": r.kind.value,
                "outcome": r.outcome.value,
                "session_ordinal": r.session_ordinal,
                "marker_index": "" if r.marker_index is None else r.marker_index,
                "lost_evidence_s": f"{r.lost_evidence_s:.6f}",
                "downtime_s": f"{r.downtime_s:.6f}",
                "lost_buffered": r.lost_buffered,
            })


def read_fault_log(path: Path | str) -> List[FaultRecord]:
    with open(path, newline="", encoding="utf-8") as file:
        return [
            FaultRecord(
                time_s=float(row["time_s"]),
                kind=FaultKind(row["kind"]),
                outcome=FaultOutcome(row["outcome"]),
                session_ordinal=int(row["session_ordinal"]),
                marker_index=int(row["marker_index"]) if row["marker_index"] else None,
                lost_evidence_s=float(row["lost_evidence_s"]),
                downtime_s=float(row["downtime_s"]),
                lost_buffered=int(row.get("lost_buffered") or 0),
            )
            for row in csv.DictReader(file)
        ]
