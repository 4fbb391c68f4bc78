"""Plot-ready CSV tables from a metrics JSONL timeline."""
from __future__ import annotations

import csv
import json
from pathlib import Path

from .errors import InputError

PR_FIELDS = ["generation", "class", "group", "count", "precision", "recall"]
ACCURACY_FIELDS = ["generation", "group", "accuracy"]
CLASS_ACCURACY_FIELDS = ["generation", "class", "group", "accuracy"]


def read_metrics(path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"metrics file not found: {path}")
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: {exc.msg}") from exc
    return records


def _group(cls: int, minority: set) -> str:
    return "minority" if cls in minority else "majority"


def _fmt(value):
    if value is None:
        return ""
    return repr(float(value)) if isinstance(value, float) else value


def pr_rows(records):
    for rec in records:
        minority = set(rec.get("minority_classes", []))
        p = rec["pseudo"]
        for c, (count, prec, rec_) in enumerate(zip(p["count"], p["precision"], p["recall"])):
            yield {
                "generation": rec["generation"], "class": c, "group": _group(c, minority),
                "count": count, "precision": _fmt(prec), "recall": _fmt(rec_),
            }


def accuracy_rows(records):
    for rec in records:
        for group in ("overall", "balanced", "majority", "minority"):
            yield {"generation": rec["generation"], "group": group, "accuracy": _fmt(rec["eval"][group])}


def class_accuracy_rows(records):
    for rec in records:
        minority = set(rec.get("minority_classes", []))
        for c, acc in enumerate(rec["eval"]["per_class"]):
            yield {"generation": rec["generation"], "class": c, "group": _group(c, minority), "accuracy": _fmt(acc)}


def _write(path: Path, fields, rows) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path


def write_reports(records, out_dir) -> dict:
    """Write ``pseudo_pr.csv``, ``accuracy_by_group.csv`` and ``accuracy_by_class.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return {
        "pseudo_pr": _write(out / "pseudo_pr.csv", PR_FIELDS, pr_rows(records)),
        "accuracy_by_group": _write(out / "accuracy_by_group.csv", ACCURACY_FIELDS, accuracy_rows(records)),
        "accuracy_by_class": _write(out / "accuracy_by_class.csv", CLASS_ACCURACY_FIELDS, class_accuracy_rows(records)),
    }
