"""Accuracy reports laid out like the per-subject result tables."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal

import numpy as np

from .errors import ValidationError
from .labels import LABELS, N_CLASSES


@dataclass(frozen=True, eq=False)
class EvalReport:
    overall_accuracy: float
    per_subject: dict
    per_subject_counts: dict
    confusion: np.ndarray
    n_epochs: int
    split: str = ""
    title: str = ""

    def to_dict(self):
        return {
            "title": self.title,
            "split": self.split,
            "n_epochs": self.n_epochs,
            "overall_accuracy": self.overall_accuracy,
            "per_subject": {subject_name(s): a for s, a in sorted(self.per_subject.items())},
            "per_subject_counts": {subject_name(s): n for s, n in sorted(self.per_subject_counts.items())},
            "confusion": self.confusion.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        def _sid(name):
            return int(name[1:])

        return cls(
            overall_accuracy=d["overall_accuracy"],
            per_subject={_sid(k): v for k, v in d["per_subject"].items()},
            per_subject_counts={_sid(k): v for k, v in d["per_subject_counts"].items()},
            confusion=np.array(d["confusion"], dtype=np.int64),
            n_epochs=d["n_epochs"],
            split=d.get("split", ""),
            title=d.get("title", ""),
        )


def subject_name(subject_id):
    return f"P{int(subject_id):02d}"


def round2(value):
    """Two-decimal string, half-to-even on the shortest decimal repr."""
    return str(Decimal(repr(float(value))).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN))


def evaluate(predictions, truth, split="", title=""):
    """Compare ``[(key, label)]`` predictions with ``[(key, label)]`` truth.

    Keys are (subject, session, block, index). Confusion rows are truth,
    columns prediction.
    """
    pred = {tuple(k): int(v) for k, v in predictions}
    true = {tuple(k): int(v) for k, v in truth}
    if len(pred) != len(predictions) or len(true) != len(truth):
        raise ValidationError("duplicate epoch identities")
    missing = sorted(set(true) - set(pred))
    extra = sorted(set(pred) - set(true))
    if missing or extra:
        raise ValidationError(f"epoch identity mismatch: missing {missing[:10]}, extra {extra[:10]}")
    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    correct, counts = {}, {}
    for key, t in true.items():
        p = pred[key]
        confusion[t, p] += 1
        subj = key[0]
        counts[subj] = counts.get(subj, 0) + 1
        correct[subj] = correct.get(subj, 0) + int(p == t)
    n = len(true)
    overall = float(np.trace(confusion)) / n if n else 0.0
    per_subject = {s: correct[s] / counts[s] for s in sorted(counts)}
    return EvalReport(overall, per_subject, dict(sorted(counts.items())), confusion, n, split, title)


def _rows(report):
    rows = [("Overall", round2(report.overall_accuracy), report.n_epochs)]
    for s in sorted(report.per_subject):
        rows.append((subject_name(s), round2(report.per_subject[s]), report.per_subject_counts[s]))
    return rows


def render_report(report: EvalReport, fmt="text") -> bytes:
    rows = _rows(report)
    if fmt == "json":
        doc = {
            "title": report.title,
            "split": report.split,
            "rows": [{"subject": s, "accuracy": float(a), "n_epochs": n} for s, a, n in rows],
            "confusion": {"rows": "truth", "columns": "prediction", "labels": list(LABELS),
                          "counts": report.confusion.tolist()},
        }
        return (json.dumps(doc, indent=2) + "\n").encode()
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["subject", "accuracy", "n_epochs"])
        writer.writerows(rows)
        return buf.getvalue().encode()
    if fmt == "text":
        lines = []
        if report.title:
            lines.append(report.title)
        if report.split:
            lines.append(f"split: {report.split}")
        lines.append(f"{'Subject':<10}{'Accuracy':>10}{'Epochs':>8}")
        lines.extend(f"{s:<10}{a:>10}{n:>8}" for s, a, n in rows)
        lines.append("")
        lines.append("confusion (rows truth, columns prediction)")
        lines.append(" " * 10 + "".join(f"{name:>10}" for name in LABELS))
        for name, row in zip(LABELS, report.confusion):
            lines.append(f"{name:<10}" + "".join(f"{v:>10d}" for v in row))
        return ("\n".join(lines) + "\n").encode()
    raise ValidationError(f"unknown report format {fmt!r}")


def render_comparison(reports, fmt="text") -> bytes:
    """Side-by-side accuracy table, one column per named report."""
    names = list(reports)
    subjects = sorted({s for r in reports.values() for s in r.per_subject})
    header = ["Subject", *names]
    table = [["Overall", *(round2(reports[n].overall_accuracy) for n in names)]]
    for s in subjects:
        table.append([subject_name(s), *(
            round2(reports[n].per_subject[s]) if s in reports[n].per_subject else "" for n in names)])
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(table)
        return buf.getvalue().encode()
    if fmt == "json":
        doc = {"columns": names, "rows": [
            {"subject": row[0], **{n: (float(v) if v else None) for n, v in zip(names, row[1:])}}
            for row in table]}
        return (json.dumps(doc, indent=2) + "\n").encode()
    if fmt == "text":
        widths = [max(len(str(x)) for x in col) + 2 for col in zip(header, *table)]
        lines = ["".join(str(x).ljust(w) for x, w in zip(row, widths)).rstrip()
                 for row in [header, *table]]
        return ("\n".join(lines) + "\n").encode()
    raise ValidationError(f"unknown report format {fmt!r}")
