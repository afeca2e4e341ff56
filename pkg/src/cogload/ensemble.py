"""Plurality voting across system outputs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .labels import N_CLASSES

ENSEMBLE_NAME = "7-system"


@dataclass(frozen=True, eq=False)
class SystemOutput:
    system_name: str
    posterior: np.ndarray
    label: int

    def __post_init__(self):
        p = np.asarray(self.posterior, dtype=np.float64)
        if p.shape != (N_CLASSES,) or abs(p.sum() - 1.0) > 1e-9 or np.any(p < 0):
            raise ValidationError(f"{self.system_name}: posterior must be a 3-class distribution")
        if not 0 <= int(self.label) < N_CLASSES:
            raise ValidationError(f"{self.system_name}: label {self.label} out of range")
        object.__setattr__(self, "posterior", p)
        object.__setattr__(self, "label", int(self.label))


def vote_combine(outputs) -> int:
    """Plurality label; ties go to the larger posterior sum, then the lower index.

    Sums use ``math.fsum`` so the result does not depend on system order.
    """
    outputs = list(outputs)
    if not outputs:
        raise ValidationError("vote_combine needs at least one system output")
    counts = np.bincount([o.label for o in outputs], minlength=N_CLASSES)
    tied = np.flatnonzero(counts == counts.max())
    if len(tied) == 1:
        return int(tied[0])
    sums = {int(k): math.fsum(o.posterior[k] for o in outputs) for k in tied}
    return max(tied, key=lambda k: (sums[int(k)], -k)).item()


def combine_predictions(per_system):
    """Vote over aligned prediction lists.

    ``per_system`` maps system name -> list of prediction records (dicts with
    subject/session/block/index/label/posterior). All lists must cover the
    same epochs. Returns combined records with the mean posterior.
    """
    names = sorted(per_system)
    if not names:
        raise ValidationError("no systems to combine")
    keyed = {}
    for name in names:
        keyed[name] = {_key(r): r for r in per_system[name]}
    reference = set(keyed[names[0]])
    for name in names[1:]:
        if set(keyed[name]) != reference:
            raise ValidationError(f"system {name!r} covers different epochs than {names[0]!r}")
    combined = []
    for key in sorted(reference):
        recs = [keyed[name][key] for name in names]
        outputs = [SystemOutput(name, r["posterior"], r["label"]) for name, r in zip(names, recs)]
        post = np.array([math.fsum(o.posterior[k] for o in outputs) for k in range(N_CLASSES)])
        out = {
            "subject": key[0], "session": key[1], "block": key[2], "index": key[3],
            "label": vote_combine(outputs),
            "posterior": (post / len(outputs)).tolist(),
        }
        if "truth" in recs[0]:
            out["truth"] = recs[0]["truth"]
        combined.append(out)
    return combined


def _key(record):
    return (int(record["subject"]), int(record["session"]), int(record["block"]), int(record["index"]))


def write_predictions(records, path, header):
    with open(path, "w") as fh:
        fh.write(json.dumps({"header": header}) + "\n")
        for r in records:
            fh.write(json.dumps(r) + "\n")


def read_predictions(path):
    header, records = None, []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            if "header" in d:
                header = d["header"]
            else:
                records.append(d)
    return header, records
