"""Epoch containers, the EPO1 binary format, splits and synthetic data."""

from __future__ import annotations

import csv
import enum
import io
import json
import os
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptionError, FormatError, ValidationError
from .labels import Label, parse_label

MAGIC = b"EPO1"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sIdI")
_RECORD = struct.Struct("<HBBBI")
_COUNT = struct.Struct("<Q")
_NAME_LEN = struct.Struct("<H")

# Every channel referenced by the bundled groupings, in montage order.
DEFAULT_MONTAGE = (
    "FP1", "FP2", "AFz", "AF3", "AF4", "AF7", "AF8",
    "Fz", "F1", "F2", "F3", "F4", "F5", "F6", "F7", "F8",
    "FCz", "FC1", "FC2", "FC3", "FC4", "FC5", "FC6", "FT7", "FT8", "FT9",
    "C1", "C2", "C3", "C4", "C5", "C6", "T7", "T8",
    "CPz", "CP1", "CP2", "CP3", "CP4", "CP5", "CP6", "TP7", "TP8",
    "Pz", "P1", "P2", "P3", "P4", "P5", "P6", "P7", "P8",
    "POz", "PO3", "PO4", "PO7", "PO8",
    "Oz", "O1", "O2", "O3", "O4", "O5",
)


@dataclass(frozen=True, eq=False)
class EpochRecord:
    subject_id: int
    session_id: int
    block_index: int
    label: Label
    frames: np.ndarray
    index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "label", parse_label(self.label))
        frames = np.asarray(self.frames, dtype="<f4")
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValidationError(f"frames must be a non-empty 2-D matrix, got shape {frames.shape}")
        object.__setattr__(self, "frames", frames)
        if not 0 <= self.subject_id < 2**16:
            raise ValidationError(f"subject_id {self.subject_id} out of range")
        if self.session_id not in (1, 2, 3):
            raise ValidationError(f"session_id must be 1, 2 or 3, got {self.session_id}")
        if self.block_index not in (0, 1, 2):
            raise ValidationError(f"block_index must be 0, 1 or 2, got {self.block_index}")

    @property
    def key(self):
        return (self.subject_id, self.session_id, self.block_index, self.index)

    @property
    def frame_count(self):
        return self.frames.shape[0]


@dataclass(frozen=True, eq=False)
class EpochDataset:
    """Immutable collection of epochs sharing one channel list.

    Record ``index`` fields must equal the running count of earlier records
    with the same (subject, session, block); that is what the file format
    reconstructs on load. Use :meth:`from_records` to assign them.
    """

    channel_names: tuple
    records: tuple
    sample_rate_hz: float = 250.0

    def __post_init__(self):
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(self, "records", tuple(self.records))
        dupes = [n for n, k in Counter(self.channel_names).items() if k > 1]
        if dupes:
            raise ValidationError(f"duplicate channel names: {dupes}")
        if not (self.sample_rate_hz > 0 and np.isfinite(self.sample_rate_hz)):
            raise ValidationError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        n_ch = len(self.channel_names)
        seen = Counter()
        for pos, rec in enumerate(self.records):
            if rec.frames.shape[1] != n_ch:
                raise ValidationError(
                    f"record {pos} has {rec.frames.shape[1]} channels, dataset has {n_ch}"
                )
            block = rec.key[:3]
            if rec.index != seen[block]:
                raise ValidationError(
                    f"record {pos} index {rec.index} != running count {seen[block]} for {block}"
                )
            seen[block] += 1

    @classmethod
    def from_records(cls, channel_names, records, sample_rate_hz=250.0):
        seen = Counter()
        out = []
        for rec in records:
            block = rec.key[:3]
            out.append(EpochRecord(rec.subject_id, rec.session_id, rec.block_index,
                                   rec.label, rec.frames, seen[block]))
            seen[block] += 1
        return cls(tuple(channel_names), tuple(out), sample_rate_hz)

    def __len__(self):
        return len(self.records)

    def subjects(self):
        return sorted({r.subject_id for r in self.records})

    def sessions(self):
        return sorted({r.session_id for r in self.records})


# ---------------------------------------------------------------------------
# EPO1 binary format


def encode_epoch_file(dataset: EpochDataset) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, FORMAT_VERSION, float(dataset.sample_rate_hz),
                           len(dataset.channel_names)))
    for name in dataset.channel_names:
        raw = name.encode("utf-8")
        buf.write(_NAME_LEN.pack(len(raw)))
        buf.write(raw)
    buf.write(_COUNT.pack(len(dataset.records)))
    for rec in dataset.records:
        buf.write(_RECORD.pack(rec.subject_id, rec.session_id, rec.block_index,
                               int(rec.label), rec.frame_count))
        buf.write(np.ascontiguousarray(rec.frames, dtype="<f4").tobytes())
    return buf.getvalue()


def write_epoch_file(dataset: EpochDataset, path) -> None:
    if not isinstance(dataset, EpochDataset):
        raise ValidationError("write_epoch_file expects an EpochDataset")
    data = encode_epoch_file(dataset)
    tmp = Path(f"{path}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CorruptionError(
                f"truncated EPO1 payload while reading {what} at byte {self.pos}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st, what):
        return st.unpack(self.take(st.size, what))


def decode_epoch_file(data: bytes) -> EpochDataset:
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError("not an EPO1 file (bad magic)")
    rd = _Reader(data)
    _, version, rate, n_ch = rd.unpack(_HEADER, "header")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported EPO1 version {version}")
    names = []
    for i in range(n_ch):
        (length,) = rd.unpack(_NAME_LEN, f"channel name {i}")
        try:
            names.append(rd.take(length, f"channel name {i}").decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise CorruptionError(f"channel name {i} is not UTF-8") from exc
    (count,) = rd.unpack(_COUNT, "record count")
    records = []
    seen = Counter()
    for r in range(count):
        subj, sess, block, label, n_frames = rd.unpack(_RECORD, f"record {r} header")
        raw = rd.take(4 * n_frames * n_ch, f"record {r} frames")
        frames = np.frombuffer(raw, dtype="<f4").reshape(n_frames, n_ch).copy()
        if label > 2:
            raise CorruptionError(f"record {r} has label code {label}")
        try:
            rec = EpochRecord(subj, sess, block, Label(label), frames, seen[(subj, sess, block)])
        except ValidationError as exc:
            raise CorruptionError(f"record {r}: {exc}") from exc
        seen[(subj, sess, block)] += 1
        records.append(rec)
    if rd.pos != len(data):
        raise CorruptionError(f"{len(data) - rd.pos} trailing bytes after last record")
    return EpochDataset(tuple(names), tuple(records), rate)


def load_epoch_file(path) -> EpochDataset:
    return decode_epoch_file(Path(path).read_bytes())


def import_csv(manifest_path, channel_names=None, sample_rate_hz=250.0) -> EpochDataset:
    """Build a dataset from CSV epochs listed in a JSON manifest.

    Manifest: ``{"sample_rate_hz": 250, "epochs": [{"file": "a.csv",
    "subject": 1, "session": 1, "block": 0, "label": "Easy"}, ...]}``.
    Each CSV has a header row of channel names and one row per frame.
    """
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    sample_rate_hz = manifest.get("sample_rate_hz", sample_rate_hz)
    records = []
    names = tuple(channel_names) if channel_names is not None else None
    for entry in manifest["epochs"]:
        path = manifest_path.parent / entry["file"]
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = tuple(h.strip() for h in rows[0])
        if names is None:
            names = header
        if header != names:
            raise ValidationError(f"{path}: channel header differs from the first file")
        frames = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype="<f4")
        records.append(EpochRecord(int(entry["subject"]), int(entry["session"]),
                                   int(entry["block"]), parse_label(entry["label"]), frames))
    return EpochDataset.from_records(names or (), records, sample_rate_hz)


# ---------------------------------------------------------------------------
# Splits


class SplitMode(str, enum.Enum):
    SubjectDependent = "SubjectDependent"
    SubjectIndependent = "SubjectIndependent"
    HeldOutSubjects = "HeldOutSubjects"


@dataclass(frozen=True)
class SplitSpec:
    """Train/test selection. ``None`` subject sets mean every subject."""

    mode: SplitMode
    train_sessions: frozenset
    test_sessions: frozenset
    train_subjects: frozenset | None = None
    test_subjects: frozenset | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", SplitMode(self.mode))
        for name in ("train_sessions", "test_sessions", "train_subjects", "test_subjects"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, frozenset(int(v) for v in value))

    def to_dict(self):
        def _list(s):
            return None if s is None else sorted(s)

        return {
            "mode": self.mode.value,
            "train_subjects": _list(self.train_subjects),
            "test_subjects": _list(self.test_subjects),
            "train_sessions": _list(self.train_sessions),
            "test_sessions": _list(self.test_sessions),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            mode=d["mode"],
            train_sessions=d["train_sessions"],
            test_sessions=d["test_sessions"],
            train_subjects=d.get("train_subjects"),
            test_subjects=d.get("test_subjects"),
        )

    def describe(self):
        def _subj(s):
            if s is None:
                return "all subjects"
            return ",".join(f"P{v:02d}" for v in sorted(s))

        def _sess(s):
            return "+".join(f"S{v}" for v in sorted(s))

        return (f"{self.mode.value}: train {_subj(self.train_subjects)} {_sess(self.train_sessions)}"
                f" / test {_subj(self.test_subjects)} {_sess(self.test_sessions)}")


def make_split(dataset: EpochDataset, spec: SplitSpec):
    present = set(dataset.subjects())
    train_subj = present if spec.train_subjects is None else set(spec.train_subjects)
    test_subj = present if spec.test_subjects is None else set(spec.test_subjects)
    missing = (train_subj | test_subj) - present
    if missing:
        raise ConfigError(f"subjects not in dataset: {sorted(missing)}")
    missing = (set(spec.train_sessions) | set(spec.test_sessions)) - set(dataset.sessions())
    if missing:
        raise ConfigError(f"sessions not in dataset: {sorted(missing)}")
    if spec.mode is SplitMode.HeldOutSubjects and train_subj & test_subj:
        raise ConfigError(f"held-out split shares subjects {sorted(train_subj & test_subj)}")
    if spec.mode is SplitMode.SubjectDependent and (len(train_subj) != 1 or train_subj != test_subj):
        raise ConfigError("subject-dependent split needs the same single subject on both sides")
    train_pairs = {(s, k) for s in train_subj for k in spec.train_sessions}
    test_pairs = {(s, k) for s in test_subj for k in spec.test_sessions}
    overlap = train_pairs & test_pairs
    if overlap:
        raise ConfigError(f"(subject, session) pairs on both sides: {sorted(overlap)}")

    def _select(pairs):
        chosen = [r for r in dataset.records if (r.subject_id, r.session_id) in pairs]
        return sorted(chosen, key=lambda r: r.key)

    train, test = _select(train_pairs), _select(test_pairs)
    if not train:
        raise ConfigError("split selects no training epochs")
    if not test:
        raise ConfigError("split selects no test epochs")
    return train, test


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_subjects: int = 2
    n_sessions: int = 2
    epochs_per_block: int = 150
    n_channels: int = len(DEFAULT_MONTAGE)
    class_separation: float = 2.0
    subject_offset_scale: float = 0.5
    session_offset_scale: float = 0.5
    noise_scale: float = 1.0
    frames_per_epoch: int = 500
    sample_rate_hz: float = 250.0

    def __post_init__(self):
        for name in ("n_subjects", "n_sessions", "epochs_per_block", "n_channels", "frames_per_epoch"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.n_sessions > 3:
            raise ConfigError("at most 3 sessions")
        for name in ("class_separation", "subject_offset_scale", "session_offset_scale", "noise_scale"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ConfigError(f"{name} must be finite and non-negative")
        if not self.sample_rate_hz > 0:
            raise ConfigError("sample_rate_hz must be positive")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth fields: {sorted(unknown)}")
        return cls(**d)


def synth_channel_names(n_channels):
    names = list(DEFAULT_MONTAGE[:n_channels])
    names += [f"X{i}" for i in range(len(names), n_channels)]
    return tuple(names)


def _unit(rng, n):
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def synth_generate(config: SynthConfig) -> EpochDataset:
    """Generate a labelled corpus with class, subject and session mean offsets.

    Classes sit on a line: class k has channel mean
    ``class_separation * (k - 1) * u`` for a random unit vector ``u``, so
    adjacent classes are ``class_separation`` noise standard deviations
    apart per frame. Subject and session offsets are random directions of
    length ``subject_offset_scale`` and ``session_offset_scale``, in the
    same units. Blocks within a session are shuffled per (subject, session).
    """
    rng = np.random.default_rng(config.seed)
    n_ch = config.n_channels
    pattern = _unit(rng, n_ch) * config.noise_scale
    class_means = np.stack([config.class_separation * (k - 1) * pattern for k in range(3)])
    records = []
    for subj in range(1, config.n_subjects + 1):
        subject_offset = config.subject_offset_scale * config.noise_scale * _unit(rng, n_ch)
        for sess in range(1, config.n_sessions + 1):
            session_offset = config.session_offset_scale * config.noise_scale * _unit(rng, n_ch)
            order = rng.permutation(3)
            for block, label in enumerate(order):
                center = class_means[label] + subject_offset + session_offset
                for i in range(config.epochs_per_block):
                    noise = rng.standard_normal((config.frames_per_epoch, n_ch))
                    frames = (center + config.noise_scale * noise).astype("<f4")
                    records.append(EpochRecord(subj, sess, block, Label(int(label)), frames, i))
    return EpochDataset(synth_channel_names(n_ch), tuple(records), config.sample_rate_hz)
