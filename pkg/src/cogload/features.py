"""Frame-level featurization: channel pooling, SMA, GMVN and deltas."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import _backend
from .errors import ConfigError, ValidationError

DEFAULT_GMVN_FLOOR = 1e-6


class Pooling(str, enum.Enum):
    NONE = "none"
    MAX = "max"
    AVERAGE = "average"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        v = "none" if value is None else str(value).strip().lower()
        aliases = {"n/a": "none", "avg": "average", "mean": "average"}
        try:
            return cls(aliases.get(v, v))
        except ValueError:
            raise ValidationError(f"unknown pooling mode {value!r}") from None


_POOL_CODE = {Pooling.NONE: 0, Pooling.MAX: 1, Pooling.AVERAGE: 2}


@dataclass(frozen=True)
class ChannelGrouping:
    name: str
    groups: tuple
    pooling: Pooling = Pooling.NONE

    def __post_init__(self):
        object.__setattr__(self, "pooling", Pooling.parse(self.pooling))
        groups = tuple(tuple(g) for g in self.groups)
        if not groups or any(len(g) == 0 for g in groups):
            raise ValidationError(f"grouping {self.name!r} has an empty group")
        if self.pooling is Pooling.NONE and any(len(g) != 1 for g in groups):
            raise ValidationError(f"grouping {self.name!r} without pooling must use singleton groups")
        object.__setattr__(self, "groups", groups)

    @property
    def dim(self):
        return len(self.groups)

    def with_pooling(self, pooling, name=None):
        return ChannelGrouping(name or self.name, self.groups, pooling)

    def index_arrays(self, channel_names):
        """Flattened column indices and group offsets for the kernels."""
        lookup = {n: i for i, n in enumerate(channel_names)}
        unknown = sorted({c for g in self.groups for c in g if c not in lookup})
        if unknown:
            raise ValidationError(f"grouping {self.name!r} references unknown channels {unknown}")
        flat = np.array([lookup[c] for g in self.groups for c in g], dtype=np.int64)
        offsets = np.cumsum([0] + [len(g) for g in self.groups]).astype(np.int64)
        return flat, offsets

    def to_dict(self):
        return {"name": self.name, "pooling": self.pooling.value,
                "groups": [list(g) for g in self.groups]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d["groups"], d.get("pooling", "none"))


BUNDLED_FILES = {"sd31": "sd31.json", "P21": "P21.json", "P25": "P25.json"}


def load_grouping_file(path):
    with open(path) as fh:
        return ChannelGrouping.from_dict(json.load(fh))


def bundled_grouping(key):
    """One of the three shipped channel configurations, as stored on disk."""
    if key not in BUNDLED_FILES:
        raise ConfigError(f"no bundled grouping {key!r}")
    text = resources.files("cogload").joinpath("data", BUNDLED_FILES[key]).read_text()
    return ChannelGrouping.from_dict(json.loads(text))


def builtin_grouping(name):
    """Resolve ``sd31``, ``maxP21``, ``avgP21``, ``maxP25`` or ``avgP25``."""
    if name == "sd31":
        return bundled_grouping("sd31")
    for prefix, pooling in (("max", Pooling.MAX), ("avg", Pooling.AVERAGE)):
        if name.startswith(prefix) and name[len(prefix):] in ("P21", "P25"):
            return bundled_grouping(name[len(prefix):]).with_pooling(pooling, name)
    raise ConfigError(f"unknown grouping {name!r}")


def apply_grouping(frames, grouping: ChannelGrouping, channel_names):
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[1] != len(channel_names):
        raise ValidationError(
            f"frames shape {frames.shape} does not match {len(channel_names)} channels"
        )
    flat, offsets = grouping.index_arrays(channel_names)
    return _backend.kernels().pool_groups(
        np.ascontiguousarray(frames, dtype=np.float64), flat, offsets, _POOL_CODE[grouping.pooling]
    )


def _segment_starts(segments, n):
    if segments is None:
        return np.zeros(n, dtype=np.int64)
    segments = list(segments)
    if len(segments) != n:
        raise ValidationError("segment labels must have one entry per row")
    starts = np.zeros(n, dtype=np.int64)
    for t in range(1, n):
        starts[t] = starts[t - 1] if segments[t] == segments[t - 1] else t
    return starts


def sma_smooth(seq, window, segments=None):
    """Trailing moving average: ``out[t] = mean(seq[max(0, t-window+1):t+1])``.

    With ``segments`` (one hashable per row) the window never reaches back
    across a change of segment.
    """
    if int(window) != window or window < 1:
        raise ConfigError(f"SMA window must be a positive integer, got {window}")
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim == 1:
        return sma_smooth(seq[:, None], window, segments)[:, 0]
    if len(seq) == 0:
        return seq.copy()
    starts = _segment_starts(segments, len(seq))
    return _backend.kernels().trailing_mean(np.ascontiguousarray(seq), starts, int(window))


@dataclass(frozen=True, eq=False)
class GmvnStats:
    mean: np.ndarray
    std: np.ndarray
    floor: float = DEFAULT_GMVN_FLOOR

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValidationError("GMVN mean and std must be vectors of equal length")
        if np.any(self.std < self.floor):
            raise ValidationError("GMVN std below floor")

    @classmethod
    def identity(cls, dim, floor=DEFAULT_GMVN_FLOOR):
        return cls(np.zeros(dim), np.ones(dim), floor)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "floor": self.floor}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64),
                   float(d["floor"]))


def fit_gmvn(seqs, floor=DEFAULT_GMVN_FLOOR):
    """Per-dimension mean and population std over every frame of ``seqs``."""
    if floor <= 0:
        raise ConfigError("GMVN floor must be positive")
    seqs = [np.asarray(s, dtype=np.float64) for s in seqs]
    seqs = [s for s in seqs if len(s)]
    if not seqs:
        raise ValidationError("cannot fit GMVN on zero frames")
    stacked = np.concatenate(seqs, axis=0)
    mean = stacked.mean(axis=0)
    std = np.sqrt(((stacked - mean) ** 2).mean(axis=0))
    return GmvnStats(mean, np.maximum(std, floor), floor)


def apply_gmvn(seq, stats: GmvnStats):
    seq = np.asarray(seq, dtype=np.float64)
    if seq.shape[-1] != stats.mean.shape[0]:
        raise ValidationError(f"GMVN dim {stats.mean.shape[0]} does not match input dim {seq.shape[-1]}")
    return (seq - stats.mean) / stats.std


def append_deltas(seq):
    """Concatenate ``(x[t+1] - x[t-1]) / 2`` with edge replication."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or len(seq) < 1:
        raise ValidationError("append_deltas needs a non-empty frame matrix")
    padded = np.concatenate([seq[:1], seq, seq[-1:]], axis=0)
    delta = (padded[2:] - padded[:-2]) / 2.0
    return np.concatenate([seq, delta], axis=1)


def featurize_epoch(frames, grouping, channel_names, deltas=True):
    """Pool channels, then optionally append first-order deltas."""
    feats = apply_grouping(frames, grouping, channel_names)
    return append_deltas(feats) if deltas else feats
