"""Diagonal-covariance GMM universal background model."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from . import _backend
from .errors import ConfigError, NumericalError, ValidationError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MIN_OCCUPANCY = 1e-8
# Keeps log(weight) finite for components that lose all their frames.
MIN_WEIGHT = 1e-12
SEED_POOL_PER_COMPONENT = 256


@dataclass(frozen=True, eq=False)
class DiagonalGmm:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        m = np.ascontiguousarray(self.means, dtype=np.float64)
        v = np.ascontiguousarray(self.variances, dtype=np.float64)
        if w.ndim != 1 or m.ndim != 2 or m.shape != v.shape or m.shape[0] != w.shape[0]:
            raise ValidationError(
                f"inconsistent GMM shapes: weights {w.shape}, means {m.shape}, variances {v.shape}"
            )
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValidationError("GMM weights must be positive and sum to 1")
        if np.any(v <= 0) or not (np.all(np.isfinite(m)) and np.all(np.isfinite(v))):
            raise ValidationError("GMM means/variances must be finite with positive variances")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "C": self.n_components,
            "F": self.dim,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise ValidationError(f"unsupported GMM format_version {d.get('format_version')}")
        gmm = cls(np.array(d["weights"]), np.array(d["means"]), np.array(d["variances"]))
        if gmm.n_components != d["C"] or gmm.dim != d["F"]:
            raise ValidationError("GMM C/F fields disagree with parameter shapes")
        return gmm

    def checksum(self):
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


def save_gmm(gmm, path, **extra):
    with open(path, "w") as fh:
        json.dump({**gmm.to_dict(), **extra}, fh)


def load_gmm(path):
    with open(path) as fh:
        return DiagonalGmm.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class BaumWelchStats:
    zeroth: np.ndarray
    first_centered: np.ndarray

    def __add__(self, other):
        return BaumWelchStats(self.zeroth + other.zeroth,
                              self.first_centered + other.first_centered)

    @property
    def frame_count(self):
        return float(self.zeroth.sum())


def variance_floor(frames, relative=1e-3, absolute=1e-6):
    """Per-dimension floor ``max(absolute, relative * global variance)``."""
    frames = np.asarray(frames, dtype=np.float64)
    return np.maximum(absolute, relative * frames.var(axis=0))


def _as_frames(frames, dim=None):
    frames = np.ascontiguousarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ValidationError(f"expected a frame matrix, got shape {frames.shape}")
    if dim is not None and frames.shape[1] != dim:
        raise ValidationError(f"frame dim {frames.shape[1]} does not match model dim {dim}")
    return frames


def _grouped_moments(frames, labels, k, with_var=True):
    """Per-cluster counts, means and (optionally) population variances."""
    n = len(labels)
    onehot = scipy.sparse.csr_matrix((np.ones(n), (labels, np.arange(n))), shape=(k, n))
    counts = np.bincount(labels, minlength=k)
    safe = np.maximum(counts, 1)[:, None]
    means = (onehot @ frames) / safe
    if not with_var:
        return counts, means, None
    dev = frames - means[labels]
    dev *= dev
    return counts, means, (onehot @ dev) / safe


def kmeans_init(frames, n_components, seed=0, iterations=10, floor=None):
    """k-means++ seeding plus Lloyd iterations, turned into a GMM.

    Empty clusters keep their previous center; in the returned model they
    get the global variance and a one-frame weight.
    """
    frames = _as_frames(frames)
    n = len(frames)
    if n_components < 1:
        raise ConfigError("number of components must be positive")
    if n < n_components:
        raise ValidationError(f"{n} frames cannot initialize {n_components} components")
    if floor is None:
        floor = variance_floor(frames)
    kern = _backend.kernels()
    rng = np.random.default_rng(seed)

    # Seeding only needs a representative sample, not every frame.
    pool = frames
    if n > SEED_POOL_PER_COMPONENT * n_components:
        pick = np.sort(rng.choice(n, SEED_POOL_PER_COMPONENT * n_components, replace=False))
        pool = np.ascontiguousarray(frames[pick])
    m = len(pool)
    centers = np.empty((n_components, frames.shape[1]))
    centers[0] = pool[rng.integers(m)]
    closest = kern.kmeans_assign(pool, centers[:1])[1]
    for k in range(1, n_components):
        total = closest.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, m - 1)
        else:
            idx = int(rng.integers(m))
        centers[k] = pool[idx]
        closest = np.minimum(closest, kern.kmeans_assign(pool, centers[k:k + 1])[1])

    labels = None
    for _ in range(max(1, iterations)):
        labels, _ = kern.kmeans_assign(frames, centers)
        counts, means, _ = _grouped_moments(frames, labels, n_components, with_var=False)
        filled = counts > 0
        centers = np.where(filled[:, None], means, centers)

    counts, means, variances = _grouped_moments(frames, labels, n_components)
    empty = counts == 0
    if empty.any():
        logger.warning("k-means left %d empty clusters", int(empty.sum()))
    variances[empty] = frames.var(axis=0)
    means[empty] = centers[empty]
    weights = np.maximum(counts, 1).astype(np.float64)
    weights /= weights.sum()
    return DiagonalGmm(weights, means, np.maximum(variances, floor))


def _estep(gmm, frames, second=True):
    return _backend.kernels().gmm_accumulate(frames, gmm.weights, gmm.means, gmm.variances, second)


def _mstep(gmm, zeroth, first, second, floor):
    total = zeroth.sum()
    alive = zeroth >= MIN_OCCUPANCY
    safe = np.where(alive, zeroth, 1.0)[:, None]
    means = np.where(alive[:, None], first / safe, gmm.means)
    var = second / safe - means * means
    variances = np.where(alive[:, None], np.maximum(var, floor), gmm.variances)
    weights = np.maximum(zeroth / total, MIN_WEIGHT)
    return DiagonalGmm(weights / weights.sum(), means, variances)


def em_fit(frames, init: DiagonalGmm, iterations=20, floor=None):
    """Maximum-likelihood EM. Returns (model, per-iteration log-likelihood).

    ``trace[i]`` is the total log-likelihood of the model produced by
    iteration ``i``.
    """
    frames = _as_frames(frames, init.dim)
    if floor is None:
        floor = variance_floor(frames)
    floor = np.broadcast_to(np.asarray(floor, dtype=np.float64), (init.dim,))
    if np.any(floor <= 0):
        raise ConfigError("variance floor must be positive")
    gmm = init
    trace = []
    ll, zeroth, first, second = _estep(gmm, frames)
    for it in range(iterations):
        gmm = _mstep(gmm, zeroth, first, second, floor)
        ll, zeroth, first, second = _estep(gmm, frames)
        total = math.fsum(ll)
        if not math.isfinite(total):
            raise NumericalError("non-finite UBM log-likelihood", iteration=it)
        trace.append(total)
        logger.info("UBM EM iteration %d: loglik %.6f", it, total)
    return gmm, trace


def responsibilities(gmm: DiagonalGmm, frame):
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (gmm.dim,):
        raise ValidationError(f"frame shape {frame.shape} does not match model dim {gmm.dim}")
    return responsibilities_batch(gmm, frame[None, :])[0]


def responsibilities_batch(gmm: DiagonalGmm, frames):
    frames = _as_frames(frames, gmm.dim)
    return _backend.kernels().gmm_posteriors(frames, gmm.weights, gmm.means, gmm.variances)


def log_likelihood(gmm: DiagonalGmm, frames):
    frames = np.asarray(frames, dtype=np.float64)
    if frames.size == 0:
        return 0.0
    frames = _as_frames(frames, gmm.dim)
    ll, _, _, _ = _estep(gmm, frames, second=False)
    return math.fsum(ll)


def accumulate_bw_stats(gmm: DiagonalGmm, seq) -> BaumWelchStats:
    seq = np.asarray(seq, dtype=np.float64)
    if seq.size == 0:
        return BaumWelchStats(np.zeros(gmm.n_components), np.zeros((gmm.n_components, gmm.dim)))
    seq = _as_frames(seq, gmm.dim)
    _, zeroth, first, _ = _estep(gmm, seq, second=False)
    return BaumWelchStats(zeroth, first - zeroth[:, None] * gmm.means)


def sum_stats(stats_list):
    """Order-robust sum of per-epoch statistics."""
    stats_list = list(stats_list)
    zeroth = np.array([math.fsum(col) for col in np.stack([s.zeroth for s in stats_list]).T])
    first = np.stack([s.first_centered for s in stats_list])
    flat = first.reshape(len(stats_list), -1)
    summed = np.array([math.fsum(col) for col in flat.T]).reshape(first.shape[1:])
    return BaumWelchStats(zeroth, summed)
