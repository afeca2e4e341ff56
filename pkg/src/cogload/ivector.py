"""Total-variability training and i-vector extraction."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericalError, ValidationError
from .features import apply_gmvn, fit_gmvn, sma_smooth
from .gmm import BaumWelchStats, DiagonalGmm

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MSTEP_RIDGE = 1e-8


@dataclass(frozen=True, eq=False)
class TotalVariability:
    """``T`` has one ``F x R`` row block per UBM component, in UBM order."""

    T: np.ndarray
    ubm: DiagonalGmm

    def __post_init__(self):
        T = np.ascontiguousarray(self.T, dtype=np.float64)
        cf = self.ubm.n_components * self.ubm.dim
        if T.ndim != 2 or T.shape[0] != cf:
            raise ValidationError(f"T must have {cf} rows, got shape {T.shape}")
        if T.shape[1] > cf:
            raise ConfigError(f"i-vector dim {T.shape[1]} exceeds C*F = {cf}")
        object.__setattr__(self, "T", T)

    @property
    def rank(self):
        return self.T.shape[1]

    def blocks(self):
        """T reshaped to (C, F, R)."""
        return self.T.reshape(self.ubm.n_components, self.ubm.dim, self.rank)

    def precision_terms(self):
        """Per-component ``T_c' Sigma_c^-1 T_c`` (C, R, R) and ``Sigma^-1 T`` (CF, R)."""
        T3 = self.blocks()
        scaled = T3 / self.ubm.variances[:, :, None]
        prec = np.einsum("cfr,cfs->crs", scaled, T3)
        return prec, scaled.reshape(self.T.shape)

    def to_dict(self):
        C, F = self.ubm.n_components, self.ubm.dim
        return {
            "format_version": FORMAT_VERSION,
            "R": self.rank,
            "C": C,
            "F": F,
            "T": self.T.ravel().tolist(),
            "ubm_checksum": self.ubm.checksum(),
        }

    @classmethod
    def from_dict(cls, d, ubm):
        if d.get("format_version") != FORMAT_VERSION:
            raise ValidationError(f"unsupported TV format_version {d.get('format_version')}")
        if d["ubm_checksum"] != ubm.checksum():
            raise ValidationError("T-matrix was trained against a different UBM")
        if (d["C"], d["F"]) != (ubm.n_components, ubm.dim):
            raise ValidationError("T-matrix C/F do not match the UBM")
        T = np.array(d["T"], dtype=np.float64).reshape(d["C"] * d["F"], d["R"])
        return cls(T, ubm)


def save_tv(tv, path, **extra):
    with open(path, "w") as fh:
        json.dump({**tv.to_dict(), **extra}, fh)


def load_tv(path, ubm):
    with open(path) as fh:
        return TotalVariability.from_dict(json.load(fh), ubm)


@dataclass(frozen=True, eq=False)
class IVector:
    w: np.ndarray
    subject: int = 0
    session: int = 0
    block: int = 0
    index: int = 0
    label: int | None = None

    @property
    def key(self):
        return (self.subject, self.session, self.block, self.index)

    def with_w(self, w):
        return IVector(np.asarray(w, dtype=np.float64), self.subject, self.session,
                       self.block, self.index, self.label)

    def to_record(self):
        return {"subject": self.subject, "session": self.session, "block": self.block,
                "index": self.index, "label": self.label, "w": self.w.tolist()}

    @classmethod
    def from_record(cls, d):
        label = d.get("label")
        return cls(np.array(d["w"], dtype=np.float64), int(d["subject"]), int(d["session"]),
                   int(d["block"]), int(d["index"]), None if label is None else int(label))


def tv_init(ubm: DiagonalGmm, rank=80, seed=0, scale=None):
    """Gaussian T with std ``scale`` (default ``0.1 * sqrt(mean UBM variance)``)."""
    if rank < 1:
        raise ConfigError("i-vector dimension must be positive")
    cf = ubm.n_components * ubm.dim
    if rank > cf:
        raise ConfigError(f"i-vector dim {rank} exceeds C*F = {cf}")
    if scale is None:
        scale = 0.1 * np.sqrt(ubm.variances.mean())
    rng = np.random.default_rng(seed)
    return TotalVariability(scale * rng.standard_normal((cf, rank)), ubm)


def _cholesky(L, what):
    if not np.allclose(L, L.T, rtol=0, atol=1e-10 * max(1.0, np.abs(L).max())):
        raise NumericalError(f"{what}: precision matrix is not symmetric")
    try:
        return scipy.linalg.cho_factor(L, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"{what}: precision matrix is not positive definite") from exc


def _stack_stats(stats_list, tv):
    C, F = tv.ubm.n_components, tv.ubm.dim
    N = np.stack([np.asarray(s.zeroth, dtype=np.float64) for s in stats_list])
    Fc = np.stack([np.asarray(s.first_centered, dtype=np.float64) for s in stats_list])
    if N.shape[1:] != (C,) or Fc.shape[1:] != (C, F):
        raise ValidationError(f"statistics shape {Fc.shape[1:]} does not match UBM ({C}, {F})")
    return N, Fc.reshape(len(stats_list), C * F)


def _posteriors(tv, N, Fc, want_cov):
    """Posterior means (U, R) and optionally covariances (U, R, R)."""
    R = tv.rank
    prec, sinv_t = tv.precision_terms()
    L_all = np.eye(R) + (N @ prec.reshape(len(prec), R * R)).reshape(-1, R, R)
    b_all = Fc @ sinv_t
    means = np.empty((len(N), R))
    covs = np.empty((len(N), R, R)) if want_cov else None
    eye = np.eye(R)
    for u in range(len(N)):
        factor = _cholesky(L_all[u], f"epoch {u}")
        means[u] = scipy.linalg.cho_solve(factor, b_all[u])
        if want_cov:
            covs[u] = scipy.linalg.cho_solve(factor, eye)
    return means, covs


def extract_ivector(tv: TotalVariability, stats: BaumWelchStats, **identity) -> IVector:
    """Posterior mean of w given the statistics, prior N(0, I)."""
    N, Fc = _stack_stats([stats], tv)
    means, _ = _posteriors(tv, N, Fc, want_cov=False)
    return IVector(means[0], **identity)


def extract_ivectors(tv: TotalVariability, stats_list):
    """Batch form of :func:`extract_ivector`; returns a (U, R) array."""
    if len(stats_list) == 0:
        return np.zeros((0, tv.rank))
    N, Fc = _stack_stats(stats_list, tv)
    return _posteriors(tv, N, Fc, want_cov=False)[0]


def tv_train(tv: TotalVariability, all_stats, iterations=5, min_divergence=True):
    """EM re-estimation of T; the UBM stays fixed.

    With ``min_divergence`` each M-step is followed by ``T <- T chol(K)``
    where ``K`` is the average posterior second moment of w. Without it EM
    creeps towards the right scale of T at a rate close to 1 per iteration.
    """
    if len(all_stats) == 0:
        raise ValidationError("tv_train needs at least one epoch of statistics")
    N, Fc = _stack_stats(all_stats, tv)
    C, F, R = tv.ubm.n_components, tv.ubm.dim, tv.rank
    for it in range(iterations):
        Ew, cov = _posteriors(tv, N, Fc, want_cov=True)
        Eww = cov + Ew[:, :, None] * Ew[:, None, :]
        A = (N.T @ Eww.reshape(len(N), R * R)).reshape(C, R, R)
        Cacc = (Fc.T @ Ew).reshape(C, F, R)
        T_new = np.empty((C, F, R))
        for c in range(C):
            Ac = 0.5 * (A[c] + A[c].T)
            try:
                factor = scipy.linalg.cho_factor(Ac, lower=True)
            except (np.linalg.LinAlgError, ValueError):
                warnings.warn(f"singular M-step accumulator for component {c}; adding ridge",
                              RuntimeWarning, stacklevel=2)
                factor = scipy.linalg.cho_factor(Ac + MSTEP_RIDGE * np.eye(R), lower=True)
            T_new[c] = scipy.linalg.cho_solve(factor, Cacc[c].T).T
        if min_divergence:
            K = Eww.mean(axis=0)
            T_new = T_new @ np.linalg.cholesky(0.5 * (K + K.T))
        if not np.all(np.isfinite(T_new)):
            raise NumericalError("non-finite T-matrix", iteration=it)
        tv = TotalVariability(T_new.reshape(C * F, R), tv.ubm)
        logger.info("TV EM iteration %d: mean |w|^2 %.4f", it, float((Ew ** 2).sum(axis=1).mean()))
    return tv


def _check_order(series):
    keys = [iv.key for iv in series]
    for a, b in zip(keys, keys[1:]):
        if not a < b:
            raise ValidationError(f"i-vector series not ordered by (subject, session, block, index): {a} then {b}")


def postprocess_ivectors(series, window, stats=None, floor=None):
    """Per-block trailing SMA, then GMVN.

    ``stats=None`` fits GMVN on the smoothed series itself (training data);
    pass the training stats to transform test data. Returns
    ``(processed series, stats)``.
    """
    series = list(series)
    _check_order(series)
    if not series:
        if stats is None:
            raise ValidationError("cannot fit GMVN on an empty series")
        return [], stats
    W = np.stack([iv.w for iv in series])
    blocks = [iv.key[:3] for iv in series]
    smoothed = sma_smooth(W, window, segments=blocks)
    if stats is None:
        stats = fit_gmvn([smoothed]) if floor is None else fit_gmvn([smoothed], floor)
    normed = apply_gmvn(smoothed, stats)
    return [iv.with_w(w) for iv, w in zip(series, normed)], stats


def write_ivectors(series, path, header=None):
    with open(path, "w") as fh:
        if header is not None:
            fh.write(json.dumps({"header": header}) + "\n")
        for iv in series:
            fh.write(json.dumps(iv.to_record()) + "\n")


def read_ivectors(path):
    """Returns (header or None, list of IVector)."""
    header = None
    out = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            if "header" in d:
                header = d["header"]
            else:
                out.append(IVector.from_record(d))
    return header, out
