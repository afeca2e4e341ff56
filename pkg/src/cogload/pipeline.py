"""Experiment configuration and the staged end-to-end runner.

Every stage reads its inputs through :meth:`Pipeline._artifact`, which
returns the in-memory result of an earlier stage or loads it from the
output directory, so running stages one CLI call at a time and calling
:meth:`Pipeline.run` take the same code path.
"""

from __future__ import annotations

import copy
import dataclasses
import functools
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import classifier, ensemble, evaluation, features, gmm, ivector
from .dataset import EpochDataset, SplitMode, SplitSpec, load_epoch_file, make_split
from .errors import CogloadError, ConfigError, ValidationError
from .presets import ENSEMBLE_PRESETS, get_preset

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SMA_STAGES = ("ivector", "frame")


@dataclass(frozen=True)
class UbmConfig:
    components: int = 512
    kmeans_iterations: int = 10
    em_iterations: int = 20
    subsample: int = 1


@dataclass(frozen=True)
class TvConfig:
    rank: int = 80
    iterations: int = 5
    min_divergence: bool = True


@dataclass(frozen=True)
class SystemConfig:
    grouping: str = "maxP21"
    sma_window: int = 16
    sma_stage: str = "ivector"
    deltas: bool = True
    gmvn_floor: float = features.DEFAULT_GMVN_FLOOR
    ubm: UbmConfig = UbmConfig()
    tv: TvConfig = TvConfig()
    mlp: classifier.TrainConfig = classifier.TrainConfig()

    def __post_init__(self):
        if self.sma_stage not in SMA_STAGES:
            raise ConfigError(f"sma_stage must be one of {SMA_STAGES}")
        if int(self.sma_window) != self.sma_window or self.sma_window < 1:
            raise ConfigError("sma_window must be a positive integer")
        if self.ubm.components < 1 or self.ubm.subsample < 1:
            raise ConfigError("ubm.components and ubm.subsample must be positive")
        if self.tv.rank < 1:
            raise ConfigError("tv.rank must be positive")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["mlp"] = self.mlp.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown system fields: {sorted(unknown)}")
        try:
            if "ubm" in d:
                d["ubm"] = UbmConfig(**d["ubm"])
            if "tv" in d:
                d["tv"] = TvConfig(**d["tv"])
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        if "mlp" in d:
            d["mlp"] = classifier.TrainConfig.from_dict(d["mlp"])
        return cls(**d)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    split: SplitSpec
    out_dir: str
    preset: str = "custom"
    system: SystemConfig = SystemConfig()
    seed: int = 0

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "dataset": str(self.dataset),
            "split": self.split.to_dict(),
            "preset": self.preset,
            "system": self.system.to_dict(),
            "out_dir": str(self.out_dir),
            "seed": self.seed,
        }

    @property
    def name(self):
        return self.preset if self.preset != "custom" else f"custom-{self.system.grouping}-SMA{self.system.sma_window}"

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def resolve_system(preset, overrides=None):
    """System settings for a preset, with non-preset fields overridable."""
    overrides = dict(overrides or {})
    if preset == "custom":
        return SystemConfig.from_dict(overrides)
    p = get_preset(preset)
    for key, value in (("grouping", p.grouping), ("sma_window", p.sma_window)):
        if key in overrides and overrides[key] != value:
            raise ConfigError(f"preset {preset!r} fixes {key}={value!r}; use preset 'custom' to change it")
        overrides[key] = value
    return SystemConfig.from_dict(overrides)


def _resolve_dataset_path(path, base_dir):
    path = Path(os.path.expandvars(str(path)))
    if path.is_absolute():
        return path
    data_dir = os.environ.get("COGLOAD_DATA_DIR")
    if data_dir and (Path(data_dir) / path).exists():
        return Path(data_dir) / path
    return (Path(base_dir) / path) if base_dir else path


def config_from_dict(d, base_dir=None, seed=None, out_dir=None):
    """Build an ExperimentConfig; ``seed``/``out_dir`` override file values."""
    version = d.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {version}")
    dataset = d.get("dataset")
    if dataset is None:
        data_dir = os.environ.get("COGLOAD_DATA_DIR")
        if not data_dir:
            raise ConfigError("config has no 'dataset' and COGLOAD_DATA_DIR is unset")
        dataset = data_dir
    dataset = _resolve_dataset_path(dataset, base_dir)
    if "split" not in d:
        raise ConfigError("config needs a 'split' section")
    try:
        split = SplitSpec.from_dict(d["split"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad split section: {exc}") from None
    preset = d.get("preset", "custom")
    system = resolve_system(preset, d.get("system"))
    out = out_dir if out_dir is not None else d.get("out_dir")
    if out is None:
        raise ConfigError("config needs an 'out_dir' (or pass --out)")
    if base_dir and out_dir is None and not Path(out).is_absolute():
        out = Path(base_dir) / out
    return ExperimentConfig(
        dataset=str(dataset),
        split=split,
        out_dir=str(out),
        preset=preset,
        system=system,
        seed=int(seed if seed is not None else d.get("seed", 0)),
    )


def load_config(path, seed=None, out_dir=None):
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return config_from_dict(d, base_dir=path.parent, seed=seed, out_dir=out_dir), d


@functools.lru_cache(maxsize=8)
def _file_sha256(path, size, mtime_ns):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dataset_digest(path):
    try:
        st = os.stat(path)
    except FileNotFoundError:
        raise ConfigError(f"dataset {path} not found") from None
    return _file_sha256(str(path), st.st_size, st.st_mtime_ns)


def _digest(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def split_hash(config):
    return _digest({"dataset": dataset_digest(config.dataset), "split": config.split.to_dict()})


def config_hash(config):
    d = config.to_dict()
    d.pop("out_dir")
    d["dataset"] = dataset_digest(config.dataset)
    return _digest(d)


def _seeds(seed):
    kmeans_seed, tv_seed, mlp_seed = np.random.SeedSequence(seed).generate_state(3)
    return int(kmeans_seed), int(tv_seed), int(mlp_seed)


def _stage(name):
    def wrap(fn):
        @functools.wraps(fn)
        def inner(self, *args, **kwargs):
            t0 = time.perf_counter()
            logger.info("[%s] %s: start", self.config.name, name)
            try:
                result = fn(self, *args, **kwargs)
            except CogloadError as exc:
                err = copy.copy(exc)
                err.args = (f"stage {name}: {exc}",)
                raise err from exc
            logger.info("[%s] %s: done in %.2fs", self.config.name, name, time.perf_counter() - t0)
            return result
        return inner
    return wrap


def _pack_sequences(seqs):
    offsets = np.cumsum([0] + [len(s) for s in seqs]).astype(np.int64)
    dim = seqs[0].shape[1] if seqs else 0
    frames = np.concatenate(seqs, axis=0) if seqs else np.zeros((0, dim))
    return frames, offsets


def _unpack(frames, offsets):
    return [frames[offsets[i]:offsets[i + 1]] for i in range(len(offsets) - 1)]


class Pipeline:
    """One system: featurize -> UBM -> stats -> TV -> extract -> postprocess
    -> classifier -> predict -> evaluate, persisted under ``out_dir``."""

    STAGES = ("featurize", "train_ubm", "accumulate_stats", "train_tv", "extract",
              "postprocess", "train_clf", "predict", "evaluate")

    def __init__(self, config: ExperimentConfig, dataset: EpochDataset | None = None):
        self.config = config
        self.out = Path(config.out_dir)
        self._dataset = dataset
        self._cache = {}
        self.hash = config_hash(config)
        self.split_hash = split_hash(config)

    # -- plumbing ---------------------------------------------------------

    @property
    def dataset(self):
        if self._dataset is None:
            self._dataset = load_epoch_file(self.config.dataset)
        return self._dataset

    def path(self, name):
        return self.out / name

    def _header(self, kind):
        return {"kind": kind, "config_hash": self.hash, "split_hash": self.split_hash,
                "system_name": self.config.name}

    def _check_hash(self, found, what):
        if found != self.hash:
            raise ConfigError(
                f"{what} was produced by config {found}, current config is {self.hash}; "
                "refusing to reuse it (use a fresh --out directory)"
            )

    def _artifact(self, name):
        if name not in self._cache:
            self._cache[name] = getattr(self, f"_load_{name}")()
        return self._cache[name]

    def _load_npz(self, filename):
        path = self.path(filename)
        if not path.exists():
            raise ConfigError(f"missing artifact {path}; run the earlier stage first")
        with np.load(path, allow_pickle=False) as z:
            data = {k: z[k] for k in z.files}
        self._check_hash(str(data.pop("config_hash")), path.name)
        return data

    def _load_json(self, filename):
        path = self.path(filename)
        if not path.exists():
            raise ConfigError(f"missing artifact {path}; run the earlier stage first")
        d = json.loads(path.read_text())
        self._check_hash(d.get("config_hash"), path.name)
        return d

    def _load_jsonl(self, filename, reader):
        path = self.path(filename)
        if not path.exists():
            raise ConfigError(f"missing artifact {path}; run the earlier stage first")
        header, items = reader(path)
        self._check_hash((header or {}).get("config_hash"), path.name)
        return items

    def has_valid(self, stage_artifact):
        try:
            self._artifact(stage_artifact)
            return True
        except (ConfigError, ValidationError):
            return False

    # -- stages -----------------------------------------------------------

    def _grouping(self):
        name = self.config.system.grouping
        if name.endswith(".json"):
            return features.load_grouping_file(name)
        return features.builtin_grouping(name)

    @_stage("featurize")
    def featurize(self):
        sysc = self.config.system
        ds = self.dataset
        train, test = make_split(ds, self.config.split)
        grouping = self._grouping()

        def feats(records):
            out = []
            for rec in records:
                x = features.featurize_epoch(rec.frames, grouping, ds.channel_names, sysc.deltas)
                if sysc.sma_stage == "frame":
                    x = features.sma_smooth(x, sysc.sma_window)
                out.append(x)
            return out

        train_seqs, test_seqs = feats(train), feats(test)
        extra = {}
        if sysc.sma_stage == "frame":
            stats = features.fit_gmvn(train_seqs, sysc.gmvn_floor)
            train_seqs = [features.apply_gmvn(s, stats) for s in train_seqs]
            test_seqs = [features.apply_gmvn(s, stats) for s in test_seqs]
            extra = {"frame_gmvn_mean": stats.mean, "frame_gmvn_std": stats.std}
        result = {"config_hash": np.array(self.hash)}
        for side, recs, seqs in (("train", train, train_seqs), ("test", test, test_seqs)):
            frames, offsets = _pack_sequences(seqs)
            result[f"{side}_frames"] = frames
            result[f"{side}_offsets"] = offsets
            result[f"{side}_keys"] = np.array([r.key for r in recs], dtype=np.int64).reshape(-1, 4)
            result[f"{side}_labels"] = np.array([int(r.label) for r in recs], dtype=np.int64)
        result.update(extra)
        self.out.mkdir(parents=True, exist_ok=True)
        np.savez(self.path("features.npz"), **result)
        result.pop("config_hash")
        self._cache["features"] = result
        return result

    def _load_features(self):
        return self._load_npz("features.npz")

    @_stage("train-ubm")
    def train_ubm(self):
        ubmc = self.config.system.ubm
        feats = self._artifact("features")
        frames = np.ascontiguousarray(feats["train_frames"][:: ubmc.subsample])
        floor = gmm.variance_floor(frames)
        kmeans_seed, _, _ = _seeds(self.config.seed)
        init = gmm.kmeans_init(frames, ubmc.components, seed=kmeans_seed,
                               iterations=ubmc.kmeans_iterations, floor=floor)
        model, trace = gmm.em_fit(frames, init, ubmc.em_iterations, floor)
        gmm.save_gmm(model, self.path("ubm.json"), config_hash=self.hash, loglik_trace=trace)
        self._cache["ubm"] = model
        return model, trace

    def _load_ubm(self):
        return gmm.DiagonalGmm.from_dict(self._load_json("ubm.json"))

    @_stage("accumulate-stats")
    def accumulate_stats(self):
        ubm = self._artifact("ubm")
        feats = self._artifact("features")
        result = {"config_hash": np.array(self.hash)}
        for side in ("train", "test"):
            seqs = _unpack(feats[f"{side}_frames"], feats[f"{side}_offsets"])
            stats = [gmm.accumulate_bw_stats(ubm, s) for s in seqs]
            result[f"{side}_zeroth"] = np.array([s.zeroth for s in stats]).reshape(-1, ubm.n_components)
            result[f"{side}_first"] = np.array([s.first_centered for s in stats]).reshape(
                -1, ubm.n_components, ubm.dim)
        np.savez(self.path("stats.npz"), **result)
        result.pop("config_hash")
        self._cache["stats"] = result
        return result

    def _load_stats(self):
        return self._load_npz("stats.npz")

    def _stats_list(self, side):
        st = self._artifact("stats")
        return [gmm.BaumWelchStats(n, f) for n, f in zip(st[f"{side}_zeroth"], st[f"{side}_first"])]

    @_stage("train-tv")
    def train_tv(self):
        tvc = self.config.system.tv
        ubm = self._artifact("ubm")
        _, tv_seed, _ = _seeds(self.config.seed)
        tv = ivector.tv_init(ubm, tvc.rank, seed=tv_seed)
        tv = ivector.tv_train(tv, self._stats_list("train"), tvc.iterations,
                              min_divergence=tvc.min_divergence)
        ivector.save_tv(tv, self.path("tv.json"), config_hash=self.hash)
        self._cache["tv"] = tv
        return tv

    def _load_tv(self):
        d = self._load_json("tv.json")
        return ivector.TotalVariability.from_dict(d, self._artifact("ubm"))

    def _series(self, side, W):
        feats = self._artifact("features")
        keys, labels = feats[f"{side}_keys"], feats[f"{side}_labels"]
        return [ivector.IVector(w, *map(int, k), label=int(lab)) for w, k, lab in zip(W, keys, labels)]

    @_stage("extract")
    def extract(self):
        tv = self._artifact("tv")
        out = {}
        for side in ("train", "test"):
            series = self._series(side, ivector.extract_ivectors(tv, self._stats_list(side)))
            ivector.write_ivectors(series, self.path(f"ivectors_{side}.jsonl"), self._header(f"ivectors_{side}"))
            out[side] = series
        self._cache["ivectors"] = out
        return out

    def _load_ivectors(self):
        return {side: self._load_jsonl(f"ivectors_{side}.jsonl", ivector.read_ivectors)
                for side in ("train", "test")}

    @_stage("postprocess")
    def postprocess(self):
        sysc = self.config.system
        window = sysc.sma_window if sysc.sma_stage == "ivector" else 1
        raw = self._artifact("ivectors")
        train, stats = ivector.postprocess_ivectors(raw["train"], window, floor=sysc.gmvn_floor)
        test, _ = ivector.postprocess_ivectors(raw["test"], window, stats=stats)
        with open(self.path("ivector_gmvn.json"), "w") as fh:
            json.dump({**stats.to_dict(), "config_hash": self.hash}, fh)
        for side, series in (("train", train), ("test", test)):
            ivector.write_ivectors(series, self.path(f"post_{side}.jsonl"), self._header(f"post_{side}"))
        out = {"train": train, "test": test}
        self._cache["post"] = out
        return out

    def _load_post(self):
        return {side: self._load_jsonl(f"post_{side}.jsonl", ivector.read_ivectors)
                for side in ("train", "test")}

    @_stage("train-clf")
    def train_clf(self):
        train = self._artifact("post")["train"]
        X = np.stack([iv.w for iv in train])
        y = np.array([iv.label for iv in train])
        _, _, mlp_seed = _seeds(self.config.seed)
        cfg = dataclasses.replace(self.config.system.mlp, seed=mlp_seed)
        model = classifier.train_mlp(X, y, cfg)
        classifier.save_mlp(model, self.path("mlp.json"), config_hash=self.hash)
        self._cache["mlp"] = model
        return model

    def _load_mlp(self):
        return classifier.MlpModel.from_dict(self._load_json("mlp.json"))

    @_stage("predict")
    def predict(self):
        model = self._artifact("mlp")
        test = self._artifact("post")["test"]
        probs = classifier.predict_proba(model, np.stack([iv.w for iv in test]))
        records = []
        for iv, p in zip(test, probs):
            records.append({"subject": iv.subject, "session": iv.session, "block": iv.block,
                            "index": iv.index, "label": int(np.argmax(p)),
                            "posterior": p.tolist(), "truth": iv.label})
        ensemble.write_predictions(records, self.path("predictions.jsonl"), self._header("predictions"))
        self._cache["predictions"] = records
        return records

    def _load_predictions(self):
        return self._load_jsonl("predictions.jsonl", ensemble.read_predictions)

    @_stage("evaluate")
    def evaluate(self):
        records = self._artifact("predictions")
        report = evaluate_records(records, split=self.config.split.describe(), title=self.config.name)
        write_report(report, self.out)
        return report

    def run(self):
        for stage in self.STAGES:
            result = getattr(self, stage)()
        return result


def evaluate_records(records, split="", title=""):
    keys = [(r["subject"], r["session"], r["block"], r["index"]) for r in records]
    return evaluation.evaluate(
        list(zip(keys, (r["label"] for r in records))),
        list(zip(keys, (r["truth"] for r in records))),
        split=split, title=title,
    )


def write_report(report, out_dir, stem="report"):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for fmt in ("text", "csv", "json"):
        ext = "txt" if fmt == "text" else fmt
        (out_dir / f"{stem}.{ext}").write_bytes(evaluation.render_report(report, fmt))
    (out_dir / f"{stem}.full.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")


def is_multi_subject(config):
    """True for a subject-dependent split that spans several subjects."""
    if config.split.mode is not SplitMode.SubjectDependent:
        return False
    subjects = config.split.train_subjects
    return subjects is None or len(subjects) != 1


def subject_configs(config, dataset):
    """Split a multi-subject subject-dependent config into one per subject."""
    subjects = sorted(config.split.train_subjects or dataset.subjects())
    out = []
    for s in subjects:
        split = dataclasses.replace(config.split, train_subjects=frozenset([s]), test_subjects=frozenset([s]))
        out.append(config.replace(split=split, out_dir=str(Path(config.out_dir) / evaluation.subject_name(s))))
    return out


def run_experiment(config: ExperimentConfig, dataset=None):
    """Run one system end to end. Subject-dependent splits over several
    subjects train one model per subject and report them together."""
    if is_multi_subject(config):
        return run_subject_dependent(config, dataset)
    return Pipeline(config, dataset).run()


def run_subject_dependent(config, dataset=None, stages=Pipeline.STAGES):
    dataset = dataset if dataset is not None else load_epoch_file(config.dataset)
    records = []
    for sub in subject_configs(config, dataset):
        pipe = Pipeline(sub, dataset)
        for stage in stages:
            getattr(pipe, stage)()
        records.extend(pipe._artifact("predictions"))
    records.sort(key=lambda r: (r["subject"], r["session"], r["block"], r["index"]))
    report = evaluate_records(records, split=config.split.describe(), title="subject-dependent")
    write_report(report, config.out_dir)
    return report


def ensemble_configs(base: ExperimentConfig, presets=ENSEMBLE_PRESETS):
    """One config per preset, sharing everything but grouping and SMA window."""
    configs = []
    base_sys = base.system.to_dict()
    for name in presets:
        overrides = {k: v for k, v in base_sys.items() if k not in ("grouping", "sma_window")}
        configs.append(base.replace(preset=name, system=resolve_system(name, overrides),
                                    out_dir=str(Path(base.out_dir) / name)))
    return configs


def _run_one(config):
    pipe = Pipeline(config)
    if not pipe.has_valid("predictions"):
        pipe.run()
    return pipe._artifact("predictions")


def run_ensemble(configs, out_dir=None, jobs=1, dataset=None, name=ensemble.ENSEMBLE_NAME):
    """Run (or reuse) every system, vote per epoch and evaluate."""
    configs = list(configs)
    if not configs:
        raise ConfigError("ensemble needs at least one system")
    hashes = {split_hash(c) for c in configs}
    if len(hashes) != 1:
        raise ConfigError("ensemble systems must share dataset and split")
    names = [c.name for c in configs]
    # Identical systems get distinct keys so every one of them votes.
    keys = [n if names.count(n) == 1 else f"{n}#{i}" for i, n in enumerate(names)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_one, configs))
    else:
        outputs = []
        for c in configs:
            pipe = Pipeline(c, dataset)
            if not pipe.has_valid("predictions"):
                pipe.run()
            outputs.append(pipe._artifact("predictions"))
    per_system = dict(zip(keys, outputs))
    combined = ensemble.combine_predictions(per_system)
    out_dir = Path(out_dir if out_dir is not None else Path(configs[0].out_dir).parent)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = {"kind": "predictions", "system_name": name, "split_hash": hashes.pop(),
              "members": keys}
    ensemble.write_predictions(combined, out_dir / "predictions.jsonl", header)
    split = configs[0].split.describe()
    report = evaluate_records(combined, split=split, title=f"{name} combination")
    write_report(report, out_dir)
    columns = {k: evaluate_records(per_system[k], split=split, title=k) for k in keys}
    columns[f"{name} combination"] = report
    for fmt, ext in (("text", "txt"), ("csv", "csv"), ("json", "json")):
        (out_dir / f"table.{ext}").write_bytes(evaluation.render_comparison(columns, fmt))
    return report
