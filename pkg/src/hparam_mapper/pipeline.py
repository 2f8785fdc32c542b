"""End-to-end pipeline: prepare, train, evaluate, report.

Every stage writes into its own directory under the configured output
directory and finishes by writing a ``manifest.json`` with the config hash
and the SHA-256 of every file it produced. A stage whose manifest matches
the current configuration and whose files are intact is skipped. A stage
that fails removes its directory before raising
:class:`~hparam_mapper.errors.PipelineStageError`.

Layout::

    <output_dir>/prepare/   datasets/*.csv, metas/*.json, labels.json[, samples.json]
    <output_dir>/train/     model.json, curves.csv
    <output_dir>/evaluate/  report.json
    <output_dir>/report/    rows.csv, summary.json, long.csv
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import shutil
import time
from collections.abc import Callable, Iterator, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, TypeVar

import numpy as np

from .config import PipelineConfig
from .core_network import (
    CoreNetworkModel,
    build_cn,
    init_cn,
    predict,
    spearman,
    train_cn,
)
from .datasets import (
    SplitPair,
    TabularDataset,
    load_tabular,
    save_tabular,
    split,
    split_indices,
    zero_pad_features,
)
from .environments import Environment, HyperparamSpec, HyperparamVector, random_search
from .errors import (
    HparamMapperError,
    PipelineStageError,
    SpecMismatchError,
    TrainingDivergedError,
)
from .labeling import (
    LabeledExample,
    LabelRecord,
    label_dataset,
    load_label_file,
    save_label_file,
)
from .logging import get_logger
from .lopt import LoptResult, lopt
from .npe import EncodedMeta, encode_dataset, encoder_fingerprint, geometry_of
from .sampler import SamplePlan, SampleSet, compute_p0, plan_m, sample_independent
from .serialization import load_meta, load_model, params_digest, save_meta, save_model
from .synthetic import noisy_blob_family

logger = get_logger("pipeline")

STAGES = ("prepare", "train", "evaluate", "report")
GROUPS = ("CN", "CN+LOPT", "BASELINE", "BCG")
MANIFEST = "manifest.json"
MANIFEST_FORMAT = "hparam-mapper/manifest"
REPORT_FORMAT = "hparam-mapper/report"
STAT_NAMES = ("n", "max", "q3", "median", "mean", "sd", "q1", "min")
# Wall times are floored here before taking log10.
TIME_FLOOR = 1e-9

Clock = Callable[[], float]
T = TypeVar("T")
R = TypeVar("R")


def dataset_seed(seed: int, index: int) -> int:
    """Per-dataset seed derived from the run seed and the dataset's position."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: int) -> list[R]:
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def _write_manifest(
    directory: Path, stage: str, config_hash: str, payload: Mapping[str, Any], files: Sequence[str]
) -> None:
    doc = {
        "format": MANIFEST_FORMAT,
        "stage": stage,
        "config_hash": config_hash,
        "files": {name: _sha256(directory / name) for name in sorted(files)},
        **payload,
    }
    (directory / MANIFEST).write_text(json.dumps(doc, indent=2, sort_keys=True))


def read_manifest(directory: Path, stage: str, config_hash: str) -> dict[str, Any] | None:
    """The stage manifest if it matches ``config_hash`` and every file is intact."""
    path = directory / MANIFEST
    if not path.is_file():
        return None
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError:
        logger.warning(f"ignoring unreadable manifest {path}")
        return None
    if doc.get("format") != MANIFEST_FORMAT or doc.get("stage") != stage:
        return None
    if doc.get("config_hash") != config_hash:
        logger.info(f"stage '{stage}' was run under another configuration; rerunning")
        return None
    for name, digest in doc.get("files", {}).items():
        target = directory / name
        if not target.is_file() or _sha256(target) != digest:
            logger.warning(f"stage '{stage}': {name} is missing or modified; rerunning")
            return None
    return dict(doc)


def manifest_hash(directory: Path) -> str:
    return _sha256(directory / MANIFEST)


@contextmanager
def _stage(name: str, directory: Path) -> Iterator[None]:
    if directory.exists():
        shutil.rmtree(directory)
    directory.mkdir(parents=True)
    try:
        yield
    except PipelineStageError:
        shutil.rmtree(directory, ignore_errors=True)
        raise
    except (HparamMapperError, OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        shutil.rmtree(directory, ignore_errors=True)
        raise PipelineStageError(name, str(exc)) from exc


# ---------------------------------------------------------------------------
# Prepare
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PreparedExample:
    """One sampled dataset: where it is stored, its meta and its label."""

    dataset_id: str
    dataset_file: str
    seed: int
    meta: EncodedMeta
    label: LabelRecord

    @property
    def example(self) -> LabeledExample:
        return LabeledExample(self.meta, self.label.raw_label, self.label.achieved_accuracy)


@dataclass(frozen=True)
class PreparedArtifacts:
    """Output of the prepare stage."""

    root: Path
    examples: tuple[PreparedExample, ...]
    specs: tuple[HyperparamSpec, ...]
    encoder_hash: str
    n_features: int
    label_names: tuple[str, ...]
    plan: Mapping[str, Any] | None = None
    manifest_hash: str = ""

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    def dataset(self, example: PreparedExample) -> TabularDataset:
        return load_tabular(self.root / example.dataset_file, label_names=self.label_names)


def _plan(config: PipelineConfig, n: int) -> SamplePlan:
    args = config.sampling_plan_args()
    if args["m"] is None:
        return plan_m(n, args["subset_size"], args["k"], args["delta"], args["margin"])
    p0 = compute_p0(n, args["subset_size"], args["delta"])
    return SamplePlan(n, args["subset_size"], args["k"], args["delta"], args["m"], p0, args["m"])


def _load_sources(
    config: PipelineConfig,
) -> tuple[list[tuple[str, TabularDataset]], dict[str, Any] | None, SampleSet | None]:
    """Datasets to label, the sampling plan (corpus mode) and the sample set."""
    corpus_path = config.corpus_path
    if corpus_path is None:
        family = noisy_blob_family(**config.synthetic_args(), seed=config.seed)
        logger.info(f"synthetic corpus: {len(family)} noisy-blob datasets")
        return [(m.dataset_id, m.dataset) for m in family], None, None

    corpus = load_tabular(corpus_path)
    plan = _plan(config, corpus.n_rows)
    samples = sample_independent(corpus.n_rows, plan, seed=config.seed, source=str(corpus_path))
    width = len(str(len(samples) - 1))
    sources = [(f"s{i:0{width}d}", corpus.take(rows)) for i, rows in enumerate(samples.subsets)]
    plan_doc = {
        "n": plan.n,
        "subset_size": plan.subset_size,
        "k": plan.k,
        "delta": plan.delta,
        "m": plan.m,
        "m_min": plan.m_min,
        "p0": plan.p0,
        "expected": plan.expected,
        "retained": len(samples),
    }
    return sources, plan_doc, samples


def run_prepare(config: PipelineConfig) -> PreparedArtifacts:
    """Sample (or synthesize) datasets, encode each and label each.

    Each dataset is split 9:1 with its own derived seed; the train part is
    encoded and both parts are handed to the labeling oracle.

    Raises:
        PipelineStageError: With stage ``prepare``. An infeasible sampling
            plan is reported before anything is written.
    """
    root = config.output_dir / "prepare"
    config_hash = config.config_hash()
    if read_manifest(root, "prepare", config_hash) is not None:
        logger.info("prepare: up to date")
        return load_prepared(config)

    try:
        sources, plan_doc, samples = _load_sources(config)
    except (HparamMapperError, OSError, ValueError) as exc:
        raise PipelineStageError("prepare", str(exc)) from exc

    width = max(ds.n_features for _, ds in sources)
    first = sources[0][1]
    label_names = first.label_names or tuple(str(i) for i in range(first.n_classes))
    padded = [(dataset_id, zero_pad_features(ds, width)) for dataset_id, ds in sources]
    env = config.environment()
    encoder = config.encoder_spec()
    lopt_config = config.lopt_config()
    ratio = float(config.evaluation["split_ratio"])
    budget = config.labeling_budget

    def work(item: tuple[int, tuple[str, TabularDataset]]) -> tuple[EncodedMeta, LabelRecord]:
        index, (dataset_id, dataset) = item
        seed = dataset_seed(config.seed, index)
        pair = split(dataset, ratio, seed)
        meta = encode_dataset(pair.train, encoder, seed, dataset_id)
        record = label_dataset(env, pair, budget, seed, lopt_config, dataset_id)
        logger.info(
            f"prepared '{dataset_id}': encoder loss {meta.initial_loss:.4g} -> "
            f"{meta.final_loss:.4g}, label accuracy {record.achieved_accuracy:.4f}"
        )
        return meta, record

    with _stage("prepare", root):
        (root / "datasets").mkdir()
        (root / "metas").mkdir()
        results = _parallel_map(work, list(enumerate(padded)), config.workers)
        files = []
        entries = []
        for index, ((dataset_id, dataset), (meta, _record)) in enumerate(
            zip(padded, results, strict=True)
        ):
            data_file = f"datasets/{dataset_id}.csv"
            meta_file = f"metas/{dataset_id}.json"
            save_tabular(dataset, root / data_file)
            save_meta(meta, root / meta_file)
            files += [data_file, meta_file]
            entries.append(
                {
                    "dataset_id": dataset_id,
                    "dataset": data_file,
                    "meta": meta_file,
                    "seed": dataset_seed(config.seed, index),
                }
            )
        save_label_file([record for _, record in results], root / "labels.json")
        files.append("labels.json")
        if samples is not None:
            samples.save(root / "samples.json")
            files.append("samples.json")
        _write_manifest(
            root,
            "prepare",
            config_hash,
            {
                "examples": entries,
                "specs": [s.to_dict() for s in env.specs],
                "encoder_hash": encoder_fingerprint(
                    encoder, {"n_features": width, "n_classes": len(label_names)}
                ),
                "n_features": width,
                "label_names": list(label_names),
                "plan": plan_doc,
            },
            files,
        )
    return load_prepared(config)


def load_prepared(config: PipelineConfig) -> PreparedArtifacts:
    """Read the prepare stage's artifacts.

    Raises:
        PipelineStageError: If the stage has not completed under ``config``.
    """
    root = config.output_dir / "prepare"
    doc = read_manifest(root, "prepare", config.config_hash())
    if doc is None:
        raise PipelineStageError("prepare", f"no prepared artifacts in {root}; run prepare first")
    specs = tuple(HyperparamSpec.from_dict(s) for s in doc["specs"])
    labels = {r.dataset_id: r for r in load_label_file(root / "labels.json", specs)}
    examples = tuple(
        PreparedExample(
            dataset_id=e["dataset_id"],
            dataset_file=e["dataset"],
            seed=int(e["seed"]),
            meta=load_meta(root / e["meta"]),
            label=labels[e["dataset_id"]],
        )
        for e in doc["examples"]
    )
    return PreparedArtifacts(
        root=root,
        examples=examples,
        specs=specs,
        encoder_hash=str(doc["encoder_hash"]),
        n_features=int(doc["n_features"]),
        label_names=tuple(str(name) for name in doc["label_names"]),
        plan=doc.get("plan"),
        manifest_hash=manifest_hash(root),
    )


# ---------------------------------------------------------------------------
# Train
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainedModel:
    """Output of the train stage."""

    model: CoreNetworkModel
    path: Path
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


def meta_split(config: PipelineConfig, n_examples: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the examples the core network trains on and is evaluated on."""
    return split_indices(n_examples, float(config.evaluation["meta_split_ratio"]), config.seed)


def _write_curves(model: CoreNetworkModel | Sequence[float], path: Path) -> None:
    if isinstance(model, CoreNetworkModel):
        train_loss, val_loss = model.loss_history, model.validation_history
    else:
        train_loss, val_loss = tuple(model), ()
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "train_loss", "validation_loss"])
        for epoch, loss in enumerate(train_loss):
            val = val_loss[epoch] if epoch < len(val_loss) else math.nan
            writer.writerow([epoch, repr(float(loss)), repr(float(val))])


def run_train(config: PipelineConfig, prepared: PreparedArtifacts | None = None) -> TrainedModel:
    """Train the core network on the meta-train share of the labeled examples.

    Raises:
        PipelineStageError: With stage ``train``; a diverged run reports its
            last losses.
    """
    prepared = prepared or load_prepared(config)
    root = config.output_dir / "train"
    config_hash = config.config_hash()
    cached = read_manifest(root, "train", config_hash)
    if cached is not None and cached.get("prepare_manifest") == prepared.manifest_hash:
        logger.info("train: up to date")
        return TrainedModel(
            load_model(root / "model.json"),
            root / "model.json",
            tuple(cached["train_ids"]),
            tuple(cached["test_ids"]),
        )

    examples = prepared.examples
    if len(examples) < 2:
        raise PipelineStageError("train", f"need at least 2 labeled examples, have {len(examples)}")
    train_idx, test_idx = meta_split(config, len(examples))
    train_set = [examples[i] for i in train_idx]
    geometry = {"n_features": prepared.n_features, "n_classes": prepared.n_classes}

    with _stage("train", root):
        spec = build_cn(train_set[0].meta.matrix_shapes, prepared.specs, config.cn_config())
        try:
            model = train_cn([ex.example for ex in train_set], spec, seed=config.seed)
        except TrainingDivergedError as exc:
            # The stage directory is removed on failure; keep the curve beside it.
            curves = config.output_dir / "train-diverged-curves.csv"
            _write_curves(exc.loss_history, curves)
            tail = ", ".join(f"{v:.4g}" for v in exc.loss_history[-5:])
            raise PipelineStageError(
                "train",
                f"core network diverged at epoch {exc.epoch} (last losses: {tail}; "
                f"curve in {curves})",
            ) from exc
        model = replace(model, encoder=config.encoder_spec(), geometry=geometry)
        save_model(model, root / "model.json")
        _write_curves(model, root / "curves.csv")
        _write_manifest(
            root,
            "train",
            config_hash,
            {
                "prepare_manifest": prepared.manifest_hash,
                "train_ids": [examples[i].dataset_id for i in train_idx],
                "test_ids": [examples[i].dataset_id for i in test_idx],
            },
            ["model.json", "curves.csv"],
        )
    return TrainedModel(
        model,
        root / "model.json",
        tuple(examples[i].dataset_id for i in train_idx),
        tuple(examples[i].dataset_id for i in test_idx),
    )


# ---------------------------------------------------------------------------
# Evaluate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunRow:
    """Outcome of one group on one held-out dataset.

    ``wall_time_seconds`` covers producing the vector: prediction for CN and
    BCG, prediction plus refinement for CN+LOPT, the search for BASELINE.
    Encoding time is reported separately in ``encode_seconds``.
    """

    dataset_id: str
    group: str
    accuracy: float
    wall_time_seconds: float
    evaluations: int = 0
    encode_seconds: float = 0.0
    vector: Mapping[str, float] = field(default_factory=dict)
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error and math.isfinite(self.accuracy)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset_id": self.dataset_id,
            "group": self.group,
            "accuracy": self.accuracy,
            "wall_time_seconds": self.wall_time_seconds,
            "evaluations": self.evaluations,
            "encode_seconds": self.encode_seconds,
            "vector": dict(self.vector),
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> RunRow:
        return cls(
            dataset_id=str(doc["dataset_id"]),
            group=str(doc["group"]),
            accuracy=float(doc["accuracy"]),
            wall_time_seconds=float(doc["wall_time_seconds"]),
            evaluations=int(doc.get("evaluations", 0)),
            encode_seconds=float(doc.get("encode_seconds", 0.0)),
            vector={k: float(v) for k, v in doc.get("vector", {}).items()},
            error=str(doc.get("error", "")),
        )


def describe(values: Sequence[float]) -> dict[str, float]:
    """Max, quartiles (linear interpolation), mean, sample sd and min.

    >>> describe([1.0, 2.0, 3.0, 4.0])["median"]
    2.5
    """
    data = np.asarray(values, dtype=np.float64)
    if data.size == 0:
        raise ValueError("cannot describe an empty sample")
    q1, median, q3 = np.quantile(data, [0.25, 0.5, 0.75])
    return {
        "n": float(data.size),
        "max": float(data.max()),
        "q3": float(q3),
        "median": float(median),
        "mean": float(data.mean()),
        "sd": float(data.std(ddof=1)) if data.size > 1 else 0.0,
        "q1": float(q1),
        "min": float(data.min()),
    }


def summarize(rows: Sequence[RunRow]) -> dict[str, dict[str, dict[str, float]]]:
    """Per group, statistics of accuracy, wall time and log10 wall time.

    Failed rows are left out; a group without successful rows is omitted
    with a warning.
    """
    summaries: dict[str, dict[str, dict[str, float]]] = {}
    groups = [g for g in GROUPS if any(r.group == g for r in rows)]
    groups += sorted({r.group for r in rows} - set(GROUPS))
    for group in groups:
        ok = [r for r in rows if r.group == group and r.ok]
        if not ok:
            logger.warning(f"group {group} has no successful rows; left out of the summary")
            continue
        times = [r.wall_time_seconds for r in ok]
        summaries[group] = {
            "accuracy": describe([r.accuracy for r in ok]),
            "wall_time_seconds": describe(times),
            "log10_wall_time": describe([_log10_time(t) for t in times]),
        }
    return summaries


def _log10_time(seconds: float) -> float:
    return math.log10(max(seconds, TIME_FLOOR))


@dataclass(frozen=True)
class RunReport:
    """Per-dataset rows, their per-group summaries and rank correlations.

    ``correlations`` holds, per hyperparameter, the Spearman correlation
    between the core network's predictions and the oracle labels over the
    held-out datasets, both in the working scale.
    """

    rows: tuple[RunRow, ...]
    summaries: Mapping[str, Mapping[str, Mapping[str, float]]]
    correlations: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def from_rows(
        cls, rows: Sequence[RunRow], correlations: Mapping[str, float] | None = None
    ) -> RunReport:
        return cls(tuple(rows), summarize(rows), dict(correlations or {}))

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": REPORT_FORMAT,
            "rows": [r.to_dict() for r in self.rows],
            "summaries": {
                g: {m: dict(s) for m, s in ms.items()} for g, ms in self.summaries.items()
            },
            "correlations": dict(self.correlations),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> RunReport:
        if doc.get("format") != REPORT_FORMAT:
            raise ValueError(f"unknown report format {doc.get('format')!r}")
        rows = [RunRow.from_dict(r) for r in doc["rows"]]
        return cls.from_rows(rows, {k: float(v) for k, v in doc.get("correlations", {}).items()})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> RunReport:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _timed(clock: Clock, fn: Callable[[], T]) -> tuple[T, float]:
    start = clock()
    value = fn()
    return value, clock() - start


def _evaluate_dataset(
    example: PreparedExample,
    prepared: PreparedArtifacts,
    model: CoreNetworkModel,
    blank: CoreNetworkModel,
    config: PipelineConfig,
    env: Environment,
    clock: Clock,
) -> tuple[list[RunRow], HyperparamVector | None]:
    dataset_id = example.dataset_id
    ratio = float(config.evaluation["split_ratio"])
    try:
        pair = split(prepared.dataset(example), ratio, example.seed)
        encoder = model.encoder or config.encoder_spec()
        meta, encode_seconds = _timed(
            clock, lambda: encode_dataset(pair.train, encoder, example.seed, dataset_id)
        )

        predicted, cn_time = _timed(clock, lambda: predict(model, meta))
        cn_accuracy = env.evaluate(predicted, pair)

        refined: LoptResult
        refined, lopt_time = _timed(
            clock, lambda: lopt(predicted, env, pair, config.lopt_config())
        )

        budget = config.evaluation["baseline_budget"] or refined.evaluations
        searched, search_time = _timed(
            clock, lambda: random_search(env, pair, int(budget), seed=example.seed)
        )

        blank_vector, blank_time = _timed(clock, lambda: predict(blank, meta))
        blank_accuracy = env.evaluate(blank_vector, pair)
    except (HparamMapperError, ValueError, RuntimeError, FloatingPointError) as exc:
        logger.warning(f"evaluation of '{dataset_id}' failed: {exc}")
        return [RunRow(dataset_id, g, math.nan, math.nan, error=str(exc)) for g in GROUPS], None

    rows = [
        RunRow(dataset_id, "CN", cn_accuracy, cn_time, 1, encode_seconds, predicted.as_dict()),
        RunRow(
            dataset_id,
            "CN+LOPT",
            refined.accuracy,
            cn_time + lopt_time,
            refined.evaluations,
            encode_seconds,
            refined.vector.as_dict(),
        ),
        RunRow(
            dataset_id,
            "BASELINE",
            searched.accuracy,
            search_time,
            searched.evaluations,
            0.0,
            searched.vector.as_dict(),
        ),
        RunRow(
            dataset_id, "BCG", blank_accuracy, blank_time, 1, encode_seconds, blank_vector.as_dict()
        ),
    ]
    return rows, predicted


def _correlations(
    predictions: Sequence[tuple[HyperparamVector, HyperparamVector]],
    specs: Sequence[HyperparamSpec],
) -> dict[str, float]:
    out = {}
    for i, spec in enumerate(specs):
        predicted = [float(p.u()[i]) for p, _ in predictions]
        truth = [float(t.u()[i]) for _, t in predictions]
        out[spec.name] = spearman(predicted, truth) if len(predictions) >= 2 else math.nan
    return out


def run_evaluate(
    config: PipelineConfig,
    trained: TrainedModel | None = None,
    prepared: PreparedArtifacts | None = None,
    clock: Clock = time.perf_counter,
) -> RunReport:
    """Compare the four groups on every held-out dataset.

    Groups: ``CN`` (prediction only), ``CN+LOPT`` (prediction refined by local
    search), ``BASELINE`` (random search with the evaluations CN+LOPT used,
    or ``evaluation.baseline_budget``) and ``BCG`` (an untrained core
    network). A dataset that fails yields error rows and the run continues.

    Args:
        config: Run configuration.
        trained: Train-stage output; read from disk when omitted.
        prepared: Prepare-stage output; read from disk when omitted.
        clock: Monotonic clock used for all wall times.

    Raises:
        PipelineStageError: With stage ``evaluate``.
    """
    prepared = prepared or load_prepared(config)
    trained = trained or run_train(config, prepared)
    model = trained.model
    if model.encoder_spec_hash != prepared.encoder_hash:
        raise PipelineStageError(
            "evaluate", "the model was trained on metas from another encoder spec"
        )
    root = config.output_dir / "evaluate"
    config_hash = config.config_hash()
    digest = params_digest(model.params.arrays())
    cached = read_manifest(root, "evaluate", config_hash)
    if cached is not None and cached.get("model_digest") == digest:
        logger.info("evaluate: up to date")
        return RunReport.load(root / "report.json")

    by_id = {ex.dataset_id: ex for ex in prepared.examples}
    held_out = [by_id[i] for i in trained.test_ids]
    env = config.environment()
    blank = init_cn(model.spec, config.seed, model.encoder_spec_hash)

    def work(example: PreparedExample) -> tuple[list[RunRow], HyperparamVector | None]:
        return _evaluate_dataset(example, prepared, model, blank, config, env, clock)

    with _stage("evaluate", root):
        results = _parallel_map(work, held_out, config.workers)
        rows = [row for dataset_rows, _ in results for row in dataset_rows]
        pairs = [
            (predicted, example.label.raw_label)
            for example, (_, predicted) in zip(held_out, results, strict=True)
            if predicted is not None
        ]
        report = RunReport.from_rows(rows, _correlations(pairs, prepared.specs))
        report.save(root / "report.json")
        _write_manifest(root, "evaluate", config_hash, {"model_digest": digest}, ["report.json"])
    for group, stats in report.summaries.items():
        acc = stats["accuracy"]
        logger.info(f"{group}: median accuracy {acc['median']:.4f} over {int(acc['n'])} datasets")
    return report


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


def report_render(report: RunReport, out_dir: str | Path) -> dict[str, Path]:
    """Write ``rows.csv``, ``summary.json`` and ``long.csv`` under ``out_dir``.

    ``long.csv`` has one ``group,metric,statistic,value`` line per summary
    cell, the layout plotting tools expect.

    Raises:
        ValueError: If the report has no rows.
    """
    if not report.rows:
        raise ValueError("cannot render an empty report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"rows": out / "rows.csv", "summary": out / "summary.json", "long": out / "long.csv"}

    with open(paths["rows"], "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [
                "dataset_id",
                "group",
                "accuracy",
                "wall_time_seconds",
                "log10_wall_time",
                "evaluations",
                "encode_seconds",
                "error",
            ]
        )
        for row in report.rows:
            log_time = _log10_time(row.wall_time_seconds) if row.ok else math.nan
            writer.writerow(
                [
                    row.dataset_id,
                    row.group,
                    repr(row.accuracy),
                    repr(row.wall_time_seconds),
                    repr(log_time),
                    row.evaluations,
                    repr(row.encode_seconds),
                    row.error,
                ]
            )

    summary = {
        "summaries": {g: {m: dict(s) for m, s in ms.items()} for g, ms in report.summaries.items()},
        "correlations": dict(report.correlations),
    }
    paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True))

    with open(paths["long"], "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["group", "metric", "statistic", "value"])
        for group, metrics in report.summaries.items():
            for metric, stats in metrics.items():
                for stat in STAT_NAMES:
                    writer.writerow([group, metric, stat, repr(stats[stat])])
    logger.info(f"report written to {out}")
    return paths


def run_all(config: PipelineConfig, clock: Clock = time.perf_counter) -> RunReport:
    """Run every stage in order, skipping the ones already up to date."""
    prepared = run_prepare(config)
    trained = run_train(config, prepared)
    report = run_evaluate(config, trained, prepared, clock)
    try:
        report_render(report, config.output_dir / "report")
    except (OSError, ValueError) as exc:
        raise PipelineStageError("report", str(exc)) from exc
    return report


# ---------------------------------------------------------------------------
# Single-dataset helpers
# ---------------------------------------------------------------------------


def predict_for_dataset(
    model: CoreNetworkModel,
    dataset: TabularDataset,
    seed: int = 0,
    split_ratio: float = 0.9,
) -> tuple[HyperparamVector, SplitPair[TabularDataset]]:
    """Encode a new dataset the way the model's training data was and predict.

    The dataset is zero-padded to the model's feature width, split with
    ``seed`` and its train part encoded.

    Raises:
        SpecMismatchError: If the dataset is wider than the model allows, has
            more classes than it was trained for or the model carries no
            encoder settings.
    """
    if model.encoder is None or model.geometry is None:
        raise SpecMismatchError("the model records no encoder settings")
    width = int(model.geometry["n_features"])
    if dataset.n_features > width:
        raise SpecMismatchError(
            f"dataset has {dataset.n_features} features, the model accepts at most {width}"
        )
    n_classes = int(model.geometry["n_classes"])
    if dataset.n_classes > n_classes:
        raise SpecMismatchError(
            f"dataset has {dataset.n_classes} classes, the model was trained for {n_classes}"
        )
    padded = zero_pad_features(dataset, width)
    if padded.n_classes != n_classes:
        padded = replace(padded, n_classes=n_classes)
    geometry = geometry_of(padded)
    if geometry != dict(model.geometry):
        raise SpecMismatchError(f"dataset geometry {geometry} does not fit the model")
    pair = split(padded, split_ratio, seed)
    meta = encode_dataset(pair.train, model.encoder, seed, "input")
    return predict(model, meta), pair
