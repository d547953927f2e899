"""Command-line interface.

Subcommands:

    synth     write a synthetic dataset (CSV samples + manifest)
    train     fit a model (mvt-flow, knn or pca) on a dataset's train split
    score     score one sample CSV with a trained model
    eval      per-anomaly-type AUROC on a dataset's test split
    temporal  per-timestep input-gradient trace for one sample CSV

Runs are driven by a key=value config file (see DEFAULT_CONFIG); command-line
``--set key=value`` and ``--seed`` override file values. Every output is
accompanied by the fully resolved config for provenance, and trained model
files embed the preprocessor statistics plus the config, so score/eval/
temporal need no extra options. MVTFLOW_LOG=debug|info|warning|quiet
controls verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines, data, evaluation, flow, score, serialize, train
from .rng import stream_seed

log = logging.getLogger("mvtflow")

DEFAULT_CONFIG = {
    "model": "mvt-flow",
    "seed": "0",
    "frequency_hz": "100",
    "subset": "all",
    "standardize": "true",
    "precision": "float32",
    "n_blocks": "4",
    "hidden_ratio": "2",
    "kernel_sizes": "13,1,1",
    "dilations": "2,1,1",
    "clamp_alpha": "3.0",
    "batch_size": "32",
    "lr": "8e-4",
    "lr_decay": "0.1",
    "decay_epochs": "11,61",
    "epochs": "70",
    "pca_components": "90",
}

_BOOL_VALUES = {"true": True, "1": True, "yes": True,
                "false": False, "0": False, "no": False}


@dataclass
class RunConfig:
    raw: dict[str, str]

    @classmethod
    def load(cls, path: str | None, overrides: dict[str, str]) -> "RunConfig":
        raw = dict(DEFAULT_CONFIG)
        if path:
            raw.update(_parse_config_file(path))
        for key, value in overrides.items():
            if key not in DEFAULT_CONFIG:
                raise ValueError(f"unknown config key {key!r}")
            raw[key] = value
        unknown = set(raw) - set(DEFAULT_CONFIG)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(raw)
        cfg.flow_config()  # validate eagerly
        cfg.train_config()
        if cfg.model_kind not in ("mvt-flow", "knn", "pca"):
            raise ValueError(f"model must be mvt-flow, knn or pca, "
                             f"got {cfg.model_kind!r}")
        return cfg

    def _bool(self, key: str) -> bool:
        value = self.raw[key].strip().lower()
        if value not in _BOOL_VALUES:
            raise ValueError(f"config {key}: expected a boolean, got {value!r}")
        return _BOOL_VALUES[value]

    def _ints(self, key: str) -> tuple[int, ...]:
        return tuple(int(v) for v in self.raw[key].split(",") if v.strip())

    @property
    def model_kind(self) -> str:
        return self.raw["model"]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def preprocess_config(self) -> data.PreprocessConfig:
        return data.PreprocessConfig(
            target_hz=float(self.raw["frequency_hz"]),
            subset=self.raw["subset"],
            standardize=self._bool("standardize"))

    def flow_config(self) -> flow.FlowConfig:
        return flow.FlowConfig(
            n_blocks=int(self.raw["n_blocks"]),
            hidden_ratio=int(self.raw["hidden_ratio"]),
            kernel_sizes=self._ints("kernel_sizes"),
            dilations=self._ints("dilations"),
            clamp_alpha=float(self.raw["clamp_alpha"]),
            dtype=self.raw["precision"])

    def train_config(self) -> train.TrainConfig:
        return train.TrainConfig(
            batch_size=int(self.raw["batch_size"]),
            lr=float(self.raw["lr"]),
            lr_decay=float(self.raw["lr_decay"]),
            decay_epochs=self._ints("decay_epochs"),
            epochs=int(self.raw["epochs"]),
            seed=self.seed)

    def with_seed(self, seed: int) -> "RunConfig":
        raw = dict(self.raw)
        raw["seed"] = str(seed)
        return RunConfig(raw)

    def to_text(self) -> str:
        lines = [f"{key} = {self.raw[key]}" for key in DEFAULT_CONFIG]
        return "\n".join(lines) + "\n"


def _parse_config_file(path: str) -> dict[str, str]:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _infer_schema(root: Path) -> data.SignalSchema:
    """Pick the schema from the columns of the first manifest sample."""
    import csv

    with open(root / "manifest.csv", "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{root}/manifest.csv is empty")
    with open(root / rows[0]["file"], "r", encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh))
    meta = set(data.METADATA_COLUMNS) | {"setting"}
    signal_names = [c for c in header if c not in meta]

    robot = data.robot_schema()
    if signal_names == robot.names:
        return robot
    synth = data.synthetic_schema(len(signal_names))
    if signal_names == synth.names:
        return synth
    log.info("unrecognized signal layout; using a generic schema "
             "(only subset=all is available)")
    return data.SignalSchema(
        [data.SignalInfo(n, "unspecified", "unspecified") for n in signal_names])


def _schema_from_names(names: list[str], category_names: dict) -> data.SignalSchema:
    robot = data.robot_schema()
    if names == robot.names:
        robot.category_names = category_names or robot.category_names
        return robot
    synth = data.synthetic_schema(len(names))
    if names == synth.names:
        synth.category_names = category_names or synth.category_names
        return synth
    return data.SignalSchema(
        [data.SignalInfo(n, "unspecified", "unspecified") for n in names],
        category_names)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise FileExistsError(f"{out} exists and is not empty (use --force)")
    config = data.SynthConfig(
        n_signals=args.signals, n_steps=args.steps, n_train=args.train,
        n_test_normal=args.normal_test, n_test_anomalies=args.anomalies)
    dataset = data.generate_synthetic(config, seed=args.seed)
    data.write_dataset(out, dataset)
    log.info("wrote %d train / %d test samples to %s",
             len(dataset.train), len(dataset.test), out)
    return 0


def _load_and_preprocess(root: Path, cfg: RunConfig):
    schema = _infer_schema(root)
    train_samples, test_samples = data.load_dataset(root, schema)
    preproc = data.Preprocessor.fit(train_samples, schema, cfg.preprocess_config())
    return schema, train_samples, test_samples, preproc


def _container_meta(cfg: RunConfig, preproc: data.Preprocessor,
                    schema: data.SignalSchema) -> tuple[dict, dict]:
    pre_meta, pre_arrays = preproc.to_meta()
    meta = {
        "run_config": dict(cfg.raw),
        "preprocessor": pre_meta,
        "schema_signals": schema.names,
        "category_names": {str(k): v for k, v in schema.category_names.items()},
    }
    return meta, pre_arrays


def _train_one(cfg: RunConfig, preproc: data.Preprocessor,
               train_samples: list[data.Sample], quiet: bool = False):
    """Train the configured model kind; returns (kind, model, train_result)."""
    matrix = preproc.apply_many(train_samples)
    kind = cfg.model_kind
    if kind == "mvt-flow":
        model = flow.MVTFlowModel(preproc.output_shape, cfg.flow_config(),
                                  seed=stream_seed(cfg.seed, "model-init"))
        result = train.train(model, matrix, cfg.train_config())
        return kind, model, result
    if kind == "knn":
        return kind, baselines.KnnModel.fit(matrix), None
    n_components = int(cfg.raw["pca_components"])
    model = baselines.PcaModel.fit(matrix, n_components, auto_cap=True)
    if not quiet:
        log.info("pca: %d components explain %.1f%% of the variance",
                 model.n_components, 100 * model.explained_variance_ratio)
    return kind, model, None


def cmd_train(args) -> int:
    cfg = RunConfig.load(args.config, dict(args.set or {}, **(
        {"seed": str(args.seed)} if args.seed is not None else {})))
    root = Path(args.data)
    schema, train_samples, _, preproc = _load_and_preprocess(root, cfg)
    kind, model, result = _train_one(cfg, preproc, train_samples)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    meta, pre_arrays = _container_meta(cfg, preproc, schema)
    if kind == "mvt-flow":
        flow.save_model(model, out, extra_meta=meta)
        _append_arrays(out, pre_arrays)
        train.write_loss_history(out.with_suffix(out.suffix + ".loss.csv"), result)
    else:
        model.save(out, extra_meta=meta)
        _append_arrays(out, pre_arrays)
    out.with_suffix(out.suffix + ".config.txt").write_text(cfg.to_text(),
                                                           encoding="utf-8")
    log.info("model written to %s", out)
    return 0


def _append_arrays(path: Path, arrays: dict[str, np.ndarray]) -> None:
    """Rewrite a container with extra arrays (preprocessor statistics)."""
    kind, meta, existing = serialize.load_container(path)
    existing.update(arrays)
    serialize.save_container(path, kind, meta, existing)


def _load_trained(path: Path):
    """Load any trained container; returns (kind, model, preproc, meta, schema)."""
    kind, meta, arrays = serialize.load_container(path)
    preproc = data.Preprocessor.from_meta(meta["preprocessor"], arrays)
    category_names = {int(k): v for k, v in meta.get("category_names", {}).items()}
    schema = _schema_from_names(meta["schema_signals"], category_names)
    if kind == "mvt-flow":
        model, _ = flow.load_model(path)
    else:
        kind, model, _ = baselines.load_baseline(path)
    return kind, model, preproc, meta, schema


def _scorer_for(kind, model, preproc):
    if kind == "mvt-flow":
        return lambda sample: score.score_array(model, preproc.apply(sample))
    return lambda sample: model.score(preproc.apply(sample))


def cmd_score(args) -> int:
    kind, model, preproc, meta, schema = _load_trained(Path(args.model))
    sample = data.read_sample_csv(args.input, schema)
    scorer = _scorer_for(kind, model, preproc)
    result = score.AnomalyScore(sample.sample_id, scorer(sample),
                                sample.category, sample.anomaly)
    if args.out:
        score.write_scores_csv(args.out, [result])
    print(f"{sample.sample_id},{result.score!r}")
    return 0


def cmd_eval(args) -> int:
    model_path = Path(args.model)
    kind, model, preproc, meta, schema = _load_trained(model_path)
    cfg = RunConfig(dict(meta["run_config"]))
    root = Path(args.data)
    train_samples, test_samples = data.load_dataset(root, schema)

    runs = args.runs
    if runs > 1 and kind != "mvt-flow":
        log.warning("%s training is deterministic; --runs reduced to 1", kind)
        runs = 1

    reports = []
    for run in range(runs):
        if run == 0:
            run_kind, run_model = kind, model
            run_seed = cfg.seed
        else:
            run_cfg = cfg.with_seed(cfg.seed + run)
            run_seed = run_cfg.seed
            log.info("retraining run %d/%d (seed %d)", run + 1, runs, run_seed)
            run_kind, run_model, _ = _train_one(run_cfg, preproc, train_samples,
                                                quiet=True)
        scorer = _scorer_for(run_kind, run_model, preproc)
        reports.append(evaluation.evaluate(
            scorer, test_samples, method=kind, seed=run_seed,
            category_names=schema.category_names))

    agg = evaluation.aggregate(reports)
    print(evaluation.render_table(agg))
    if args.out:
        evaluation.write_report_csv(args.out, agg)
    if args.scores_out:
        scorer = _scorer_for(kind, model, preproc)
        rows = [score.AnomalyScore(s.sample_id, scorer(s), s.category, s.anomaly)
                for s in test_samples]
        score.write_scores_csv(args.scores_out, rows)
    if args.roc_dir:
        _write_rocs(Path(args.roc_dir), reports[0], kind, model, preproc,
                    test_samples, schema)
    return 0


def _write_rocs(roc_dir: Path, report, kind, model, preproc, test_samples,
                schema) -> None:
    roc_dir.mkdir(parents=True, exist_ok=True)
    scorer = _scorer_for(kind, model, preproc)
    by_cat: dict[int, list[float]] = {}
    for sample in test_samples:
        by_cat.setdefault(sample.category, []).append(scorer(sample))
    normal = by_cat.pop(data.NORMAL_CATEGORY)
    for cat, pos in sorted(by_cat.items()):
        name = report.category_names.get(cat, f"category_{cat}")
        evaluation.write_roc_csv(roc_dir / f"roc_{cat:02d}_{name}.csv",
                                 evaluation.roc_points(pos, normal))


def cmd_temporal(args) -> int:
    kind, model, preproc, meta, schema = _load_trained(Path(args.model))
    if kind != "mvt-flow":
        raise ValueError("the temporal trace needs an mvt-flow model")
    sample = data.read_sample_csv(args.input, schema)
    trace = score.temporal_trace(model, preproc.apply(sample), sample.sample_id)
    score.write_trace_csv(args.out, trace, preproc.config.target_hz)
    log.info("trace for sample %d written to %s", sample.sample_id, args.out)
    return 0


# ---------------------------------------------------------------------------


class _KeyValue(argparse.Action):
    def __call__(self, parser, namespace, value, option_string=None):
        store = getattr(namespace, self.dest) or {}
        if "=" not in value:
            parser.error(f"{option_string} expects key=value, got {value!r}")
        key, _, val = value.partition("=")
        store[key.strip()] = val.strip()
        setattr(namespace, self.dest, store)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvtflow",
        description="Normalizing-flow anomaly detection for multivariate "
                    "time series, with 1-NN and PCA baselines.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--signals", type=int, default=8)
    p.add_argument("--steps", type=int, default=256)
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--normal-test", type=int, default=50)
    p.add_argument("--anomalies", type=int, default=80)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", action=_KeyValue, metavar="KEY=VALUE",
                   help="override a config value (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score one sample CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="per-anomaly-type AUROC evaluation")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--out", default=None)
    p.add_argument("--scores-out", default=None)
    p.add_argument("--roc-dir", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("temporal", help="per-timestep gradient trace")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_temporal)
    return parser


def _setup_logging() -> None:
    level_name = os.environ.get("MVTFLOW_LOG", "info").lower()
    levels = {"debug": logging.DEBUG, "info": logging.INFO,
              "warning": logging.WARNING, "quiet": logging.ERROR}
    if level_name not in levels:
        raise ValueError(f"MVTFLOW_LOG must be one of {sorted(levels)}")
    logging.basicConfig(level=levels[level_name],
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
