"""Command-line pipeline around the library.

Subcommands: synth, train, compress, decompress, evaluate, classify, compare.
Exit codes: 0 success, 1 usage or configuration error, 2 data or artifact
error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autoencoder, classify_eval, eval_metrics, preprocess
from ._fsutil import fchmod_default
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    FingerprintMismatchError,
    FlowcodecError,
    SchemaError,
)
from .flow_data import (
    Dataset,
    FeatureSchema,
    SplitIndices,
    SyntheticClassSpec,
    default_class_specs,
    generate_synthetic,
    load_csv,
    random_split,
    stratified_split,
    write_csv,
)
from .forest import TreeParams, fit_forest, predict, save_forest
from .latent import read_latent, write_latent
from .neural import TrainConfig

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3


@dataclass
class ForestSettings:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_split: int = 2
    max_features: str | int = "sqrt"
    save_model: bool = False

    def tree_params(self) -> TreeParams:
        return TreeParams(
            max_depth=self.max_depth,
            min_samples_split=self.min_samples_split,
            max_features=self.max_features,
        )


@dataclass
class MetricsSettings:
    kl_bins: int = 50
    original_width_bytes: int = 8
    latent_width_bytes: int = 4


@dataclass
class SynthSettings:
    n_per_class: int = 2000
    sigma: float = 0.45
    class_specs: list | None = None


@dataclass
class PipelineConfig:
    """Everything a run needs beyond file paths. JSON keys mirror the field
    names; unknown keys are rejected rather than ignored."""

    seed: int = 42
    test_fraction: float = 0.2
    fit_preprocessor_on: str = "train"
    hidden: tuple[int, ...] = autoencoder.DEFAULT_HIDDEN
    latent_dim: int = autoencoder.DEFAULT_LATENT
    latent_dtype: str = "float32"
    schema: FeatureSchema = field(default_factory=FeatureSchema)
    train: TrainConfig = field(default_factory=TrainConfig)
    forest: ForestSettings = field(default_factory=ForestSettings)
    metrics: MetricsSettings = field(default_factory=MetricsSettings)
    synth: SynthSettings = field(default_factory=SynthSettings)

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if self.fit_preprocessor_on not in ("train", "all"):
            raise ConfigError(
                f"fit_preprocessor_on must be 'train' or 'all', got {self.fit_preprocessor_on!r}"
            )
        if self.latent_dtype not in ("float32", "float64"):
            raise ConfigError(f"latent_dtype must be float32 or float64, got {self.latent_dtype!r}")
        if self.latent_dim < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError("layer widths must be positive")


def _build_block(cls, block: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(block) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**block)
    except (DataError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad {where} block: {exc}") from exc


def load_config(path: str | None, seed_override: int | None = None) -> PipelineConfig:
    """Parse the pipeline config JSON; None means all defaults.

    The top-level seed cascades into the training block unless that block
    pins its own; a --seed override beats both.
    """
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must hold a JSON object")

    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    seed = doc.get("seed", 42)
    if seed_override is not None:
        seed = seed_override
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")

    schema_value = doc.get("schema")
    try:
        if schema_value is None:
            schema = FeatureSchema()
        elif isinstance(schema_value, str):
            try:
                schema = FeatureSchema.from_dict(
                    json.loads(Path(schema_value).read_text(encoding="utf-8"))
                )
            except OSError as exc:
                raise ConfigError(f"cannot read schema file {schema_value}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"schema file {schema_value} is not valid JSON: {exc}") from exc
        elif isinstance(schema_value, dict):
            schema = FeatureSchema.from_dict(schema_value)
        else:
            raise ConfigError("schema must be an object or a path string")
    except SchemaError as exc:
        # A schema that cannot be constructed is a config problem, not a
        # data problem; keep the exit-code contract.
        raise ConfigError(f"bad schema in config: {exc}") from exc

    train_block = dict(doc.get("train", {}))
    if seed_override is not None or "seed" not in train_block:
        train_block["seed"] = seed
    train_cfg = _build_block(TrainConfig, train_block, "train")

    cfg = PipelineConfig(
        seed=seed,
        test_fraction=doc.get("test_fraction", 0.2),
        fit_preprocessor_on=doc.get("fit_preprocessor_on", "train"),
        hidden=tuple(doc.get("hidden", autoencoder.DEFAULT_HIDDEN)),
        latent_dim=doc.get("latent_dim", autoencoder.DEFAULT_LATENT),
        latent_dtype=doc.get("latent_dtype", "float32"),
        schema=schema,
        train=train_cfg,
        forest=_build_block(ForestSettings, dict(doc.get("forest", {})), "forest"),
        metrics=_build_block(MetricsSettings, dict(doc.get("metrics", {})), "metrics"),
        synth=_build_block(SynthSettings, dict(doc.get("synth", {})), "synth"),
    )
    return cfg


def _atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
    fchmod_default(fd)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: Path, doc: dict) -> None:
    _atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model_and_state(model_path: str, preprocessor_path: str, force: bool):
    model = autoencoder.load_model(model_path)
    state = preprocess.PreprocessorState.load(preprocessor_path)
    forced = False
    if model.preprocessor_fingerprint != state.fingerprint():
        if not force:
            raise FingerprintMismatchError(
                "model was trained with a different preprocessor "
                f"({model.preprocessor_fingerprint[:12]}... vs {state.fingerprint()[:12]}...); "
                "pass --force to override"
            )
        forced = True
        print("warning: preprocessor fingerprint mismatch overridden by --force", file=sys.stderr)
    if model.feature_names != state.feature_names:
        raise DataError(
            "model and preprocessor disagree on feature columns: "
            f"{model.feature_names} vs {state.feature_names}"
        )
    return model, state, forced


def _check_columns(ds: Dataset, model: autoencoder.AutoencoderModel) -> None:
    if tuple(ds.schema.compressible_columns) != model.feature_names:
        raise DataError(
            "dataset columns do not match the model's training columns: "
            f"{ds.schema.compressible_columns} vs {model.feature_names}"
        )


def _split(ds: Dataset, cfg: PipelineConfig) -> SplitIndices:
    if ds.is_labeled:
        return stratified_split(ds, cfg.test_fraction, cfg.seed)
    return random_split(len(ds), cfg.test_fraction, cfg.seed)


def cmd_synth(args) -> int:
    cfg = load_config(args.config, args.seed)
    if cfg.synth.class_specs is not None:
        try:
            specs = [SyntheticClassSpec.from_dict(d) for d in cfg.synth.class_specs]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad synth.class_specs entry: {exc}") from exc
    else:
        specs = default_class_specs(cfg.synth.sigma)
    n = args.n_per_class if args.n_per_class is not None else cfg.synth.n_per_class
    ds = generate_synthetic(n, specs, seed=cfg.seed, schema=cfg.schema)
    write_csv(ds, args.output)
    print(f"wrote {len(ds)} flows ({len(specs)} classes) to {args.output}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed)
    ds = load_csv(args.input, cfg.schema)
    split = _split(ds, cfg)
    train_rows = np.asarray(split.train, dtype=np.int64)
    test_rows = np.asarray(split.test, dtype=np.int64)

    fit_matrix = ds.features if cfg.fit_preprocessor_on == "all" else ds.features[train_rows]
    state = preprocess.fit(fit_matrix, cfg.schema.compressible_columns)
    x_train = preprocess.transform(ds.features[train_rows], state)
    x_test = preprocess.transform(ds.features[test_rows], state)

    model, history = autoencoder.train(
        x_train,
        x_test,
        cfg.train,
        feature_names=cfg.schema.compressible_columns,
        preprocessor_fingerprint=state.fingerprint(),
        hidden=cfg.hidden,
        latent=cfg.latent_dim,
    )

    out = _out_dir(args)
    model_path = out / "autoencoder.fcae"
    state_path = out / "preprocessor.json"
    autoencoder.save_model(model, model_path)
    _atomic_write_text(state_path, json.dumps(state.to_json_dict(), indent=2) + "\n")
    history.to_csv(out / "training_history.csv")
    _write_json(
        out / "train_summary.json",
        {
            "architecture": model.dims,
            "epochs_run": len(history.epochs),
            "best_epoch": history.best_epoch,
            "best_test_loss": history.best_test_loss,
            "final_learning_rate": history.epochs[-1].learning_rate,
            "train_rows": int(train_rows.size),
            "test_rows": int(test_rows.size),
            "preprocessor_fingerprint": state.fingerprint(),
            "seed": cfg.seed,
        },
    )
    print(f"trained {len(history.epochs)} epochs; best test loss "
          f"{history.best_test_loss:.6g} at epoch {history.best_epoch}")
    print(f"model: {model_path}")
    print(f"preprocessor: {state_path}")
    return EXIT_OK


def cmd_compress(args) -> int:
    cfg = load_config(args.config, args.seed)
    model, state, forced = _load_model_and_state(args.model, args.preprocessor, args.force)
    ds = load_csv(args.input, cfg.schema)
    _check_columns(ds, model)

    latent = autoencoder.encode(model, preprocess.transform(ds.features, state))
    write_latent(
        args.output,
        latent,
        ds.identities,
        ds.labels,
        feature_names=model.feature_names,
        identity_columns=cfg.schema.identity_columns,
        label_column=cfg.schema.label_column or "",
        preprocessor_fingerprint=state.fingerprint(),
        dtype=cfg.latent_dtype,
        forced=forced,
    )
    width = 4 if cfg.latent_dtype == "float32" else 8
    ratio = eval_metrics.compression_ratio(
        model.n_features, model.latent_dim, cfg.metrics.original_width_bytes, width
    )
    print(f"compressed {len(ds)} flows to {args.output} "
          f"({model.n_features} -> {model.latent_dim} dims, feature ratio {ratio:g}x)")
    return EXIT_OK


def cmd_decompress(args) -> int:
    model, state, _ = _load_model_and_state(args.model, args.preprocessor, args.force)
    lf = read_latent(args.input)
    if lf.preprocessor_fingerprint != state.fingerprint():
        if not args.force:
            raise FingerprintMismatchError(
                "latent file was produced with a different preprocessor; pass --force to override"
            )
        print("warning: latent fingerprint mismatch overridden by --force", file=sys.stderr)
    if lf.latent_dim != model.latent_dim:
        raise DataError(
            f"latent width {lf.latent_dim} does not match the model bottleneck {model.latent_dim}"
        )
    if lf.feature_names != model.feature_names:
        raise DataError("latent file and model disagree on feature columns")

    recon = preprocess.inverse_transform(
        autoencoder.decode(model, np.asarray(lf.latent, dtype=np.float64)), state
    )
    schema = FeatureSchema(
        identity_columns=lf.identity_columns,
        compressible_columns=lf.feature_names,
        label_column=lf.label_column or None,
    )
    out_ds = Dataset(schema, recon, lf.identities, lf.labels)
    write_csv(out_ds, args.output)
    print(f"reconstructed {lf.n_rows} flows to {args.output}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.seed)
    original = load_csv(args.original, cfg.schema)
    warnings: list[str] = []

    if args.reconstructed is not None:
        recon_ds = load_csv(args.reconstructed, cfg.schema)
        if len(recon_ds) != len(original):
            raise DataError(
                f"row count mismatch: original {len(original)}, reconstructed {len(recon_ds)}"
            )
        recon = recon_ds.features
        latent_dim = cfg.latent_dim
    else:
        model, state, forced = _load_model_and_state(args.model, args.preprocessor, args.force)
        _check_columns(original, model)
        if forced:
            warnings.append("preprocessor fingerprint mismatch overridden by --force")
        recon = preprocess.inverse_transform(
            autoencoder.reconstruct(model, preprocess.transform(original.features, state)), state
        )
        latent_dim = model.latent_dim

    report = eval_metrics.build_report(
        original.features,
        recon,
        feature_names=cfg.schema.compressible_columns,
        latent_dim=latent_dim,
        kl_bins=cfg.metrics.kl_bins,
        original_width_bytes=cfg.metrics.original_width_bytes,
        latent_width_bytes=cfg.metrics.latent_width_bytes,
        warnings=warnings,
    )
    out = _out_dir(args)
    _atomic_write_text(
        out / "reconstruction_report.json",
        json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n",
    )
    report.save_feature_csv(out / "feature_reconstruction.csv")
    report.save_correlation_csv(out / "correlation_difference.csv")
    eval_metrics.save_row_percent_errors(original.features, recon, out / "row_percent_errors.csv")

    print(f"rows: {report.n_rows}")
    print(f"mse: {report.mse:.6g}  rmse: {report.rmse:.6g}  "
          f"mape: {report.mape_percent:.6g}% ({report.mape_excluded_zeros} zero entries excluded)")
    defined = [v for v in report.median_percent_error if v is not None]
    if defined:
        print(f"median percent error: worst feature {max(defined):.4g}%")
    print(f"compression ratio: {report.compression_ratio:g}x")
    print(f"reports in {out}")
    return EXIT_OK


def _encode_features(ds: Dataset, model, state) -> np.ndarray:
    return autoencoder.encode(model, preprocess.transform(ds.features, state))


def _run_arm(
    ds: Dataset, split: SplitIndices, features: np.ndarray, cfg: PipelineConfig
) -> tuple[classify_eval.ClassificationReport, "object"]:
    train_rows = np.asarray(split.train, dtype=np.int64)
    test_rows = np.asarray(split.test, dtype=np.int64)
    forest = fit_forest(
        features[train_rows],
        ds.label_ids[train_rows],
        n_classes=len(ds.class_names),
        n_trees=cfg.forest.n_trees,
        params=cfg.forest.tree_params(),
        seed=cfg.seed,
    )
    pred = predict(forest, features[test_rows])
    report = classify_eval.score(ds.label_ids[test_rows], pred, tuple(ds.class_names))
    return report, forest


def _write_arm_outputs(out: Path, arm: str, report, forest, cfg: PipelineConfig) -> None:
    _atomic_write_text(
        out / f"classification_report_{arm}.json",
        json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n",
    )
    report.save_confusion_csv(out / f"confusion_{arm}.csv")
    report.save_confusion_csv(out / f"confusion_{arm}_normalized.csv", normalized=True)
    _atomic_write_text(out / f"classification_{arm}.txt", report.text_table())
    if cfg.forest.save_model:
        save_forest(forest, out / f"forest_{arm}.json")


def cmd_classify(args) -> int:
    cfg = load_config(args.config, args.seed)
    ds = load_csv(args.input, cfg.schema)
    if not ds.is_labeled:
        raise DataError("classification requires a labeled dataset")
    if len(ds.class_names) < 2:
        raise DataError("classification requires at least 2 classes")
    split = _split(ds, cfg)

    if args.features == "compressed":
        model, state, forced = _load_model_and_state(args.model, args.preprocessor, args.force)
        _check_columns(ds, model)
        features = _encode_features(ds, model, state)
    else:
        forced = False
        features = ds.features

    report, forest = _run_arm(ds, split, features, cfg)
    if forced:
        report.warnings.append("preprocessor fingerprint mismatch overridden by --force")
    out = _out_dir(args)
    _write_arm_outputs(out, args.features, report, forest, cfg)
    print(f"{args.features} features: accuracy {report.accuracy:.6f}, "
          f"macro f1 {report.macro_f1:.6f}, "
          f"{report.total_misclassified}/{report.total} misclassified")
    print(f"reports in {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = load_config(args.config, args.seed)
    ds = load_csv(args.input, cfg.schema)
    if not ds.is_labeled:
        raise DataError("comparison requires a labeled dataset")
    if len(ds.class_names) < 2:
        raise DataError("comparison requires at least 2 classes")
    split = _split(ds, cfg)

    model, state, forced = _load_model_and_state(args.model, args.preprocessor, args.force)
    _check_columns(ds, model)

    original_report, original_forest = _run_arm(ds, split, ds.features, cfg)
    compressed_report, compressed_forest = _run_arm(
        ds, split, _encode_features(ds, model, state), cfg
    )
    if forced:
        compressed_report.warnings.append(
            "preprocessor fingerprint mismatch overridden by --force"
        )
    comparison = classify_eval.compare(original_report, compressed_report)

    out = _out_dir(args)
    _write_arm_outputs(out, "original", original_report, original_forest, cfg)
    _write_arm_outputs(out, "compressed", compressed_report, compressed_forest, cfg)
    _atomic_write_text(
        out / "comparison_report.json",
        json.dumps(comparison.to_json_dict(), indent=2, sort_keys=True) + "\n",
    )
    _atomic_write_text(out / "comparison.txt", comparison.text_table())

    print(comparison.text_table())
    print(f"reports in {out}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; this pipeline reserves 2 for
    # data problems, so remap usage errors onto the config exit code.
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_CONFIG)


def _add_common(sub, output_dir: bool = False):
    sub.add_argument("--config", help="pipeline config JSON")
    sub.add_argument("--seed", type=int, help="override the config seed")
    if output_dir:
        sub.add_argument("--output-dir", default="out", help="directory for reports and artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowcodec", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("synth", parents=[], help="generate a labeled synthetic flow CSV")
    _add_common(p)
    p.add_argument("--n-per-class", type=int, help="rows per class (default from config)")
    p.add_argument("--output", required=True, help="CSV path to write")
    p.set_defaults(func=cmd_synth)

    p = commands.add_parser("train", help="fit the preprocessor and autoencoder")
    _add_common(p, output_dir=True)
    p.add_argument("--input", required=True, help="flow CSV")
    p.set_defaults(func=cmd_train)

    p = commands.add_parser("compress", help="encode flows into a latent container")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--preprocessor", required=True)
    p.add_argument("--input", required=True, help="flow CSV")
    p.add_argument("--output", required=True, help="latent container path")
    p.add_argument("--force", action="store_true", help="override fingerprint mismatches")
    p.set_defaults(func=cmd_compress)

    p = commands.add_parser("decompress", help="reconstruct flows from a latent container")
    p.add_argument("--model", required=True)
    p.add_argument("--preprocessor", required=True)
    p.add_argument("--input", required=True, help="latent container path")
    p.add_argument("--output", required=True, help="CSV path to write")
    p.add_argument("--force", action="store_true", help="override fingerprint mismatches")
    p.set_defaults(func=cmd_decompress)

    p = commands.add_parser("evaluate", help="score reconstruction fidelity")
    _add_common(p, output_dir=True)
    p.add_argument("--original", required=True, help="original flow CSV")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--reconstructed", help="reconstructed flow CSV")
    group.add_argument("--model", help="autoencoder model (reconstruct on the fly)")
    p.add_argument("--preprocessor", help="required with --model")
    p.add_argument("--force", action="store_true", help="override fingerprint mismatches")
    p.set_defaults(func=cmd_evaluate)

    p = commands.add_parser("classify", help="train and score a random forest on one feature set")
    _add_common(p, output_dir=True)
    p.add_argument("--input", required=True, help="labeled flow CSV")
    p.add_argument("--features", choices=("original", "compressed"), default="original")
    p.add_argument("--model", help="required with --features compressed")
    p.add_argument("--preprocessor", help="required with --features compressed")
    p.add_argument("--force", action="store_true", help="override fingerprint mismatches")
    p.set_defaults(func=cmd_classify)

    p = commands.add_parser("compare", help="classify on original and compressed features, then diff")
    _add_common(p, output_dir=True)
    p.add_argument("--input", required=True, help="labeled flow CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--preprocessor", required=True)
    p.add_argument("--force", action="store_true", help="override fingerprint mismatches")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.func is cmd_evaluate and args.model is not None and args.preprocessor is None:
        parser.error("--model requires --preprocessor")
    if args.func is cmd_classify and args.features == "compressed" and (
        args.model is None or args.preprocessor is None
    ):
        parser.error("--features compressed requires --model and --preprocessor")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except FlowcodecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
