"""Flow record schema, CSV ingestion, stratified splitting, synthetic data.

A flow record is the unit of data everywhere else in the package: a set of
opaque identity columns (addresses, ports, timestamps -- never transformed),
exactly 21 numeric features that are eligible for lossy compression, and an
optional class label used by the downstream classifier.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, EmptyDatasetError, RowParseError, SchemaError

N_FEATURES = 21

# Canonical feature order: per-direction volume metrics first, then the
# per-direction packet size statistics.
_DIRECTIONS = ("bidirectional", "src2dst", "dst2src")

DEFAULT_COMPRESSIBLE_COLUMNS = tuple(
    f"{d}_{m}" for d in _DIRECTIONS for m in ("duration_ms", "packets", "bytes")
) + tuple(f"{d}_{m}" for d in _DIRECTIONS for m in ("min_ps", "mean_ps", "stddev_ps", "max_ps"))

DEFAULT_IDENTITY_COLUMNS = (
    "src_ip",
    "src_port",
    "dst_ip",
    "dst_port",
    "protocol",
    "bidirectional_first_seen_ms",
    "bidirectional_last_seen_ms",
)

DEFAULT_LABEL_COLUMN = "application_name"


@dataclass(frozen=True)
class FeatureSchema:
    """Maps column roles to CSV column names.

    ``compressible_columns`` fixes the internal feature order; files may list
    columns in any order because ingestion is header-driven.
    """

    identity_columns: tuple[str, ...] = DEFAULT_IDENTITY_COLUMNS
    compressible_columns: tuple[str, ...] = DEFAULT_COMPRESSIBLE_COLUMNS
    label_column: str | None = DEFAULT_LABEL_COLUMN

    def __post_init__(self):
        object.__setattr__(self, "identity_columns", tuple(self.identity_columns))
        object.__setattr__(self, "compressible_columns", tuple(self.compressible_columns))
        if len(self.compressible_columns) != N_FEATURES:
            raise SchemaError(
                f"schema must name exactly {N_FEATURES} compressible columns, "
                f"got {len(self.compressible_columns)}"
            )
        if len(set(self.compressible_columns)) != N_FEATURES:
            raise SchemaError("compressible columns contain duplicates")
        overlap = set(self.compressible_columns) & set(self.identity_columns)
        if overlap:
            raise SchemaError(f"columns listed as both identity and compressible: {sorted(overlap)}")
        if self.label_column is not None and (
            self.label_column in self.compressible_columns or self.label_column in self.identity_columns
        ):
            raise SchemaError(f"label column {self.label_column!r} reused for another role")

    @property
    def all_columns(self) -> tuple[str, ...]:
        cols = self.identity_columns + self.compressible_columns
        if self.label_column is not None:
            cols = cols + (self.label_column,)
        return cols

    def to_dict(self) -> dict:
        return {
            "identity_columns": list(self.identity_columns),
            "compressible_columns": list(self.compressible_columns),
            "label_column": self.label_column,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        try:
            return cls(
                identity_columns=tuple(d.get("identity_columns", DEFAULT_IDENTITY_COLUMNS)),
                compressible_columns=tuple(d.get("compressible_columns", DEFAULT_COMPRESSIBLE_COLUMNS)),
                label_column=d.get("label_column", DEFAULT_LABEL_COLUMN),
            )
        except TypeError as e:
            raise SchemaError(f"malformed schema mapping: {e}") from e


@dataclass
class FlowRecord:
    """A single flow: opaque identity strings, 21 features, optional label."""

    identity: dict[str, str]
    features: np.ndarray
    label: str | None = None


class Dataset:
    """Immutable set of flow records with a dense feature-matrix view."""

    def __init__(
        self,
        schema: FeatureSchema,
        features: np.ndarray,
        identities: list[dict[str, str]],
        labels: list[str] | None,
    ):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != N_FEATURES:
            raise DataError(f"feature matrix must be Nx{N_FEATURES}, got {features.shape}")
        if len(identities) != features.shape[0]:
            raise DataError("identity rows and feature rows disagree")
        if labels is not None and len(labels) != features.shape[0]:
            raise DataError("label count and feature rows disagree")
        self.schema = schema
        self.features = features
        self.features.setflags(write=False)
        self.identities = identities
        self.labels = labels
        if labels is None:
            self.class_names: list[str] = []
            self.label_ids = None
        else:
            self.class_names = sorted(set(labels))
            index = {name: i for i, name in enumerate(self.class_names)}
            self.label_ids = np.array([index[v] for v in labels], dtype=np.int64)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def is_labeled(self) -> bool:
        return self.labels is not None

    def record(self, i: int) -> FlowRecord:
        label = self.labels[i] if self.labels is not None else None
        return FlowRecord(identity=self.identities[i], features=self.features[i].copy(), label=label)


@dataclass(frozen=True)
class SplitIndices:
    """Disjoint, exhaustive train/test row partition."""

    train: tuple[int, ...]
    test: tuple[int, ...]
    seed: int


def load_csv(path: str | Path, schema: FeatureSchema | None = None) -> Dataset:
    """Parse a header-driven CSV into a Dataset.

    Columns not named by the schema are ignored. Identity cells are kept
    verbatim; feature cells must parse as finite reals.
    """
    schema = schema or FeatureSchema()
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDatasetError(f"{path}: file is empty") from None
        col_index = {name: i for i, name in enumerate(header)}
        missing = [c for c in schema.all_columns if c not in col_index]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        feat_idx = [col_index[c] for c in schema.compressible_columns]
        ident_idx = [(c, col_index[c]) for c in schema.identity_columns]
        label_idx = col_index[schema.label_column] if schema.label_column is not None else None

        feature_rows: list[list[float]] = []
        identities: list[dict[str, str]] = []
        labels: list[str] | None = [] if label_idx is not None else None
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            values = []
            for col, j in zip(schema.compressible_columns, feat_idx):
                try:
                    v = float(row[j])
                except (ValueError, IndexError) as e:
                    raise RowParseError(
                        f"{path}: row {row_no}, column {col!r}: cannot parse {row[j] if j < len(row) else '<missing>'!r} as a number"
                    ) from e
                if not math.isfinite(v):
                    raise RowParseError(f"{path}: row {row_no}, column {col!r}: non-finite value {row[j]!r}")
                values.append(v)
            feature_rows.append(values)
            identities.append({c: row[j] for c, j in ident_idx})
            if labels is not None:
                labels.append(row[label_idx])

    if not feature_rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    return Dataset(schema, np.array(feature_rows, dtype=np.float64), identities, labels)


def _format_number(v: float) -> str:
    # Integral values print as ints so counts stay clean; everything else uses
    # repr, which round-trips float64 exactly.
    v = float(v)
    if v == int(v) and abs(v) < 2**53:
        return str(int(v))
    return repr(v)


def write_csv(dataset: Dataset, path: str | Path) -> None:
    """Write a Dataset back out in schema column order."""
    schema = dataset.schema
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(schema.all_columns)
        for i in range(len(dataset)):
            row = [dataset.identities[i][c] for c in schema.identity_columns]
            row += [_format_number(v) for v in dataset.features[i]]
            if schema.label_column is not None:
                row.append(dataset.labels[i] if dataset.labels is not None else "")
            writer.writerow(row)


def stratified_split(dataset: Dataset, test_fraction: float, seed: int) -> SplitIndices:
    """Deterministic per-class split: seeded shuffle within each class, then
    prefix take. Per-class test counts are floor(fraction * n_c) with the
    remainder given to the largest classes."""
    if not dataset.is_labeled:
        raise DataError("stratified split requires a labeled dataset")
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")

    n = len(dataset)
    by_class: dict[str, list[int]] = {name: [] for name in dataset.class_names}
    for i, label in enumerate(dataset.labels):
        by_class[label].append(i)
    for name, idx in by_class.items():
        if len(idx) < 2:
            raise DataError(f"class {name!r} has only {len(idx)} record(s); need at least 2")

    counts = {name: len(idx) for name, idx in by_class.items()}
    base = {name: int(math.floor(test_fraction * c)) for name, c in counts.items()}
    remainder = round(test_fraction * n) - sum(base.values())
    # Hand the remainder to the largest classes, never emptying a class's
    # train side.
    for name in sorted(counts, key=lambda k: (-counts[k], k)):
        if remainder <= 0:
            break
        if base[name] + 1 < counts[name]:
            base[name] += 1
            remainder -= 1

    rng = np.random.default_rng(seed)
    test: list[int] = []
    train: list[int] = []
    for name in dataset.class_names:
        idx = np.array(by_class[name], dtype=np.int64)
        shuffled = idx[rng.permutation(len(idx))]
        k = base[name]
        test.extend(shuffled[:k].tolist())
        train.extend(shuffled[k:].tolist())
    return SplitIndices(train=tuple(sorted(train)), test=tuple(sorted(test)), seed=seed)


def random_split(n: int, test_fraction: float, seed: int) -> SplitIndices:
    """Unstratified seeded split, for unlabeled datasets."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    k = round(test_fraction * n)
    return SplitIndices(
        train=tuple(sorted(perm[k:].tolist())), test=tuple(sorted(perm[:k].tolist())), seed=seed
    )


@dataclass
class SyntheticClassSpec:
    """Log-normal marginals for one traffic class.

    ``lognormal_params`` maps each compressible column to (mu, sigma) of the
    underlying normal. Flow volumes are heavy-tailed, hence log-normal.
    """

    name: str
    lognormal_params: dict[str, tuple[float, float]] = field(default_factory=dict)

    @classmethod
    def from_medians(cls, name: str, medians: dict[str, float], sigma: float = 0.35) -> "SyntheticClassSpec":
        # Median of lognormal(mu, sigma) is exp(mu).
        return cls(name=name, lognormal_params={k: (math.log(v), sigma) for k, v in medians.items()})

    def to_dict(self) -> dict:
        return {"name": self.name, "lognormal_params": {k: list(v) for k, v in self.lognormal_params.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticClassSpec":
        return cls(
            name=d["name"],
            lognormal_params={k: (float(v[0]), float(v[1])) for k, v in d["lognormal_params"].items()},
        )


# Rough per-class feature medians for the default 5-class synthetic mix.
# Scales are flow-realistic: durations in ms, packet sizes in bytes.
_DEFAULT_PROFILES: dict[str, dict[str, float]] = {
    "web": {
        "bidirectional_duration_ms": 900, "bidirectional_packets": 30, "bidirectional_bytes": 45_000,
        "src2dst_duration_ms": 850, "src2dst_packets": 12, "src2dst_bytes": 2_400,
        "dst2src_duration_ms": 830, "dst2src_packets": 18, "dst2src_bytes": 42_000,
        "bidirectional_min_ps": 60, "bidirectional_mean_ps": 640, "bidirectional_stddev_ps": 430, "bidirectional_max_ps": 1460,
        "src2dst_min_ps": 52, "src2dst_mean_ps": 210, "src2dst_stddev_ps": 160, "src2dst_max_ps": 620,
        "dst2src_min_ps": 80, "dst2src_mean_ps": 980, "dst2src_stddev_ps": 390, "dst2src_max_ps": 1480,
    },
    "video": {
        "bidirectional_duration_ms": 42_000, "bidirectional_packets": 2_900, "bidirectional_bytes": 3_400_000,
        "src2dst_duration_ms": 41_000, "src2dst_packets": 420, "src2dst_bytes": 32_000,
        "dst2src_duration_ms": 41_500, "dst2src_packets": 2_500, "dst2src_bytes": 3_350_000,
        "bidirectional_min_ps": 64, "bidirectional_mean_ps": 1120, "bidirectional_stddev_ps": 480, "bidirectional_max_ps": 1500,
        "src2dst_min_ps": 54, "src2dst_mean_ps": 88, "src2dst_stddev_ps": 40, "src2dst_max_ps": 380,
        "dst2src_min_ps": 140, "dst2src_mean_ps": 1320, "dst2src_stddev_ps": 260, "dst2src_max_ps": 1500,
    },
    "voip": {
        "bidirectional_duration_ms": 65_000, "bidirectional_packets": 5_800, "bidirectional_bytes": 950_000,
        "src2dst_duration_ms": 64_500, "src2dst_packets": 2_900, "src2dst_bytes": 480_000,
        "dst2src_duration_ms": 64_600, "dst2src_packets": 2_900, "dst2src_bytes": 470_000,
        "bidirectional_min_ps": 58, "bidirectional_mean_ps": 165, "bidirectional_stddev_ps": 28, "bidirectional_max_ps": 240,
        "src2dst_min_ps": 58, "src2dst_mean_ps": 164, "src2dst_stddev_ps": 26, "src2dst_max_ps": 235,
        "dst2src_min_ps": 58, "dst2src_mean_ps": 166, "dst2src_stddev_ps": 27, "dst2src_max_ps": 238,
    },
    "bulk": {
        "bidirectional_duration_ms": 12_000, "bidirectional_packets": 12_500, "bidirectional_bytes": 16_500_000,
        "src2dst_duration_ms": 11_900, "src2dst_packets": 8_300, "src2dst_bytes": 11_900_000,
        "dst2src_duration_ms": 11_850, "dst2src_packets": 4_200, "dst2src_bytes": 4_600_000,
        "bidirectional_min_ps": 66, "bidirectional_mean_ps": 1330, "bidirectional_stddev_ps": 310, "bidirectional_max_ps": 1500,
        "src2dst_min_ps": 66, "src2dst_mean_ps": 1430, "src2dst_stddev_ps": 190, "src2dst_max_ps": 1500,
        "dst2src_min_ps": 60, "dst2src_mean_ps": 1100, "dst2src_stddev_ps": 410, "dst2src_max_ps": 1490,
    },
    "chat": {
        "bidirectional_duration_ms": 260, "bidirectional_packets": 9, "bidirectional_bytes": 2_100,
        "src2dst_duration_ms": 240, "src2dst_packets": 5, "src2dst_bytes": 900,
        "dst2src_duration_ms": 230, "dst2src_packets": 4, "dst2src_bytes": 1_200,
        "bidirectional_min_ps": 62, "bidirectional_mean_ps": 233, "bidirectional_stddev_ps": 120, "bidirectional_max_ps": 540,
        "src2dst_min_ps": 60, "src2dst_mean_ps": 180, "src2dst_stddev_ps": 95, "src2dst_max_ps": 430,
        "dst2src_min_ps": 64, "dst2src_mean_ps": 300, "dst2src_stddev_ps": 130, "dst2src_max_ps": 560,
    },
}


def default_class_specs(sigma: float = 0.45) -> list[SyntheticClassSpec]:
    return [SyntheticClassSpec.from_medians(name, med, sigma) for name, med in _DEFAULT_PROFILES.items()]


_COUNT_COLUMNS = ("src2dst_packets", "src2dst_bytes", "dst2src_packets", "dst2src_bytes")


def generate_synthetic(
    n_per_class: int,
    class_specs: list[SyntheticClassSpec],
    seed: int,
    schema: FeatureSchema | None = None,
) -> Dataset:
    """Draw a labeled synthetic dataset with flow-consistency constraints.

    After sampling the marginals, bidirectional packet/byte counts are
    rewritten as the sum of the directional counts, per-direction packet size
    statistics are reordered so min <= mean <= max, and counts are rounded to
    integers. Deterministic for a fixed seed.
    """
    if len(class_specs) < 2:
        raise ConfigError(f"need at least 2 class specs, got {len(class_specs)}")
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be >= 1, got {n_per_class}")
    schema = schema or FeatureSchema()
    cols = schema.compressible_columns
    col_pos = {c: i for i, c in enumerate(cols)}

    rng = np.random.default_rng(seed)
    blocks: list[np.ndarray] = []
    identities: list[dict[str, str]] = []
    labels: list[str] = []
    for spec in class_specs:
        missing = [c for c in cols if c not in spec.lognormal_params]
        if missing:
            raise ConfigError(f"class {spec.name!r} is missing parameters for {missing}")
        block = np.empty((n_per_class, N_FEATURES), dtype=np.float64)
        for j, c in enumerate(cols):
            mu, sg = spec.lognormal_params[c]
            block[:, j] = rng.lognormal(mu, sg, n_per_class)

        # Counts are integers; directional flows carry at least one packet.
        for c in _COUNT_COLUMNS:
            if c in col_pos:
                block[:, col_pos[c]] = np.maximum(np.rint(block[:, col_pos[c]]), 1.0)
        # Additive consistency: both directions sum to the bidirectional total.
        for metric in ("packets", "bytes"):
            b, s, d = f"bidirectional_{metric}", f"src2dst_{metric}", f"dst2src_{metric}"
            if b in col_pos and s in col_pos and d in col_pos:
                block[:, col_pos[b]] = block[:, col_pos[s]] + block[:, col_pos[d]]
        # Packet size ordering within each direction.
        for d in _DIRECTIONS:
            names = (f"{d}_min_ps", f"{d}_mean_ps", f"{d}_max_ps")
            if all(nm in col_pos for nm in names):
                sub = np.sort(block[:, [col_pos[nm] for nm in names]], axis=1)
                for k, nm in enumerate(names):
                    block[:, col_pos[nm]] = sub[:, k]
        blocks.append(block)
        identities.extend(_synthetic_identities(schema, block, col_pos, n_per_class, rng))
        labels.extend([spec.name] * n_per_class)

    features = np.vstack(blocks)
    assert np.isfinite(features).all()
    return Dataset(schema, features, identities, labels)


def _synthetic_identities(
    schema: FeatureSchema,
    block: np.ndarray,
    col_pos: dict[str, int],
    n: int,
    rng: np.random.Generator,
) -> list[dict[str, str]]:
    base_ms = 1_700_000_000_000
    first_seen = base_ms + rng.integers(0, 86_400_000, n)
    duration = (
        block[:, col_pos["bidirectional_duration_ms"]]
        if "bidirectional_duration_ms" in col_pos
        else np.zeros(n)
    )
    octets = rng.integers(1, 255, size=(n, 4))
    generic = {
        "src_ip": [f"10.0.{a}.{b}" for a, b in octets[:, :2]],
        "dst_ip": [f"192.168.{a}.{b}" for a, b in octets[:, 2:]],
        "src_port": [str(p) for p in rng.integers(1024, 65535, n)],
        "dst_port": [str(p) for p in rng.choice([53, 80, 123, 443, 8080, 8443], n)],
        "protocol": [str(p) for p in rng.choice([6, 17], n)],
        "bidirectional_first_seen_ms": [str(int(t)) for t in first_seen],
        "bidirectional_last_seen_ms": [str(int(t + d)) for t, d in zip(first_seen, duration)],
    }
    rows = []
    for i in range(n):
        rows.append(
            {c: (generic[c][i] if c in generic else f"{c}_{i}") for c in schema.identity_columns}
        )
    return rows
