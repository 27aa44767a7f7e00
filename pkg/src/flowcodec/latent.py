"""Compressed flow container: latent matrix plus pass-through columns.

Layout: 4-byte magic, little-endian u32 format version and u32 header
length, a JSON header, the row-major latent block, then a u64-length-prefixed
UTF-8 CSV holding the identity columns and label verbatim. Identity data
never goes through the autoencoder.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._fsutil import fchmod_default
from .errors import DataError, ModelFormatError

LATENT_MAGIC = b"FCLZ"
LATENT_FORMAT_VERSION = 1
_DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass
class LatentFile:
    latent: np.ndarray
    identities: list[dict[str, str]]
    labels: list[str] | None
    feature_names: tuple[str, ...]
    identity_columns: tuple[str, ...]
    label_column: str
    preprocessor_fingerprint: str
    forced: bool

    @property
    def n_rows(self) -> int:
        return int(self.latent.shape[0])

    @property
    def latent_dim(self) -> int:
        return int(self.latent.shape[1])


def write_latent(
    path: str | Path,
    latent: np.ndarray,
    identities: list[dict[str, str]],
    labels: list[str] | None,
    feature_names: tuple[str, ...],
    identity_columns: tuple[str, ...],
    label_column: str,
    preprocessor_fingerprint: str,
    dtype: str = "float32",
    forced: bool = False,
) -> None:
    """Serialize atomically. ``dtype`` controls the stored latent precision
    and therefore the realized compression ratio."""
    if dtype not in _DTYPES:
        raise DataError(f"latent dtype must be one of {sorted(_DTYPES)}, got {dtype!r}")
    latent = np.asarray(latent)
    if latent.ndim != 2 or latent.shape[0] != len(identities):
        raise DataError(
            f"latent shape {latent.shape} does not match {len(identities)} identity rows"
        )
    if labels is not None and len(labels) != latent.shape[0]:
        raise DataError("label count does not match latent rows")

    header = {
        "n_rows": int(latent.shape[0]),
        "latent_dim": int(latent.shape[1]),
        "dtype": dtype,
        "feature_names": list(feature_names),
        "identity_columns": list(identity_columns),
        "label_column": label_column,
        "labeled": labels is not None,
        "preprocessor_fingerprint": preprocessor_fingerprint,
        "forced": bool(forced),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    block = np.ascontiguousarray(latent.astype(_DTYPES[dtype])).tobytes()

    sidecar = io.StringIO()
    writer = csv.writer(sidecar, lineterminator="\n")
    columns = list(identity_columns) + ([label_column] if labels is not None else [])
    writer.writerow(columns)
    for i, identity in enumerate(identities):
        row = [identity.get(c, "") for c in identity_columns]
        if labels is not None:
            row.append(labels[i])
        writer.writerow(row)
    sidecar_bytes = sidecar.getvalue().encode("utf-8")

    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
    fchmod_default(fd)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(LATENT_MAGIC)
            fh.write(struct.pack("<II", LATENT_FORMAT_VERSION, len(header_bytes)))
            fh.write(header_bytes)
            fh.write(block)
            fh.write(struct.pack("<Q", len(sidecar_bytes)))
            fh.write(sidecar_bytes)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_latent(path: str | Path) -> LatentFile:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise ModelFormatError(f"cannot read latent file {path}: {exc}") from exc
    if len(blob) < 12 or blob[:4] != LATENT_MAGIC:
        raise ModelFormatError(f"{path} is not a latent container")
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != LATENT_FORMAT_VERSION:
        raise ModelFormatError(f"unsupported latent container version {version}")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: malformed latent header: {exc}") from exc

    dtype = header.get("dtype")
    if dtype not in _DTYPES:
        raise ModelFormatError(f"{path}: unknown latent dtype {dtype!r}")
    n_rows = int(header["n_rows"])
    latent_dim = int(header["latent_dim"])
    itemsize = np.dtype(_DTYPES[dtype]).itemsize
    block_start = 12 + header_len
    block_len = n_rows * latent_dim * itemsize
    if len(blob) < block_start + block_len + 8:
        raise ModelFormatError(f"{path}: latent block truncated")
    latent = np.frombuffer(
        blob, dtype=_DTYPES[dtype], count=n_rows * latent_dim, offset=block_start
    ).reshape(n_rows, latent_dim).copy()

    (sidecar_len,) = struct.unpack_from("<Q", blob, block_start + block_len)
    sidecar_start = block_start + block_len + 8
    if len(blob) != sidecar_start + sidecar_len:
        raise ModelFormatError(f"{path}: container length mismatch")
    sidecar = blob[sidecar_start:].decode("utf-8")

    identity_columns = tuple(header["identity_columns"])
    label_column = str(header["label_column"])
    labeled = bool(header.get("labeled"))
    reader = csv.reader(io.StringIO(sidecar))
    try:
        columns = next(reader)
    except StopIteration:
        raise ModelFormatError(f"{path}: identity block is empty") from None
    expected = list(identity_columns) + ([label_column] if labeled else [])
    if columns != expected:
        raise ModelFormatError(f"{path}: identity block columns {columns} != header {expected}")

    identities: list[dict[str, str]] = []
    labels: list[str] | None = [] if labeled else None
    for row in reader:
        if len(row) != len(expected):
            raise ModelFormatError(f"{path}: identity row width {len(row)} != {len(expected)}")
        identities.append(dict(zip(identity_columns, row)))
        if labels is not None:
            labels.append(row[-1])
    if len(identities) != n_rows:
        raise ModelFormatError(
            f"{path}: identity rows {len(identities)} != latent rows {n_rows}"
        )

    return LatentFile(
        latent=latent,
        identities=identities,
        labels=labels,
        feature_names=tuple(header["feature_names"]),
        identity_columns=identity_columns,
        label_column=label_column,
        preprocessor_fingerprint=str(header["preprocessor_fingerprint"]),
        forced=bool(header.get("forced")),
    )
