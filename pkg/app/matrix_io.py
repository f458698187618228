"""
Matrix file formats.

Two containers are supported:

- CSV: one matrix row per line, comma separated, no header. Lines starting
  with '#' are comments (experiment outputs use them for provenance).
- SKDM binary: magic b"SKDM", u64 rows, u64 cols (little endian), then
  rows*cols little-endian float64 entries in row-major order.

Binary files round-trip bit-exactly. Generated instances carry a JSON-lines
sidecar (<file>.meta.jsonl) with their ground-truth metadata.
"""

import logging
import struct
from pathlib import Path
from typing import Iterator

import numpy as np
import pandas as pd

from app.exceptions import MatrixFormatError
from app.matrix import as_matrix
from app.schemas import InstanceMetadata

logger = logging.getLogger(__name__)

MAGIC = b"SKDM"
HEADER = struct.Struct("<QQ")
HEADER_SIZE = len(MAGIC) + HEADER.size
CSV_FLOAT_FORMAT = "%.17g"


def detect_format(path: Path) -> str:
    """'bin' when the file starts with the SKDM magic, else 'csv'."""
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
    return "bin" if head == MAGIC else "csv"


def format_for_suffix(path: Path) -> str:
    return "csv" if Path(path).suffix.lower() in (".csv", ".txt") else "bin"


# -----------------------------------------------------------------------------
# Binary
# -----------------------------------------------------------------------------


def write_binary(path: Path, A: np.ndarray) -> None:
    A = as_matrix(A, allow_empty=True)
    rows, cols = A.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(HEADER.pack(rows, cols))
        fh.write(np.ascontiguousarray(A, dtype="<f8").tobytes(order="C"))


def _read_binary_header(fh) -> tuple[int, int]:
    magic = fh.read(len(MAGIC))
    if magic != MAGIC:
        raise MatrixFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    raw = fh.read(HEADER.size)
    if len(raw) != HEADER.size:
        raise MatrixFormatError("truncated SKDM header")
    return HEADER.unpack(raw)


def read_binary(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        rows, cols = _read_binary_header(fh)
        payload = fh.read()
    expected = rows * cols * 8
    if len(payload) != expected:
        raise MatrixFormatError(
            f"{path}: payload has {len(payload)} bytes, header promises {expected}"
        )
    A = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)
    if not np.all(np.isfinite(A)):
        raise MatrixFormatError(f"{path}: non-finite entries")
    return A


# -----------------------------------------------------------------------------
# CSV
# -----------------------------------------------------------------------------


def write_csv(path: Path, A: np.ndarray) -> None:
    A = as_matrix(A, allow_empty=True)
    pd.DataFrame(A).to_csv(path, header=False, index=False, float_format=CSV_FLOAT_FORMAT)


def read_csv(path: Path) -> np.ndarray:
    try:
        frame = pd.read_csv(
            path, header=None, comment="#", dtype=np.float64, float_precision="round_trip"
        )
    except (ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise MatrixFormatError(f"{path}: {e}") from e
    try:
        return as_matrix(frame.to_numpy(), name=str(path))
    except ValueError as e:
        raise MatrixFormatError(str(e)) from e


# -----------------------------------------------------------------------------
# Dispatch
# -----------------------------------------------------------------------------


def read_matrix(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MatrixFormatError(f"{path}: no such file")
    fmt = detect_format(path)
    logger.debug(f"Reading {fmt} matrix from {path}")
    return read_binary(path) if fmt == "bin" else read_csv(path)


def write_matrix(path: Path, A: np.ndarray, fmt: str | None = None) -> Path:
    path = Path(path)
    fmt = fmt or format_for_suffix(path)
    if fmt == "bin":
        write_binary(path, A)
    elif fmt == "csv":
        write_csv(path, A)
    else:
        raise MatrixFormatError(f"unknown matrix format {fmt!r}")
    logger.debug(f"Wrote {A.shape[0]}x{A.shape[1]} {fmt} matrix to {path}")
    return path


def iter_columns(path: Path) -> Iterator[np.ndarray]:
    """
    Yield the columns of a stored matrix one at a time.

    Binary files are memory-mapped, so streams larger than memory can be
    consumed column-wise.
    """
    path = Path(path)
    if detect_format(path) == "csv":
        yield from read_csv(path).T
        return
    with open(path, "rb") as fh:
        rows, cols = _read_binary_header(fh)
    data = np.memmap(path, dtype="<f8", mode="r", offset=HEADER_SIZE, shape=(rows, cols))
    for k in range(cols):
        column = np.array(data[:, k], dtype=np.float64)
        if not np.all(np.isfinite(column)):
            raise MatrixFormatError(f"{path}: non-finite entries in column {k}")
        yield column


# -----------------------------------------------------------------------------
# Metadata sidecars
# -----------------------------------------------------------------------------


def sidecar_path(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.jsonl")


def write_metadata(path: Path, meta: InstanceMetadata) -> Path:
    """Start the sidecar of path over with a single record."""
    target = sidecar_path(path)
    target.write_text(meta.model_dump_json() + "\n", encoding="utf-8")
    return target


def append_metadata(path: Path, meta: InstanceMetadata) -> Path:
    """Append one metadata record to the sidecar of path."""
    target = sidecar_path(path)
    with open(target, "a", encoding="utf-8") as fh:
        fh.write(meta.model_dump_json() + "\n")
    return target


def read_metadata(path: Path) -> list[InstanceMetadata]:
    target = sidecar_path(path)
    if not target.exists():
        return []
    records = []
    with open(target, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(InstanceMetadata.model_validate_json(line))
    return records


def write_table(path: Path, frame: pd.DataFrame, header_lines: list[str] | None = None) -> Path:
    """Write a result table as CSV, prefixed by '#' provenance lines."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        frame.to_csv(fh, index=False, float_format=CSV_FLOAT_FORMAT)
    return path


def read_table(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")
