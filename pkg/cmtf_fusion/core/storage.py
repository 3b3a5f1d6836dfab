"""
On-disk formats for datasets and factors.

* Ragged tensor: directory with ``slice_000.csv`` ... and ``manifest.json``
  ``{"I1": int, "J": [int, ...]}``.
* Dense tensor: directory with ``unfolding.csv`` (mode-1 unfolding, I x J*K,
  column index j + J*k) and ``manifest.json`` ``{"shape": [I, J, K]}``.
* Matrix: a single CSV file.

Every CSV is UTF-8 with ``.`` decimals and a header row; readers also accept
header-less files.
"""
from __future__ import annotations

import json
import logging
import os
from typing import Any, Iterable, List

import numpy as np

from .exceptions import DataFormatError, InvariantError
from .models import DenseTensor3, RaggedTensor

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
UNFOLDING = "unfolding.csv"
SLICE_PATTERN = "slice_{:03d}.csv"
FLOAT_FORMAT = "%.17g"


def _header(n_cols: int, prefix: str = "c") -> str:
    return ",".join(f"{prefix}{j}" for j in range(n_cols))


def write_csv_matrix(path: str, matrix: Any, header: Iterable[str] | None = None) -> None:
    M = np.asarray(matrix, dtype=np.float64)
    if M.ndim == 1:
        M = M[:, None]
    head = ",".join(header) if header is not None else _header(M.shape[1])
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        np.savetxt(f, M, fmt=FLOAT_FORMAT, delimiter=",", header=head, comments="")


def _has_header(path: str) -> bool:
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().strip()
    if not first:
        return False
    try:
        [float(x) for x in first.split(",")]
    except ValueError:
        return True
    return False


def read_csv_matrix(path: str) -> np.ndarray:
    if not os.path.isfile(path):
        raise DataFormatError(f"File not found: {path}")
    try:
        skip = 1 if _has_header(path) else 0
        M = np.loadtxt(path, delimiter=",", ndmin=2, skiprows=skip, dtype=np.float64)
    except ValueError as exc:
        raise DataFormatError(f"{path}: not a numeric CSV matrix ({exc})") from exc
    if M.size == 0:
        raise DataFormatError(f"{path}: no data rows")
    if not np.all(np.isfinite(M)):
        raise DataFormatError(f"{path}: contains non-finite values")
    return M


def _write_manifest(directory: str, manifest: dict) -> None:
    with open(os.path.join(directory, MANIFEST), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


def _read_manifest(directory: str) -> dict:
    path = os.path.join(directory, MANIFEST)
    if not os.path.isfile(path):
        raise DataFormatError(f"File not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(manifest, dict):
        raise DataFormatError(f"{path}: expected a JSON object")
    return manifest


# ---------- ragged tensors ----------

def save_ragged(directory: str, tensor: RaggedTensor) -> None:
    os.makedirs(directory, exist_ok=True)
    for k, s in enumerate(tensor.slices):
        write_csv_matrix(os.path.join(directory, SLICE_PATTERN.format(k)), s)
    _write_manifest(directory, tensor.manifest())


def load_ragged(directory: str) -> RaggedTensor:
    manifest = _read_manifest(directory)
    try:
        I1 = int(manifest["I1"])
        J = [int(j) for j in manifest["J"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{os.path.join(directory, MANIFEST)}: expected keys I1 and J ({exc})") from exc
    slices: List[np.ndarray] = []
    for k, j in enumerate(J):
        path = os.path.join(directory, SLICE_PATTERN.format(k))
        s = read_csv_matrix(path)
        if s.shape != (I1, j):
            raise DataFormatError(f"{path}: expected shape {(I1, j)} from the manifest, got {s.shape}")
        slices.append(s)
    try:
        return RaggedTensor(tuple(slices))
    except InvariantError as exc:
        raise DataFormatError(f"{directory}: {exc}") from exc


# ---------- dense tensors ----------

def save_dense(directory: str, tensor: DenseTensor3) -> None:
    os.makedirs(directory, exist_ok=True)
    I, J, K = tensor.shape
    write_csv_matrix(os.path.join(directory, UNFOLDING), tensor.data.reshape(I, J * K, order="F"))
    _write_manifest(directory, tensor.manifest())


def load_dense(directory: str) -> DenseTensor3:
    manifest = _read_manifest(directory)
    try:
        shape = tuple(int(n) for n in manifest["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{os.path.join(directory, MANIFEST)}: expected key shape ({exc})") from exc
    if len(shape) != 3:
        raise DataFormatError(f"{directory}: a dense tensor needs a 3-entry shape, got {list(shape)}")
    I, J, K = shape
    path = os.path.join(directory, UNFOLDING)
    unfolded = read_csv_matrix(path)
    if unfolded.shape != (I, J * K):
        raise DataFormatError(f"{path}: expected shape {(I, J * K)} from the manifest, got {unfolded.shape}")
    return DenseTensor3(unfolded.reshape(I, J, K, order="F"))


# ---------- generic ----------

def save_dataset(path: str, data: Any) -> None:
    if isinstance(data, RaggedTensor):
        save_ragged(path, data)
    elif isinstance(data, DenseTensor3):
        save_dense(path, data)
    else:
        write_csv_matrix(path, data)
    logger.debug("Wrote dataset to %s", path)


def load_dataset(path: str, model: str) -> Any:
    """Load the on-disk layout that belongs to *model* (parafac2, cp or matrix)."""
    if model == "parafac2":
        return load_ragged(path)
    if model == "cp":
        return load_dense(path)
    if model == "matrix":
        return read_csv_matrix(path)
    raise DataFormatError(f"Unknown model {model!r}")


def save_factors(directory: str, dataset_id: str, dec: Any) -> List[str]:
    """
    Write every factor of *dec* as ``<id>_<mode>.csv``; PARAFAC2 B_k go to
    ``<id>_B_000.csv`` and onwards. Returns the written paths.
    """
    os.makedirs(directory, exist_ok=True)
    written = []
    for mode, value in dec.named_factors().items():
        if isinstance(value, list):
            for k, mat in enumerate(value):
                path = os.path.join(directory, f"{dataset_id}_{mode}_{k:03d}.csv")
                write_csv_matrix(path, mat)
                written.append(path)
        else:
            path = os.path.join(directory, f"{dataset_id}_{mode}.csv")
            write_csv_matrix(path, value)
            written.append(path)
    return written
