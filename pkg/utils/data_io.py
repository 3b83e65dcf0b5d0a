"""
Dataset ingestion and result emission.

LIBSVM text (``<label> <idx>:<val> ...``, 1-based ascending indices) is read
into ``CsrMatrix`` rows. CSV output always carries a header row, optional
``# key=value`` comment lines ahead of it, and floats in full-precision
scientific notation independent of locale.
"""
import csv
import json
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from models.schemas import ReferenceSummary, TraceRecord
from utils.errors import DataFormatError, DataIOError
from utils.linalg import CsrMatrix
from utils.logger import log_event

logger = logging.getLogger(__name__)


@dataclass
class LabeledDataset:
    features: CsrMatrix
    labels: np.ndarray
    raw_labels: np.ndarray

    def __post_init__(self):
        if self.features.n_rows != self.labels.shape[0]:
            raise DataFormatError(f"{self.features.n_rows} rows but {self.labels.shape[0]} labels")

    @property
    def n_samples(self) -> int:
        return self.features.n_rows

    @property
    def n_features(self) -> int:
        return self.features.n_cols


def sign_labels(raw: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(raw) > 0, 1.0, -1.0)


def parse_libsvm(stream: Iterable[Union[str, bytes]], n_features: Optional[int] = None,
                 label_map: Callable[[np.ndarray], np.ndarray] = sign_labels) -> LabeledDataset:
    raw_labels: List[float] = []
    indptr = [0]
    indices: List[int] = []
    values: List[float] = []

    for line_number, line in enumerate(stream, start=1):
        if isinstance(line, bytes):
            try:
                line = line.decode("utf-8")
            except UnicodeDecodeError as e:
                raise DataFormatError(f"invalid UTF-8 at byte {e.start}", line_number)
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            raw_labels.append(float(tokens[0]))
        except ValueError:
            raise DataFormatError(f"bad label {tokens[0]!r}", line_number)
        last = 0
        for token in tokens[1:]:
            idx_text, sep, val_text = token.partition(":")
            if not sep:
                raise DataFormatError(f"malformed feature {token!r}", line_number)
            try:
                idx, val = int(idx_text), float(val_text)
            except ValueError:
                raise DataFormatError(f"malformed feature {token!r}", line_number)
            if idx < 1:
                raise DataFormatError(f"feature index {idx} is not 1-based", line_number)
            if idx <= last:
                raise DataFormatError(f"feature indices not ascending at {idx}", line_number)
            if not math.isfinite(val):
                raise DataFormatError(f"non-finite value {val_text!r}", line_number)
            last = idx
            indices.append(idx - 1)
            values.append(val)
        indptr.append(len(indices))

    width = max(indices, default=-1) + 1
    if n_features is not None:
        if width > n_features:
            raise DataFormatError(f"feature index {width} exceeds n_features={n_features}")
        width = n_features
    features = CsrMatrix(len(raw_labels), width, indptr, indices, values)
    raw = np.asarray(raw_labels, dtype=np.float64)
    return LabeledDataset(features=features, labels=label_map(raw) if raw.size else raw, raw_labels=raw)


def load_libsvm(path: str, n_features: Optional[int] = None, mnist_labels: bool = False,
                max_samples: Optional[int] = None) -> LabeledDataset:
    label_map = remap_mnist_labels if mnist_labels else sign_labels
    try:
        with open(path, "rb") as fh:
            dataset = parse_libsvm(fh, n_features=n_features, label_map=label_map)
    except OSError as e:
        raise DataIOError(f"cannot read dataset {path}: {e.strerror}", path=path)
    if max_samples is not None:
        dataset = truncate(dataset, max_samples)
    log_event(logging.INFO, "dataset_loaded", f"Loaded {dataset.n_samples}x{dataset.n_features}",
              path=path, rows=dataset.n_samples, dim=dataset.n_features)
    return dataset


def write_libsvm(dataset: LabeledDataset, stream: TextIO):
    A = dataset.features
    for r in range(A.n_rows):
        p0, p1 = A.row_offsets[r], A.row_offsets[r + 1]
        feats = " ".join(f"{j + 1}:{v:.17g}" for j, v in zip(A.col_indices[p0:p1], A.values[p0:p1]))
        label = f"{dataset.raw_labels[r]:.17g}"
        stream.write(f"{label} {feats}\n" if feats else f"{label}\n")


def save_libsvm(dataset: LabeledDataset, path: str, comments: Optional[Dict[str, object]] = None):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for key, value in (comments or {}).items():
                fh.write(f"# {key}={value}\n")
            write_libsvm(dataset, fh)
    except OSError as e:
        raise DataIOError(f"cannot write dataset {path}: {e.strerror}", path=path)


def truncate(dataset: LabeledDataset, max_samples: int) -> LabeledDataset:
    k = min(max_samples, dataset.n_samples)
    return LabeledDataset(features=dataset.features.head(k), labels=dataset.labels[:k].copy(),
                          raw_labels=dataset.raw_labels[:k].copy())


def normalize_rows(dataset: LabeledDataset) -> LabeledDataset:
    """Scales every nonzero row to unit Euclidean norm; zero rows stay zero."""
    A = dataset.features.scipy
    norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).reshape(-1))
    zero_rows = int(np.sum(norms == 0.0))
    if zero_rows:
        log_event(logging.WARNING, "zero_rows", f"{zero_rows} all-zero samples left unnormalized",
                  rows=zero_rows)
    scale = np.where(norms > 0.0, 1.0 / np.where(norms > 0.0, norms, 1.0), 1.0)
    return LabeledDataset(features=dataset.features.scale_rows(scale), labels=dataset.labels.copy(),
                          raw_labels=dataset.raw_labels.copy())


def remap_mnist_labels(raw) -> np.ndarray:
    """Digits 5..9 -> +1, 0..4 -> -1."""
    raw = np.asarray(raw, dtype=np.float64)
    bad = (raw < 0) | (raw > 9) | (raw != np.round(raw))
    if np.any(bad):
        raise DataFormatError(f"label {raw[bad][0]:g} is not a digit in 0..9")
    return np.where(raw >= 5, 1.0, -1.0)


def build_svm_matrix(dataset: LabeledDataset) -> CsrMatrix:
    """Abar = diag(b) A: each sample row scaled by its label."""
    return dataset.features.scale_rows(dataset.labels)


# Synthetic data. Every generator draws from numpy's default_rng(seed), where
# seed may be an int or a sequence of ints (hashed by SeedSequence).

def gen_gaussian(n: int, d: int, seed: Union[int, Sequence[int]], density: float = 1.0,
                 sparse: bool = False) -> Union[np.ndarray, CsrMatrix]:
    if n < 1 or d < 1:
        raise ValueError("n and d must be at least 1")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, d))
    if density < 1.0:
        A *= rng.random((n, d)) < density
    return CsrMatrix.from_dense(A) if sparse else A


def gen_regression_targets(A: np.ndarray, seed: Union[int, Sequence[int]], support: float = 0.2,
                           noise: float = 0.1) -> Tuple[np.ndarray, np.ndarray]:
    """b = A x_true + noise * N(0, 1) with a sparse Gaussian x_true."""
    rng = np.random.default_rng(seed)
    d = A.shape[1]
    x_true = rng.standard_normal(d) * (rng.random(d) < support)
    b = A @ x_true + noise * rng.standard_normal(A.shape[0])
    return b, x_true


def gen_classification_dataset(n: int, d: int, density: float, seed: int) -> LabeledDataset:
    """Gaussian features, uniformly random +-1 labels, unit-norm rows."""
    features = gen_gaussian(n, d, seed=[seed, 0], density=density, sparse=True)
    labels = np.where(np.random.default_rng([seed, 1]).random(n) < 0.5, -1.0, 1.0)
    return normalize_rows(LabeledDataset(features=features, labels=labels, raw_labels=labels.copy()))


# CSV

def format_float(v: float) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17e}"


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    return format_float(v)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence], comments: Optional[Dict[str, object]] = None):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for key, value in (comments or {}).items():
                fh.write(f"# {key}={value}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            count = 0
            for row in rows:
                writer.writerow([_cell(v) for v in row])
                count += 1
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e.strerror}", path=path)
    log_event(logging.INFO, "csv_written", f"Wrote {count} rows", path=path, rows=count)


def read_csv(path: str) -> Tuple[Dict[str, str], List[str], List[List[str]]]:
    """Returns (comments, header, rows)."""
    comments: Dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            lines = fh.readlines()
    except OSError as e:
        raise DataIOError(f"cannot read {path}: {e.strerror}", path=path)
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            comments[key.strip()] = value.strip()
        else:
            body.append(line)
    table = list(csv.reader(body))
    if not table:
        return comments, [], []
    return comments, table[0], table[1:]


def trace_rows(records: Sequence[TraceRecord], prefix: Sequence = ()) -> List[list]:
    return [list(prefix) + [getattr(rec, f) for f in TraceRecord.CSV_FIELDS] for rec in records]


def save_reference(summary: ReferenceSummary, path: str):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(summary.model_dump_json())
    except OSError as e:
        raise DataIOError(f"cannot write reference {path}: {e.strerror}", path=path)


def load_reference(path: str) -> ReferenceSummary:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return ReferenceSummary(**json.load(fh))
    except OSError as e:
        raise DataIOError(f"cannot read reference {path}: {e.strerror}", path=path)
    except (ValueError, TypeError) as e:
        raise DataFormatError(f"reference file {path} is malformed: {e}")
