"""Matrix I/O and the expression-matrix preprocessing chain.

The chain is: per-row count normalisation -> log1p -> per-column
standardisation with an upper clip -> PCA. Pre-scaled inputs may skip the
first two stages.
"""

from __future__ import annotations

import csv
import io
import logging
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import svds

from .errors import ConfigError, DomainError, FormatError, ShapeError
from .tensor import as_matrix

log = logging.getLogger(__name__)

MATRIX_MAGIC = b"GMTX"
PCA_MAGIC = b"GPCA"
_FORMAT_VERSION = 1
_MATRIX_HEADER = "<4sIQQI"  # magic, version, rows, cols, element width

# dense SVD up to this many cells (rows * cols); iterative top-k beyond
DENSE_SVD_LIMIT = 20_000_000


@dataclass(frozen=True)
class PreprocessConfig:
    row_normalize: bool = True
    log1p: bool = True
    scale_clip: float | None = 10.0
    pca_components: int | None = 50
    skip_row_normalize_and_log: bool = False

    def __post_init__(self):
        if self.scale_clip is not None and not self.scale_clip > 0:
            raise ConfigError("scale_clip must be > 0")
        if self.pca_components is not None and self.pca_components < 1:
            raise ConfigError("pca_components must be >= 1")


@dataclass
class PcaModel:
    components: np.ndarray  # (cols, k), orthonormal columns
    column_means: np.ndarray  # (cols,)
    explained_variance: np.ndarray  # (k,), non-increasing

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    def transform(self, m) -> np.ndarray:
        x = as_matrix(m, "matrix")
        if x.shape[1] != self.components.shape[0]:
            raise ShapeError(f"matrix has {x.shape[1]} columns, PCA model expects {self.components.shape[0]}")
        return (x - self.column_means) @ self.components

    def inverse_transform(self, scores) -> np.ndarray:
        return np.asarray(scores) @ self.components.T + self.column_means


# -- matrix files ------------------------------------------------------------


def _sniff_binary(path: Path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) in (MATRIX_MAGIC, PCA_MAGIC)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def _read_text(path: Path) -> tuple[np.ndarray, list[str] | None]:
    text = path.read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty file")
    delimiter = "\t" if "\t" in lines[0] and "," not in lines[0] else ","
    rows = list(csv.reader(lines, delimiter=delimiter))
    labels = None
    first = [c.strip() for c in rows[0]]
    if not all(_is_number(c) for c in first):
        labels = first
        rows = rows[1:]
        start_line = 2
    else:
        start_line = 1
    if not rows:
        raise FormatError(f"{path}: header without data rows")
    width = len(labels) if labels is not None else len(rows[0])
    out = np.empty((len(rows), width))
    for r, row in enumerate(rows):
        if len(row) != width:
            raise FormatError(f"{path}:{r + start_line}: expected {width} fields, got {len(row)}")
        for c, cell in enumerate(row):
            try:
                out[r, c] = float(cell)
            except ValueError:
                raise FormatError(f"{path}:{r + start_line}: non-numeric cell {cell!r} in column {c + 1}") from None
    if not np.isfinite(out).all():
        raise FormatError(f"{path}: NaN or infinite values")
    return out, labels


def _read_binary(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    head = struct.calcsize(_MATRIX_HEADER)
    if len(blob) < head:
        raise FormatError(f"{path}: truncated header")
    magic, version, rows, cols, width = struct.unpack_from(_MATRIX_HEADER, blob, 0)
    if magic != MATRIX_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0")
    if version != _FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    if width not in (4, 8):
        raise FormatError(f"{path}: element width {width} not in (4, 8) at offset 24")
    expected = head + rows * cols * width
    if len(blob) != expected:
        raise FormatError(f"{path}: size {len(blob)} != expected {expected} for {rows}x{cols}x{width}")
    dtype = "<f4" if width == 4 else "<f8"
    data = np.frombuffer(blob, dtype=dtype, offset=head, count=rows * cols)
    return data.astype(np.float64).reshape(rows, cols)


def load_matrix(path, format: str | None = None, *, with_labels: bool = False):
    """Read a matrix from delimited text or the ``GMTX`` binary container.

    Parameters
    ----------
    path : path-like
    format : {"delimited_text", "raw_binary"}, optional
        Detected from the leading magic bytes when omitted.
    with_labels : bool
        Also return the column labels of a text header (or None).
    """
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: no such file")
    if format is None:
        format = "raw_binary" if _sniff_binary(path) else "delimited_text"
    if format == "raw_binary":
        m, labels = _read_binary(path), None
    elif format == "delimited_text":
        m, labels = _read_text(path)
    else:
        raise ConfigError(f"unknown matrix format {format!r}")
    return (m, labels) if with_labels else m


def save_matrix(path, m, format: str = "raw_binary", *, width: int = 8, labels=None) -> None:
    m = as_matrix(m, "matrix")
    path = Path(path)
    if format == "raw_binary":
        if width not in (4, 8):
            raise ConfigError("width must be 4 or 8")
        dtype = "<f4" if width == 4 else "<f8"
        header = struct.pack(_MATRIX_HEADER, MATRIX_MAGIC, _FORMAT_VERSION, m.shape[0], m.shape[1], width)
        path.write_bytes(header + np.ascontiguousarray(m, dtype=dtype).tobytes())
    elif format == "delimited_text":
        buf = io.StringIO()
        if labels is not None:
            buf.write(",".join(labels) + "\n")
        for row in m:
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        path.write_text(buf.getvalue())
    else:
        raise ConfigError(f"unknown matrix format {format!r}")


def save_pca(path, model: PcaModel) -> None:
    cols, k = model.components.shape
    header = struct.pack(_MATRIX_HEADER, PCA_MAGIC, _FORMAT_VERSION, cols, k, 8)
    body = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes()
        for a in (model.column_means, model.components, model.explained_variance)
    )
    Path(path).write_bytes(header + body)


def load_pca(path) -> PcaModel:
    blob = Path(path).read_bytes()
    head = struct.calcsize(_MATRIX_HEADER)
    if len(blob) < head:
        raise FormatError(f"{path}: truncated header")
    magic, version, cols, k, width = struct.unpack_from(_MATRIX_HEADER, blob, 0)
    if magic != PCA_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0")
    if version != _FORMAT_VERSION or width != 8:
        raise FormatError(f"{path}: unsupported version/width {version}/{width}")
    if len(blob) != head + 8 * (cols + cols * k + k):
        raise FormatError(f"{path}: unexpected size {len(blob)}")
    values = np.frombuffer(blob, dtype="<f8", offset=head).astype(np.float64)
    means = values[:cols]
    comps = values[cols:cols + cols * k].reshape(cols, k)
    var = values[cols + cols * k:]
    return PcaModel(comps, means, var)


# -- preprocessing stages ----------------------------------------------------


def normalize_rows(counts, target: str = "mean") -> np.ndarray:
    """Scale each row so that its total equals a common target.

    The target is the mean (or median) of the non-zero row totals. All-zero
    rows are left at zero with a warning.
    """
    x = as_matrix(counts, "counts")
    if (x < 0).any():
        raise DomainError("count matrix has negative entries")
    totals = x.sum(axis=1)
    zero = totals == 0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} all-zero rows left unnormalised", RuntimeWarning, stacklevel=2)
    live = totals[~zero]
    if live.size == 0:
        return x.copy()
    if target == "mean":
        goal = live.mean()
    elif target == "median":
        goal = np.median(live)
    else:
        raise ConfigError(f"unknown normalisation target {target!r}")
    scale = np.where(zero, 0.0, goal / np.where(zero, 1.0, totals))
    return x * scale[:, None]


def log1p_transform(m) -> np.ndarray:
    x = as_matrix(m, "matrix")
    if (x < 0).any():
        raise DomainError("log1p_transform expects non-negative entries")
    return np.log1p(x)


def standardize_clip(m, clip: float | None = 10.0) -> np.ndarray:
    """Zero-mean, unit (population) variance columns, then clamp above at ``clip``.

    Constant columns become all zeros. Only the upper side is clamped.
    """
    if clip is not None and not clip > 0:
        raise ConfigError("clip must be > 0")
    x = as_matrix(m, "matrix")
    mean = x.mean(axis=0)
    centred = x - mean
    std = np.sqrt((centred * centred).mean(axis=0))
    safe = np.where(std > 0, std, 1.0)
    out = np.where(std > 0, centred / safe, 0.0)
    if clip is not None:
        np.minimum(out, clip, out=out)
    return out


def _orient(vt: np.ndarray) -> np.ndarray:
    """Flip rows of vt so that each one's largest-|.| entry is positive."""
    pivot = np.argmax(np.abs(vt), axis=1)
    signs = np.sign(vt[np.arange(vt.shape[0]), pivot])
    signs[signs == 0] = 1.0
    return vt * signs[:, None]


def pca_fit_transform(m, k: int, solver: str = "auto") -> tuple[PcaModel, np.ndarray]:
    """Column-centred PCA keeping ``k`` components.

    ``solver`` is ``"dense"`` (full SVD), ``"iterative"`` (ARPACK top-k) or
    ``"auto"``, which picks dense for inputs under ``DENSE_SVD_LIMIT`` cells.
    """
    x = as_matrix(m, "matrix")
    rows, cols = x.shape
    if not 1 <= k <= min(rows - 1, cols):
        raise ConfigError(f"k={k} must lie in [1, min(rows-1, cols)] = [1, {min(rows - 1, cols)}]")
    means = x.mean(axis=0)
    centred = x - means
    if solver == "auto":
        solver = "dense" if rows * cols <= DENSE_SVD_LIMIT or k >= min(rows, cols) - 1 else "iterative"
    if solver == "dense":
        _, s, vt = np.linalg.svd(centred, full_matrices=False)
        s, vt = s[:k], vt[:k]
    elif solver == "iterative":
        if k >= min(rows, cols):
            raise ConfigError("iterative solver needs k < min(rows, cols)")
        v0 = np.ones(min(rows, cols)) / np.sqrt(min(rows, cols))
        _, s, vt = svds(centred, k=k, v0=v0, solver="arpack")
        order = np.argsort(-s, kind="stable")
        s, vt = s[order], vt[order]
    else:
        raise ConfigError(f"unknown PCA solver {solver!r}")
    vt = _orient(vt)
    components = np.ascontiguousarray(vt.T)
    variance = s * s / (rows - 1)
    model = PcaModel(components, means, variance)
    return model, centred @ components


def preprocess(m, config: PreprocessConfig = PreprocessConfig()) -> tuple[np.ndarray, PcaModel | None]:
    x = as_matrix(m, "matrix")
    if not config.skip_row_normalize_and_log:
        if config.row_normalize:
            x = normalize_rows(x)
        if config.log1p:
            x = log1p_transform(x)
    if config.scale_clip is not None:
        x = standardize_clip(x, config.scale_clip)
    model = None
    if config.pca_components is not None:
        model, x = pca_fit_transform(x, config.pca_components)
    return x, model
