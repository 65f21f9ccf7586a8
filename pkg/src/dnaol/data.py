"""Matrix and label files, preprocessing, synthetic data and model files.

Matrix files hold one sample per row on disk and load to column-major
``(n, N)`` arrays.

Binary matrix layout (little-endian)::

    b"DNAM" | u32 rows | u32 cols | rows*cols f64, row-major

Model file layout::

    b"DNMO" | u32 version | u8 scheme | u32 block count |
    { u64 byte length | binary matrix } * block count

Blocks, in order: hyperparameter vector, selector scales (1 x K), then the
K analysis operators, then the K classifier matrices (K = C for the
per-class scheme, K = 1 for the shared one).
"""

from __future__ import annotations

import io
import logging
import struct
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MATRIX_MAGIC = b"DNAM"
MODEL_MAGIC = b"DNMO"
MODEL_VERSION = 1
SCHEME_TAGS = {"sep": 0, "nonsep": 1}


class FormatError(ValueError):
    """Malformed matrix, label or model file."""


# ---------------------------------------------------------------------------
# matrices


def _matrix_bytes(M):
    M = np.ascontiguousarray(M, dtype="<f8")
    if M.ndim != 2:
        raise ValueError("only 2-D matrices can be serialized")
    return MATRIX_MAGIC + struct.pack("<II", *M.shape) + M.tobytes(order="C")


def _read_matrix_bytes(buf, offset=0, source="<buffer>"):
    """Decode one binary matrix at ``offset``; returns ``(matrix, new_offset)``."""
    if buf[offset:offset + 4] != MATRIX_MAGIC:
        raise FormatError(f"{source}: bad matrix magic at offset {offset}")
    if len(buf) < offset + 12:
        raise FormatError(f"{source}: truncated matrix header at offset {offset}")
    rows, cols = struct.unpack_from("<II", buf, offset + 4)
    start = offset + 12
    end = start + 8 * rows * cols
    if len(buf) < end:
        raise FormatError(
            f"{source}: truncated matrix data at offset {len(buf)} (expected {end} bytes)")
    M = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=start)
    return M.reshape(rows, cols).astype(float), end


def _parse_csv(text, source):
    rows = []
    lines = text.splitlines()
    width = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        cells = [c.strip() for c in line.split(",")]
        try:
            values = [float(c) for c in cells]
        except ValueError:
            if not rows and width is None:
                # header row
                width = len(cells)
                continue
            raise FormatError(f"{source}:{lineno}: non-numeric cell") from None
        if width is not None and len(values) != width:
            raise FormatError(f"{source}:{lineno}: expected {width} columns, got {len(values)}")
        width = len(values)
        rows.append(values)
    if not rows:
        raise FormatError(f"{source}: no data rows")
    return np.array(rows, dtype=float)


def _detect_format(path):
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return "csv"
    with open(path, "rb") as fh:
        head = fh.read(4)
    return "bin" if head == MATRIX_MAGIC else "csv"


def load_matrix(path, fmt=None):
    """Load a sample matrix as ``(n, N)``, one column per sample.

    ``fmt`` is ``"csv"`` or ``"bin"``; by default it is inferred from the
    suffix and the magic bytes.
    """
    fmt = fmt or _detect_format(path)
    if fmt == "csv":
        rows = _parse_csv(Path(path).read_text(), str(path))
    elif fmt == "bin":
        buf = Path(path).read_bytes()
        if not buf:
            raise FormatError(f"{path}: empty file")
        rows, end = _read_matrix_bytes(buf, 0, str(path))
        if end != len(buf):
            raise FormatError(f"{path}: {len(buf) - end} trailing bytes at offset {end}")
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")
    if not np.all(np.isfinite(rows)):
        raise FormatError(f"{path}: non-finite values")
    return np.ascontiguousarray(rows.T)


def save_matrix(path, X, fmt=None):
    """Write an ``(n, N)`` sample matrix, one sample per row on disk."""
    fmt = fmt or ("csv" if Path(path).suffix.lower() == ".csv" else "bin")
    rows = np.asarray(X, dtype=float).T
    if fmt == "csv":
        with open(path, "w") as fh:
            for r in rows:
                fh.write(",".join(repr(float(v)) for v in r) + "\n")
    elif fmt == "bin":
        Path(path).write_bytes(_matrix_bytes(rows))
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")


def load_labels(path):
    """One integer class index per line."""
    labels = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            labels.append(int(line))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: not an integer label") from None
    labels = np.array(labels, dtype=int)
    if labels.size and labels.min() < 0:
        raise FormatError(f"{path}: negative label")
    return labels


def save_labels(path, labels):
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


def one_hot(labels, n_classes=None):
    """``(C, N)`` matrix whose column i is the indicator of ``labels[i]``."""
    labels = np.asarray(labels, dtype=int)
    C = int(labels.max()) + 1 if n_classes is None else n_classes
    Y = np.zeros((C, labels.size))
    Y[labels, np.arange(labels.size)] = 1.0
    return Y


# ---------------------------------------------------------------------------
# preprocessing


def normalize_unit_l2(X):
    """Scale every nonzero column to unit l2 norm.

    Returns ``(X_normalized, n_zero_columns)``; zero columns are left as is.
    """
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=0)
    zero = norms == 0
    out = X / np.where(zero, 1.0, norms)
    # a second pass removes the last-ulp drift so the map is idempotent
    norms2 = np.linalg.norm(out, axis=0)
    out = out / np.where(zero, 1.0, norms2)
    n_zero = int(zero.sum())
    if n_zero:
        logger.warning("%d zero column(s) left unnormalized", n_zero)
    return out, n_zero


def gen_synthetic(n_classes, per_class, dim, separation, noise_sigma, seed):
    """Gaussian clusters around class means on a sphere of radius ``separation``.

    Returns ``(X, labels)`` with ``X`` of shape ``(dim, n_classes * per_class)``
    ordered class by class.
    """
    if min(n_classes, per_class, dim) < 1:
        raise ValueError("class count, samples per class and dimension must be positive")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((dim, n_classes))
    means *= separation / np.linalg.norm(means, axis=0)
    labels = np.repeat(np.arange(n_classes), per_class)
    X = means[:, labels] + noise_sigma * rng.standard_normal((dim, labels.size))
    return X, labels


def split_indices(labels, train_per_class, seed):
    """Per-class random train/test index split without replacement."""
    labels = np.asarray(labels, dtype=int)
    if train_per_class < 1:
        raise ValueError("train_per_class must be >= 1 (empty training set)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size <= train_per_class:
            raise ValueError(
                f"class {c} has {idx.size} samples; need more than {train_per_class}")
        perm = rng.permutation(idx)
        train.append(np.sort(perm[:train_per_class]))
        test.append(np.sort(perm[train_per_class:]))
    return np.concatenate(train), np.concatenate(test)


def split(X, labels, train_per_class, seed):
    """Returns ``((X_train, y_train), (X_test, y_test))``."""
    X = np.asarray(X)
    labels = np.asarray(labels, dtype=int)
    tr, te = split_indices(labels, train_per_class, seed)
    return (X[:, tr], labels[tr]), (X[:, te], labels[te])


# ---------------------------------------------------------------------------
# model files


def _model_blocks(model):
    from .train import SepModel

    hp = model.hparams.to_vector()
    if isinstance(model, SepModel):
        scheme = "sep"
        lams = np.array([[m.lam for m in model.models]])
        As = [m.A for m in model.models]
        Ws = list(model.weights)
    else:
        scheme = "nonsep"
        lams = np.array([[model.model.lam]])
        As = [model.model.A]
        Ws = [model.W]
    return scheme, [hp[None, :], lams, *As, *Ws]


def model_to_bytes(model):
    scheme, blocks = _model_blocks(model)
    out = io.BytesIO()
    out.write(MODEL_MAGIC)
    out.write(struct.pack("<IBI", MODEL_VERSION, SCHEME_TAGS[scheme], len(blocks)))
    for M in blocks:
        b = _matrix_bytes(M)
        out.write(struct.pack("<Q", len(b)))
        out.write(b)
    return out.getvalue()


def model_from_bytes(buf, source="<buffer>"):
    from .nacm import AnalysisModel
    from .train import HyperParams, NonSepModel, SepModel

    if buf[:4] != MODEL_MAGIC:
        raise FormatError(f"{source}: not a model file (bad magic)")
    if len(buf) < 13:
        raise FormatError(f"{source}: truncated model header")
    version, tag, count = struct.unpack_from("<IBI", buf, 4)
    if version != MODEL_VERSION:
        raise FormatError(f"{source}: unsupported model version {version}")
    offset = 13
    blocks = []
    for _ in range(count):
        if len(buf) < offset + 8:
            raise FormatError(f"{source}: truncated block length at offset {offset}")
        (length,) = struct.unpack_from("<Q", buf, offset)
        offset += 8
        M, end = _read_matrix_bytes(buf[:offset + length], offset, source)
        if end != offset + length:
            raise FormatError(f"{source}: block length mismatch at offset {offset}")
        blocks.append(M)
        offset = end
    if offset != len(buf):
        raise FormatError(f"{source}: trailing bytes at offset {offset}")
    if len(blocks) < 4:
        raise FormatError(f"{source}: too few blocks ({len(blocks)})")
    hp = HyperParams.from_vector(blocks[0][0])
    lams = blocks[1][0]
    k = lams.size
    if len(blocks) != 2 + 2 * k:
        raise FormatError(f"{source}: expected {2 + 2 * k} blocks, got {len(blocks)}")
    As, Ws = blocks[2:2 + k], blocks[2 + k:]
    models = [AnalysisModel(A, lam) for A, lam in zip(As, lams)]
    if tag == SCHEME_TAGS["sep"]:
        return SepModel(models, Ws, hp)
    if tag == SCHEME_TAGS["nonsep"]:
        return NonSepModel(models[0], Ws[0], hp)
    raise FormatError(f"{source}: unknown scheme tag {tag}")


def save_model(path, model):
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path):
    return model_from_bytes(Path(path).read_bytes(), str(path))
