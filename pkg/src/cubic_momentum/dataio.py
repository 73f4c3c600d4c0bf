"""SVMlight / LibSVM text data and synthetic binary classification sets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class LibSVMParseError(ValueError):
    def __init__(self, line: int, column: int, token: str, reason: str):
        super().__init__(f"line {line}, column {column}: {reason} in {token!r}")
        self.line = line
        self.column = column
        self.token = token
        self.reason = reason


@dataclass(frozen=True, eq=False)
class Dataset:
    """Binary classification data with sparse rows and labels in {-1, +1}.

    ``features`` is an ``n x d`` CSR matrix with 0-based column indices.
    """

    features: sp.csr_matrix
    labels: np.ndarray
    w_star: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        n, d = self.features.shape
        if n < 1 or d < 1:
            raise ValueError(f"dataset needs n >= 1 and d >= 1, got n={n}, d={d}")
        if self.labels.shape != (n,):
            raise ValueError("labels must have one entry per row")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @cached_property
    def dense(self) -> np.ndarray:
        X = self.features.toarray()
        X.setflags(write=False)
        return X

    def row(self, i: int) -> dict[int, float]:
        lo, hi = self.features.indptr[i], self.features.indptr[i + 1]
        return dict(zip(self.features.indices[lo:hi].tolist(), self.features.data[lo:hi].tolist()))

    def same_as(self, other: "Dataset") -> bool:
        a, b = self.features, other.features
        return (
            a.shape == b.shape
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
            and np.array_equal(self.labels, other.labels)
        )


def normalize_label(value: float) -> float:
    return 1.0 if value > 0 else -1.0


def parse_libsvm(text, d: int | None = None) -> Dataset:
    """Parse LibSVM text (``bytes`` or ``str``).

    ``d`` aligns the feature dimension of separately parsed splits; the
    result uses ``max(d, largest index seen)``.
    """
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    labels: list[float] = []
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    max_index = 0

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        tokens = _tokens_with_columns(line)
        col, label_tok = tokens[0]
        try:
            label = float(label_tok)
        except ValueError:
            raise LibSVMParseError(lineno, col, label_tok, "non-numeric label") from None
        if not math.isfinite(label):
            raise LibSVMParseError(lineno, col, label_tok, "non-finite label")
        labels.append(normalize_label(label))

        prev = 0
        for col, tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep or not idx_s or not val_s:
                raise LibSVMParseError(lineno, col, tok, "malformed index:value pair")
            try:
                idx = int(idx_s)
            except ValueError:
                raise LibSVMParseError(lineno, col, tok, "non-integer index") from None
            if idx <= 0:
                raise LibSVMParseError(lineno, col, tok, "index must be positive")
            if idx <= prev:
                raise LibSVMParseError(lineno, col, tok, "indices must be strictly increasing")
            try:
                val = float(val_s)
            except ValueError:
                raise LibSVMParseError(lineno, col, tok, "malformed value") from None
            if not math.isfinite(val):
                raise LibSVMParseError(lineno, col, tok, "non-finite value")
            prev = idx
            indices.append(idx - 1)
            values.append(val)
        max_index = max(max_index, prev)
        indptr.append(len(indices))

    if not labels:
        raise ValueError("no data rows found")
    dim = max(max_index, d or 0, 1)
    X = sp.csr_matrix(
        (np.asarray(values, dtype=float), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(len(labels), dim),
    )
    return Dataset(features=X, labels=np.asarray(labels, dtype=float))


def _tokens_with_columns(line: str) -> list[tuple[int, str]]:
    out = []
    i, n = 0, len(line)
    while i < n:
        while i < n and line[i].isspace():
            i += 1
        if i >= n:
            break
        j = i
        while j < n and not line[j].isspace():
            j += 1
        out.append((i + 1, line[i:j]))
        i = j
    return out


def load_libsvm(path, d: int | None = None) -> Dataset:
    return parse_libsvm(Path(path).read_bytes(), d=d)


def serialize_libsvm(ds: Dataset) -> str:
    X = ds.features
    lines = []
    for i in range(ds.n):
        lo, hi = X.indptr[i], X.indptr[i + 1]
        parts = ["+1" if ds.labels[i] > 0 else "-1"]
        parts += [f"{j + 1}:{v!r}" for j, v in zip(X.indices[lo:hi].tolist(), X.data[lo:hi].tolist())]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def synth_logistic(n: int, d: int, seed: int, noise: float = 0.0) -> Dataset:
    """Gaussian features with labels from a random hyperplane.

    Rows are standard normal and the hyperplane ``w*`` is standard normal.
    Each label is flipped independently with probability ``noise``.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    if not 0.0 <= noise < 0.5:
        raise ValueError("noise must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    w_star = rng.standard_normal(d)
    A = rng.standard_normal((n, d))
    clean = np.where(A @ w_star >= 0.0, 1.0, -1.0)
    flips = rng.random(n) < noise
    labels = np.where(flips, -clean, clean)
    return Dataset(features=sp.csr_matrix(A), labels=labels, w_star=w_star)


def subsample(ds: Dataset, k: int, seed: int) -> Dataset:
    if not 1 <= k <= ds.n:
        raise ValueError(f"subsample size must be in [1, {ds.n}], got {k}")
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(ds.n, size=k, replace=False))
    return Dataset(features=ds.features[rows], labels=ds.labels[rows].copy(), w_star=ds.w_star)
