"""Sparse design matrices, libsvm text I/O and synthetic classification data.

libsvm grammar accepted by :func:`parse_libsvm`::

    line   := [ws] label { ws index ":" value } [ws] (LF | CRLF)
    label  := float literal equal to -1 or +1 (0/1 files are remapped)
    index  := 1-based integer, strictly ascending within a line

Blank lines and lines starting with ``#`` are skipped.
"""

from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass
from typing import BinaryIO, Optional, Union

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

LABEL_FLIP_RATE = 0.1

__all__ = [
    "SparseDesign",
    "LibsvmParseError",
    "parse_libsvm",
    "load_libsvm",
    "serialize_libsvm",
    "write_libsvm",
    "gen_synthetic_classification",
    "spectral_norm_sq",
    "lipschitz_estimate",
]


class LibsvmParseError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class SparseDesign:
    """Row-compressed feature matrix ``A`` (N x d) with labels ``b`` in {-1, +1}."""

    matrix: sp.csr_matrix
    labels: np.ndarray

    def __post_init__(self):
        A = self.matrix
        if not sp.isspmatrix_csr(A):
            raise TypeError("matrix must be a scipy CSR matrix")
        if self.labels.shape != (A.shape[0],):
            raise ValueError("labels must have one entry per row")
        if self.labels.size and not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if np.any(np.diff(A.indptr) < 0):
            raise ValueError("row offsets must be nondecreasing")
        if A.indices.size and (A.indices.min() < 0 or A.indices.max() >= A.shape[1]):
            raise ValueError("column index out of range")
        for arr in (A.data, A.indices, A.indptr, self.labels):
            arr.flags.writeable = False

    @classmethod
    def from_arrays(cls, indptr, indices, values, labels, n_features: int) -> "SparseDesign":
        indptr = np.asarray(indptr, dtype=np.int64)
        A = sp.csr_matrix(
            (np.asarray(values, dtype=np.float64), np.asarray(indices, dtype=np.int64), indptr),
            shape=(len(indptr) - 1, int(n_features)),
        )
        return cls(A, np.asarray(labels, dtype=np.float64))

    @property
    def n_samples(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_features(self) -> int:
        return self.matrix.shape[1]

    @property
    def indptr(self) -> np.ndarray:
        return self.matrix.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.matrix.indices

    @property
    def values(self) -> np.ndarray:
        return self.matrix.data

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseDesign):
            return NotImplemented
        return (
            self.matrix.shape == other.matrix.shape
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.labels, other.labels)
        )


def _parse_label(tok: str, lineno: int) -> float:
    try:
        label = float(tok)
    except ValueError:
        raise LibsvmParseError(lineno, f"invalid label {tok!r}") from None
    if label not in (-1.0, 0.0, 1.0):
        raise LibsvmParseError(lineno, f"label {tok!r} is not binary (+1/-1 or 0/1)")
    return label


def parse_libsvm(source: Union[bytes, str, BinaryIO], n_features: Optional[int] = None) -> SparseDesign:
    """Parse libsvm-format text into a :class:`SparseDesign`.

    ``source`` may be raw bytes, text, or a binary file object. The number of
    columns is the largest index seen unless ``n_features`` is given.
    """
    if isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("ascii")
    elif isinstance(source, str):
        text = source
    else:
        text = source.read().decode("ascii")

    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    labels: list[float] = []
    label_lines: list[int] = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw[:-1] if raw.endswith("\r") else raw
        body = line.strip()
        if not body or body.startswith("#"):
            continue
        tokens = body.split()
        labels.append(_parse_label(tokens[0], lineno))
        label_lines.append(lineno)
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise LibsvmParseError(lineno, f"expected index:value, got {tok!r}")
            try:
                idx = int(idx_s)
            except ValueError:
                raise LibsvmParseError(lineno, f"invalid index {idx_s!r}") from None
            try:
                val = float(val_s)
            except ValueError:
                raise LibsvmParseError(lineno, f"invalid value {val_s!r}") from None
            if idx < 1:
                raise LibsvmParseError(lineno, f"index {idx} is not 1-based positive")
            if idx <= prev:
                raise LibsvmParseError(lineno, f"index {idx} is not ascending (previous {prev})")
            if not np.isfinite(val):
                raise LibsvmParseError(lineno, f"nonfinite value {val_s!r}")
            prev = idx
            indices.append(idx - 1)
            values.append(val)
        indptr.append(len(indices))

    lab = np.asarray(labels, dtype=np.float64)
    if lab.size and np.any(lab == 0.0):
        if np.any(lab == -1.0):
            bad = label_lines[int(np.argmax(lab == 0.0))]
            raise LibsvmParseError(bad, "label 0 mixed with -1 labels")
        logger.warning("mapping 0/1 labels to -1/+1")
        lab = np.where(lab == 0.0, -1.0, 1.0)

    d_seen = max(indices) + 1 if indices else 0
    if n_features is None:
        n_features = d_seen
    elif n_features < d_seen:
        raise ValueError(f"n_features={n_features} smaller than largest index {d_seen}")
    return SparseDesign.from_arrays(indptr, indices, values, lab, n_features)


def load_libsvm(path: Union[str, os.PathLike], n_features: Optional[int] = None) -> SparseDesign:
    with open(path, "rb") as fh:
        return parse_libsvm(fh, n_features=n_features)


def serialize_libsvm(design: SparseDesign) -> bytes:
    """Inverse of :func:`parse_libsvm`; values use shortest round-trip reprs."""
    out = io.StringIO()
    A = design.matrix
    for i in range(design.n_samples):
        out.write("+1" if design.labels[i] > 0 else "-1")
        lo, hi = A.indptr[i], A.indptr[i + 1]
        for j, v in zip(A.indices[lo:hi], A.data[lo:hi]):
            out.write(f" {j + 1}:{float(v)!r}")
        out.write("\n")
    return out.getvalue().encode("ascii")


def write_libsvm(design: SparseDesign, path: Union[str, os.PathLike]) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_libsvm(design))


def gen_synthetic_classification(n_samples: int, n_features: int, density: float, seed: int) -> SparseDesign:
    """Sparse Gaussian features labelled by a planted unit-norm separator.

    Each entry is nonzero with probability ``density``; labels are
    ``sign(a_i @ w)`` with 10% of them flipped. Empty rows get label +1
    before flipping.
    """
    if n_samples < 0 or n_features < 1:
        raise ValueError("need n_samples >= 0 and n_features >= 1")
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(n_features)
    w /= np.linalg.norm(w)

    indptr = [0]
    indices = []
    values = []
    for _ in range(n_samples):
        if density >= 1.0:
            cols = np.arange(n_features)
        else:
            cols = np.flatnonzero(rng.random(n_features) < density)
        indices.append(cols)
        values.append(rng.standard_normal(cols.size))
        indptr.append(indptr[-1] + cols.size)
    indices = np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64)
    values = np.concatenate(values) if values else np.zeros(0)

    A = sp.csr_matrix((values, indices, np.asarray(indptr)), shape=(n_samples, n_features))
    margin = A @ w
    labels = np.where(margin >= 0, 1.0, -1.0)
    flip = rng.random(n_samples) < LABEL_FLIP_RATE
    labels[flip] *= -1.0
    return SparseDesign(A, labels)


def spectral_norm_sq(design, tol: float = 1e-8, max_iter: int = 5000, seed: int = 0) -> tuple[float, bool]:
    """Largest eigenvalue of ``A.T @ A`` by power iteration.

    Returns ``(estimate, converged)``; convergence is declared once the
    Rayleigh quotient changes by less than ``tol`` relatively.
    """
    A = design.matrix if isinstance(design, SparseDesign) else design
    d = A.shape[1]
    if d == 0 or (sp.issparse(A) and A.nnz == 0) or (not sp.issparse(A) and not np.any(A)):
        return 0.0, True
    v = np.random.default_rng(seed).standard_normal(d)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        new = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0, True
        v = w / nrm
        if abs(new - est) <= tol * abs(new):
            return new, True
        est = new
    return est, False


def lipschitz_estimate(design: SparseDesign) -> float:
    """``L = 4 ||A||^2 / (5 N)`` for the averaged tanh loss."""
    if design.n_samples == 0:
        raise ValueError("empty design")
    sq, converged = spectral_norm_sq(design)
    if not converged:
        logger.warning("power iteration did not converge; using best estimate")
    return 4.0 * sq / (5.0 * design.n_samples)
