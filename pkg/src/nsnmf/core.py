"""Factor matrices, the NS-NMF objective and reconstruction-error scoring."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from os import PathLike
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .graph import SparseSimilarity

DEFAULT_K = 5
DEFAULT_ALPHA = 0.8
DEFAULT_GAMMA = 0.2
DEFAULT_BLOCKS = 2
DEFAULT_TOP_N = 10
DEFAULT_BUFFER = 20

# rows per chunk when forming S - W W^T densely
_CHUNK_ROWS = 512


def as_data_matrix(A) -> np.ndarray:
    """Validate a non-negative, finite ``n x p`` data matrix and return it as float64."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"data matrix must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("data matrix contains non-finite entries")
    if np.any(A < 0):
        raise ValueError("data matrix must be non-negative")
    return A


@dataclass
class FactorPair:
    """Weight matrix ``W`` (n x K) and basis matrix ``H`` (K x p)."""

    W: np.ndarray
    H: np.ndarray
    history: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.H = np.asarray(self.H, dtype=np.float64)
        if self.W.ndim != 2 or self.H.ndim != 2 or self.W.shape[1] != self.H.shape[0]:
            raise ValueError(f"incompatible factor shapes {self.W.shape} and {self.H.shape}")

    @property
    def k(self) -> int:
        return self.W.shape[1]

    def is_nonnegative(self) -> bool:
        return bool(np.all(self.W >= 0) and np.all(self.H >= 0))


@dataclass(frozen=True)
class HyperParams:
    """Model settings. Defaults follow the published benchmark configuration."""

    k: int = DEFAULT_K
    alpha: float = DEFAULT_ALPHA
    gamma: float = DEFAULT_GAMMA
    blocks: int = DEFAULT_BLOCKS
    top_n: int = DEFAULT_TOP_N
    buffer: int = DEFAULT_BUFFER

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.blocks < 1:
            raise ValueError("blocks must be >= 1")
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")
        if self.buffer < 2:
            raise ValueError("buffer must be >= 2")


@dataclass
class AnomalyReport:
    """Scores with their descending ranking and the top-N flags.

    ``order[r]`` is the row holding rank ``r + 1``; ``rank[i]`` is the 1-based
    rank of row ``i``.
    """

    scores: np.ndarray
    order: np.ndarray
    rank: np.ndarray
    flagged: np.ndarray
    row_ids: list | None = None

    @property
    def top_n(self) -> int:
        return int(self.flagged.sum())

    @property
    def flagged_rows(self) -> np.ndarray:
        return self.order[: self.top_n]

    def to_csv(self, path: str | PathLike | None = None) -> str:
        """Write ``row_id,score,rank,flagged`` rows; returns the text as well."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["row_id", "score", "rank", "flagged"])
        ids = self.row_ids if self.row_ids is not None else range(len(self.scores))
        for rid, s, r, f in zip(ids, self.scores, self.rank, self.flagged):
            writer.writerow([rid, f"{s:.17g}", int(r), int(f)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def reconstruct(f: FactorPair) -> np.ndarray:
    return f.W @ f.H


def _as_sparse(S) -> sp.csr_matrix:
    if isinstance(S, SparseSimilarity):
        return S.S
    return sp.csr_matrix(S)


def structure_loss(S, W: np.ndarray) -> float:
    """``||S - W W^T||_F^2`` accumulated over row chunks."""
    S = _as_sparse(S)
    n = W.shape[0]
    if S.shape != (n, n):
        raise ValueError(f"similarity shape {S.shape} does not match {n} observations")
    parts = []
    for r0 in range(0, n, _CHUNK_ROWS):
        r1 = min(r0 + _CHUNK_ROWS, n)
        R = W[r0:r1] @ W.T
        R -= S[r0:r1].toarray()
        parts.append(np.sum(R * R))
    return math.fsum(parts)


def nsnmf_objective(A, S, f: FactorPair, h: HyperParams = HyperParams()) -> float:
    """``||S - WW^T||^2 + alpha ||A - WH||^2 + gamma (||W||^2 + ||H||^2)``."""
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (f.W.shape[0], f.H.shape[1]):
        raise ValueError(f"data shape {A.shape} does not match factors {f.W.shape} x {f.H.shape}")
    R = A - f.W @ f.H
    return math.fsum([
        structure_loss(S, f.W),
        h.alpha * np.sum(R * R),
        h.gamma * np.sum(f.W * f.W),
        h.gamma * np.sum(f.H * f.H),
    ])


def anomaly_scores(A, f: FactorPair) -> np.ndarray:
    """Per-row reconstruction error ``||a_i - sum_k W_ik h_k||_2``."""
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (f.W.shape[0], f.H.shape[1]):
        raise ValueError(f"data shape {A.shape} does not match factors {f.W.shape} x {f.H.shape}")
    return np.linalg.norm(A - f.W @ f.H, axis=1)


def flag_top_n(scores, n_top: int, row_ids: Sequence | None = None) -> AnomalyReport:
    """Rank scores in descending order and flag the first ``n_top``.

    Ties go to the lower row index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    if not 1 <= n_top <= n:
        raise ValueError(f"top-N cut-off {n_top} outside 1..{n}")
    order = np.lexsort((np.arange(n), -scores))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(1, n + 1)
    flagged = rank <= n_top
    return AnomalyReport(scores, order, rank, flagged, list(row_ids) if row_ids is not None else None)
