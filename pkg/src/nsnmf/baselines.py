"""Baseline detectors: vanilla NMF, graph-regularised NMF (GNMF) and symmetric NMF (SNMF).

All three score observations by reconstruction error. SNMF factorises only
a similarity matrix and has no basis of its own, so after the fit a
non-negative basis ``H`` is obtained column by column by non-negative least
squares against the data, and the score is ``||a_i - w_i H||``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import nnls
from scipy.spatial.distance import pdist, squareform
from sklearn.neighbors import NearestNeighbors

from .core import AnomalyReport, FactorPair, anomaly_scores, as_data_matrix, flag_top_n
from .offline import SgdSchedule

logger = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-12
DENSE_SIMILARITY_WARN_N = 20_000


@dataclass(frozen=True)
class GnmfParams:
    lam: float = 100.0
    q: int = 5
    weighting: str = "binary"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if self.weighting != "binary":
            raise ValueError("only 0-1 adjacency weighting is supported")


@dataclass(frozen=True)
class SnmfParams:
    sigma: float | None = None

    def __post_init__(self):
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be > 0")


@dataclass(frozen=True)
class LaplacianPair:
    """0-1 neighbourhood adjacency, its degree vector and ``L = D - adjacency``."""

    adjacency: sp.csr_matrix
    degree: np.ndarray
    laplacian: sp.csr_matrix


def _init_factors(n, p, k, seed, scale=1.0) -> FactorPair:
    rng = np.random.default_rng(seed)
    return FactorPair(scale * rng.random((n, k)), scale * rng.random((k, p)))


def nmf_loss(A, f: FactorPair) -> float:
    R = A - f.W @ f.H
    return float(np.sum(R * R))


def gnmf_loss(A, f: FactorPair, lap: LaplacianPair, lam: float) -> float:
    LW = lap.laplacian @ f.W
    return math.fsum([nmf_loss(A, f), lam * float(np.sum(f.W * LW))])


def _converged(history, tol) -> bool:
    prev, cur = history[-2], history[-1]
    return abs(prev - cur) <= tol * max(abs(prev), np.finfo(float).tiny)


def _mu_fit(A, k, schedule, lap: LaplacianPair | None, lam: float, init: FactorPair | None):
    A = as_data_matrix(A)
    n, p = A.shape
    f = _init_factors(n, p, k, schedule.seed) if init is None else FactorPair(init.W.copy(), init.H.copy())
    W, H = f.W, f.H

    def loss():
        fp = FactorPair(W, H)
        return nmf_loss(A, fp) if lap is None else gnmf_loss(A, fp, lap, lam)

    history = [loss()]
    for _ in range(schedule.max_rounds):
        H *= (W.T @ A) / np.maximum(W.T @ W @ H, DENOMINATOR_FLOOR)
        num = A @ H.T
        den = W @ (H @ H.T)
        if lap is not None and lam > 0:
            num = num + lam * (lap.adjacency @ W)
            den = den + lam * (lap.degree[:, None] * W)
        W *= num / np.maximum(den, DENOMINATOR_FLOOR)
        history.append(loss())
        if _converged(history, schedule.tol):
            break
    return FactorPair(W, H, history)


def fit_nmf(A, k: int = 5, schedule: SgdSchedule = SgdSchedule(), init: FactorPair | None = None) -> FactorPair:
    """Lee-Seung multiplicative updates for ``min ||A - WH||_F^2``.

    ``schedule.max_rounds`` caps the iterations and ``schedule.tol`` is the
    relative loss change that counts as converged; ``history`` records the
    loss after each iteration.
    """
    return _mu_fit(A, k, schedule, None, 0.0, init)


def build_knn_laplacian(A, q: int = 5) -> LaplacianPair:
    """Symmetrised 0-1 ``q``-nearest-neighbour graph and its Laplacian."""
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if not 1 <= q < n:
        raise ValueError(f"q={q} must satisfy 1 <= q < n={n}")
    G = NearestNeighbors(n_neighbors=q).fit(A).kneighbors_graph(mode="connectivity")
    G = G.maximum(G.T).tocsr()
    G.setdiag(0)
    G.eliminate_zeros()
    degree = np.asarray(G.sum(axis=1)).ravel()
    L = (sp.diags(degree) - G).tocsr()
    return LaplacianPair(G, degree, L)


def fit_gnmf(A, k: int = 5, params: GnmfParams = GnmfParams(), schedule: SgdSchedule = SgdSchedule(),
             init: FactorPair | None = None) -> FactorPair:
    """``min lam tr(W^T L W) + ||A - WH||_F^2`` by GNMF multiplicative updates.

    The neighbourhood term adds ``lam S W`` to the numerator and ``lam D W``
    to the denominator of the usual ``W`` update.
    """
    lap = build_knn_laplacian(A, params.q)
    return _mu_fit(A, k, schedule, lap, params.lam, init)


def median_distance(A) -> float:
    d = pdist(np.asarray(A, dtype=np.float64))
    med = float(np.median(d)) if len(d) else 0.0
    return med if med > 0 else 1.0


def gaussian_similarity(A, sigma: float | None = None) -> np.ndarray:
    """Dense ``exp(-||a_i - a_j||^2 / (2 sigma^2))``; ``sigma`` defaults to the median pairwise distance."""
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if n > DENSE_SIMILARITY_WARN_N:
        warnings.warn(f"dense {n} x {n} similarity matrix needs {8 * n * n / 2**30:.1f} GiB",
                      ResourceWarning, stacklevel=2)
    if sigma is None:
        sigma = median_distance(A)
    D2 = squareform(pdist(A, "sqeuclidean")) if n > 1 else np.zeros((n, n))
    return np.exp(-D2 / (2.0 * sigma * sigma))


def snmf_loss(S, W) -> float:
    R = S - W @ W.T
    return float(np.sum(R * R))


def fit_snmf_similarity(S, k: int = 5, schedule: SgdSchedule = SgdSchedule(), init=None) -> FactorPair:
    """Projected gradient descent on ``||S - W W^T||_F^2`` for a given similarity.

    Each iteration starts from twice the last accepted step (the first trial
    is ``schedule.step_size(0)``) and halves it until the Armijo condition
    holds, so the loss never increases. ``H`` of the returned pair is empty.
    """
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    if init is None:
        rng = np.random.default_rng(schedule.seed)
        W = 2.0 * math.sqrt(max(S.mean(), DENOMINATOR_FLOOR) / k) * rng.random((n, k))
    else:
        W = np.array(init, dtype=np.float64)
    loss = snmf_loss(S, W)
    history = [loss]
    step = schedule.step_size(0)
    for t in range(schedule.max_rounds):
        G = 4.0 * (W @ (W.T @ W) - S @ W)
        step *= 2.0
        while True:
            W_new = np.maximum(W - step * G, 0.0)
            new_loss = snmf_loss(S, W_new)
            if new_loss <= loss + 1e-4 * float(np.sum(G * (W_new - W))) or step < 1e-20:
                break
            step *= 0.5
        if new_loss > loss:
            break
        W, loss = W_new, new_loss
        history.append(loss)
        if _converged(history, schedule.tol):
            break
    return FactorPair(W, np.zeros((k, 0)), history)


def fit_snmf(A, k: int = 5, params: SnmfParams = SnmfParams(), schedule: SgdSchedule = SgdSchedule()) -> np.ndarray:
    """Symmetric NMF of the Gaussian similarity of ``A``; returns ``W``."""
    S = gaussian_similarity(A, params.sigma)
    return fit_snmf_similarity(S, k, schedule).W


def fit_basis(A, W) -> np.ndarray:
    """Non-negative ``H`` minimising ``||A - W H||_F`` for a fixed ``W``."""
    A = np.asarray(A, dtype=np.float64)
    return np.column_stack([nnls(W, A[:, j])[0] for j in range(A.shape[1])])


def snmf_scores(A, W) -> np.ndarray:
    """Reconstruction errors of ``A`` through the SNMF weights and a least-squares basis."""
    return anomaly_scores(A, FactorPair(W, fit_basis(A, W)))


def similarity_residuals(A, W, params: SnmfParams = SnmfParams()) -> np.ndarray:
    """Row norms of ``S - W W^T``; a weaker alternative score kept for comparison."""
    S = gaussian_similarity(A, params.sigma)
    return np.linalg.norm(S - W @ W.T, axis=1)


def normalized_similarity(adjacency) -> np.ndarray:
    """``D^{-1/2} S D^{-1/2}`` with zero rows left at zero."""
    S = adjacency.toarray() if sp.issparse(adjacency) else np.asarray(adjacency, dtype=np.float64)
    deg = S.sum(axis=1)
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return inv[:, None] * S * inv[None, :]


def laplacian_equivalence_check(S, W) -> tuple[float, float]:
    """Both sides of the Laplacian / symmetric-factorisation identity.

    With ``S`` a normalised similarity, ``L = I - S`` and ``W^T W = I``::

        ||S - W W^T||_F^2 = 2 tr(W^T L W) - tr(I_K) + tr(S^T S)

    Returns ``(right-hand side, left-hand side)``. They agree to rounding
    error only for column-orthonormal ``W``; otherwise a warning reports the
    distance ``||W^T W - I||_F``.
    """
    S = np.asarray(S, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    k = W.shape[1]
    gap = float(np.linalg.norm(W.T @ W - np.eye(k)))
    if gap > 1e-8:
        logger.warning("W is not column-orthonormal (||W^T W - I||_F = %.3g)", gap)
    L = np.eye(S.shape[0]) - S
    laplacian_side = 2.0 * np.trace(W.T @ L @ W) - k + np.trace(S.T @ S)
    R = S - W @ W.T
    return float(laplacian_side), float(np.sum(R * R))


def detect_baseline(A, method: str, n_top: int, k: int = 5, schedule: SgdSchedule = SgdSchedule(),
                    gnmf: GnmfParams = GnmfParams(), snmf: SnmfParams = SnmfParams(),
                    row_ids=None) -> AnomalyReport:
    """Fit one baseline and flag its ``n_top`` highest scores."""
    A = as_data_matrix(A)
    if method == "nmf":
        scores = anomaly_scores(A, fit_nmf(A, k, schedule))
    elif method == "gnmf":
        scores = anomaly_scores(A, fit_gnmf(A, k, gnmf, schedule))
    elif method == "snmf":
        scores = snmf_scores(A, fit_snmf(A, k, snmf, schedule))
    else:
        raise ValueError(f"unknown baseline {method!r}")
    return flag_top_n(scores, n_top, row_ids)
