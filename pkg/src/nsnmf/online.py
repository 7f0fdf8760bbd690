"""Online NS-NMF for streaming observations.

The detector keeps a buffer of the ``z`` most recent observations and their
weight rows, plus the running sums ``U = sum w_i^T w_i`` and
``V = sum w_i^T a_i`` that stand in for the full history when updating the
basis ``H``. The stream goes through three phases:

* filling (``d < z``): observations are buffered with random weight rows;
* bootstrap (``d == z``): offline NS-NMF on the buffer initialises ``W``,
  ``H``, ``U`` and ``V``;
* streaming (``d > z``): a local MST over the buffer gives the similarity row
  of the newest observation, its weight row and ``H`` are refined by
  multiplicative updates, a score is emitted and the oldest row is evicted.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import (
    DEFAULT_ALPHA,
    DEFAULT_BUFFER,
    DEFAULT_GAMMA,
    DEFAULT_K,
    FactorPair,
    HyperParams,
    anomaly_scores,
    flag_top_n,
)
from .graph import local_mst_similarity, mst_similarity
from .offline import SgdSchedule, fit_offline

DENOMINATOR_FLOOR = 1e-12


class Phase(enum.Enum):
    FILLING = "filling"
    BOOTSTRAP = "bootstrap"
    STREAMING = "streaming"


def phase_for(d: int, z: int) -> Phase:
    """Phase in which the ``d``-th observation (1-based) is processed."""
    if d < z:
        return Phase.FILLING
    if d == z:
        return Phase.BOOTSTRAP
    return Phase.STREAMING


def update_weight_row(w, a, H, s_neighbors, W_neighbors, alpha: float = DEFAULT_ALPHA,
                      degree: float | None = None) -> np.ndarray:
    """One multiplicative update of the newest weight row.

    ``w_k <- w_k (alpha a H^T + s W_nb)_k / (alpha w H H^T + D_dd w)_k`` where
    ``s`` holds the local-MST similarities to the buffered neighbours whose
    weight rows are ``W_nb`` and ``D_dd = sum(s)`` unless given.
    """
    w = np.asarray(w, dtype=np.float64)
    s_neighbors = np.asarray(s_neighbors, dtype=np.float64)
    if degree is None:
        degree = float(s_neighbors.sum())
    num = alpha * (a @ H.T) + s_neighbors @ W_neighbors
    den = alpha * (w @ H) @ H.T + degree * w
    return w * num / np.maximum(den, DENOMINATOR_FLOOR)


def update_basis(H, U, V) -> np.ndarray:
    """``H_kj <- H_kj V_kj / (U H)_kj``."""
    return H * V / np.maximum(U @ H, DENOMINATOR_FLOOR)


def accumulate(U, V, w, a):
    """Rank-one additions ``U + w^T w`` and ``V + w^T a``."""
    return U + np.outer(w, w), V + np.outer(w, a)


def online_score(a, w, H) -> float:
    """``||a - sum_k w_k H_k||_2``."""
    return float(np.linalg.norm(np.asarray(a) - np.asarray(w) @ H))


@dataclass
class StreamState:
    """Everything the detector keeps between observations."""

    H: np.ndarray
    U: np.ndarray
    V: np.ndarray
    A_buf: np.ndarray
    W_buf: np.ndarray
    d: int = 0

    @property
    def size(self) -> int:
        return min(self.d, len(self.A_buf))

    def buffered(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.size
        return self.A_buf[:m], self.W_buf[:m]

    @property
    def nbytes(self) -> int:
        return sum(x.nbytes for x in (self.H, self.U, self.V, self.A_buf, self.W_buf))


class LiveThreshold:
    """Flag a score above a running quantile of the recent scores.

    The quantile is taken over the last ``window`` scores seen before the
    current one; nothing is flagged until ``warmup`` scores have been seen.
    """

    def __init__(self, quantile: float = 0.99, window: int = 1000, warmup: int = 20):
        if not 0 < quantile < 1:
            raise ValueError("quantile must lie in (0, 1)")
        if warmup < 1 or window < warmup:
            raise ValueError("need 1 <= warmup <= window")
        self.quantile = quantile
        self.warmup = warmup
        self.history: deque[float] = deque(maxlen=window)

    def update(self, score: float) -> bool:
        flag = len(self.history) >= self.warmup and score > np.quantile(self.history, self.quantile)
        self.history.append(float(score))
        return bool(flag)


def threshold_decider(scores, mode: str = "batch", n_top: int | None = None,
                      quantile: float = 0.99, window: int = 1000, warmup: int = 20) -> np.ndarray:
    """Flags for a score sequence.

    ``batch`` flags the ``n_top`` highest scores once the stream is over;
    ``live`` replays the scores through a :class:`LiveThreshold`.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if mode == "batch":
        if n_top is None:
            raise ValueError("batch mode needs n_top")
        return flag_top_n(scores, n_top).flagged
    if mode == "live":
        live = LiveThreshold(quantile, window, warmup)
        return np.array([live.update(s) for s in scores], dtype=bool)
    raise ValueError(f"unknown mode {mode!r}")


class OnlineNSNMF:
    """Streaming NS-NMF detector.

    Call :meth:`ingest` once per observation in arrival order. Scores are
    appended to :attr:`scores`; the ``z`` bootstrap observations receive their
    offline reconstruction error when the bootstrap happens, so after the
    stream ends ``scores[i]`` belongs to the ``i``-th observation.

    Parameters
    ----------
    p : int
        Number of attributes.
    k, alpha, buffer :
        Latent groups, trade-off weight and buffer size ``z``.
    gamma, bootstrap_schedule :
        Settings of the offline fit run on the first full buffer.
    inner_tol, inner_max :
        The weight/basis iteration for each observation stops once the
        relative change of the weight row falls below ``inner_tol`` or after
        ``inner_max`` iterations.
    """

    def __init__(self, p: int, k: int = DEFAULT_K, alpha: float = DEFAULT_ALPHA,
                 buffer: int = DEFAULT_BUFFER, gamma: float = DEFAULT_GAMMA,
                 bootstrap_schedule: SgdSchedule | None = None, inner_tol: float = 1e-4,
                 inner_max: int = 100, seed: int | None = 0):
        self.params = HyperParams(k=k, alpha=alpha, gamma=gamma, blocks=1, buffer=buffer)
        if k > min(buffer, p):
            raise ValueError(f"k={k} exceeds min(buffer, p)={min(buffer, p)}")
        self.p = p
        self.inner_tol = inner_tol
        self.inner_max = inner_max
        boot_seq, stream_seq = np.random.SeedSequence(seed).spawn(2)
        self.bootstrap_schedule = bootstrap_schedule or SgdSchedule(seed=int(boot_seq.generate_state(1)[0]))
        self.rng = np.random.default_rng(stream_seq)
        z = buffer
        # one spare row holds the newest observation before the oldest is evicted
        self.state = StreamState(
            H=self.rng.random((k, p)),
            U=np.zeros((k, k)),
            V=np.zeros((k, p)),
            A_buf=np.zeros((z + 1, p)),
            W_buf=np.zeros((z + 1, k)),
        )
        self.scores: list[float] = []
        self.inner_iterations: list[int] = []

    @property
    def z(self) -> int:
        return self.params.buffer

    @property
    def phase(self) -> Phase:
        return phase_for(max(self.state.d, 1), self.z)

    def _check(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64).ravel()
        if a.shape != (self.p,):
            raise ValueError(f"observation has {a.size} attributes, expected {self.p}")
        if not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ValueError("observation must be finite and non-negative")
        return a

    def ingest(self, a) -> float | None:
        """Process one observation; returns its score, or None while filling."""
        a = self._check(a)
        st = self.state
        st.d += 1
        phase = phase_for(st.d, self.z)
        if phase is Phase.FILLING:
            st.A_buf[st.d - 1] = a
            st.W_buf[st.d - 1] = self.rng.random(self.params.k)
            return None
        if phase is Phase.BOOTSTRAP:
            return self._bootstrap(a)
        return self._stream(a)

    def _bootstrap(self, a) -> float:
        st, z = self.state, self.z
        st.A_buf[z - 1] = a
        st.W_buf[z - 1] = self.rng.random(self.params.k)
        A = st.A_buf[:z]
        init = FactorPair(st.W_buf[:z].copy(), st.H.copy())
        f = fit_offline(A, mst_similarity(A), self.params, self.bootstrap_schedule, init=init)
        st.W_buf[:z] = f.W
        st.H = f.H
        st.U = f.W.T @ f.W
        st.V = f.W.T @ A
        boot = anomaly_scores(A, f)
        self.scores.extend(boot.tolist())
        self.inner_iterations.extend([0] * z)
        return float(boot[-1])

    def _stream(self, a) -> float:
        st, z, alpha = self.state, self.z, self.params.alpha
        st.A_buf[z] = a
        s = local_mst_similarity(st.A_buf, newest_index=z)[:z]
        degree = float(s.sum())
        W_nb = st.W_buf[:z]
        w = self.rng.random(self.params.k)
        H, U, V = st.H, st.U, st.V
        for it in range(1, self.inner_max + 1):
            w_new = update_weight_row(w, a, H, s, W_nb, alpha, degree)
            U, V = accumulate(st.U, st.V, w_new, a)
            H = update_basis(H, U, V)
            change = np.linalg.norm(w_new - w) / max(np.linalg.norm(w), DENOMINATOR_FLOOR)
            w = w_new
            if change < self.inner_tol:
                break
        st.H, st.U, st.V = H, U, V
        st.W_buf[z] = w
        st.A_buf[:z] = st.A_buf[1:]
        st.W_buf[:z] = st.W_buf[1:]
        score = online_score(a, w, H)
        self.scores.append(score)
        self.inner_iterations.append(it)
        return score

    def memory_bound(self) -> int:
        """Bytes of ``O(z p + K p + K^2)`` state (buffer rows, basis and sums)."""
        z, p, k = self.z, self.p, self.params.k
        return 8 * (z * p + k * p + k * k)


def detect_online(A, h: HyperParams = HyperParams(), seed: int | None = 0, row_ids=None, **kwargs):
    """Stream the rows of ``A`` in order and flag the ``h.top_n`` highest scores."""
    A = np.asarray(A, dtype=np.float64)
    det = OnlineNSNMF(A.shape[1], k=h.k, alpha=h.alpha, buffer=h.buffer, gamma=h.gamma,
                      seed=seed, **kwargs)
    for row in A:
        det.ingest(row)
    if len(det.scores) < len(A):
        raise ValueError(f"stream of {len(A)} rows is shorter than the buffer size {h.buffer}")
    return flag_top_n(det.scores, h.top_n, row_ids)
