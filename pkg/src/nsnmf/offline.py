"""Offline NS-NMF by block-partitioned stochastic gradient descent.

``S`` (n x n) and ``A`` (n x p) are cut into ``B x B`` blocks. An instance
set ``(i, j, k)`` couples ``S[i, j]``, ``A[i, k]`` and ``A[j, k]`` and owns the
parameter blocks ``W[i]``, ``W[j]`` and ``H[:, k]``. Instance sets that share
no W block and no H block touch disjoint parameters, so they can be updated
in any order, or concurrently, with identical results.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import (
    AnomalyReport,
    FactorPair,
    HyperParams,
    anomaly_scores,
    as_data_matrix,
    flag_top_n,
    nsnmf_objective,
)
from .graph import SparseSimilarity, mst_similarity


class DivergenceError(FloatingPointError):
    """A gradient step produced non-finite values."""

    def __init__(self, message, iteration=None, instance=None):
        super().__init__(message)
        self.iteration = iteration
        self.instance = instance


@dataclass(frozen=True)
class SgdSchedule:
    """Step size ``eps0 / (1 + t / tau)`` with round-level stopping rules."""

    eps0: float = 1e-3
    tau: float = 100.0
    max_rounds: int = 500
    tol: float = 1e-5
    seed: int | None = 0

    def __post_init__(self):
        if self.eps0 < 0 or self.tau <= 0:
            raise ValueError("eps0 must be >= 0 and tau > 0")
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be >= 0")

    def step_size(self, t: int) -> float:
        return self.eps0 / (1.0 + t / self.tau)


@dataclass(frozen=True)
class BlockPartition:
    """Row boundaries (shared by S rows, S columns and A rows) and A column boundaries."""

    n: int
    p: int
    blocks: int
    row_bounds: tuple[int, ...]
    col_bounds: tuple[int, ...]

    def rows(self, i: int) -> slice:
        return slice(self.row_bounds[i], self.row_bounds[i + 1])

    def cols(self, k: int) -> slice:
        return slice(self.col_bounds[k], self.col_bounds[k + 1])

    def row_sizes(self) -> list[int]:
        return np.diff(self.row_bounds).tolist()

    def col_sizes(self) -> list[int]:
        return np.diff(self.col_bounds).tolist()


def _bounds(size: int, parts: int) -> tuple[int, ...]:
    base = size // parts
    return tuple(base * b for b in range(parts)) + (size,)


def partition(n: int, p: int, B: int) -> BlockPartition:
    """Split ``n`` rows and ``p`` columns into ``B`` ranges each; the last range absorbs the remainder."""
    if B < 1:
        raise ValueError("number of splits must be >= 1")
    if B > min(n, p):
        raise ValueError(f"cannot split a {n} x {p} problem into {B} blocks per dimension")
    return BlockPartition(n, p, B, _bounds(n, B), _bounds(p, B))


@dataclass(frozen=True, order=True)
class InstanceSet:
    """Block superscripts: ``S[i, j]``, ``A[i, k]``, ``A[j, k]``."""

    i: int
    j: int
    k: int

    @property
    def w_blocks(self) -> frozenset[int]:
        return frozenset((self.i, self.j))


def interchangeable(a: InstanceSet, b: InstanceSet) -> bool:
    """True when the two sets update disjoint parameter blocks."""
    return a.k != b.k and not (a.w_blocks & b.w_blocks)


def all_interchangeable(sets) -> bool:
    sets = list(sets)
    return all(interchangeable(a, b) for x, a in enumerate(sets) for b in sets[x + 1:])


def block_cover(B: int, rng: np.random.Generator | None = None) -> list[InstanceSet]:
    """One instance set per ordered pair ``(i, j)`` with ``k = perm[(j - i) mod B]``.

    Summing the block losses over this cover reproduces the full objective:
    every ``S`` block appears once and every ``A`` block, ``W`` block and
    ``H`` block gets total weight ``alpha``, ``gamma`` and ``gamma``.
    """
    perm = np.arange(B) if rng is None else rng.permutation(B)
    return [InstanceSet(i, j, int(perm[(j - i) % B])) for i in range(B) for j in range(B)]


def _greedy_collections(sets: list[InstanceSet]) -> list[list[InstanceSet]]:
    collections: list[list[InstanceSet]] = []
    used_w: list[set[int]] = []
    used_h: list[set[int]] = []
    for s in sets:
        for c, uw, uh in zip(collections, used_w, used_h):
            if s.k not in uh and not (s.w_blocks & uw):
                c.append(s)
                uw.update(s.w_blocks)
                uh.add(s.k)
                break
        else:
            collections.append([s])
            used_w.append(set(s.w_blocks))
            used_h.append({s.k})
    return collections


def round_schedule(part: BlockPartition, rng: np.random.Generator) -> list[list[InstanceSet]]:
    """A shuffled block cover split into interchangeable collections.

    Every instance set of the cover is processed exactly once per round.
    """
    cover = block_cover(part.blocks, rng)
    order = rng.permutation(len(cover))
    return _greedy_collections([cover[x] for x in order])


def sample_interchangeable(part: BlockPartition, rng: np.random.Generator) -> list[InstanceSet]:
    """A random maximal collection of pairwise interchangeable instance sets."""
    B = part.blocks
    candidates = [InstanceSet(i, j, k) for i in range(B) for j in range(B) for k in range(B)]
    order = rng.permutation(len(candidates))
    return _greedy_collections([candidates[x] for x in order])[0]


class BlockProblem:
    """Blocked data for one NS-NMF fit: ``A``, ``S`` and the partition."""

    def __init__(self, A, S, part: BlockPartition, h: HyperParams):
        self.A = np.asarray(A, dtype=np.float64)
        S = S.S if isinstance(S, SparseSimilarity) else sp.csr_matrix(S)
        if S.shape != (part.n, part.n) or self.A.shape != (part.n, part.p):
            raise ValueError("data and similarity shapes do not match the partition")
        self.part = part
        self.h = h
        B = part.blocks
        self.S_blocks = [[S[part.rows(i), part.rows(j)].tocsr() for j in range(B)] for i in range(B)]

    def _pieces(self, inst: InstanceSet, W, H):
        part = self.part
        ri, rj, ck = part.rows(inst.i), part.rows(inst.j), part.cols(inst.k)
        return W[ri], W[rj], H[:, ck], self.S_blocks[inst.i][inst.j], self.A[ri, ck], self.A[rj, ck]

    def loss(self, inst: InstanceSet, W: np.ndarray, H: np.ndarray) -> float:
        """Block loss ``L_ijk`` evaluated densely."""
        Wi, Wj, Hk, Sij, Aik, Ajk = self._pieces(inst, W, H)
        a, g, B = self.h.alpha, self.h.gamma, self.part.blocks
        Rs = Sij.toarray() - Wi @ Wj.T
        Ri = Aik - Wi @ Hk
        Rj = Ajk - Wj @ Hk
        return math.fsum([
            np.sum(Rs * Rs),
            g / (2 * B) * np.sum(Wi * Wi),
            g / (2 * B) * np.sum(Wj * Wj),
            a / 2 * np.sum(Ri * Ri),
            a / 2 * np.sum(Rj * Rj),
            g / B * np.sum(Hk * Hk),
        ])

    def gradients(self, inst: InstanceSet, W: np.ndarray, H: np.ndarray):
        """Gradients of ``L_ijk`` w.r.t. ``W[i]``, ``W[j]`` and ``H[:, k]``.

        For ``i == j`` the second entry is ``None`` and the first holds the
        combined derivative.
        """
        Wi, Wj, Hk, Sij, Aik, Ajk = self._pieces(inst, W, H)
        a, g, B = self.h.alpha, self.h.gamma, self.part.blocks
        # d/dWi ||S - Wi Wj^T||^2 = 2 (Wi Wj^T - S) Wj, without forming the dense residual
        Ei = Wi @ Hk - Aik
        Ej = Wj @ Hk - Ajk
        gi = 2 * (Wi @ (Wj.T @ Wj) - Sij @ Wj) + (g / B) * Wi + a * Ei @ Hk.T
        gj = 2 * (Wj @ (Wi.T @ Wi) - Sij.T @ Wi) + (g / B) * Wj + a * Ej @ Hk.T
        gh = a * (Wi.T @ Ei + Wj.T @ Ej) + (2 * g / B) * Hk
        if inst.i == inst.j:
            return gi + gj, None, gh
        return gi, gj, gh

    def step(self, inst: InstanceSet, W: np.ndarray, H: np.ndarray, eps: float, iteration=None):
        """Projected gradient step on the blocks owned by ``inst``, written in place."""
        with np.errstate(invalid="ignore", over="ignore"):
            gi, gj, gh = self.gradients(inst, W, H)
        for name, grad in (("W_i", gi), ("W_j", gj), ("H_k", gh)):
            if grad is not None and not np.all(np.isfinite(grad)):
                raise DivergenceError(
                    f"non-finite gradient for {name} at iteration {iteration}, blocks {inst}",
                    iteration, inst,
                )
        part = self.part
        ri, rj, ck = part.rows(inst.i), part.rows(inst.j), part.cols(inst.k)
        new_i = np.maximum(W[ri] - eps * gi, 0.0)
        new_j = None if gj is None else np.maximum(W[rj] - eps * gj, 0.0)
        new_h = np.maximum(H[:, ck] - eps * gh, 0.0)
        W[ri] = new_i
        if new_j is not None:
            W[rj] = new_j
        H[:, ck] = new_h
        if not (np.all(np.isfinite(new_i)) and np.all(np.isfinite(new_h))
                and (new_j is None or np.all(np.isfinite(new_j)))):
            raise DivergenceError(f"non-finite parameters at iteration {iteration}, blocks {inst}",
                                  iteration, inst)


def sgd_step(problem: BlockProblem, inst: InstanceSet, W, H, eps: float, iteration=None):
    problem.step(inst, W, H, eps, iteration)
    return W, H


def default_workers() -> int:
    env = os.environ.get("NSNMF_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def random_init(n: int, p: int, k: int, rng: np.random.Generator) -> FactorPair:
    """Uniform ``[0, 1)`` entries for ``W`` then ``H``."""
    W = rng.random((n, k))
    H = rng.random((k, p))
    return FactorPair(W, H)


def fit_offline(A, S, h: HyperParams = HyperParams(), schedule: SgdSchedule = SgdSchedule(),
                init: FactorPair | None = None, workers: int = 1) -> FactorPair:
    """Minimise the NS-NMF objective by blocked projected SGD.

    One round processes every instance set of a shuffled block cover once,
    collection by collection. Training stops when the relative change of the
    full objective over a round drops below ``schedule.tol`` or after
    ``schedule.max_rounds`` rounds. The objective after every round is kept in
    ``history`` (the first entry is the initial objective).
    """
    A = as_data_matrix(A)
    n, p = A.shape
    if h.k > min(n, p):
        raise ValueError(f"k={h.k} exceeds min(n, p)={min(n, p)}")
    part = partition(n, p, h.blocks)
    problem = BlockProblem(A, S, part, h)
    init_seq, sched_seq = np.random.SeedSequence(schedule.seed).spawn(2)
    if init is None:
        f = random_init(n, p, h.k, np.random.default_rng(init_seq))
    else:
        f = FactorPair(init.W.copy(), init.H.copy())
    W, H = f.W, f.H
    rng = np.random.default_rng(sched_seq)

    history = [nsnmf_objective(A, S, f, h)]
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t in range(schedule.max_rounds):
            eps = schedule.step_size(t)
            for collection in round_schedule(part, rng):
                if pool is None or len(collection) == 1:
                    for inst in collection:
                        problem.step(inst, W, H, eps, t)
                else:
                    for fut in [pool.submit(problem.step, inst, W, H, eps, t) for inst in collection]:
                        fut.result()
            history.append(nsnmf_objective(A, S, FactorPair(W, H), h))
            prev, cur = history[-2], history[-1]
            if abs(prev - cur) <= schedule.tol * max(abs(prev), np.finfo(float).tiny):
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return FactorPair(W, H, history)


def detect_offline(A, h: HyperParams = HyperParams(), schedule: SgdSchedule = SgdSchedule(),
                   row_ids=None, workers: int = 1) -> AnomalyReport:
    """MST similarity, NS-NMF fit, reconstruction-error scores and top-N flags."""
    A = as_data_matrix(A)
    S = mst_similarity(A)
    f = fit_offline(A, S, h, schedule, workers=workers)
    return flag_top_n(anomaly_scores(A, f), h.top_n, row_ids)
