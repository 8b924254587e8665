"""Cross-modal retrieval: match ranks, single pools, bootstrap pools.

Row i of the candidate matrix is the true match of query row i. Ranks are
1-based under descending cosine similarity; score ties are broken in
favor of the lower candidate index so results never depend on sort
internals.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..errors import ConfigError, NumericError


@dataclass(frozen=True)
class RetrievalReport:
    top1_percent: float
    top1_std: float
    mean_rank: float
    mean_rank_std: float
    pool_size: int
    n_pools: int
    space: str
    pool_top1: Tuple[float, ...]
    pool_mean_rank: Tuple[float, ...]


def _unit_rows(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ConfigError(f"{name} must be (N, dim), got shape {arr.shape}")
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    bad = np.flatnonzero(norms.reshape(-1) < 1e-12)
    if bad.size:
        raise NumericError(f"{name} row {int(bad[0])} has zero norm")
    return arr / norms


def match_ranks(queries, candidates) -> np.ndarray:
    """1-based rank of each query's true match among all candidates."""
    q = _unit_rows(queries, "queries")
    c = _unit_rows(candidates, "candidates")
    if q.shape != c.shape:
        raise ConfigError(
            f"queries {q.shape} and candidates {c.shape} must match"
        )
    n = q.shape[0]
    if n < 2:
        raise ConfigError(f"retrieval needs at least 2 pairs, got {n}")
    sim = q @ c.T
    own = sim[np.arange(n), np.arange(n)]
    higher = (sim > own[:, None]).sum(axis=1)
    ties = sim == own[:, None]
    lower_ties = np.array([int(ties[i, :i].sum()) for i in range(n)])
    return (1 + higher + lower_ties).astype(np.int64)


def _report(per_pool_ranks, space: str) -> RetrievalReport:
    top1 = [100.0 * float(np.mean(r == 1)) for r in per_pool_ranks]
    means = [float(np.mean(r)) for r in per_pool_ranks]
    sizes = [len(r) for r in per_pool_ranks]
    return RetrievalReport(
        top1_percent=float(np.mean(top1)),
        top1_std=float(np.std(top1)),
        mean_rank=float(np.mean(means)),
        mean_rank_std=float(np.std(means)),
        pool_size=int(round(np.mean(sizes))),
        n_pools=len(per_pool_ranks),
        space=space,
        pool_top1=tuple(top1),
        pool_mean_rank=tuple(means),
    )


def retrieval(queries, candidates, space: str = "encoder") -> RetrievalReport:
    """Single-pool retrieval over the full matrices."""
    return _report([match_ranks(queries, candidates)], space)


def bootstrap_retrieval(
    queries,
    candidates,
    participant_ids,
    pool_participants: int,
    n_pools: int,
    seed: int = 0,
    space: str = "encoder",
) -> RetrievalReport:
    """Retrieval averaged over participant-sampled candidate pools.

    Each pool draws `pool_participants` distinct participants and uses
    every one of their segment pairs as both queries and candidates.
    """
    q = np.asarray(queries, dtype=np.float64)
    c = np.asarray(candidates, dtype=np.float64)
    pids = np.asarray(participant_ids).reshape(-1)
    if q.shape[0] != pids.size or c.shape[0] != pids.size:
        raise ConfigError(
            f"{pids.size} participant ids for {q.shape[0]} queries and "
            f"{c.shape[0]} candidates"
        )
    unique = np.unique(pids)
    if not 1 <= pool_participants <= unique.size:
        raise ConfigError(
            f"pool_participants must be in [1, {unique.size}], "
            f"got {pool_participants}"
        )
    if n_pools < 1:
        raise ConfigError(f"n_pools must be positive, got {n_pools}")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    per_pool = []
    for _ in range(n_pools):
        chosen = rng.choice(unique, size=pool_participants, replace=False)
        rows = np.flatnonzero(np.isin(pids, chosen))
        per_pool.append(match_ranks(q[rows], c[rows]))
    return _report(per_pool, space)
