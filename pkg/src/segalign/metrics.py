"""Retrieval applications and evaluation metrics.

Motion grounding and motion-to-text retrieval operate in the shared
embedding space defined by the alignment aggregator.  The evaluation
metrics (R-Precision, MM-Dist, FID, Diversity, ISC/CV) follow the standard
text-to-motion protocol: pooled retrieval accuracy, paired feature distance,
Frechet distance between fitted Gaussians, and mean pairwise distance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .alignment import AggregatorParams, aggregate_mean_max, cosine_sim, cosine_matrix

DEFAULT_DIVERSITY_PAIRS = 300
DEFAULT_POOL_SIZE = 32

FID_EPS = 1e-6
FID_EIG_TOL = -1e-8


@dataclass(frozen=True)
class GroundingQuery:
    text_embedding: np.ndarray
    window_size: int = 5
    stride: int = 1

    def __post_init__(self):
        object.__setattr__(self, "text_embedding", np.asarray(self.text_embedding, dtype=np.float64))
        if self.window_size < 1 or self.stride < 1:
            raise ValueError("window_size and stride must be >= 1")


@dataclass
class EvalReport:
    metrics: dict[str, float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def add(self, name: str, value: float) -> None:
        if not np.isfinite(value):
            raise ValueError(f"metric {name} is non-finite")
        self.metrics[name] = float(value)

    def to_csv(self) -> str:
        lines = ["metric,value"]
        for name in sorted(self.metrics):
            lines.append(f"{name},{self.metrics[name]:.10g}")
        return "\n".join(lines) + "\n"


def motion_grounding(
    q: GroundingQuery, motion_tokens: np.ndarray, model: AggregatorParams
) -> tuple[int, np.ndarray]:
    """Slide a window over the motion tokens, embed each window, and return
    (best start index, full similarity vector).  Ties -> lowest start index."""
    tokens = np.asarray(motion_tokens, dtype=np.float64)
    n = tokens.shape[0]
    if n < q.window_size:
        raise ValueError(f"motion of {n} tokens is shorter than window {q.window_size}")
    starts = list(range(0, n - q.window_size + 1, q.stride))
    sims = np.empty(len(starts))
    for i, s in enumerate(starts):
        emb = aggregate_mean_max(tokens[s : s + q.window_size], model)
        sims[i] = cosine_sim(q.text_embedding, emb)
    best = starts[int(np.argmax(sims))]
    return best, sims


def m2t_retrieve(m_q: np.ndarray, candidates: np.ndarray) -> int:
    """Index of the candidate text embedding most similar to the query motion."""
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim != 2 or candidates.shape[0] < 1:
        raise ValueError("need at least one candidate")
    sims = cosine_matrix(np.asarray(m_q, dtype=np.float64)[None, :], candidates)[0]
    return int(np.argmax(sims))


def isc_score(pairs) -> float:
    """Mean cosine similarity over (text segment, motion segment) pairs."""
    sims = [cosine_sim(t, m) for t, m in pairs]
    if not sims:
        raise ValueError("no pairs")
    return float(np.mean(sims))


def isc_cv(isc_values) -> float:
    """Coefficient of variation: population std / mean of per-condition ISC."""
    vals = np.asarray(list(isc_values), dtype=np.float64)
    if vals.size == 0:
        raise ValueError("empty ISC list")
    mean = float(vals.mean())
    if mean == 0.0:
        raise ValueError("ISC mean is zero; CV undefined")
    return float(vals.std() / mean)


def r_precision(
    text_embs: np.ndarray,
    motion_embs: np.ndarray,
    topk: int = 1,
    pool_size: int = DEFAULT_POOL_SIZE,
) -> float:
    """Pooled retrieval accuracy by Euclidean distance.

    Samples are chunked into pools of ``pool_size`` (drop-last); each text
    ranks the motions in its pool, and the fraction whose true pair lands in
    the top k is returned.  Fewer samples than one pool fall back to a single
    smaller pool, with a warning.
    """
    T = np.asarray(text_embs, dtype=np.float64)
    M = np.asarray(motion_embs, dtype=np.float64)
    if T.shape[0] != M.shape[0]:
        raise ValueError("text/motion count mismatch")
    n = T.shape[0]
    if n <= topk:
        raise ValueError(f"need more than topk={topk} samples")
    if n < pool_size:
        warnings.warn(
            f"only {n} samples; evaluating a single pool smaller than {pool_size}",
            RuntimeWarning,
        )
        pools = [np.arange(n)]
    else:
        pools = [np.arange(i, i + pool_size) for i in range(0, n - pool_size + 1, pool_size)]
    hits = 0
    total = 0
    for pool in pools:
        dist = np.linalg.norm(T[pool][:, None, :] - M[pool][None, :, :], axis=2)
        ranks = np.argsort(dist, axis=1, kind="stable")
        for row in range(len(pool)):
            if row in ranks[row, :topk]:
                hits += 1
            total += 1
    return hits / total


def mm_dist(text_embs: np.ndarray, motion_embs: np.ndarray) -> float:
    """Mean Euclidean distance between paired features."""
    T = np.asarray(text_embs, dtype=np.float64)
    M = np.asarray(motion_embs, dtype=np.float64)
    if T.shape != M.shape:
        raise ValueError("paired lists must have identical shapes")
    return float(np.linalg.norm(T - M, axis=1).mean())


def diversity(motion_embs: np.ndarray, pairs: int = DEFAULT_DIVERSITY_PAIRS, seed: int = 0) -> float:
    """Mean Euclidean distance over seeded random pairs of distinct indices.

    Indices within a pair are distinct; pairs may repeat across draws.
    """
    M = np.asarray(motion_embs, dtype=np.float64)
    if M.shape[0] < 2:
        raise ValueError("need at least two embeddings")
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(pairs):
        i, j = rng.choice(M.shape[0], size=2, replace=False)
        total += float(np.linalg.norm(M[i] - M[j]))
    return total / pairs


def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    """Square root of a symmetric PSD matrix via eigendecomposition."""
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    if np.any(vals < FID_EIG_TOL):
        raise ValueError(f"covariance is indefinite (min eigenvalue {vals.min():.3e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid_from_stats(mu_a, cov_a, mu_b, cov_b) -> float:
    """Frechet distance between two Gaussians from their statistics:
    ||mu_a - mu_b||^2 + tr(Ca + Cb - 2 (Ca^1/2 Cb Ca^1/2)^1/2)."""
    mu_a = np.asarray(mu_a, dtype=np.float64)
    mu_b = np.asarray(mu_b, dtype=np.float64)
    cov_a = np.asarray(cov_a, dtype=np.float64)
    cov_b = np.asarray(cov_b, dtype=np.float64)
    root_a = _sym_sqrt(cov_a)
    inner = _sym_sqrt(root_a @ cov_b @ root_a)
    diff = mu_a - mu_b
    val = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(inner))
    return max(val, 0.0)


def fid(feats_a: np.ndarray, feats_b: np.ndarray, eps: float = FID_EPS) -> float:
    """FID between two feature sets via fitted Gaussians.

    Covariances get +eps*I regularization; desk-scale sample covariances are
    near-singular without it.
    """
    A = np.asarray(feats_a, dtype=np.float64)
    B = np.asarray(feats_b, dtype=np.float64)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise ValueError("non-finite features")
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ValueError("feature sets must be 2-D with matching dimension")
    d = A.shape[1]
    mu_a, mu_b = A.mean(axis=0), B.mean(axis=0)
    cov_a = np.cov(A, rowvar=False).reshape(d, d) + eps * np.eye(d)
    cov_b = np.cov(B, rowvar=False).reshape(d, d) + eps * np.eye(d)
    return fid_from_stats(mu_a, cov_a, mu_b, cov_b)


def similarity_map_csv(sim_rows: dict[str, np.ndarray]) -> str:
    """Rows = text segments, columns = window start indices."""
    names = list(sim_rows)
    width = len(next(iter(sim_rows.values())))
    lines = ["segment," + ",".join(str(i) for i in range(width))]
    for name in names:
        vals = ",".join(f"{v:.6g}" for v in sim_rows[name])
        lines.append(f"{name},{vals}")
    return "\n".join(lines) + "\n"
