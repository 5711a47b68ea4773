"""Partitioning a token sequence into contiguous segments.

Three segmenters share one contract: spans are half-open, cover [0, n), and
tie-breaks always prefer the lowest index so every method is deterministic
and comparable against the exhaustive oracle.

  * uniform: lengths differ by at most one, longer spans first;
  * kernel CPD: exact DP minimizing within-segment Gaussian-kernel cost;
  * clustering: windows scored against a k-means primitive library, exact DP
    over contiguous runs each assigned one primitive.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .motion import LatentSequence
from .rvq import kmeans

DEFAULT_WINDOW_SIZE = 4
DEFAULT_WINDOW_STRIDE = 1
DEFAULT_LIBRARY_SIZE = 64

BRUTE_FORCE_MAX_N = 16
BRUTE_FORCE_MAX_A = 4


@dataclass(frozen=True)
class SegmentBoundaries:
    """Ordered half-open (start, end) spans covering [0, n)."""

    spans: tuple[tuple[int, int], ...]

    def __post_init__(self):
        spans = tuple((int(s), int(e)) for s, e in self.spans)
        if not spans:
            raise ValueError("empty span list")
        if spans[0][0] != 0:
            raise ValueError("first span must start at 0")
        for (s, e), (s2, _) in zip(spans, spans[1:]):
            if e != s2:
                raise ValueError("spans must be contiguous")
        if any(e <= s for s, e in spans):
            raise ValueError("every span must be non-empty")
        object.__setattr__(self, "spans", spans)

    @property
    def length(self) -> int:
        return self.spans[-1][1]

    @property
    def num_segments(self) -> int:
        return len(self.spans)

    @property
    def cuts(self) -> tuple[int, ...]:
        """Interior cut points (excludes 0 and n)."""
        return tuple(e for _, e in self.spans[:-1])

    @classmethod
    def from_cuts(cls, n: int, cuts) -> "SegmentBoundaries":
        edges = [0, *sorted(int(c) for c in cuts), n]
        return cls(spans=tuple(zip(edges[:-1], edges[1:])))


@dataclass(frozen=True)
class PrimitiveLibrary:
    """Cluster centers of flattened motion windows (window_size * d each)."""

    centers: np.ndarray
    window_size: int
    stride: int

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError("library needs at least one center")
        if self.window_size < 1 or self.stride < 1:
            raise ValueError("window_size and stride must be >= 1")
        object.__setattr__(self, "centers", c)

    @property
    def size(self) -> int:
        return self.centers.shape[0]


@dataclass(frozen=True)
class CostMatrix:
    """Window-to-primitive cost matrix, Nw rows x Kp columns."""

    costs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.costs, dtype=np.float64)
        if c.ndim != 2:
            raise ValueError("cost matrix must be 2-D")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite cost entry")
        object.__setattr__(self, "costs", c)


def uniform_segment(n: int, num_segments: int) -> SegmentBoundaries:
    """Evenly distribute n tokens; the first n mod A spans get the extra token."""
    if num_segments < 1:
        raise ValueError("need at least one segment")
    if num_segments > n:
        raise ValueError(f"cannot split {n} tokens into {num_segments} segments")
    q, r = divmod(n, num_segments)
    spans = []
    start = 0
    for i in range(num_segments):
        length = q + 1 if i < r else q
        spans.append((start, start + length))
        start += length
    return SegmentBoundaries(spans=tuple(spans))


# --- exact DP over span costs ----------------------------------------------
#
# Both DP and the brute-force oracle read span costs from the same
# precomputed table and accumulate segment costs right-associatively (last
# span first), so optimal objectives compare bit-for-bit and the shared
# lowest-index tie rule yields identical boundaries.

def _dp_partition(span_cost, n: int, num_segments: int) -> tuple[list[int], float]:
    """Minimize sum of span costs over contiguous partitions into A spans.

    Returns (interior cuts, objective).  Among optimal partitions, the
    lexicographically smallest cut sequence is returned.
    """
    A = num_segments
    # best[a][s]: cost of splitting [s, n) into a spans; choice[a][s]: first cut
    best = [[np.inf] * (n + 1) for _ in range(A + 1)]
    choice = [[-1] * (n + 1) for _ in range(A + 1)]
    best[1] = [np.inf] * (n + 1)
    for s in range(n):
        best[1][s] = span_cost(s, n)
    for a in range(2, A + 1):
        for s in range(n - a + 1):
            acc = np.inf
            pick = -1
            for e in range(s + 1, n - a + 2):
                c = span_cost(s, e) + best[a - 1][e]
                if c < acc:
                    acc = c
                    pick = e
            best[a][s] = acc
            choice[a][s] = pick
    cuts = []
    s = 0
    for a in range(A, 1, -1):
        s = choice[a][s]
        cuts.append(s)
    return cuts, float(best[A][0])


def _enumerate_partitions(n: int, num_segments: int):
    """All interior-cut tuples, in lexicographic order."""
    return itertools.combinations(range(1, n), num_segments - 1)


def _brute_force_partition(span_cost, n: int, num_segments: int) -> tuple[list[int], float]:
    best_cuts = None
    best_obj = np.inf
    for cuts in _enumerate_partitions(n, num_segments):
        edges = [0, *cuts, n]
        acc = 0.0
        for s, e in reversed(list(zip(edges[:-1], edges[1:]))):
            acc = span_cost(s, e) + acc
        if acc < best_obj:
            best_obj = acc
            best_cuts = list(cuts)
    return best_cuts, float(best_obj)


# --- kernel change-point detection -----------------------------------------

def gaussian_kernel_matrix(x: np.ndarray, bandwidth="median") -> np.ndarray:
    """Pairwise Gaussian kernel k(a,b) = exp(-||a-b||^2 / (2 sigma^2)).

    bandwidth "median" uses the median pairwise distance (1 if it is 0).
    """
    x = np.asarray(x, dtype=np.float64)
    sq = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2)
    if bandwidth == "median":
        n = x.shape[0]
        if n < 2:
            sigma = 1.0
        else:
            iu = np.triu_indices(n, k=1)
            sigma = float(np.median(np.sqrt(sq[iu])))
            if sigma == 0.0:
                sigma = 1.0
    else:
        sigma = float(bandwidth)
        if sigma <= 0:
            raise ValueError("bandwidth must be positive")
    return np.exp(-sq / (2.0 * sigma * sigma))


def kernel_span_cost(K: np.ndarray, s: int, e: int) -> float:
    """Within-segment kernel cost of the half-open span [s, e)."""
    block = K[s:e, s:e]
    return float(np.trace(block) - block.sum() / (e - s))


def kernel_cost_table(K: np.ndarray) -> np.ndarray:
    """C[s, e] = within-segment kernel cost of [s, e), for all spans at once."""
    n = K.shape[0]
    diag_cum = np.concatenate([[0.0], np.cumsum(np.diag(K))])
    cum2 = np.zeros((n + 1, n + 1))
    cum2[1:, 1:] = np.cumsum(np.cumsum(K, axis=0), axis=1)
    C = np.full((n + 1, n + 1), np.nan)
    for s in range(n):
        e = np.arange(s + 1, n + 1)
        block = cum2[e, e] - cum2[s, e] - cum2[e, s] + cum2[s, s]
        C[s, s + 1 :] = (diag_cum[e] - diag_cum[s]) - block / (e - s)
    return C


def kernel_cpd_segment(x: LatentSequence, num_segments: int, bandwidth="median") -> SegmentBoundaries:
    """Exact DP minimization of total within-segment kernel cost."""
    n = x.length
    if num_segments < 1:
        raise ValueError("need at least one segment")
    if n < num_segments:
        raise ValueError(f"{n} tokens cannot form {num_segments} segments")
    if num_segments == 1:
        return SegmentBoundaries(spans=((0, n),))
    K = gaussian_kernel_matrix(x.vectors, bandwidth)
    C = kernel_cost_table(K)
    cuts, _ = _dp_partition(lambda s, e: C[s, e], n, num_segments)
    return SegmentBoundaries.from_cuts(n, cuts)


# --- clustering-based segmentation -----------------------------------------

def extract_windows(x: np.ndarray, window_size: int, stride: int) -> np.ndarray:
    """Flattened sliding windows: row i covers tokens [i*stride, i*stride + w)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    starts = range(0, n - window_size + 1, stride)
    return np.stack([x[s : s + window_size].reshape(-1) for s in starts])


def build_primitive_library(
    corpus: list[LatentSequence],
    window_size: int = DEFAULT_WINDOW_SIZE,
    stride: int = DEFAULT_WINDOW_STRIDE,
    num_primitives: int = DEFAULT_LIBRARY_SIZE,
    seed: int = 0,
    iters: int = 25,
) -> PrimitiveLibrary:
    """Cluster sliding windows from the corpus into a primitive library."""
    windows = [
        extract_windows(s.vectors, window_size, stride)
        for s in corpus
        if s.length >= window_size
    ]
    if not windows:
        raise ValueError("no sequence long enough for a single window")
    allw = np.vstack(windows)
    if allw.shape[0] < num_primitives:
        raise ValueError(f"only {allw.shape[0]} windows for Kp={num_primitives}")
    centers = kmeans(allw, num_primitives, seed=seed, iters=iters)
    return PrimitiveLibrary(centers=centers, window_size=window_size, stride=stride)


def window_cost_matrix(x: LatentSequence, lib: PrimitiveLibrary) -> CostMatrix:
    """Squared distance of each window to each primitive center."""
    windows = extract_windows(x.vectors, lib.window_size, lib.stride)
    d2 = ((windows[:, None, :] - lib.centers[None, :, :]) ** 2).sum(axis=2)
    return CostMatrix(costs=d2)


def run_cost_tables(costs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-span primitive sums reduced to the cheapest primitive.

    Returns (C, P): C[s, e] is the cost of assigning windows [s, e) to their
    best single primitive, P[s, e] that primitive's index (lowest on ties).
    """
    nw = costs.shape[0]
    prefix = np.vstack([np.zeros(costs.shape[1]), np.cumsum(costs, axis=0)])
    C = np.full((nw + 1, nw + 1), np.nan)
    P = np.zeros((nw + 1, nw + 1), dtype=np.int64)
    for s in range(nw):
        sums = prefix[s + 1 :] - prefix[s]          # (nw - s, Kp)
        C[s, s + 1 :] = sums.min(axis=1)
        P[s, s + 1 :] = sums.argmin(axis=1)
    return C, P


def segment_cost_matrix_dp(cost: CostMatrix, num_segments: int) -> tuple[list[int], list[int], float]:
    """DP over windows: returns (window cuts, per-run primitive, objective)."""
    nw = cost.costs.shape[0]
    if num_segments < 1 or num_segments > nw:
        raise ValueError(f"{nw} windows cannot form {num_segments} runs")
    C, P = run_cost_tables(cost.costs)
    if num_segments == 1:
        return [], [int(P[0, nw])], float(C[0, nw])
    cuts, obj = _dp_partition(lambda s, e: C[s, e], nw, num_segments)
    edges = [0, *cuts, nw]
    assignments = [int(P[s, e]) for s, e in zip(edges[:-1], edges[1:])]
    return cuts, assignments, obj


def cluster_dp_segment(x: LatentSequence, lib: PrimitiveLibrary, num_segments: int) -> SegmentBoundaries:
    """Segment by optimal contiguous assignment of windows to primitives.

    Window cut c maps back to token index c * stride; the final span always
    ends at the token count.
    """
    cost = window_cost_matrix(x, lib)
    window_cuts, _, _ = segment_cost_matrix_dp(cost, num_segments)
    token_cuts = [c * lib.stride for c in window_cuts]
    return SegmentBoundaries.from_cuts(x.length, token_cuts)


# --- exhaustive oracle ------------------------------------------------------

def brute_force_segment(costs, num_segments: int) -> SegmentBoundaries:
    """Exhaustive-enumeration oracle with the same tie rules as the DPs.

    ``costs`` is either a CostMatrix (clustering objective: every contiguous
    run of windows assigned its cheapest primitive) or a square kernel matrix
    (CPD objective).  Instances are capped at n <= 16, A <= 4.
    """
    cuts, _, n = _brute_force_solve(costs, num_segments)
    return SegmentBoundaries.from_cuts(n, cuts)


def brute_force_objective(costs, num_segments: int) -> float:
    """Objective value of the oracle's optimum (same enumeration and ties)."""
    _, obj, _ = _brute_force_solve(costs, num_segments)
    return obj


def _brute_force_span_cost(costs):
    """Span-cost callable for enumeration, sharing the DP's arithmetic.

    For a CostMatrix, the min over primitives is enumerated explicitly over
    the same per-primitive prefix sums the DP reduces; for a kernel matrix,
    the shared cost table is read directly.
    """
    if isinstance(costs, CostMatrix):
        n = costs.costs.shape[0]
        prefix = np.vstack([np.zeros(costs.costs.shape[1]), np.cumsum(costs.costs, axis=0)])

        def span_cost(s, e):
            sums = prefix[e] - prefix[s]
            best = np.inf
            for p in range(sums.shape[0]):
                if sums[p] < best:
                    best = sums[p]
            return best

        return span_cost, n
    K = np.asarray(costs, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError("kernel costs must be a square matrix")
    C = kernel_cost_table(K)
    return (lambda s, e: C[s, e]), K.shape[0]


def _brute_force_solve(costs, num_segments: int):
    span_cost, n = _brute_force_span_cost(costs)
    if n > BRUTE_FORCE_MAX_N or num_segments > BRUTE_FORCE_MAX_A:
        raise ValueError(
            f"instance too large for enumeration (n={n} > {BRUTE_FORCE_MAX_N} "
            f"or A={num_segments} > {BRUTE_FORCE_MAX_A})"
        )
    if num_segments < 1 or num_segments > n:
        raise ValueError(f"cannot split {n} items into {num_segments} segments")
    if num_segments == 1:
        return [], float(span_cost(0, n)), n
    cuts, obj = _brute_force_partition(span_cost, n, num_segments)
    return cuts, obj, n


# --- evaluation -------------------------------------------------------------

def seg_error_eval(pred: SegmentBoundaries, truth: SegmentBoundaries) -> tuple[float, float]:
    """Mean and population std of |predicted cut - true cut| over interior cuts.

    Cuts are matched in order; counts must agree.  Single-segment inputs have
    no interior cuts and evaluate to (0, 0) by convention.
    """
    if pred.num_segments != truth.num_segments:
        raise ValueError(
            f"segment count mismatch: {pred.num_segments} vs {truth.num_segments}"
        )
    errors = cut_errors(pred, truth)
    if not errors:
        return 0.0, 0.0
    arr = np.asarray(errors, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def cut_errors(pred: SegmentBoundaries, truth: SegmentBoundaries) -> list[float]:
    """Per-cut absolute errors, for pooling across a corpus."""
    if pred.num_segments != truth.num_segments:
        raise ValueError("segment count mismatch")
    return [abs(p - t) for p, t in zip(pred.cuts, truth.cuts)]


def seg_error_corpus(pairs) -> tuple[float, float]:
    """Pool cut errors over (pred, truth) pairs; returns (mean, population std)."""
    pooled = []
    for pred, truth in pairs:
        pooled.extend(cut_errors(pred, truth))
    if not pooled:
        return 0.0, 0.0
    arr = np.asarray(pooled, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def jittered_boundary_corpus(
    seed: int,
    n_sequences: int = 500,
    length: int = 24,
    dim: int = 4,
    jitter: int = 3,
    mean_scale: float = 1.1,
    noise_std: float = 1.2,
    segment_range=(2, 3),
) -> list[tuple[LatentSequence, SegmentBoundaries]]:
    """Synthetic evaluation corpus: regime boundaries sit near the uniform
    positions but jittered by up to ``jitter`` tokens, with Gaussian regime
    means and per-token noise.  Returns (sequence, true boundaries) pairs."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_sequences):
        a = int(rng.integers(segment_range[0], segment_range[1] + 1))
        cuts = []
        prev = 0
        for k in range(1, a):
            base = round(length * k / a)
            c = int(np.clip(base + rng.integers(-jitter, jitter + 1), prev + 1, length - 1))
            cuts.append(max(c, prev + 1))
            prev = cuts[-1]
        truth = SegmentBoundaries.from_cuts(length, cuts)
        means = rng.normal(0.0, mean_scale, size=(a, dim))
        x = np.vstack(
            [
                means[i] + rng.normal(0.0, noise_std, size=(e - s, dim))
                for i, (s, e) in enumerate(truth.spans)
            ]
        )
        out.append((LatentSequence(vectors=x), truth))
    return out


def library_to_json(lib: PrimitiveLibrary) -> dict:
    return {
        "centers": lib.centers.tolist(),
        "window_size": lib.window_size,
        "stride": lib.stride,
    }


def library_from_json(obj: dict) -> PrimitiveLibrary:
    return PrimitiveLibrary(
        centers=np.asarray(obj["centers"], dtype=np.float64),
        window_size=int(obj["window_size"]),
        stride=int(obj["stride"]),
    )


def boundaries_to_json(b: SegmentBoundaries) -> list[list[int]]:
    return [[s, e] for s, e in b.spans]


def boundaries_from_json(obj) -> SegmentBoundaries:
    return SegmentBoundaries(spans=tuple((int(s), int(e)) for s, e in obj))
