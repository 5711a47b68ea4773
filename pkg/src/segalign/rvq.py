"""Residual vector quantization of latent sequences.

A stack holds one base codebook plus k residual codebooks.  Quantizing a
vector picks the nearest base code, then each residual layer picks the code
nearest the remaining residual; the quantized value is the sum of the chosen
codes.  Codebooks are learned layer-wise with seeded k-means on the residuals
left by the preceding layers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .motion import LatentSequence

DEFAULT_RESIDUAL_LAYERS = 5
DEFAULT_CODES_PER_LAYER = 512


@dataclass(frozen=True)
class Codebook:
    """K code vectors of dimension d, one per row."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] < 1:
            raise ValueError("codebook must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(e)):
            raise ValueError("codebook contains non-finite entries")
        object.__setattr__(self, "entries", e)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


@dataclass(frozen=True)
class CodebookStack:
    """Base codebook followed by residual codebooks, all sharing one dim."""

    books: tuple[Codebook, ...]

    def __post_init__(self):
        if len(self.books) < 1:
            raise ValueError("stack needs at least the base codebook")
        dims = {b.dim for b in self.books}
        if len(dims) != 1:
            raise ValueError(f"codebooks disagree on dimension: {sorted(dims)}")
        object.__setattr__(self, "books", tuple(self.books))

    @property
    def dim(self) -> int:
        return self.books[0].dim

    @property
    def num_layers(self) -> int:
        return len(self.books)


@dataclass(frozen=True)
class TokenSequence:
    """(k+1) x n integer matrix; row j indexes into codebook j."""

    layers: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.layers, dtype=np.int64)
        if a.ndim != 2:
            raise ValueError("token layers must be a 2-D integer matrix")
        if np.any(a < 0):
            raise ValueError("negative token index")
        object.__setattr__(self, "layers", a)

    @property
    def num_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def length(self) -> int:
        return self.layers.shape[1]


def _nearest(codes: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Index of the nearest code (squared Euclidean) per vector; ties -> lowest index."""
    d2 = ((vectors[:, None, :] - codes[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def quantize(v: LatentSequence, stack: CodebookStack) -> tuple[TokenSequence, LatentSequence]:
    """Residual quantization: returns the layer tokens and the summed codes."""
    if v.dim != stack.dim:
        raise ValueError(f"latent dim {v.dim} != codebook dim {stack.dim}")
    residual = v.vectors.astype(np.float64).copy()
    quantized = np.zeros_like(residual)
    rows = []
    for book in stack.books:
        idx = _nearest(book.entries, residual)
        chosen = book.entries[idx]
        residual -= chosen
        quantized += chosen
        rows.append(idx)
    return TokenSequence(layers=np.stack(rows)), LatentSequence(vectors=quantized)


def dequantize(t: TokenSequence, stack: CodebookStack) -> LatentSequence:
    """Sum of the selected code per layer at each position."""
    if t.num_layers != stack.num_layers:
        raise ValueError(f"token sequence has {t.num_layers} layers, stack has {stack.num_layers}")
    out = np.zeros((t.length, stack.dim))
    for j, book in enumerate(stack.books):
        idx = t.layers[j]
        if np.any(idx >= book.size):
            raise ValueError(f"token out of range for layer {j} (K={book.size})")
        out += book.entries[idx]
    return LatentSequence(vectors=out)


def kmeans(data: np.ndarray, k: int, seed: int, iters: int = 25) -> np.ndarray:
    """Seeded k-means with k-means++ init and a fixed iteration count.

    Empty clusters are reseeded to the point farthest from its assigned
    center, so the result is deterministic for a fixed seed.
    """
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    if n < k:
        raise ValueError(f"k-means needs at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)

    # k-means++ initialization
    centers = np.empty((k, data.shape[1]))
    centers[0] = data[rng.integers(n)]
    d2 = ((data - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = data[rng.integers(n)]
        else:
            centers[j] = data[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((data - centers[j]) ** 2).sum(axis=1))

    for _ in range(iters):
        dist = ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(dist, axis=1)
        for j in range(k):
            members = data[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:
                farthest = np.argmax(dist[np.arange(n), assign])
                centers[j] = data[farthest]
    return centers


def train_codebooks(
    data: list[LatentSequence] | np.ndarray,
    layers: int = DEFAULT_RESIDUAL_LAYERS + 1,
    codes_per_layer: int = DEFAULT_CODES_PER_LAYER,
    seed: int = 0,
    iters: int = 25,
) -> CodebookStack:
    """Layer-wise k-means on residuals: layer 0 fits the data, layer j fits
    what layers < j leave behind."""
    if isinstance(data, np.ndarray):
        vectors = np.asarray(data, dtype=np.float64)
    else:
        vectors = np.vstack([s.vectors for s in data]).astype(np.float64)
    if vectors.shape[0] < codes_per_layer:
        raise ValueError(
            f"insufficient data: {vectors.shape[0]} vectors for K={codes_per_layer}"
        )
    residual = vectors.copy()
    books = []
    for j in range(layers):
        centers = kmeans(residual, codes_per_layer, seed=seed + j, iters=iters)
        book = Codebook(entries=centers)
        idx = _nearest(book.entries, residual)
        residual = residual - book.entries[idx]
        books.append(book)
    return CodebookStack(books=tuple(books))


def reconstruction_error(data: list[LatentSequence] | np.ndarray, stack: CodebookStack) -> float:
    """Mean squared Euclidean distance between latents and their quantization."""
    if isinstance(data, np.ndarray):
        seqs = [LatentSequence(vectors=np.asarray(data, dtype=np.float64))]
    else:
        seqs = data
    total = 0.0
    count = 0
    for s in seqs:
        _, q = quantize(s, stack)
        total += float(((s.vectors - q.vectors) ** 2).sum())
        count += s.length
    return total / count


def truncate_stack(stack: CodebookStack, num_layers: int) -> CodebookStack:
    """Keep only the first ``num_layers`` codebooks."""
    if not (1 <= num_layers <= stack.num_layers):
        raise ValueError("num_layers out of range")
    return CodebookStack(books=stack.books[:num_layers])


def stack_to_json(stack: CodebookStack) -> str:
    return json.dumps(
        {"dim": stack.dim, "books": [b.entries.tolist() for b in stack.books]},
        sort_keys=True,
    )


def stack_from_json(text: str) -> CodebookStack:
    obj = json.loads(text)
    dim = obj["dim"]
    books = []
    for raw in obj["books"]:
        book = Codebook(entries=np.asarray(raw, dtype=np.float64))
        if book.dim != dim:
            raise ValueError(f"codebook dim {book.dim} != declared dim {dim}")
        books.append(book)
    return CodebookStack(books=tuple(books))
