"""Fine-grained contrastive text-motion alignment.

Motion tokens inside a segment span are aggregated (mean + max pooled, then
a small MLP) into a segment embedding living in the text embedding space.
Four contrastive losses are provided: per-sample (the default, negatives come
only from the same sample), batch-level, global sequence-level, and
token-level.  Gradients are hand-derived so they can be audited against
finite differences, and a toy SGD loop demonstrates the mechanism end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NORM_FLOOR = 1e-12

DEFAULT_TEMPERATURE = 0.1
DEFAULT_LAMBDA_ALIGN = 1.0


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass(frozen=True)
class AlignmentConfig:
    temperature: float = DEFAULT_TEMPERATURE
    lambda_align: float = DEFAULT_LAMBDA_ALIGN
    a_max: int = 5
    batch_size: int = 32

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.lambda_align < 0:
            raise ValueError("lambda_align must be nonnegative")


@dataclass
class SegmentEmbeddings:
    """Paired text / motion segment embeddings, ragged across samples.

    ``text[i]`` and ``motion[i]`` are (A_i, d_e) matrices; row j of each is a
    matched pair.  Padded-array input goes through :meth:`from_padded`, which
    drops the invalid slots entirely so they can never act as negatives.
    """

    text: list[np.ndarray]
    motion: list[np.ndarray]

    def __post_init__(self):
        if len(self.text) != len(self.motion):
            raise ValueError("text and motion sample counts differ")
        self.text = [np.asarray(t, dtype=np.float64) for t in self.text]
        self.motion = [np.asarray(m, dtype=np.float64) for m in self.motion]
        for i, (t, m) in enumerate(zip(self.text, self.motion)):
            if t.shape != m.shape:
                raise ValueError(f"sample {i}: text shape {t.shape} != motion shape {m.shape}")
            if t.ndim != 2 or t.shape[0] < 1:
                raise ValueError(f"sample {i}: expected (A_i, d_e) matrices")

    @classmethod
    def from_padded(cls, text: np.ndarray, motion: np.ndarray, valid_counts) -> "SegmentEmbeddings":
        return cls(
            text=[text[i, :a] for i, a in enumerate(valid_counts)],
            motion=[motion[i, :a] for i, a in enumerate(valid_counts)],
        )

    @property
    def num_samples(self) -> int:
        return len(self.text)

    @property
    def total_pairs(self) -> int:
        return sum(t.shape[0] for t in self.text)


@dataclass
class TokenEmbeddings:
    """Per-sample token features with their text-segment assignments."""

    tokens: list[np.ndarray]          # sample i: (L_i, d_e)
    assignments: list[np.ndarray]     # sample i: (L_i,) ints into that sample's segments

    def __post_init__(self):
        if len(self.tokens) != len(self.assignments):
            raise ValueError("tokens and assignments sample counts differ")
        self.tokens = [np.asarray(x, dtype=np.float64) for x in self.tokens]
        self.assignments = [np.asarray(a, dtype=np.int64) for a in self.assignments]
        for i, (x, a) in enumerate(zip(self.tokens, self.assignments)):
            if x.shape[0] != a.shape[0]:
                raise ValueError(f"sample {i}: token/assignment length mismatch")


# --- similarity -------------------------------------------------------------

def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity with norms floored at 1e-12; underflow gives 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        return 0.0
    return float(a @ b / (na * nb))


def _unit_rows(X: np.ndarray) -> np.ndarray:
    """Row-normalize; rows with norm under the floor become zero rows."""
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    out = np.where(norms < NORM_FLOOR, 0.0, X / np.maximum(norms, NORM_FLOOR))
    return out


def cosine_matrix(T: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities: rows index T, columns index M."""
    return _unit_rows(np.asarray(T, dtype=np.float64)) @ _unit_rows(np.asarray(M, dtype=np.float64)).T


# --- aggregation ------------------------------------------------------------

@dataclass
class AggregatorParams:
    """Two-layer MLP over concat(mean, max) of a token span."""

    w1: np.ndarray  # (h, 2*d_token)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (d_embed, h)
    b2: np.ndarray  # (d_embed,)
    seed: int = 0

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
            setattr(self, name, arr)
        if self.w1.shape[0] != self.b1.shape[0] or self.w2.shape[1] != self.w1.shape[0]:
            raise ValueError("inconsistent aggregator shapes")
        if self.w2.shape[0] != self.b2.shape[0]:
            raise ValueError("inconsistent aggregator shapes")

    @classmethod
    def init(cls, d_token: int, d_embed: int, hidden: int | None = None, seed: int = 0) -> "AggregatorParams":
        """Seeded uniform init in +-1/sqrt(fan_in); hidden defaults to 2*d_token."""
        h = 2 * d_token if hidden is None else hidden
        rng = np.random.default_rng(seed)
        lim1 = 1.0 / np.sqrt(2 * d_token)
        lim2 = 1.0 / np.sqrt(h)
        return cls(
            w1=rng.uniform(-lim1, lim1, size=(h, 2 * d_token)),
            b1=rng.uniform(-lim1, lim1, size=h),
            w2=rng.uniform(-lim2, lim2, size=(d_embed, h)),
            b2=rng.uniform(-lim2, lim2, size=d_embed),
            seed=seed,
        )

    def copy(self) -> "AggregatorParams":
        return AggregatorParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(), self.seed)


def aggregate_mean(span: np.ndarray) -> np.ndarray:
    span = np.asarray(span, dtype=np.float64)
    if span.ndim != 2 or span.shape[0] < 1:
        raise ValueError("span must be a non-empty (m, d) matrix")
    return span.mean(axis=0)


def aggregate_max(span: np.ndarray) -> np.ndarray:
    span = np.asarray(span, dtype=np.float64)
    if span.ndim != 2 or span.shape[0] < 1:
        raise ValueError("span must be a non-empty (m, d) matrix")
    return span.max(axis=0)


def _agg_forward(span: np.ndarray, p: AggregatorParams):
    feat = np.concatenate([aggregate_mean(span), aggregate_max(span)])
    h_pre = p.w1 @ feat + p.b1
    h = np.maximum(h_pre, 0.0)
    out = p.w2 @ h + p.b2
    return out, (feat, h_pre, h)


def aggregate_mean_max(span: np.ndarray, p: AggregatorParams) -> np.ndarray:
    """MLP(concat(mean(span), max(span))) -> segment embedding."""
    out, _ = _agg_forward(span, p)
    return out


def _agg_backward(cache, p: AggregatorParams, g_out: np.ndarray, grads: "AggregatorGrads") -> None:
    feat, h_pre, h = cache
    grads.w2 += np.outer(g_out, h)
    grads.b2 += g_out
    g_h = p.w2.T @ g_out
    g_pre = g_h * (h_pre > 0.0)
    grads.w1 += np.outer(g_pre, feat)
    grads.b1 += g_pre


@dataclass
class AggregatorGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def zeros_like(cls, p: AggregatorParams) -> "AggregatorGrads":
        return cls(
            w1=np.zeros_like(p.w1),
            b1=np.zeros_like(p.b1),
            w2=np.zeros_like(p.w2),
            b2=np.zeros_like(p.b2),
        )


# --- contrastive losses -----------------------------------------------------

def _softmax(z: np.ndarray, axis: int) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def loss_per_sample(e: SegmentEmbeddings, cfg: AlignmentConfig) -> float:
    """Symmetric InfoNCE where negatives come only from the same sample.

    Normalized by the number of valid (sample, segment) pairs, so padding
    never influences the loss scale.
    """
    total_pairs = e.total_pairs
    acc = 0.0
    for T, M in zip(e.text, e.motion):
        S = cosine_matrix(T, M) / cfg.temperature
        p_row = _softmax(S, axis=1)     # t2m: softmax over motion segments
        p_col = _softmax(S, axis=0)     # m2t: softmax over text segments
        diag = np.arange(T.shape[0])
        acc += -np.log(p_row[diag, diag]).sum() - np.log(p_col[diag, diag]).sum()
    return float(acc / (2 * total_pairs))


def loss_batch(e: SegmentEmbeddings, cfg: AlignmentConfig) -> float:
    """As loss_per_sample, but negatives range over every segment in the batch."""
    T = np.vstack(e.text)
    M = np.vstack(e.motion)
    S = cosine_matrix(T, M) / cfg.temperature
    p_row = _softmax(S, axis=1)
    p_col = _softmax(S, axis=0)
    diag = np.arange(T.shape[0])
    acc = -np.log(p_row[diag, diag]).sum() - np.log(p_col[diag, diag]).sum()
    return float(acc / (2 * T.shape[0]))


def loss_global(text_embs, motion_embs, cfg: AlignmentConfig) -> float:
    """Symmetric InfoNCE over whole-sequence embeddings (B x B)."""
    T = np.asarray(text_embs, dtype=np.float64)
    M = np.asarray(motion_embs, dtype=np.float64)
    if T.shape[0] != M.shape[0]:
        raise ValueError("text and motion lists differ in length")
    S = cosine_matrix(T, M) / cfg.temperature
    p_row = _softmax(S, axis=1)
    p_col = _softmax(S, axis=0)
    diag = np.arange(T.shape[0])
    acc = -np.log(p_row[diag, diag]).sum() - np.log(p_col[diag, diag]).sum()
    return float(acc / (2 * T.shape[0]))


def loss_token(tok: TokenEmbeddings, text: list[np.ndarray], cfg: AlignmentConfig) -> float:
    """Cross-entropy of each motion token against its assigned text segment,
    softmaxed over that sample's segments, averaged over all valid tokens."""
    total_tokens = sum(x.shape[0] for x in tok.tokens)
    if total_tokens == 0:
        raise ValueError("no tokens")
    acc = 0.0
    for X, assign, T in zip(tok.tokens, tok.assignments, text):
        T = np.asarray(T, dtype=np.float64)
        if np.any(assign < 0) or np.any(assign >= T.shape[0]):
            raise ValueError("token assignment indexes an invalid text segment")
        S = cosine_matrix(T, X) / cfg.temperature     # (A, L)
        p = _softmax(S, axis=0)                       # softmax over segments per token
        acc += -np.log(p[assign, np.arange(X.shape[0])]).sum()
    return float(acc / total_tokens)


def total_loss(mask_loss: float, align_loss: float, cfg: AlignmentConfig) -> float:
    return float(mask_loss + cfg.lambda_align * align_loss)


# --- analytic gradients -----------------------------------------------------

def _per_sample_sim_grad(T: np.ndarray, M: np.ndarray, cfg: AlignmentConfig, total_pairs: int):
    """Loss contribution of one sample and its gradient w.r.t. motion rows."""
    A = T.shape[0]
    Ut = _unit_rows(T)
    m_norms = np.linalg.norm(M, axis=1, keepdims=True)
    Um = np.where(m_norms < NORM_FLOOR, 0.0, M / np.maximum(m_norms, NORM_FLOOR))
    S = (Ut @ Um.T) / cfg.temperature
    p_row = _softmax(S, axis=1)
    p_col = _softmax(S, axis=0)
    diag = np.arange(A)
    contrib = (-np.log(p_row[diag, diag]).sum() - np.log(p_col[diag, diag]).sum()) / (2 * total_pairs)

    eye = np.eye(A)
    G = ((p_row - eye) + (p_col - eye)) / (2 * total_pairs * cfg.temperature)
    # d sim(j,k) / d Um[k] = Ut[j]  ->  dL/dUm = G^T Ut
    g_um = G.T @ Ut
    # through row normalization: dL/dm = (I - u u^T) g_u / ||m||
    g_m = np.zeros_like(M)
    for k in range(A):
        nk = float(m_norms[k, 0])
        if nk < NORM_FLOOR:
            continue
        u = Um[k]
        g_m[k] = (g_um[k] - (u @ g_um[k]) * u) / nk
    return float(contrib), g_m


def grad_loss_per_sample(e: SegmentEmbeddings, cfg: AlignmentConfig):
    """(loss, per-sample gradients w.r.t. motion segment embeddings)."""
    total_pairs = e.total_pairs
    grads = []
    loss = 0.0
    for T, M in zip(e.text, e.motion):
        contrib, g = _per_sample_sim_grad(T, M, cfg, total_pairs)
        loss += contrib
        grads.append(g)
    return loss, grads


def _block_sim_grad(T: np.ndarray, M: np.ndarray, cfg: AlignmentConfig):
    """Loss and motion-row gradient for one flat block of paired rows."""
    n = T.shape[0]
    Ut = _unit_rows(T)
    m_norms = np.linalg.norm(M, axis=1, keepdims=True)
    Um = np.where(m_norms < NORM_FLOOR, 0.0, M / np.maximum(m_norms, NORM_FLOOR))
    S = (Ut @ Um.T) / cfg.temperature
    p_row = _softmax(S, axis=1)
    p_col = _softmax(S, axis=0)
    diag = np.arange(n)
    loss = float((-np.log(p_row[diag, diag]).sum() - np.log(p_col[diag, diag]).sum()) / (2 * n))
    eye = np.eye(n)
    G = ((p_row - eye) + (p_col - eye)) / (2 * n * cfg.temperature)
    g_um = G.T @ Ut
    g_m = np.zeros_like(M)
    for k in range(n):
        nk = float(m_norms[k, 0])
        if nk < NORM_FLOOR:
            continue
        u = Um[k]
        g_m[k] = (g_um[k] - (u @ g_um[k]) * u) / nk
    return loss, g_m


def grad_loss_batch(e: SegmentEmbeddings, cfg: AlignmentConfig):
    """(loss_batch, per-sample gradients w.r.t. motion segment embeddings)."""
    T = np.vstack(e.text)
    M = np.vstack(e.motion)
    loss, g_flat = _block_sim_grad(T, M, cfg)
    grads = []
    offset = 0
    for m in e.motion:
        grads.append(g_flat[offset : offset + m.shape[0]])
        offset += m.shape[0]
    return loss, grads


def grad_alignment(
    text: list[np.ndarray],
    spans: list[list[np.ndarray]],
    params: AggregatorParams,
    cfg: AlignmentConfig,
    variant: str = "sample",
):
    """Loss and analytic gradients of the alignment loss composed with the
    mean-max aggregator.

    ``spans[i][j]`` is the token span feeding motion segment j of sample i.
    ``variant`` is "sample" (negatives within each sample) or "batch"
    (negatives across the batch; with one segment per sample this is the
    global whole-sequence loss).  Returns (loss, AggregatorGrads, per-sample
    motion-embedding gradients).
    """
    motion = []
    caches = []
    for sample_spans in spans:
        embs = []
        sample_caches = []
        for span in sample_spans:
            out, cache = _agg_forward(span, params)
            embs.append(out)
            sample_caches.append(cache)
        motion.append(np.stack(embs))
        caches.append(sample_caches)

    e = SegmentEmbeddings(text=text, motion=motion)
    if variant == "sample":
        loss, motion_grads = grad_loss_per_sample(e, cfg)
    elif variant == "batch":
        loss, motion_grads = grad_loss_batch(e, cfg)
    else:
        raise ValueError(f"unknown gradient variant {variant!r}")

    pgrads = AggregatorGrads.zeros_like(params)
    for sample_caches, g_m in zip(caches, motion_grads):
        for cache, g in zip(sample_caches, g_m):
            _agg_backward(cache, params, g, pgrads)
    return loss, pgrads, motion_grads


# --- toy training loop ------------------------------------------------------

@dataclass
class ToySample:
    """One training sample: text segment embeddings plus matched token spans."""

    text: np.ndarray                 # (A, d_embed)
    spans: list[np.ndarray] = field(default_factory=list)  # A spans of (m_j, d_token)

    def __post_init__(self):
        if self.text.shape[0] != len(self.spans):
            raise ValueError("one span per text segment required")


def motion_embeddings(sample: ToySample, params: AggregatorParams) -> np.ndarray:
    return np.stack([aggregate_mean_max(s, params) for s in sample.spans])


def make_separable_dataset(
    n_samples: int,
    d_token: int = 8,
    d_embed: int = 16,
    seg_choices=(2, 3),
    tokens_per_segment: int = 4,
    noise_std: float = 0.05,
    seed: int = 0,
    map_seed: int | None = None,
) -> list[ToySample]:
    """Motion token spans are noisy linear images of their paired text
    embeddings, so an aggregator that inverts the map solves the task.

    ``map_seed`` fixes the hidden linear map; give train and held-out splits
    the same map_seed (but different seeds) so they share one task.
    """
    rng = np.random.default_rng(seed)
    map_rng = np.random.default_rng(seed if map_seed is None else map_seed)
    w_true = map_rng.normal(size=(d_token, d_embed)) / np.sqrt(d_embed)
    samples = []
    for _ in range(n_samples):
        a = int(rng.choice(seg_choices))
        text = rng.normal(size=(a, d_embed))
        text /= np.linalg.norm(text, axis=1, keepdims=True)
        spans = []
        for j in range(a):
            base = w_true @ text[j]
            tokens = base[None, :] + rng.normal(0.0, noise_std, size=(tokens_per_segment, d_token))
            spans.append(tokens)
        samples.append(ToySample(text=text, spans=spans))
    return samples


def retrieval_top1(samples: list[ToySample], params: AggregatorParams) -> float:
    """Intra-sample segment retrieval accuracy: does each text segment's
    nearest motion segment (cosine) come from its own pair?"""
    hits = 0
    total = 0
    for sample in samples:
        M = motion_embeddings(sample, params)
        S = cosine_matrix(sample.text, M)
        hits += int((np.argmax(S, axis=1) == np.arange(S.shape[0])).sum())
        total += S.shape[0]
    return hits / total


def toy_train(
    dataset: list[ToySample],
    cfg: AlignmentConfig,
    steps: int = 500,
    lr: float = 0.5,
    seed: int = 0,
    params: AggregatorParams | None = None,
    variant: str = "sample",
) -> tuple[AggregatorParams, list[float]]:
    """Seeded minibatch SGD on the weighted alignment loss through the
    aggregator.

    The objective is ``lambda_align * loss``, so a zero weight leaves the
    parameters untouched.  Returns the trained parameters and the per-step
    loss curve.  Raises DivergenceError if the loss goes non-finite.
    """
    if not dataset:
        raise ValueError("empty dataset")
    d_token = dataset[0].spans[0].shape[1]
    d_embed = dataset[0].text.shape[1]
    if params is None:
        params = AggregatorParams.init(d_token, d_embed, seed=seed)
    else:
        params = params.copy()
    rng = np.random.default_rng(seed)
    curve = []
    order = np.arange(len(dataset))
    pos = len(dataset)
    for _ in range(steps):
        if pos + cfg.batch_size > len(order):
            rng.shuffle(order)
            pos = 0
        batch = [dataset[i] for i in order[pos : pos + cfg.batch_size]]
        pos += cfg.batch_size
        loss, pgrads, _ = grad_alignment(
            [s.text for s in batch], [s.spans for s in batch], params, cfg, variant=variant
        )
        lam = cfg.lambda_align
        loss *= lam
        if not np.isfinite(loss):
            raise DivergenceError(f"loss became non-finite at step {len(curve)}")
        params.w1 -= lr * lam * pgrads.w1
        params.b1 -= lr * lam * pgrads.b1
        params.w2 -= lr * lam * pgrads.w2
        params.b2 -= lr * lam * pgrads.b2
        curve.append(float(loss))
    return params, curve


# --- parameter serialization ------------------------------------------------

def params_to_json(p: AggregatorParams) -> dict:
    return {
        "w1": p.w1.tolist(),
        "b1": p.b1.tolist(),
        "w2": p.w2.tolist(),
        "b2": p.b2.tolist(),
        "seed": p.seed,
        "shapes": {"w1": list(p.w1.shape), "w2": list(p.w2.shape)},
    }


def params_from_json(obj: dict) -> AggregatorParams:
    return AggregatorParams(
        w1=np.asarray(obj["w1"], dtype=np.float64),
        b1=np.asarray(obj["b1"], dtype=np.float64),
        w2=np.asarray(obj["w2"], dtype=np.float64),
        b2=np.asarray(obj["b2"], dtype=np.float64),
        seed=int(obj.get("seed", 0)),
    )
