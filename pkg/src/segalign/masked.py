"""Masked-token generation protocol.

Training-time random masking, the masked-position negative-log-likelihood
loss, the cosine unmasking schedule, confidence-based iterative decoding with
a pluggable predictor, and the layer-by-layer residual decoding protocol.
Decoding is deterministic under argmax with a fixed tie rule (lowest index
wins), so traces are bit-stable.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .rvq import TokenSequence

MASK = -1

PROB_FLOOR = 1e-12
PROB_SUM_TOL = 1e-9


class PredictorContractError(ValueError):
    """A predictor returned something other than valid probability rows."""


class ProtocolError(RuntimeError):
    """Layer-by-layer decoding was queried out of order."""


@dataclass
class MaskState:
    """Token vector with MASK sentinels; masked_set mirrors the sentinels."""

    tokens: np.ndarray
    masked_set: frozenset
    seed: int = 0

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        sentinel_positions = frozenset(int(i) for i in np.flatnonzero(self.tokens == MASK))
        if frozenset(self.masked_set) != sentinel_positions:
            raise ValueError("masked_set must equal the sentinel positions")
        self.masked_set = sentinel_positions

    @property
    def length(self) -> int:
        return self.tokens.shape[0]


class TokenPredictor(Protocol):
    """Behavioral contract: probability rows over the base codebook.

    ``predict(cond, state)`` returns an (L, K) matrix whose masked-position
    rows are probability vectors summing to 1 within 1e-9.
    """

    def predict(self, cond, state: MaskState) -> np.ndarray: ...


def mask_random(tokens: np.ndarray, ratio: float, seed: int) -> MaskState:
    """Mask ceil(ratio * L) uniformly chosen positions, seeded."""
    tokens = np.asarray(tokens, dtype=np.int64)
    length = tokens.shape[0]
    if length < 1:
        raise ValueError("empty token sequence")
    if not (0.0 < ratio <= 1.0):
        raise ValueError("ratio must lie in (0, 1]")
    count = math.ceil(ratio * length)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(length, size=count, replace=False)
    masked = tokens.copy()
    masked[chosen] = MASK
    return MaskState(tokens=masked, masked_set=frozenset(int(i) for i in chosen), seed=seed)


def mask_loss(pred: np.ndarray, truth: np.ndarray, state: MaskState) -> float:
    """Negative log-likelihood of the true tokens, summed over masked positions.

    Zero probabilities are floored at 1e-12 with a warning.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    total = 0.0
    floored = False
    for i in sorted(state.masked_set):
        p = float(pred[i, truth[i]])
        if p < PROB_FLOOR:
            p = PROB_FLOOR
            floored = True
        total += -math.log(p)
    if floored:
        warnings.warn("mask_loss: target probability floored at 1e-12", RuntimeWarning)
    return total


def cosine_mask_count(t: int, total_iters: int, length: int) -> int:
    """Masked-token count after iteration t of T under the cosine schedule.

    m_0 = L and m_T = 0; in between, floor(L * cos(pi t / 2T)) clamped to
    strictly decrease by at least one per iteration (never below zero).
    """
    if total_iters < 1:
        raise ValueError("schedule needs at least one iteration")
    if not (0 <= t <= total_iters):
        raise ValueError("iteration index out of range")
    if t == 0:
        return length
    if t == total_iters:
        return 0
    prev = cosine_mask_count(t - 1, total_iters, length)
    raw = math.floor(length * math.cos(math.pi * t / (2 * total_iters)))
    return max(0, min(raw, prev - 1))


def mask_count_schedule(total_iters: int, length: int) -> list[int]:
    """The full [m_0, ..., m_T] sequence."""
    out = [length]
    for t in range(1, total_iters + 1):
        if t == total_iters:
            out.append(0)
        else:
            raw = math.floor(length * math.cos(math.pi * t / (2 * total_iters)))
            out.append(max(0, min(raw, out[-1] - 1)))
    return out


@dataclass(frozen=True)
class Schedule:
    total_iters: int

    def __post_init__(self):
        if self.total_iters < 1:
            raise ValueError("total_iters must be >= 1")


def _check_rows(probs: np.ndarray, positions) -> None:
    for i in positions:
        row = probs[i]
        if np.any(row < 0) or abs(float(row.sum()) - 1.0) > PROB_SUM_TOL:
            raise PredictorContractError(
                f"position {i}: probabilities must be nonnegative and sum to 1"
            )


def iterative_decode(
    cond,
    length: int,
    predictor: TokenPredictor,
    schedule: Schedule,
    seed: int = 0,
    mode: str = "argmax",
    trace: list | None = None,
) -> np.ndarray:
    """Confidence-based iterative unmasking from a fully masked sequence.

    At every iteration all masked positions are predicted; the highest
    confidence predictions are committed so that exactly m_t positions remain
    masked.  Committed tokens are never re-masked.  ``mode`` "argmax" is the
    deterministic default; "sample" draws tokens with the given seed.
    Confidence ties break toward the lowest index.  ``trace``, when given,
    receives one dict per iteration.
    """
    if mode not in ("argmax", "sample"):
        raise ValueError(f"unknown decode mode {mode!r}")
    counts = mask_count_schedule(schedule.total_iters, length)
    tokens = np.full(length, MASK, dtype=np.int64)
    rng = np.random.default_rng(seed)
    for t in range(1, schedule.total_iters + 1):
        masked = np.flatnonzero(tokens == MASK)
        if masked.size == 0:
            if trace is not None:
                trace.append({"iteration": t, "masked_count": 0, "fixed_indices": []})
            continue
        state = MaskState(tokens=tokens.copy(), masked_set=frozenset(int(i) for i in masked), seed=seed)
        probs = np.asarray(predictor.predict(cond, state), dtype=np.float64)
        if probs.shape[0] != length:
            raise PredictorContractError("predictor returned wrong number of rows")
        _check_rows(probs, masked)
        if mode == "argmax":
            chosen = np.argmax(probs[masked], axis=1)
        else:
            chosen = np.array(
                [rng.choice(probs.shape[1], p=probs[i] / probs[i].sum()) for i in masked]
            )
        conf = probs[masked, chosen]
        n_commit = masked.size - counts[t]
        # confidence descending, index ascending on ties
        order = np.lexsort((masked, -conf))
        commit = order[:n_commit]
        fixed = []
        for k in commit:
            pos = int(masked[k])
            tokens[pos] = int(chosen[k])
            fixed.append(pos)
        if trace is not None:
            trace.append(
                {"iteration": t, "masked_count": int(counts[t]), "fixed_indices": sorted(fixed)}
            )
    if np.any(tokens == MASK):
        raise RuntimeError("decode finished with masked positions left")
    return tokens


def trace_to_jsonl(trace: list) -> str:
    return "\n".join(json.dumps(entry, sort_keys=True) for entry in trace) + "\n"


def residual_decode(cond, base_tokens: np.ndarray, layer_predictors, num_residual_layers: int) -> TokenSequence:
    """Produce residual layers one at a time on top of the base tokens.

    ``layer_predictors[i-1]`` handles layer i and is called with
    (cond, layers_so_far) where layers_so_far is the (i, L) matrix of all
    preceding layers; it returns (L, K_i) probability rows.  Layers are
    always queried in order 1..k.
    """
    base = np.asarray(base_tokens, dtype=np.int64)
    if num_residual_layers < 0:
        raise ValueError("layer count must be nonnegative")
    if len(layer_predictors) < num_residual_layers:
        raise ValueError(
            f"need {num_residual_layers} layer predictors, got {len(layer_predictors)}"
        )
    layers = [base]
    for i in range(1, num_residual_layers + 1):
        so_far = np.stack(layers)
        probs = np.asarray(layer_predictors[i - 1](cond, so_far), dtype=np.float64)
        if probs.shape[0] != base.shape[0]:
            raise PredictorContractError(f"layer {i}: wrong number of rows")
        _check_rows(probs, range(probs.shape[0]))
        layers.append(np.argmax(probs, axis=1).astype(np.int64))
    return TokenSequence(layers=np.stack(layers))


class OrderedLayerPredictors:
    """Wraps per-layer callables and enforces the 1..k query order."""

    def __init__(self, fns):
        self._fns = list(fns)
        self._next = 1

    def __len__(self):
        return len(self._fns)

    def __getitem__(self, idx):
        layer = idx + 1
        if layer != self._next:
            raise ProtocolError(f"layer {layer} queried before layer {self._next}")
        self._next += 1
        return self._fns[idx]


class OraclePredictor:
    """Always assigns probability 1 to a known target sequence."""

    def __init__(self, target: np.ndarray, num_codes: int):
        self.target = np.asarray(target, dtype=np.int64)
        self.num_codes = num_codes

    def predict(self, cond, state: MaskState) -> np.ndarray:
        probs = np.zeros((self.target.shape[0], self.num_codes))
        probs[np.arange(self.target.shape[0]), self.target] = 1.0
        return probs


class SoftmaxRegressionPredictor:
    """Tiny trainable predictor: shared softmax regression on condition features.

    Every position gets the same distribution, a bag-of-condition model; it
    exists so the end-to-end demo has something learnable, not for quality.
    """

    def __init__(self, feat_dim: int, num_codes: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.w = rng.normal(0.0, 0.01, size=(num_codes, feat_dim))
        self.b = np.zeros(num_codes)
        self.num_codes = num_codes

    def _dist(self, cond) -> np.ndarray:
        logits = self.w @ np.asarray(cond, dtype=np.float64) + self.b
        logits -= logits.max()
        e = np.exp(logits)
        return e / e.sum()

    def predict(self, cond, state: MaskState) -> np.ndarray:
        return np.tile(self._dist(cond), (state.length, 1))

    def fit(self, conds, token_seqs, steps: int = 200, lr: float = 0.5) -> list[float]:
        """SGD on the token unigram cross-entropy given the condition."""
        curve = []
        for _ in range(steps):
            gw = np.zeros_like(self.w)
            gb = np.zeros_like(self.b)
            loss = 0.0
            count = 0
            for cond, seq in zip(conds, token_seqs):
                cond = np.asarray(cond, dtype=np.float64)
                dist = self._dist(cond)
                for tok in np.asarray(seq, dtype=np.int64):
                    loss += -math.log(max(dist[tok], PROB_FLOOR))
                    g = dist.copy()
                    g[tok] -= 1.0
                    gw += np.outer(g, cond)
                    gb += g
                    count += 1
            self.w -= lr * gw / count
            self.b -= lr * gb / count
            curve.append(loss / count)
        return curve
