"""Embedding parameters, Bernoulli likelihood terms and exact gradients.

A word ``v`` at position ``i`` is predicted from the sum of the static
context vectors of its windowed neighbours through a logistic link:
``p = sigmoid(center[t, v] . sum_j context[c_j])``.  The training objective
adds, to the positive and negative log-likelihood terms, a Gaussian log-prior
whose shape depends on the chosen variant:

* ``dbe``    - random-walk coupling between consecutive slices,
* ``dbe-i``  - no coupling at all (incremental),
* ``dbe-nc`` - every slice anchored to slice 0,
* ``dbe-sc`` - anchored to slice 0 with a weight growing linearly in t.

All three loss terms are maximised; every gradient in this module is the
ascent direction of the total objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import ContextBatch, Vocabulary
from .errors import DataFormatError
from .validation import check_finite, check_in, check_positive, rng_from

VARIANTS = ("dbe", "dbe-i", "dbe-nc", "dbe-sc")

_P_MIN = np.finfo(np.float64).tiny
_P_MAX = float(np.nextafter(1.0, 0.0))


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def log_sigmoid(x):
    """log(sigmoid(x)) computed without materialising the probability."""
    return -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))


@dataclass
class EmbeddingState:
    """Dynamic per-slice center vectors plus static context vectors.

    ``center`` has shape (T, V, D) and ``context`` shape (V, D).
    """

    center: np.ndarray
    context: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.context = np.asarray(self.context, dtype=np.float64)
        if self.center.ndim != 3 or self.context.ndim != 2:
            raise ValueError("center must be (T, V, D) and context (V, D)")
        if self.center.shape[1:] != self.context.shape:
            raise ValueError(
                f"center {self.center.shape} and context {self.context.shape} disagree on (V, D)"
            )

    @property
    def n_slices(self) -> int:
        return self.center.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.center.shape[1]

    @property
    def dim(self) -> int:
        return self.center.shape[2]

    def copy(self) -> "EmbeddingState":
        return EmbeddingState(self.center.copy(), self.context.copy())


@dataclass
class PriorConfig:
    """Variant selector and the two precisions of the Gaussian prior.

    ``drift_precision`` penalises slice-to-slice (or slice-to-origin)
    movement; ``init_precision`` penalises the norm of slice-0 center rows
    and of all context rows.
    """

    variant: str = "dbe"
    drift_precision: float = 1.0
    init_precision: float = 0.001

    def __post_init__(self):
        check_in("variant", self.variant, VARIANTS)
        check_positive("init_precision", self.init_precision)
        if self.variant != "dbe-i":
            check_positive("drift_precision", self.drift_precision)


@dataclass
class LossBreakdown:
    l_pos: float
    l_neg: float
    l_prior: float

    @property
    def total(self) -> float:
        return self.l_pos + self.l_neg + self.l_prior


@dataclass
class NegativeSampler:
    """Draws negative center ids from a fixed distribution.

    Draws are a pure function of ``(seed, draw_seed, center_ids)`` so that a
    loss and its gradient (or a replay oracle) can see identical negatives.
    Any draw colliding with its positive's true center is redrawn.
    """

    weights: np.ndarray
    k: int
    seed: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1 or np.any(self.weights < 0):
            raise ValueError("weights must be a 1-d non-negative array")
        total = self.weights.sum()
        if not total > 0:
            raise ValueError("weights must not all be zero")
        self.weights = self.weights / total
        if self.k < 0:
            raise ValueError(f"k must be >= 0, got {self.k}")

    @classmethod
    def from_vocabulary(
        cls, vocab: Vocabulary, k: int, power: float = 0.75, seed: int = 0
    ) -> "NegativeSampler":
        """Unigram distribution raised to ``power`` and renormalised."""
        return cls(weights=vocab.freq ** power, k=k, seed=seed)

    def draw(self, center_ids: np.ndarray, draw_seed: int = 0) -> np.ndarray:
        """Return an (n, k) array of negative ids, none equal to its center."""
        n = len(center_ids)
        if self.k == 0:
            return np.empty((n, 0), dtype=np.int64)
        rng = rng_from([self.seed, draw_seed])
        ids = rng.choice(len(self.weights), size=(n, self.k), p=self.weights)
        collisions = ids == np.asarray(center_ids)[:, None]
        attempts = 0
        while collisions.any():
            ids[collisions] = rng.choice(len(self.weights), size=int(collisions.sum()), p=self.weights)
            collisions = ids == np.asarray(center_ids)[:, None]
            attempts += 1
            if attempts > 1000:
                raise RuntimeError("negative sampler cannot avoid the true center")
        return ids.astype(np.int64)


def bernoulli_param(
    state: EmbeddingState,
    t: int,
    center: int,
    context_ids: Sequence[int],
    mask: Sequence[bool] | None = None,
) -> float:
    """Probability of observing ``center`` at slice ``t`` given its context.

    Raises if every context position is masked; the caller must drop such
    examples.  The result is clamped into the open unit interval.
    """
    ctx = np.asarray(context_ids, dtype=np.int64)
    keep = np.ones(len(ctx), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not keep.any():
        raise ValueError("all context positions are masked")
    ctx_sum = state.context[ctx[keep]].sum(axis=0)
    x = float(state.center[t, center] @ ctx_sum)
    return float(np.clip(sigmoid(x), _P_MIN, _P_MAX))


def _context_sums(state: EmbeddingState, batch: ContextBatch) -> np.ndarray:
    """(n, D) sums of unmasked context vectors."""
    vecs = state.context[batch.context_ids]
    return np.einsum("ncd,nc->nd", vecs, batch.mask.astype(np.float64))


def loss_pos(state: EmbeddingState, batch: ContextBatch) -> float:
    """Sum over the batch of log p(center | context)."""
    s = _context_sums(state, batch)
    x = np.einsum("nd,nd->n", state.center[batch.slice_index, batch.center_ids], s)
    return float(log_sigmoid(x).sum())


def loss_neg(
    state: EmbeddingState,
    batch: ContextBatch,
    sampler: NegativeSampler,
    draw_seed: int = 0,
    negatives: np.ndarray | None = None,
) -> float:
    """Sum over the batch and its k negatives of log(1 - p(neg | context)).

    Negatives reuse the positive example's context.  Pass ``negatives`` to
    replay explicit draws; otherwise they are drawn deterministically from
    ``(sampler.seed, draw_seed)``.
    """
    if negatives is None:
        negatives = sampler.draw(batch.center_ids, draw_seed)
    if negatives.shape[1] == 0:
        return 0.0
    s = _context_sums(state, batch)
    x = np.einsum("nkd,nd->nk", state.center[batch.slice_index, negatives], s)
    return float(log_sigmoid(-x).sum())


def _anchor_weights(config: PriorConfig, n_slices: int) -> np.ndarray:
    """Per-slice weights of the anchored variants, for t = 1..T-1."""
    if config.variant == "dbe-nc":
        return np.ones(n_slices - 1, dtype=np.float64)
    return np.arange(1, n_slices, dtype=np.float64)


def loss_prior(
    state: EmbeddingState,
    config: PriorConfig,
    anchor_weights: np.ndarray | None = None,
) -> float:
    """Gaussian log-prior (up to constants) of the full parameter set.

    Always non-positive.  ``anchor_weights`` overrides the per-slice weights
    of the anchored variants (dbe-nc uses all ones, dbe-sc uses t).
    """
    lam0 = config.init_precision
    value = -0.5 * lam0 * float((state.context ** 2).sum())
    value += -0.5 * lam0 * float((state.center[0] ** 2).sum())
    if config.variant == "dbe-i" or state.n_slices < 2:
        return value
    lam = config.drift_precision
    if config.variant == "dbe":
        diffs = state.center[1:] - state.center[:-1]
        per_t = (diffs ** 2).sum(axis=(1, 2))
        return value - 0.5 * lam * float(per_t.sum())
    diffs = state.center[1:] - state.center[0]
    per_t = (diffs ** 2).sum(axis=(1, 2))
    w = _anchor_weights(config, state.n_slices) if anchor_weights is None else np.asarray(anchor_weights, dtype=np.float64)
    if len(w) != state.n_slices - 1:
        raise ValueError(f"anchor_weights must have length T-1 = {state.n_slices - 1}")
    return value - 0.5 * lam * float((w * per_t).sum())


def loss_breakdown(
    state: EmbeddingState,
    batch: ContextBatch,
    sampler: NegativeSampler,
    config: PriorConfig,
    draw_seed: int = 0,
) -> LossBreakdown:
    """Batch likelihood terms plus the exact full-parameter prior."""
    return LossBreakdown(
        l_pos=loss_pos(state, batch),
        l_neg=loss_neg(state, batch, sampler, draw_seed),
        l_prior=loss_prior(state, config),
    )


@dataclass
class SparseGradient:
    """Ascent direction of the total objective for the rows a batch touches.

    ``center`` maps (slice, word id) to a D-vector, ``context`` maps word id
    to a D-vector.  Each stored vector is the exact derivative of
    ``loss_pos + loss_neg + loss_prior`` with respect to that row; rows not
    listed are absent, not zero.
    """

    center: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    context: dict[int, np.ndarray] = field(default_factory=dict)


def _likelihood_grads(
    state: EmbeddingState,
    batch: ContextBatch,
    negatives: np.ndarray,
):
    """Batch likelihood value and row-aggregated gradients.

    Returns (l_pos, l_neg, center_ids, center_grads, context_ids,
    context_grads) where the id arrays are unique and the grad arrays are the
    per-row sums of the positive and negative terms.
    """
    t = batch.slice_index
    mask = batch.mask.astype(np.float64)
    ctx_vecs = state.context[batch.context_ids]
    s = np.einsum("ncd,nc->nd", ctx_vecs, mask)

    cen = state.center[t, batch.center_ids]
    x_pos = np.einsum("nd,nd->n", cen, s)
    l_pos = float(log_sigmoid(x_pos).sum())
    pos_coeff = sigmoid(-x_pos)  # 1 - p

    k = negatives.shape[1]
    if k:
        neg_vecs = state.center[t, negatives]
        x_neg = np.einsum("nkd,nd->nk", neg_vecs, s)
        l_neg = float(log_sigmoid(-x_neg).sum())
        q = sigmoid(x_neg)
        alpha_coeff = pos_coeff[:, None] * cen - np.einsum("nk,nkd->nd", q, neg_vecs)
        all_center_ids = np.concatenate([batch.center_ids, negatives.reshape(-1)])
        all_center_grads = np.concatenate(
            [pos_coeff[:, None] * s, (-q[:, :, None] * s[:, None, :]).reshape(-1, state.dim)]
        )
    else:
        l_neg = 0.0
        alpha_coeff = pos_coeff[:, None] * cen
        all_center_ids = np.asarray(batch.center_ids)
        all_center_grads = pos_coeff[:, None] * s

    center_ids, inverse = np.unique(all_center_ids, return_inverse=True)
    center_grads = np.zeros((len(center_ids), state.dim))
    np.add.at(center_grads, inverse, all_center_grads)

    rows, cols = np.nonzero(batch.mask)
    flat_ctx = batch.context_ids[rows, cols]
    context_ids, inverse = np.unique(flat_ctx, return_inverse=True)
    context_grads = np.zeros((len(context_ids), state.dim))
    np.add.at(context_grads, inverse, alpha_coeff[rows])

    return l_pos, l_neg, center_ids, center_grads, context_ids, context_grads


def _prior_center_row_grad(
    state: EmbeddingState,
    config: PriorConfig,
    t: int,
    word_ids: np.ndarray,
    anchor_weights: np.ndarray | None = None,
) -> np.ndarray:
    """Exact derivative of the full prior w.r.t. center rows (t, word_ids)."""
    grads = np.zeros((len(word_ids), state.dim))
    if t == 0:
        grads -= config.init_precision * state.center[0, word_ids]
    if config.variant == "dbe-i" or state.n_slices < 2:
        return grads
    lam = config.drift_precision
    if config.variant == "dbe":
        if t >= 1:
            grads -= lam * (state.center[t, word_ids] - state.center[t - 1, word_ids])
        if t + 1 < state.n_slices:
            grads += lam * (state.center[t + 1, word_ids] - state.center[t, word_ids])
        return grads
    w = _anchor_weights(config, state.n_slices) if anchor_weights is None else np.asarray(anchor_weights, dtype=np.float64)
    if t >= 1:
        grads -= lam * w[t - 1] * (state.center[t, word_ids] - state.center[0, word_ids])
    else:
        diffs = state.center[1:, word_ids] - state.center[0, word_ids]
        grads += lam * np.einsum("t,tvd->vd", w, diffs)
    return grads


def _coupled_slices(config: PriorConfig, t: int, n_slices: int) -> list[int]:
    """Slices whose rows the prior couples to a batch at slice ``t``."""
    if config.variant == "dbe-i" or n_slices < 2:
        return []
    if config.variant == "dbe":
        return [s for s in (t - 1, t + 1) if 0 <= s < n_slices]
    return [0] if t != 0 else []


def gradients(
    state: EmbeddingState,
    batch: ContextBatch,
    sampler: NegativeSampler,
    config: PriorConfig,
    draw_seed: int = 0,
    anchor_weights: np.ndarray | None = None,
) -> SparseGradient:
    """Exact sparse gradient of ``loss_pos + loss_neg + loss_prior``.

    Rows present: center rows of the batch's positives and negatives at the
    batch slice, the prior-coupled rows of those words (neighbouring slices
    for dbe, slice 0 for the anchored variants), and the context rows of all
    unmasked context positions.
    """
    negatives = sampler.draw(batch.center_ids, draw_seed)
    l_pos, l_neg, center_ids, center_grads, context_ids, context_grads = _likelihood_grads(
        state, batch, negatives
    )
    del l_pos, l_neg
    t = batch.slice_index

    grad = SparseGradient()
    own = center_grads + _prior_center_row_grad(state, config, t, center_ids, anchor_weights)
    for word, vec in zip(center_ids, own):
        grad.center[(t, int(word))] = vec
    for s in _coupled_slices(config, t, state.n_slices):
        coupled = _prior_center_row_grad(state, config, s, center_ids, anchor_weights)
        for word, vec in zip(center_ids, coupled):
            grad.center[(s, int(word))] = vec

    ctx_prior = -config.init_precision * state.context[context_ids]
    for word, vec in zip(context_ids, context_grads + ctx_prior):
        grad.context[int(word)] = vec
    return grad


def save_embeddings(
    state: EmbeddingState,
    words: Sequence[str],
    center_path: str | Path,
    context_path: str | Path,
) -> None:
    """Write the embeddings as text.

    Both files start with a "V D T" line.  The center file then holds one
    "word<TAB>t<TAB>floats" row per (word, slice); the context file omits the
    slice column.  Floats use shortest round-trip formatting, so reload is
    exact and repeated saves are byte-identical.
    """
    if len(words) != state.vocab_size:
        raise ValueError("word list does not match the state's vocabulary size")
    header = f"{state.vocab_size} {state.dim} {state.n_slices}\n"
    with Path(center_path).open("w", encoding="utf-8") as out:
        out.write(header)
        for v, word in enumerate(words):
            for t in range(state.n_slices):
                row = " ".join(repr(float(x)) for x in state.center[t, v])
                out.write(f"{word}\t{t}\t{row}\n")
    with Path(context_path).open("w", encoding="utf-8") as out:
        out.write(header)
        for v, word in enumerate(words):
            row = " ".join(repr(float(x)) for x in state.context[v])
            out.write(f"{word}\t{row}\n")


def load_embeddings(
    center_path: str | Path, context_path: str | Path
) -> tuple[EmbeddingState, list[str]]:
    """Read embeddings written by :func:`save_embeddings`."""

    def parse_header(line: str, path) -> tuple[int, int, int]:
        try:
            v, d, t = (int(x) for x in line.split())
            return v, d, t
        except ValueError as exc:
            raise DataFormatError(f"{path}: expected 'V D T' header, got {line!r}") from exc

    center_lines = Path(center_path).read_text(encoding="utf-8").splitlines()
    context_lines = Path(context_path).read_text(encoding="utf-8").splitlines()
    if not center_lines or not context_lines:
        raise DataFormatError("empty embedding file")
    v_size, dim, n_slices = parse_header(center_lines[0], center_path)
    if parse_header(context_lines[0], context_path) != (v_size, dim, n_slices):
        raise DataFormatError("center and context embedding headers disagree")
    if len(center_lines) != 1 + v_size * n_slices or len(context_lines) != 1 + v_size:
        raise DataFormatError("embedding file row count does not match its header")

    center = np.empty((n_slices, v_size, dim))
    context = np.empty((v_size, dim))
    words: list[str] = []
    line_no = 1
    for v in range(v_size):
        for t in range(n_slices):
            word, t_str, vec = center_lines[line_no].split("\t")
            if int(t_str) != t:
                raise DataFormatError(f"{center_path}: slice column out of order at row {line_no}")
            if t == 0:
                words.append(word)
            elif word != words[v]:
                raise DataFormatError(f"{center_path}: word column out of order at row {line_no}")
            center[t, v] = np.array(vec.split(" "), dtype=np.float64)
            line_no += 1
    for v in range(v_size):
        word, vec = context_lines[1 + v].split("\t")
        if word != words[v]:
            raise DataFormatError(f"{context_path}: word order differs from center file")
        context[v] = np.array(vec.split(" "), dtype=np.float64)
    state = EmbeddingState(center, context)
    check_finite("embeddings", state.center)
    check_finite("embeddings", state.context)
    return state, words
