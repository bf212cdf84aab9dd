"""Held-out scaled positive log-probability per slice, and model comparison.

Evaluation is exhaustive rather than sampled: every positive position of the
chosen split is scored, so curves are deterministic.  Context windows may
use tokens from other splits; split tags only decide which positions count
as evaluated events.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .corpus import TimeSlicedCorpus
from .model import EmbeddingState, log_sigmoid
from .validation import check_positive

_CHUNK = 8192


def scale_factor(n_eval_tokens: int, n_batch_tokens: int) -> float:
    """Ratio of evaluated tokens to tokens per minibatch."""
    check_positive("n_eval_tokens", n_eval_tokens)
    check_positive("n_batch_tokens", n_batch_tokens)
    return n_eval_tokens / n_batch_tokens


def split_log_prob(
    state: EmbeddingState,
    corpus: TimeSlicedCorpus,
    t: int,
    split: str,
    window: int = 4,
) -> tuple[float, int]:
    """Unscaled sum of log p over the split's positions in slice ``t``.

    Returns (value, n_positions).  Positions whose document is a single
    token have no context and are skipped.  A single-slice state is applied
    to every slice.
    """
    flat = corpus.flat(t)
    positions = corpus.split_positions(t, split)
    positions = positions[flat.doc_end[positions] - flat.doc_start[positions] > 1]
    if positions.size == 0:
        return 0.0, 0
    t_state = 0 if state.n_slices == 1 else t
    offsets = np.concatenate([np.arange(-window, 0), np.arange(1, window + 1)])
    n_ids = len(flat.ids)
    total = 0.0
    for lo in range(0, positions.size, _CHUNK):
        pos = positions[lo:lo + _CHUNK]
        ctx_pos = pos[:, None] + offsets[None, :]
        mask = (ctx_pos >= flat.doc_start[pos, None]) & (ctx_pos < flat.doc_end[pos, None])
        ctx_ids = flat.ids[np.clip(ctx_pos, 0, n_ids - 1)]
        vecs = state.context[ctx_ids]
        sums = np.einsum("ncd,nc->nd", vecs, mask.astype(np.float64))
        x = np.einsum("nd,nd->n", state.center[t_state, flat.ids[pos]], sums)
        total += float(log_sigmoid(x).sum())
    return total, int(positions.size)


@dataclass
class EvalCurve:
    """Per-slice scaled log-probabilities; NaN marks slices with no data."""

    per_slice: np.ndarray
    mean: float
    split: str
    scale: float
    corpus_tag: str = ""

    def __post_init__(self):
        self.per_slice = np.asarray(self.per_slice, dtype=np.float64)


def evaluate(
    state: EmbeddingState,
    corpus: TimeSlicedCorpus,
    split: str = "valid",
    window: int = 4,
    batch_size: int = 512,
    threads: int = 1,
    corpus_tag: str = "",
) -> EvalCurve:
    """Score every slice of the corpus on the chosen split.

    The per-slice sums are multiplied by ``scale_factor(total split
    positions, batch_size)``.  The state must have one slice (applied
    everywhere) or exactly as many as the corpus.  Slices with an empty
    split are recorded as NaN and excluded from the mean.
    """
    n = corpus.n_slices
    if state.n_slices not in (1, n):
        raise ValueError(
            f"state has {state.n_slices} slices, corpus has {n}; need equal or a static state"
        )

    def one(t: int) -> tuple[float, int]:
        return split_log_prob(state, corpus, t, split, window)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n)))
    else:
        results = [one(t) for t in range(n)]

    counts = np.array([c for _, c in results], dtype=np.int64)
    sums = np.array([v for v, _ in results], dtype=np.float64)
    n_eval = int(counts.sum())
    if n_eval == 0:
        raise ValueError(f"split {split!r} holds no positions anywhere in the corpus")
    scale = scale_factor(n_eval, batch_size)
    per_slice = np.where(counts > 0, scale * sums, np.nan)
    return EvalCurve(
        per_slice=per_slice,
        mean=float(np.nanmean(per_slice)),
        split=split,
        scale=scale,
        corpus_tag=corpus_tag,
    )


def compare(curves: dict[str, EvalCurve]) -> list[tuple[str, float]]:
    """Rank named curves by mean, best first.

    All curves must share the split, slice count and corpus tag.
    """
    if not curves:
        raise ValueError("no curves to compare")
    items = list(curves.items())
    _, first = items[0]
    for name, curve in items[1:]:
        if curve.split != first.split:
            raise ValueError(f"curve {name!r} uses split {curve.split!r}, not {first.split!r}")
        if len(curve.per_slice) != len(first.per_slice) or curve.corpus_tag != first.corpus_tag:
            raise ValueError(f"curve {name!r} was computed on a different corpus")
    return sorted(((name, c.mean) for name, c in items), key=lambda nm: -nm[1])


def format_comparison(ranking: list[tuple[str, float]]) -> str:
    """Aligned plain-text table; the best mean is bolded."""
    width = max(len(name) for name, _ in ranking) + 4
    lines = []
    for rank, (name, mean) in enumerate(ranking, 1):
        shown = f"**{name}**" if rank == 1 else name
        lines.append(f"{rank:>2}  {shown:<{width}} {mean:.6f}")
    return "\n".join(lines) + "\n"
