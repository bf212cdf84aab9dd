"""Per-word drift trajectories: rankings, normalized summaries, histograms,
nearest neighbours.

Drift of word ``v`` at slice ``t`` is the Euclidean distance between its
center vector at ``t`` and at the base slice ``t0``, computed on the raw
(unnormalized) vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Vocabulary
from .model import EmbeddingState


@dataclass
class DriftReport:
    """(V, T) drift distances from the base slice.

    ``total_drift`` is the distance at the last slice, ``mean_drift`` the
    mean over all non-base slices, and ``normalized_mean`` their ratio
    (NaN where the total is zero).
    """

    distances: np.ndarray
    t0: int

    def __post_init__(self):
        self.distances = np.asarray(self.distances, dtype=np.float64)

    @property
    def vocab_size(self) -> int:
        return self.distances.shape[0]

    @property
    def n_slices(self) -> int:
        return self.distances.shape[1]

    @property
    def total_drift(self) -> np.ndarray:
        return self.distances[:, -1]

    @property
    def mean_drift(self) -> np.ndarray:
        keep = [t for t in range(self.n_slices) if t != self.t0]
        return self.distances[:, keep].mean(axis=1)

    @property
    def normalized_mean(self) -> np.ndarray:
        total = self.total_drift
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(total > 0, self.mean_drift / total, np.nan)


def drift_report(state: EmbeddingState, t0: int = 0, metric: str = "euclidean") -> DriftReport:
    """Distance of every word's center vector from its t0 vector.

    The default is plain Euclidean distance on the raw (unnormalized)
    vectors; ``metric="cosine"`` uses 1 - cosine instead.
    """
    if not 0 <= t0 < state.n_slices:
        raise ValueError(f"t0={t0} out of range (T={state.n_slices})")
    if metric == "euclidean":
        diffs = state.center - state.center[t0]
        distances = np.sqrt((diffs ** 2).sum(axis=2)).T  # (V, T)
    elif metric == "cosine":
        norms = np.linalg.norm(state.center, axis=2)
        dots = (state.center * state.center[t0]).sum(axis=2)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = dots / (norms * norms[t0])
        distances = np.nan_to_num(1.0 - cos, nan=0.0).T
    else:
        raise ValueError(f"metric must be 'euclidean' or 'cosine', got {metric!r}")
    return DriftReport(distances=distances, t0=t0)


def top_drifting(
    report: DriftReport, k: int, words: Sequence[str] | None = None
) -> list[tuple[int | str, float]]:
    """The k words with the largest total drift; ties go to the lower id."""
    if k > report.vocab_size:
        raise ValueError(f"k={k} exceeds the vocabulary size {report.vocab_size}")
    total = report.total_drift
    order = np.lexsort((np.arange(len(total)), -total))[:k]
    return [(words[i] if words is not None else int(i), float(total[i])) for i in order]


def normalized_drift_summary(
    report: DriftReport, ks: Sequence[int]
) -> dict[int, tuple[float, int]]:
    """Mean normalized drift over the top-k drifting words, per k.

    Words with zero total drift are excluded; the per-k result is
    (mean, number excluded).  Degenerate all-zero reports are an error.
    """
    total = report.total_drift
    if not np.any(total > 0):
        raise ValueError("degenerate report: every word has zero total drift")
    normalized = report.normalized_mean
    order = np.lexsort((np.arange(len(total)), -total))
    out: dict[int, tuple[float, int]] = {}
    for k in ks:
        if k > report.vocab_size:
            raise ValueError(f"k={k} exceeds the vocabulary size {report.vocab_size}")
        top = order[:k]
        keep = total[top] > 0
        excluded = int(k - keep.sum())
        out[k] = (float(normalized[top[keep]].mean()), excluded)
    return out


def drift_histogram(
    report: DriftReport, t: int, bins: int = 60, log_bins: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of drift values from t0 to slice ``t``.

    Returns (counts, edges) with counts summing to V.  Log-spaced edges get
    a zero leading edge when zero drifts are present.
    """
    if t == report.t0:
        raise ValueError("histogram slice must differ from the base slice")
    values = report.distances[:, t]
    top = float(values.max())
    if top == 0.0:
        top = 1.0
    if log_bins:
        positive = values[values > 0]
        low = float(positive.min()) if positive.size else top / 1000.0
        edges = np.geomspace(low, top, bins + 1)
        if np.any(values <= edges[0]):
            edges = np.concatenate([[0.0], edges[1:]])
    else:
        edges = np.linspace(0.0, top, bins + 1)
    counts, edges = np.histogram(values, bins=edges)
    return counts, edges


def nearest_neighbors(
    state: EmbeddingState,
    vocab: Vocabulary,
    word: str,
    t: int,
    m: int,
) -> list[tuple[str, float]]:
    """The m words most cosine-similar to ``word`` at slice ``t``.

    The query itself is excluded; ties go to the lower id.  Zero-norm
    candidate rows rank last.
    """
    if word not in vocab:
        raise ValueError(f"{word!r} is not in the vocabulary")
    query_id = vocab.ids[word]
    vectors = state.center[t]
    query = vectors[query_id]
    qnorm = np.linalg.norm(query)
    if qnorm == 0:
        raise ValueError(f"{word!r} has a zero-norm vector at slice {t}")
    norms = np.linalg.norm(vectors, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosines = (vectors @ query) / (norms * qnorm)
    cosines[norms == 0] = -np.inf
    cosines[query_id] = -np.inf
    order = np.lexsort((np.arange(len(cosines)), -cosines))[:m]
    return [(vocab.words[i], float(cosines[i])) for i in order]


def total_drift_sq(state: EmbeddingState) -> float:
    """Sum over words and slices of squared slice-to-slice movement."""
    diffs = state.center[1:] - state.center[:-1]
    return float((diffs ** 2).sum())
