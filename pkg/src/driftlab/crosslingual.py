"""Bilingual alignment and cross-lingual drift classification.

Two independently trained static spaces are aligned with a supervised
orthogonal map (least-squares over a bilingual lexicon).  The aligned
embeddings initialise dynamic training in both languages; afterwards each
lexicon pair gets a drift record (per-language drift plus the change of the
cross-lingual cosine between first and last slice) and one of five behaviour
classes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import Vocabulary
from .errors import DataFormatError
from .model import EmbeddingState

ALIGNMENT_MAGIC = b"DLA1"

CLASS_CODES = ("1", "2", "3-src", "3-tgt", "4")
CLASS_LABELS = {
    "1": "co-drift",
    "2": "divergent drift",
    "3-src": "source-only drift",
    "3-tgt": "target-only drift",
    "4": "stable",
}


@dataclass
class BilingualLexicon:
    """Deduplicated word pairs present in both vocabularies."""

    pairs: list[tuple[str, str]]
    coverage_src: float = 0.0
    coverage_tgt: float = 0.0

    def __len__(self) -> int:
        return len(self.pairs)

    @classmethod
    def from_pairs(
        cls,
        pairs: Sequence[tuple[str, str]],
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
    ) -> "BilingualLexicon":
        """Keep in-vocabulary pairs; a repeated source word keeps its first
        pairing."""
        seen_src: set[str] = set()
        kept: list[tuple[str, str]] = []
        for src, tgt in pairs:
            if src in seen_src:
                continue
            if src not in src_vocab or tgt not in tgt_vocab:
                continue
            seen_src.add(src)
            kept.append((src, tgt))
        tgt_words = {t for _, t in kept}
        return cls(
            pairs=kept,
            coverage_src=len(kept) / max(len(src_vocab), 1),
            coverage_tgt=len(tgt_words) / max(len(tgt_vocab), 1),
        )


def load_lexicon_pairs(path: str | Path) -> list[tuple[str, str]]:
    """Read "src_word<TAB>tgt_word" lines."""
    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataFormatError(f"{path}:{lineno}: expected 'src<TAB>tgt'")
        pairs.append((parts[0], parts[1]))
    return pairs


def save_lexicon_pairs(pairs: Sequence[tuple[str, str]], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as out:
        for src, tgt in pairs:
            out.write(f"{src}\t{tgt}\n")


def normalize_state(state: EmbeddingState, words: Sequence[str] | None = None) -> EmbeddingState:
    """Scale every center and context vector to unit L2 norm.

    A zero-norm row is an error naming the offending word (or id)."""
    center_norms = np.linalg.norm(state.center, axis=2)
    context_norms = np.linalg.norm(state.context, axis=1)
    zero = np.argwhere(center_norms == 0)
    if zero.size:
        t, v = zero[0]
        name = words[v] if words is not None else f"id {v}"
        raise ValueError(f"cannot normalize: {name} has a zero vector at slice {t}")
    zero_ctx = np.flatnonzero(context_norms == 0)
    if zero_ctx.size:
        v = zero_ctx[0]
        name = words[v] if words is not None else f"id {v}"
        raise ValueError(f"cannot normalize: {name} has a zero context vector")
    return EmbeddingState(
        center=state.center / center_norms[:, :, None],
        context=state.context / context_norms[:, None],
    )


class ProcrustesAlignment(TransformerMixin, BaseEstimator):
    """Least-squares orthogonal map from paired source rows onto target rows.

    ``fit(X, Y)`` finds the orthogonal ``Q`` minimising ``sum ||Q x_i -
    y_i||^2`` via the SVD of the cross-covariance; ``transform`` applies it
    row-wise.
    """

    def fit(self, X, Y):
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if X.shape != Y.shape or X.ndim != 2:
            raise ValueError("X and Y must be paired matrices of equal shape")
        n, dim = X.shape
        if n < dim:
            raise ValueError(f"underdetermined: {n} pairs for dimension {dim}")
        cross = X.T @ Y
        if np.linalg.matrix_rank(cross) < dim:
            raise ValueError("cross-covariance is rank deficient; alignment is not unique")
        u, _, vt = np.linalg.svd(cross)
        self.transform_ = (u @ vt).T
        self.residual_ = float(((X @ self.transform_.T - Y) ** 2).sum(axis=1).mean())
        return self

    def transform(self, X):
        check_is_fitted(self, "transform_")
        return np.asarray(X, dtype=np.float64) @ self.transform_.T


@dataclass
class AlignmentMap:
    """Fitted orthogonal transform with the lexicon that supervised it."""

    transform: np.ndarray  # (D, D), maps source rows into the target space
    pairs: list[tuple[str, str]]
    residual: float

    def orthogonality_defect(self) -> float:
        q = self.transform
        return float(np.linalg.norm(q.T @ q - np.eye(q.shape[0])))


def fit_alignment(
    src_state: EmbeddingState,
    src_vocab: Vocabulary,
    tgt_state: EmbeddingState,
    tgt_vocab: Vocabulary,
    lexicon: BilingualLexicon,
) -> AlignmentMap:
    """Fit the source-to-target orthogonal map on static center vectors.

    Both states must be single-slice (pre-dynamic); callers normalize first.
    """
    if src_state.n_slices != 1 or tgt_state.n_slices != 1:
        raise ValueError("alignment is fit on static (single-slice) states only")
    if src_state.dim != tgt_state.dim:
        raise ValueError("source and target dimensions differ")
    if len(lexicon) < src_state.dim:
        raise ValueError(
            f"underdetermined: {len(lexicon)} pairs for dimension {src_state.dim}"
        )
    src_rows = src_state.center[0, [src_vocab.ids[s] for s, _ in lexicon.pairs]]
    tgt_rows = tgt_state.center[0, [tgt_vocab.ids[t] for _, t in lexicon.pairs]]
    est = ProcrustesAlignment().fit(src_rows, tgt_rows)
    return AlignmentMap(transform=est.transform_, pairs=list(lexicon.pairs), residual=est.residual_)


def apply_alignment(amap: AlignmentMap, state: EmbeddingState) -> EmbeddingState:
    """Map every center and context row into the target space."""
    if state.dim != amap.transform.shape[0]:
        raise ValueError("state dimension does not match the alignment map")
    qt = amap.transform.T
    return EmbeddingState(center=state.center @ qt, context=state.context @ qt)


def save_alignment(amap: AlignmentMap, path: str | Path) -> None:
    """Binary map file: magic "DLA1", u32 D, f64 residual, D*D f64 entries,
    u32 pair count, then length-prefixed UTF-8 word pairs."""
    dim = amap.transform.shape[0]
    with Path(path).open("wb") as out:
        out.write(ALIGNMENT_MAGIC)
        out.write(struct.pack("<Id", dim, amap.residual))
        out.write(amap.transform.astype("<f8").tobytes())
        out.write(struct.pack("<I", len(amap.pairs)))
        for src, tgt in amap.pairs:
            for word in (src, tgt):
                data = word.encode("utf-8")
                out.write(struct.pack("<I", len(data)))
                out.write(data)


def load_alignment(path: str | Path) -> AlignmentMap:
    data = Path(path).read_bytes()
    if data[:4] != ALIGNMENT_MAGIC:
        raise DataFormatError(f"{path}: bad magic {data[:4]!r}, not an alignment map")
    try:
        dim, residual = struct.unpack_from("<Id", data, 4)
        offset = 4 + 12
        transform = np.frombuffer(data, dtype="<f8", count=dim * dim, offset=offset)
        transform = transform.reshape(dim, dim).copy()
        offset += 8 * dim * dim
        (n_pairs,) = struct.unpack_from("<I", data, offset)
        offset += 4
        pairs = []
        for _ in range(n_pairs):
            words = []
            for _ in range(2):
                (n,) = struct.unpack_from("<I", data, offset)
                offset += 4
                words.append(data[offset:offset + n].decode("utf-8"))
                offset += n
            pairs.append((words[0], words[1]))
    except (struct.error, UnicodeDecodeError) as exc:
        raise DataFormatError(f"{path}: truncated or corrupt alignment map") from exc
    return AlignmentMap(transform=transform, pairs=pairs, residual=residual)


@dataclass
class CrossDriftRecord:
    """Per-pair drift in both languages plus cross-lingual similarity drift."""

    src_word: str
    tgt_word: str
    drift_src: float
    drift_tgt: float
    sim_first: float
    sim_last: float

    @property
    def sim_drift(self) -> float:
        return abs(self.sim_last - self.sim_first)


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def cross_drift(
    src_state: EmbeddingState,
    src_vocab: Vocabulary,
    tgt_state: EmbeddingState,
    tgt_vocab: Vocabulary,
    lexicon: BilingualLexicon,
    t0: int = 0,
    t_last: int | None = None,
) -> tuple[list[CrossDriftRecord], int]:
    """One record per lexicon pair; pairs missing a word are skipped.

    Both models must have been trained from a shared aligned initialisation;
    cross-lingual cosines use unit-normalized slice vectors.  Returns the
    records and the skipped-pair count.
    """
    if t_last is None:
        t_last = min(src_state.n_slices, tgt_state.n_slices) - 1
    records = []
    skipped = 0
    for src_word, tgt_word in lexicon.pairs:
        if src_word not in src_vocab or tgt_word not in tgt_vocab:
            skipped += 1
            continue
        s = src_vocab.ids[src_word]
        g = tgt_vocab.ids[tgt_word]
        records.append(
            CrossDriftRecord(
                src_word=src_word,
                tgt_word=tgt_word,
                drift_src=float(np.linalg.norm(src_state.center[t_last, s] - src_state.center[t0, s])),
                drift_tgt=float(np.linalg.norm(tgt_state.center[t_last, g] - tgt_state.center[t0, g])),
                sim_first=float(_unit(src_state.center[t0, s]) @ _unit(tgt_state.center[t0, g])),
                sim_last=float(_unit(src_state.center[t_last, s]) @ _unit(tgt_state.center[t_last, g])),
            )
        )
    return records, skipped


@dataclass
class Thresholds:
    drift_src_cut: float
    drift_tgt_cut: float
    simdrift_cut: float


@dataclass
class ClassificationResult:
    assignments: list[tuple[CrossDriftRecord, str]]
    counts: dict[str, int]
    proportions: dict[str, Fraction]
    thresholds: Thresholds


def classify(
    records: Sequence[CrossDriftRecord],
    thresholds: Thresholds | None = None,
    percentile: float | None = None,
) -> ClassificationResult:
    """Assign every record one of the five behaviour classes.

    Default cuts are the means of each quantity over the records; pass
    ``percentile`` to cut at that percentile instead.  A pair drifting in
    both languages is class 2 when the cross-lingual similarity falls by
    more than the similarity cut, class 1 otherwise; one-sided drift is
    class 3 (side-tagged); no drift is class 4.  Proportions are exact
    rationals, so they sum to exactly 1.
    """
    if not records:
        raise ValueError("no records to classify")
    if thresholds is None:
        d_src = np.array([r.drift_src for r in records])
        d_tgt = np.array([r.drift_tgt for r in records])
        s_drift = np.array([r.sim_drift for r in records])
        if percentile is None:
            thresholds = Thresholds(float(d_src.mean()), float(d_tgt.mean()), float(s_drift.mean()))
        else:
            thresholds = Thresholds(
                float(np.percentile(d_src, percentile)),
                float(np.percentile(d_tgt, percentile)),
                float(np.percentile(s_drift, percentile)),
            )
    assignments = []
    counts = {code: 0 for code in CLASS_CODES}
    for rec in records:
        src_moves = rec.drift_src > thresholds.drift_src_cut
        tgt_moves = rec.drift_tgt > thresholds.drift_tgt_cut
        if src_moves and tgt_moves:
            code = "2" if rec.sim_first - rec.sim_last > thresholds.simdrift_cut else "1"
        elif src_moves:
            code = "3-src"
        elif tgt_moves:
            code = "3-tgt"
        else:
            code = "4"
        counts[code] += 1
        assignments.append((rec, code))
    total = len(records)
    proportions = {code: Fraction(n, total) for code, n in counts.items()}
    return ClassificationResult(assignments, counts, proportions, thresholds)


def _pca(matrix: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Coordinates on the top-k principal axes and all scatter eigenvalues."""
    centered = matrix - matrix.mean(axis=0)
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    coords = centered @ vt[:k].T
    return coords, singular ** 2


@dataclass
class ProjectedPoint:
    model: str
    word: str
    t: int
    kind: str  # "focus" or "neighbor"
    anchor: str  # the focus word this row belongs to
    x: float
    y: float


def project_2d(
    models: Sequence[tuple[str, EmbeddingState, Vocabulary]],
    focus_words: Sequence[str],
    n_neighbors: int = 5,
) -> list[ProjectedPoint]:
    """Project focus-word trajectories and their per-slice neighbours to 2D.

    Selected vectors are reduced with PCA onto the top two principal
    components; coordinates are returned for external plotting.  Focus words
    must appear in at least one model's vocabulary.
    """
    from .drift import nearest_neighbors

    rows: list[tuple[str, str, int, str, str]] = []
    vectors: list[np.ndarray] = []
    for word in focus_words:
        if not any(word in vocab for _, _, vocab in models):
            raise ValueError(f"focus word {word!r} is missing from every model")
    for name, state, vocab in models:
        for word in focus_words:
            if word not in vocab:
                continue
            wid = vocab.ids[word]
            for t in range(state.n_slices):
                rows.append((name, word, t, "focus", word))
                vectors.append(state.center[t, wid])
                for neighbor, _ in nearest_neighbors(state, vocab, word, t, n_neighbors):
                    rows.append((name, neighbor, t, "neighbor", word))
                    vectors.append(state.center[t, vocab.ids[neighbor]])
    if len(vectors) < 3:
        raise ValueError(f"only {len(vectors)} vectors selected; need at least 3")
    coords, _ = _pca(np.asarray(vectors), 2)
    return [
        ProjectedPoint(model, word, t, kind, anchor, float(x), float(y))
        for (model, word, t, kind, anchor), (x, y) in zip(rows, coords)
    ]
