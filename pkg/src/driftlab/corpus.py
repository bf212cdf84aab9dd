"""Corpus ingestion, vocabulary building, time slicing and batch generation.

The pipeline is: ingest dated raw text, build a frequency-ranked vocabulary,
map tokens to ids while subsampling frequent words, bucket documents into
chronological slices, tag every surviving token position as train/valid/test,
and finally draw context-window minibatches from any (slice, split).
"""

from __future__ import annotations

import logging
import string
import struct
from collections import Counter
from dataclasses import dataclass, field
from datetime import date as Date
from datetime import datetime, timedelta
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataFormatError
from .validation import SALT_SPLIT, SALT_SUBSAMPLE, check_positive, rng_from

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"DLC1"

SPLIT_CODES = {"train": 0, "valid": 1, "test": 2}
SPLIT_NAMES = {code: name for name, code in SPLIT_CODES.items()}

VALID_FRACTION = 0.10
TEST_FRACTION = 0.10

# ASCII punctuation plus the usual French/typographic quotes and dashes.
_EDGE_PUNCT = string.punctuation + "«»“”‘’…–—"


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip punctuation from token edges."""
    tokens = []
    for raw in text.lower().split():
        tok = raw.strip(_EDGE_PUNCT)
        if tok:
            tokens.append(tok)
    return tokens


@dataclass
class DatedDocument:
    """One dated text record, already lowercased and tokenized."""

    date: Date
    tokens: list[str]


def _parse_line(line: str, date_format: str) -> DatedDocument | None:
    if "\t" not in line:
        return None
    date_str, text = line.split("\t", 1)
    try:
        if date_format == "%Y-%m-%d":
            day = Date.fromisoformat(date_str.strip())
        else:
            day = datetime.strptime(date_str.strip(), date_format).date()
    except ValueError:
        return None
    tokens = tokenize(text)
    if not tokens:
        return None
    return DatedDocument(day, tokens)


def ingest(path: str | Path, date_format: str = "%Y-%m-%d") -> Iterator[DatedDocument]:
    """Yield documents from a UTF-8 line-delimited "date<TAB>text" file.

    Malformed lines (missing tab, unparsable date, empty text after
    tokenization) are counted and skipped.  If more than half of the lines
    are malformed the stream fails with :class:`DataFormatError` once the
    file has been fully read.  An unreadable source fails immediately.
    """
    path = Path(path)
    try:
        handle = path.open("r", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot read corpus source {path}: {exc}") from exc
    ok = 0
    bad = 0
    with handle:
        for line in handle:
            doc = _parse_line(line.rstrip("\n"), date_format)
            if doc is None:
                bad += 1
                continue
            ok += 1
            yield doc
    if bad:
        logger.warning("ingest %s: skipped %d malformed line(s)", path, bad)
    if bad > ok:
        raise DataFormatError(
            f"{path}: {bad} of {ok + bad} lines malformed; "
            f"expected '{date_format}<TAB>text' records"
        )


def load_stoplist(which: str | Path) -> frozenset[str]:
    """Load a stoplist: "en"/"fr" for the bundled lists, "none", or a file path."""
    if which in ("en", "fr"):
        text = resources.files("driftlab.data").joinpath(f"stopwords_{which}.txt").read_text("utf-8")
    elif which in ("none", ""):
        return frozenset()
    else:
        text = Path(which).read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


@dataclass
class Vocabulary:
    """The most frequent non-stoplist surface forms, in rank order.

    ``counts`` are raw occurrence counts while ``total_tokens`` counts every
    token seen, including stoplisted and out-of-vocabulary ones, so that
    ``freq`` reflects true corpus frequency.
    """

    words: list[str]
    counts: np.ndarray
    total_tokens: int
    stoplist: frozenset[str] = frozenset()
    ids: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.words) != len(self.counts):
            raise ValueError("words and counts must have the same length")
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.ids = {w: i for i, w in enumerate(self.words)}
        if len(self.ids) != len(self.words):
            raise ValueError("vocabulary contains duplicate words")

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.ids

    @property
    def freq(self) -> np.ndarray:
        return self.counts / float(self.total_tokens)


def build_vocabulary(
    docs: Iterable[DatedDocument],
    v_max: int,
    stoplist: Iterable[str] = (),
) -> Vocabulary:
    """Select the ``v_max`` most frequent non-stoplist words; ties break
    lexicographically.  Frequencies are measured over all tokens, including
    words later dropped."""
    if v_max < 1:
        raise ValueError(f"v_max must be >= 1, got {v_max}")
    stop = frozenset(stoplist)
    counts: Counter[str] = Counter()
    total = 0
    for doc in docs:
        counts.update(doc.tokens)
        total += len(doc.tokens)
    eligible = [(w, c) for w, c in counts.items() if w not in stop]
    eligible.sort(key=lambda wc: (-wc[1], wc[0]))
    if len(eligible) < v_max:
        logger.warning(
            "only %d eligible word types available, requested %d", len(eligible), v_max
        )
    kept = eligible[:v_max]
    return Vocabulary(
        words=[w for w, _ in kept],
        counts=np.array([c for _, c in kept], dtype=np.int64),
        total_tokens=total,
        stoplist=stop,
    )


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    """Write "word<TAB>count" lines in rank order."""
    with Path(path).open("w", encoding="utf-8") as out:
        for word, count in zip(vocab.words, vocab.counts):
            out.write(f"{word}\t{int(count)}\n")


def load_vocabulary(
    path: str | Path,
    total_tokens: int | None = None,
    stoplist: Iterable[str] = (),
) -> Vocabulary:
    """Read a vocabulary file.  When ``total_tokens`` is unknown the sum of
    the stored counts is used, which slightly overstates frequencies."""
    words: list[str] = []
    counts: list[int] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line:
            continue
        try:
            word, count = line.split("\t")
            counts.append(int(count))
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: expected 'word<TAB>count'") from exc
        words.append(word)
    arr = np.array(counts, dtype=np.int64)
    total = int(arr.sum()) if total_tokens is None else total_tokens
    return Vocabulary(words=words, counts=arr, total_tokens=total, stoplist=frozenset(stoplist))


def subsample_keep_probability(freq, threshold: float = 1e-5):
    """Probability of keeping a token of the given relative frequency.

    keep = min(1, sqrt(threshold / freq)); rarer-than-threshold words are
    always kept.  Accepts scalars or arrays.
    """
    check_positive("threshold", threshold)
    arr = np.asarray(freq, dtype=np.float64)
    if np.any(arr <= 0):
        raise ValueError("freq must be > 0")
    keep = np.minimum(1.0, np.sqrt(threshold / arr))
    if np.isscalar(freq) or arr.ndim == 0:
        return float(keep)
    return keep


def _slice_index(day: Date, granularity: str, base: Date) -> int:
    if granularity == "annual":
        return day.year - base.year
    if granularity == "monthly":
        return (day.year - base.year) * 12 + (day.month - base.month)
    days = int(granularity)
    return (day - base).days // days


def _slice_labels(granularity: str, base: Date, n_slices: int) -> list[str]:
    if granularity == "annual":
        return [str(base.year + t) for t in range(n_slices)]
    if granularity == "monthly":
        return [
            f"{base.year + (base.month - 1 + t) // 12}-{(base.month - 1 + t) % 12 + 1:02d}"
            for t in range(n_slices)
        ]
    days = int(granularity)
    return [str(base + timedelta(days=days * t)) for t in range(n_slices)]


def _check_granularity(granularity: str) -> str:
    if granularity in ("annual", "monthly"):
        return granularity
    try:
        days = int(granularity)
    except (TypeError, ValueError):
        raise ValueError(
            f"granularity must be 'annual', 'monthly' or a day count, got {granularity!r}"
        ) from None
    check_positive("granularity (days)", days)
    return str(days)


@dataclass
class _FlatSlice:
    """Per-slice flattened view: ids, split tags and per-position doc bounds."""

    ids: np.ndarray        # (n,) int32
    tags: np.ndarray       # (n,) uint8
    doc_start: np.ndarray  # (n,) int64, start offset of the containing doc
    doc_end: np.ndarray    # (n,) int64, one past the containing doc


@dataclass
class TimeSlicedCorpus:
    """Token-id streams bucketed into chronological slices.

    ``slices[t]`` is the list of per-document id arrays in slice ``t`` and
    ``tags[t]`` the parallel train/valid/test codes per position.
    """

    slices: list[list[np.ndarray]]
    tags: list[list[np.ndarray]]
    vocab_size: int
    granularity: str = "unknown"
    labels: list[str] | None = None
    _flat_cache: dict[int, _FlatSlice] = field(default_factory=dict, repr=False)

    @property
    def n_slices(self) -> int:
        return len(self.slices)

    def token_count(self, t: int | None = None) -> int:
        if t is None:
            return sum(self.token_count(i) for i in range(self.n_slices))
        return sum(len(doc) for doc in self.slices[t])

    def flat(self, t: int) -> _FlatSlice:
        if t not in self._flat_cache:
            docs = self.slices[t]
            if docs:
                ids = np.concatenate(docs)
                tags = np.concatenate(self.tags[t])
                lengths = np.array([len(d) for d in docs], dtype=np.int64)
                ends = np.cumsum(lengths)
                starts = ends - lengths
                doc_start = np.repeat(starts, lengths)
                doc_end = np.repeat(ends, lengths)
            else:
                ids = np.empty(0, dtype=np.int32)
                tags = np.empty(0, dtype=np.uint8)
                doc_start = np.empty(0, dtype=np.int64)
                doc_end = np.empty(0, dtype=np.int64)
            self._flat_cache[t] = _FlatSlice(ids, tags, doc_start, doc_end)
        return self._flat_cache[t]

    def split_positions(self, t: int, split: str) -> np.ndarray:
        """Flat positions of slice ``t`` belonging to ``split``."""
        code = SPLIT_CODES[split]
        return np.flatnonzero(self.flat(t).tags == code)

    def merged(self) -> "TimeSlicedCorpus":
        """All documents as a single slice, preserving order and tags."""
        docs = [doc for sl in self.slices for doc in sl]
        tags = [tg for sl in self.tags for tg in sl]
        return TimeSlicedCorpus(
            slices=[docs],
            tags=[tags],
            vocab_size=self.vocab_size,
            granularity="static",
            labels=["all"],
        )


def slice_documents(
    docs: Iterable[DatedDocument],
    vocab: Vocabulary,
    granularity: str = "annual",
    seed: int = 0,
    subsample_threshold: float = 1e-5,
) -> TimeSlicedCorpus:
    """Map tokens to ids, subsample frequent words, bucket by calendar slice
    and tag positions train/valid/test.

    Out-of-vocabulary tokens are dropped.  Subsampling removes tokens once,
    at slicing time.  The valid and test splits each receive 10% of the
    surviving positions, drawn without replacement from the whole corpus.
    Slices with no documents are kept empty so indices stay calendar-aligned.
    """
    granularity = _check_granularity(granularity)
    doc_list = list(docs)
    if not doc_list:
        raise ValueError("cannot slice an empty document stream")

    base = min(d.date for d in doc_list)
    last = max(d.date for d in doc_list)
    n_slices = _slice_index(last, granularity, base) + 1

    keep = subsample_keep_probability(vocab.freq, subsample_threshold)
    word_ids = vocab.ids
    rng = rng_from(seed, SALT_SUBSAMPLE)

    slices: list[list[np.ndarray]] = [[] for _ in range(n_slices)]
    for doc in doc_list:
        ids = np.array(
            [word_ids[tok] for tok in doc.tokens if tok in word_ids], dtype=np.int32
        )
        if ids.size:
            kept = ids[rng.random(ids.size) < keep[ids]]
        else:
            kept = ids
        if kept.size:
            slices[_slice_index(doc.date, granularity, base)].append(kept)

    empty = [t for t, sl in enumerate(slices) if not sl]
    if empty:
        logger.warning("%d of %d slices are empty: %s", len(empty), n_slices, empty[:10])

    # Exact global 10%/10% partition so small corpora still meet the quota.
    lengths = [len(doc) for sl in slices for doc in sl]
    total = sum(lengths)
    flat_tags = np.zeros(total, dtype=np.uint8)
    if total:
        perm = rng_from(seed, SALT_SPLIT).permutation(total)
        n_valid = round(VALID_FRACTION * total)
        n_test = round(TEST_FRACTION * total)
        flat_tags[perm[:n_valid]] = SPLIT_CODES["valid"]
        flat_tags[perm[n_valid:n_valid + n_test]] = SPLIT_CODES["test"]

    tags: list[list[np.ndarray]] = []
    offset = 0
    for sl in slices:
        slice_tags = []
        for doc in sl:
            slice_tags.append(flat_tags[offset:offset + len(doc)].copy())
            offset += len(doc)
        tags.append(slice_tags)

    return TimeSlicedCorpus(
        slices=slices,
        tags=tags,
        vocab_size=len(vocab),
        granularity=granularity,
        labels=_slice_labels(granularity, base, n_slices),
    )


@dataclass
class ContextBatch:
    """A minibatch of center ids with their windowed context ids.

    ``mask`` is False exactly where the window crosses a document boundary;
    masked context ids are zero-filled and must be ignored.
    """

    center_ids: np.ndarray   # (n,)
    context_ids: np.ndarray  # (n, 2C)
    slice_index: int
    mask: np.ndarray         # (n, 2C) bool

    def __len__(self) -> int:
        return len(self.center_ids)


def batches(
    corpus: TimeSlicedCorpus,
    t: int,
    window: int = 4,
    batch_size: int = 512,
    split: str = "train",
    seed: int | Sequence[int] = 0,
    num_batches: int | None = None,
) -> Iterator[ContextBatch]:
    """Yield minibatches for slice ``t``: centers drawn uniformly with
    replacement from the split's positions, contexts truncated (masked) at
    document boundaries.

    Positions whose document holds a single token have no usable context and
    are excluded from the candidate pool.  An empty pool yields an empty
    stream with a warning.  ``num_batches=None`` streams forever.
    """
    if t >= corpus.n_slices:
        raise ValueError(f"slice index {t} out of range (T={corpus.n_slices})")
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    flat = corpus.flat(t)
    code = SPLIT_CODES[split]
    usable = (flat.tags == code) & (flat.doc_end - flat.doc_start > 1)
    candidates = np.flatnonzero(usable)
    if candidates.size == 0:
        logger.warning("slice %d has no usable %s positions; empty batch stream", t, split)
        return

    rng = rng_from(seed)
    offsets = np.concatenate([np.arange(-window, 0), np.arange(1, window + 1)])
    n_ids = len(flat.ids)
    produced = 0
    while num_batches is None or produced < num_batches:
        pos = candidates[rng.integers(0, candidates.size, size=batch_size)]
        ctx_pos = pos[:, None] + offsets[None, :]
        mask = (ctx_pos >= flat.doc_start[pos, None]) & (ctx_pos < flat.doc_end[pos, None])
        ctx_ids = flat.ids[np.clip(ctx_pos, 0, n_ids - 1)].copy()
        ctx_ids[~mask] = 0
        yield ContextBatch(
            center_ids=flat.ids[pos].astype(np.int64),
            context_ids=ctx_ids.astype(np.int64),
            slice_index=t,
            mask=mask,
        )
        produced += 1


def save_corpus(corpus: TimeSlicedCorpus, path: str | Path) -> None:
    """Write the binary slice cache: magic "DLC1", little-endian u32 V and T,
    then per slice a u32 document count followed by length-prefixed id and
    split-tag arrays per document."""
    with Path(path).open("wb") as out:
        out.write(CACHE_MAGIC)
        out.write(struct.pack("<II", corpus.vocab_size, corpus.n_slices))
        for docs, tags in zip(corpus.slices, corpus.tags):
            out.write(struct.pack("<I", len(docs)))
            for ids, tg in zip(docs, tags):
                out.write(struct.pack("<I", len(ids)))
                out.write(ids.astype("<u4").tobytes())
                out.write(tg.astype("u1").tobytes())


def load_corpus(
    path: str | Path,
    granularity: str = "unknown",
    labels: list[str] | None = None,
) -> TimeSlicedCorpus:
    """Read a binary slice cache written by :func:`save_corpus`."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != CACHE_MAGIC:
        raise DataFormatError(f"{path}: bad magic {data[:4]!r}, not a corpus cache")
    try:
        vocab_size, n_slices = struct.unpack_from("<II", data, 4)
        offset = 12
        slices: list[list[np.ndarray]] = []
        tags: list[list[np.ndarray]] = []
        for _ in range(n_slices):
            (n_docs,) = struct.unpack_from("<I", data, offset)
            offset += 4
            docs = []
            doc_tags = []
            for _ in range(n_docs):
                (n,) = struct.unpack_from("<I", data, offset)
                offset += 4
                ids = np.frombuffer(data, dtype="<u4", count=n, offset=offset).astype(np.int32)
                offset += 4 * n
                tg = np.frombuffer(data, dtype="u1", count=n, offset=offset).copy()
                offset += n
                docs.append(ids)
                doc_tags.append(tg)
            slices.append(docs)
            tags.append(doc_tags)
    except (struct.error, ValueError) as exc:
        raise DataFormatError(f"{path}: truncated or corrupt corpus cache") from exc
    if offset != len(data):
        raise DataFormatError(f"{path}: {len(data) - offset} trailing bytes in corpus cache")
    bad = [t for t, docs in enumerate(slices) for d in docs if d.size and d.max() >= vocab_size]
    if bad:
        raise DataFormatError(f"{path}: token id out of range in slice {bad[0]}")
    return TimeSlicedCorpus(
        slices=slices,
        tags=tags,
        vocab_size=vocab_size,
        granularity=granularity,
        labels=labels,
    )
