"""Synthetic time-sliced corpora with planted semantic behaviours.

Words live in co-occurrence clusters; sentences are drawn within one
cluster.  A planted word's sentences switch cluster over time: gradually
("monotone", source-cluster probability 1 - t/(T-1)), only at one slice
("spike@t*"), or never ("stable").  An optional mirrored corpus with its own
behaviour overrides plus a generated lexicon supports bilingual experiments.
Every ground-truth behaviour is written alongside the corpus.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataFormatError
from .validation import SALT_SYNTH, SALT_SYNTH_TGT, rng_from

logger = logging.getLogger(__name__)


@dataclass
class PlantedWord:
    word: str
    behavior: str  # "monotone", "spike" or "stable"
    source: int
    target: int
    spike_t: int | None = None

    @classmethod
    def parse(cls, text: str) -> "PlantedWord":
        """Parse "word behavior source target" with behavior spike@N allowed."""
        parts = text.split()
        if len(parts) != 4:
            raise DataFormatError(f"planted entry needs 4 fields, got {text!r}")
        word, behavior, source, target = parts
        spike_t = None
        if behavior.startswith("spike@"):
            spike_t = int(behavior.split("@", 1)[1])
            behavior = "spike"
        if behavior not in ("monotone", "spike", "stable"):
            raise DataFormatError(f"unknown behavior {behavior!r} in {text!r}")
        if behavior == "spike" and spike_t is None:
            raise DataFormatError(f"spike behavior needs a slice, e.g. spike@3: {text!r}")
        return cls(word, behavior, int(source), int(target), spike_t)

    def behavior_str(self) -> str:
        return f"spike@{self.spike_t}" if self.behavior == "spike" else self.behavior


@dataclass
class SynthSpec:
    """Parameters of one synthetic corpus (optionally mirrored bilingually)."""

    vocab_size: int = 500
    n_slices: int = 10
    tokens_per_slice: int = 200_000
    n_clusters: int = 5
    window: int = 4
    affinity: float | Sequence[float] = 1.0
    seed: int = 0
    start_year: int = 1987
    src_prefix: str = "a"
    tgt_prefix: str = "b"
    bilingual: bool = False
    planted: list[PlantedWord] = field(default_factory=list)
    planted_tgt_overrides: list[PlantedWord] = field(default_factory=list)

    def words(self, prefix: str) -> list[str]:
        return [f"{prefix}{i:04d}" for i in range(self.vocab_size)]

    def cluster_of(self) -> np.ndarray:
        return (np.arange(self.vocab_size) * self.n_clusters) // self.vocab_size

    def affinities(self) -> np.ndarray:
        arr = np.atleast_1d(np.asarray(self.affinity, dtype=np.float64))
        if arr.size == 1:
            arr = np.full(self.n_clusters, float(arr[0]))
        if arr.size != self.n_clusters:
            raise ValueError("affinity must be a scalar or one value per cluster")
        if np.any(arr < 0) or np.any(arr > 1):
            raise ValueError("affinity values must lie in [0, 1]")
        return arr

    def validate(self) -> None:
        if self.vocab_size < self.n_clusters or self.n_clusters < 1:
            raise ValueError("need 1 <= n_clusters <= vocab_size")
        if self.n_slices < 1 or self.window < 1:
            raise ValueError("n_slices and window must be >= 1")
        sent_len = 2 * self.window + 1
        if self.tokens_per_slice < sent_len:
            raise ValueError("tokens_per_slice is smaller than one sentence")
        self.affinities()
        src_words = set(self.words(self.src_prefix))
        for plant in self.planted:
            self._check_plant(plant, src_words, "planted")
        if self.planted_tgt_overrides and not self.bilingual:
            raise ValueError("target overrides given but bilingual is false")
        tgt_words = set(self.words(self.tgt_prefix))
        for plant in self.planted_tgt_overrides:
            self._check_plant(plant, tgt_words, "planted_tgt")

    def _check_plant(self, plant: PlantedWord, words: set[str], kind: str) -> None:
        if plant.word not in words:
            raise ValueError(f"{kind} word {plant.word!r} is not in the vocabulary")
        for cl in (plant.source, plant.target):
            if not 0 <= cl < self.n_clusters:
                raise ValueError(f"{kind} {plant.word!r}: cluster {cl} out of range")
        if plant.behavior == "monotone" and self.n_slices < 2:
            raise ValueError("monotone drift needs at least 2 slices")
        if plant.behavior == "spike" and not 0 <= plant.spike_t < self.n_slices:
            raise ValueError(f"{kind} {plant.word!r}: spike slice out of range")


def spec_from_text(text: str) -> SynthSpec:
    """Parse the "key = value" spec format with repeatable plant lines."""
    kv: dict[str, str] = {}
    plants: list[PlantedWord] = []
    plants_tgt: list[PlantedWord] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(f"spec line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "plant":
            plants.append(PlantedWord.parse(value))
        elif key == "plant_tgt":
            plants_tgt.append(PlantedWord.parse(value))
        else:
            kv[key] = value

    def get(key, cast, default):
        return cast(kv[key]) if key in kv else default

    affinity: float | list[float] = get("affinity", lambda s: [float(x) for x in s.split()], 1.0)
    if isinstance(affinity, list) and len(affinity) == 1:
        affinity = affinity[0]
    spec = SynthSpec(
        vocab_size=get("vocab", int, 500),
        n_slices=get("slices", int, 10),
        tokens_per_slice=get("tokens_per_slice", int, 200_000),
        n_clusters=get("clusters", int, 5),
        window=get("window", int, 4),
        affinity=affinity,
        seed=get("seed", int, 0),
        start_year=get("start_year", int, 1987),
        src_prefix=get("src_prefix", str, "a"),
        tgt_prefix=get("tgt_prefix", str, "b"),
        bilingual=get("bilingual", lambda s: s.lower() in ("1", "true", "yes"), False),
        planted=plants,
        planted_tgt_overrides=plants_tgt,
    )
    spec.validate()
    return spec


def spec_from_file(path: str | Path) -> SynthSpec:
    return spec_from_text(Path(path).read_text(encoding="utf-8"))


def _source_probability(plant: PlantedWord, t: int, n_slices: int) -> float:
    """Probability that a planted word's sentence stays in its source cluster."""
    if plant.behavior == "monotone":
        return 1.0 - t / (n_slices - 1)
    if plant.behavior == "spike":
        return 0.0 if t == plant.spike_t else 1.0
    return 1.0


def _build_pools(spec: SynthSpec, planted: dict[int, PlantedWord]) -> list[np.ndarray]:
    """Per-cluster id pools, excluding planted words (they only appear as
    sentence topics, so their contexts carry a clean cluster signal)."""
    cluster_of = spec.cluster_of()
    pools = []
    for c in range(spec.n_clusters):
        members = np.flatnonzero(cluster_of == c)
        members = members[~np.isin(members, list(planted))]
        if members.size == 0:
            raise ValueError(f"cluster {c} has no free words left for sentence contexts")
        pools.append(members)
    return pools


def _generate_language(
    spec: SynthSpec,
    words: list[str],
    planted: dict[int, PlantedWord],
    rng: np.random.Generator,
    out_path: Path,
) -> None:
    sent_len = 2 * spec.window + 1
    n_sent = max(1, round(spec.tokens_per_slice / sent_len))
    pools = _build_pools(spec, planted)
    cluster_of = spec.cluster_of()
    affinities = spec.affinities()
    full_pool = np.concatenate(pools)
    word_arr = np.array(words, dtype=object)

    with out_path.open("w", encoding="utf-8") as out:
        for t in range(spec.n_slices):
            date = f"{spec.start_year + t}-01-01"
            topics = rng.integers(0, spec.vocab_size, size=n_sent)
            clusters = cluster_of[topics].copy()
            for wid, plant in planted.items():
                hit = topics == wid
                if not hit.any():
                    continue
                p_src = _source_probability(plant, t, spec.n_slices)
                stay = rng.random(int(hit.sum())) < p_src
                clusters[hit] = np.where(stay, plant.source, plant.target)
            draws = rng.random((n_sent, sent_len - 1))
            context = np.empty((n_sent, sent_len - 1), dtype=np.int64)
            for c, pool in enumerate(pools):
                members = clusters == c
                if members.any():
                    context[members] = pool[(draws[members] * pool.size).astype(np.int64)]
            if np.any(affinities < 1.0):
                noise = rng.random((n_sent, sent_len - 1)) >= affinities[clusters][:, None]
                if noise.any():
                    picks = rng.integers(0, full_pool.size, size=int(noise.sum()))
                    context[noise] = full_pool[picks]
            half = spec.window
            for i in range(n_sent):
                left = " ".join(word_arr[context[i, :half]])
                right = " ".join(word_arr[context[i, half:]])
                out.write(f"{date}\t{left} {word_arr[topics[i]]} {right}\n")


def _ground_truth_rows(spec: SynthSpec, words: list[str], planted: dict[int, PlantedWord]):
    cluster_of = spec.cluster_of()
    for wid, word in enumerate(words):
        plant = planted.get(wid)
        if plant is None:
            own = int(cluster_of[wid])
            yield word, "stable", own, own
        else:
            yield word, plant.behavior_str(), plant.source, plant.target


def generate(spec: SynthSpec, out_dir: str | Path) -> dict[str, Path]:
    """Write the corpus file(s) and ground truth; returns the paths.

    Deterministic under ``spec.seed``.  Bilingual specs additionally write a
    mirrored corpus (independent draws, same structure, overridable planted
    behaviours) and the full word-by-word lexicon.
    """
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    src_words = spec.words(spec.src_prefix)
    src_ids = {w: i for i, w in enumerate(src_words)}
    planted_src = {src_ids[p.word]: p for p in spec.planted}

    paths: dict[str, Path] = {"src": out / "corpus_src.tsv", "ground_truth": out / "ground_truth.tsv"}
    _generate_language(spec, src_words, planted_src, rng_from(spec.seed, SALT_SYNTH), paths["src"])

    truth_rows = list(_ground_truth_rows(spec, src_words, planted_src))

    if spec.bilingual:
        tgt_words = spec.words(spec.tgt_prefix)
        tgt_ids = {w: i for i, w in enumerate(tgt_words)}
        planted_tgt = {
            wid: PlantedWord(tgt_words[wid], p.behavior, p.source, p.target, p.spike_t)
            for wid, p in planted_src.items()
        }
        for override in spec.planted_tgt_overrides:
            planted_tgt[tgt_ids[override.word]] = override
        paths["tgt"] = out / "corpus_tgt.tsv"
        _generate_language(
            spec, tgt_words, planted_tgt, rng_from(spec.seed, SALT_SYNTH_TGT), paths["tgt"]
        )
        paths["lexicon"] = out / "lexicon.tsv"
        with paths["lexicon"].open("w", encoding="utf-8") as fh:
            for src, tgt in zip(src_words, tgt_words):
                fh.write(f"{src}\t{tgt}\n")
        truth_rows += list(_ground_truth_rows(spec, tgt_words, planted_tgt))

    with paths["ground_truth"].open("w", encoding="utf-8") as fh:
        for word, behavior, source, target in truth_rows:
            fh.write(f"{word}\t{behavior}\t{source}\t{target}\n")
    return paths
