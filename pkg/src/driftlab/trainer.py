"""Static pretraining, dynamic training across slices, checkpoints.

Updates ascend the total objective with per-parameter Adagrad steps.  The
prior enters stochastically: each batch applies, for the rows it touches,
the prior terms tied to the batch's slice, scaled by the inverse minibatch
count so that one epoch applies each prior term about once.  Slice-coupling
terms are credited to the later slice of the pair, so visiting all slices in
an epoch covers the whole prior without double counting.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import evaluation
from .corpus import TimeSlicedCorpus, Vocabulary, batches
from .errors import DataFormatError, TrainingDiverged
from .model import (
    EmbeddingState,
    NegativeSampler,
    PriorConfig,
    _likelihood_grads,
    load_embeddings,
    loss_prior,
    save_embeddings,
)
from .validation import SALT_BATCH, SALT_INIT, check_in, check_positive, rng_from

_ADAGRAD_EPS = 1e-8


@dataclass
class TrainingConfig:
    """Everything that determines a training run besides the corpus."""

    prior: PriorConfig = field(default_factory=PriorConfig)
    window: int = 4
    dim: int = 100
    negatives: int = 10
    minibatches_per_slice: int = 1000
    static_minibatches: int | None = None  # default: T * minibatches_per_slice
    batch_size: int = 512
    learning_rate: float = 0.1
    epochs: int = 5
    static_epochs: int = 5
    clip_norm: float = 25.0
    neg_power: float = 0.75
    init: str = "static"  # "static", "random" or a saved-model directory
    init_scale: float = 0.1
    slice_order: str = "chronological"  # or "shuffled" (not for dbe-i)
    seed: int = 0

    def __post_init__(self):
        for name in ("window", "dim", "negatives", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("minibatches_per_slice", "epochs", "static_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        check_positive("learning_rate", self.learning_rate)
        check_positive("clip_norm", self.clip_norm)
        check_positive("init_scale", self.init_scale)
        check_in("slice_order", self.slice_order, ("chronological", "shuffled"))
        if self.slice_order == "shuffled" and self.prior.variant == "dbe-i":
            raise ValueError("the incremental variant requires chronological slice order")


_CONFIG_KEYS = (
    ("variant", lambda c: c.prior.variant),
    ("lambda", lambda c: c.prior.drift_precision),
    ("lambda0", lambda c: c.prior.init_precision),
    ("window", lambda c: c.window),
    ("dim", lambda c: c.dim),
    ("negatives", lambda c: c.negatives),
    ("minibatches_per_slice", lambda c: c.minibatches_per_slice),
    ("static_minibatches", lambda c: c.static_minibatches),
    ("batch_size", lambda c: c.batch_size),
    ("learning_rate", lambda c: c.learning_rate),
    ("epochs", lambda c: c.epochs),
    ("static_epochs", lambda c: c.static_epochs),
    ("clip_norm", lambda c: c.clip_norm),
    ("neg_power", lambda c: c.neg_power),
    ("init", lambda c: c.init),
    ("init_scale", lambda c: c.init_scale),
    ("slice_order", lambda c: c.slice_order),
    ("seed", lambda c: c.seed),
)


def config_to_text(config: TrainingConfig) -> str:
    """Render a config as "key = value" lines (the config file format)."""
    lines = []
    for key, get in _CONFIG_KEYS:
        value = get(config)
        lines.append(f"{key} = {'' if value is None else value}")
    return "\n".join(lines) + "\n"


def parse_key_values(text: str) -> dict[str, str]:
    """Parse "key = value" lines; '#' starts a comment, blanks are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def config_from_text(text: str) -> TrainingConfig:
    """Inverse of :func:`config_to_text`; missing keys keep their defaults."""
    kv = parse_key_values(text)

    def get(key, cast, default):
        raw = kv.get(key, "")
        return cast(raw) if raw != "" else default

    prior = PriorConfig(
        variant=get("variant", str, "dbe"),
        drift_precision=get("lambda", float, 1.0),
        init_precision=get("lambda0", float, 0.001),
    )
    return TrainingConfig(
        prior=prior,
        window=get("window", int, 4),
        dim=get("dim", int, 100),
        negatives=get("negatives", int, 10),
        minibatches_per_slice=get("minibatches_per_slice", int, 1000),
        static_minibatches=get("static_minibatches", int, None),
        batch_size=get("batch_size", int, 512),
        learning_rate=get("learning_rate", float, 0.1),
        epochs=get("epochs", int, 5),
        static_epochs=get("static_epochs", int, 5),
        clip_norm=get("clip_norm", float, 25.0),
        neg_power=get("neg_power", float, 0.75),
        init=get("init", str, "static"),
        init_scale=get("init_scale", float, 0.1),
        slice_order=get("slice_order", str, "chronological"),
        seed=get("seed", int, 0),
    )


@dataclass
class Checkpoint:
    """A reloadable training result: state, config echo and metric log."""

    state: EmbeddingState
    config: TrainingConfig
    epoch: int
    metrics: list[tuple[int, int, float, float, float]] = field(default_factory=list)
    valid_curve: list[tuple[int, int, float]] = field(default_factory=list)


def random_state(
    vocab_size: int, dim: int, n_slices: int, seed: int = 0, scale: float = 0.1
) -> EmbeddingState:
    rng = rng_from(seed, SALT_INIT)
    return EmbeddingState(
        center=rng.normal(0.0, scale, size=(n_slices, vocab_size, dim)),
        context=rng.normal(0.0, scale, size=(vocab_size, dim)),
    )


def init_dynamic(static_state: EmbeddingState, n_slices: int) -> EmbeddingState:
    """Broadcast a single-slice state to ``n_slices`` identical slices."""
    if static_state.n_slices != 1:
        raise ValueError("init_dynamic expects a single-slice state")
    return EmbeddingState(
        center=np.repeat(static_state.center, n_slices, axis=0).copy(),
        context=static_state.context.copy(),
    )


class _Adagrad:
    """Per-parameter squared-gradient accumulators for both matrices."""

    def __init__(self, state: EmbeddingState, learning_rate: float):
        self.g2_center = np.zeros_like(state.center)
        self.g2_context = np.zeros_like(state.context)
        self.lr = learning_rate

    def step_center(self, state, t, ids, grads):
        acc = self.g2_center[t][ids] + grads ** 2
        self.g2_center[t][ids] = acc
        state.center[t][ids] += self.lr * grads / (np.sqrt(acc) + _ADAGRAD_EPS)

    def step_context(self, state, ids, grads):
        acc = self.g2_context[ids] + grads ** 2
        self.g2_context[ids] = acc
        state.context[ids] += self.lr * grads / (np.sqrt(acc) + _ADAGRAD_EPS)


def _tied_prior_grads(state, prior, t, center_ids, context_ids, scale):
    """Prior terms credited to slice ``t``, restricted to touched rows.

    Returns (own_grad, coupled_slice, coupled_grad, context_grad); the
    coupled entries are None when slice ``t`` has no coupling partner.
    """
    lam0 = prior.init_precision
    own = np.zeros((len(center_ids), state.dim))
    context_grad = None
    coupled_slice = None
    coupled = None
    if t == 0:
        own -= scale * lam0 * state.center[0, center_ids]
        context_grad = -scale * lam0 * state.context[context_ids]
    if prior.variant == "dbe-i" or state.n_slices < 2 or t == 0:
        return own, coupled_slice, coupled, context_grad
    lam = prior.drift_precision
    if prior.variant == "dbe":
        anchor = t - 1
        weight = lam
    else:
        anchor = 0
        weight = lam if prior.variant == "dbe-nc" else lam * t
    pull = scale * weight * (state.center[t, center_ids] - state.center[anchor, center_ids])
    own -= pull
    coupled_slice = anchor
    coupled = pull
    return own, coupled_slice, coupled, context_grad


def _clip_scale(clip_norm: float, *arrays) -> float:
    sq = 0.0
    for arr in arrays:
        if arr is not None:
            sq += float((arr ** 2).sum())
    norm = np.sqrt(sq)
    return 1.0 if norm <= clip_norm else clip_norm / norm


def _train_phase(
    state: EmbeddingState,
    corpus: TimeSlicedCorpus,
    config: TrainingConfig,
    prior: PriorConfig,
    epochs: int,
    minibatches: int,
    sampler: NegativeSampler,
    draw_counter: int,
    phase: int,
    metrics: list | None,
    valid_curve: list | None,
) -> int:
    """Run ``epochs`` passes over all slices, chronological by default."""
    opt = _Adagrad(state, config.learning_rate)
    n_slices = corpus.n_slices
    for epoch in range(epochs):
        snapshot = state.copy()
        order = list(range(n_slices))
        if config.slice_order == "shuffled":
            perm = rng_from(config.seed, SALT_BATCH, phase, epoch).permutation(n_slices)
            order = [int(t) for t in perm]
        for t in order:
            stream = batches(
                corpus,
                t,
                window=config.window,
                batch_size=config.batch_size,
                split="train",
                seed=[config.seed, SALT_BATCH, phase, epoch, t],
                num_batches=minibatches,
            )
            pos_sum = 0.0
            neg_sum = 0.0
            n_batches = 0
            prior_scale = 1.0 / minibatches if minibatches else 1.0
            for batch in stream:
                negatives = sampler.draw(batch.center_ids, draw_counter)
                draw_counter += 1
                l_pos, l_neg, c_ids, c_grads, x_ids, x_grads = _likelihood_grads(
                    state, batch, negatives
                )
                if not np.isfinite(l_pos) or not np.isfinite(l_neg):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, slice {t}",
                        checkpoint=Checkpoint(snapshot, config, epoch, list(metrics or [])),
                    )
                own, coupled_t, coupled, ctx_prior = _tied_prior_grads(
                    state, prior, t, c_ids, x_ids, prior_scale
                )
                c_grads = c_grads + own
                if ctx_prior is not None:
                    x_grads = x_grads + ctx_prior
                scale = _clip_scale(config.clip_norm, c_grads, coupled, x_grads)
                if scale != 1.0:
                    c_grads = c_grads * scale
                    x_grads = x_grads * scale
                    if coupled is not None:
                        coupled = coupled * scale
                opt.step_center(state, t, c_ids, c_grads)
                if coupled is not None:
                    opt.step_center(state, coupled_t, c_ids, coupled)
                opt.step_context(state, x_ids, x_grads)
                pos_sum += l_pos
                neg_sum += l_neg
                n_batches += 1
            if metrics is not None and n_batches:
                full_prior = loss_prior(state, prior)
                metrics.append(
                    (epoch, t, pos_sum / n_batches, neg_sum / n_batches, full_prior)
                )
                if not np.isfinite(full_prior):
                    raise TrainingDiverged(
                        f"non-finite prior at epoch {epoch}, slice {t}",
                        checkpoint=Checkpoint(snapshot, config, epoch, list(metrics)),
                    )
            if valid_curve is not None and n_batches:
                value, n_eval = evaluation.split_log_prob(state, corpus, t, "valid", config.window)
                if n_eval:
                    valid_curve.append((epoch, t, value))
    return draw_counter


def train_static(
    corpus: TimeSlicedCorpus,
    config: TrainingConfig,
    metrics: list | None = None,
    valid_curve: list | None = None,
    vocab: Vocabulary | None = None,
) -> EmbeddingState:
    """Train a single-slice model on the whole corpus, ignoring time.

    Only the two norm penalties of the prior apply.  Per epoch the merged
    corpus receives ``static_minibatches`` batches (default: T times the
    per-slice count).  Deterministic under a fixed config seed.
    """
    if corpus.token_count() == 0:
        raise ValueError("cannot train on an empty corpus")
    merged = corpus.merged()
    state = random_state(corpus.vocab_size, config.dim, 1, config.seed, config.init_scale)
    if config.static_epochs == 0:
        return state
    minibatches = (
        config.static_minibatches
        if config.static_minibatches is not None
        else corpus.n_slices * config.minibatches_per_slice
    )
    sampler = _make_sampler(corpus, config, vocab)
    static_prior = replace(config.prior, variant="dbe-i")
    _train_phase(
        state,
        merged,
        config,
        static_prior,
        config.static_epochs,
        minibatches,
        sampler,
        draw_counter=0,
        phase=0,
        metrics=metrics,
        valid_curve=valid_curve,
    )
    return state


def _make_sampler(corpus, config, vocab):
    if vocab is not None:
        return NegativeSampler.from_vocabulary(vocab, config.negatives, config.neg_power, config.seed)
    # No vocabulary at hand: fall back to post-subsampling token counts.
    counts = np.zeros(corpus.vocab_size, dtype=np.int64)
    for t in range(corpus.n_slices):
        ids = corpus.flat(t).ids
        if ids.size:
            counts += np.bincount(ids, minlength=corpus.vocab_size)
    weights = np.where(counts > 0, counts, 1).astype(np.float64) ** config.neg_power
    return NegativeSampler(weights=weights, k=config.negatives, seed=config.seed)


def train_dynamic(
    corpus: TimeSlicedCorpus,
    config: TrainingConfig,
    init_state: EmbeddingState,
    vocab: Vocabulary | None = None,
) -> Checkpoint:
    """Train per-slice embeddings from ``init_state``.

    Each epoch visits slices chronologically, drawing
    ``minibatches_per_slice`` batches per slice.  The metric log records per
    slice the mean batch likelihood terms and the exact full prior; the
    validation curve records the summed validation log-probability.
    """
    if init_state.n_slices != corpus.n_slices:
        raise ValueError(
            f"init state has {init_state.n_slices} slices, corpus has {corpus.n_slices}"
        )
    if init_state.vocab_size != corpus.vocab_size:
        raise ValueError("init state and corpus disagree on vocabulary size")
    state = init_state.copy()
    metrics: list[tuple[int, int, float, float, float]] = []
    valid_curve: list[tuple[int, int, float]] = []
    sampler = _make_sampler(corpus, config, vocab)
    _train_phase(
        state,
        corpus,
        config,
        config.prior,
        config.epochs,
        config.minibatches_per_slice,
        sampler,
        draw_counter=10 ** 9,  # disjoint from the static phase's draw stream
        phase=1,
        metrics=metrics,
        valid_curve=valid_curve,
    )
    return Checkpoint(state, config, config.epochs, metrics, valid_curve)


def save_checkpoint(
    ckpt: Checkpoint, words: list[str], out_dir: str | Path, extra_config: dict | None = None
) -> None:
    """Write a model directory: embeddings, vocab echo, config and logs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_embeddings(ckpt.state, words, out / "center.tsv", out / "context.tsv")
    text = config_to_text(ckpt.config)
    if extra_config:
        text += "".join(f"{k} = {v}\n" for k, v in extra_config.items())
    (out / "config.txt").write_text(text, encoding="utf-8")
    with (out / "metrics.tsv").open("w", encoding="utf-8") as fh:
        for epoch, t, l_pos, l_neg, l_prior in ckpt.metrics:
            fh.write(f"{epoch}\t{t}\t{l_pos!r}\t{l_neg!r}\t{l_prior!r}\n")
    with (out / "valid_lpos.tsv").open("w", encoding="utf-8") as fh:
        for epoch, t, value in ckpt.valid_curve:
            fh.write(f"{epoch}\t{t}\t{value!r}\n")
    (out / "epoch.txt").write_text(f"{ckpt.epoch}\n", encoding="utf-8")


def load_checkpoint(model_dir: str | Path) -> tuple[Checkpoint, list[str]]:
    """Reload a model directory written by :func:`save_checkpoint`."""
    path = Path(model_dir)
    state, words = load_embeddings(path / "center.tsv", path / "context.tsv")
    config = config_from_text((path / "config.txt").read_text(encoding="utf-8"))
    metrics = []
    for line in (path / "metrics.tsv").read_text(encoding="utf-8").splitlines():
        epoch, t, l_pos, l_neg, l_prior = line.split("\t")
        metrics.append((int(epoch), int(t), float(l_pos), float(l_neg), float(l_prior)))
    valid_curve = []
    for line in (path / "valid_lpos.tsv").read_text(encoding="utf-8").splitlines():
        epoch, t, value = line.split("\t")
        valid_curve.append((int(epoch), int(t), float(value)))
    epoch = int((path / "epoch.txt").read_text(encoding="utf-8").strip())
    return Checkpoint(state, config, epoch, metrics, valid_curve), words


def resolve_init_state(
    init: str, corpus: TimeSlicedCorpus, config: TrainingConfig, vocab: Vocabulary | None = None
) -> tuple[EmbeddingState, EmbeddingState | None]:
    """Build the dynamic initial state for ``init`` in {static, random, path}.

    Returns (init_state, static_state); the static state is only present for
    ``init == "static"`` so callers can save or evaluate it.
    """
    if init == "static":
        static = train_static(corpus, config, vocab=vocab)
        return init_dynamic(static, corpus.n_slices), static
    if init == "random":
        return (
            random_state(corpus.vocab_size, config.dim, corpus.n_slices, config.seed, config.init_scale),
            None,
        )
    path = Path(init)
    state, _ = load_embeddings(path / "center.tsv", path / "context.tsv")
    if state.vocab_size != corpus.vocab_size:
        raise DataFormatError(f"{path}: vocabulary size differs from the corpus")
    if state.n_slices == 1:
        return init_dynamic(state, corpus.n_slices), state
    if state.n_slices == corpus.n_slices:
        return state, None
    raise DataFormatError(
        f"{path}: has {state.n_slices} slices, expected 1 or {corpus.n_slices}"
    )


class DynamicWordEmbedding(BaseEstimator):
    """Estimator interface around static pretraining plus dynamic training.

    Parameters mirror :class:`TrainingConfig`; ``init_precision=None``
    defaults to ``drift_precision / 1000``.  After ``fit`` the trained
    parameters live in ``state_`` (and ``static_state_`` when ``init`` is
    "static").
    """

    def __init__(
        self,
        variant: str = "dbe",
        dim: int = 100,
        window: int = 4,
        negatives: int = 10,
        drift_precision: float = 1.0,
        init_precision: float | None = None,
        epochs: int = 5,
        static_epochs: int = 5,
        minibatches_per_slice: int = 1000,
        static_minibatches: int | None = None,
        batch_size: int = 512,
        learning_rate: float = 0.1,
        clip_norm: float = 25.0,
        neg_power: float = 0.75,
        init: str = "static",
        init_scale: float = 0.1,
        slice_order: str = "chronological",
        seed: int = 0,
    ):
        self.variant = variant
        self.dim = dim
        self.window = window
        self.negatives = negatives
        self.drift_precision = drift_precision
        self.init_precision = init_precision
        self.epochs = epochs
        self.static_epochs = static_epochs
        self.minibatches_per_slice = minibatches_per_slice
        self.static_minibatches = static_minibatches
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.neg_power = neg_power
        self.init = init
        self.init_scale = init_scale
        self.slice_order = slice_order
        self.seed = seed

    def build_config(self) -> TrainingConfig:
        lam0 = (
            self.drift_precision / 1000.0
            if self.init_precision is None
            else self.init_precision
        )
        return TrainingConfig(
            prior=PriorConfig(self.variant, self.drift_precision, lam0),
            window=self.window,
            dim=self.dim,
            negatives=self.negatives,
            minibatches_per_slice=self.minibatches_per_slice,
            static_minibatches=self.static_minibatches,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            static_epochs=self.static_epochs,
            clip_norm=self.clip_norm,
            neg_power=self.neg_power,
            init=self.init,
            init_scale=self.init_scale,
            slice_order=self.slice_order,
            seed=self.seed,
        )

    def fit(self, corpus: TimeSlicedCorpus, vocab: Vocabulary | None = None):
        config = self.build_config()
        init_state, static_state = resolve_init_state(config.init, corpus, config, vocab)
        checkpoint = train_dynamic(corpus, config, init_state, vocab)
        self.config_ = config
        self.static_state_ = static_state
        self.state_ = checkpoint.state
        self.checkpoint_ = checkpoint
        return self

    def score(self, corpus: TimeSlicedCorpus, split: str = "valid") -> float:
        """Mean scaled held-out positive log-probability over slices."""
        check_is_fitted(self, "state_")
        curve = evaluation.evaluate(
            self.state_, corpus, split=split, window=self.window, batch_size=self.batch_size
        )
        return curve.mean
