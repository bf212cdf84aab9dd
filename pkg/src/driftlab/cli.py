"""driftlab command line: synth, slice, train, eval, drift, align, xdrift,
classify, project.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical abort.  Every invocation writes a manifest next to its outputs,
and the DRIFTLAB_LOG environment variable (error/warn/info/debug) controls
logging.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import crosslingual, drift, evaluation, synth, trainer
from .corpus import (
    build_vocabulary,
    ingest,
    load_corpus,
    load_stoplist,
    load_vocabulary,
    save_corpus,
    save_vocabulary,
    slice_documents,
)
from .errors import DataFormatError, TrainingDiverged
from .manifest import write_manifest
from .model import load_embeddings
from .trainer import (
    TrainingConfig,
    config_from_text,
    parse_key_values,
    save_checkpoint,
)

logger = logging.getLogger(__name__)

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class _UsageError(Exception):
    def __init__(self, message: str, parser: argparse.ArgumentParser):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors instead of argparse's 2
        raise _UsageError(message, self)


def _setup_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get("DRIFTLAB_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_model(model_dir: Path):
    """Return (state, words, config dict) from a saved model directory."""
    state, words = load_embeddings(model_dir / "center.tsv", model_dir / "context.tsv")
    config = parse_key_values((model_dir / "config.txt").read_text(encoding="utf-8"))
    return state, words, config


def _load_model_vocab(model_dir: Path):
    return load_vocabulary(model_dir / "vocab.tsv")


# ---------------------------------------------------------------- synth

def _cmd_synth(args) -> int:
    started = time.time()
    spec = synth.spec_from_file(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    out = Path(args.out)
    paths = synth.generate(spec, out)
    write_manifest(
        out,
        "synth",
        {"spec": str(args.spec), "out": str(out), **{k: str(v) for k, v in paths.items()}},
        spec.seed,
        inputs=[args.spec],
        started=started,
    )
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0


# ---------------------------------------------------------------- slice

def _cmd_slice(args) -> int:
    started = time.time()
    stoplist = load_stoplist(args.stoplist)
    docs = list(ingest(args.input, args.date_format))
    vocab = build_vocabulary(docs, args.v_max, stoplist)
    corpus = slice_documents(
        docs,
        vocab,
        granularity=args.granularity,
        seed=args.seed,
        subsample_threshold=args.subsample_threshold,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out / "corpus.dlc")
    save_vocabulary(vocab, out / "vocab.tsv")
    write_manifest(
        out,
        "slice",
        {
            "input": str(args.input),
            "granularity": args.granularity,
            "v_max": args.v_max,
            "stoplist": args.stoplist,
            "subsample_threshold": args.subsample_threshold,
            "date_format": args.date_format,
            "slices": corpus.n_slices,
            "tokens": corpus.token_count(),
            "total_tokens_raw": vocab.total_tokens,
        },
        args.seed,
        inputs=[args.input],
        started=started,
    )
    print(f"sliced {corpus.token_count()} tokens into {corpus.n_slices} {args.granularity} slices")
    return 0


# ---------------------------------------------------------------- train

def _resolve(explicit, config_kv: dict, key: str, cast, default):
    if explicit is not None:
        return explicit
    raw = config_kv.get(key, "")
    return cast(raw) if raw != "" else default


def _train_config(args) -> TrainingConfig:
    kv = parse_key_values(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    granularity = _resolve(args.granularity, kv, "granularity", str, "annual")
    default_minibatches = 100 if granularity == "monthly" else 1000
    lam = _resolve(args.lam, kv, "lambda", float, 1.0)
    from .model import PriorConfig

    return TrainingConfig(
        prior=PriorConfig(
            variant=_resolve(args.variant, kv, "variant", str, "dbe"),
            drift_precision=lam,
            init_precision=_resolve(args.lambda0, kv, "lambda0", float, lam / 1000.0),
        ),
        window=_resolve(args.window, kv, "window", int, 4),
        dim=_resolve(args.dim, kv, "dim", int, 100),
        negatives=_resolve(args.negatives, kv, "negatives", int, 10),
        minibatches_per_slice=_resolve(
            args.minibatches, kv, "minibatches_per_slice", int, default_minibatches
        ),
        static_minibatches=_resolve(args.static_minibatches, kv, "static_minibatches", int, None),
        batch_size=_resolve(args.batch_size, kv, "batch_size", int, 512),
        learning_rate=_resolve(args.learning_rate, kv, "learning_rate", float, 0.1),
        epochs=_resolve(args.epochs, kv, "epochs", int, 5),
        static_epochs=_resolve(args.static_epochs, kv, "static_epochs", int, 5),
        clip_norm=_resolve(args.clip_norm, kv, "clip_norm", float, 25.0),
        neg_power=_resolve(args.neg_power, kv, "neg_power", float, 0.75),
        init=_resolve(args.init, kv, "init", str, "static"),
        init_scale=_resolve(args.init_scale, kv, "init_scale", float, 0.1),
        slice_order=_resolve(args.slice_order, kv, "slice_order", str, "chronological"),
        seed=_resolve(args.seed, kv, "seed", int, 0),
    )


def _cmd_train(args) -> int:
    started = time.time()
    corpus_dir = Path(args.corpus)
    granularity = args.granularity or "annual"
    corpus = load_corpus(corpus_dir / "corpus.dlc", granularity=granularity)
    vocab = load_vocabulary(corpus_dir / "vocab.tsv")
    config = _train_config(args)
    out = Path(args.out)
    extra = {"corpus": str(corpus_dir), "granularity": granularity}

    try:
        init_state, static_state = trainer.resolve_init_state(config.init, corpus, config, vocab)
        if static_state is not None and config.init == "static":
            static_ckpt = trainer.Checkpoint(static_state, config, config.static_epochs)
            save_checkpoint(static_ckpt, vocab.words, out / "static", extra)
            save_vocabulary(vocab, out / "static" / "vocab.tsv")
        checkpoint = trainer.train_dynamic(corpus, config, init_state, vocab)
    except TrainingDiverged as exc:
        if exc.checkpoint is not None:
            save_checkpoint(exc.checkpoint, vocab.words, out / "aborted", extra)
        raise
    save_checkpoint(checkpoint, vocab.words, out, extra)
    save_vocabulary(vocab, out / "vocab.tsv")
    write_manifest(
        out,
        "train",
        {**{k: g(config) for k, g in trainer._CONFIG_KEYS}, **extra},
        config.seed,
        inputs=[corpus_dir],
        started=started,
    )
    print(f"trained {config.prior.variant} for {config.epochs} epochs -> {out}")
    return 0


# ---------------------------------------------------------------- eval

def _cmd_eval(args) -> int:
    started = time.time()
    model_dir = Path(args.model)
    state, _, config = _load_model(model_dir)
    corpus_dir = Path(args.corpus) if args.corpus else Path(config.get("corpus", ""))
    if not corpus_dir or not (corpus_dir / "corpus.dlc").exists():
        raise DataFormatError(
            f"cannot locate the corpus cache for {model_dir}; pass --corpus"
        )
    corpus = load_corpus(corpus_dir / "corpus.dlc")
    window = int(config.get("window", 4) or 4)
    batch_size = args.batch_size or int(config.get("batch_size", 512) or 512)
    curve = evaluation.evaluate(
        state,
        corpus,
        split=args.split,
        window=window,
        batch_size=batch_size,
        threads=args.threads,
        corpus_tag=str(corpus_dir),
    )
    out = Path(args.out)
    with out.open("w", encoding="utf-8") as fh:
        for t, value in enumerate(curve.per_slice):
            fh.write(f"{t}\t{'' if np.isnan(value) else repr(float(value))}\n")
        fh.write(f"mean\t{curve.mean!r}\n")
    write_manifest(
        out,
        "eval",
        {"model": str(model_dir), "corpus": str(corpus_dir), "split": args.split,
         "batch_size": batch_size, "scale": curve.scale, "mean": curve.mean},
        int(config.get("seed", 0) or 0),
        inputs=[model_dir, corpus_dir],
        started=started,
    )
    print(f"{args.split} mean scaled log-probability: {curve.mean:.6f}")
    return 0


def read_curve(path: str | Path) -> evaluation.EvalCurve:
    """Rebuild an EvalCurve from a curve.tsv and its sibling manifest."""
    import json

    values = []
    mean = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        label, raw = line.split("\t")
        if label == "mean":
            mean = float(raw)
        else:
            values.append(float(raw) if raw else float("nan"))
    if mean is None or not values:
        raise DataFormatError(f"{path}: not a curve file (missing rows or mean line)")
    split, tag, scale = "test", "", 1.0
    manifest = Path(str(path) + ".manifest.json")
    if manifest.exists():
        config = json.loads(manifest.read_text(encoding="utf-8")).get("config", {})
        split = config.get("split", split)
        tag = config.get("corpus", tag)
        scale = float(config.get("scale", scale))
    return evaluation.EvalCurve(per_slice=np.array(values), mean=mean, split=split,
                                scale=scale, corpus_tag=tag)


def _cmd_compare(args) -> int:
    started = time.time()
    curves = {}
    for entry in args.curve:
        if "=" not in entry:
            raise DataFormatError(f"--curve expects name=path, got {entry!r}")
        name, path = entry.split("=", 1)
        curves[name] = read_curve(path)
    ranking = evaluation.compare(curves)
    out = Path(args.out)
    with out.open("w", encoding="utf-8") as fh:
        for rank, (name, mean) in enumerate(ranking, 1):
            fh.write(f"{rank}\t{name}\t{mean!r}\n")
    write_manifest(
        out,
        "compare",
        {"curves": list(args.curve), "best": ranking[0][0]},
        None,
        inputs=[entry.split("=", 1)[1] for entry in args.curve],
        started=started,
    )
    print(evaluation.format_comparison(ranking), end="")
    return 0


# ---------------------------------------------------------------- drift

def _cmd_drift(args) -> int:
    started = time.time()
    model_dir = Path(args.model)
    state, words, config = _load_model(model_dir)
    report = drift.drift_report(state, t0=args.t0, metric=args.metric)
    out = Path(args.out)

    with out.open("w", encoding="utf-8") as fh:
        header = "\t".join(f"d{t}" for t in range(report.n_slices))
        fh.write(f"word\ttotal\tmean\tnormalized\t{header}\n")
        for v, word in enumerate(words):
            row = "\t".join(repr(float(x)) for x in report.distances[v])
            fh.write(
                f"{word}\t{report.total_drift[v]!r}\t{report.mean_drift[v]!r}"
                f"\t{report.normalized_mean[v]!r}\t{row}\n"
            )

    top_path = out.with_name(out.stem + "_top" + out.suffix)
    with top_path.open("w", encoding="utf-8") as fh:
        for word, total in drift.top_drifting(report, args.top, words):
            fh.write(f"{word}\t{total!r}\n")

    hist_path = out.with_name(out.stem + "_hist" + out.suffix)
    with hist_path.open("w", encoding="utf-8") as fh:
        for t in range(report.n_slices):
            if t == args.t0:
                continue
            counts, edges = drift.drift_histogram(report, t, bins=args.bins, log_bins=args.log_bins)
            for low, high, count in zip(edges[:-1], edges[1:], counts):
                fh.write(f"{t}\t{low!r}\t{high!r}\t{int(count)}\n")

    ks = [int(k) for k in args.summary_ks.split(",") if k]
    usable_ks = [k for k in ks if k <= report.vocab_size]
    if len(usable_ks) < len(ks):
        logger.warning(
            "summary k values above the vocabulary size (%d) skipped: %s",
            report.vocab_size, [k for k in ks if k > report.vocab_size],
        )
    summary_path = out.with_name(out.stem + "_summary" + out.suffix)
    with summary_path.open("w", encoding="utf-8") as fh:
        if usable_ks:
            for k, (mean, excluded) in drift.normalized_drift_summary(report, usable_ks).items():
                fh.write(f"{k}\t{mean!r}\t{excluded}\n")

    write_manifest(
        out,
        "drift",
        {"model": str(model_dir), "t0": args.t0, "top": args.top, "metric": args.metric,
         "bins": args.bins, "log_bins": args.log_bins, "summary_ks": args.summary_ks,
         "outputs": [str(top_path), str(hist_path), str(summary_path)]},
        int(config.get("seed", 0) or 0),
        inputs=[model_dir],
        started=started,
    )
    print(f"wrote {out}, {top_path}, {hist_path}, {summary_path}")
    return 0


# ---------------------------------------------------------------- align

def _cmd_align(args) -> int:
    started = time.time()
    src_dir, tgt_dir = Path(args.src), Path(args.tgt)
    src_state, src_words, _ = _load_model(src_dir)
    tgt_state, tgt_words, _ = _load_model(tgt_dir)
    src_vocab = _load_model_vocab(src_dir)
    tgt_vocab = _load_model_vocab(tgt_dir)
    pairs = crosslingual.load_lexicon_pairs(args.lexicon)
    lexicon = crosslingual.BilingualLexicon.from_pairs(pairs, src_vocab, tgt_vocab)
    src_norm = crosslingual.normalize_state(src_state, src_words)
    tgt_norm = crosslingual.normalize_state(tgt_state, tgt_words)
    amap = crosslingual.fit_alignment(src_norm, src_vocab, tgt_norm, tgt_vocab, lexicon)
    out = Path(args.out)
    crosslingual.save_alignment(amap, out)

    def write_static(state, words, vocab, source_dir, target_dir):
        ckpt = trainer.Checkpoint(
            state, config_from_text((source_dir / "config.txt").read_text(encoding="utf-8")), 0
        )
        save_checkpoint(ckpt, words, target_dir)
        save_vocabulary(vocab, target_dir / "vocab.tsv")
        write_manifest(target_dir, "align", {"src": str(source_dir), "map": str(out)}, None, started=started)

    if args.aligned_out:
        aligned = crosslingual.apply_alignment(amap, src_norm)
        write_static(aligned, src_words, src_vocab, src_dir, Path(args.aligned_out))
    if args.tgt_normalized_out:
        write_static(tgt_norm, tgt_words, tgt_vocab, tgt_dir, Path(args.tgt_normalized_out))
    write_manifest(
        out,
        "align",
        {"src": str(src_dir), "tgt": str(tgt_dir), "lexicon": str(args.lexicon),
         "pairs": len(lexicon), "residual": amap.residual,
         "aligned_out": args.aligned_out or ""},
        None,
        inputs=[src_dir, tgt_dir, args.lexicon],
        started=started,
    )
    print(f"aligned {len(lexicon)} pairs, residual {amap.residual:.6g} -> {out}")
    return 0


# ---------------------------------------------------------------- xdrift

def _cmd_xdrift(args) -> int:
    started = time.time()
    src_dir, tgt_dir = Path(args.src), Path(args.tgt)
    src_state, _, _ = _load_model(src_dir)
    tgt_state, _, _ = _load_model(tgt_dir)
    src_vocab = _load_model_vocab(src_dir)
    tgt_vocab = _load_model_vocab(tgt_dir)
    pairs = crosslingual.load_lexicon_pairs(args.lexicon)
    lexicon = crosslingual.BilingualLexicon.from_pairs(pairs, src_vocab, tgt_vocab)
    records, skipped = crosslingual.cross_drift(
        src_state, src_vocab, tgt_state, tgt_vocab, lexicon, t0=args.t0, t_last=args.t_last
    )
    if skipped:
        logger.warning("skipped %d lexicon pairs missing from a vocabulary", skipped)
    out = Path(args.out)
    with out.open("w", encoding="utf-8") as fh:
        fh.write("src_word\ttgt_word\tdrift_src\tdrift_tgt\tsim_first\tsim_last\tsim_drift\n")
        for r in records:
            fh.write(
                f"{r.src_word}\t{r.tgt_word}\t{r.drift_src!r}\t{r.drift_tgt!r}"
                f"\t{r.sim_first!r}\t{r.sim_last!r}\t{r.sim_drift!r}\n"
            )
    write_manifest(
        out,
        "xdrift",
        {"src": str(src_dir), "tgt": str(tgt_dir), "lexicon": str(args.lexicon),
         "t0": args.t0, "t_last": args.t_last, "records": len(records), "skipped": skipped},
        None,
        inputs=[src_dir, tgt_dir, args.lexicon],
        started=started,
    )
    print(f"wrote {len(records)} records -> {out}")
    return 0


def read_records(path: str | Path) -> list[crosslingual.CrossDriftRecord]:
    """Read a records.tsv written by the xdrift command."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("src_word\t"):
        raise DataFormatError(f"{path}: missing xdrift header line")
    records = []
    for lineno, line in enumerate(lines[1:], 2):
        parts = line.split("\t")
        if len(parts) != 7:
            raise DataFormatError(f"{path}:{lineno}: expected 7 columns")
        records.append(
            crosslingual.CrossDriftRecord(
                src_word=parts[0],
                tgt_word=parts[1],
                drift_src=float(parts[2]),
                drift_tgt=float(parts[3]),
                sim_first=float(parts[4]),
                sim_last=float(parts[5]),
            )
        )
    return records


# ---------------------------------------------------------------- classify

def _cmd_classify(args) -> int:
    started = time.time()
    records = read_records(args.records)
    result = crosslingual.classify(records, percentile=args.cut_percentile)
    out = Path(args.out)
    with out.open("w", encoding="utf-8") as fh:
        fh.write("src_word\ttgt_word\tclass\tlabel\n")
        for rec, code in result.assignments:
            fh.write(f"{rec.src_word}\t{rec.tgt_word}\t{code}\t{crosslingual.CLASS_LABELS[code]}\n")
    prop_path = out.with_name(out.stem + "_proportions" + out.suffix)
    with prop_path.open("w", encoding="utf-8") as fh:
        for code in crosslingual.CLASS_CODES:
            fh.write(f"{code}\t{result.counts[code]}\t{float(result.proportions[code])!r}\n")
    write_manifest(
        out,
        "classify",
        {"records": str(args.records), "cut_percentile": args.cut_percentile,
         "counts": result.counts,
         "thresholds": vars(result.thresholds)},
        None,
        inputs=[args.records],
        started=started,
    )
    for code in crosslingual.CLASS_CODES:
        share = result.proportions[code]
        print(f"class {code} ({crosslingual.CLASS_LABELS[code]}): {result.counts[code]} ({float(share):.1%})")
    return 0


# ---------------------------------------------------------------- project

def _cmd_project(args) -> int:
    started = time.time()
    models = []
    for entry in args.model:
        path = Path(entry)
        state, _, _ = _load_model(path)
        models.append((path.name, state, _load_model_vocab(path)))
    words = [w for w in args.words.split(",") if w]
    points = crosslingual.project_2d(models, words, n_neighbors=args.m)
    out = Path(args.out)
    with out.open("w", encoding="utf-8") as fh:
        fh.write("model\tword\tslice\tkind\tfocus\tx\ty\n")
        for p in points:
            fh.write(f"{p.model}\t{p.word}\t{p.t}\t{p.kind}\t{p.anchor}\t{p.x!r}\t{p.y!r}\n")
    # plain neighbour lists so an external projector can work from the
    # full-dimensional embedding files
    neighbors_path = out.with_name(out.stem + "_neighbors" + out.suffix)
    with neighbors_path.open("w", encoding="utf-8") as fh:
        fh.write("model\tfocus\tslice\trank\tneighbor\tcosine\n")
        for name, state, vocab in models:
            for word in words:
                if word not in vocab:
                    continue
                for t in range(state.n_slices):
                    ranked = drift.nearest_neighbors(state, vocab, word, t, args.m)
                    for rank, (neighbor, cosine) in enumerate(ranked, 1):
                        fh.write(f"{name}\t{word}\t{t}\t{rank}\t{neighbor}\t{cosine!r}\n")
    write_manifest(
        out,
        "project",
        {"models": [str(m) for m in args.model], "words": args.words, "m": args.m,
         "points": len(points), "neighbors": str(neighbors_path)},
        None,
        inputs=list(args.model),
        started=started,
    )
    print(f"wrote {len(points)} projected points -> {out}, neighbours -> {neighbors_path}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="driftlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic planted-drift corpus")
    p.add_argument("--spec", required=True, help="spec file (key = value, plant lines)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the seed in the spec file")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("slice", help="ingest dated text, build vocab, slice and split")
    p.add_argument("--input", required=True, help="UTF-8 'YYYY-MM-DD<TAB>text' lines")
    p.add_argument("--out", required=True)
    p.add_argument("--granularity", default="annual", help="annual, monthly or a day count")
    p.add_argument("--v-max", type=int, default=40000)
    p.add_argument("--stoplist", default="none", help="'en', 'fr', 'none' or a file")
    p.add_argument("--subsample-threshold", type=float, default=1e-5)
    p.add_argument("--date-format", default="%Y-%m-%d")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_slice)

    p = sub.add_parser("train", help="train static + dynamic embeddings")
    p.add_argument("--corpus", required=True, help="directory written by 'slice'")
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=["dbe", "dbe-i", "dbe-nc", "dbe-sc"], default=None)
    p.add_argument("--granularity", choices=["annual", "monthly"], default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--lambda0", type=float, default=None)
    p.add_argument("--init", default=None, help="static, random, or a saved model directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--static-epochs", type=int, default=None)
    p.add_argument("--minibatches", type=int, default=None)
    p.add_argument("--static-minibatches", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--negatives", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--neg-power", type=float, default=None)
    p.add_argument("--init-scale", type=float, default=None)
    p.add_argument("--slice-order", choices=["chronological", "shuffled"], default=None)
    p.add_argument("--config", default=None, help="key = value file; flags override it")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="held-out scaled log-probability per slice")
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=["valid", "test"], default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--corpus", default=None, help="override the corpus recorded in the model")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("compare", help="rank eval curves by mean (best bolded)")
    p.add_argument("--curve", action="append", required=True,
                   help="name=curve.tsv; repeat per model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("drift", help="per-word drift report, top-k and histograms")
    p.add_argument("--model", required=True)
    p.add_argument("--t0", type=int, default=0)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--metric", choices=["euclidean", "cosine"], default="euclidean")
    p.add_argument("--bins", type=int, default=60)
    p.add_argument("--log-bins", action="store_true")
    p.add_argument("--summary-ks", default="10,500")
    p.set_defaults(func=_cmd_drift)

    p = sub.add_parser("align", help="fit the source-to-target orthogonal map")
    p.add_argument("--src", required=True, help="source static model directory")
    p.add_argument("--tgt", required=True, help="target static model directory")
    p.add_argument("--lexicon", required=True, help="'src<TAB>tgt' word pairs")
    p.add_argument("--out", required=True, help="binary map file")
    p.add_argument("--aligned-out", default=None,
                   help="also write the aligned source static model here")
    p.add_argument("--tgt-normalized-out", default=None,
                   help="also write the normalized target static model here")
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("xdrift", help="cross-lingual similarity drift records")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--t0", type=int, default=0)
    p.add_argument("--t-last", type=int, default=None)
    p.set_defaults(func=_cmd_xdrift)

    p = sub.add_parser("classify", help="assign behaviour classes to xdrift records")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cut-percentile", type=float, default=None,
                   help="cut at this percentile instead of the mean")
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("project", help="2D projection of focus words and their neighbours")
    p.add_argument("--model", action="append", required=True,
                   help="model directory; repeat for several languages")
    p.add_argument("--words", required=True, help="comma-separated focus words")
    p.add_argument("--m", type=int, default=5, help="neighbours per focus word and slice")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_project)

    return parser


def dispatch(argv) -> int:
    """Run one CLI invocation; returns the process exit code."""
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        exc.parser.print_usage(sys.stderr)
        print(f"driftlab: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help and friends
        return int(exc.code or 0)
    try:
        return int(args.func(args) or 0)
    except TrainingDiverged as exc:
        print(f"driftlab: numerical abort: {exc}", file=sys.stderr)
        return 3
    except (DataFormatError, ValueError, OSError) as exc:
        print(f"driftlab: error: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
