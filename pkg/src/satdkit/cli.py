"""Command-line pipelines: prep, train, eval, predict, keywords, link, baseline.

Every command writes its outputs plus a run_manifest.json (command, flags,
seed, input hashes, tool version, duration) into the output directory. Exit
codes: 0 success, 1 computational failure, 2 input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import (
    DatasetError,
    DebtLabel,
    LabeledCorpus,
    Record,
    SourceKind,
    dump_jsonl,
    label_for_class,
    load_bot_list,
    load_jsonl,
    normalize,
    remove_bot_records,
    strip_code_blocks,
    tokenize,
)
from .embedding import NON_STATIC, STATIC, build_vocab, load_vec_file, random_init
from .keywords import extract_keywords, shared_keyword_matrix
from .linker import build_flows, extract_refs, find_related, load_stop_words, related_counts
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .train_eval import (
    CVReport,
    TASKS_PROPORTIONAL,
    TASKS_UNIFORM,
    TrainConfig,
    WEIGHT_INVERSE_FREQUENCY,
    WEIGHT_NONE,
    cross_validate,
    train_multitask,
)
from . import baselines, report

log = logging.getLogger("satdkit")

EXIT_OK = 0
EXIT_COMPUTE = 1
EXIT_INPUT = 2


def _hash_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(outdir: Path, args: argparse.Namespace, inputs: list[Path], started: float) -> None:
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    for key, value in flags.items():
        if isinstance(value, Path):
            flags[key] = str(value)
        elif isinstance(value, list):
            flags[key] = [str(v) for v in value]
    manifest = {
        "command": args.command,
        "flags": flags,
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): _hash_file(p) for p in inputs},
        "version": __version__,
        "duration_seconds": round(time.monotonic() - started, 3),
    }
    report.write_json(manifest, outdir / "run_manifest.json")


def _outdir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_region_sizes(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(part) for part in text.split(",") if part)
    except ValueError:
        raise DatasetError(f"bad --region-sizes value '{text}'") from None
    if not sizes:
        raise DatasetError("--region-sizes must list at least one size")
    return sizes


def _check_conflicts(args: argparse.Namespace) -> None:
    if getattr(args, "static", False) and getattr(args, "non_static", False):
        raise DatasetError("conflicting flags: --static and --non-static")
    if getattr(args, "weighted_loss", False) and getattr(args, "no_weighted_loss", False):
        raise DatasetError("conflicting flags: --weighted-loss and --no-weighted-loss")


def _embedding_mode(args: argparse.Namespace) -> str:
    """Explicit flag wins; otherwise static for trained vectors (the best
    reported setup) and non-static for random initialization."""
    if getattr(args, "static", False):
        return STATIC
    if getattr(args, "non_static", False):
        return NON_STATIC
    return NON_STATIC if args.embeddings == "random" else STATIC


def _merge_extracted_refs(rec: Record) -> None:
    # union with any refs the exporter already supplied
    found = extract_refs(rec.raw_text)
    rec.refs.issue_keys |= found.issue_keys
    rec.refs.pr_numbers |= found.pr_numbers
    rec.refs.commit_hashes |= found.commit_hashes


def _cleanse_record(rec: Record) -> Record:
    _merge_extracted_refs(rec)
    rec.clean_text = normalize(strip_code_blocks(rec.raw_text))
    rec.tokens = tokenize(rec.clean_text)
    return rec


def _load_records(paths: list[Path]) -> list[Record]:
    records: list[Record] = []
    seen: set[str] = set()
    for path in paths:
        for rec in load_jsonl(path):
            if rec.id in seen:
                raise DatasetError(f"duplicate id '{rec.id}' across input files")
            seen.add(rec.id)
            records.append(rec)
    return records


def _ensure_tokens(records: list[Record]) -> None:
    for rec in records:
        if not rec.tokens:
            if not rec.clean_text:
                rec.clean_text = normalize(strip_code_blocks(rec.raw_text))
            rec.tokens = tokenize(rec.clean_text)


def _load_corpora(paths: list[Path]) -> list[LabeledCorpus]:
    """Labeled, tokenized corpora ordered by task id; empty/unlabeled dropped."""
    records = _load_records(paths)
    _ensure_tokens(records)
    by_source: dict[SourceKind, list[Record]] = {}
    skipped_unlabeled = 0
    skipped_empty = 0
    for rec in records:
        if rec.label is None:
            skipped_unlabeled += 1
            continue
        if not rec.tokens:
            skipped_empty += 1
            continue
        by_source.setdefault(rec.source, []).append(rec)
    if skipped_unlabeled:
        log.warning("skipped %d unlabeled record(s)", skipped_unlabeled)
    if skipped_empty:
        log.warning("skipped %d record(s) with no tokens after cleansing", skipped_empty)
    if not by_source:
        raise DatasetError("no labeled records in the input files")
    sources = sorted(by_source, key=lambda s: s.task_id)
    return [LabeledCorpus.from_records(by_source[s], s) for s in sources]


def _train_config(args: argparse.Namespace, num_tasks: int) -> TrainConfig:
    scheme = WEIGHT_NONE if getattr(args, "no_weighted_loss", False) else WEIGHT_INVERSE_FREQUENCY
    model = ModelConfig(
        region_sizes=_parse_region_sizes(args.region_sizes),
        feature_maps=args.feature_maps,
        num_tasks=num_tasks,
        num_classes=len(DebtLabel),
        dropout_rate=args.dropout,
        embedding_mode=_embedding_mode(args),
        max_len=args.max_len,
    )
    return TrainConfig(
        epochs=args.epochs,
        seed=args.seed,
        learning_rate=args.lr,
        class_weight_scheme=scheme,
        task_selection=args.task_selection,
        model=model,
    )


def _build_embedding(args: argparse.Namespace, vocab):
    mode = _embedding_mode(args)
    if args.embeddings == "random":
        return random_init(vocab, args.dim, args.seed, mode=mode)
    path = Path(args.embeddings)
    if not path.exists():
        raise DatasetError(f"embeddings file not found: {path}")
    return load_vec_file(path, vocab, args.dim, args.seed, mode=mode)


def cmd_prep(args: argparse.Namespace) -> list[Path]:
    outdir = _outdir(args)
    bots: set[str] = set()
    if args.bots:
        bots = load_bot_list(args.bots)
    else:
        log.warning("no --bots list given; bot removal skipped")
    inputs = [Path(p) for p in args.inputs]
    records = _load_records(inputs)
    stats: dict[str, dict[str, int]] = {}
    for source in SourceKind:
        incoming = [r for r in records if r.source is source]
        if not incoming:
            continue
        kept = remove_bot_records(incoming, bots)
        empty = 0
        for rec in kept:
            _cleanse_record(rec)
            if not rec.tokens:
                empty += 1
        dump_jsonl(kept, outdir / f"{source.value}.jsonl")
        stats[source.value] = {
            "records_in": len(incoming),
            "bot_removed": len(incoming) - len(kept),
            "records_out": len(kept),
            "empty_after_cleansing": empty,
        }
        log.info(
            "%s: %d kept, %d bot-removed",
            source.value,
            len(kept),
            len(incoming) - len(kept),
        )
    report.write_json(stats, outdir / "stats.json")
    return inputs + ([Path(args.bots)] if args.bots else [])


def cmd_train(args: argparse.Namespace) -> list[Path]:
    outdir = _outdir(args)
    inputs = [Path(p) for p in args.inputs]
    corpora = _load_corpora(inputs)
    config = _train_config(args, num_tasks=len(corpora))
    vocab = build_vocab(corpora, min_count=args.min_count)
    embedding = _build_embedding(args, vocab)
    bundle, train_log = train_multitask(corpora, config, vocab, embedding)
    model_dir = outdir / "model"
    save_checkpoint(bundle.params, bundle.config, bundle.vocab, model_dir)
    report.write_json(
        {"task_sources": [c.source.value for c in corpora]},
        model_dir / "task_sources.json",
    )
    report.save_training_log(train_log, outdir)
    if args.embeddings != "random":
        inputs = inputs + [Path(args.embeddings)]
    return inputs


def cmd_eval(args: argparse.Namespace) -> list[Path]:
    outdir = _outdir(args)
    inputs = [Path(p) for p in args.inputs]
    corpora = _load_corpora(inputs)
    config = _train_config(args, num_tasks=len(corpora))
    vocab = build_vocab(corpora, min_count=args.min_count)
    embedding = _build_embedding(args, vocab)
    cv = cross_validate(corpora, config, vocab, embedding, k=args.folds, threads=args.threads)
    report.save_cv_report(cv, outdir)
    if args.embeddings != "random":
        inputs = inputs + [Path(args.embeddings)]
    return inputs


def _load_model(model_dir: Path):
    bundle = load_checkpoint(model_dir)
    sources_file = model_dir / "task_sources.json"
    if sources_file.exists():
        with open(sources_file, encoding="utf-8") as fh:
            names = json.load(fh)["task_sources"]
        task_sources = [SourceKind(name) for name in names]
    else:
        task_sources = [s for s in SourceKind][: bundle.config.num_tasks]
    return bundle, task_sources


def cmd_predict(args: argparse.Namespace) -> list[Path]:
    outdir = _outdir(args)
    bundle, task_sources = _load_model(Path(args.model))
    task_of = {source: t for t, source in enumerate(task_sources)}
    records = _load_records([Path(args.input)])
    _ensure_tokens(records)
    with open(outdir / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            if rec.source not in task_of:
                raise DatasetError(
                    f"record '{rec.id}': model has no task for source '{rec.source.value}'"
                )
            obj: dict = {"id": rec.id, "source": rec.source.value}
            if not rec.tokens:
                obj["label"] = None
                obj["note"] = "no tokens after cleansing"
            else:
                index, probs = bundle.predict_tokens(rec.tokens, task_of[rec.source])
                obj["label"] = label_for_class(index).value
                obj["probabilities"] = {
                    label_for_class(c).value: float(probs[c]) for c in range(len(probs))
                }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
    return [Path(args.input)]


def cmd_keywords(args: argparse.Namespace) -> list[Path]:
    outdir = _outdir(args)
    bundle, task_sources = _load_model(Path(args.model))
    task_of = {source: t for t, source in enumerate(task_sources)}
    inputs = [Path(p) for p in args.inputs]
    corpora = _load_corpora(inputs)
    reports = []
    for corpus in corpora:
        if corpus.source not in task_of:
            raise DatasetError(f"model has no task for source '{corpus.source.value}'")
        reports.append(
            extract_keywords(
                bundle,
                corpus,
                task_of[corpus.source],
                per_sample_top=args.per_sample_top,
                min_frequency=args.min_frequency,
                use_predictions=args.use_predictions,
            )
        )
    report.save_keyword_reports(reports, outdir)
    nonempty = {
        r.source: [e.phrase for e in r.combined()] for r in reports if r.combined()
    }
    if len(nonempty) >= 2:
        sources, matrix = shared_keyword_matrix(nonempty, top_fraction=args.top_fraction)
        report.save_shared_matrix(sources, matrix, outdir)
    return inputs


def _load_comment_map(path: Path) -> dict[str, list[str]]:
    mapping: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if "commit_id" not in obj or "comment_ids" not in obj:
                raise DatasetError(f"{path}:{lineno}: needs 'commit_id' and 'comment_ids'")
            mapping[str(obj["commit_id"])] = [str(c) for c in obj["comment_ids"]]
    return mapping


def cmd_link(args: argparse.Namespace) -> list[Path]:
    outdir = _outdir(args)
    inputs = [Path(p) for p in args.inputs]
    records = _load_records(inputs)
    for rec in records:
        _merge_extracted_refs(rec)
    comment_map = _load_comment_map(Path(args.comments_map)) if args.comments_map else {}
    flows, unresolved = build_flows(records, comment_map)
    report.save_flows(flows, unresolved, outdir)
    if args.model:
        bundle, task_sources = _load_model(Path(args.model))
        task_of = {source: t for t, source in enumerate(task_sources)}
        _ensure_tokens(records)
        satd = []
        for rec in records:
            if not rec.tokens or rec.source not in task_of:
                continue
            index, _ = bundle.predict_tokens(rec.tokens, task_of[rec.source])
            if label_for_class(index) is not DebtLabel.NON_SATD:
                satd.append(rec)
    else:
        satd = [
            rec
            for rec in records
            if rec.label is not None and rec.label is not DebtLabel.NON_SATD
        ]
    stop_words = load_stop_words(args.stop_words) if args.stop_words else load_stop_words()
    pairs = find_related(
        flows, satd, stop_words, threshold=args.threshold, binary_bow=args.binary_bow
    )
    report.save_pairs(pairs, args.threshold, outdir)
    counts = related_counts(pairs)
    report.write_json(
        {
            "satd_records": len(satd),
            "pairs_scored": len(pairs),
            "pairs_related": sum(1 for p in pairs if p.related),
            "related_by_source_pair": {f"{a}~{b}": n for (a, b), n in sorted(counts.items())},
        },
        outdir / "pairs_summary.json",
    )
    extra = [Path(args.comments_map)] if args.comments_map else []
    return inputs + extra


def cmd_baseline(args: argparse.Namespace) -> list[Path]:
    from .corpus import stratified_split

    outdir = _outdir(args)
    inputs = [Path(p) for p in args.inputs]
    corpora = _load_corpora(inputs)
    fold_metrics: list[dict[int, object]] = [dict() for _ in range(args.folds)]
    for task, corpus in enumerate(corpora):
        assignment = stratified_split(corpus, args.folds, args.seed)
        for fold in range(args.folds):
            train_recs = [r for r in corpus.records if assignment.fold_of(r.id) != fold]
            test_recs = [r for r in corpus.records if assignment.fold_of(r.id) == fold]
            if not test_recs:
                continue
            train = LabeledCorpus.from_records(train_recs, corpus.source)
            test = LabeledCorpus.from_records(test_recs, corpus.source)
            if args.method == "random":
                metrics = baselines.random_classifier(train, test, seed=args.seed + fold)
            else:
                metrics = baselines.logreg_cv_fold(train, test)
            fold_metrics[fold][task] = metrics
    cv = CVReport(
        k=args.folds,
        seed=args.seed,
        fold_metrics=fold_metrics,
        source_names=[c.source.value for c in corpora],
    )
    report.save_cv_report(cv, outdir, stem=f"metrics_{args.method}")
    return inputs


def _add_model_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=0, help="run seed")
    sub.add_argument(
        "--embeddings",
        default="random",
        help="'random' or a .vec file of pre-trained vectors",
    )
    sub.add_argument("--dim", type=int, default=300, help="embedding dimension")
    sub.add_argument("--static", action="store_true", help="freeze the embedding table")
    sub.add_argument(
        "--non-static", dest="non_static", action="store_true", help="fine-tune embeddings"
    )
    sub.add_argument("--region-sizes", default="1,2,3,4,5", help="comma-separated window heights")
    sub.add_argument("--feature-maps", type=int, default=200, help="filters per region size")
    sub.add_argument("--dropout", type=float, default=0.5)
    sub.add_argument("--max-len", type=int, default=256, help="tokens kept per record")
    sub.add_argument("--min-count", type=int, default=1, help="vocabulary frequency floor")
    sub.add_argument("--epochs", type=int, default=20)
    sub.add_argument("--lr", type=float, default=1.0, help="learning-rate multiplier")
    sub.add_argument(
        "--weighted-loss", dest="weighted_loss", action="store_true",
        help="inverse-frequency class weights (default)",
    )
    sub.add_argument(
        "--no-weighted-loss", dest="no_weighted_loss", action="store_true",
        help="plain cross-entropy",
    )
    sub.add_argument(
        "--task-selection", choices=[TASKS_UNIFORM, TASKS_PROPORTIONAL], default=TASKS_UNIFORM
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="satdkit",
        description="Identify, explain, and link self-admitted technical debt "
        "across comments, commits, pull requests, and issues.",
    )
    parser.add_argument("--version", action="version", version=f"satdkit {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    prep = commands.add_parser("prep", help="cleanse raw JSONL exports")
    prep.add_argument("--in", dest="inputs", nargs="+", required=True, metavar="JSONL")
    prep.add_argument("--bots", help="bot username list (one per line)")
    prep.add_argument("--out", required=True)
    prep.set_defaults(func=cmd_prep)

    train = commands.add_parser("train", help="train the multitask classifier")
    train.add_argument("--in", dest="inputs", nargs="+", required=True, metavar="JSONL")
    train.add_argument("--out", required=True)
    _add_model_flags(train)
    train.set_defaults(func=cmd_train)

    evaluate = commands.add_parser("eval", help="stratified cross-validation")
    evaluate.add_argument("--in", dest="inputs", nargs="+", required=True, metavar="JSONL")
    evaluate.add_argument("--out", required=True)
    evaluate.add_argument("--folds", type=int, default=10)
    evaluate.add_argument(
        "--threads",
        type=int,
        default=int(os.environ.get("SATDKIT_THREADS", "1")),
        help="parallel folds (identical output for any value)",
    )
    _add_model_flags(evaluate)
    evaluate.set_defaults(func=cmd_eval)

    predict = commands.add_parser("predict", help="classify new records")
    predict.add_argument("--model", required=True, help="checkpoint directory")
    predict.add_argument("--in", dest="input", required=True, metavar="JSONL")
    predict.add_argument("--out", required=True)
    predict.set_defaults(func=cmd_predict)

    keywords = commands.add_parser("keywords", help="extract SATD keywords")
    keywords.add_argument("--model", required=True, help="checkpoint directory")
    keywords.add_argument("--in", dest="inputs", nargs="+", required=True, metavar="JSONL")
    keywords.add_argument("--out", required=True)
    keywords.add_argument("--per-sample-top", type=int, default=3)
    keywords.add_argument("--min-frequency", type=int, default=2)
    keywords.add_argument("--top-fraction", type=float, default=0.10)
    keywords.add_argument("--use-predictions", action="store_true",
                          help="aggregate over predicted instead of labeled SATD")
    keywords.set_defaults(func=cmd_keywords)

    link = commands.add_parser("link", help="build contribution flows and SATD pairs")
    link.add_argument("--in", dest="inputs", nargs="+", required=True, metavar="JSONL")
    link.add_argument("--comments-map", help="JSONL sidecar: commit_id -> comment_ids")
    link.add_argument("--model", help="checkpoint directory for SATD prediction")
    link.add_argument("--threshold", type=float, default=0.5)
    link.add_argument("--binary-bow", action="store_true",
                      help="presence/absence vectors instead of raw counts")
    link.add_argument("--stop-words", help="override the bundled stop-word list")
    link.add_argument("--out", required=True)
    link.set_defaults(func=cmd_link)

    baseline = commands.add_parser("baseline", help="random / logistic-regression baselines")
    baseline.add_argument("--method", choices=["random", "logreg"], required=True)
    baseline.add_argument("--in", dest="inputs", nargs="+", required=True, metavar="JSONL")
    baseline.add_argument("--folds", type=int, default=10)
    baseline.add_argument("--seed", type=int, default=0)
    baseline.add_argument("--out", required=True)
    baseline.set_defaults(func=cmd_baseline)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.monotonic()
    try:
        _check_conflicts(args)
        inputs = args.func(args)
        _write_manifest(_outdir(args), args, inputs, started)
    except (ValueError, FileNotFoundError, NotADirectoryError) as exc:
        # DatasetError, CheckpointError, and config validation are ValueErrors
        print(f"satdkit: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"satdkit: computational failure: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
