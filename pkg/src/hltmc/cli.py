"""Command-line pipeline: train, eval, topics, metrics, generate, structure.

Every run writes a manifest (resolved configuration, seeds, input
digests, outputs, timings) so it can be reproduced exactly; with
``--workers 1`` reruns are bit-for-bit identical. Exit codes: 0 success,
1 usage error, 2 data error, 3 numerical degeneracy.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time

import numpy as np

from . import __version__
from ._parallel import default_workers
from .corpus import (
    CountCorpus,
    load_docword,
    load_uci_bow,
    load_vocab,
    save_uci_bow,
    split_corpus,
)
from .embeddings import load_embeddings
from .errors import DataError, DegeneracyError
from .evaluation import EvalConfig, heldout_report
from .learning import FitConfig, counts_to_relfreq, em_fit, stepwise_em_fit
from .model import HltmcModel, load_model, require_valid, save_model
from .sampling import empirical_lengths, generate_corpus
from .structure import binarize, build_structure, load_structure, save_structure
from .topics import (
    extract_hierarchy,
    format_topic_tree,
    score_report,
    topic_tree_to_json,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(args, command, seeds, inputs, outputs, started, wall) -> None:
    path = args.manifest
    if path is None:
        primary = outputs[0] if outputs else f"hltmc-{command}"
        path = f"{primary}.manifest.json"
    config = {
        k: v
        for k, v in vars(args).items()
        if k not in ("func", "manifest") and not k.startswith("_")
    }
    doc = {
        "tool": "hltmc",
        "version": __version__,
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "started_unix": started,
        "wall_seconds": wall,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _load_config_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected KEY=VALUE")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _apply_config(parser: argparse.ArgumentParser, args, argv) -> None:
    """Fill settings from the config file for flags absent on the command line."""
    if getattr(args, "config", None) is None:
        return
    actions = {a.dest: a for a in parser._actions}
    for key, raw in _load_config_file(args.config).items():
        dest = key.replace("-", "_")
        if dest not in actions or dest in ("help", "config"):
            raise DataError(f"{args.config}: unknown config key {key!r}")
        action = actions[dest]
        given = any(
            tok == opt or tok.startswith(opt + "=")
            for tok in argv
            for opt in action.option_strings
        )
        if given:
            continue
        if action.const is True:  # store_true flags
            value = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            value = action.type(raw)
        else:
            value = raw
        setattr(args, dest, value)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="KEY=VALUE file; explicit flags win")
    p.add_argument("--manifest", help="manifest path (default: <output>.manifest.json)")


def _resolve_structure(args, corpus) -> tuple:
    inputs = []
    if args.structure:
        structure = load_structure(args.structure, corpus.vocab)
        inputs.append(args.structure)
    elif args.build_structure:
        structure = build_structure(
            binarize(corpus), corpus.vocab, group_size=args.group_size, seed=args.seed
        )
    else:
        raise _UsageError("provide --structure FILE or --build-structure")
    return structure, inputs


def cmd_train(args) -> int:
    started, t0 = time.time(), time.perf_counter()
    corpus = load_uci_bow(args.docword, args.vocab)
    structure, extra_inputs = _resolve_structure(args, corpus)
    rf = counts_to_relfreq(corpus)
    config = FitConfig(
        max_iters=args.max_iters,
        tol=args.tol,
        sigma_floor=args.sigma_floor,
        seed=args.seed,
        n_restarts=args.restarts,
        minibatch_size=args.minibatch_size,
        step_exponent=args.step_exponent,
        epochs=args.epochs,
    )
    fit_fn = em_fit if args.mode == "batch" else stepwise_em_fit
    result = fit_fn(structure, None, rf.matrix, config, workers=args.workers)
    model = HltmcModel(structure=structure, params=result.params)
    require_valid(model, sigma_floor=config.sigma_floor)
    save_model(model, corpus.vocab, args.out)

    outputs = [args.out]
    if args.train_log:
        with open(args.train_log, "w", encoding="utf-8") as fh:
            for i, (ll, wall) in enumerate(zip(result.trace, result.wall_times)):
                fh.write(
                    json.dumps(
                        {"iteration": i, "per_doc_loglik": ll, "wall_seconds": wall}
                    )
                    + "\n"
                )
        outputs.append(args.train_log)
    print(
        f"trained {args.mode} EM: {len(result.trace)} trace points, "
        f"final per-doc loglik {result.trace[-1]:.6f}, "
        f"converged={result.converged}, dropped_empty_docs={rf.dropped}",
        file=sys.stderr,
    )
    _write_manifest(
        args,
        "train",
        {"fit_seed": args.seed},
        [args.docword, args.vocab] + extra_inputs,
        outputs,
        started,
        time.perf_counter() - t0,
    )
    return 0


def cmd_eval(args) -> int:
    started, t0 = time.time(), time.perf_counter()
    model, vocab = load_model(args.model)
    inputs = [args.model, args.docword]
    if args.vocab:
        test_vocab = load_vocab(args.vocab)
        if test_vocab.words != vocab.words:
            raise DataError("test corpus vocabulary differs from the model's")
        inputs.append(args.vocab)
    corpus = load_docword(args.docword, vocab)
    config = EvalConfig(n_samples=args.k, seed=args.seed, estimator=args.estimator)
    report = heldout_report(model, corpus, config, workers=args.workers)

    lines = [
        "held-out log-likelihood report",
        f"estimator: {report.estimator} (K={report.n_samples}, seed={report.seed})",
        f"documents scored: {report.per_doc.size} (skipped empty: {report.skipped_empty})",
        f"per-document mean: {report.mean:.6f} +/- {report.std_error:.6f}",
        "(+/- is the standard error of the per-document mean)",
    ]
    text = "\n".join(lines) + "\n"
    outputs = []
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text)
        outputs.append(args.report)
    sys.stdout.write(text)
    if args.jsonl:
        with open(args.jsonl, "w", encoding="utf-8") as fh:
            for doc_id, value in zip(report.doc_ids, report.per_doc):
                fh.write(json.dumps({"doc": doc_id, "estimate": value}) + "\n")
        outputs.append(args.jsonl)
    _write_manifest(
        args, "eval", {"eval_seed": args.seed}, inputs, outputs, started,
        time.perf_counter() - t0,
    )
    return 0


def cmd_topics(args) -> int:
    started, t0 = time.time(), time.perf_counter()
    model, vocab = load_model(args.model)
    tree = extract_hierarchy(model, vocab, top_words=args.top_words)
    text = topic_tree_to_json(tree) + "\n" if args.format == "json" else format_topic_tree(tree)
    outputs = []
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        outputs.append(args.out)
    else:
        sys.stdout.write(text)
    _write_manifest(args, "topics", {}, [args.model], outputs, started,
                    time.perf_counter() - t0)
    return 0


def cmd_metrics(args) -> int:
    started, t0 = time.time(), time.perf_counter()
    model, vocab = load_model(args.model)
    corpus = load_docword(args.docword, vocab)
    inputs = [args.model, args.docword]
    embeddings = None
    if args.embeddings:
        embeddings = load_embeddings(args.embeddings)
        inputs.append(args.embeddings)
    tree = extract_hierarchy(model, vocab, top_words=args.top_words)
    report = score_report(tree, binarize(corpus), embeddings, top_words=args.top_words)

    lines = [f"topics scored: {len(report.per_topic)} (top {args.top_words} words each)"]
    lines.append(f"average coherence: {report.avg_coherence:.6f}")
    if report.avg_compactness is not None:
        lines.append(
            f"average compactness: {report.avg_compactness:.6f} "
            f"(undefined for {report.undefined_compactness} topics)"
        )
    else:
        lines.append("average compactness: undefined (no embeddings or too few hits)")
    for level, row in report.by_level.items():
        lines.append(
            f"  level {level}: {int(row['n_topics'])} topics, "
            f"coherence {row['avg_coherence']:.6f}, compactness {row['avg_compactness']:.6f}"
        )
    for r in report.per_topic:
        comp = "n/a" if r.compactness is None else f"{r.compactness:.6f}"
        lines.append(
            f"  {r.latent_id} (level {r.level}): coherence {r.coherence:.6f}, "
            f"compactness {comp}"
        )
    text = "\n".join(lines) + "\n"
    outputs = []
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        outputs.append(args.out)
    else:
        sys.stdout.write(text)
    _write_manifest(args, "metrics", {}, inputs, outputs, started,
                    time.perf_counter() - t0)
    return 0


def cmd_generate(args) -> int:
    started, t0 = time.time(), time.perf_counter()
    model, vocab = load_model(args.model)
    rng = np.random.default_rng(args.seed)
    inputs = [args.model]
    if args.lengths_from:
        lengths = empirical_lengths(
            _lengths_corpus(args.lengths_from), args.num_docs, rng
        )
        inputs.append(args.lengths_from)
    elif args.doc_length is not None:
        lengths = np.full(args.num_docs, args.doc_length, dtype=np.int64)
    else:
        raise _UsageError("provide --doc-length N or --lengths-from DOCWORD")
    corpus = generate_corpus(model, vocab, lengths, rng)
    save_uci_bow(corpus, args.out_docword, args.out_vocab)
    _write_manifest(
        args, "generate", {"generate_seed": args.seed}, inputs,
        [args.out_docword, args.out_vocab], started, time.perf_counter() - t0,
    )
    return 0


def _lengths_corpus(docword_path) -> CountCorpus:
    """Parse only what empirical_lengths needs: a corpus with anonymous words."""
    with open(docword_path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 3:
        raise DataError(f"{docword_path}: missing 3-line header")
    from .corpus import Vocabulary

    n_words = int(lines[1])
    vocab = Vocabulary(tuple(f"w{i}" for i in range(n_words)))
    return load_docword(docword_path, vocab)


def cmd_structure(args) -> int:
    started, t0 = time.time(), time.perf_counter()
    corpus = load_uci_bow(args.docword, args.vocab)
    structure = build_structure(
        binarize(corpus), corpus.vocab, group_size=args.group_size, seed=args.seed
    )
    save_structure(structure, corpus.vocab, args.out)
    _write_manifest(
        args, "structure", {"structure_seed": args.seed},
        [args.docword, args.vocab], [args.out], started, time.perf_counter() - t0,
    )
    return 0


def cmd_pipeline(args) -> int:
    """Split, build a structure, train, evaluate, and extract topics."""
    import os

    started, t0 = time.time(), time.perf_counter()
    os.makedirs(args.outdir, exist_ok=True)
    path = lambda name: os.path.join(args.outdir, name)

    corpus = load_uci_bow(args.docword, args.vocab)
    train, test = split_corpus(corpus, args.train_fraction, seed=args.seed)
    save_uci_bow(train, path("train_docword.txt"), path("train_vocab.txt"))
    save_uci_bow(test, path("test_docword.txt"), path("test_vocab.txt"))

    structure = build_structure(
        binarize(train), corpus.vocab, group_size=args.group_size, seed=args.seed
    )
    save_structure(structure, corpus.vocab, path("structure.txt"))

    rf = counts_to_relfreq(train)
    config = FitConfig(
        max_iters=args.max_iters,
        tol=args.tol,
        sigma_floor=args.sigma_floor,
        seed=args.seed,
        n_restarts=args.restarts,
        minibatch_size=args.minibatch_size,
        step_exponent=args.step_exponent,
        epochs=args.epochs,
    )
    fit_fn = em_fit if args.mode == "batch" else stepwise_em_fit
    result = fit_fn(structure, None, rf.matrix, config, workers=args.workers)
    model = HltmcModel(structure=structure, params=result.params)
    save_model(model, corpus.vocab, path("model.json"))
    with open(path("train_log.jsonl"), "w", encoding="utf-8") as fh:
        for i, (ll, wall) in enumerate(zip(result.trace, result.wall_times)):
            fh.write(json.dumps({"iteration": i, "per_doc_loglik": ll,
                                 "wall_seconds": wall}) + "\n")

    eval_config = EvalConfig(n_samples=args.k, seed=args.seed, estimator=args.estimator)
    report = heldout_report(model, test, eval_config, workers=args.workers)
    with open(path("heldout.jsonl"), "w", encoding="utf-8") as fh:
        for doc_id, value in zip(report.doc_ids, report.per_doc):
            fh.write(json.dumps({"doc": doc_id, "estimate": value}) + "\n")
    with open(path("heldout.txt"), "w", encoding="utf-8") as fh:
        fh.write(
            f"per-document mean: {report.mean:.6f} +/- {report.std_error:.6f} "
            f"(standard error; estimator={report.estimator}, K={report.n_samples})\n"
        )

    tree = extract_hierarchy(model, corpus.vocab, top_words=args.top_words)
    with open(path("topics.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_topic_tree(tree))
    with open(path("topics.json"), "w", encoding="utf-8") as fh:
        fh.write(topic_tree_to_json(tree) + "\n")

    print(
        f"pipeline done: heldout mean {report.mean:.4f} +/- {report.std_error:.4f}, "
        f"{len(tree.topics)} topics",
        file=sys.stderr,
    )
    if args.manifest is None:
        args.manifest = path("pipeline.manifest.json")
    _write_manifest(
        args,
        "pipeline",
        {"seed": args.seed},
        [args.docword, args.vocab],
        [path(n) for n in (
            "train_docword.txt", "test_docword.txt", "structure.txt",
            "model.json", "train_log.jsonl", "heldout.jsonl", "heldout.txt",
            "topics.txt", "topics.json",
        )],
        started,
        time.perf_counter() - t0,
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_fit_flags(p) -> None:
    p.add_argument("--mode", choices=("batch", "stepwise"), default="batch")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--sigma-floor", type=float, default=1e-4)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--minibatch-size", type=int, default=1000)
    p.add_argument("--step-exponent", type=float, default=0.75)
    p.add_argument("--epochs", type=int, default=1, help="stepwise passes over the data")


def build_parser() -> tuple[_Parser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="hltmc", description=__doc__)
    parser.add_argument("--version", action="version", version=f"hltmc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="fit parameters on a corpus")
    p.add_argument("--docword", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--structure", help="structure file to import")
    p.add_argument("--build-structure", action="store_true",
                   help="build a structure from the binarized corpus")
    p.add_argument("--group-size", type=int, default=7)
    _add_fit_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=default_workers())
    p.add_argument("--out", required=True, help="output model path")
    p.add_argument("--train-log", help="JSON-lines training log path")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="held-out likelihood of a test corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--docword", required=True)
    p.add_argument("--vocab", help="optional check against the model's vocabulary")
    p.add_argument("--k", type=int, default=300, help="Monte Carlo samples per document")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--estimator", choices=("importance", "naive"), default="importance")
    p.add_argument("--workers", type=int, default=default_workers())
    p.add_argument("--report", help="write the text report here too")
    p.add_argument("--jsonl", help="per-document estimates, one JSON object per line")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("topics", help="print the topic hierarchy of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--top-words", type=int, default=4)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_topics)

    p = sub.add_parser("metrics", help="coherence and compactness of the topics")
    p.add_argument("--model", required=True)
    p.add_argument("--docword", required=True, help="reference corpus for co-occurrence")
    p.add_argument("--embeddings", help="word embedding table (text or binary)")
    p.add_argument("--top-words", type=int, default=4)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("generate", help="sample documents from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--num-docs", type=int, required=True)
    p.add_argument("--doc-length", type=int, help="fixed length for every document")
    p.add_argument("--lengths-from", help="docword file to resample lengths from")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-docword", required=True)
    p.add_argument("--out-vocab", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("structure", help="build a tree skeleton from a corpus")
    p.add_argument("--docword", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--group-size", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_structure)

    p = sub.add_parser("pipeline", help="split, structure, train, eval, topics")
    p.add_argument("--docword", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--group-size", type=int, default=7)
    _add_fit_flags(p)
    p.add_argument("--k", type=int, default=300)
    p.add_argument("--estimator", choices=("importance", "naive"), default="importance")
    p.add_argument("--top-words", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=default_workers())
    _add_common(p)
    p.set_defaults(func=cmd_pipeline)

    return parser, dict(sub.choices)


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, subparsers = build_parser()
    try:
        args = parser.parse_args(argv)
        # resolve config-file defaults against the chosen subcommand's parser
        _apply_config(subparsers[args.command], args, argv)
        return args.func(args)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help / --version exit via argparse
        code = e.code if e.code is not None else 0
        return int(code) if not isinstance(code, str) else 1
    except DegeneracyError as e:
        print(f"numerical degeneracy: {e}", file=sys.stderr)
        return 3
    except (DataError, OSError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
