"""Match noisy book-spine OCR text to catalogue entries.

Exit codes: 0 success, 2 usage or validation error, 3 data-format error,
4 refused by a resource guard (dense similarity limit). Every failure
prints one line starting with ``error:`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from shelfmatch import _parallel
from shelfmatch.corpus import DataFormatError

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_GUARD = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        print(f"error: {self.prog}: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _int_list(value: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in value.split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}") from None


def _add_threads(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: all cores); outputs do not depend on it")


def _add_embed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dim", type=int, default=1024, help="embedding size (default 1024)")
    p.add_argument("--ngrams", type=_int_list, default=(2, 3, 4),
                   help="character n-gram sizes, comma separated (default 2,3,4)")
    p.add_argument("--hash-seed", type=int, default=0, help="FNV-1a hash seed (default 0)")


def _add_corruption(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("corruption rates")
    g.add_argument("--p-char-del", type=float, default=0.05)
    g.add_argument("--p-char-sub", type=float, default=0.05)
    g.add_argument("--p-word-del", type=float, default=0.15)
    g.add_argument("--p-word-rep", type=float, default=0.10)
    g.add_argument("--seed", type=int, default=0, help="master random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shelfmatch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("embed", help="embed catalogue or detection texts into an EMB1 file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--catalog", help="catalogue CSV (rows follow catalogue order)")
    src.add_argument("--detections", help="detections JSONL (rows follow detection order)")
    p.add_argument("--out", required=True, help="output EMB1 file")
    p.add_argument("--raw", action="store_true", help="skip text normalization")
    _add_embed(p)
    p.add_argument("--seed", type=int, default=None, help="alias for --hash-seed")
    _add_threads(p)

    p = sub.add_parser("match", help="match detections against a catalogue")
    p.add_argument("--detections", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--target-emb", help="EMB1 file aligned with the catalogue")
    p.add_argument("--query-emb", help="EMB1 file aligned with the detections")
    p.add_argument("--stage1", choices=["fuzzy", "embed"], default="embed")
    p.add_argument("--stage2", choices=["none", "hungarian", "rerank"], default="none")
    p.add_argument("--topk", type=int, default=10, help="candidates per detection for rerank")
    p.add_argument("--model", help="trained reranker JSON (required for --stage2 rerank)")
    p.add_argument("--scores", help="external reranker scores JSONL, replaces --model scoring")
    p.add_argument("--tau", type=float, default=None,
                   help="reject scores below this (none/hungarian stages only; default off)")
    p.add_argument("--block-size", type=int, default=4096, help="targets per streamed block")
    p.add_argument("--dense-limit", type=int, default=500_000_000,
                   help="largest dense similarity matrix, in entries")
    p.add_argument("--raw", action="store_true", help="skip text normalization")
    p.add_argument("--out", required=True, help="output matches JSONL")
    _add_embed(p)
    _add_threads(p)

    p = sub.add_parser("eval", help="score matches against ground truth")
    p.add_argument("--matches", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--mode", choices=["matching-only", "detection-and-matching"],
                   default="matching-only")
    p.add_argument("--report", required=True, help="output report JSON")
    _add_threads(p)

    p = sub.add_parser("gen-benchmark", help="write a seeded synthetic catalogue and detections")
    p.add_argument("--out-catalog", required=True)
    p.add_argument("--out-detections", required=True)
    p.add_argument("--queries", type=int, default=1000, help="books on the shelves")
    p.add_argument("--multiplier", type=float, default=1.0,
                   help="catalogue size as a multiple of --queries (1 = exact list)")
    p.add_argument("--not-in-list", type=int, default=0,
                   help="extra shelved books left out of the catalogue")
    p.add_argument("--series-fraction", type=float, default=0.1)
    _add_corruption(p)
    _add_threads(p)

    p = sub.add_parser("corrupt", help="turn catalogue entries into corrupted detections")
    p.add_argument("--catalog", required=True)
    p.add_argument("--out", required=True, help="output detections JSONL")
    _add_corruption(p)
    _add_threads(p)

    p = sub.add_parser("gen-rerank-data", help="write reranker training samples")
    p.add_argument("--catalog", required=True)
    p.add_argument("--out", required=True, help="output samples JSONL")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--topk", type=int, default=10)
    _add_embed(p)
    _add_corruption(p)
    _add_threads(p)

    p = sub.add_parser("train", help="train the reranker on generated samples")
    p.add_argument("--samples", required=True, help="samples JSONL from gen-rerank-data")
    p.add_argument("--out", required=True, help="output model JSON")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    _add_threads(p)
    return parser


# -- commands -------------------------------------------------------------------


def _embed_cfg(args):
    from shelfmatch.embed import EmbedConfig

    seed = args.hash_seed if getattr(args, "seed", None) is None or args.command != "embed" else args.seed
    return EmbedConfig(dim=args.dim, ngram_sizes=args.ngrams, seed=seed)


def _corruption_cfg(args):
    from shelfmatch.synth import CorruptionConfig

    return CorruptionConfig(args.p_char_del, args.p_char_sub, args.p_word_del, args.p_word_rep,
                            seed=args.seed)


def cmd_embed(args) -> None:
    from shelfmatch.corpus import load_catalog, load_detections, normalize_text
    from shelfmatch.embed import embed_batch, write_embeddings

    cfg = _embed_cfg(args)
    if args.catalog:
        texts = load_catalog(args.catalog).texts(not args.raw)
    else:
        texts = [d.ocr_text if args.raw else normalize_text(d.ocr_text)
                 for d in load_detections(args.detections)]
    write_embeddings(embed_batch(texts, cfg), args.out)


def cmd_match(args) -> None:
    from shelfmatch.corpus import load_catalog, load_detections, write_matches
    from shelfmatch.embed import read_embeddings
    from shelfmatch.pipeline import PipelineConfig, load_external_scores, run_match
    from shelfmatch.rerank import RerankModel

    cfg = PipelineConfig(stage1=args.stage1, stage2=args.stage2, k=args.topk,
                         embed=_embed_cfg(args), dense_limit=args.dense_limit, tau=args.tau,
                         block_size=args.block_size, normalize=not args.raw,
                         model_path=args.model)
    if args.stage2 == "rerank" and not (args.model or args.scores):
        raise UsageError("--stage2 rerank needs --model or --scores")
    if args.stage2 != "rerank" and (args.model or args.scores):
        raise UsageError("--model and --scores only apply to --stage2 rerank")
    detections = load_detections(args.detections)
    catalog = load_catalog(args.catalog)
    model = RerankModel.load(args.model) if args.model else None
    scores = load_external_scores(args.scores) if args.scores else None
    query_emb = read_embeddings(args.query_emb) if args.query_emb else None
    records = run_match(detections, catalog, cfg, model=model, target_emb=args.target_emb,
                        query_emb=query_emb, external_scores=scores)
    write_matches(records, args.out)


def cmd_eval(args) -> None:
    from shelfmatch.corpus import load_detections, load_matches, write_report
    from shelfmatch.evaluate import evaluate_accuracy

    report = evaluate_accuracy(load_matches(args.matches), load_detections(args.detections),
                               args.mode)
    write_report(report, args.report)
    print(f"accuracy {report.accuracy:.4f} ({report.n_correct}/{report.n_total})")


def cmd_gen_benchmark(args) -> None:
    from shelfmatch.corpus import write_catalog, write_detections
    from shelfmatch.synth import gen_benchmark

    bench = gen_benchmark(args.queries, args.multiplier, _corruption_cfg(args),
                          n_not_in_list=args.not_in_list, series_fraction=args.series_fraction)
    write_catalog(bench.catalog, args.out_catalog)
    write_detections(bench.detections, args.out_detections)


def cmd_corrupt(args) -> None:
    from shelfmatch.corpus import Detection, compose_target_text, load_catalog, write_detections
    from shelfmatch.synth import _CORRUPT, catalog_vocabulary, corrupt_text, stream

    catalog = load_catalog(args.catalog)
    cfg = _corruption_cfg(args)
    texts = catalog.texts()
    vocab = catalog_vocabulary(texts)
    out = []
    for pos, (entry, text) in enumerate(zip(catalog.entries, texts)):
        noisy = corrupt_text(text, cfg, stream(cfg.seed, _CORRUPT, pos), vocab)
        out.append(Detection("synthetic", entry.id, noisy, (entry.id,), "book"))
    write_detections(out, args.out)


def cmd_gen_rerank_data(args) -> None:
    from shelfmatch.corpus import load_catalog
    from shelfmatch.synth import gen_rerank_dataset

    samples = gen_rerank_dataset(load_catalog(args.catalog), _embed_cfg(args), args.topk,
                                 args.samples, _corruption_cfg(args))
    with Path(args.out).open("w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False, separators=(",", ":")) + "\n")


def cmd_train(args) -> None:
    from shelfmatch.corpus import _read_jsonl
    from shelfmatch.rerank import train_reranker
    from shelfmatch.synth import SynthSample

    samples = []
    for lineno, obj in _read_jsonl(Path(args.samples)):
        try:
            samples.append(SynthSample.from_dict(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"{args.samples}:{lineno}: bad sample: {exc}") from None
    if not samples:
        raise UsageError(f"{args.samples}: no training samples")
    model = train_reranker(samples, epochs=args.epochs, learning_rate=args.lr,
                           batch_size=args.batch_size, seed=args.seed)
    model.save(args.out)
    print(f"final loss {model.loss_curve[-1] if model.loss_curve else float('nan'):.4f}, "
          f"train accuracy {model.train_accuracy:.4f}")


COMMANDS = {
    "embed": cmd_embed,
    "match": cmd_match,
    "eval": cmd_eval,
    "gen-benchmark": cmd_gen_benchmark,
    "corrupt": cmd_corrupt,
    "gen-rerank-data": cmd_gen_rerank_data,
    "train": cmd_train,
}


def _warn(message, category, filename, lineno, file=None, line=None) -> None:
    print(f"warning: {message}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    _parallel.reserve_threads(args.threads)
    warnings.showwarning = _warn

    from shelfmatch.lap import ShapeError
    from shelfmatch.pipeline import ConfigError
    from shelfmatch.simtopk import DenseLimitError

    _parallel.set_threads(args.threads)
    try:
        COMMANDS[args.command](args)
    except DenseLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}".replace(": : ", ": "),
              file=sys.stderr)
        return EXIT_DATA
    except (UsageError, ConfigError, ShapeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
