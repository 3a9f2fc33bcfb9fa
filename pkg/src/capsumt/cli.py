"""Command-line entry point: ``capsumt <subcommand> --config FILE --out DIR``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import checkpoint, metrics
from .corpus import CorpusRecord, compose_document, parse_corpus, read_jsonl, write_jsonl
from .decoding import DecodeConfig
from .features import read_features
from .ftawe import FtaweConfig, read_vectors, train_embeddings
from .maa import MaaConfig, train_factual
from .pipeline import PipelineModels, run_pipeline
from .rng import make_rng
from .sfbialstm import STYLES, StyleConfig, train_styled
from .text import detokenize, tokenize
from .unmhast import TransformerConfig, train_summarizer

log = logging.getLogger("capsumt")

COMMANDS = ("embed-train", "fic-train", "style-train", "sum-train", "summarize", "pipeline",
            "evaluate", "gradcheck")
CKPT_NAMES = {"ftawe": "ftawe.ckpt", "fic": "fic.ckpt", "style": "style.ckpt",
              "summarizer": "sum.ckpt"}
EVAL_FIELDS = {"factual_caption": ("factual", "factual_caption"),
               "romantic_caption": ("romantic", "romantic_caption"),
               "humorous_caption": ("humorous", "humorous_caption"),
               "summary": ("summary",)}


class CliError(Exception):
    pass


def worker_count() -> int:
    raw = os.environ.get("CAPSUMT_THREADS")
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"CAPSUMT_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise CliError("CAPSUMT_THREADS must be >= 1")
    return n


class RunContext:
    """Resolved config, seed and output directory for one invocation."""

    def __init__(self, args: argparse.Namespace):
        self.config: dict = {}
        self.base = Path(".")
        if args.config:
            path = Path(args.config)
            try:
                self.config = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise CliError(f"{path}:{exc.lineno}: invalid JSON config ({exc.msg})") from exc
            if not isinstance(self.config, dict):
                raise CliError(f"{path}: config must be a JSON object")
            self.base = path.parent
        self.seed = args.seed if args.seed is not None else int(self.config.get("seed", 0))
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)

    def path(self, key: str, required: bool = True) -> Optional[Path]:
        value = self.config.get(key)
        if value is None:
            if required:
                raise CliError(f"config is missing {key!r}")
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base / p

    def section(self, key: str) -> dict:
        d = dict(self.config.get(key) or {})
        d["seed"] = self.seed
        return d

    def checkpoint_path(self, key: str) -> Path:
        given = (self.config.get("checkpoints") or {}).get(key)
        if given is None:
            return self.out / CKPT_NAMES[key]
        p = Path(given)
        return p if p.is_absolute() else self.base / p

    def corpus(self, key: str = "corpus", require_features: bool = False) -> list[CorpusRecord]:
        return parse_corpus(self.path(key), require_features=require_features)


# ---------------------------------------------------------------------------
# subcommands


def cmd_embed_train(ctx: RunContext) -> int:
    sents = []
    for r in ctx.corpus():
        sents += [tokenize(s) for s in r.factual]
        sents += [tokenize(s) for s in (r.romantic, r.humorous, r.summary) if s]
    cfg = FtaweConfig.from_dict(ctx.section("ftawe"))
    model = train_embeddings(sents, cfg, make_rng(ctx.seed))
    model.export_vectors(ctx.out / "vectors.txt")
    checkpoint.save_checkpoint(ctx.out / CKPT_NAMES["ftawe"], model, ctx.seed)
    print(f"loss={model.history[-1]:.6f}" if model.history else "loss=nan")
    return 0


def _features(r: CorpusRecord, cache: dict):
    if r.features not in cache:
        cache[r.features] = read_features(r.features)
    return cache[r.features]


def cmd_fic_train(ctx: RunContext) -> int:
    cache: dict = {}
    pairs = [(_features(r, cache), tokenize(c)) for r in ctx.corpus(require_features=True)
             for c in r.factual]
    if not pairs:
        raise CliError("corpus has no factual captions")
    model = train_factual(pairs, MaaConfig.from_dict(ctx.section("maa")), rng=make_rng(ctx.seed))
    checkpoint.save_checkpoint(ctx.checkpoint_path("fic"), model, ctx.seed)
    print(f"loss={model.history[-1]:.6f}")
    return 0


def cmd_style_train(ctx: RunContext) -> int:
    cache: dict = {}
    triples = []
    for r in ctx.corpus(require_features=True):
        for style in STYLES:
            text = getattr(r, style)
            if text:
                triples.append((_features(r, cache), tokenize(text), style))
    model = train_styled(triples, StyleConfig.from_dict(ctx.section("style")),
                         rng=make_rng(ctx.seed))
    checkpoint.save_checkpoint(ctx.checkpoint_path("style"), model, ctx.seed)
    print(f"loss={model.history[-1]:.6f}")
    return 0


def _documents(records: Sequence[CorpusRecord], need_summary: bool) -> list[tuple]:
    out = []
    for r in records:
        if not (r.factual and r.romantic and r.humorous):
            continue
        if need_summary and not r.summary:
            continue
        out.append((r.id, compose_document(r.factual[0], r.romantic, r.humorous),
                    tokenize(r.summary) if r.summary else None))
    return out


def cmd_sum_train(ctx: RunContext) -> int:
    docs = _documents(ctx.corpus(), need_summary=True)
    if not docs:
        raise CliError("corpus has no record with factual, romantic, humorous and summary")
    vec_path = ctx.path("vectors", required=False)
    vectors = read_vectors(vec_path) if vec_path else None
    model = train_summarizer([(src, tgt) for _, src, tgt in docs],
                             TransformerConfig.from_dict(ctx.section("summarizer")),
                             rng=make_rng(ctx.seed), vectors=vectors)
    checkpoint.save_checkpoint(ctx.checkpoint_path("summarizer"), model, ctx.seed)
    print(f"loss={model.history[-1]:.6f}")
    return 0


def _decode_config(ctx: RunContext, key: str, default_len: int) -> DecodeConfig:
    d = dict(ctx.config.get(key) or ctx.config.get("decode") or {})
    d.setdefault("max_len", default_len)
    return DecodeConfig.from_dict(d)


def cmd_summarize(ctx: RunContext) -> int:
    model = checkpoint.load_checkpoint(ctx.checkpoint_path("summarizer"), "unmha-st")
    dc = _decode_config(ctx, "summary_decode", model.config.max_tgt)
    rows = [{"id": rid, "summary": detokenize(model.summarize(src, dc))}
            for rid, src, _ in _documents(ctx.corpus(), need_summary=False)]
    write_jsonl(ctx.out / "summaries.jsonl", rows)
    print(f"summaries={len(rows)}")
    return 0


def cmd_pipeline(ctx: RunContext) -> int:
    models = PipelineModels(
        checkpoint.load_checkpoint(ctx.checkpoint_path("fic"), "maa-fic"),
        checkpoint.load_checkpoint(ctx.checkpoint_path("style"), "sf-bialstm"),
        checkpoint.load_checkpoint(ctx.checkpoint_path("summarizer"), "unmha-st"))
    dc = _decode_config(ctx, "decode", 20)
    sdc = _decode_config(ctx, "summary_decode", models.summarizer.config.max_tgt)
    rows = [run_pipeline(r, models, dc, sdc) for r in ctx.corpus(require_features=True)]
    write_jsonl(ctx.out / "predictions.jsonl", rows)
    print(f"predictions={len(rows)}")
    return 0


def _references(row: dict, keys: Sequence[str]) -> list[list[str]]:
    for k in keys:
        v = row.get(k)
        if isinstance(v, str) and v:
            return [tokenize(v)]
        if isinstance(v, list) and v:
            return [tokenize(s) for s in v]
    return []


def _score_one(item: tuple) -> dict:
    cand, refs = item
    return {"meteor": metrics.meteor_multi(cand, refs),
            "rouge1": metrics.rouge(cand, refs, "1").score,
            "rouge2": metrics.rouge(cand, refs, "2").score,
            "rougeL": metrics.rouge(cand, refs, "L").score}


def evaluate_files(pred_path: Path, ref_path: Path, workers: int = 1) -> dict:
    """Corpus BLEU@1-4 and mean METEOR / ROUGE per predicted field."""
    preds = read_jsonl(pred_path)
    refs = {}
    for i, row in enumerate(read_jsonl(ref_path), start=1):
        if "id" not in row:
            raise CliError(f"{ref_path}:{i}: missing field 'id'")
        refs[row["id"]] = row
    report: dict = {}
    for field, ref_keys in EVAL_FIELDS.items():
        items = []
        for i, row in enumerate(preds, start=1):
            if field not in row:
                continue
            if "id" not in row:
                raise CliError(f"{pred_path}:{i}: missing field 'id'")
            if row["id"] not in refs:
                raise CliError(f"{pred_path}:{i}: id {row['id']!r} has no reference")
            r = _references(refs[row["id"]], ref_keys)
            if r:
                items.append((tokenize(row[field]), r))
        if not items:
            continue
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(_score_one, items))
        cands, rs = [c for c, _ in items], [r for _, r in items]
        out = {f"bleu{n}": metrics.corpus_bleu(cands, rs, n) for n in range(1, 5)}
        for key in ("meteor", "rouge1", "rouge2", "rougeL"):
            out[key] = sum(s[key] for s in scores) / len(scores)
        out["count"] = len(items)
        report[field] = out
    if not report:
        raise CliError("no prediction field matched a reference")
    return report


def cmd_evaluate(ctx: RunContext) -> int:
    report = evaluate_files(ctx.path("predictions"), ctx.path("references"), worker_count())
    for field, scores in report.items():
        for k, v in scores.items():
            print(f"{field}.{k}={v:.6f}" if isinstance(v, float) else f"{field}.{k}={v}")
    (ctx.out / "evaluation.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_gradcheck(ctx: RunContext) -> int:
    from .gradsuite import TOLERANCE, run_suite
    ok = True
    results = run_suite(ctx.seed)
    for name, (err, secs) in results.items():
        print(f"{name}={err:.3e} ({secs:.2f}s)")
        ok &= err < TOLERANCE
    (ctx.out / "gradcheck.json").write_text(
        json.dumps({k: v[0] for k, v in results.items()}, indent=2))
    return 0 if ok else 1


HANDLERS = {
    "embed-train": cmd_embed_train, "fic-train": cmd_fic_train,
    "style-train": cmd_style_train, "sum-train": cmd_sum_train,
    "summarize": cmd_summarize, "pipeline": cmd_pipeline,
    "evaluate": cmd_evaluate, "gradcheck": cmd_gradcheck,
}


HELP = {
    "embed-train": "train subword attention word vectors on every corpus sentence",
    "fic-train": "train the factual caption model",
    "style-train": "train the romantic/humorous caption model",
    "sum-train": "train the caption summariser",
    "summarize": "summarise each record's three gold captions",
    "pipeline": "caption and summarise every record with trained models",
    "evaluate": "score predictions against references (BLEU, METEOR, ROUGE)",
    "gradcheck": "finite-difference check of every training loss",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capsumt", description="Stylised image captioning and caption summarisation.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    for name in COMMANDS:
        sp = sub.add_parser(name, help=HELP[name])
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[args.command](RunContext(args))
    except (CliError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"capsumt {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
