"""Command-line interface.

Subcommands: train, evaluate, matrix, glove-train, bilm-train,
ctx-export, ctx-import, grad-check. Every subcommand accepts --seed.
Exit codes: 0 success, 1 validation error (bad arguments, unreadable
configs or files, format violations), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import harness
from .context_embed import (
    BiLmTrainConfig,
    ContextFormatError,
    load_precomputed,
    run_bilm,
    save_precomputed,
    train_bilm,
)
from .corpus import DatasetError, build_vocabulary, documents_from_records, encode_all, load_dataset
from .gradcheck import check_all_assemblies
from .metrics import MetricsReport
from .static_embed import EmbeddingError, GloveTrainConfig, build_cooccurrence, train_glove, write_embedding_text
from .train import Example, TrainingDivergence, evaluate, train_model

GRAD_TOLERANCE = 1e-4


class UsageError(Exception):
    """Argument-level problem; printed with usage, exit 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; the contract is 1
        raise UsageError(f"{self.format_usage()}error: {message}")


def _add_seed(parser):
    parser.add_argument("--seed", type=int, default=None, help="override the configured seed")


def build_parser() -> _Parser:
    parser = _Parser(prog="trolldet", description="troll-tweet detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one embedding/encoder cell from a config file")
    p.add_argument("--config", required=True, help="TOML file with [experiment] and [data] sections")
    p.add_argument("--out", required=True, help="output directory for checkpoint and metrics")
    _add_seed(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a dataset with a saved checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="text,label dataset file")
    p.add_argument("--format", default="csv", choices=("csv", "tsv"))
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--max-len", type=int, default=None, help="sequence cap (defaults to the trained length)")
    p.add_argument("--ctx", default=None, help="precomputed context file (required for that pathway)")
    _add_seed(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("matrix", help="run the full embedding x encoder grid")
    p.add_argument("--config", required=True, help="TOML grid config")
    p.add_argument("--out", required=True, help="output directory for tables, run log, checkpoints")
    _add_seed(p)
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("glove-train", help="train static vectors on a corpus and write them as text")
    p.add_argument("--data", required=True)
    p.add_argument("--format", default="csv", choices=("csv", "tsv"))
    p.add_argument("--out", required=True, help="output text file, one token per line")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--x-max", type=float, default=100.0)
    p.add_argument("--alpha", type=float, default=0.75)
    p.add_argument("--min-count", type=int, default=1)
    _add_seed(p)
    p.set_defaults(func=cmd_glove_train)

    p = sub.add_parser("bilm-train", help="train the bidirectional language model and save it")
    p.add_argument("--data", required=True)
    p.add_argument("--format", default="csv", choices=("csv", "tsv"))
    p.add_argument("--out", required=True, help="output parameter file")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--max-len", type=int, default=24)
    p.add_argument("--min-count", type=int, default=1)
    _add_seed(p)
    p.set_defaults(func=cmd_bilm_train)

    p = sub.add_parser("ctx-export", help="write per-token context layers for a corpus")
    p.add_argument("--bilm", required=True, help="saved bi-LM parameter file")
    p.add_argument("--data", required=True)
    p.add_argument("--format", default="csv", choices=("csv", "tsv"))
    p.add_argument("--out", required=True, help="output context file")
    p.add_argument("--max-len", type=int, default=24)
    _add_seed(p)
    p.set_defaults(func=cmd_ctx_export)

    p = sub.add_parser("ctx-import", help="validate a context file and print its summary")
    p.add_argument("--file", required=True)
    p.add_argument("--expect-docs", type=int, default=None)
    p.add_argument("--expect-dim", type=int, default=None)
    _add_seed(p)
    p.set_defaults(func=cmd_ctx_import)

    p = sub.add_parser("grad-check", help="verify analytic gradients for all nine assemblies")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=GRAD_TOLERANCE)
    _add_seed(p)
    p.set_defaults(func=cmd_grad_check)
    return parser


def _load_documents(path: str, file_format: str):
    records = load_dataset(path, file_format=file_format)
    return documents_from_records(records)


def _report_json(report: MetricsReport, extra: dict | None = None) -> str:
    payload = dataclasses.asdict(report)
    if extra:
        payload.update(extra)
    return json.dumps(payload, sort_keys=True)


def cmd_train(args) -> int:
    mapping = harness.load_grid_file(args.config)
    experiment = mapping.get("experiment")
    if not isinstance(experiment, dict) or "embedding" not in experiment or "encoder" not in experiment:
        raise harness.GridConfigError("config needs an [experiment] section with 'embedding' and 'encoder'")
    if "data" not in mapping:
        raise harness.GridConfigError("config needs a [data] section with a 'path'")
    experiment = dict(experiment)
    embedding = experiment.pop("embedding")
    encoder = experiment.pop("encoder")
    seed = args.seed if args.seed is not None else int(experiment.pop("seed", 0))
    experiment.pop("seed", None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = harness.build_experiment_config(embedding, encoder, experiment, seed, out_dir=str(out))
    data = harness.split_from_data_section(mapping["data"])

    assembly, splits, vocab = harness.prepare_cell(config, data)
    train_config = dataclasses.replace(config.train, seed=config.seed)
    trained, history = train_model(assembly, splits, train_config)
    report = evaluate(trained, splits.test)
    harness.save_checkpoint(trained, out / "checkpoint.tgck", seed=seed, epoch=history.selected_epoch, vocab=vocab)
    line = _report_json(report, {"selected_epoch": history.selected_epoch, "epochs": history.epochs})
    (out / "metrics.json").write_text(line + "\n", encoding="utf-8")
    print(line)
    return 0


def cmd_evaluate(args) -> int:
    assembly, meta = harness.load_checkpoint(args.checkpoint)
    vocab = meta["vocab"]
    if vocab is None:
        raise harness.CheckpointError("checkpoint stores no vocabulary; cannot encode raw text")
    docs = _load_documents(args.data, args.format)
    if args.max_len is not None:
        max_len = args.max_len
    elif assembly.encoder_kind == "transformer":
        from . import autodiff as ad

        max_len = int(ad.value(assembly.encoder.positional).shape[0])
    else:
        max_len = 24
    encoded = encode_all(docs, vocab, max_len)
    examples = [Example(ids=e.ids, valid_length=e.valid_length, label=e.label) for e in encoded]
    if assembly.pathway == "precomputed-contextual":
        if args.ctx is None:
            raise UsageError("this checkpoint needs --ctx with per-document context layers")
        stacks = load_precomputed(args.ctx)
        if len(stacks) != len(examples):
            raise ContextFormatError(f"context file holds {len(stacks)} documents, dataset has {len(examples)}")
        for ex, ctx in zip(examples, stacks):
            ex.ctx = ctx
    report = evaluate(assembly, examples, threshold=args.threshold)
    print(_report_json(report, {"n_examples": len(examples), "threshold": args.threshold}))
    return 0


def cmd_matrix(args) -> int:
    mapping = harness.load_grid_file(args.config)
    if args.seed is not None:
        grid = mapping.get("grid")
        if not isinstance(grid, dict):
            raise harness.GridConfigError("config needs a [grid] section")
        grid["seed"] = args.seed
    table = harness.run_grid(mapping, args.out)
    sys.stdout.write(harness.emit_table(table, "markdown"))
    return 0


def cmd_glove_train(args) -> int:
    seed = args.seed if args.seed is not None else 0
    docs = _load_documents(args.data, args.format)
    vocab = build_vocabulary(docs, min_count=args.min_count)
    cooc = build_cooccurrence(docs, vocab, window=args.window)
    config = GloveTrainConfig(
        dim=args.dim,
        window=args.window,
        x_max=args.x_max,
        alpha=args.alpha,
        learning_rate=args.lr,
        epochs=args.epochs,
        seed=seed,
    )
    table = train_glove(cooc, config, vocab_size=len(vocab))
    write_embedding_text(table, vocab, args.out)
    print(
        json.dumps(
            {
                "vocab_size": len(vocab),
                "pairs": len(cooc),
                "dim": args.dim,
                "final_loss": table.metadata["loss_history"][-1],
                "out": str(args.out),
            },
            sort_keys=True,
        )
    )
    return 0


def cmd_bilm_train(args) -> int:
    seed = args.seed if args.seed is not None else 0
    docs = _load_documents(args.data, args.format)
    vocab = build_vocabulary(docs, min_count=args.min_count)
    config = BiLmTrainConfig(
        dim=args.dim, learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch, seed=seed
    )
    bilm, info = train_bilm(docs, vocab, config, max_len=args.max_len)
    harness.save_bilm(bilm, args.out, seed=seed, vocab=vocab)
    print(
        json.dumps(
            {
                "vocab_size": len(vocab),
                "dim": args.dim,
                "initial_perplexity": info["initial_perplexity"],
                "final_perplexity": info["final_perplexity"],
                "out": str(args.out),
            },
            sort_keys=True,
        )
    )
    return 0


def cmd_ctx_export(args) -> int:
    bilm, meta = harness.load_bilm(args.bilm)
    vocab = meta["vocab"]
    if vocab is None:
        raise harness.CheckpointError("bi-LM file stores no vocabulary; cannot encode raw text")
    docs = _load_documents(args.data, args.format)
    encoded = encode_all(docs, vocab, args.max_len)
    stacks = [run_bilm(bilm, e.ids, e.valid_length) for e in encoded]
    save_precomputed(args.out, stacks)
    print(json.dumps({"docs": len(stacks), "dim": bilm.context_dim, "out": str(args.out)}, sort_keys=True))
    return 0


def cmd_ctx_import(args) -> int:
    stacks = load_precomputed(args.file)
    dims = sorted({ctx.context_dim for ctx in stacks})
    layer_counts = sorted({ctx.n_layers for ctx in stacks})
    summary = {
        "docs": len(stacks),
        "dims": dims,
        "layers": layer_counts,
        "total_tokens": sum(ctx.valid_length for ctx in stacks),
    }
    if args.expect_docs is not None and len(stacks) != args.expect_docs:
        raise ContextFormatError(f"expected {args.expect_docs} documents, file holds {len(stacks)}")
    if args.expect_dim is not None and dims != [args.expect_dim]:
        raise ContextFormatError(f"expected context width {args.expect_dim}, file holds {dims}")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_grad_check(args) -> int:
    seed = args.seed if args.seed is not None else 0
    results = check_all_assemblies(seed=seed, eps=args.eps)
    worst = 0.0
    for (pathway, encoder_kind), err in sorted(results.items()):
        status = "ok" if err < args.tolerance else "FAIL"
        print(f"{pathway:24s} {encoder_kind:12s} max-rel-err {err:.3e}  {status}")
        worst = max(worst, err)
    if worst >= args.tolerance:
        print(f"gradient check failed: worst {worst:.3e} >= tolerance {args.tolerance:.1e}", file=sys.stderr)
        return 2
    print(f"all {len(results)} assemblies pass (worst {worst:.3e} < {args.tolerance:.1e})")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(str(err), file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (DatasetError, EmbeddingError, ContextFormatError, harness.CheckpointError, harness.GridConfigError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except TrainingDivergence as err:
        print(f"training diverged: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
