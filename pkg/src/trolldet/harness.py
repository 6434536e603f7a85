"""Experiment harness: runs embedding x encoder grids from declarative
configs, renders result tables, and persists binary checkpoints plus a
JSON-lines run log.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
import tempfile
import time
from dataclasses import dataclass, field
from io import StringIO
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import metrics
from .context_embed import (
    BiLmParams,
    BiLmTrainConfig,
    LayerMixWeights,
    init_bilm,
    load_precomputed,
    run_bilm,
    save_precomputed,
    train_bilm,
)
from .corpus import DatasetSplit, Vocabulary, build_vocabulary, encode_all
from .encoders import (
    CnnEncoderParams,
    CnnFilterBank,
    GruCellParams,
    TransformerEncoderParams,
    TransformerLayerParams,
    init_cnn,
    init_gru,
    init_transformer,
)
from .static_embed import EmbeddingTable, GloveTrainConfig, build_cooccurrence, load_embedding_text, train_glove
from .train import (
    ENCODER_KINDS,
    PATHWAYS,
    ClassifierHead,
    Example,
    ModelAssembly,
    SplitExamples,
    TrainConfig,
    TrainHistory,
    collect_arrays,
    evaluate,
    rebind_arrays,
    train_model,
)

CKPT_MAGIC = b"TGCK"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed, truncated, or incompatible checkpoint file."""


class GridConfigError(ValueError):
    """Malformed experiment or grid configuration."""


# configuration ----------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one cell needs: the pathway/encoder pair, embedding and
    encoder hyperparameters, training settings, and the cell seed."""

    embedding: str
    encoder: str
    max_len: int = 24
    min_count: int = 1
    embed_dim: int = 16
    glove_window: int = 4
    glove_x_max: float = 100.0
    glove_alpha: float = 0.75
    glove_lr: float = 0.05
    glove_epochs: int = 30
    embedding_file: str | None = None
    embedding_trainable: bool = False
    bilm_dim: int = 16
    bilm_lr: float = 0.1
    bilm_epochs: int = 3
    bilm_batch: int = 16
    ctx_train: str | None = None
    ctx_validation: str | None = None
    ctx_test: str | None = None
    cnn_widths: tuple[int, ...] = (2, 3, 4)
    cnn_channels: int = 8
    cnn_pooling: str = "global-max"
    gru_hidden: int = 16
    tf_d_model: int = 16
    tf_layers: int = 1
    tf_heads: int = 2
    tf_ff: int = 32
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if self.embedding not in PATHWAYS:
            raise GridConfigError(f"unknown embedding pathway {self.embedding!r}; expected one of {PATHWAYS}")
        if self.encoder not in ENCODER_KINDS:
            raise GridConfigError(f"unknown encoder {self.encoder!r}; expected one of {ENCODER_KINDS}")
        if self.max_len < 1 or self.min_count < 1:
            raise GridConfigError("max_len and min_count must be >= 1")


def derive_cell_seed(base_seed: int, embedding: str, encoder: str) -> int:
    """Stable per-cell seed; adding cells never changes existing ones."""
    digest = hashlib.sha256(f"{base_seed}|{embedding}|{encoder}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


# cell pipeline ----------------------------------------------------------

def _train_static_table(config: ExperimentConfig, data: DatasetSplit, vocab: Vocabulary) -> EmbeddingTable:
    if config.embedding_file is not None:
        return load_embedding_text(config.embedding_file, config.embed_dim, vocab)
    cooc = build_cooccurrence(list(data.train), vocab, config.glove_window)
    glove_config = GloveTrainConfig(
        dim=config.embed_dim,
        window=config.glove_window,
        x_max=config.glove_x_max,
        alpha=config.glove_alpha,
        learning_rate=config.glove_lr,
        epochs=config.glove_epochs,
        seed=config.seed,
    )
    return train_glove(cooc, glove_config, vocab_size=len(vocab))


def _train_cell_bilm(config: ExperimentConfig, data: DatasetSplit, vocab: Vocabulary) -> BiLmParams:
    bilm_config = BiLmTrainConfig(
        dim=config.bilm_dim,
        learning_rate=config.bilm_lr,
        epochs=config.bilm_epochs,
        batch_size=config.bilm_batch,
        seed=config.seed,
    )
    params, _ = train_bilm(list(data.train), vocab, bilm_config, max_len=config.max_len)
    return params


def _attach_precomputed(config: ExperimentConfig, data: DatasetSplit, vocab: Vocabulary, parts: dict) -> int:
    """Fill ``ex.ctx`` for every example from per-part context files,
    generating the files from a freshly trained bi-LM when no paths are
    configured. Returns the context width."""
    paths = (config.ctx_train, config.ctx_validation, config.ctx_test)
    if all(p is not None for p in paths):
        sources = {name: Path(p) for name, p in zip(("train", "validation", "test"), paths)}
    else:
        bilm = _train_cell_bilm(config, data, vocab)
        base = Path(config.out_dir) / "ctx" if config.out_dir else Path(tempfile.mkdtemp(prefix="ctx-"))
        base.mkdir(parents=True, exist_ok=True)
        sources = {}
        for name in ("train", "validation", "test"):
            encoded = encode_all(list(getattr(data, name)), vocab, config.max_len)
            stacks = [run_bilm(bilm, e.ids, e.valid_length) for e in encoded]
            path = base / f"{config.embedding}--{config.encoder}-{name}.ctx"
            save_precomputed(path, stacks)
            sources[name] = path
    width = None
    for name, examples in parts.items():
        stacks = load_precomputed(sources[name])
        if len(stacks) != len(examples):
            raise GridConfigError(
                f"context file for the {name} part holds {len(stacks)} documents, expected {len(examples)}"
            )
        for ex, ctx in zip(examples, stacks):
            if ctx.valid_length != ex.valid_length:
                raise GridConfigError(
                    f"context/document length mismatch in the {name} part: {ctx.valid_length} vs {ex.valid_length}"
                )
            if width is None:
                width = ctx.context_dim
            elif ctx.context_dim != width:
                raise GridConfigError("context files disagree on vector width")
            ex.ctx = ctx
    if width is None:
        raise GridConfigError("context files contain no documents")
    return width


def _init_encoder(config: ExperimentConfig, d_in: int, rng: np.random.Generator):
    if config.encoder == "cnn":
        return init_cnn(d_in, widths=list(config.cnn_widths), channels=config.cnn_channels, pooling=config.cnn_pooling, rng=rng)
    if config.encoder == "gru":
        return init_gru(d_in, hidden=config.gru_hidden, rng=rng)
    return init_transformer(
        d_in,
        d_model=config.tf_d_model,
        n_layers=config.tf_layers,
        n_heads=config.tf_heads,
        d_ff=config.tf_ff,
        max_len=config.max_len,
        rng=rng,
    )


def prepare_cell(config: ExperimentConfig, data: DatasetSplit) -> tuple[ModelAssembly, SplitExamples, Vocabulary]:
    """Build the vocabulary, encode all three parts, run the pathway's
    pretraining, and assemble the model for one cell."""
    vocab = build_vocabulary(list(data.train), min_count=config.min_count)
    parts = {}
    for name in ("train", "validation", "test"):
        encoded = encode_all(list(getattr(data, name)), vocab, config.max_len)
        parts[name] = [Example(ids=e.ids, valid_length=e.valid_length, label=e.label) for e in encoded]

    table = None
    bilm = None
    mixer = None
    if config.embedding == "glove-static":
        table = _train_static_table(config, data, vocab)
        d_in = table.dim
    elif config.embedding == "bilm-contextual":
        bilm = _train_cell_bilm(config, data, vocab)
        mixer = LayerMixWeights.uniform(bilm.N_LAYERS)
        d_in = bilm.context_dim
    else:
        d_in = _attach_precomputed(config, data, vocab, parts)
        n_layers = parts["train"][0].ctx.n_layers if parts["train"] else 2
        mixer = LayerMixWeights.uniform(n_layers)

    rng = np.random.default_rng(config.seed)
    encoder = _init_encoder(config, d_in, rng)
    head = ClassifierHead(
        weight=rng.normal(0.0, 1.0 / np.sqrt(encoder.output_dim), encoder.output_dim),
        bias=np.asarray(0.0),
    )
    assembly = ModelAssembly(
        pathway=config.embedding,
        encoder_kind=config.encoder,
        encoder=encoder,
        head=head,
        embedding_table=table,
        embedding_trainable=config.embedding_trainable,
        bilm=bilm,
        mixer=mixer,
    )
    splits = SplitExamples(train=parts["train"], validation=parts["validation"], test=parts["test"])
    return assembly, splits, vocab


# results ----------------------------------------------------------------

@dataclass
class RunResult:
    embedding: str
    encoder: str
    seed: int
    report: metrics.MetricsReport | None
    history: TrainHistory | None
    wall_clock_seconds: float
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class ResultsTable:
    embeddings: tuple[str, ...]
    encoders: tuple[str, ...]
    cells: dict

    def _extreme(self, want_max: bool):
        chosen = None
        chosen_auc = None
        for emb in self.embeddings:
            for enc in self.encoders:
                result = self.cells.get((emb, enc))
                if result is None or result.failed:
                    continue
                auc = result.report.auc
                if chosen is None or (auc > chosen_auc if want_max else auc < chosen_auc):
                    chosen, chosen_auc = (emb, enc), auc
        return chosen

    def best_cell(self):
        """Key of the maximal-AUC cell (ties -> first in row-major order)."""
        return self._extreme(want_max=True)

    def worst_cell(self):
        return self._extreme(want_max=False)


@dataclass
class CellOutcome:
    result: RunResult
    assembly: ModelAssembly | None
    vocab: Vocabulary | None


def run_cell(config: ExperimentConfig, data: DatasetSplit) -> CellOutcome:
    """Train and evaluate one cell; any exception is captured in the
    result instead of propagating."""
    start = time.perf_counter()
    try:
        assembly, splits, vocab = prepare_cell(config, data)
        train_config = dataclasses.replace(config.train, seed=config.seed)
        trained, history = train_model(assembly, splits, train_config)
        report = evaluate(trained, splits.test)
        result = RunResult(
            embedding=config.embedding,
            encoder=config.encoder,
            seed=config.seed,
            report=report,
            history=history,
            wall_clock_seconds=time.perf_counter() - start,
        )
        return CellOutcome(result=result, assembly=trained, vocab=vocab)
    except Exception as err:  # noqa: BLE001 - cell isolation is the contract
        result = RunResult(
            embedding=config.embedding,
            encoder=config.encoder,
            seed=config.seed,
            report=None,
            history=None,
            wall_clock_seconds=time.perf_counter() - start,
            error=f"{type(err).__name__}: {err}",
        )
        return CellOutcome(result=result, assembly=None, vocab=None)


def _check_rectangular(configs: list[ExperimentConfig]) -> tuple[tuple[str, ...], tuple[str, ...]]:
    embeddings = tuple(dict.fromkeys(c.embedding for c in configs))
    encoders = tuple(dict.fromkeys(c.encoder for c in configs))
    keys = [(c.embedding, c.encoder) for c in configs]
    wanted = [(emb, enc) for emb in embeddings for enc in encoders]
    if len(keys) != len(set(keys)) or set(keys) != set(wanted):
        raise GridConfigError("configs must cover a full embedding x encoder grid with no duplicates")
    return embeddings, encoders


def run_matrix(configs: list[ExperimentConfig], data: DatasetSplit, out_dir: str | Path | None = None) -> ResultsTable:
    """Run every cell independently; failures stay inside their cell.
    With ``out_dir`` set, also write per-cell checkpoints and a JSON-lines
    run log (one record per epoch plus a completion record per cell)."""
    if not configs:
        raise GridConfigError("no experiment configs given")
    embeddings, encoders = _check_rectangular(configs)
    out_path = Path(out_dir) if out_dir is not None else None
    log_lines = []
    cells = {}
    for config in configs:
        outcome = run_cell(config, data)
        result = outcome.result
        cells[(config.embedding, config.encoder)] = result
        if result.history is not None:
            for epoch in range(result.history.epochs):
                log_lines.append(
                    {
                        "embedding": config.embedding,
                        "encoder": config.encoder,
                        "seed": config.seed,
                        "epoch": epoch,
                        "train_loss": result.history.train_loss[epoch],
                        "val_loss": result.history.val_loss[epoch],
                        "val_auc": result.history.val_auc[epoch],
                    }
                )
        log_lines.append(
            {
                "embedding": config.embedding,
                "encoder": config.encoder,
                "seed": config.seed,
                "event": "cell-complete",
                "status": "failed" if result.failed else "ok",
                "error": result.error,
                "selected_epoch": None if result.history is None else result.history.selected_epoch,
                "test_auc": None if result.report is None else result.report.auc,
                "wall_clock_seconds": result.wall_clock_seconds,
            }
        )
        if out_path is not None and outcome.assembly is not None:
            ckpt_dir = out_path / "checkpoints"
            ckpt_dir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(
                outcome.assembly,
                ckpt_dir / f"{config.embedding}--{config.encoder}.tgck",
                seed=config.seed,
                epoch=result.history.selected_epoch,
                vocab=outcome.vocab,
            )
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        with open(out_path / "runlog.jsonl", "w", encoding="utf-8") as fh:
            for record in log_lines:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    return ResultsTable(embeddings=embeddings, encoders=encoders, cells=cells)


# table emission ---------------------------------------------------------

def _marker_for(key, best, worst) -> str:
    if key == best and key == worst:
        return "best+worst"
    if key == best:
        return "best"
    if key == worst:
        return "worst"
    return ""


def emit_table(table: ResultsTable, format: str = "markdown") -> str:
    """Render the grid with Accuracy/Precision/Recall/F1/AUC at three
    decimals; output bytes are a pure function of the table contents."""
    if not table.cells:
        raise ValueError("cannot emit an empty results table")
    if format not in ("markdown", "csv"):
        raise ValueError(f"unknown table format {format!r}")
    best = table.best_cell()
    worst = table.worst_cell()
    rows = []
    for emb in table.embeddings:
        for enc in table.encoders:
            key = (emb, enc)
            if key not in table.cells:
                raise ValueError(f"missing cell {key}")
            rows.append((key, table.cells[key], _marker_for(key, best, worst)))

    if format == "csv":
        buf = StringIO()
        buf.write("embedding,encoder,accuracy,precision,recall,f1,auc,marker,status\n")
        for (emb, enc), result, marker in rows:
            if result.failed:
                buf.write(f"{emb},{enc},,,,,,{marker},failed\n")
            else:
                r = result.report
                buf.write(
                    f"{emb},{enc},{r.accuracy:.3f},{r.precision:.3f},{r.recall:.3f},{r.f1:.3f},{r.auc:.3f},{marker},ok\n"
                )
        return buf.getvalue()

    lines = [
        "| Embedding | Encoder | Accuracy | Precision | Recall | F1 | AUC |",
        "| --- | --- | --- | --- | --- | --- | --- |",
    ]
    for (emb, enc), result, marker in rows:
        if result.failed:
            lines.append(f"| {emb} | {enc} | failed | failed | failed | failed | failed |")
            continue
        r = result.report
        auc_text = f"{r.auc:.3f}"
        if marker == "best+worst":
            auc_text = f"***{auc_text}***"
        elif marker == "best":
            auc_text = f"**{auc_text}**"
        elif marker == "worst":
            auc_text = f"*{auc_text}*"
        lines.append(
            f"| {emb} | {enc} | {r.accuracy:.3f} | {r.precision:.3f} | {r.recall:.3f} | {r.f1:.3f} | {auc_text} |"
        )
    lines.append("")
    lines.append("Best AUC in bold, worst in italics.")
    return "\n".join(lines) + "\n"


# checkpoints ------------------------------------------------------------

def _describe_assembly(assembly: ModelAssembly) -> dict:
    encoder = assembly.encoder
    if assembly.encoder_kind == "cnn":
        enc_meta = {
            "kind": "cnn",
            "widths": [bank.width for bank in encoder.banks],
            "channels": [int(ad.value(bank.kernel).shape[0]) for bank in encoder.banks],
            "d_in": int(ad.value(encoder.banks[0].kernel).shape[2]),
            "pooling": encoder.pooling,
        }
    elif assembly.encoder_kind == "gru":
        w = ad.value(encoder.w_z)
        enc_meta = {"kind": "gru", "d_in": int(w.shape[1]), "hidden": int(w.shape[0])}
    else:
        proj = encoder.input_proj
        enc_meta = {
            "kind": "transformer",
            "n_heads": encoder.n_heads,
            "d_model": encoder.d_model,
            "n_layers": len(encoder.layers),
            "d_ff": int(ad.value(encoder.layers[0].w_ff1).shape[1]),
            "max_len": int(ad.value(encoder.positional).shape[0]),
            "d_in": encoder.d_model if proj is None else int(ad.value(proj).shape[0]),
        }
    table = assembly.embedding_table
    bilm = assembly.bilm
    return {
        "pathway": assembly.pathway,
        "encoder": enc_meta,
        "head_dim": int(ad.value(assembly.head.weight).shape[0]),
        "embedding_trainable": assembly.embedding_trainable,
        "embedding_table": None
        if table is None
        else {"dim": table.dim, "vocab_size": int(ad.value(table.matrix).shape[0]), "provenance": table.provenance},
        "bilm": None
        if bilm is None
        else {"vocab_size": int(ad.value(bilm.embedding).shape[0]), "dim": int(ad.value(bilm.embedding).shape[1])},
        "mixer": None if assembly.mixer is None else {"n_layers": int(ad.value(assembly.mixer.s_raw).shape[0])},
    }


def _skeleton_from_meta(meta: dict) -> ModelAssembly:
    enc_meta = meta["encoder"]
    if enc_meta["kind"] == "cnn":
        banks = [
            CnnFilterBank(width=w, kernel=np.zeros((c, w, enc_meta["d_in"])), bias=np.zeros(c))
            for w, c in zip(enc_meta["widths"], enc_meta["channels"])
        ]
        encoder = CnnEncoderParams(banks=banks, pooling=enc_meta["pooling"])
    elif enc_meta["kind"] == "gru":
        d, h = enc_meta["d_in"], enc_meta["hidden"]
        z = np.zeros
        encoder = GruCellParams(
            w_z=z((h, d)), u_z=z((h, h)), b_z=z(h),
            w_r=z((h, d)), u_r=z((h, h)), b_r=z(h),
            w_h=z((h, d)), u_h=z((h, h)), b_h=z(h),
        )
    else:
        dm, dff = enc_meta["d_model"], enc_meta["d_ff"]
        layers = [
            TransformerLayerParams(
                w_q=np.zeros((dm, dm)), w_k=np.zeros((dm, dm)), w_v=np.zeros((dm, dm)), w_o=np.zeros((dm, dm)),
                w_ff1=np.zeros((dm, dff)), b_ff1=np.zeros(dff),
                w_ff2=np.zeros((dff, dm)), b_ff2=np.zeros(dm),
                ln1_gain=np.zeros(dm), ln1_bias=np.zeros(dm),
                ln2_gain=np.zeros(dm), ln2_bias=np.zeros(dm),
            )
            for _ in range(enc_meta["n_layers"])
        ]
        d_in = enc_meta["d_in"]
        encoder = TransformerEncoderParams(
            n_heads=enc_meta["n_heads"],
            d_model=dm,
            layers=layers,
            positional=np.zeros((enc_meta["max_len"], dm)),
            input_proj=None if d_in == dm else np.zeros((d_in, dm)),
        )

    table_meta = meta["embedding_table"]
    table = None
    if table_meta is not None:
        table = EmbeddingTable(
            dim=table_meta["dim"],
            matrix=np.zeros((table_meta["vocab_size"], table_meta["dim"])),
            provenance=table_meta["provenance"],
        )
    bilm_meta = meta["bilm"]
    bilm = None
    if bilm_meta is not None:
        bilm = init_bilm(bilm_meta["vocab_size"], bilm_meta["dim"], np.random.default_rng(0))
    mixer_meta = meta["mixer"]
    mixer = None if mixer_meta is None else LayerMixWeights.uniform(mixer_meta["n_layers"])
    head = ClassifierHead(weight=np.zeros(meta["head_dim"]), bias=np.asarray(0.0))
    return ModelAssembly(
        pathway=meta["pathway"],
        encoder_kind=enc_meta["kind"],
        encoder=encoder,
        head=head,
        embedding_table=table,
        embedding_trainable=meta["embedding_trainable"],
        bilm=bilm,
        mixer=mixer,
    )


def _write_container(path: str | Path, meta: dict, groups: dict) -> None:
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<H", CKPT_VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(groups)))
        for name in sorted(groups):
            # np.ascontiguousarray would promote 0-d arrays to 1-d
            arr = np.asarray(ad.value(groups[name]), dtype="<f8", order="C")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"checkpoint truncated reading {what}: expected {n} bytes, got {len(data)}")
    return data


def _read_container(path: str | Path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CKPT_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}; not a TGCK checkpoint")
        (version,) = struct.unpack("<H", _read_exact(fh, 2, "version"))
        if version != CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}; this build reads version {CKPT_VERSION}")
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4, "meta length"))
        try:
            meta = json.loads(_read_exact(fh, meta_len, "meta block").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as err:
            raise CheckpointError(f"unreadable meta block: {err}") from None
        (n_groups,) = struct.unpack("<I", _read_exact(fh, 4, "group count"))
        loaded = {}
        for i in range(n_groups):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, f"group {i} name length"))
            name = _read_exact(fh, name_len, f"group {i} name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, f"{name} rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, f"{name} dims"))
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            payload = _read_exact(fh, 8 * count, f"{name} payload")
            loaded[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError("trailing data after the last parameter group")
    return meta, loaded


def _vocab_meta(vocab: Vocabulary | None):
    if vocab is None:
        return None
    return {"id_to_token": list(vocab.id_to_token), "min_count": vocab.min_count}


def _vocab_from_meta(vocab_meta) -> Vocabulary | None:
    if vocab_meta is None:
        return None
    tokens = tuple(vocab_meta["id_to_token"])
    return Vocabulary(
        token_to_id={tok: i for i, tok in enumerate(tokens)},
        id_to_token=tokens,
        min_count=vocab_meta["min_count"],
    )


def save_checkpoint(
    assembly: ModelAssembly,
    path: str | Path,
    seed: int = 0,
    epoch: int = -1,
    vocab: Vocabulary | None = None,
) -> None:
    """Binary container: magic, version u16, JSON meta block, then every
    parameter group as name + rank + dims + little-endian float64
    payload. Round trips are bit-exact."""
    meta = {
        "content": "assembly",
        "assembly": _describe_assembly(assembly),
        "seed": seed,
        "epoch": epoch,
        "vocab": _vocab_meta(vocab),
    }
    _write_container(path, meta, collect_arrays(assembly))


def load_checkpoint(path: str | Path) -> tuple[ModelAssembly, dict]:
    """Rebuild the assembly and return it with a meta dict holding the
    training seed, selected epoch, and (when saved) the Vocabulary."""
    meta, loaded = _read_container(path)
    if meta.get("content", "assembly") != "assembly":
        raise CheckpointError(f"file holds {meta.get('content')!r} parameters, not a model assembly")
    skeleton = _skeleton_from_meta(meta["assembly"])
    expected = collect_arrays(skeleton)
    if set(loaded) != set(expected):
        missing = sorted(set(expected) - set(loaded))
        extra = sorted(set(loaded) - set(expected))
        raise CheckpointError(f"parameter groups do not match the description: missing {missing}, unknown {extra}")
    for name, arr in loaded.items():
        if arr.shape != np.asarray(expected[name]).shape:
            raise CheckpointError(
                f"shape mismatch for {name}: file has {arr.shape}, assembly needs {np.asarray(expected[name]).shape}"
            )
    assembly = rebind_arrays(skeleton, loaded)
    vocab = _vocab_from_meta(meta.get("vocab"))
    return assembly, {"seed": meta["seed"], "epoch": meta["epoch"], "vocab": vocab}


def save_bilm(bilm: BiLmParams, path: str | Path, seed: int = 0, vocab: Vocabulary | None = None) -> None:
    """Same container as model checkpoints, holding only language-model
    parameters (for later context export)."""
    embedding = ad.value(bilm.embedding)
    meta = {
        "content": "bilm",
        "bilm": {"vocab_size": int(embedding.shape[0]), "dim": int(embedding.shape[1])},
        "seed": seed,
        "vocab": _vocab_meta(vocab),
    }
    _write_container(path, meta, collect_arrays(bilm))


def load_bilm(path: str | Path) -> tuple[BiLmParams, dict]:
    meta, loaded = _read_container(path)
    if meta.get("content") != "bilm":
        raise CheckpointError(f"file holds {meta.get('content', 'assembly')!r} parameters, not a bi-LM")
    skeleton = init_bilm(meta["bilm"]["vocab_size"], meta["bilm"]["dim"], np.random.default_rng(0))
    expected = collect_arrays(skeleton)
    if set(loaded) != set(expected):
        missing = sorted(set(expected) - set(loaded))
        extra = sorted(set(loaded) - set(expected))
        raise CheckpointError(f"parameter groups do not match the description: missing {missing}, unknown {extra}")
    for name, arr in loaded.items():
        if arr.shape != np.asarray(expected[name]).shape:
            raise CheckpointError(
                f"shape mismatch for {name}: file has {arr.shape}, assembly needs {np.asarray(expected[name]).shape}"
            )
    bilm = rebind_arrays(skeleton, loaded)
    return bilm, {"seed": meta.get("seed", 0), "vocab": _vocab_from_meta(meta.get("vocab"))}


# grid configs -----------------------------------------------------------

_DATA_KEYS = {"path", "format", "text_col", "label_col", "ratios", "split_seed"}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def build_experiment_config(embedding: str, encoder: str, settings: dict, seed: int, out_dir: str | None) -> ExperimentConfig:
    settings = dict(settings)
    train_map = settings.pop("train", {})
    if not isinstance(train_map, dict):
        raise GridConfigError("the train section must be a table of training settings")
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(train_map) - train_fields
    if unknown:
        raise GridConfigError(f"unknown training settings: {sorted(unknown)}")
    try:
        train = TrainConfig(**{**train_map, "seed": seed})
    except (TypeError, ValueError) as err:
        raise GridConfigError(f"bad training settings: {err}") from None

    config_fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(settings) - (config_fields - {"embedding", "encoder", "train", "seed", "out_dir"})
    if unknown:
        raise GridConfigError(f"unknown experiment settings: {sorted(unknown)}")
    if "cnn_widths" in settings:
        settings["cnn_widths"] = tuple(settings["cnn_widths"])
    try:
        return ExperimentConfig(
            embedding=embedding, encoder=encoder, train=train, seed=seed, out_dir=out_dir, **settings
        )
    except (TypeError, ValueError) as err:
        raise GridConfigError(f"bad experiment settings: {err}") from None


def grid_configs(mapping: dict, out_dir: str | None = None) -> tuple[list[ExperimentConfig], dict]:
    """Expand a parsed grid mapping into per-cell configs plus the data
    section. Layout: [grid] embeddings/encoders/seed, [data] path etc.,
    [defaults] shared settings (with [defaults.train]), and optional
    [cell.<embedding>.<encoder>] override tables."""
    grid = mapping.get("grid")
    if not isinstance(grid, dict) or "embeddings" not in grid or "encoders" not in grid:
        raise GridConfigError("config needs a [grid] section with 'embeddings' and 'encoders' lists")
    embeddings = list(grid["embeddings"])
    encoders = list(grid["encoders"])
    if not embeddings or not encoders:
        raise GridConfigError("embeddings and encoders lists must be non-empty")
    base_seed = int(grid.get("seed", 0))

    data = mapping.get("data")
    if not isinstance(data, dict) or "path" not in data:
        raise GridConfigError("config needs a [data] section with a 'path'")
    unknown = set(data) - _DATA_KEYS
    if unknown:
        raise GridConfigError(f"unknown data settings: {sorted(unknown)}")

    defaults = mapping.get("defaults", {})
    overrides = mapping.get("cell", {})
    known_sections = {"grid", "data", "defaults", "cell"}
    unknown = set(mapping) - known_sections
    if unknown:
        raise GridConfigError(f"unknown config sections: {sorted(unknown)}")

    configs = []
    for embedding in embeddings:
        for encoder in encoders:
            settings = defaults
            cell_override = overrides.get(embedding, {}).get(encoder, {})
            if cell_override:
                settings = _merge(defaults, cell_override)
            seed = derive_cell_seed(base_seed, embedding, encoder)
            configs.append(build_experiment_config(embedding, encoder, settings, seed, out_dir))
    return configs, dict(data)


def load_grid_file(path: str | Path) -> dict:
    try:
        import tomllib  # Python >= 3.11
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as err:
        raise GridConfigError(f"cannot parse grid config {path}: {err}") from None


def split_from_data_section(data_spec: dict) -> DatasetSplit:
    from .corpus import documents_from_records, load_dataset, split_dataset

    records = load_dataset(
        data_spec["path"],
        file_format=data_spec.get("format", "csv"),
        text_col=int(data_spec.get("text_col", 0)),
        label_col=int(data_spec.get("label_col", 1)),
    )
    docs = documents_from_records(records)
    ratios = tuple(data_spec.get("ratios", (0.7, 0.1, 0.2)))
    return split_dataset(docs, ratios=ratios, seed=int(data_spec.get("split_seed", 0)))


def run_grid(mapping: dict, out_dir: str | Path) -> ResultsTable:
    """Full matrix entry point: load + split the dataset, run every cell,
    and write table.md, table.csv, runlog.jsonl, and checkpoints."""
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    configs, data_spec = grid_configs(mapping, out_dir=str(out_path))
    data = split_from_data_section(data_spec)
    table = run_matrix(configs, data, out_dir=out_path)
    (out_path / "table.md").write_bytes(emit_table(table, "markdown").encode("utf-8"))
    (out_path / "table.csv").write_bytes(emit_table(table, "csv").encode("utf-8"))
    return table
