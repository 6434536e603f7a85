"""Model assembly and training: embedding pathway -> encoder -> sigmoid
head, binary cross-entropy, exact reverse-mode gradients, SGD/Adam, and
seeded training with validation-AUC early stopping.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import metrics
from .context_embed import BiLmParams, ContextualLayers, LayerMixWeights, mix_layers, run_bilm
from .encoders import (
    CnnEncoderParams,
    GruCellParams,
    TransformerEncoderParams,
    cnn_encode,
    gru_encode,
    transformer_encode,
)
from .static_embed import EmbeddingTable, embed_sequence

log = logging.getLogger(__name__)

PATHWAYS = ("glove-static", "bilm-contextual", "precomputed-contextual")
ENCODER_KINDS = ("cnn", "gru", "transformer")

PROB_CLAMP = 1e-7  # keeps the cross entropy finite at saturated outputs


class TrainingDivergence(RuntimeError):
    """Raised when a loss or gradient goes non-finite."""


# parameter-tree utilities ----------------------------------------------

_SCALAR_TYPES = (int, float, str, bool)


def collect_arrays(obj, prefix: str = "") -> dict:
    """Flatten every ndarray/Var reachable through dataclass fields and
    list items into a name -> array mapping (names are dotted paths)."""
    out = {}
    if isinstance(obj, (np.ndarray, ad.Var)):
        out[prefix] = obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if value is None or isinstance(value, _SCALAR_TYPES):
                continue
            out.update(collect_arrays(value, f"{prefix}.{f.name}" if prefix else f.name))
    elif isinstance(obj, (list, tuple)):
        for i, value in enumerate(obj):
            out.update(collect_arrays(value, f"{prefix}.{i}" if prefix else str(i)))
    return out


def rebind_arrays(obj, mapping: dict, prefix: str = ""):
    """Structural copy of ``obj`` with arrays swapped for their entry in
    ``mapping`` (matched by dotted path); missing names keep the
    original array."""
    if isinstance(obj, (np.ndarray, ad.Var)):
        if prefix not in mapping:
            return obj
        swapped = mapping[prefix]
        # numpy scalars subclass float and would vanish from the next
        # collect_arrays pass; keep every bound leaf a real ndarray
        if not isinstance(swapped, (np.ndarray, ad.Var)):
            swapped = np.asarray(swapped, dtype=np.float64)
        return swapped
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        changes = {}
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if value is None or isinstance(value, _SCALAR_TYPES):
                continue
            name = f"{prefix}.{f.name}" if prefix else f.name
            changes[f.name] = rebind_arrays(value, mapping, name)
        return dataclasses.replace(obj, **changes)
    if isinstance(obj, (list, tuple)):
        rebound = [rebind_arrays(v, mapping, f"{prefix}.{i}" if prefix else str(i)) for i, v in enumerate(obj)]
        return type(obj)(rebound)
    return obj


# assembly ---------------------------------------------------------------

@dataclass
class ClassifierHead:
    weight: np.ndarray  # (encoder output dim,)
    bias: np.ndarray  # 0-d


@dataclass
class Example:
    """One classification instance: padded id sequence, its true length,
    the label, and (for contextual pathways) per-token layer stacks."""

    ids: np.ndarray
    valid_length: int
    label: int
    ctx: ContextualLayers | None = None


@dataclass
class SplitExamples:
    train: list[Example]
    validation: list[Example]
    test: list[Example]


@dataclass
class ModelAssembly:
    """Embedding pathway + encoder + binary head.

    Trainability: the encoder and head always train; mixer weights train
    on the contextual pathways; the static table trains only when
    ``embedding_trainable`` is set; bi-LM parameters are frozen features.
    """

    pathway: str
    encoder_kind: str
    encoder: CnnEncoderParams | GruCellParams | TransformerEncoderParams
    head: ClassifierHead
    embedding_table: EmbeddingTable | None = None
    embedding_trainable: bool = False
    bilm: BiLmParams | None = None
    mixer: LayerMixWeights | None = None

    def __post_init__(self):
        if self.pathway not in PATHWAYS:
            raise ValueError(f"unknown pathway {self.pathway!r}")
        if self.encoder_kind not in ENCODER_KINDS:
            raise ValueError(f"unknown encoder {self.encoder_kind!r}")
        if self.pathway == "glove-static" and self.embedding_table is None:
            raise ValueError("glove-static pathway needs an embedding table")
        if self.pathway == "bilm-contextual" and (self.bilm is None or self.mixer is None):
            raise ValueError("bilm-contextual pathway needs bi-LM parameters and mix weights")
        if self.pathway == "precomputed-contextual" and self.mixer is None:
            raise ValueError("precomputed-contextual pathway needs mix weights")

    def trainable_names(self) -> list[str]:
        names = [n for n in collect_arrays(self) if n.startswith(("encoder.", "head."))]
        if self.pathway == "glove-static" and self.embedding_trainable:
            names.append("embedding_table.matrix")
        if self.pathway in ("bilm-contextual", "precomputed-contextual"):
            names.extend(["mixer.s_raw", "mixer.gamma"])
        return sorted(names)


def attach_bilm_context(assembly: ModelAssembly, examples: list[Example]) -> None:
    """Cache the frozen bi-LM layer stacks on each example so epochs do
    not recompute them. No-op for other pathways or already-cached
    examples."""
    if assembly.pathway != "bilm-contextual":
        return
    for ex in examples:
        if ex.ctx is None:
            ex.ctx = run_bilm(assembly.bilm, ex.ids, ex.valid_length)


def _embedded_sequence(assembly: ModelAssembly, ex: Example):
    if assembly.pathway == "glove-static":
        return embed_sequence(assembly.embedding_table.matrix, ex.ids, ex.valid_length)
    if assembly.pathway == "bilm-contextual":
        ctx = ex.ctx if ex.ctx is not None else run_bilm(assembly.bilm, ex.ids, ex.valid_length)
        return mix_layers(ctx, assembly.mixer)
    if ex.ctx is None:
        raise ValueError("precomputed-contextual pathway requires ctx layers on every example")
    return mix_layers(ex.ctx, assembly.mixer)


def _encoded_vector(assembly: ModelAssembly, seq, valid_length: int):
    if assembly.encoder_kind == "cnn":
        return cnn_encode(assembly.encoder, seq, valid_length)
    if assembly.encoder_kind == "gru":
        return gru_encode(assembly.encoder, seq, valid_length)
    return transformer_encode(assembly.encoder, seq, valid_length)


def forward(assembly: ModelAssembly, ex: Example):
    """Probability that ``ex`` is the positive class:
    sigmoid(w . encode(embed(ids)) + b). Deterministic; traced when the
    assembly holds tape Vars."""
    seq = _embedded_sequence(assembly, ex)
    encoded = _encoded_vector(assembly, seq, ex.valid_length)
    return ad.sigmoid(ad.matmul(assembly.head.weight, encoded) + assembly.head.bias)


def predict_proba(assembly: ModelAssembly, ex: Example) -> float:
    return float(ad.value(forward(assembly, ex)))


def bce_loss(p, y: int):
    """Binary cross entropy -[y ln p + (1-y) ln(1-p)] with p clamped to
    [1e-7, 1 - 1e-7]."""
    p = ad.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(y * ad.log(p) + (1 - y) * ad.log(ad.sub(1.0, p)))


def backward(assembly: ModelAssembly, batch: list[Example]) -> tuple[dict, float]:
    """Exact gradients of the mean batch BCE for every trainable group
    (frozen groups get no entry). Returns (gradients, loss)."""
    if not batch:
        raise ValueError("backward needs a non-empty batch")
    arrays = collect_arrays(assembly)
    leaves = {name: ad.Var(arrays[name]) for name in assembly.trainable_names()}
    traced = rebind_arrays(assembly, leaves)
    total = None
    for ex in batch:
        loss = bce_loss(forward(traced, ex), ex.label)
        total = loss if total is None else total + loss
    mean_loss = total * (1.0 / len(batch))
    loss_value = float(mean_loss.data)
    if not math.isfinite(loss_value):
        raise TrainingDivergence(f"non-finite batch loss {loss_value}")
    mean_loss.backward()
    grads = {}
    for name, leaf in leaves.items():
        g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(f"non-finite gradient in parameter group {name!r}")
        grads[name] = g
    return grads, loss_value


def batch_loss(assembly: ModelAssembly, batch: list[Example]) -> float:
    """Mean BCE without building a tape."""
    total = 0.0
    for ex in batch:
        total += float(ad.value(bce_loss(predict_proba(assembly, ex), ex.label)))
    return total / len(batch)


# optimizers -------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 5
    optimizer: str = "adam"  # or "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ValueError("learning_rate, batch_size, and patience must be positive; max_epochs >= 0")
        if self.max_epochs >= 1 and self.patience > self.max_epochs:
            raise ValueError(f"patience {self.patience} exceeds max_epochs {self.max_epochs}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def optimizer_step(
    params: dict,
    grads: dict,
    config: TrainConfig,
    step: int,
    moments: dict | None = None,
) -> dict:
    """One update. SGD: theta -= lr * g. Adam: bias-corrected first and
    second moments; ``moments`` holds per-group state across calls and
    ``step`` is 1-based."""
    updated = dict(params)
    for name, g in grads.items():
        theta = params[name]
        if config.optimizer == "sgd":
            # asarray keeps 0-d parameters as arrays (numpy scalar results
            # would be skipped by the dataclass walkers)
            updated[name] = np.asarray(theta - config.learning_rate * g)
            continue
        if moments is None:
            raise ValueError("adam requires a moments dict")
        m, v = moments.get(name, (np.zeros_like(g), np.zeros_like(g)))
        m = np.asarray(config.beta1 * m + (1.0 - config.beta1) * g)
        v = np.asarray(config.beta2 * v + (1.0 - config.beta2) * (g * g))
        moments[name] = (m, v)
        m_hat = m / (1.0 - config.beta1**step)
        v_hat = v / (1.0 - config.beta2**step)
        updated[name] = np.asarray(theta - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps_opt))
    return updated


# training loop ----------------------------------------------------------

@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_auc: list[float] = field(default_factory=list)
    selected_epoch: int = -1  # index of the restored (best validation AUC) epoch

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


def scores_for(assembly: ModelAssembly, examples: list[Example]) -> list[metrics.ScoredExample]:
    return [metrics.ScoredExample(score=predict_proba(assembly, ex), label=ex.label) for ex in examples]


def evaluate(assembly: ModelAssembly, examples: list[Example], threshold: float = 0.5) -> metrics.MetricsReport:
    attach_bilm_context(assembly, examples)
    return metrics.report(scores_for(assembly, examples), threshold=threshold)


def train_model(
    assembly: ModelAssembly,
    data: SplitExamples,
    config: TrainConfig,
) -> tuple[ModelAssembly, TrainHistory]:
    """Seeded mini-batch training with early stopping on validation AUC.

    Stops after ``patience`` epochs without a strict improvement (so ties
    keep the earliest best epoch) or at ``max_epochs``, then restores the
    parameters of the best epoch.
    """
    if not (data.train and data.validation and data.test):
        raise ValueError("train, validation, and test parts must all be non-empty")
    history = TrainHistory()
    if config.max_epochs == 0:
        return assembly, history

    attach_bilm_context(assembly, data.train)
    attach_bilm_context(assembly, data.validation)

    rng = np.random.default_rng(config.seed)
    params = {name: arr.copy() for name, arr in collect_arrays(assembly).items() if name in assembly.trainable_names()}
    assembly = rebind_arrays(assembly, params)
    moments: dict = {}
    step = 0
    best_auc = -math.inf
    best_epoch = -1
    best_params: dict = {}
    epochs_since_best = 0

    for epoch in range(config.max_epochs):
        order = rng.permutation(len(data.train))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [data.train[i] for i in order[start : start + config.batch_size]]
            try:
                grads, loss = backward(assembly, batch)
            except TrainingDivergence as err:
                raise TrainingDivergence(f"epoch {epoch}: {err}") from None
            epoch_loss += loss * len(batch)
            step += 1
            params = optimizer_step(params, grads, config, step, moments)
            assembly = rebind_arrays(assembly, params)
        history.train_loss.append(epoch_loss / len(data.train))
        history.val_loss.append(batch_loss(assembly, data.validation))
        val_auc = metrics.auc(scores_for(assembly, data.validation))
        history.val_auc.append(val_auc)
        if val_auc > best_auc:
            best_auc = val_auc
            best_epoch = epoch
            best_params = {name: arr.copy() for name, arr in params.items()}
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                break

    history.selected_epoch = best_epoch
    assembly = rebind_arrays(assembly, best_params)
    log.info("training stopped after %d epochs; selected epoch %d (val AUC %.4f)", history.epochs, best_epoch, best_auc)
    return assembly, history
