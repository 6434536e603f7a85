"""Finite-difference verification of the reverse-mode gradients.

Builds each pathway x encoder assembly at toy sizes, computes analytic
gradients of a mean binary-cross-entropy batch loss, and compares every
trainable coordinate against central differences.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .context_embed import LayerMixWeights, init_bilm, run_bilm
from .encoders import init_cnn, init_gru, init_transformer
from .static_embed import EmbeddingTable
from .train import (
    ClassifierHead,
    Example,
    ModelAssembly,
    backward,
    batch_loss,
    collect_arrays,
)

TOY_VOCAB = 9  # PAD, UNK, and 7 real tokens
TOY_T = 5
TOY_DIM = 4  # static embedding width
TOY_BILM_DIM = 3  # context width 6
REL_ERR_FLOOR = 1e-4  # denominator floor so near-zero coordinates compare absolutely


def toy_batch(rng: np.random.Generator, n: int = 3, t_max: int = TOY_T) -> list[Example]:
    batch = []
    for i in range(n):
        valid = int(rng.integers(2, t_max + 1))
        ids = np.zeros(t_max, dtype=np.intp)
        ids[:valid] = rng.integers(2, TOY_VOCAB, valid)
        batch.append(Example(ids=ids, valid_length=valid, label=i % 2))
    return batch


def _toy_encoder(kind: str, d_in: int, rng: np.random.Generator):
    if kind == "cnn":
        return init_cnn(d_in, widths=[1, 2], channels=2, pooling="global-max", rng=rng)
    if kind == "gru":
        return init_gru(d_in, hidden=4, rng=rng)
    return init_transformer(d_in, d_model=4, n_layers=1, n_heads=2, d_ff=6, max_len=TOY_T, rng=rng)


def toy_assembly(pathway: str, encoder_kind: str, seed: int = 0) -> ModelAssembly:
    """Small random assembly; the static table is set trainable so its
    gradient is covered too."""
    rng = np.random.default_rng(seed)
    table = None
    bilm = None
    mixer = None
    trainable_table = False
    if pathway == "glove-static":
        matrix = rng.normal(0.0, 0.5, (TOY_VOCAB, TOY_DIM))
        matrix[0] = 0.0
        table = EmbeddingTable(dim=TOY_DIM, matrix=matrix, provenance="trained")
        trainable_table = True
        d_in = TOY_DIM
    else:
        bilm = init_bilm(TOY_VOCAB, TOY_BILM_DIM, rng)
        mixer = LayerMixWeights(s_raw=rng.normal(0.0, 0.3, bilm.N_LAYERS), gamma=np.asarray(1.1))
        d_in = bilm.context_dim
    encoder = _toy_encoder(encoder_kind, d_in, rng)
    head = ClassifierHead(
        weight=rng.normal(0.0, 1.0 / np.sqrt(encoder.output_dim), encoder.output_dim),
        bias=np.asarray(0.0),
    )
    return ModelAssembly(
        pathway=pathway,
        encoder_kind=encoder_kind,
        encoder=encoder,
        head=head,
        embedding_table=table,
        embedding_trainable=trainable_table,
        bilm=bilm,
        mixer=mixer,
    )


def attach_fixed_context(assembly: ModelAssembly, batch: list[Example], seed: int = 0) -> None:
    """Give precomputed-pathway examples deterministic layer stacks
    (produced by a throwaway bi-LM, then treated as file-loaded data)."""
    rng = np.random.default_rng(seed)
    source = init_bilm(TOY_VOCAB, TOY_BILM_DIM, rng)
    for ex in batch:
        ex.ctx = run_bilm(source, ex.ids, ex.valid_length)


def relative_errors(assembly: ModelAssembly, batch: list[Example], eps: float = 1e-5) -> dict:
    """Max relative error per trainable group, analytic vs central
    differences; the comparison floor is max(|a|, |fd|, 1e-4)."""
    grads, _ = backward(assembly, batch)
    arrays = collect_arrays(assembly)
    errors = {}
    for name, grad in grads.items():
        flat = arrays[name].reshape(-1)  # view: perturbations hit the live assembly
        worst = 0.0
        analytic = np.asarray(grad).reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            up = batch_loss(assembly, batch)
            flat[i] = original - eps
            down = batch_loss(assembly, batch)
            flat[i] = original
            fd = (up - down) / (2.0 * eps)
            denom = max(abs(analytic[i]), abs(fd), REL_ERR_FLOOR)
            worst = max(worst, abs(analytic[i] - fd) / denom)
        errors[name] = worst
    return errors


def check_all_assemblies(seed: int = 0, eps: float = 1e-5) -> dict:
    """Run the full 3x3 grid; returns {(pathway, encoder): max rel err}."""
    from .train import ENCODER_KINDS, PATHWAYS

    results = {}
    for pathway in PATHWAYS:
        for encoder_kind in ENCODER_KINDS:
            assembly = toy_assembly(pathway, encoder_kind, seed=seed)
            rng = np.random.default_rng(seed + 1)
            batch = toy_batch(rng)
            if pathway == "precomputed-contextual":
                attach_fixed_context(assembly, batch, seed=seed + 2)
            errors = relative_errors(assembly, batch, eps=eps)
            results[(pathway, encoder_kind)] = max(errors.values())
    return results
