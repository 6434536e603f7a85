"""Train the full embedding x encoder grid on the synthetic marker corpus.

The marker task plants a rare token in every positive tweet, so any
working cell should reach near-perfect held-out AUC. Useful as an
end-to-end smoke run; writes tables, checkpoints, and a run log.
"""

import argparse
from pathlib import Path

from trolldet.corpus import split_dataset
from trolldet.harness import ExperimentConfig, emit_table, run_matrix
from trolldet.synthetic import marker_dataset
from trolldet.train import TrainConfig

EMBEDDINGS = ("glove-static", "bilm-contextual", "precomputed-contextual")
ENCODERS = ("cnn", "gru", "transformer")


def cell_config(embedding: str, encoder: str, seed: int) -> ExperimentConfig:
    # the transformer needs a gentler rate and more epochs to settle
    if encoder == "transformer":
        train = TrainConfig(max_epochs=30, patience=8, learning_rate=0.01, batch_size=32)
        extra = dict(tf_d_model=8, tf_ff=16, tf_heads=2)
    else:
        train = TrainConfig(max_epochs=8, patience=3, learning_rate=0.05, batch_size=32)
        extra = {}
    return ExperimentConfig(
        embedding=embedding,
        encoder=encoder,
        max_len=12,
        embed_dim=16,
        glove_lr=0.02,
        glove_epochs=25,
        bilm_dim=8,
        bilm_epochs=1,
        bilm_lr=0.05,
        train=train,
        seed=seed,
        **extra,
    )


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--docs", type=int, default=2000, help="corpus size")
    parser.add_argument("--seed", type=int, default=17, help="seed shared by all cells")
    parser.add_argument("--data-seed", type=int, default=5, help="corpus generation seed")
    parser.add_argument("--split-seed", type=int, default=1)
    parser.add_argument("--out", type=Path, default=Path("results/marker"))
    args = parser.parse_args()

    docs = marker_dataset(args.docs, seed=args.data_seed)
    data = split_dataset(docs, seed=args.split_seed)
    configs = [cell_config(e, k, args.seed) for e in EMBEDDINGS for k in ENCODERS]

    table = run_matrix(configs, data, out_dir=args.out)

    args.out.mkdir(parents=True, exist_ok=True)
    markdown = emit_table(table, format="markdown")
    (args.out / "table.md").write_bytes(markdown.encode("utf-8"))
    (args.out / "table.csv").write_bytes(emit_table(table, format="csv").encode("utf-8"))
    print(markdown)


if __name__ == "__main__":
    main()
