#!/usr/bin/env python3
"""Offline full-scale check with real pretrained weights.

Fine-tunes the full pipeline on one fold per benchmark dataset and scores
the official test split.  This needs a GPU (roughly 14 GB), the official
dataset files, 300-d GloVe vectors, and downloaded encoder weights -- none
of which are assumed in CI.  Reference full-scale mean accuracies to land
within ~2 points of: twitter 74.7, laptop 77.5, restaurant 84.8.

Example:
    python scripts/reproduce_full_scale.py \
        --data-dir ~/absa-data --dataset restaurant \
        --encoder bert-base-uncased --vectors ~/glove.840B.300d.txt \
        --device cuda
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from aspectgcn import corpus  # noqa: E402
from aspectgcn.config import RunConfig  # noqa: E402
from aspectgcn.harness import (  # noqa: E402
    evaluate,
    prepare_resources,
    train_fold,
)

REFERENCE_ACCURACY = {"twitter": 74.73, "laptop": 77.49, "restaurant": 84.75}

FILES = {
    "twitter": ("train.raw", "test.raw", "twitter"),
    "laptop": ("Laptops_Train.xml", "Laptops_Test_Gold.xml", "semeval"),
    "restaurant": ("Restaurants_Train.xml", "Restaurants_Test_Gold.xml", "semeval"),
}


def find(root: Path, name: str) -> Path:
    hits = list(root.rglob(name))
    if not hits:
        raise FileNotFoundError(f"{name} not found under {root}")
    return hits[0]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-dir", required=True, help="directory with official files")
    ap.add_argument("--dataset", required=True, choices=sorted(FILES))
    ap.add_argument("--encoder", default="bert-base-uncased",
                    help="model name or local weight directory")
    ap.add_argument("--vectors", required=True, help="300-d GloVe text file")
    ap.add_argument("--device", default="cuda")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--fold", type=int, default=0, help="which of the 10 folds to run")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    root = Path(args.data_dir)
    train_name, test_name, fmt = FILES[args.dataset]
    config = RunConfig(
        dataset=args.dataset,
        train_path=str(find(root, train_name)),
        test_path=str(find(root, test_name)),
        data_format=fmt,
        word_vectors=args.vectors,
        embed_dim=300,
        encoder=args.encoder,
        encoder_layers=(1, 5, 9, 12),
        finetune_encoder=True,
        parser="spacy",
        hidden_dim=300,
        dropout=0.8,
        batch_size=32,
        epochs=args.epochs,
        seed=args.seed,
        folds=10,
    )

    train_instances = corpus.load_dataset(config.train_path, fmt, args.dataset)
    test_instances = corpus.load_dataset(config.test_path, fmt, args.dataset)
    print(f"{args.dataset}: {len(train_instances)} train / {len(test_instances)} test")

    resources = prepare_resources(config, train_instances, test_instances)
    plan = corpus.make_folds(train_instances, config.folds, config.seed)
    train_set = [resources.train_prepared[i] for i in plan.train_indices(args.fold)]
    val_set = [resources.train_prepared[i] for i in plan.fold_indices(args.fold)]

    outcome = train_fold(
        config, train_set, val_set, resources.backend,
        seed=config.seed + args.fold, device=args.device,
    )
    acc, f1 = evaluate(outcome.model, resources.test_prepared, config, resources.backend)
    reference = REFERENCE_ACCURACY[args.dataset]
    print(f"fold {args.fold}: best val {outcome.best_val_accuracy:.4f}")
    print(f"test accuracy {100 * acc:.2f} (reference {reference:.2f}, "
          f"delta {100 * acc - reference:+.2f}), macro-F1 {100 * f1:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
