"""Fine-tune a transformer sequence classifier on a canonical email corpus
and emit predictions files.

This tool is deliberately standalone: it talks to the rest of the
workbench only through files. It reads line-delimited canonical corpora
(id/subject/body/label JSON objects) and writes line-delimited predictions
(header line with the hyperparameters, then one id/label/score row per
test record) that the workbench validates and scores.

Determinism: python/numpy/torch seeds all derive from the job seed and
training runs single-process on whatever device torch picks; on CPU the
run is reproducible, on CUDA the usual kernel nondeterminism caveats of
the framework apply.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

LABELS = ("benign", "phishing")          # index 1 = positive class


class BridgeError(Exception):
    pass


class SetupError(BridgeError):
    """Missing base model weights or tokenizer assets."""


@dataclass
class FinetuneJob:
    train_path: str
    test_paths: list[str]
    base_model: str = "distilbert-base-uncased"
    epochs: int = 3
    batch_size: int = 16
    learning_rate: float = 2e-5
    seed: int = 0
    max_length: int = 256

    def __post_init__(self):
        if not self.test_paths:
            raise BridgeError("need at least one test corpus")
        if self.epochs < 1 or self.batch_size < 1:
            raise BridgeError("epochs and batch_size must be >= 1")


def load_corpus(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append({
                    "id": obj["id"],
                    "subject": obj["subject"],
                    "body": obj["body"],
                    "label": obj["label"],
                })
            except (json.JSONDecodeError, KeyError) as exc:
                raise BridgeError(f"{path}:{lineno}: bad canonical record: {exc}") from exc
    return records


class _EmailDataset(Dataset):
    """Subject/body pairs; the tokenizer inserts its separator token and
    truncation eats from the end (the body), keeping subjects intact."""

    def __init__(self, records, tokenizer, max_length, with_labels=True):
        self.encodings = tokenizer(
            [r["subject"] for r in records],
            [r["body"] for r in records],
            truncation="only_second",
            padding="max_length",
            max_length=max_length,
        )
        self.labels = (
            [LABELS.index(r["label"]) for r in records] if with_labels else None
        )

    def __len__(self):
        return len(self.encodings["input_ids"])

    def __getitem__(self, idx):
        item = {k: torch.tensor(v[idx]) for k, v in self.encodings.items()}
        if self.labels is not None:
            item["labels"] = torch.tensor(self.labels[idx])
        return item


def _seed_everything(seed: int):
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def _load_model_and_tokenizer(base_model: str):
    from transformers import AutoModelForSequenceClassification, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(base_model)
        model = AutoModelForSequenceClassification.from_pretrained(
            base_model, num_labels=2)
    except (OSError, ValueError) as exc:
        raise SetupError(
            f"base model {base_model!r} is not available locally: {exc}. "
            "Download it once with hub access "
            f"(e.g. `huggingface-cli download {base_model}`) or pass a local "
            "checkpoint directory via --base-model."
        ) from exc
    return model, tokenizer


def finetune_and_predict(job: FinetuneJob, out_paths, model=None, tokenizer=None):
    """Train on the train corpus, write one predictions file per test
    corpus. `model`/`tokenizer` can be injected (tests use a tiny randomly
    initialized config); by default they load from job.base_model."""
    if len(out_paths) != len(job.test_paths):
        raise BridgeError(f"{len(job.test_paths)} test corpora but "
                          f"{len(out_paths)} output paths")
    train_records = load_corpus(job.train_path)
    if len(train_records) < 2 or len({r["label"] for r in train_records}) < 2:
        raise BridgeError("train corpus needs at least 2 records and both classes")
    test_sets = [load_corpus(p) for p in job.test_paths]
    for path, records in zip(job.test_paths, test_sets):
        if not records:
            raise BridgeError(f"test corpus {path} is empty")

    _seed_everything(job.seed)
    if model is None or tokenizer is None:
        model, tokenizer = _load_model_and_tokenizer(job.base_model)

    device = torch.device("cuda" if torch.cuda.is_available() else "cpu")
    model.to(device)
    dataset = _EmailDataset(train_records, tokenizer, job.max_length)
    generator = torch.Generator().manual_seed(job.seed)
    loader = DataLoader(dataset, batch_size=job.batch_size, shuffle=True,
                        generator=generator)
    optimizer = torch.optim.AdamW(model.parameters(), lr=job.learning_rate)

    model.train()
    try:
        for _epoch in range(job.epochs):
            for batch in loader:
                optimizer.zero_grad()
                batch = {k: v.to(device) for k, v in batch.items()}
                loss = model(**batch).loss
                loss.backward()
                optimizer.step()
    except torch.cuda.OutOfMemoryError as exc:  # pragma: no cover
        raise BridgeError(
            f"out of memory at batch_size={job.batch_size}; retry with a "
            "smaller --batch-size"
        ) from exc

    model.eval()
    written = []
    for test_records, out_path in zip(test_sets, out_paths):
        rows = _predict(model, tokenizer, test_records, job, device)
        _write_predictions(out_path, rows, job)
        written.append(str(out_path))
    return written


def _predict(model, tokenizer, records, job, device):
    dataset = _EmailDataset(records, tokenizer, job.max_length, with_labels=False)
    loader = DataLoader(dataset, batch_size=job.batch_size, shuffle=False)
    scores = []
    with torch.no_grad():
        for batch in loader:
            batch = {k: v.to(device) for k, v in batch.items()}
            logits = model(**batch).logits
            scores.extend(torch.softmax(logits, dim=-1)[:, 1].tolist())
    return [
        {"id": record["id"],
         "label": LABELS[1] if score >= 0.5 else LABELS[0],
         "score": float(score)}
        for record, score in zip(records, scores)
    ]


def _write_predictions(path, rows, job: FinetuneJob):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"__header__": {
        "model": job.base_model,
        "train": job.train_path,
        "seed": job.seed,
        "epochs": job.epochs,
        "batch_size": job.batch_size,
        "learning_rate": job.learning_rate,
        "max_length": job.max_length,
    }}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="finetune",
        description="Fine-tune a transformer phishing detector on a canonical corpus",
    )
    parser.add_argument("--train", required=True)
    parser.add_argument("--test", required=True, nargs="+")
    parser.add_argument("--out", required=True, nargs="+")
    parser.add_argument("--base-model", default="distilbert-base-uncased")
    parser.add_argument("--epochs", type=int, default=3)
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--learning-rate", type=float, default=2e-5)
    parser.add_argument("--max-length", type=int, default=256)
    parser.add_argument("--seed", type=int, default=0)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    job = FinetuneJob(
        train_path=args.train,
        test_paths=list(args.test),
        base_model=args.base_model,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        seed=args.seed,
        max_length=args.max_length,
    )
    try:
        written = finetune_and_predict(job, list(args.out))
    except SetupError as exc:
        print(f"error: setup: {exc}", file=sys.stderr)
        return 3
    except BridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"written": written}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
