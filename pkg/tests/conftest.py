import json
import os
from pathlib import Path

import numpy as np
import pytest

from phishbench.corpus import EmailRecord

PHISH_TERMS = (
    "urgent verify account password click suspended confirm bank security alert "
    "winner prize claim refund invoice payment update credentials limited expire"
).split()
BENIGN_TERMS = (
    "meeting schedule report quarterly project team lunch review notes agenda "
    "deadline presentation client draft feedback budget travel conference room okay"
).split()
SHARED_TERMS = (
    "please thanks regards monday tuesday office email time work new info details "
    "question request send receive note call week today tomorrow"
).split()


def make_corpus(n, seed, source="synth", phish_rate=0.35, signal=0.55,
                language="en", label_noise=0.0):
    """Deterministic synthetic email corpus with a learnable topic signal.

    label_noise flips the stored label with that probability, creating
    irreducible error so metrics vary across splits.
    """
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        is_phish = rng.random() < phish_rate
        pool = PHISH_TERMS if is_phish else BENIGN_TERMS

        def draw(k):
            words = []
            for _ in range(k):
                src = pool if rng.random() < signal else SHARED_TERMS
                words.append(src[rng.integers(0, len(src))])
            return " ".join(words)

        stored = is_phish if rng.random() >= label_noise else not is_phish
        records.append(EmailRecord(
            id=f"{source}-{i:05d}",
            subject=draw(int(rng.integers(3, 7))),
            body=draw(int(rng.integers(20, 60))),
            label="phishing" if stored else "benign",
            language=language,
            source=source,
        ))
    return records


def write_mock_script(path, entries):
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry) + "\n")
    return str(path)


@pytest.fixture
def small_corpus():
    return make_corpus(240, seed=7)


def real_data_dir() -> Path:
    return Path(os.environ.get("PHISHBENCH_DATA_DIR", Path(__file__).parent.parent / "data" / "canonical"))


def require_real_datasets(*names):
    """Skip marker for criteria that need local copies of public datasets."""
    root = real_data_dir()
    missing = [n for n in names if not (root / f"{n}.jsonl").exists()]
    return pytest.mark.skipif(
        bool(missing),
        reason=(f"local dataset copies missing: {missing} under {root}; "
                "ingest them first (see README: Reproducing the paper's numbers)"),
    )
