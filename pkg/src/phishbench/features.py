"""TF-IDF features over email subject and body.

Subject and body get independent vocabularies; the feature space is the
concatenation [subject block | body block], each block L2-normalized on
its own. IDF is the smooth variant ln((1+n_docs)/(1+doc_freq)) + 1, so
every weight is >= 1. Fitting only ever sees training documents.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, asdict

import numpy as np
import scipy.sparse as sp

from .corpus import EmailRecord
from .errors import FeatureError

IDF_FORMULA = "ln((1+n_docs)/(1+doc_freq))+1"
FORMAT_VERSION = 1

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercased maximal runs of letters/digits, length-1 terms dropped."""
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) > 1]


@dataclass(frozen=True)
class TfidfConfig:
    subject_vocab_cap: int = 5000
    body_vocab_cap: int = 20000
    min_doc_freq: int = 2

    def __post_init__(self):
        if self.subject_vocab_cap < 1 or self.body_vocab_cap < 1:
            raise FeatureError("vocabulary caps must be >= 1")
        if self.min_doc_freq < 1:
            raise FeatureError("min_doc_freq must be >= 1")


@dataclass
class SparseVector:
    """Sorted (index, weight) pairs in a fixed-dimension space."""

    dimension: int
    indices: np.ndarray
    values: np.ndarray


def _build_vocabulary(docs_terms: list[list[str]], cap: int, min_df: int):
    """Document-frequency filtered, capped vocabulary with deterministic order.

    Truncation keeps the cap-many highest-df terms (ties lexicographic);
    final indices are assigned in lexicographic term order.
    """
    df: dict[str, int] = {}
    for terms in docs_terms:
        for term in set(terms):
            df[term] = df.get(term, 0) + 1
    kept = [t for t, c in df.items() if c >= min_df]
    if len(kept) > cap:
        kept.sort(key=lambda t: (-df[t], t))
        kept = kept[:cap]
    kept.sort()
    return {t: i for i, t in enumerate(kept)}, df


def _idf_array(vocab: dict[str, int], df: dict[str, int], n_docs: int) -> np.ndarray:
    idf = np.zeros(len(vocab))
    for term, idx in vocab.items():
        idf[idx] = math.log((1 + n_docs) / (1 + df[term])) + 1.0
    return idf


class TfidfModel:
    """Fitted vocabularies + IDF weights; immutable after fit."""

    def __init__(self, subject_vocabulary, body_vocabulary, idf_subject, idf_body,
                 config: TfidfConfig, fitted_on: dict):
        self.subject_vocabulary = subject_vocabulary
        self.body_vocabulary = body_vocabulary
        self.idf_subject = np.asarray(idf_subject, dtype=np.float64)
        self.idf_body = np.asarray(idf_body, dtype=np.float64)
        self.config = config
        self.fitted_on = fitted_on

    @property
    def dimension(self) -> int:
        return len(self.subject_vocabulary) + len(self.body_vocabulary)

    def save(self, path) -> None:
        payload = {
            "format_version": FORMAT_VERSION,
            "config": asdict(self.config),
            "fitted_on": self.fitted_on,
            "subject_vocabulary": sorted(self.subject_vocabulary, key=self.subject_vocabulary.get),
            "body_vocabulary": sorted(self.body_vocabulary, key=self.body_vocabulary.get),
            "idf_subject": self.idf_subject.tolist(),
            "idf_body": self.idf_body.tolist(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path) -> "TfidfModel":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        version = payload.get("format_version")
        if version != FORMAT_VERSION:
            raise FeatureError(
                f"tfidf artifact version {version!r} unsupported (expected {FORMAT_VERSION})"
            )
        return cls(
            {t: i for i, t in enumerate(payload["subject_vocabulary"])},
            {t: i for i, t in enumerate(payload["body_vocabulary"])},
            payload["idf_subject"],
            payload["idf_body"],
            TfidfConfig(**payload["config"]),
            payload["fitted_on"],
        )


def fit_tfidf(records: list[EmailRecord], config: TfidfConfig | None = None,
              fitted_on: dict | None = None) -> TfidfModel:
    if not records:
        raise FeatureError("cannot fit TF-IDF on an empty training set")
    config = config or TfidfConfig()
    subjects = [tokenize(r.subject) for r in records]
    bodies = [tokenize(r.body) for r in records]
    n = len(records)
    subject_vocab, subject_df = _build_vocabulary(subjects, config.subject_vocab_cap,
                                                  config.min_doc_freq)
    body_vocab, body_df = _build_vocabulary(bodies, config.body_vocab_cap,
                                            config.min_doc_freq)
    return TfidfModel(
        subject_vocab,
        body_vocab,
        _idf_array(subject_vocab, subject_df, n),
        _idf_array(body_vocab, body_df, n),
        config,
        fitted_on or {},
    )


def _block_entries(terms: list[str], vocab: dict[str, int], idf: np.ndarray, offset: int):
    counts: dict[int, int] = {}
    for term in terms:
        idx = vocab.get(term)
        if idx is not None:
            counts[idx] = counts.get(idx, 0) + 1
    if not counts:
        return [], []
    indices = np.fromiter(sorted(counts), dtype=np.int64)
    weights = np.array([counts[i] for i in indices], dtype=np.float64) * idf[indices]
    norm = np.sqrt(np.sum(weights * weights))
    if norm > 0:
        weights /= norm
    return list(indices + offset), list(weights)


def transform(model: TfidfModel, record: EmailRecord) -> SparseVector:
    """tf(raw count) x idf per block, then per-block L2 normalization."""
    s_idx, s_val = _block_entries(tokenize(record.subject), model.subject_vocabulary,
                                  model.idf_subject, 0)
    b_idx, b_val = _block_entries(tokenize(record.body), model.body_vocabulary,
                                  model.idf_body, len(model.subject_vocabulary))
    return SparseVector(
        dimension=model.dimension,
        indices=np.asarray(s_idx + b_idx, dtype=np.int64),
        values=np.asarray(s_val + b_val, dtype=np.float64),
    )


def transform_matrix(model: TfidfModel, records: list[EmailRecord]) -> sp.csr_matrix:
    """Transform many records into one CSR design matrix."""
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for record in records:
        vec = transform(model, record)
        indices.extend(vec.indices.tolist())
        data.extend(vec.values.tolist())
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.asarray(data, dtype=np.float64),
         np.asarray(indices, dtype=np.int64),
         np.asarray(indptr, dtype=np.int64)),
        shape=(len(records), model.dimension),
    )
