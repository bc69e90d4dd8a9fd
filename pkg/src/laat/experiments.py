"""Helpers for end-to-end runs on synthetic corpora (used by demos and acceptance tests)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import CodeVocabulary, ProcessedDocument, RawDocument, Vocabulary, \
    build_code_vocabulary, process_corpus, split_by_patient
from .metrics import MetricReport, evaluate, micro_f1, predict_scores
from .model import JointConfig, LaatConfig, LaatModel, predict
from .synthetic import SyntheticCorpus, SyntheticSpec, generate_synthetic_corpus
from .train import FitResult, TrainConfig, fit, seed_streams

# ablation grid: name -> (encoder_kind, attention_kind)
VARIANTS = {
    "LAAT": ("bilstm", "laat"),
    "LAAT_CAML": ("bilstm", "caml"),
    "CAML_LAAT": ("cnn", "laat"),
    "LAAT_GRU": ("bigru", "laat"),
}


@dataclass
class Prepared:
    corpus: SyntheticCorpus
    raw: dict[str, list[RawDocument]]
    vocab: Vocabulary
    codes: CodeVocabulary
    docs: dict[str, list[ProcessedDocument]]


def prepare_synthetic(spec: SyntheticSpec, seed: int = 0) -> Prepared:
    corpus = generate_synthetic_corpus(spec, seed)
    train, val, test = split_by_patient(corpus.documents, tuple(spec.split), seed)
    raw = {"train": train, "validation": val, "test": test}
    vocab = Vocabulary.from_corpus(train)
    codes = build_code_vocabulary(train)
    docs = {k: process_corpus(v, vocab, codes) for k, v in raw.items()}
    return Prepared(corpus, raw, vocab, codes, docs)


@dataclass
class Outcome:
    model: LaatModel
    fit: FitResult
    test: MetricReport


def train_variant(data: Prepared, seed: int, variant: str = "LAAT", joint_p: int | None = None,
                  train: TrainConfig | None = None, **model_kw) -> Outcome:
    """Fit one model with the given ablation variant and score it on the test split."""
    enc, att = VARIANTS[variant]
    joint = JointConfig(data.codes.num_normalized, joint_p) if joint_p else None
    cfg = LaatConfig(vocab_size=len(data.vocab), num_labels=data.codes.num_raw,
                     encoder_kind=enc, attention_kind=att, joint=joint, **model_kw)
    model = LaatModel(cfg, seed_streams(seed)["init"])
    tcfg = TrainConfig(**{**(train or TrainConfig()).to_dict(), "seed": seed})
    result = fit(model, data.docs["train"], data.docs["validation"], tcfg, data.codes.raw_codes)
    return Outcome(model, result, evaluate(model, data.docs["test"], tcfg.threshold,
                                           data.codes.raw_codes))


def subset_micro_f1(model: LaatModel, docs, codes: CodeVocabulary, prefix: str) -> float:
    """Micro-F1 restricted to the labels whose code starts with ``prefix``."""
    cols = [i for i, c in enumerate(codes.raw_codes) if c.startswith(prefix)]
    scores, gold = predict_scores(model, docs)
    return micro_f1(predict(scores[:, cols]), gold[:, cols])


def trigger_attention_mass(model: LaatModel, data: Prepared, split: str = "test",
                           prefix: str = "C", role: str = "compound", window: int = 2) -> float:
    """Mean attention mass a gold code's row puts within ``window`` tokens of its planted triggers."""
    masses = []
    for doc, raw in zip(data.docs[split], data.raw[split]):
        with T.no_grad():
            A = model.forward_document(doc).A.data
        for j, code in enumerate(data.codes.raw_codes):
            if not code.startswith(prefix) or not doc.gold_raw[j]:
                continue
            near = set()
            for p in data.corpus.plants[raw.doc_id]:
                if p.code == code and p.role == role:
                    near.update(range(max(0, p.position - window),
                                      min(doc.valid_len, p.position + window + 1)))
            masses.append(A[j, sorted(near)].sum())
    return float(np.mean(masses)) if masses else float("nan")
