"""Text preprocessing, vocabularies, code hierarchy and corpus files."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
DEFAULT_MAX_LEN = 4000

_HAS_LETTER = re.compile(r"[a-z]")


class EmptyDocumentError(ValueError):
    pass


class EmbeddingFormatError(ValueError):
    pass


class CorpusFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# documents

@dataclass
class RawDocument:
    doc_id: str
    patient_id: str
    text: str
    codes: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"doc_id": self.doc_id, "patient_id": self.patient_id,
                           "text": self.text, "codes": sorted(self.codes)},
                          ensure_ascii=False)


@dataclass
class ProcessedDocument:
    token_ids: np.ndarray
    valid_len: int
    gold_raw: np.ndarray
    gold_normalized: np.ndarray
    doc_id: str = ""

    def __post_init__(self):
        if not 1 <= self.valid_len <= len(self.token_ids):
            raise ValueError(f"valid_len {self.valid_len} outside 1..{len(self.token_ids)}")


def preprocess(text: str, max_len: int = DEFAULT_MAX_LEN) -> list[str]:
    """Lowercase, split on whitespace, drop tokens without an ASCII letter, truncate."""
    tokens = [t for t in text.lower().split() if _HAS_LETTER.search(t)]
    if not tokens:
        raise EmptyDocumentError("document has no tokens containing a letter")
    return tokens[:max_len]


def normalize_code(code: str) -> str:
    """Category of a raw code: everything before the first period."""
    if not code:
        raise ValueError("empty code")
    return code.split(".", 1)[0]


# ---------------------------------------------------------------------------
# label space

@dataclass
class CodeVocabulary:
    raw_codes: list[str]
    normalized_codes: list[str]
    parent_of: list[int]

    def __post_init__(self):
        self._raw_index = {c: i for i, c in enumerate(self.raw_codes)}
        self._projection = np.zeros((len(self.normalized_codes), len(self.raw_codes)), dtype=bool)
        self._projection[self.parent_of, np.arange(len(self.raw_codes))] = True

    @classmethod
    def from_codes(cls, codes: Iterable[str]) -> CodeVocabulary:
        raw = sorted(set(codes))
        normalized = sorted({normalize_code(c) for c in raw})
        norm_index = {c: i for i, c in enumerate(normalized)}
        return cls(raw, normalized, [norm_index[normalize_code(c)] for c in raw])

    @property
    def num_raw(self) -> int:
        return len(self.raw_codes)

    @property
    def num_normalized(self) -> int:
        return len(self.normalized_codes)

    @property
    def has_hierarchy(self) -> bool:
        """True when normalization groups codes, i.e. some code carries a sub-category."""
        return any(normalize_code(c) != c for c in self.raw_codes)

    def normalize(self, raw: str) -> str:
        return self.normalized_codes[self.parent_of[self._raw_index[raw]]]

    def index(self, raw: str) -> int:
        return self._raw_index[raw]

    def encode(self, codes: Iterable[str]) -> tuple[np.ndarray, list[str]]:
        """Binary raw-code vector plus the codes that are not in the vocabulary."""
        y = np.zeros(self.num_raw)
        unknown = []
        for c in codes:
            i = self._raw_index.get(c)
            if i is None:
                unknown.append(c)
            else:
                y[i] = 1.0
        return y, unknown

    def project(self, gold_raw: np.ndarray) -> np.ndarray:
        """OR over the children of every normalized code."""
        return (self._projection & (np.asarray(gold_raw) > 0)).any(axis=1).astype(np.float64)

    def to_dict(self) -> dict:
        return {"raw": list(self.raw_codes), "normalized": list(self.normalized_codes),
                "parent_of": list(self.parent_of)}

    @classmethod
    def from_dict(cls, d: dict) -> CodeVocabulary:
        return cls(list(d["raw"]), list(d["normalized"]), [int(i) for i in d["parent_of"]])


def build_code_vocabulary(corpus: Sequence[RawDocument]) -> CodeVocabulary:
    if not corpus:
        raise ValueError("cannot build a code vocabulary from an empty corpus")
    return CodeVocabulary.from_codes(c for doc in corpus for c in doc.codes)


# ---------------------------------------------------------------------------
# token vocabulary and embeddings

class Vocabulary:
    """Token -> index map with PAD = 0 and UNK = 1."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens = [PAD_TOKEN, UNK_TOKEN]
        self.index = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.index:
            self.index[token] = len(self.tokens)
            self.tokens.append(token)
        return self.index[token]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def lookup(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.index.get(t, UNK) for t in tokens], dtype=np.int64)

    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    @classmethod
    def from_corpus(cls, docs: Sequence[RawDocument], max_len: int = DEFAULT_MAX_LEN,
                    min_count: int = 1) -> Vocabulary:
        counts: dict[str, int] = {}
        for doc in docs:
            for t in preprocess(doc.text, max_len):
                counts[t] = counts.get(t, 0) + 1
        return cls(sorted(t for t, c in counts.items() if c >= min_count))


@dataclass
class EmbeddingTable:
    vocab: Vocabulary
    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def random_embeddings(vocab: Vocabulary, dim: int, rng: np.random.Generator,
                      scale: float = 0.1) -> EmbeddingTable:
    matrix = rng.uniform(-scale, scale, size=(len(vocab), dim))
    matrix[PAD] = 0.0
    return EmbeddingTable(vocab, matrix)


def load_embeddings(path: str | Path, corpus_vocab: Vocabulary | None = None,
                    seed: int = 0, scale: float = 0.1) -> EmbeddingTable:
    """Read a ``count dim`` header followed by ``token v1 ... vdim`` lines.

    Corpus tokens missing from the file get seeded uniform(-scale, scale)
    rows, as does UNK; the PAD row is zero.
    """
    path = Path(path)
    rows: list[np.ndarray] = []
    vocab = Vocabulary()
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().split()
        try:
            count, dim = int(header[0]), int(header[1])
            if len(header) != 2 or count < 0 or dim < 1:
                raise ValueError
        except (ValueError, IndexError):
            raise EmbeddingFormatError(f"{path}:1: malformed header, expected 'count dim'") from None
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if not line.strip():
                continue
            token, values = parts[0], [p for p in parts[1:] if p]
            if len(values) != dim:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: token {token!r} has {len(values)} values, expected {dim}")
            if token in vocab:
                raise EmbeddingFormatError(f"{path}:{lineno}: duplicate token {token!r}")
            try:
                rows.append(np.array([float(v) for v in values]))
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: non-numeric value") from None
            vocab.add(token)
    if len(rows) != count:
        raise EmbeddingFormatError(f"{path}: header promises {count} vectors, found {len(rows)}")

    missing = [t for t in corpus_vocab.tokens[2:] if t not in vocab] if corpus_vocab else []
    for t in missing:
        vocab.add(t)
    rng = np.random.default_rng(seed)
    matrix = np.zeros((len(vocab), dim))
    matrix[UNK] = rng.uniform(-scale, scale, size=dim)
    if rows:
        matrix[2:2 + len(rows)] = np.stack(rows)
    if missing:
        matrix[2 + len(rows):] = rng.uniform(-scale, scale, size=(len(missing), dim))
    return EmbeddingTable(vocab, matrix)


def write_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    """Write every non-special row in the plain-text vector format."""
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"{len(table.vocab) - 2} {table.dim}\n")
        for token, row in zip(table.vocab.tokens[2:], table.matrix[2:]):
            fh.write(token + " " + " ".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# corpus files

def write_corpus(docs: Iterable[RawDocument], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            fh.write(doc.to_json() + "\n")


def read_corpus(path: str | Path) -> list[RawDocument]:
    docs = []
    seen = set()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                doc = RawDocument(str(d["doc_id"]), str(d["patient_id"]), str(d["text"]),
                                  [str(c) for c in d["codes"]])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from None
            if doc.doc_id in seen:
                raise CorpusFormatError(f"{path}:{lineno}: duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
            docs.append(doc)
    return docs


def split_by_patient(corpus: Sequence[RawDocument], fractions=(0.8, 0.1, 0.1),
                     seed: int = 0) -> tuple[list[RawDocument], list[RawDocument], list[RawDocument]]:
    """Partition *patients* into train/validation/test by a seeded shuffle."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    patients = sorted({d.patient_id for d in corpus})
    order = np.random.default_rng(seed).permutation(len(patients))
    n_train = int(round(fractions[0] * len(patients)))
    n_val = int(round(fractions[1] * len(patients)))
    n_test = len(patients) - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"split of {len(patients)} patients by {fractions} leaves a split empty")
    which = {}
    for rank, idx in enumerate(order):
        which[patients[idx]] = 0 if rank < n_train else (1 if rank < n_train + n_val else 2)
    parts: tuple[list, list, list] = ([], [], [])
    for doc in corpus:
        parts[which[doc.patient_id]].append(doc)
    return parts


def process_document(doc: RawDocument, vocab: Vocabulary, codes: CodeVocabulary,
                     max_len: int = DEFAULT_MAX_LEN) -> ProcessedDocument:
    ids = vocab.lookup(preprocess(doc.text, max_len))
    gold, unknown = codes.encode(doc.codes)
    if unknown:
        log.warning("document %s: dropping codes unseen in training: %s",
                    doc.doc_id, ", ".join(sorted(unknown)))
    return ProcessedDocument(ids, len(ids), gold, codes.project(gold), doc.doc_id)


def process_corpus(docs: Sequence[RawDocument], vocab: Vocabulary, codes: CodeVocabulary,
                   max_len: int = DEFAULT_MAX_LEN) -> list[ProcessedDocument]:
    return [process_document(d, vocab, codes, max_len) for d in docs]
