"""Synthetic multi-label corpora with planted trigger tokens.

Three code families are supported:

* single-trigger codes ``S<i>.0``: assigned iff the trigger token occurs;
* compound codes ``C<i>.0``: assigned iff *both* of their two triggers occur.
  The two triggers are planted at least ``min_separation`` tokens apart, and
  decoy documents carry only one of them;
* long-tail families ``F<j>.<c>``: children of category ``F<j>``.  A family
  token marks every document carrying any child, while the child token says
  which.  Child frequencies follow ``tail`` by quota allocation, so observed
  frequencies match the configured distribution up to rounding.

Filler tokens never coincide with trigger tokens, so gold labels follow the
planting rules exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import RawDocument


class InfeasibleSpecError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    num_docs: int = 500
    vocab_size: int = 200
    doc_len_min: int = 20
    doc_len_max: int = 50
    num_single: int = 20
    single_rate: float = 0.1
    num_compound: int = 0
    compound_rate: float = 0.35
    compound_decoy_rate: float = 0.35
    min_separation: int = 0
    num_families: int = 0
    family_children: int = 4
    family_rate: float = 0.3
    tail: list[float] | None = None
    tail_exponent: float = 1.5
    max_docs_per_patient: int = 3
    split: list[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticSpec:
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise InfeasibleSpecError(f"unknown synthetic spec keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> SyntheticSpec:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return asdict(self)

    def tail_probabilities(self) -> np.ndarray:
        if self.tail is not None:
            p = np.asarray(self.tail, dtype=float)
        else:
            p = 1.0 / np.arange(1, self.family_children + 1) ** self.tail_exponent
        return p / p.sum()

    @property
    def num_trigger_tokens(self) -> int:
        return self.num_single + 2 * self.num_compound + self.num_families * (1 + self.family_children)

    def validate(self) -> None:
        if self.num_docs < 1:
            raise InfeasibleSpecError("num_docs must be positive")
        if not 1 <= self.doc_len_min <= self.doc_len_max:
            raise InfeasibleSpecError("need 1 <= doc_len_min <= doc_len_max")
        if self.num_single + self.num_compound + self.num_families == 0:
            raise InfeasibleSpecError("spec defines no codes")
        if self.vocab_size <= self.num_trigger_tokens:
            raise InfeasibleSpecError(
                f"vocab_size {self.vocab_size} leaves no filler tokens after "
                f"{self.num_trigger_tokens} trigger tokens")
        if self.num_compound and self.min_separation >= self.doc_len_min:
            raise InfeasibleSpecError(
                f"min_separation {self.min_separation} must be below doc_len_min {self.doc_len_min}")
        if self.tail is not None and len(self.tail) != self.family_children:
            raise InfeasibleSpecError("tail must list one weight per family child")
        for name in ("single_rate", "compound_rate", "compound_decoy_rate", "family_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InfeasibleSpecError(f"{name} must be a probability")
        if self.compound_rate + self.compound_decoy_rate > 1.0:
            raise InfeasibleSpecError("compound_rate + compound_decoy_rate exceeds 1")
        if self.max_docs_per_patient < 1:
            raise InfeasibleSpecError("max_docs_per_patient must be positive")


@dataclass
class Plant:
    code: str
    token: str
    position: int
    role: str


@dataclass
class SyntheticCorpus:
    spec: SyntheticSpec
    documents: list[RawDocument]
    plants: dict[str, list[Plant]]
    trigger_tokens: dict[str, list[str]]

    def metadata(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "triggers": self.trigger_tokens,
            "documents": {doc_id: [asdict(p) for p in ps] for doc_id, ps in self.plants.items()},
        }

    def positions(self, doc_id: str, code: str) -> list[int]:
        return [p.position for p in self.plants[doc_id] if p.code == code]


def single_code(i: int) -> str:
    return f"S{i:02d}.0"


def compound_code(i: int) -> str:
    return f"C{i:02d}.0"


def family_code(j: int, c: int) -> str:
    return f"F{j:02d}.{c}"


def _quota(counts_total: int, probs: np.ndarray) -> np.ndarray:
    """Largest-remainder allocation of ``counts_total`` items to ``probs``."""
    raw = probs * counts_total
    base = np.floor(raw).astype(int)
    short = counts_total - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:short]] += 1
    return base


def generate_synthetic_corpus(spec: SyntheticSpec, seed: int = 0) -> SyntheticCorpus:
    spec.validate()
    rng = np.random.default_rng(seed)

    triggers: dict[str, list[str]] = {}
    for i in range(spec.num_single):
        triggers[single_code(i)] = [f"sig{i:02d}"]
    for i in range(spec.num_compound):
        triggers[compound_code(i)] = [f"pairx{i:02d}", f"pairy{i:02d}"]
    family_tokens = [f"fam{j:02d}" for j in range(spec.num_families)]
    for j in range(spec.num_families):
        for c in range(spec.family_children):
            triggers[family_code(j, c)] = [f"fam{j:02d}kid{c}"]
    num_fillers = spec.vocab_size - spec.num_trigger_tokens
    fillers = np.array([f"w{k:04d}" for k in range(num_fillers)])

    # family assignment by quota: which docs carry which child
    family_child = np.full((spec.num_families, spec.num_docs), -1)
    probs = spec.tail_probabilities() if spec.num_families else None
    for j in range(spec.num_families):
        total = int(round(spec.family_rate * spec.num_docs))
        docs = rng.choice(spec.num_docs, size=total, replace=False)
        children = np.repeat(np.arange(spec.family_children), _quota(total, probs))
        family_child[j, docs] = rng.permutation(children)

    documents, plants = [], {}
    patient, left_for_patient = -1, 0
    for d in range(spec.num_docs):
        if left_for_patient == 0:
            patient += 1
            left_for_patient = int(rng.integers(1, spec.max_docs_per_patient + 1))
        left_for_patient -= 1
        doc_id = f"doc{d:05d}"
        length = int(rng.integers(spec.doc_len_min, spec.doc_len_max + 1))

        codes: set[str] = set()
        pairs: list[tuple[str, str, str]] = []   # (code, token_a, token_b)
        singles: list[tuple[str, str, str]] = []  # (code, token, role)
        for i in range(spec.num_compound):
            code = compound_code(i)
            a, b = triggers[code]
            r = rng.random()
            if r < spec.compound_rate:
                pairs.append((code, a, b))
                codes.add(code)
            elif r < spec.compound_rate + spec.compound_decoy_rate:
                singles.append((code, a if rng.random() < 0.5 else b, "decoy"))
        for j in range(spec.num_families):
            c = family_child[j, d]
            if c >= 0:
                code = family_code(j, int(c))
                singles.append((code, family_tokens[j], "family"))
                singles.append((code, triggers[code][0], "child"))
                codes.add(code)
        for i in range(spec.num_single):
            if rng.random() < spec.single_rate:
                code = single_code(i)
                singles.append((code, triggers[code][0], "single"))
                codes.add(code)
        if not codes and spec.num_single:
            code = single_code(int(rng.integers(spec.num_single)))
            singles.append((code, triggers[code][0], "single"))
            codes.add(code)
        if not codes:
            i = int(rng.integers(spec.num_compound))
            code = compound_code(i)
            pairs.append((code, *triggers[code]))
            codes.add(code)
        if 2 * len(pairs) + len(singles) > length:
            raise InfeasibleSpecError(f"document {doc_id} needs more plants than its {length} tokens")

        tokens = list(fillers[rng.integers(num_fillers, size=length)])
        free = np.ones(length, dtype=bool)
        doc_plants: list[Plant] = []
        for code, a, b in pairs:
            for _ in range(1000):
                pa = int(rng.integers(length))
                ok = free & (np.abs(np.arange(length) - pa) >= spec.min_separation)
                ok[pa] = False
                if free[pa] and ok.any():
                    break
            else:
                raise InfeasibleSpecError(f"cannot place a separated pair in {doc_id}")
            pb = int(rng.choice(np.flatnonzero(ok)))
            first, second = (a, b) if rng.random() < 0.5 else (b, a)
            for tok, pos, role in ((first, pa, "compound"), (second, pb, "compound")):
                tokens[pos] = tok
                free[pos] = False
                doc_plants.append(Plant(code, tok, pos, role))
        for code, tok, role in singles:
            pos = int(rng.choice(np.flatnonzero(free)))
            tokens[pos] = tok
            free[pos] = False
            doc_plants.append(Plant(code, tok, pos, role))

        doc_plants.sort(key=lambda p: p.position)
        plants[doc_id] = doc_plants
        documents.append(RawDocument(doc_id, f"patient{patient:05d}", " ".join(tokens), sorted(codes)))
    return SyntheticCorpus(spec, documents, plants, triggers)
