"""The generator's gold labels are re-derived from the text by the planting rules."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from laat.synthetic import InfeasibleSpecError, SyntheticSpec, generate_synthetic_corpus


def labels_from_text(text, triggers):
    toks = set(text.split())
    return sorted(code for code, trig in triggers.items() if all(t in toks for t in trig))


SPECS = [
    SyntheticSpec(num_docs=60, vocab_size=80),
    SyntheticSpec(num_docs=40, vocab_size=60, num_single=2, num_compound=3, min_separation=15,
                  doc_len_min=25, doc_len_max=40),
    SyntheticSpec(num_docs=80, vocab_size=80, num_single=3, num_families=2, family_children=5,
                  family_rate=0.5),
]


@pytest.mark.parametrize("spec", SPECS, ids=["single", "compound", "families"])
def test_gold_follows_planting_rules(spec):
    corp = generate_synthetic_corpus(spec, seed=3)
    assert len(corp.documents) == spec.num_docs
    for doc in corp.documents:
        assert doc.codes == labels_from_text(doc.text, corp.trigger_tokens)
        assert doc.codes, "every document carries at least one code"
        n = len(doc.text.split())
        assert spec.doc_len_min <= n <= spec.doc_len_max


def test_compound_separation_and_decoys():
    spec = SPECS[1]
    corp = generate_synthetic_corpus(spec, seed=5)
    decoys = 0
    for doc in corp.documents:
        for code in (c for c in corp.trigger_tokens if c.startswith("C")):
            pos = [p.position for p in corp.plants[doc.doc_id] if p.code == code and p.role == "compound"]
            if pos:
                assert abs(pos[0] - pos[1]) >= spec.min_separation
            decoys += any(p.code == code and p.role == "decoy" for p in corp.plants[doc.doc_id])
    assert decoys > 0


def test_plants_are_where_they_say():
    corp = generate_synthetic_corpus(SPECS[2], seed=1)
    for doc in corp.documents:
        toks = doc.text.split()
        for p in corp.plants[doc.doc_id]:
            assert toks[p.position] == p.token


def test_tail_frequencies_follow_quota():
    spec = SyntheticSpec(num_docs=200, vocab_size=100, num_single=1, num_families=2,
                         family_children=4, family_rate=0.5, tail=[8, 4, 2, 1])
    corp = generate_synthetic_corpus(spec, seed=0)
    for j in range(2):
        counts = [sum(f"F{j:02d}.{c}" in d.codes for d in corp.documents) for c in range(4)]
        expected = np.array([8, 4, 2, 1]) / 15 * 100
        assert np.all(np.abs(np.array(counts) - expected) < 1.0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_deterministic_given_seed(seed):
    spec = SyntheticSpec(num_docs=15, vocab_size=40, num_single=3, num_compound=1,
                         min_separation=5, doc_len_min=10, doc_len_max=14)
    a = generate_synthetic_corpus(spec, seed)
    b = generate_synthetic_corpus(spec, seed)
    assert [d.to_json() for d in a.documents] == [d.to_json() for d in b.documents]
    assert a.metadata() == b.metadata()


def test_patients_group_documents():
    corp = generate_synthetic_corpus(SyntheticSpec(num_docs=50, vocab_size=60), seed=0)
    per = {}
    for d in corp.documents:
        per[d.patient_id] = per.get(d.patient_id, 0) + 1
    assert max(per.values()) <= 3 and len(per) < 50


@pytest.mark.parametrize("kw", [
    dict(vocab_size=10),
    dict(num_compound=1, min_separation=30),
    dict(tail=[1.0]),
    dict(single_rate=1.5),
    dict(num_single=0),
])
def test_infeasible_specs(kw):
    with pytest.raises(InfeasibleSpecError):
        generate_synthetic_corpus(SyntheticSpec(**kw))


def test_spec_roundtrip_and_unknown_keys(tmp_path):
    spec = SPECS[1]
    path = tmp_path / "spec.json"

    path.write_text(json.dumps(spec.to_dict()))
    assert SyntheticSpec.load(path) == spec
    with pytest.raises(InfeasibleSpecError, match="unknown"):
        SyntheticSpec.from_dict({"num_doc": 3})
