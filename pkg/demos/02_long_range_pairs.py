"""Codes that need two pieces of evidence far apart in the text.

A compound code C<ii>.0 fires only when both of its triggers pairx<ii> and pairy<ii>
occur, at least 200 tokens apart.  Decoy documents carry just one of the two,
so no single position settles the label: the recurrent encoder has to carry
what it saw across the gap.  We report F1 on the compound codes, how the
errors split between true pairs and decoys, and how much of each gold
compound row of the attention matrix sits within two tokens of a trigger.
Takes a few minutes on one core.
"""

import numpy as np

from laat.experiments import prepare_synthetic, subset_micro_f1, train_variant, \
    trigger_attention_mass
from laat.metrics import predict_scores
from laat.synthetic import SyntheticSpec
from laat.train import TrainConfig

spec = SyntheticSpec(num_docs=600, vocab_size=60, num_single=4, single_rate=0.15,
                     num_compound=4, compound_rate=0.35, compound_decoy_rate=0.4,
                     min_separation=200, doc_len_min=220, doc_len_max=260,
                     split=[0.7, 0.15, 0.15])
data = prepare_synthetic(spec, seed=0)
print(f"{data.codes.num_raw} codes, documents of {spec.doc_len_min}-{spec.doc_len_max} tokens")

out = train_variant(data, seed=0, train=TrainConfig(lr=0.01), u=32, d_a=32)
print(f"best epoch {out.fit.best_epoch} of {len(out.fit.log)}")
print(out.test.table_row("LAAT (test)"))

test = data.docs["test"]
print(f"\ncompound-code F1: {subset_micro_f1(out.model, test, data.codes, 'C'):.3f}")
print(f"attention mass near triggers: {trigger_attention_mass(out.model, data):.3f}")

scores, gold = predict_scores(out.model, test)
cases = {"both triggers": [0, 0], "decoy (one trigger)": [0, 0], "neither": [0, 0]}
for i, raw in enumerate(data.raw["test"]):
    for j, code in enumerate(data.codes.raw_codes):
        if not code.startswith("C"):
            continue
        roles = {p.role for p in data.corpus.plants[raw.doc_id] if p.code == code}
        case = ("both triggers" if "compound" in roles
                else "decoy (one trigger)" if "decoy" in roles else "neither")
        cases[case][0] += 1
        cases[case][1] += int((scores[i, j] >= 0.5) != bool(gold[i, j]))
print("\nerrors by case:")
for case, (n, wrong) in cases.items():
    print(f"  {case:<20} {wrong:3d} wrong of {n}")
