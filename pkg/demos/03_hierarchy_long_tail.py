"""The two-level joint head on a corpus with rare child codes.

Family F<jj> has four children F<jj>.0 .. F<jj>.3 whose frequencies fall off as
1/c^1.5, so the last child has only a handful of training documents.  Every
document of a family carries the shared token fam<jj> plus a child token.
The joint model first predicts the normalized category F<jj>, then feeds
those probabilities into the child predictions.  We compare it with the
flat model per training-frequency bucket, averaged over three seeds.
"""

import numpy as np

from laat.experiments import prepare_synthetic, train_variant
from laat.metrics import frequency_buckets
from laat.synthetic import SyntheticSpec, family_code
from laat.train import TrainConfig

spec = SyntheticSpec(num_docs=500, num_single=5, single_rate=0.15, num_families=5,
                     family_children=4, family_rate=0.3, tail_exponent=1.5)
data = prepare_synthetic(spec, seed=0)
train_counts = np.sum([d.gold_raw for d in data.docs["train"]], axis=0).astype(int)
print(f"{data.codes.num_raw} raw codes in {data.codes.num_normalized} categories")
first = family_code(0, 0).split(".")[0]
print(f"training documents per child of {first}:",
      {c: int(n) for c, n in zip(data.codes.raw_codes, train_counts) if c.startswith(first + ".")})

cfg = TrainConfig(lr=0.01)
edges = (10, 30)
for name, joint_p in (("LAAT", None), ("JointLAAT", 128)):
    macro, buckets = [], []
    for seed in range(3):
        out = train_variant(data, seed, joint_p=joint_p, train=cfg, u=32, d_a=32)
        macro.append(out.test.macro_f1)
        buckets.append(frequency_buckets(out.test, train_counts, edges))
    keys = buckets[0].keys()
    per_bucket = "  ".join(f"{k}: {np.mean([b.get(k, np.nan) for b in buckets]):.3f}" for k in keys)
    print(f"{name:<10} macro-F1 {np.mean(macro):.3f} ± {np.std(macro):.3f}   {per_bucket}")
