"""Train LAAT on a corpus where each code is announced by one planted token.

Every single-trigger code S<ii>.0 fires exactly when its token sig<ii> appears
somewhere in the document, so a working model should (a) rank the planted
code first and (b) put most of that code's attention on the planted token.
Runs in well under a minute on one core.
"""

import numpy as np

from laat import tensor as T
from laat.data import preprocess
from laat.experiments import prepare_synthetic, train_variant
from laat.synthetic import SyntheticSpec
from laat.train import TrainConfig

spec = SyntheticSpec(num_docs=300, vocab_size=200, num_single=10, single_rate=0.15)
data = prepare_synthetic(spec, seed=0)
print(f"{len(data.docs['train'])} train docs, {len(data.vocab)} tokens, {data.codes.num_raw} codes")

out = train_variant(data, seed=0, train=TrainConfig(lr=0.01, max_epochs=30), u=32, d_a=32)
print(f"stopped after {len(out.fit.log)} epochs, best epoch {out.fit.best_epoch}")
print(out.test.table_row("LAAT (test)"))

# look inside one test document
doc, raw = data.docs["test"][0], data.raw["test"][0]
with T.no_grad():
    trace = out.model.forward_document(doc)
probs, A = trace.probs.data, trace.A.data
tokens = preprocess(raw.text)
print("\ndocument:", raw.doc_id, "gold:", raw.codes)
for j in np.argsort(-probs)[:3]:
    t = int(np.argmax(A[j, :doc.valid_len]))
    print(f"  {data.codes.raw_codes[j]:<6} p={probs[j]:.3f}  attends to {tokens[t]!r} "
          f"(weight {A[j, t]:.2f})")
