"""End to end on a miniature list-operations task, in about a minute.

Generates shallow expressions like [MAX 2 [MIN 4 7 ] 0 ], trains a small
encoder + classifier on the final value, evaluates, prints the parse
trees the model induced (no tree supervision was given), and round-trips
the checkpoint.  The full desk-scale recipe lives in
configs/listops_desk.txt.
"""
import tempfile
from pathlib import Path

import numpy as np

import crvnn.training as tr
from crvnn.data import generate_listops
from crvnn.model import ModelConfig
from crvnn.parsing import parse_tokens, to_bracketed

rng = np.random.default_rng(0)
train = generate_listops(1200, rng, max_depth=2, max_args=4,
                         min_length=1, max_length=14)
test = generate_listops(150, rng, max_depth=2, max_args=4,
                        min_length=1, max_length=14, seen={tuple(s.tokens) for s in train})
print(f"{len(train)} train / {len(test)} test expressions, e.g.:")
print(f"  {' '.join(train[0].tokens)}  ->  {train[0].label}")

cfg = ModelConfig(vocab_size=tr.vocab_for_task("listops").size,
                  d_embed=32, d_hidden=32, d_transition=16)
model, head = tr.build_model_and_head("listops", cfg, head_layers=1,
                                      output_dropout=0.0, seed=0)
tcfg = tr.TrainConfig(epochs=15, batch_size=32, lr=2e-3, stop_accuracy=0.95)
result = tr.train(model, head, train, test, tr.vocab_for_task("listops"),
                  tcfg, log=print)

metrics = tr.evaluate(model, head, test, tr.vocab_for_task("listops"))
print(f"\ntest accuracy {metrics['accuracy']:.3f}, "
      f"mean iterations {metrics['mean_iterations']:.1f}")

print("\ninduced parses after this short run (no tree supervision; desk-scale")
print("training makes these track the bracket structure):")
for sample in test[:2]:
    tree = parse_tokens(model, sample.tokens, tr.vocab_for_task("listops"))
    print(f"  {to_bracketed(tree, sample.tokens)}")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "checkpoint.bin"
    tr.save_trained(path, "listops", model, head,
                    head_layers=1, output_dropout=0.0)
    model2, head2, meta = tr.load_trained(path)
    again = tr.evaluate(model2, head2, test, tr.vocab_for_task("listops"))
    print(f"\ncheckpoint round trip: accuracy {again['accuracy']:.3f} "
          f"(identical: {again['accuracy'] == metrics['accuracy']})")
