"""Dynamic halting: computation depth tracks tree depth, not length.

The encoder stops iterating once almost all existence mass sits on the
end marker.  Forcing balanced binary reduction schedules over 2^d leaves
shows the iteration count growing with the logarithm of the length; a
recurrent model would need one step per token instead.
"""
import time

import numpy as np

from crvnn.discrete import tree_to_schedule
from crvnn.model import CRvNN, ModelConfig
from crvnn.verify import forced_agreement


def balanced(lo, hi):
    if hi - lo == 1:
        return lo
    mid = (lo + hi) // 2
    return (balanced(lo, mid), balanced(mid, hi))


rng = np.random.default_rng(0)
model = CRvNN(ModelConfig(vocab_size=16, d_embed=16, d_hidden=32,
                          d_transition=16), rng)

print(f"{'leaves':>8} {'length':>8} {'iterations':>12} {'iter/leaf':>10} {'sec':>6}")
for d in range(1, 9):
    leaves = 2 ** d
    length = leaves - 1                 # content tokens; end marker is a leaf too
    ids = rng.integers(1, 16, size=(1, length))
    schedule = tree_to_schedule(balanced(0, leaves))
    t0 = time.time()
    out = forced_agreement(model, ids, np.array([length]), schedule,
                           leaves_include_end=True)
    k = out["halt_iteration"]
    print(f"{leaves:>8} {length:>8} {k:>12} {k / leaves:>10.4f} "
          f"{time.time() - t0:>6.2f}")

print("\nan unforced (randomly initialized) model also halts on its own:")
ids = rng.integers(1, 16, size=(1, 40))
res = model.encode(ids, np.array([40]))
print(f"  40 tokens, free decisions: halted after {int(res.halt_iteration[0])} "
      f"of up to 40 iterations")
