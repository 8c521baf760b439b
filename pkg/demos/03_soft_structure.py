"""Soft neighbor retrieval: the mechanism that replaces a discrete stack.

Every position i holds an existence probability e_i.  The retriever turns
a row of probabilities into a distribution over "my nearest existing right
neighbor": mass goes to position j in proportion to e_j times the
probability that everything strictly between i and j has been composed
away.  When e is binary the rows become exact one-hot indicators — for
either of the two retriever formulations — which is what makes discrete
execution a special case of the soft model.
"""
import numpy as np

from crvnn.model import retrieval_left, retrieval_right
from crvnn.tensor import Tensor

np.set_printoptions(precision=3, suppress=True)


def show(e_row, mode="cumulative"):
    w = retrieval_right(Tensor(np.asarray([e_row])), mode).array[0]
    print(f"e = {np.asarray(e_row)}")
    for i, row in enumerate(w):
        print(f"  right neighbor of {i}: {row}  (mass {row.sum():.3f})")


print("fully existing sequence: every position points at i+1")
show([1.0, 1.0, 1.0, 1.0])

print("\nposition 1 half composed away: its mass splits over 1 and 2")
show([1.0, 0.5, 1.0, 1.0])

print("\nbinary existence: exact indicators (positions 1,2 are gone)")
show([1.0, 0.0, 0.0, 1.0])

print("\ntwo relaxations of the same discrete lookup: 'cumulative' clips "
      "1 - (mass in between), 'logspace' multiplies (1 - e) factors")
soft = np.asarray([[1.0, 0.8, 0.3, 0.9]])
hard = np.asarray([[1.0, 0.0, 1.0, 1.0]])
for name, e in (("soft e", soft), ("binary e", hard)):
    cum = retrieval_right(Tensor(e), "cumulative").array
    logs = retrieval_right(Tensor(e), "logspace").array
    print(f"  {name}: max |cumulative - logspace| = {np.abs(cum - logs).max():.2e}")

left = retrieval_left(Tensor(soft), "cumulative").array[0]
print(f"\nleft neighbors mirror right ones; weights for position 3: {left[3]}")
