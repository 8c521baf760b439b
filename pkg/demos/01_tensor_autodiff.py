"""The numpy autodiff core: tapes, gradients, precision control.

Builds a two-layer scalar function, backpropagates through it, and checks
the tape's gradients against central finite differences.
"""
import numpy as np

from crvnn.gradcheck import numeric_gradient, relative_error
from crvnn.tensor import Tensor, gelu, matmul, no_grad, precision

rng = np.random.default_rng(0)
x = np.asarray(rng.normal(size=(4, 3)))
w1 = np.asarray(rng.normal(size=(3, 5)))
w2 = np.asarray(rng.normal(size=(5, 1)))


def forward(xt, w1t, w2t):
    h = gelu(matmul(xt, w1t))
    return matmul(h, w2t).sum()


# everything recorded on the tape flows gradients back to its inputs
with precision("wide"):                      # float64 for exact comparison
    tensors = [Tensor(a, requires_grad=True) for a in (x, w1, w2)]
    loss = forward(*tensors)
    loss.backward()

    print(f"loss = {float(loss.array):.6f}")
    for name, arr, t in zip("x w1 w2".split(), (x, w1, w2), tensors):
        def f():
            with no_grad():                  # numeric side never records
                return float(forward(Tensor(x), Tensor(w1), Tensor(w2)).array)
        num = numeric_gradient(f, arr)
        print(f"d loss / d {name}: max |grad| = {np.abs(t.grad).max():.4f}, "
              f"rel. err vs finite differences = {relative_error(t.grad, num):.2e}")

# under the default "standard" precision the same code runs in float32
loss32 = forward(Tensor(x), Tensor(w1), Tensor(w2))
print(f"\nsame function under float32: loss = {float(loss32.array):.6f} "
      f"(dtype {loss32.array.dtype})")
